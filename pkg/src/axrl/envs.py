"""Two small continuous-control environments plus offline dataset tooling.

pointmass2d: double integrator on the plane. State (px, py, vx, vy), action
is acceleration in [-1, 1]^2, dt 0.05, velocity clipped to [-1, 1], reward
-||pos - goal||_2 with the goal at the origin, horizon 200. Rewards lie in
(-17, 0].

pendulum1: one-link torque pendulum with gravity 10, mass 1, length 1,
dt 0.05, angle 0 pointing up. State (cos th, sin th, thdot), action is torque
in [-2, 2], angular velocity clipped to [-8, 8], reward
-(th_norm^2 + 0.1 thdot^2 + 0.001 u^2), horizon 200. Rewards lie in
(-16.28, 0].

Both environments are pure finite-horizon: step never terminates on its own,
episode boundaries come from the horizon and are recorded as done flags.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

DATASET_FORMAT_VERSION = 1

ENV_IDS = ("pointmass2d", "pendulum1")
FLAVORS = ("random", "medium", "expert", "medium-expert")
OOD_MODES = ("uniform", "noise", "shuffled")

MEDIUM_NOISE_FRACTION = 0.3   # gaussian std as a fraction of the action range
MEDIUM_UNIFORM_RATE = 0.2     # chance a step's action is replaced wholesale


@dataclass(frozen=True)
class Environment:
    id: str
    state_dim: int
    action_dim: int
    action_low: np.ndarray
    action_high: np.ndarray
    horizon: int
    dt: float
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.state_dim < 1 or self.action_dim < 1 or self.horizon < 1:
            raise ValueError("dimensions and horizon must be positive")
        if self.action_low.shape != (self.action_dim,) or \
                self.action_high.shape != (self.action_dim,):
            raise ValueError("action bounds must match action_dim")
        if np.any(self.action_high <= self.action_low):
            raise ValueError("action_high must exceed action_low")

    @property
    def action_range(self) -> np.ndarray:
        return self.action_high - self.action_low


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    done: bool


@dataclass
class Dataset:
    """Column-major transition storage plus provenance metadata."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray
    metadata: dict

    def __post_init__(self):
        n = len(self.states)
        if n == 0:
            raise ValueError("dataset must be non-empty")
        for name in ("actions", "rewards", "next_states", "dones"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} length does not match states")

    def __len__(self) -> int:
        return len(self.states)

    def transition(self, i: int) -> Transition:
        return Transition(self.states[i], self.actions[i], float(self.rewards[i]),
                          self.next_states[i], bool(self.dones[i]))


def make_env(env_id: str) -> Environment:
    if env_id == "pointmass2d":
        return Environment(
            id="pointmass2d", state_dim=4, action_dim=2,
            action_low=np.array([-1.0, -1.0]), action_high=np.array([1.0, 1.0]),
            horizon=200, dt=0.05,
            params={"goal": (0.0, 0.0), "vel_limit": 1.0,
                    "start_pos": 1.5, "start_vel": 0.05})
    if env_id == "pendulum1":
        return Environment(
            id="pendulum1", state_dim=3, action_dim=1,
            action_low=np.array([-2.0]), action_high=np.array([2.0]),
            horizon=200, dt=0.05,
            params={"gravity": 10.0, "mass": 1.0, "length": 1.0,
                    "speed_limit": 8.0})
    raise ValueError(f"unknown environment {env_id!r}; choose from {ENV_IDS}")


def reset(env: Environment, rng: np.random.Generator) -> np.ndarray:
    if env.id == "pointmass2d":
        r = env.params["start_pos"]
        v = env.params["start_vel"]
        pos = rng.uniform(-r, r, size=2)
        vel = rng.uniform(-v, v, size=2)
        return np.concatenate([pos, vel])
    theta = rng.uniform(-np.pi, np.pi)
    thdot = rng.uniform(-1.0, 1.0)
    return np.array([np.cos(theta), np.sin(theta), thdot])


def _wrap_angle(theta: float) -> float:
    return float(np.arctan2(np.sin(theta), np.cos(theta)))


def step(env: Environment, state: np.ndarray,
         action: np.ndarray) -> tuple[np.ndarray, float, bool]:
    """Pure transition function. done is always False (finite-horizon only)."""
    action = np.clip(np.asarray(action, dtype=float), env.action_low, env.action_high)
    if env.id == "pointmass2d":
        pos, vel = state[:2].astype(float), state[2:].astype(float)
        goal = np.asarray(env.params["goal"])
        lim = env.params["vel_limit"]
        vel = np.clip(vel + action * env.dt, -lim, lim)
        pos = pos + vel * env.dt
        reward = -float(np.linalg.norm(pos - goal))
        return np.concatenate([pos, vel]), reward, False
    if env.id == "pendulum1":
        g = env.params["gravity"]
        m = env.params["mass"]
        length = env.params["length"]
        lim = env.params["speed_limit"]
        cos_t, sin_t, thdot = float(state[0]), float(state[1]), float(state[2])
        theta = np.arctan2(sin_t, cos_t)
        u = float(action[0])
        reward = -(theta * theta + 0.1 * thdot * thdot + 0.001 * u * u)
        acc = 3.0 * g / (2.0 * length) * np.sin(theta) + 3.0 / (m * length * length) * u
        thdot = float(np.clip(thdot + acc * env.dt, -lim, lim))
        theta = theta + thdot * env.dt
        return np.array([np.cos(theta), np.sin(theta), thdot]), float(reward), False
    raise ValueError(f"unknown environment {env.id!r}")


# ---------------------------------------------------------------------------
# Scripted behavior policies
# ---------------------------------------------------------------------------

def _pointmass_expert(env: Environment, state: np.ndarray) -> np.ndarray:
    pos, vel = state[:2], state[2:]
    err = pos - np.asarray(env.params["goal"])
    return np.clip(-2.0 * err - 2.8 * vel, env.action_low, env.action_high)


def _pendulum_expert(env: Environment, state: np.ndarray) -> np.ndarray:
    g = env.params["gravity"]
    length = env.params["length"]
    m = env.params["mass"]
    cos_t, sin_t, thdot = float(state[0]), float(state[1]), float(state[2])
    theta = _wrap_angle(np.arctan2(sin_t, cos_t))
    inertia = m * length * length / 3.0
    energy = 0.5 * inertia * thdot * thdot + 0.5 * m * g * length * cos_t
    target = 0.5 * m * g * length
    if cos_t > 0.95 and abs(thdot) < 4.0:
        u = -8.0 * theta - 2.0 * thdot          # stabilize at the top
    elif abs(thdot) < 0.05:
        u = 2.0 if theta >= 0 else -2.0          # kick out of rest
    else:
        u = 1.2 * (target - energy) * thdot      # pump energy toward the top
    return np.clip(np.array([u]), env.action_low, env.action_high)


def expert_action(env: Environment, state: np.ndarray) -> np.ndarray:
    if env.id == "pointmass2d":
        return _pointmass_expert(env, state)
    return _pendulum_expert(env, state)


def scripted_policy(env: Environment, skill: str):
    """Returns policy(state, rng) -> action for skill in {random, medium, expert}."""
    if skill == "random":
        def policy(state, rng):
            return rng.uniform(env.action_low, env.action_high)
        return policy
    if skill == "expert":
        def policy(state, rng):
            return expert_action(env, state)
        return policy
    if skill == "medium":
        noise_std = MEDIUM_NOISE_FRACTION * env.action_range

        def policy(state, rng):
            a = expert_action(env, state)
            a = a + rng.normal(0.0, 1.0, size=env.action_dim) * noise_std
            if rng.uniform() < MEDIUM_UNIFORM_RATE:
                a = rng.uniform(env.action_low, env.action_high)
            return np.clip(a, env.action_low, env.action_high)
        return policy
    raise ValueError(f"unknown skill {skill!r}; choose from (random, medium, expert)")


def rollout(env: Environment, policy, rng: np.random.Generator) -> list[Transition]:
    # states/actions are rounded through float32 so that stored records can be
    # replayed bit-exactly: step sees exactly the values a loader will see
    state = reset(env, rng).astype(np.float32).astype(np.float64)
    out = []
    for t in range(env.horizon):
        action = np.asarray(policy(state, rng)).astype(np.float32).astype(np.float64)
        next_state, reward, _ = step(env, state, action)
        next_state = next_state.astype(np.float32).astype(np.float64)
        out.append(Transition(state, action, reward, next_state, t == env.horizon - 1))
        state = next_state
    return out


def scripted_returns(env: Environment, skill: str, n_episodes: int,
                     seed: int) -> np.ndarray:
    """Undiscounted returns of a scripted policy over seeded episodes."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    policy = scripted_policy(env, skill)
    returns = np.empty(n_episodes)
    for i in range(n_episodes):
        returns[i] = sum(t.reward for t in rollout(env, policy, rng))
    return returns


# ---------------------------------------------------------------------------
# Dataset generation
# ---------------------------------------------------------------------------

def _collect(env: Environment, skill: str, n_transitions: int,
             seed_seq: np.random.SeedSequence) -> tuple[list[Transition], list[float]]:
    rng = np.random.default_rng(seed_seq)
    policy = scripted_policy(env, skill)
    transitions: list[Transition] = []
    episode_returns: list[float] = []
    while len(transitions) < n_transitions:
        episode = rollout(env, policy, rng)
        room = n_transitions - len(transitions)
        if room >= len(episode):
            episode_returns.append(float(sum(t.reward for t in episode)))
        transitions.extend(episode[:room])
    return transitions, episode_returns


def _pack(env: Environment, transitions: list[Transition], metadata: dict) -> Dataset:
    states = np.array([t.state for t in transitions], dtype=np.float32)
    actions = np.array([t.action for t in transitions], dtype=np.float32)
    rewards = np.array([t.reward for t in transitions], dtype=np.float32)
    next_states = np.array([t.next_state for t in transitions], dtype=np.float32)
    dones = np.array([t.done for t in transitions], dtype=np.uint8)
    metadata = dict(metadata)
    metadata.update({
        "state_dim": env.state_dim,
        "action_dim": env.action_dim,
        "n_transitions": len(transitions),
        "reward_min": float(rewards.min()),
        "reward_max": float(rewards.max()),
        "format_version": DATASET_FORMAT_VERSION,
    })
    return Dataset(states, actions, rewards, next_states, dones, metadata)


def generate_dataset(env: Environment, flavor: str, n_transitions: int,
                     seed: int) -> Dataset:
    """Seeded, reproducible offline dataset of the requested flavor."""
    if flavor not in FLAVORS:
        raise ValueError(f"unknown flavor {flavor!r}; choose from {FLAVORS}")
    if n_transitions < 1:
        raise ValueError("n_transitions must be positive")
    root = np.random.SeedSequence(seed)
    if flavor == "medium-expert":
        # equal halves from independent sub-seeds, medium first
        sub_medium, sub_expert = root.spawn(2)
        half = n_transitions // 2
        med, med_returns = _collect(env, "medium", half, sub_medium)
        exp, exp_returns = _collect(env, "expert", n_transitions - half, sub_expert)
        transitions = med + exp
        returns = med_returns + exp_returns
        behavior = "medium+expert halves"
    else:
        transitions, returns = _collect(env, flavor, n_transitions, root)
        behavior = {
            "random": "uniform over action box",
            "medium": (f"expert + gaussian noise "
                       f"(std {MEDIUM_NOISE_FRACTION} action range) + "
                       f"{MEDIUM_UNIFORM_RATE:.0%} uniform substitution"),
            "expert": "tuned deterministic controller",
        }[flavor]
    metadata = {
        "env": env.id,
        "flavor": flavor,
        "behavior": behavior,
        "seed": int(seed),
        "episode_returns": [float(r) for r in returns],
        "mean_return": float(np.mean(returns)) if returns else None,
    }
    return _pack(env, transitions, metadata)


# ---------------------------------------------------------------------------
# Persistence: one JSON metadata line, then packed little-endian records of
# float32 state | float32 action | float32 reward | float32 next_state | done byte
# ---------------------------------------------------------------------------

def _record_dtype(state_dim: int, action_dim: int) -> np.dtype:
    return np.dtype([
        ("state", "<f4", (state_dim,)),
        ("action", "<f4", (action_dim,)),
        ("reward", "<f4"),
        ("next_state", "<f4", (state_dim,)),
        ("done", "u1"),
    ])


def _payload_bytes(dataset: Dataset) -> bytes:
    rec = np.empty(len(dataset),
                   dtype=_record_dtype(dataset.metadata["state_dim"],
                                       dataset.metadata["action_dim"]))
    rec["state"] = dataset.states
    rec["action"] = dataset.actions
    rec["reward"] = dataset.rewards
    rec["next_state"] = dataset.next_states
    rec["done"] = dataset.dones
    return rec.tobytes()


def save_dataset(path, dataset: Dataset) -> None:
    payload = _payload_bytes(dataset)
    metadata = dict(dataset.metadata)
    metadata["fingerprint"] = hashlib.sha256(payload).hexdigest()
    header = json.dumps(metadata, sort_keys=True).encode() + b"\n"
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(header)
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        header = fh.readline()
        payload = fh.read()
    try:
        metadata = json.loads(header.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError(f"{path}: corrupt dataset header") from exc
    for key in ("state_dim", "action_dim", "n_transitions", "fingerprint"):
        if key not in metadata:
            raise ValueError(f"{path}: dataset header missing field {key!r}")
    dtype = _record_dtype(metadata["state_dim"], metadata["action_dim"])
    expected = metadata["n_transitions"] * dtype.itemsize
    if len(payload) != expected:
        raise ValueError(f"{path}: corrupt dataset payload "
                         f"({len(payload)} bytes, expected {expected})")
    if hashlib.sha256(payload).hexdigest() != metadata["fingerprint"]:
        raise ValueError(f"{path}: payload does not match metadata fingerprint")
    rec = np.frombuffer(payload, dtype=dtype)
    return Dataset(rec["state"].copy(), rec["action"].copy(), rec["reward"].copy(),
                   rec["next_state"].copy(), rec["done"].copy(), metadata)


# ---------------------------------------------------------------------------
# Out-of-distribution action constructions
# ---------------------------------------------------------------------------

def _sattolo_cycle(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform random n-cycle; every index moves, so no action keeps its row."""
    perm = np.arange(n)
    for i in range(n - 1, 0, -1):
        j = int(rng.integers(0, i))
        perm[i], perm[j] = perm[j], perm[i]
    return perm


def make_ood_actions(dataset: Dataset, env: Environment, mode: str, seed: int,
                     noise_fraction: float | None = None
                     ) -> tuple[np.ndarray, np.ndarray]:
    """Pairs the dataset's actions with out-of-distribution counterparts.

    Returns (in_dataset_actions, ood_actions), row-aligned with the dataset's
    states. noise mode scales its gaussian std by noise_fraction of the
    per-dimension action range and clips back to bounds.
    """
    if mode not in OOD_MODES:
        raise ValueError(f"unknown OOD mode {mode!r}; choose from {OOD_MODES}")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    actions = dataset.actions.astype(np.float64)
    n = len(dataset)
    if mode == "uniform":
        ood = rng.uniform(env.action_low, env.action_high, size=(n, env.action_dim))
    elif mode == "noise":
        if noise_fraction is None or noise_fraction < 0:
            raise ValueError("noise mode requires a nonnegative noise_fraction")
        std = noise_fraction * env.action_range
        ood = actions + rng.normal(0.0, 1.0, size=actions.shape) * std
        ood = np.clip(ood, env.action_low, env.action_high)
    else:
        if n < 2:
            raise ValueError("shuffled mode needs at least 2 transitions")
        ood = actions[_sattolo_cycle(n, rng)]
    return actions, ood
