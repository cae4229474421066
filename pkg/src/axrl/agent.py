"""Offline TD3 with a novelty penalty inside both losses.

Twin critics, delayed deterministic actor, target networks. The critic
bootstrap subtracts a scaled bonus from the twin-minimum target value; the
actor objective subtracts the bonus at the proposed action, with gradients
flowing through the frozen bonus model's action input. With both scales at
zero this is plain TD3 on the offline batch.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .bonus import bonus_action_grad, bonus_score
from .envs import Dataset, Environment, reset, step
from .nets import (
    AdamState,
    MlpGrads,
    MlpParams,
    adam_init,
    adam_step,
    backward,
    forward,
    mlp_init,
)

ACTOR_ACTIVATIONS = ("tanh", "elu", "identity")
CRITIC_ACTIVATIONS = ("tanh", "elu", "identity")


@dataclass(frozen=True)
class TrainConfig:
    gradient_steps: int = 50_000
    batch_size: int = 256
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    discount: float = 0.99
    seed: int = 0
    eval_every: int = 5_000
    eval_episodes: int = 10
    env_id: str = ""
    dataset_path: str = ""
    beta_actor: float = 1.0
    beta_critic: float = 1.0
    sigma_actor_noise: float = 0.1
    sigma_target_noise: float = 0.2
    target_noise_clip: float = 0.5
    policy_delay: int = 2
    polyak: float = 0.005
    hidden_sizes: tuple[int, ...] = (256, 256)
    dtype: type = np.float64
    literal_target_copy: bool = False
    bootstrap_with_online_actor: bool = False
    normalize: bool = True

    def __post_init__(self):
        if self.gradient_steps < 0 or self.batch_size < 1:
            raise ValueError("gradient_steps must be >= 0 and batch_size >= 1")
        if not 0 < self.polyak <= 1:
            raise ValueError("polyak must lie in (0, 1]")
        if self.policy_delay < 1:
            raise ValueError("policy_delay must be positive")
        if min(self.beta_actor, self.beta_critic, self.sigma_actor_noise,
               self.sigma_target_noise, self.target_noise_clip) < 0:
            raise ValueError("scales and noise parameters must be nonnegative")


@dataclass(frozen=True)
class Td3State:
    actor: MlpParams
    critic1: MlpParams
    critic2: MlpParams
    target_actor: MlpParams
    target_critic1: MlpParams
    target_critic2: MlpParams
    actor_opt: AdamState
    critic1_opt: AdamState
    critic2_opt: AdamState
    action_low: np.ndarray
    action_high: np.ndarray
    beta_actor: float
    beta_critic: float
    sigma_actor_noise: float
    sigma_target_noise: float
    target_noise_clip: float
    policy_delay: int
    polyak: float
    discount: float
    bootstrap_with_online_actor: bool = False
    step: int = 0

    def __post_init__(self):
        pairs = ((self.actor, self.target_actor),
                 (self.critic1, self.target_critic1),
                 (self.critic2, self.target_critic2))
        for online, target in pairs:
            if online.layer_sizes != target.layer_sizes:
                raise ValueError("target network shapes must mirror online shapes")
        if self.step < 0:
            raise ValueError("step must be >= 0")


@dataclass(frozen=True)
class Batch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray


@dataclass(frozen=True)
class CriticStep:
    loss: float
    grads1: MlpGrads
    grads2: MlpGrads
    targets: np.ndarray
    bonus_mean: float


@dataclass(frozen=True)
class ActorStep:
    loss: float
    grads: MlpGrads
    bonus_mean: float
    actions: np.ndarray


def init_td3(env: Environment, config: TrainConfig,
             rng: np.random.Generator) -> Td3State:
    hid = tuple(config.hidden_sizes)
    actor = mlp_init((env.state_dim, *hid, env.action_dim),
                     ACTOR_ACTIVATIONS[:len(hid)] + ("identity",), rng,
                     dtype=config.dtype)
    critic1 = mlp_init((env.state_dim + env.action_dim, *hid, 1),
                       CRITIC_ACTIVATIONS[:len(hid)] + ("identity",), rng,
                       dtype=config.dtype)
    critic2 = mlp_init((env.state_dim + env.action_dim, *hid, 1),
                       CRITIC_ACTIVATIONS[:len(hid)] + ("identity",), rng,
                       dtype=config.dtype)
    return Td3State(
        actor=actor, critic1=critic1, critic2=critic2,
        target_actor=actor, target_critic1=critic1, target_critic2=critic2,
        actor_opt=adam_init(actor, config.actor_lr),
        critic1_opt=adam_init(critic1, config.critic_lr),
        critic2_opt=adam_init(critic2, config.critic_lr),
        action_low=env.action_low.astype(config.dtype),
        action_high=env.action_high.astype(config.dtype),
        beta_actor=config.beta_actor, beta_critic=config.beta_critic,
        sigma_actor_noise=config.sigma_actor_noise,
        sigma_target_noise=config.sigma_target_noise,
        target_noise_clip=config.target_noise_clip,
        policy_delay=config.policy_delay, polyak=config.polyak,
        discount=config.discount, bootstrap_with_online_actor=config.bootstrap_with_online_actor)


def normalize_rewards(dataset: Dataset, constant_fill: float | None = None) -> Dataset:
    """Affine map of rewards onto [0, 1]; original range kept in metadata."""
    r = dataset.rewards.astype(np.float64)
    lo, hi = float(r.min()), float(r.max())
    if hi == lo:
        if constant_fill is None:
            raise ValueError(
                "cannot normalize a constant-reward dataset (max equals min); "
                "pass constant_fill to map all rewards to a fixed value")
        scaled = np.full_like(r, constant_fill)
    else:
        scaled = (r - lo) / (hi - lo)
    metadata = dict(dataset.metadata)
    metadata.update({"reward_normalized": True,
                     "original_reward_min": lo, "original_reward_max": hi})
    return Dataset(dataset.states, dataset.actions,
                   scaled.astype(dataset.rewards.dtype),
                   dataset.next_states, dataset.dones, metadata)


def _squash(low: np.ndarray, high: np.ndarray, raw: np.ndarray
            ) -> tuple[np.ndarray, np.ndarray]:
    center = (high + low) / 2.0
    half = (high - low) / 2.0
    t = np.tanh(raw)
    return center + half * t, half * (1.0 - t * t)


def policy_actions(actor: MlpParams, low: np.ndarray, high: np.ndarray,
                   states: np.ndarray) -> np.ndarray:
    """Deterministic squashed actor output for a batch of states."""
    raw, _ = forward(actor, states)
    actions, _ = _squash(low.astype(actor.dtype), high.astype(actor.dtype), raw)
    return actions


def _critic_value(critic: MlpParams, states: np.ndarray,
                  actions: np.ndarray):
    x = np.concatenate([states, actions], axis=1)
    q, cache = forward(critic, x)
    return q[:, 0], cache


def critic_loss(td3: Td3State, batch: Batch, bonus_model,
                target_noise: np.ndarray) -> CriticStep:
    """Twin MSE against the penalized bootstrap target.

    y = r + discount * (1 - done) * (min(Q'1, Q'2)(s', a~') - beta_c * b(s', a~'))
    with a~' the target policy action plus clipped smoothing noise. The
    target is a constant: no gradient flows through it. target_noise is a
    standard-normal draw of shape (batch, action_dim).
    """
    dtype = td3.actor.dtype
    half = (td3.action_high - td3.action_low) / 2.0
    # next action comes from the target actor by default; the flag switches
    # to the online actor (the bootstrap formula's literal reading)
    next_policy = td3.actor if td3.bootstrap_with_online_actor else td3.target_actor
    next_raw, _ = forward(next_policy, batch.next_states)
    next_actions, _ = _squash(td3.action_low, td3.action_high, next_raw)
    noise = np.clip(target_noise * td3.sigma_target_noise,
                    -td3.target_noise_clip, td3.target_noise_clip) * half
    next_actions = np.clip(next_actions + noise.astype(dtype),
                           td3.action_low, td3.action_high)
    q1_next, _ = _critic_value(td3.target_critic1, batch.next_states, next_actions)
    q2_next, _ = _critic_value(td3.target_critic2, batch.next_states, next_actions)
    bonus = np.asarray(bonus_score(bonus_model, batch.next_states, next_actions),
                       dtype=dtype)
    boot = np.minimum(q1_next, q2_next) - td3.beta_critic * bonus
    y = batch.rewards + td3.discount * (1.0 - batch.dones) * boot
    if not np.all(np.isfinite(y)):
        raise FloatingPointError("critic bootstrap target is non-finite")
    n = len(batch.states)
    q1, cache1 = _critic_value(td3.critic1, batch.states, batch.actions)
    q2, cache2 = _critic_value(td3.critic2, batch.states, batch.actions)
    d1, d2 = q1 - y, q2 - y
    loss = float(np.mean(d1 * d1) + np.mean(d2 * d2))
    grads1, _ = backward(td3.critic1, cache1, ((2.0 / n) * d1)[:, None])
    grads2, _ = backward(td3.critic2, cache2, ((2.0 / n) * d2)[:, None])
    return CriticStep(loss, grads1, grads2, y, float(np.mean(bonus)))


def actor_loss(td3: Td3State, batch: Batch, bonus_model,
               epsilon: np.ndarray) -> ActorStep:
    """Penalized deterministic policy objective (negated for descent).

    loss = -mean[ Q'1(s, mu(s) + eps) - beta_a * b(s, mu(s) + eps) ]
    against the frozen target critic, with eps = epsilon * sigma * half_range
    reparameterized so gradients reach the actor through both the critic and
    the bonus model's action input.
    """
    dtype = td3.actor.dtype
    half = (td3.action_high - td3.action_low) / 2.0
    n = len(batch.states)
    raw, actor_cache = forward(td3.actor, batch.states)
    mean_actions, d_squash = _squash(td3.action_low, td3.action_high, raw)
    noise = (epsilon * td3.sigma_actor_noise * half).astype(dtype)
    actions = mean_actions + noise
    q1, q_cache = _critic_value(td3.target_critic1, batch.states, actions)
    bonus, bonus_grad = bonus_action_grad(bonus_model, batch.states, actions)
    bonus = np.asarray(bonus, dtype=dtype)
    loss = float(-np.mean(q1 - td3.beta_actor * bonus))
    dq = np.full((n, 1), -1.0 / n, dtype=dtype)
    _, d_x = backward(td3.target_critic1, q_cache, dq)
    d_action = d_x[:, batch.states.shape[1]:]
    d_action = d_action + (td3.beta_actor / n) * np.asarray(bonus_grad, dtype=dtype)
    grads, _ = backward(td3.actor, actor_cache, d_action * d_squash)
    return ActorStep(loss, grads, float(np.mean(bonus)), actions)


def _polyak_mix(target: MlpParams, online: MlpParams, rho: float) -> MlpParams:
    # t + rho*(o - t) rather than (1-rho)*t + rho*o: exact fixed point at t == o
    weights = tuple(t + rho * (o - t)
                    for t, o in zip(target.weights, online.weights))
    biases = tuple(t + rho * (o - t)
                   for t, o in zip(target.biases, online.biases))
    return MlpParams(online.layer_sizes, weights, biases, online.activations)


def evaluate_policy(actor, env: Environment, n_episodes: int,
                    seed: int) -> np.ndarray:
    """Deterministic rollouts; returns raw per-episode returns.

    actor may be squashed MLP parameters or any callable state -> action.
    No exploration noise is added either way.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    if isinstance(actor, MlpParams):
        # roll every episode in lockstep so the actor sees one batched
        # forward per step; resets stay in episode order, so the draw
        # sequence matches the one-episode-at-a-time path
        states = np.stack([reset(env, rng) for _ in range(n_episodes)])
        totals = np.zeros(n_episodes)
        for _ in range(env.horizon):
            batch = states.astype(actor.dtype)
            acts = np.asarray(policy_actions(actor, env.action_low,
                                             env.action_high, batch),
                              dtype=float)
            for ep in range(n_episodes):
                states[ep], reward, _ = step(env, states[ep], acts[ep])
                totals[ep] += reward
        return totals
    returns = np.empty(n_episodes)
    for ep in range(n_episodes):
        state = reset(env, rng)
        total = 0.0
        for _ in range(env.horizon):
            action = np.asarray(actor(state), dtype=float)
            state, reward, _ = step(env, state, action)
            total += reward
        returns[ep] = total
    return returns


METRIC_COLUMNS = ("step", "critic_loss", "actor_bonus_mean", "critic_bonus_mean",
                  "eval_return_mean", "eval_return_std")


def _window_mean(total: float, count: int) -> float:
    return total / count if count else float("nan")


def train_agent(dataset: Dataset, bonus_model, env: Environment,
                config: TrainConfig, metrics_csv_path=None
                ) -> tuple[Td3State, list[dict]]:
    """Offline training loop; returns the final state and metric rows.

    Rows are emitted every eval_every steps (and at the final step).
    The loss and bonus columns are averaged over the gradient steps
    since the previous row; eval columns come from fresh rollouts.
    """
    if dataset.states.shape[1] != env.state_dim or \
            dataset.actions.shape[1] != env.action_dim:
        raise ValueError("dataset dimensions do not match the environment")
    if config.batch_size > len(dataset):
        raise ValueError("batch_size exceeds dataset size")
    if config.normalize:
        dataset = normalize_rewards(dataset)
    root = np.random.SeedSequence(config.seed)
    init_seq, loop_seq, eval_seq = root.spawn(3)
    td3 = init_td3(env, config, np.random.default_rng(init_seq))
    eval_seed = int(eval_seq.generate_state(1)[0])
    rng = np.random.default_rng(loop_seq)
    dtype = config.dtype
    states = dataset.states.astype(dtype)
    actions = dataset.actions.astype(dtype)
    rewards = dataset.rewards.astype(dtype)
    next_states = dataset.next_states.astype(dtype)
    dones = dataset.dones.astype(dtype)
    n = len(dataset)
    a_dim = env.action_dim
    metrics: list[dict] = []
    csv = None
    if metrics_csv_path is not None:
        csv = open(metrics_csv_path, "w")
        csv.write(",".join(METRIC_COLUMNS) + "\n")
    # loss / bonus columns report means over the window since the last
    # row, so early rows reflect the whole warmup rather than a single
    # minibatch sample
    critic_loss_sum = critic_bonus_sum = actor_bonus_sum = 0.0
    critic_count = actor_count = 0
    try:
        for it in range(1, config.gradient_steps + 1):
            idx = rng.integers(0, n, size=config.batch_size)
            batch = Batch(states[idx], actions[idx], rewards[idx],
                          next_states[idx], dones[idx])
            target_noise = rng.standard_normal((config.batch_size, a_dim)).astype(dtype)
            cstep = critic_loss(td3, batch, bonus_model, target_noise)
            if not np.isfinite(cstep.loss):
                raise FloatingPointError(f"critic loss non-finite at step {it}")
            critic1, c1_opt = adam_step(td3.critic1, cstep.grads1, td3.critic1_opt)
            critic2, c2_opt = adam_step(td3.critic2, cstep.grads2, td3.critic2_opt)
            td3 = replace(td3, critic1=critic1, critic2=critic2,
                          critic1_opt=c1_opt, critic2_opt=c2_opt, step=it)
            critic_loss_sum += float(cstep.loss)
            critic_bonus_sum += float(cstep.bonus_mean)
            critic_count += 1
            if it % config.policy_delay == 0:
                epsilon = rng.standard_normal((config.batch_size, a_dim)).astype(dtype)
                astep = actor_loss(td3, batch, bonus_model, epsilon)
                if not np.isfinite(astep.loss):
                    raise FloatingPointError(f"actor loss non-finite at step {it}")
                actor, a_opt = adam_step(td3.actor, astep.grads, td3.actor_opt)
                td3 = replace(td3, actor=actor, actor_opt=a_opt)
                actor_bonus_sum += float(astep.bonus_mean)
                actor_count += 1
                if not config.literal_target_copy:
                    td3 = replace(
                        td3,
                        target_actor=_polyak_mix(td3.target_actor, td3.actor,
                                                 td3.polyak),
                        target_critic1=_polyak_mix(td3.target_critic1, td3.critic1,
                                                   td3.polyak),
                        target_critic2=_polyak_mix(td3.target_critic2, td3.critic2,
                                                   td3.polyak))
            if config.literal_target_copy:
                # hard copy every step, as a strict reading of the training
                # loop's target refresh would have it
                td3 = replace(td3, target_actor=td3.actor,
                              target_critic1=td3.critic1,
                              target_critic2=td3.critic2)
            if it % config.eval_every == 0 or it == config.gradient_steps:
                returns = evaluate_policy(td3.actor, env,
                                          config.eval_episodes, eval_seed)
                row = {
                    "step": it,
                    "critic_loss": _window_mean(critic_loss_sum, critic_count),
                    "actor_bonus_mean": _window_mean(actor_bonus_sum, actor_count),
                    "critic_bonus_mean": _window_mean(critic_bonus_sum,
                                                      critic_count),
                    "eval_return_mean": float(returns.mean()),
                    "eval_return_std": float(returns.std()),
                }
                critic_loss_sum = critic_bonus_sum = actor_bonus_sum = 0.0
                critic_count = actor_count = 0
                metrics.append(row)
                if csv is not None:
                    csv.write(",".join(repr(row[c]) if isinstance(row[c], float)
                                       else str(row[c]) for c in METRIC_COLUMNS) + "\n")
                    csv.flush()
    finally:
        if csv is not None:
            csv.close()
    return td3, metrics
