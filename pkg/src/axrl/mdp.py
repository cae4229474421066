"""Finite MDPs and the value-iteration schemes around anti-exploration bonuses.

Four exact VI variants on tabular models: plain VI, VI with a bonus added to
the reward (exploration), VI with the bonus subtracted from the reward, and VI
where the bonus instead penalizes the bootstrapped value.  The last two are
equivalent up to a shift of the Q-table, which `check_zero_temperature_limit`
and the test suite verify, together with the KL-regularized scheme whose
zero-temperature limit recovers the penalized-bootstrap iteration.

All operations are pure functions of immutable inputs.  Greedy steps break
ties toward the lowest action index so that policy sequences are comparable
across schemes.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

ROW_SUM_TOL = 1e-9


def _as_float_array(x, name):
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class TabularMdp:
    """Finite MDP: transition tensor (s, a, s'), reward table (s, a), discount."""

    n_states: int
    n_actions: int
    transition: np.ndarray
    reward: np.ndarray
    gamma: float

    def __post_init__(self):
        if self.n_states < 1 or self.n_actions < 1:
            raise ValueError("n_states and n_actions must be positive")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie strictly in (0, 1), got {self.gamma}")
        t = _as_float_array(self.transition, "transition")
        r = _as_float_array(self.reward, "reward")
        if t.shape != (self.n_states, self.n_actions, self.n_states):
            raise ValueError(f"transition shape {t.shape} inconsistent with (S, A, S')")
        if r.shape != (self.n_states, self.n_actions):
            raise ValueError(f"reward shape {r.shape} inconsistent with (S, A)")
        if np.any(t < 0):
            raise ValueError("transition probabilities must be nonnegative")
        row_sums = t.sum(axis=2)
        if np.max(np.abs(row_sums - 1.0)) > ROW_SUM_TOL:
            raise ValueError("transition rows must sum to 1")
        object.__setattr__(self, "transition", t)
        object.__setattr__(self, "reward", r)


@dataclass(frozen=True)
class QTable:
    """Action-value table indexed (s, a)."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _as_float_array(self.values, "Q values"))


@dataclass(frozen=True)
class TabularPolicy:
    """Per-state action distribution; rows sum to 1."""

    probs: np.ndarray

    def __post_init__(self):
        p = _as_float_array(self.probs, "policy probs")
        if np.any(p < 0):
            raise ValueError("policy probabilities must be nonnegative")
        if np.max(np.abs(p.sum(axis=1) - 1.0)) > ROW_SUM_TOL:
            raise ValueError("policy rows must sum to 1")
        object.__setattr__(self, "probs", p)

    def actions(self) -> np.ndarray:
        """Most probable action per state (lowest index on ties)."""
        return np.argmax(self.probs, axis=1)


@dataclass(frozen=True)
class BonusTable:
    """Nonnegative novelty score per (s, a)."""

    values: np.ndarray

    def __post_init__(self):
        v = _as_float_array(self.values, "bonus values")
        if np.any(v < 0):
            raise ValueError("bonus values must be nonnegative")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class ViTrace:
    """Policy and Q-table sequence produced by a VI run."""

    policies: list[TabularPolicy]
    q_tables: list[QTable]
    iterations: int

    def __post_init__(self):
        if not (len(self.policies) == len(self.q_tables) == self.iterations):
            raise ValueError("trace lengths must equal the iteration count")

    def action_sequence(self) -> np.ndarray:
        """(iterations, n_states) array of per-state chosen actions."""
        return np.stack([p.actions() for p in self.policies])


def _check_sa_shape(mdp: TabularMdp, arr: np.ndarray, name: str):
    if arr.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError(f"{name} shape {arr.shape} does not match (S, A)="
                         f"({mdp.n_states}, {mdp.n_actions})")


def greedy_policy(values: np.ndarray) -> TabularPolicy:
    """Deterministic argmax policy, ties broken toward the lowest action index."""
    n_states, n_actions = values.shape
    probs = np.zeros((n_states, n_actions))
    probs[np.arange(n_states), np.argmax(values, axis=1)] = 1.0
    return TabularPolicy(probs)


def bellman_evaluate(mdp: TabularMdp, policy: TabularPolicy, q: QTable,
                     effective_reward: np.ndarray) -> QTable:
    """One application of the Bellman operator with an arbitrary reward table.

    Returns effective_reward + gamma * P <pi, Q>, where <pi, Q>(s) is the
    policy-weighted action value at s and (Pv)(s, a) averages v over s'.
    """
    effective_reward = np.asarray(effective_reward, dtype=float)
    _check_sa_shape(mdp, effective_reward, "effective_reward")
    _check_sa_shape(mdp, policy.probs, "policy")
    _check_sa_shape(mdp, q.values, "Q")
    v = np.sum(policy.probs * q.values, axis=1)
    return QTable(effective_reward + mdp.gamma * (mdp.transition @ v))


def _greedy_vi(mdp: TabularMdp, q0: QTable, n_iter: int,
               effective_reward: np.ndarray) -> ViTrace:
    if n_iter < 1:
        raise ValueError("n_iter must be >= 1")
    _check_sa_shape(mdp, q0.values, "q0")
    q = q0
    policies, q_tables = [], []
    for _ in range(n_iter):
        policy = greedy_policy(q.values)
        q = bellman_evaluate(mdp, policy, q, effective_reward)
        policies.append(policy)
        q_tables.append(q)
    return ViTrace(policies, q_tables, n_iter)


def vi_plain(mdp: TabularMdp, q0: QTable, n_iter: int) -> ViTrace:
    """Plain value iteration: greedy step then evaluation with the true reward."""
    return _greedy_vi(mdp, q0, n_iter, mdp.reward)


def vi_exploration_bonus(mdp: TabularMdp, bonus: BonusTable, q0: QTable,
                         n_iter: int) -> ViTrace:
    """VI with the bonus added to the reward (exploration-style)."""
    _check_sa_shape(mdp, bonus.values, "bonus")
    return _greedy_vi(mdp, q0, n_iter, mdp.reward + bonus.values)


def vi_reward_penalty(mdp: TabularMdp, bonus: BonusTable, q0: QTable,
                      n_iter: int) -> ViTrace:
    """VI with the bonus subtracted from the reward (naive anti-exploration)."""
    _check_sa_shape(mdp, bonus.values, "bonus")
    return _greedy_vi(mdp, q0, n_iter, mdp.reward - bonus.values)


def vi_penalized_bootstrap(mdp: TabularMdp, bonus: BonusTable, q0_prime: QTable,
                           n_iter: int) -> ViTrace:
    """VI where the bonus penalizes the bootstrapped value instead of the reward.

    Greedy step: argmax over Q' - b.  Evaluation: Q' <- r + gamma * P <pi, Q' - b>.
    Started from Q0 + b, this reproduces the policy sequence of
    `vi_reward_penalty` started from Q0, with Q-tables shifted by exactly b.
    """
    if n_iter < 1:
        raise ValueError("n_iter must be >= 1")
    _check_sa_shape(mdp, bonus.values, "bonus")
    _check_sa_shape(mdp, q0_prime.values, "q0_prime")
    q = q0_prime
    policies, q_tables = [], []
    for _ in range(n_iter):
        shifted = QTable(q.values - bonus.values)
        policy = greedy_policy(shifted.values)
        q = bellman_evaluate(mdp, policy, shifted, mdp.reward)
        policies.append(policy)
        q_tables.append(q)
    return ViTrace(policies, q_tables, n_iter)


def _log_bonus_softmax(bonus_values: np.ndarray, beta: float, tau: float) -> np.ndarray:
    logits = -(beta / tau) * bonus_values
    return logits - logsumexp(logits, axis=1, keepdims=True)


def bonus_softmax_policy(bonus: BonusTable, beta: float, tau: float) -> TabularPolicy:
    """Softmax policy over -(beta/tau) * b(s, .), favouring low-bonus actions."""
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    return TabularPolicy(np.exp(_log_bonus_softmax(bonus.values, beta, tau)))


def soft_bonus_gap(bonus: BonusTable, beta: float, tau: float) -> np.ndarray:
    """Reward shift induced by KL regularization toward the bonus softmax policy.

    gap(s, a) = beta * b(s, a) + tau * log sum_a' exp(-beta * b(s, a') / tau),
    i.e. the scaled bonus minus its per-state soft minimum.  As tau -> 0 this
    converges (from above) to beta * (b(s, a) - min_a' b(s, a')).
    """
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    b = bonus.values
    return beta * b + tau * logsumexp(-(beta / tau) * b, axis=1, keepdims=True)


def policy_entropy(policy: TabularPolicy) -> np.ndarray:
    """Per-state Shannon entropy, with 0 * log 0 = 0."""
    p = policy.probs
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return -plogp.sum(axis=1)


def policy_kl(policy: TabularPolicy, reference: TabularPolicy) -> np.ndarray:
    """Per-state KL(policy || reference); infinite where support is violated."""
    p, q = policy.probs, reference.probs
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * (np.log(np.where(p > 0, p, 1.0)) - np.log(q)), 0.0)
    return terms.sum(axis=1)


def _softmax_rows(logits: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    log_probs = logits - logsumexp(logits, axis=1, keepdims=True)
    return np.exp(log_probs), log_probs


def vi_kl_regularized(mdp: TabularMdp, bonus: BonusTable, beta: float, tau: float,
                      q0: QTable, n_iter: int, shifted_form: bool = False) -> ViTrace:
    """KL-regularized VI toward the bonus softmax policy.

    Greedy step returns the closed-form maximizer pi(.|s) proportional to
    exp((Q(s,.) + tau * log pi_b(s,.)) / tau); the evaluation step subtracts
    tau * KL(pi || pi_b) inside the bootstrap.  With ``shifted_form=True`` the
    algebraically equivalent rewrite is iterated instead: the Q-table is
    shifted by `soft_bonus_gap` and an entropy term replaces the KL term.
    All softmax/KL/entropy computations run in log space.
    """
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    if n_iter < 1:
        raise ValueError("n_iter must be >= 1")
    _check_sa_shape(mdp, bonus.values, "bonus")
    _check_sa_shape(mdp, q0.values, "q0")
    log_pi_b = _log_bonus_softmax(bonus.values, beta, tau)
    if np.any(np.all(np.isneginf(log_pi_b), axis=1)):
        raise ValueError("reference policy has a row with no support")
    gap = soft_bonus_gap(bonus, beta, tau)

    q = q0.values
    policies, q_tables = [], []
    for _ in range(n_iter):
        if shifted_form:
            probs, log_probs = _softmax_rows((q - gap) / tau)
            entropy = -(probs * log_probs).sum(axis=1)
            backup = (probs * (q - gap)).sum(axis=1) + tau * entropy
        else:
            probs, log_probs = _softmax_rows(q / tau + log_pi_b)
            kl = (probs * (log_probs - log_pi_b)).sum(axis=1)
            backup = (probs * q).sum(axis=1) - tau * kl
        q = mdp.reward + mdp.gamma * (mdp.transition @ backup)
        policies.append(TabularPolicy(probs))
        q_tables.append(QTable(q))
    return ViTrace(policies, q_tables, n_iter)


@dataclass(frozen=True)
class ZeroTemperatureReport:
    """Per-temperature policy disagreement between the KL scheme and its limit."""

    precondition_ok: bool
    max_per_state_min_bonus: float
    beta: float
    n_iter: int
    taus: tuple[float, ...]
    disagreements: tuple[int, ...]

    def passed(self) -> bool:
        return (self.precondition_ok
                and len(self.disagreements) > 0
                and self.disagreements[-1] == 0
                and all(a >= b for a, b in zip(self.disagreements,
                                              self.disagreements[1:])))


def check_zero_temperature_limit(mdp: TabularMdp, bonus: BonusTable, beta: float,
                                 tau_schedule, q0: QTable,
                                 n_iter: int) -> ZeroTemperatureReport:
    """Compare KL-regularized greedy policies against the penalized-bootstrap scheme.

    Requires min_a b(s, a) = 0 in every state; a violation is reported in the
    returned record rather than silently repaired.  For each temperature the
    KL scheme's per-state argmax actions are compared, iteration by iteration,
    with those of `vi_penalized_bootstrap` run on the bonus scaled by beta.
    """
    _check_sa_shape(mdp, bonus.values, "bonus")
    max_min = float(np.max(np.abs(bonus.values.min(axis=1))))
    if max_min > 1e-12:
        return ZeroTemperatureReport(False, max_min, beta, n_iter,
                                     tuple(float(t) for t in tau_schedule), ())
    reference = vi_penalized_bootstrap(mdp, BonusTable(beta * bonus.values), q0, n_iter)
    ref_actions = reference.action_sequence()
    counts = []
    for tau in tau_schedule:
        trace = vi_kl_regularized(mdp, bonus, beta, float(tau), q0, n_iter)
        counts.append(int(np.sum(trace.action_sequence() != ref_actions)))
    return ZeroTemperatureReport(True, max_min, beta, n_iter,
                                 tuple(float(t) for t in tau_schedule), tuple(counts))


# ---------------------------------------------------------------------------
# Exact evaluation, enumeration, convergence
# ---------------------------------------------------------------------------

def exact_policy_values(mdp: TabularMdp, policy: TabularPolicy,
                        effective_reward: np.ndarray | None = None
                        ) -> tuple[np.ndarray, np.ndarray]:
    """Exact (V, Q) of a policy by linear solve, for an arbitrary reward table."""
    r = mdp.reward if effective_reward is None else np.asarray(effective_reward, float)
    _check_sa_shape(mdp, r, "effective_reward")
    r_pi = np.sum(policy.probs * r, axis=1)
    p_pi = np.einsum("sa,sap->sp", policy.probs, mdp.transition)
    v = np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * p_pi, r_pi)
    q = r + mdp.gamma * (mdp.transition @ v)
    return v, q


def deterministic_policy(actions, n_actions: int) -> TabularPolicy:
    """One-hot policy from a per-state action assignment."""
    actions = np.asarray(actions, dtype=int)
    probs = np.zeros((actions.shape[0], n_actions))
    probs[np.arange(actions.shape[0]), actions] = 1.0
    return TabularPolicy(probs)


def enumerate_best_policy(mdp: TabularMdp, effective_reward: np.ndarray | None = None,
                          limit: int = 4096) -> tuple[TabularPolicy, np.ndarray]:
    """Exhaustively search deterministic policies for the best value vector.

    Evaluates every one of the |A|^|S| deterministic policies exactly and
    returns the one with the highest mean state value (for a generic MDP the
    winner dominates at every state).  Refuses instances beyond ``limit``
    policies.
    """
    n_policies = mdp.n_actions ** mdp.n_states
    if n_policies > limit:
        raise ValueError(f"{n_policies} deterministic policies exceed limit {limit}")
    best_v, best_policy = None, None
    assignment = np.zeros(mdp.n_states, dtype=int)
    for idx in range(n_policies):
        k = idx
        for s in range(mdp.n_states):
            assignment[s] = k % mdp.n_actions
            k //= mdp.n_actions
        policy = deterministic_policy(assignment, mdp.n_actions)
        v, _ = exact_policy_values(mdp, policy, effective_reward)
        if best_v is None or v.mean() > best_v.mean():
            best_v, best_policy = v, policy
    return best_policy, best_v


CONVERGENCE_TOL = 1e-10
CONVERGENCE_MAX_ITER = 10_000

_SCHEMES = ("plain", "exploration", "reward_penalty", "penalized_bootstrap")


def run_to_convergence(mdp: TabularMdp, scheme: str, q0: QTable,
                       bonus: BonusTable | None = None,
                       tol: float = CONVERGENCE_TOL,
                       max_iter: int = CONVERGENCE_MAX_ITER
                       ) -> tuple[QTable, TabularPolicy, int]:
    """Iterate a VI scheme until successive Q-tables differ by less than tol.

    Returns the final Q-table, the greedy policy extracted from it under the
    scheme's own greedy rule, and the number of iterations performed.
    """
    if scheme not in _SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {_SCHEMES}")
    if scheme != "plain" and bonus is None:
        raise ValueError(f"scheme {scheme!r} requires a bonus table")
    step = {
        "plain": lambda q: vi_plain(mdp, q, 1),
        "exploration": lambda q: vi_exploration_bonus(mdp, bonus, q, 1),
        "reward_penalty": lambda q: vi_reward_penalty(mdp, bonus, q, 1),
        "penalized_bootstrap": lambda q: vi_penalized_bootstrap(mdp, bonus, q, 1),
    }[scheme]
    q = q0
    for it in range(1, max_iter + 1):
        trace = step(q)
        q_next = trace.q_tables[-1]
        if np.max(np.abs(q_next.values - q.values)) < tol:
            return q_next, trace.policies[-1], it
        q = q_next
    return q_next, trace.policies[-1], max_iter


# ---------------------------------------------------------------------------
# Instance generation and serialization
# ---------------------------------------------------------------------------

def random_mdp(n_states: int, n_actions: int, gamma: float,
               rng: np.random.Generator) -> TabularMdp:
    """Generic random instance: Dirichlet(1,..,1) rows, rewards uniform in [0,1]."""
    raw = rng.standard_gamma(1.0, size=(n_states, n_actions, n_states))
    transition = raw / raw.sum(axis=2, keepdims=True)
    reward = rng.uniform(0.0, 1.0, size=(n_states, n_actions))
    return TabularMdp(n_states, n_actions, transition, reward, gamma)


def random_bonus(n_states: int, n_actions: int, rng: np.random.Generator,
                 scale: float = 1.0, zero_min: bool = False) -> BonusTable:
    """Uniform random bonus table; ``zero_min`` rebases each state's minimum to 0."""
    values = rng.uniform(0.0, scale, size=(n_states, n_actions))
    if zero_min:
        values = values - values.min(axis=1, keepdims=True)
    return BonusTable(values)


def mdp_to_json(mdp: TabularMdp) -> str:
    """Serialize to the documented JSON layout (nested arrays, row-major)."""
    return json.dumps({
        "n_states": mdp.n_states,
        "n_actions": mdp.n_actions,
        "gamma": mdp.gamma,
        "transition": mdp.transition.tolist(),
        "reward": mdp.reward.tolist(),
    })


def mdp_from_json(text: str) -> TabularMdp:
    doc = json.loads(text)
    try:
        return TabularMdp(int(doc["n_states"]), int(doc["n_actions"]),
                          np.asarray(doc["transition"], dtype=float),
                          np.asarray(doc["reward"], dtype=float),
                          float(doc["gamma"]))
    except KeyError as exc:
        raise ValueError(f"MDP document missing field {exc}") from exc


def trace_to_csv(trace: ViTrace, fileobj) -> None:
    """Write (iteration, state, chosen_action, q_value) rows for a VI trace."""
    writer = csv.writer(fileobj)
    writer.writerow(["iteration", "state", "chosen_action", "q_value"])
    for it, (policy, q) in enumerate(zip(trace.policies, trace.q_tables)):
        actions = policy.actions()
        for s, a in enumerate(actions):
            writer.writerow([it, s, int(a), repr(float(q.values[s, a]))])

