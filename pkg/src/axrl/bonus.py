"""Learned novelty scores for state-action pairs.

Two models behind one scoring interface. The conditional VAE reconstructs the
action from (state, latent); its squared reconstruction error through the
mean latent is the score. The random-network-distillation baseline scores by
the squared gap between a frozen random embedding and a trained predictor.
Scores carry no scale factor: consumers apply their own multipliers.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace

import numpy as np

from .envs import Dataset, make_env
from .nets import (
    GaussianSample,
    MlpGrads,
    MlpParams,
    adam_init,
    adam_step,
    backward,
    forward,
    load_mlp,
    mlp_init,
    save_mlp,
)

MODEL_FILE = "model.json"


@dataclass(frozen=True)
class CvaeConfig:
    hidden_sizes: tuple[int, ...] = (750, 750)
    latent_dim: int = 12
    kl_weight: float = 0.5
    learning_rate: float = 1e-4
    batch_size: int = 100
    n_steps: int = 50_000
    seed: int = 0
    dtype: type = np.float64
    log_every: int = 100
    action_low: np.ndarray | None = None
    action_high: np.ndarray | None = None


# desk-scale override used by fast tests
DESK_CVAE = CvaeConfig(hidden_sizes=(64, 64), latent_dim=4)


@dataclass(frozen=True)
class RndConfig:
    hidden_sizes: tuple[int, ...] = (256, 256)
    embed_dim: int = 32
    learning_rate: float = 1e-4
    batch_size: int = 100
    n_steps: int = 50_000
    seed: int = 0
    dtype: type = np.float64
    log_every: int = 100


DESK_RND = RndConfig(hidden_sizes=(64, 64), embed_dim=8)


@dataclass(frozen=True)
class CvaeModel:
    """Encoder (s|a) -> (mu, log sigma); decoder (s|z) -> squashed action."""

    encoder: MlpParams
    decoder: MlpParams
    latent_dim: int
    kl_weight: float
    action_low: np.ndarray
    action_high: np.ndarray
    trained: bool = False

    def __post_init__(self):
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be positive")
        if self.kl_weight <= 0:
            raise ValueError("kl_weight must be positive")
        if self.encoder.layer_sizes[-1] != 2 * self.latent_dim:
            raise ValueError("encoder must emit mean and log-std per latent dim")
        if self.decoder.layer_sizes[-1] != len(self.action_low):
            raise ValueError("decoder output must match action dimension")

    @property
    def kind(self) -> str:
        return "cvae"


@dataclass(frozen=True)
class RndModel:
    target: MlpParams
    predictor: MlpParams
    embed_dim: int
    trained: bool = False

    def __post_init__(self):
        if self.embed_dim < 1:
            raise ValueError("embed_dim must be positive")
        for net in (self.target, self.predictor):
            if net.layer_sizes[-1] != self.embed_dim:
                raise ValueError("embedding networks must emit embed_dim values")

    @property
    def kind(self) -> str:
        return "rnd"


@dataclass(frozen=True)
class CvaeGrads:
    encoder: MlpGrads
    decoder: MlpGrads


def _as_batch(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    return x, False


def _squash(model: CvaeModel, raw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """tanh squash scaled to the action box; returns (action, d action/d raw)."""
    center = (model.action_high + model.action_low) / 2.0
    half = (model.action_high - model.action_low) / 2.0
    t = np.tanh(raw)
    return center + half * t, half * (1.0 - t * t)


def _elbo_parts(model: CvaeModel, state: np.ndarray, action: np.ndarray,
                epsilon: np.ndarray):
    """Forward pass pieces shared by the loss and its backward chain."""
    enc_in = np.concatenate([state, action], axis=1)
    enc_out, enc_cache = forward(model.encoder, enc_in)
    mu = enc_out[:, :model.latent_dim]
    log_sigma = enc_out[:, model.latent_dim:]
    sigma = np.exp(log_sigma)
    z = mu + sigma * epsilon
    dec_in = np.concatenate([state, z], axis=1)
    dec_raw, dec_cache = forward(model.decoder, dec_in)
    recon, d_squash = _squash(model, dec_raw)
    return enc_cache, dec_cache, mu, log_sigma, sigma, recon, d_squash


def cvae_elbo_loss(model: CvaeModel, state, action,
                   noise) -> tuple[float, CvaeGrads]:
    """Mean-over-batch ELBO loss and exact parameter gradients.

    loss = mean_i [ ||a_i - recon_i||^2 + eta * KL(N(mu_i, sigma_i^2) || N(0, I)) ]
    with the latent reparameterized as z = mu + sigma * eps for the supplied
    standard-normal eps (a GaussianSample's noise field, or a raw array).
    """
    loss, grads, _, _ = _elbo_with_breakdown(model, state, action, noise)
    return loss, grads


def _elbo_with_breakdown(model: CvaeModel, state, action, noise):
    state, _ = _as_batch(state)
    action, _ = _as_batch(action)
    epsilon = noise.noise if isinstance(noise, GaussianSample) else np.asarray(noise)
    epsilon = np.atleast_2d(np.asarray(epsilon, dtype=np.float64))
    if epsilon.shape != (len(state), model.latent_dim):
        raise ValueError(f"noise shape {epsilon.shape} does not match "
                         f"(batch, latent_dim) = ({len(state)}, {model.latent_dim})")
    n = len(state)
    enc_cache, dec_cache, mu, log_sigma, sigma, recon, d_squash = \
        _elbo_parts(model, state, action, epsilon)

    residual = action - recon
    rec_per = np.sum(residual * residual, axis=1)
    kl_per = 0.5 * np.sum(sigma * sigma + mu * mu - 1.0 - 2.0 * log_sigma, axis=1)
    rec = float(np.mean(rec_per))
    kl = float(np.mean(kl_per))
    loss = rec + model.kl_weight * kl
    if not np.isfinite(loss):
        raise FloatingPointError(
            f"ELBO loss became non-finite (reconstruction {rec}, KL {kl})")

    # backward chain, mean convention
    d_recon = (-2.0 / n) * residual
    d_raw = d_recon * d_squash
    dec_grads, d_dec_in = backward(model.decoder, dec_cache, d_raw)
    dz = d_dec_in[:, state.shape[1]:]
    eta_n = model.kl_weight / n
    d_mu = dz + eta_n * mu
    d_sigma = dz * epsilon + eta_n * (sigma - 1.0 / sigma)
    d_log_sigma = d_sigma * sigma
    d_enc_out = np.concatenate([d_mu, d_log_sigma], axis=1)
    enc_grads, _ = backward(model.encoder, enc_cache, d_enc_out)
    return loss, CvaeGrads(enc_grads, dec_grads), rec, kl


def cvae_bonus(model: CvaeModel, state, action):
    """Squared reconstruction error through the mean latent (no sampling)."""
    if not model.trained:
        raise ValueError("bonus model is untrained; call train_cvae first")
    return _cvae_score(model, state, action)[0]


def _cvae_score(model: CvaeModel, state, action):
    state, single = _as_batch(state)
    action, _ = _as_batch(action)
    enc_in = np.concatenate([state, action], axis=1)
    enc_out, enc_cache = forward(model.encoder, enc_in)
    mu = enc_out[:, :model.latent_dim]
    dec_in = np.concatenate([state, mu], axis=1)
    dec_raw, dec_cache = forward(model.decoder, dec_in)
    recon, d_squash = _squash(model, dec_raw)
    residual = action - recon
    score = np.sum(residual * residual, axis=1)
    out = float(score[0]) if single else score
    return out, (state, action, enc_cache, dec_cache, residual, d_squash, single)


def cvae_bonus_action_grad(model: CvaeModel, state, action):
    """Score and its exact gradient wrt the action input.

    The action enters twice: directly in the residual and through the
    encoder; both paths are chained.
    """
    if not model.trained:
        raise ValueError("bonus model is untrained; call train_cvae first")
    score, stash = _cvae_score(model, state, action)
    state_b, action_b, enc_cache, dec_cache, residual, d_squash, single = stash
    d_recon = -2.0 * residual
    d_raw = d_recon * d_squash
    _, d_dec_in = backward(model.decoder, dec_cache, d_raw)
    d_mu = d_dec_in[:, state_b.shape[1]:]
    d_enc_out = np.concatenate([d_mu, np.zeros_like(d_mu)], axis=1)
    _, d_enc_in = backward(model.encoder, enc_cache, d_enc_out)
    grad = 2.0 * residual + d_enc_in[:, state_b.shape[1]:]
    return score, (grad[0] if single else grad)


def _rnd_embeddings(model: RndModel, state, action):
    state, single = _as_batch(state)
    action, _ = _as_batch(action)
    x = np.concatenate([state, action], axis=1)
    t_out, t_cache = forward(model.target, x)
    p_out, p_cache = forward(model.predictor, x)
    return state, x, t_out, t_cache, p_out, p_cache, single


def rnd_bonus(model: RndModel, state, action):
    """Squared embedding prediction error of the frozen target."""
    if not model.trained:
        raise ValueError("bonus model is untrained; call train_rnd first")
    _, _, t_out, _, p_out, _, single = _rnd_embeddings(model, state, action)
    gap = t_out - p_out
    score = np.sum(gap * gap, axis=1)
    return float(score[0]) if single else score


def rnd_bonus_action_grad(model: RndModel, state, action):
    if not model.trained:
        raise ValueError("bonus model is untrained; call train_rnd first")
    state_b, _, t_out, t_cache, p_out, p_cache, single = \
        _rnd_embeddings(model, state, action)
    gap = t_out - p_out
    score = np.sum(gap * gap, axis=1)
    _, d_x_t = backward(model.target, t_cache, 2.0 * gap)
    _, d_x_p = backward(model.predictor, p_cache, -2.0 * gap)
    grad = (d_x_t + d_x_p)[:, state_b.shape[1]:]
    out_score = float(score[0]) if single else score
    return out_score, (grad[0] if single else grad)


def bonus_score(model, state, action):
    if isinstance(model, CvaeModel):
        return cvae_bonus(model, state, action)
    if isinstance(model, RndModel):
        return rnd_bonus(model, state, action)
    raise TypeError(f"not a bonus model: {type(model).__name__}")


def bonus_action_grad(model, state, action):
    if isinstance(model, CvaeModel):
        return cvae_bonus_action_grad(model, state, action)
    if isinstance(model, RndModel):
        return rnd_bonus_action_grad(model, state, action)
    raise TypeError(f"not a bonus model: {type(model).__name__}")


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def _resolve_bounds(dataset: Dataset, config: CvaeConfig) -> tuple[np.ndarray, np.ndarray]:
    if config.action_low is not None and config.action_high is not None:
        return (np.asarray(config.action_low, dtype=float),
                np.asarray(config.action_high, dtype=float))
    env = make_env(dataset.metadata["env"])
    return env.action_low, env.action_high


def _open_loss_csv(path, columns):
    if path is None:
        return None
    fh = open(path, "w")
    fh.write(",".join(columns) + "\n")
    return fh


def train_cvae(dataset: Dataset, config: CvaeConfig = CvaeConfig(),
               loss_csv_path=None) -> CvaeModel:
    """Adam on minibatch ELBO; aborts on non-finite loss."""
    if len(dataset) == 0:
        raise ValueError("dataset must be non-empty")
    low, high = _resolve_bounds(dataset, config)
    state_dim = dataset.states.shape[1]
    action_dim = dataset.actions.shape[1]
    rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    hid = tuple(config.hidden_sizes)
    acts = ("relu",) * len(hid) + ("identity",)
    encoder = mlp_init((state_dim + action_dim, *hid, 2 * config.latent_dim),
                       acts, rng, dtype=config.dtype)
    decoder = mlp_init((state_dim + config.latent_dim, *hid, action_dim),
                       acts, rng, dtype=config.dtype)
    model = CvaeModel(encoder, decoder, config.latent_dim, config.kl_weight,
                      low, high)
    enc_opt = adam_init(encoder, config.learning_rate)
    dec_opt = adam_init(decoder, config.learning_rate)
    states = dataset.states.astype(np.float64)
    actions = dataset.actions.astype(np.float64)
    csv = _open_loss_csv(loss_csv_path, ("step", "loss", "reconstruction", "kl"))
    try:
        for step_i in range(config.n_steps):
            idx = rng.integers(0, len(dataset), size=config.batch_size)
            eps = rng.standard_normal((config.batch_size, config.latent_dim))
            try:
                loss, grads, rec, kl = _elbo_with_breakdown(
                    model, states[idx], actions[idx], eps)
            except FloatingPointError as exc:
                raise FloatingPointError(
                    f"CVAE training aborted at step {step_i}: {exc}") from exc
            encoder, enc_opt = adam_step(model.encoder, grads.encoder, enc_opt)
            decoder, dec_opt = adam_step(model.decoder, grads.decoder, dec_opt)
            model = replace(model, encoder=encoder, decoder=decoder)
            if csv is not None and (step_i % config.log_every == 0
                                    or step_i == config.n_steps - 1):
                csv.write(f"{step_i},{loss!r},{rec!r},{kl!r}\n")
    finally:
        if csv is not None:
            csv.close()
    return replace(model, trained=True)


def train_rnd(dataset: Dataset, config: RndConfig = RndConfig(),
              loss_csv_path=None) -> RndModel:
    """Predictor regression onto a frozen random target embedding."""
    if len(dataset) == 0:
        raise ValueError("dataset must be non-empty")
    state_dim = dataset.states.shape[1]
    action_dim = dataset.actions.shape[1]
    rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    hid = tuple(config.hidden_sizes)
    in_dim = state_dim + action_dim
    target = mlp_init((in_dim, *hid, config.embed_dim),
                      ("relu",) * len(hid) + ("identity",), rng, dtype=config.dtype)
    # one extra hidden layer so the predictor cannot trivially copy the target
    pred_hid = hid + (hid[-1],)
    predictor = mlp_init((in_dim, *pred_hid, config.embed_dim),
                         ("relu",) * len(pred_hid) + ("identity",), rng,
                         dtype=config.dtype)
    opt = adam_init(predictor, config.learning_rate)
    states = dataset.states.astype(np.float64)
    actions = dataset.actions.astype(np.float64)
    csv = _open_loss_csv(loss_csv_path, ("step", "loss"))
    try:
        for step_i in range(config.n_steps):
            idx = rng.integers(0, len(dataset), size=config.batch_size)
            x = np.concatenate([states[idx], actions[idx]], axis=1)
            t_out, _ = forward(target, x)
            p_out, p_cache = forward(predictor, x)
            gap = p_out - t_out
            loss = float(np.mean(np.sum(gap * gap, axis=1)))
            if not np.isfinite(loss):
                raise FloatingPointError(
                    f"RND training aborted at step {step_i}: non-finite loss")
            grads, _ = backward(predictor, p_cache, (2.0 / len(x)) * gap)
            predictor, opt = adam_step(predictor, grads, opt)
            if csv is not None and (step_i % config.log_every == 0
                                    or step_i == config.n_steps - 1):
                csv.write(f"{step_i},{loss!r}\n")
    finally:
        if csv is not None:
            csv.close()
    return RndModel(target, predictor, config.embed_dim, trained=True)


# ---------------------------------------------------------------------------
# Persistence: checkpoints per network plus a JSON sidecar
# ---------------------------------------------------------------------------

def save_bonus_model(directory, model, dataset_fingerprint: str = "",
                     training_steps: int = 0) -> None:
    os.makedirs(directory, exist_ok=True)
    meta = {
        "kind": model.kind,
        "dataset_fingerprint": dataset_fingerprint,
        "training_steps": int(training_steps),
        "trained": bool(model.trained),
    }
    if isinstance(model, CvaeModel):
        save_mlp(os.path.join(directory, "encoder.axrl"), model.encoder)
        save_mlp(os.path.join(directory, "decoder.axrl"), model.decoder)
        meta.update({
            "latent_dim": model.latent_dim,
            "eta": model.kl_weight,
            "action_low": [float(v) for v in model.action_low],
            "action_high": [float(v) for v in model.action_high],
        })
    elif isinstance(model, RndModel):
        save_mlp(os.path.join(directory, "target.axrl"), model.target)
        save_mlp(os.path.join(directory, "predictor.axrl"), model.predictor)
        meta["embed_dim"] = model.embed_dim
    else:
        raise TypeError(f"not a bonus model: {type(model).__name__}")
    with open(os.path.join(directory, MODEL_FILE), "w") as fh:
        json.dump(meta, fh, sort_keys=True, indent=2)


def load_bonus_model(directory):
    path = os.path.join(directory, MODEL_FILE)
    try:
        with open(path) as fh:
            meta = json.load(fh)
    except FileNotFoundError:
        raise ValueError(f"{directory}: no bonus model found ({MODEL_FILE} missing)")
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: corrupt model sidecar") from exc
    kind = meta.get("kind")
    if kind == "cvae":
        return CvaeModel(
            encoder=load_mlp(os.path.join(directory, "encoder.axrl")),
            decoder=load_mlp(os.path.join(directory, "decoder.axrl")),
            latent_dim=int(meta["latent_dim"]),
            kl_weight=float(meta["eta"]),
            action_low=np.array(meta["action_low"], dtype=float),
            action_high=np.array(meta["action_high"], dtype=float),
            trained=bool(meta["trained"]))
    if kind == "rnd":
        return RndModel(
            target=load_mlp(os.path.join(directory, "target.axrl")),
            predictor=load_mlp(os.path.join(directory, "predictor.axrl")),
            embed_dim=int(meta["embed_dim"]),
            trained=bool(meta["trained"]))
    raise ValueError(f"{path}: unknown bonus model kind {kind!r}")
