"""Small feed-forward network substrate: parameters, forward/backward, Adam.

Everything is plain numpy on purpose. The repo only ever needs fixed MLP
shapes, so exact reverse-mode gradients are hand-coded per layer instead of
pulling in an autodiff framework. Containers are immutable; training steps
return fresh values.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

ACTIVATIONS = ("identity", "tanh", "relu", "elu")
_ACT_TAG = {name: i for i, name in enumerate(ACTIVATIONS)}
_TAG_ACT = {i: name for name, i in _ACT_TAG.items()}

CHECKPOINT_MAGIC = b"AXRL"
CHECKPOINT_VERSION = 1


def _apply_activation(name: str, z: np.ndarray) -> np.ndarray:
    if name == "identity":
        return z
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "elu":
        # alpha = 1; exp only evaluated on the negative branch
        return np.where(z > 0, z, np.expm1(np.minimum(z, 0.0)))
    raise ValueError(f"unknown activation {name!r}")


def _activation_derivative(name: str, z: np.ndarray) -> np.ndarray:
    """Derivative wrt the pre-activation z. relu'(0) is defined as 0."""
    if name == "identity":
        return np.ones_like(z)
    if name == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    if name == "relu":
        return (z > 0).astype(z.dtype)
    if name == "elu":
        return np.where(z > 0, 1.0, np.exp(np.minimum(z, 0.0)))
    raise ValueError(f"unknown activation {name!r}")


@dataclass(frozen=True)
class MlpParams:
    """Weights, biases and per-layer activation tags for one MLP.

    weights[i] has shape (layer_sizes[i], layer_sizes[i+1]); forward computes
    x @ W + b layer by layer.
    """

    layer_sizes: tuple[int, ...]
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    activations: tuple[str, ...]

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ValueError(f"layer_sizes must be >= 2 positive entries, got {sizes}")
        n_layers = len(sizes) - 1
        if len(self.weights) != n_layers or len(self.biases) != n_layers:
            raise ValueError("weights/biases count does not match layer_sizes")
        if len(self.activations) != n_layers:
            raise ValueError("one activation tag per layer is required")
        for i, act in enumerate(self.activations):
            if act not in _ACT_TAG:
                raise ValueError(f"unknown activation {act!r} at layer {i}")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[i], sizes[i + 1]):
                raise ValueError(
                    f"layer {i} weight shape {w.shape}, expected {(sizes[i], sizes[i + 1])}")
            if b.shape != (sizes[i + 1],):
                raise ValueError(f"layer {i} bias shape {b.shape}, expected ({sizes[i + 1]},)")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {i} has non-finite parameters")
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "activations", tuple(self.activations))

    @property
    def dtype(self) -> np.dtype:
        return self.weights[0].dtype

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def parameter_arrays(self) -> tuple[np.ndarray, ...]:
        """Canonical flat ordering W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return tuple(out)


@dataclass(frozen=True)
class MlpGrads:
    d_weights: tuple[np.ndarray, ...]
    d_biases: tuple[np.ndarray, ...]

    def parameter_arrays(self) -> tuple[np.ndarray, ...]:
        out = []
        for w, b in zip(self.d_weights, self.d_biases):
            out.append(w)
            out.append(b)
        return tuple(out)

    def scaled(self, factor: float) -> "MlpGrads":
        return MlpGrads(tuple(factor * g for g in self.d_weights),
                        tuple(factor * g for g in self.d_biases))


@dataclass(frozen=True)
class ForwardCache:
    """Intermediates needed by backward: layer inputs and pre-activations."""

    inputs: tuple[np.ndarray, ...]
    pre_activations: tuple[np.ndarray, ...]
    squeeze: bool


@dataclass(frozen=True)
class GaussianSample:
    """A reparameterized normal draw; sample() is reproducible from noise."""

    mean: np.ndarray
    std: np.ndarray
    noise: np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.std) <= 0):
            raise ValueError("std must be positive")

    def sample(self) -> np.ndarray:
        return self.mean + self.std * self.noise


def draw_gaussian(mean: np.ndarray, std, rng: np.random.Generator) -> GaussianSample:
    noise = rng.standard_normal(size=np.shape(mean)).astype(np.asarray(mean).dtype, copy=False)
    return GaussianSample(mean=np.asarray(mean), std=np.asarray(std), noise=noise)


def mlp_init(layer_sizes, activations, rng: np.random.Generator,
             dtype=np.float64) -> MlpParams:
    """Uniform init in +-1/sqrt(fan_in) for both weights and biases."""
    sizes = tuple(int(s) for s in layer_sizes)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype))
        biases.append(rng.uniform(-bound, bound, size=fan_out).astype(dtype))
    return MlpParams(sizes, tuple(weights), tuple(biases), tuple(activations))


def forward(params: MlpParams, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Run the MLP on a single vector or a (batch, features) matrix."""
    x = np.asarray(x, dtype=params.dtype)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.layer_sizes[0]:
        raise ValueError(
            f"input width {x.shape} does not match first layer {params.layer_sizes[0]}")
    inputs, preacts = [], []
    h = x
    for w, b, act in zip(params.weights, params.biases, params.activations):
        inputs.append(h)
        z = h @ w + b
        preacts.append(z)
        h = _apply_activation(act, z)
    cache = ForwardCache(tuple(inputs), tuple(preacts), squeeze)
    return (h[0] if squeeze else h), cache


def backward(params: MlpParams, cache: ForwardCache,
             output_gradient: np.ndarray) -> tuple[MlpGrads, np.ndarray]:
    """Exact reverse-mode pass.

    output_gradient holds dL/d(output) for the same batch the cache came
    from; parameter gradients are summed over the batch, so a mean-loss
    convention is expressed by pre-scaling output_gradient with 1/batch.
    Also returns dL/d(input) for chaining through stacked networks.
    """
    g = np.asarray(output_gradient, dtype=params.dtype)
    if cache.squeeze:
        g = g[None, :]
    if g.shape != cache.pre_activations[-1].shape:
        raise ValueError(
            f"output_gradient shape {g.shape} does not match forward output "
            f"{cache.pre_activations[-1].shape}")
    d_weights = [None] * params.n_layers
    d_biases = [None] * params.n_layers
    for i in range(params.n_layers - 1, -1, -1):
        dz = g * _activation_derivative(params.activations[i], cache.pre_activations[i])
        d_weights[i] = cache.inputs[i].T @ dz
        d_biases[i] = dz.sum(axis=0)
        g = dz @ params.weights[i].T
    input_grad = g[0] if cache.squeeze else g
    return MlpGrads(tuple(d_weights), tuple(d_biases)), input_grad


@dataclass(frozen=True)
class AdamState:
    first_moment: tuple[np.ndarray, ...]
    second_moment: tuple[np.ndarray, ...]
    step_count: int
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.step_count < 0:
            raise ValueError("step_count must be >= 0")
        for m in (*self.first_moment, *self.second_moment):
            if not np.all(np.isfinite(m)):
                raise ValueError("optimizer moments must be finite")


def adam_init(params: MlpParams, learning_rate: float, beta1: float = 0.9,
              beta2: float = 0.999, epsilon: float = 1e-8) -> AdamState:
    zeros = tuple(np.zeros_like(p) for p in params.parameter_arrays())
    return AdamState(zeros, tuple(np.zeros_like(z) for z in zeros), 0,
                     learning_rate, beta1, beta2, epsilon)


def adam_step(params: MlpParams, grads: MlpGrads,
              state: AdamState) -> tuple[MlpParams, AdamState]:
    """One bias-corrected Adam update; returns fresh params and state."""
    t = state.step_count + 1
    new_first, new_second, new_arrays = [], [], []
    for p, g, m, v in zip(params.parameter_arrays(), grads.parameter_arrays(),
                          state.first_moment, state.second_moment):
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m_new = state.beta1 * m + (1.0 - state.beta1) * g
        v_new = state.beta2 * v + (1.0 - state.beta2) * g * g
        m_hat = m_new / (1.0 - state.beta1 ** t)
        v_hat = v_new / (1.0 - state.beta2 ** t)
        new_arrays.append(p - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon))
        new_first.append(m_new)
        new_second.append(v_new)
    weights = tuple(new_arrays[0::2])
    biases = tuple(new_arrays[1::2])
    new_params = MlpParams(params.layer_sizes, weights, biases, params.activations)
    new_state = AdamState(tuple(new_first), tuple(new_second), t,
                          state.learning_rate, state.beta1, state.beta2, state.epsilon)
    return new_params, new_state


def assert_finite(params: MlpParams, context: str = "network") -> None:
    """Abort with a diagnostic naming the first offending layer."""
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        if not np.all(np.isfinite(w)):
            raise FloatingPointError(f"{context}: non-finite weight in layer {i}")
        if not np.all(np.isfinite(b)):
            raise FloatingPointError(f"{context}: non-finite bias in layer {i}")


# ---------------------------------------------------------------------------
# Checkpoint format
#
# magic "AXRL" | uint32 version | uint32 n_sizes | uint32 sizes...
# | uint8 activation tags (n_sizes - 1) | float64 little-endian W0 b0 W1 b1 ...
# ---------------------------------------------------------------------------

def save_mlp(path, params: MlpParams) -> None:
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(params.layer_sizes)))
        fh.write(struct.pack(f"<{len(params.layer_sizes)}I", *params.layer_sizes))
        fh.write(bytes(_ACT_TAG[a] for a in params.activations))
        for arr in params.parameter_arrays():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_mlp(path, dtype=np.float64) -> MlpParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a network checkpoint (bad magic)")
    offset = 4
    (version,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    (n_sizes,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    if n_sizes < 2:
        raise ValueError(f"{path}: corrupt header (n_sizes={n_sizes})")
    sizes = struct.unpack_from(f"<{n_sizes}I", blob, offset)
    offset += 4 * n_sizes
    tags = blob[offset:offset + n_sizes - 1]
    offset += n_sizes - 1
    if len(tags) != n_sizes - 1 or any(t not in _TAG_ACT for t in tags):
        raise ValueError(f"{path}: corrupt activation tags")
    activations = tuple(_TAG_ACT[t] for t in tags)
    n_params = sum(a * b + b for a, b in zip(sizes, sizes[1:]))
    expected = offset + 8 * n_params
    if len(blob) != expected:
        raise ValueError(f"{path}: payload length {len(blob)} does not match "
                         f"header (expected {expected})")
    flat = np.frombuffer(blob, dtype="<f8", offset=offset)
    weights, biases = [], []
    pos = 0
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        w = flat[pos:pos + fan_in * fan_out].reshape(fan_in, fan_out)
        pos += fan_in * fan_out
        b = flat[pos:pos + fan_out]
        pos += fan_out
        weights.append(np.array(w, dtype=dtype))
        biases.append(np.array(b, dtype=dtype))
    return MlpParams(tuple(int(s) for s in sizes), tuple(weights), tuple(biases),
                     activations)
