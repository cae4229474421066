"""Network substrate tests: forward oracle, finite-difference gradients, Adam."""

import numpy as np
import pytest

from axrl.nets import (
    AdamState,
    GaussianSample,
    MlpGrads,
    MlpParams,
    _activation_derivative,
    _apply_activation,
    adam_init,
    adam_step,
    assert_finite,
    backward,
    draw_gaussian,
    forward,
    load_mlp,
    mlp_init,
    save_mlp,
)

FD_H = 1e-5
FD_TOL = 1e-4


def loop_forward_oracle(params, x):
    """Element-by-element evaluation with python loops only."""
    h = [float(v) for v in x]
    for w, b, act in zip(params.weights, params.biases, params.activations):
        nxt = []
        for j in range(w.shape[1]):
            z = b[j]
            for i in range(w.shape[0]):
                z += h[i] * w[i, j]
            if act == "tanh":
                nxt.append(np.tanh(z))
            elif act == "relu":
                nxt.append(max(z, 0.0))
            elif act == "elu":
                nxt.append(z if z > 0 else np.exp(z) - 1.0)
            else:
                nxt.append(z)
        h = nxt
    return np.array(h)


def screened_net(layer_sizes, activations, batch, first_seed, margin=1e-3):
    """Draw net + batch whose relu/elu pre-activations stay clear of the kink."""
    for seed in range(first_seed, first_seed + 500):
        rng = np.random.default_rng(seed)
        params = mlp_init(layer_sizes, activations, rng)
        x = rng.normal(size=(batch, layer_sizes[0]))
        _, cache = forward(params, x)
        clear = all(
            np.min(np.abs(z)) > margin
            for z, act in zip(cache.pre_activations, activations)
            if act in ("relu", "elu"))
        if clear:
            return params, x
    raise RuntimeError("screening failed")


def probe_loss(params, x, probe):
    out, _ = forward(params, x)
    return float(np.sum(out * probe))


def probe_grads(params, x, probe):
    _, cache = forward(params, x)
    return backward(params, cache, probe)


def with_perturbed(params, layer, which, index, delta):
    weights = [w.copy() for w in params.weights]
    biases = [b.copy() for b in params.biases]
    target = weights[layer] if which == "w" else biases[layer]
    target[index] += delta
    return MlpParams(params.layer_sizes, tuple(weights), tuple(biases),
                     params.activations)


def fd_check_all_params(params, x, probe, coords=None):
    """Max guarded relative error between backward and central differences."""
    grads, _ = probe_grads(params, x, probe)
    worst = 0.0
    for layer in range(params.n_layers):
        for which, g_arr in (("w", grads.d_weights[layer]),
                             ("b", grads.d_biases[layer])):
            indices = list(np.ndindex(g_arr.shape))
            if coords is not None:
                rng = np.random.default_rng(coords)
                keep = rng.choice(len(indices), size=min(coords + 10, len(indices)),
                                  replace=False)
                indices = [indices[int(k)] for k in keep]
            for idx in indices:
                plus = probe_loss(with_perturbed(params, layer, which, idx, FD_H), x, probe)
                minus = probe_loss(with_perturbed(params, layer, which, idx, -FD_H), x, probe)
                fd = (plus - minus) / (2 * FD_H)
                g = g_arr[idx]
                err = abs(g - fd) / max(abs(g), abs(fd), 1e-6)
                worst = max(worst, err)
    return worst


class TestForward:
    def test_zero_net_tanh_outputs_zero(self):
        sizes = (3, 4, 2)
        params = MlpParams(sizes,
                           (np.zeros((3, 4)), np.zeros((4, 2))),
                           (np.zeros(4), np.zeros(2)),
                           ("tanh", "tanh"))
        out, _ = forward(params, np.array([1.0, -2.0, 3.0]))
        np.testing.assert_array_equal(out, np.zeros(2))

    def test_scalar_affine(self):
        params = MlpParams((1, 1), (np.array([[2.5]]),), (np.array([-0.5]),),
                           ("identity",))
        out, _ = forward(params, np.array([3.0]))
        assert out[0] == pytest.approx(2.5 * 3.0 - 0.5)

    @pytest.mark.parametrize("acts", [("tanh", "elu", "identity"),
                                      ("relu", "tanh", "elu")])
    def test_matches_loop_oracle(self, acts):
        rng = np.random.default_rng(17)
        params = mlp_init((4, 6, 5, 3), acts, rng)
        for _ in range(5):
            x = rng.normal(size=4)
            out, _ = forward(params, x)
            np.testing.assert_allclose(out, loop_forward_oracle(params, x),
                                       rtol=1e-12, atol=1e-14)

    def test_batch_rows_match_single_calls(self):
        rng = np.random.default_rng(3)
        params = mlp_init((5, 8, 2), ("tanh", "identity"), rng)
        xb = rng.normal(size=(6, 5))
        out_b, _ = forward(params, xb)
        for i in range(6):
            out_s, _ = forward(params, xb[i])
            np.testing.assert_allclose(out_b[i], out_s, atol=1e-12)

    def test_width_mismatch_raises(self):
        rng = np.random.default_rng(0)
        params = mlp_init((3, 2), ("identity",), rng)
        with pytest.raises(ValueError, match="width"):
            forward(params, np.zeros(4))

    def test_dtype_follows_params(self):
        rng = np.random.default_rng(0)
        params = mlp_init((3, 4, 2), ("tanh", "identity"), rng, dtype=np.float32)
        out, _ = forward(params, np.zeros(3))
        assert out.dtype == np.float32


class TestActivations:
    def test_derivatives_at_zero(self):
        z = np.array([0.0])
        assert _activation_derivative("tanh", z)[0] == 1.0
        assert _activation_derivative("relu", z)[0] == 0.0
        assert _activation_derivative("elu", z)[0] == 1.0
        assert _activation_derivative("identity", z)[0] == 1.0

    def test_elu_continuous_at_zero(self):
        z = np.array([-1e-12, 0.0, 1e-12])
        vals = _apply_activation("elu", z)
        np.testing.assert_allclose(vals, z, atol=1e-24)

    def test_elu_saturates_to_minus_one(self):
        assert _apply_activation("elu", np.array([-50.0]))[0] == pytest.approx(-1.0)


class TestBackward:
    @pytest.mark.parametrize("seed", range(25))
    def test_small_nets_match_finite_differences(self, seed):
        shapes_acts = [
            ((3, 8, 5, 2), ("tanh", "elu", "identity")),
            ((4, 7, 1), ("relu", "identity")),
            ((2, 6, 6, 3), ("elu", "tanh", "tanh")),
            ((5, 9, 4), ("tanh", "relu")),
        ]
        sizes, acts = shapes_acts[seed % len(shapes_acts)]
        params, x = screened_net(sizes, acts, batch=3, first_seed=1000 * seed + 1)
        probe = np.random.default_rng(seed + 999).normal(size=(3, sizes[-1]))
        assert fd_check_all_params(params, x, probe) < FD_TOL

    def test_wide_net_sampled_coordinates(self):
        params, x = screened_net((6, 256, 256, 2), ("tanh", "elu", "identity"),
                                 batch=2, first_seed=77)
        probe = np.random.default_rng(5).normal(size=(2, 2))
        assert fd_check_all_params(params, x, probe, coords=40) < FD_TOL

    def test_input_gradient_matches_finite_differences(self):
        params, x = screened_net((4, 8, 3), ("elu", "tanh"), batch=1, first_seed=11)
        probe = np.random.default_rng(1).normal(size=(1, 3))
        _, input_grad = probe_grads(params, x, probe)
        for j in range(4):
            xp, xm = x.copy(), x.copy()
            xp[0, j] += FD_H
            xm[0, j] -= FD_H
            fd = (probe_loss(params, xp, probe) - probe_loss(params, xm, probe)) / (2 * FD_H)
            g = input_grad[0, j]
            assert abs(g - fd) / max(abs(g), abs(fd), 1e-6) < FD_TOL

    def test_chain_through_stacked_networks(self):
        # composite loss probe . net2(net1(x)); gradient of net1 parameters
        # must chain through net2's input gradient
        rng = np.random.default_rng(42)
        net1, x = screened_net((3, 6, 4), ("tanh", "elu"), batch=2, first_seed=211)
        net2 = mlp_init((4, 5, 2), ("tanh", "identity"), rng)
        probe = rng.normal(size=(2, 2))

        def composite_loss(p1):
            mid, _ = forward(p1, x)
            out, _ = forward(net2, mid)
            return float(np.sum(out * probe))

        mid, cache1 = forward(net1, x)
        _, cache2 = forward(net2, mid)
        _, mid_grad = backward(net2, cache2, probe)
        grads1, _ = backward(net1, cache1, mid_grad)
        worst = 0.0
        for layer in range(net1.n_layers):
            for which, g_arr in (("w", grads1.d_weights[layer]),
                                 ("b", grads1.d_biases[layer])):
                for idx in np.ndindex(g_arr.shape):
                    plus = composite_loss(with_perturbed(net1, layer, which, idx, FD_H))
                    minus = composite_loss(with_perturbed(net1, layer, which, idx, -FD_H))
                    fd = (plus - minus) / (2 * FD_H)
                    err = abs(g_arr[idx] - fd) / max(abs(g_arr[idx]), abs(fd), 1e-6)
                    worst = max(worst, err)
        assert worst < FD_TOL

    def test_mean_loss_convention_is_prescaled(self):
        params, x = screened_net((3, 5, 2), ("tanh", "identity"), batch=4, first_seed=31)
        probe = np.random.default_rng(0).normal(size=(4, 2))
        g_sum, _ = probe_grads(params, x, probe)
        g_mean, _ = probe_grads(params, x, probe / 4.0)
        for a, b in zip(g_sum.parameter_arrays(), g_mean.parameter_arrays()):
            np.testing.assert_allclose(b, a / 4.0, rtol=1e-12)

    def test_output_gradient_shape_mismatch_raises(self):
        rng = np.random.default_rng(0)
        params = mlp_init((3, 4, 2), ("tanh", "identity"), rng)
        _, cache = forward(params, np.zeros((2, 3)))
        with pytest.raises(ValueError, match="output_gradient"):
            backward(params, cache, np.zeros((2, 3)))


class TestAdam:
    def make_bias_net(self, values):
        values = np.asarray(values, dtype=float)
        n = len(values)
        return MlpParams((1, n), (np.zeros((1, n)),), (values.copy(),),
                         ("identity",))

    def test_zero_gradient_leaves_params_and_bumps_count(self):
        params = self.make_bias_net([1.0, -2.0])
        state = adam_init(params, 1e-2)
        zero = MlpGrads((np.zeros((1, 2)),), (np.zeros(2),))
        new_params, new_state = adam_step(params, zero, state)
        np.testing.assert_array_equal(new_params.biases[0], params.biases[0])
        np.testing.assert_array_equal(new_params.weights[0], params.weights[0])
        assert new_state.step_count == 1

    def test_constant_gradient_update_approaches_lr(self):
        params = self.make_bias_net([0.0])
        lr = 1e-3
        state = adam_init(params, lr)
        g = MlpGrads((np.zeros((1, 1)),), (np.array([3.7]),))
        prev = params.biases[0][0]
        for _ in range(2000):
            params, state = adam_step(params, g, state)
        step_size = prev - params.biases[0][0]
        last = abs(params.biases[0][0])
        params2, _ = adam_step(params, g, state)
        final_delta = params.biases[0][0] - params2.biases[0][0]
        assert final_delta == pytest.approx(lr, rel=1e-2)
        assert last > 0  # moved in the descent direction overall

    def test_quadratic_bowl_reaches_small_norm(self):
        # L = 0.5 ||b||^2 with gradient b itself
        params = self.make_bias_net([1.0, -2.0, 3.0, -0.5])
        state = adam_init(params, 1e-2)
        steps = 0
        while np.linalg.norm(params.biases[0]) >= 1e-3:
            g = MlpGrads((np.zeros((1, 4)),), (params.biases[0].copy(),))
            params, state = adam_step(params, g, state)
            steps += 1
            assert steps <= 5000
        assert np.linalg.norm(params.biases[0]) < 1e-3

    def test_trajectories_are_bit_identical_across_runs(self):
        def run():
            rng = np.random.default_rng(123)
            params = mlp_init((4, 8, 2), ("tanh", "identity"), rng)
            state = adam_init(params, 1e-3)
            x = np.random.default_rng(9).normal(size=(16, 4))
            probe = np.random.default_rng(10).normal(size=(16, 2))
            for _ in range(5):
                _, cache = forward(params, x)
                grads, _ = backward(params, cache, probe / 16)
                params, state = adam_step(params, grads, state)
            return params

        a, b = run(), run()
        for pa, pb in zip(a.parameter_arrays(), b.parameter_arrays()):
            assert pa.tobytes() == pb.tobytes()

    def test_moment_finiteness_enforced(self):
        with pytest.raises(ValueError, match="finite"):
            AdamState((np.array([np.inf]),), (np.array([0.0]),), 0, 1e-3)


class TestInit:
    def test_bounds_follow_fan_in(self):
        rng = np.random.default_rng(0)
        params = mlp_init((100, 50, 10), ("tanh", "identity"), rng)
        for w, fan_in in zip(params.weights, (100, 50)):
            bound = 1.0 / np.sqrt(fan_in)
            assert np.max(np.abs(w)) <= bound
            assert np.max(np.abs(w)) > 0.5 * bound  # actually spread out

    def test_seeded_reproducibility(self):
        a = mlp_init((3, 4), ("tanh",), np.random.default_rng(7))
        b = mlp_init((3, 4), ("tanh",), np.random.default_rng(7))
        assert a.weights[0].tobytes() == b.weights[0].tobytes()


class TestFiniteGuard:
    def test_names_offending_layer(self):
        rng = np.random.default_rng(0)
        params = mlp_init((3, 4, 2), ("tanh", "identity"), rng)
        weights = list(params.weights)
        broken = weights[1].copy()
        broken[0, 0] = np.nan
        with pytest.raises(ValueError, match="non-finite"):
            MlpParams(params.layer_sizes, (weights[0], broken), params.biases,
                      params.activations)
        assert_finite(params)  # healthy net passes


class TestCheckpoint:
    def test_round_trip_bit_identical(self, tmp_path):
        rng = np.random.default_rng(21)
        params = mlp_init((5, 16, 3), ("elu", "identity"), rng)
        path = tmp_path / "net.axrl"
        save_mlp(path, params)
        clone = load_mlp(path)
        assert clone.layer_sizes == params.layer_sizes
        assert clone.activations == params.activations
        for a, b in zip(params.parameter_arrays(), clone.parameter_arrays()):
            assert a.tobytes() == b.tobytes()

    def test_float32_values_survive_round_trip(self, tmp_path):
        rng = np.random.default_rng(2)
        params = mlp_init((3, 8, 2), ("tanh", "identity"), rng, dtype=np.float32)
        path = tmp_path / "net32.axrl"
        save_mlp(path, params)
        clone = load_mlp(path, dtype=np.float32)
        assert clone.dtype == np.float32
        for a, b in zip(params.parameter_arrays(), clone.parameter_arrays()):
            np.testing.assert_array_equal(a, b)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.axrl"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(ValueError, match="magic"):
            load_mlp(path)

    def test_truncated_payload_rejected(self, tmp_path):
        rng = np.random.default_rng(1)
        params = mlp_init((3, 4), ("tanh",), rng)
        path = tmp_path / "net.axrl"
        save_mlp(path, params)
        blob = path.read_bytes()
        path.write_bytes(blob[:-8])
        with pytest.raises(ValueError, match="length"):
            load_mlp(path)

    def test_unknown_activation_tag_rejected(self, tmp_path):
        rng = np.random.default_rng(1)
        params = mlp_init((3, 4), ("tanh",), rng)
        path = tmp_path / "net.axrl"
        save_mlp(path, params)
        blob = bytearray(path.read_bytes())
        blob[4 + 4 + 4 + 8] = 250  # single activation tag byte
        path.write_bytes(bytes(blob))
        with pytest.raises(ValueError, match="activation"):
            load_mlp(path)


class TestGaussianSample:
    def test_sample_reproducible_from_stored_noise(self):
        rng = np.random.default_rng(0)
        s = draw_gaussian(np.array([1.0, 2.0]), np.array([0.5, 2.0]), rng)
        first = s.sample()
        np.testing.assert_array_equal(first, s.sample())
        np.testing.assert_array_equal(first, s.mean + s.std * s.noise)

    def test_rejects_nonpositive_std(self):
        with pytest.raises(ValueError, match="positive"):
            GaussianSample(np.zeros(2), np.array([0.1, 0.0]), np.zeros(2))
