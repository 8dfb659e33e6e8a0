"""Network substrate: forward/backward gradients against finite
differences, Adam, Polyak averaging, and checkpoint round trips."""

import numpy as np
import pytest

from quadrl.neural import (
    AdamState,
    Head,
    Mlp,
    adam_step,
    clip_global_norm,
    load_checkpoint,
    polyak,
    save_checkpoint,
)

HEAD_SETS = {
    "linear": [Head("linear", 2)],
    "tanh": [Head("tanh", 2)],
    "sigmoid": [Head("sigmoid", 2, lo=-9.0, hi=2.0)],
    "mixed": [Head("tanh", 1, init_scale=0.01), Head("sigmoid", 1, lo=-9.0, hi=2.0)],
}


def scalar_loss(net, x, weights):
    out, cache = net.forward(x)
    return float(np.sum(out * weights)), cache, out


class TestForward:
    def test_single_linear_layer_by_hand(self):
        net = Mlp([3, 2], rng=np.random.default_rng(0))
        net.weights[0] = np.array([[1.0, 0.0], [0.0, 1.0], [2.0, -1.0]])
        net.biases[0] = np.array([0.5, -0.5])
        out, _ = net.forward(np.array([1.0, 2.0, 3.0]))
        assert np.allclose(out[0], [1 + 6 + 0.5, 2 - 3 - 0.5], atol=1e-15)

    def test_relu_hidden(self):
        net = Mlp([1, 2, 1], rng=np.random.default_rng(0))
        net.weights[0] = np.array([[1.0, -1.0]])
        net.biases[0] = np.zeros(2)
        net.weights[1] = np.array([[1.0], [1.0]])
        net.biases[1] = np.zeros(1)
        out, _ = net.forward(np.array([2.0]))
        assert out[0, 0] == 2.0  # negative branch clipped by ReLU

    def test_deterministic(self):
        net = Mlp([4, 8, 3], rng=np.random.default_rng(1))
        x = np.random.default_rng(2).normal(size=(5, 4))
        a, _ = net.forward(x)
        b, _ = net.forward(x)
        assert np.array_equal(a, b)

    def test_head_size_validation(self):
        with pytest.raises(ValueError):
            Mlp([3, 4], heads=[Head("linear", 2)])


class TestGradients:
    @pytest.mark.parametrize("kind", list(HEAD_SETS))
    def test_parameter_gradients_match_finite_differences(self, kind):
        rng = np.random.default_rng(10)
        net = Mlp([3, 8, 8, 2], heads=HEAD_SETS[kind], rng=rng)
        x = rng.normal(size=(4, 3))
        w = rng.normal(size=(4, 2))
        loss, cache, out = scalar_loss(net, x, w)
        grads, _ = net.backward(cache, w)
        h = 1e-5
        for p, g in zip(net.params, grads):
            flat_p = p.ravel()
            flat_g = g.ravel()
            for idx in range(flat_p.size):
                orig = flat_p[idx]
                flat_p[idx] = orig + h
                up, _, _ = scalar_loss(net, x, w)
                flat_p[idx] = orig - h
                down, _, _ = scalar_loss(net, x, w)
                flat_p[idx] = orig
                fd = (up - down) / (2 * h)
                denom = max(abs(fd), abs(flat_g[idx]), 1e-8)
                assert abs(flat_g[idx] - fd) / denom < 1e-4

    def test_input_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        net = Mlp([3, 8, 8, 2], heads=HEAD_SETS["mixed"], rng=rng)
        x = rng.normal(size=(2, 3))
        w = rng.normal(size=(2, 2))
        _, cache, _ = scalar_loss(net, x, w)
        _, grad_in = net.backward(cache, w)
        h = 1e-6
        for i in range(x.shape[0]):
            for j in range(x.shape[1]):
                orig = x[i, j]
                x[i, j] = orig + h
                up, _, _ = scalar_loss(net, x, w)
                x[i, j] = orig - h
                down, _, _ = scalar_loss(net, x, w)
                x[i, j] = orig
                fd = (up - down) / (2 * h)
                assert grad_in[i, j] == pytest.approx(fd, rel=1e-4, abs=1e-7)

    def test_zero_output_gradient_gives_zero_param_gradients(self):
        net = Mlp([3, 6, 2], rng=np.random.default_rng(12))
        x = np.random.default_rng(13).normal(size=(3, 3))
        _, cache = net.forward(x)
        grads, grad_in = net.backward(cache, np.zeros((3, 2)))
        assert all(np.count_nonzero(g) == 0 for g in grads)
        assert np.count_nonzero(grad_in) == 0


class TestAdam:
    def test_zero_gradient_no_update(self):
        net = Mlp([2, 3], rng=np.random.default_rng(0))
        before = [p.copy() for p in net.params]
        state = AdamState(net.params, lr=0.1)
        adam_step(state, net.params, [np.zeros_like(p) for p in net.params])
        assert all(np.array_equal(a, b) for a, b in zip(before, net.params))

    def test_first_step_magnitude_is_learning_rate(self):
        params = [np.array([1.0, -2.0, 3.0])]
        state = AdamState(params, lr=0.01)
        grads = [np.array([0.5, -0.25, 4.0])]
        before = params[0].copy()
        adam_step(state, params, grads)
        step = before - params[0]
        # bias-corrected first step: lr * g / (|g| + eps) ~ lr * sign(g)
        assert np.allclose(np.abs(step), 0.01, atol=1e-6)
        assert np.array_equal(np.sign(step), np.sign(grads[0]))

    def test_quadratic_bowl_converges_monotonically(self):
        params = [np.full(5, 3.0)]
        state = AdamState(params, lr=0.05)
        losses = []
        for _ in range(500):
            grads = [2.0 * params[0]]
            losses.append(float(np.sum(params[0] ** 2)))
            adam_step(state, params, grads)
        losses.append(float(np.sum(params[0] ** 2)))
        # monotone after warm-up until the numerical floor, then tiny
        warmup = 10
        floor = next(i for i, v in enumerate(losses) if v < 1e-6)
        diffs = np.diff(losses[warmup:floor])
        assert (diffs < 0.0).all()
        assert losses[-1] < 1e-12


class TestPolyak:
    def test_identity_when_equal(self):
        t = [np.array([1.0, 2.0])]
        s = [np.array([1.0, 2.0])]
        polyak(t, s, 0.005)
        assert np.allclose(t[0], [1.0, 2.0], atol=1e-15)

    def test_single_step_value(self):
        t = [np.zeros(1)]
        polyak(t, [np.ones(1)], 0.005)
        assert t[0][0] == pytest.approx(0.005, rel=1e-12)

    def test_geometric_series(self):
        t = [np.zeros(1)]
        s = [np.ones(1)]
        for k in range(1, 200):
            polyak(t, s, 0.005)
            assert t[0][0] == pytest.approx(1.0 - 0.995**k, rel=1e-9)


class TestClip:
    def test_below_norm_untouched(self):
        grads = [np.array([1.0, 2.0]), np.array([2.0])]
        before = [g.copy() for g in grads]
        clip_global_norm(grads, 10.0)
        assert all(np.array_equal(a, b) for a, b in zip(grads, before))

    def test_scales_to_max_norm(self):
        grads = [np.array([30.0, 40.0])]
        clip_global_norm(grads, 10.0)
        assert np.linalg.norm(grads[0]) == pytest.approx(10.0, rel=1e-12)


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(5)
        actor = Mlp([4, 16, 6], heads=[Head("tanh", 3), Head("sigmoid", 3, -9, 2)], rng=rng)
        critic = Mlp([7, 16, 1], rng=rng)
        opt = AdamState(critic.params, lr=3e-4)
        adam_step(opt, critic.params, [rng.normal(size=p.shape) for p in critic.params])
        scalars = {"ln_tau": -0.123456789, "env_steps": 777}
        path = tmp_path / "ck.bin"
        save_checkpoint(path, {"actor": actor, "critic": critic}, {"critic": opt},
                        scalars, {"note": "round-trip"})
        nets, opts, sc, meta = load_checkpoint(path)
        for name, net in (("actor", actor), ("critic", critic)):
            for a, b in zip(nets[name].params, net.params):
                assert np.array_equal(a, b)
        assert nets["actor"].heads == actor.heads
        for a, b in zip(opts["critic"].m, opt.m):
            assert np.array_equal(a, b)
        for a, b in zip(opts["critic"].v, opt.v):
            assert np.array_equal(a, b)
        assert opts["critic"].step_count == opt.step_count
        assert sc == scalars
        assert meta == {"note": "round-trip"}

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"not a checkpoint at all")
        with pytest.raises(ValueError):
            load_checkpoint(path)
