import numpy as np
import pytest
from numpy.testing import assert_allclose

from services.exceptions import DivergenceError, InputError, ParameterError, ShapeError
from services.net import (
    CHECKPOINT_MAGIC, AdamState, GradientSet, VectorFieldModel, adam_step, backward, embed_time, forward,
    forward_cached, gradient_check, init_model, load_checkpoint, save_checkpoint, sgd_step,
)


def linear_model(weights: np.ndarray, bias: np.ndarray, flow_dim: int, cond_dim: int = 0) -> VectorFieldModel:
    return VectorFieldModel([weights.shape[1], weights.shape[0]], [weights], [bias], flow_dim, cond_dim, 1)


def reference_forward(model: VectorFieldModel, x, t, cond=None) -> np.ndarray:
    """Row-by-row evaluation with explicit loops."""
    out = []
    for i, row in enumerate(np.atleast_2d(x)):
        a = list(row) + list(embed_time(np.atleast_1d(t)[i if np.ndim(t) else 0], model.time_embedding_width))
        if cond is not None:
            a += list(np.atleast_2d(cond)[i])
        for layer, (w, b) in enumerate(zip(model.weights, model.biases)):
            z = [sum(w[j, k] * a[k] for k in range(len(a))) + b[j] for j in range(w.shape[0])]
            a = z if layer == len(model.weights) - 1 else [np.tanh(v) for v in z]
        out.append(a)
    return np.array(out)


class TestTimeEmbedding:
    def test_zero_time(self):
        assert_allclose(embed_time(0.0, 4), [0.0, 0.0, 1.0, 1.0])

    def test_quarter_time(self):
        assert_allclose(embed_time(0.25, 2), [1.0, 0.0], atol=1e-15)

    def test_raw_time(self):
        assert_allclose(embed_time(0.7, 1), [0.7])

    @pytest.mark.parametrize('width', [0, 3, -2])
    def test_invalid_width(self, width):
        with pytest.raises(ParameterError):
            embed_time(0.5, width)


class TestForward:
    def test_zero_weights(self, rng):
        model = init_model(3, 2, hidden=(5, 5), rng=rng)
        for p in model.parameters():
            p[...] = 0.0
        assert_allclose(forward(model, rng.standard_normal((4, 3)), 0.3, rng.standard_normal((4, 2))), 0.0)

    def test_identity_model(self, rng):
        weights = np.hstack([np.eye(3), np.zeros((3, 1))])
        model = linear_model(weights, np.zeros(3), flow_dim=3)
        x = rng.standard_normal((5, 3))
        assert_allclose(forward(model, x, 0.4), x)

    def test_matches_reference(self, rng):
        model = init_model(3, 2, hidden=(4, 5), time_embedding_width=2, rng=rng)
        for b in model.biases:
            b[:] = rng.normal(size=b.shape)
        x, cond, t = rng.standard_normal((3, 3)), rng.standard_normal((3, 2)), rng.uniform(size=3)
        assert_allclose(forward(model, x, t, cond), reference_forward(model, x, t, cond), rtol=1e-12, atol=1e-14)

    def test_single_vector(self, rng):
        model = init_model(2, 0, hidden=(4,), rng=rng)
        x = rng.standard_normal(2)
        assert forward(model, x, 0.1).shape == (2,)
        assert_allclose(forward(model, x, 0.1), forward(model, x[None], 0.1)[0])

    def test_width_mismatch(self, rng):
        model = init_model(2, 1, hidden=(4,), rng=rng)
        with pytest.raises(ShapeError):
            forward(model, np.zeros((1, 3)), 0.0, np.zeros((1, 1)))
        with pytest.raises(ShapeError):
            forward(model, np.zeros((1, 2)), 0.0, np.zeros((1, 2)))
        with pytest.raises(ShapeError):
            forward(model, np.zeros((1, 2)), 0.0, None)

    def test_linear_without_nonlinearity(self, rng):
        model = init_model(3, 1, hidden=(6, 6), rng=rng, activation='identity')
        inputs = rng.standard_normal((4, model.input_width))
        assert_allclose(forward_cached(model, 2.5 * inputs)[-1], 2.5 * forward_cached(model, inputs)[-1], rtol=1e-12)

    def test_glorot_bounds(self):
        model = init_model(2, 3, hidden=(64, 64), rng=np.random.default_rng(0))
        assert model.layer_sizes == [6, 64, 64, 2]
        for w in model.weights:
            fan_out, fan_in = w.shape
            assert np.max(np.abs(w)) <= np.sqrt(6.0 / (fan_in + fan_out))
        assert all(np.all(b == 0) for b in model.biases)

    def test_bad_layer_sizes(self):
        with pytest.raises(ShapeError):
            VectorFieldModel([5, 2], [np.zeros((2, 5))], [np.zeros(2)], flow_dim=2, cond_dim=0)


class TestBackward:
    def test_zero_loss_gradient(self, rng):
        model = init_model(3, 0, hidden=(5,), rng=rng)
        grads = backward(model, rng.standard_normal((4, 3)), 0.5, None, np.zeros((4, 3)))
        assert all(np.all(g == 0) for g in grads.arrays())
        assert [g.shape for g in grads.arrays()] == [p.shape for p in model.parameters()]

    def test_linear_regression_closed_form(self, rng):
        weights = rng.standard_normal((2, 3))
        model = linear_model(weights, np.zeros(2), flow_dim=2)
        x, u, t = rng.standard_normal((6, 2)), rng.standard_normal((6, 2)), 0.3
        z = np.hstack([x, np.full((6, 1), t)])
        residual = z @ weights.T - u
        grads = backward(model, x, t, None, 2.0 * residual / residual.size)
        assert_allclose(grads.weights[0], 2.0 * residual.T @ z / residual.size, rtol=1e-12)
        assert_allclose(grads.biases[0], 2.0 * residual.sum(axis=0) / residual.size, rtol=1e-12)

    def test_small_model_finite_differences(self, rng):
        model = init_model(3, 0, hidden=(5,), rng=rng)
        x, t, target = rng.standard_normal((4, 3)), rng.uniform(size=4), rng.standard_normal((4, 3))
        assert gradient_check(model, x, t, None, target) < 1e-5

    def test_gradient_check_restores_model(self, rng):
        model = init_model(2, 1, hidden=(3,), rng=rng)
        before = model.copy()
        gradient_check(model, rng.standard_normal((2, 2)), 0.5, rng.standard_normal((2, 1)), np.zeros((2, 2)))
        for p, q in zip(model.parameters(), before.parameters()):
            assert np.array_equal(p, q)

    def test_deterministic(self, rng):
        model = init_model(3, 0, hidden=(5,), rng=rng)
        x, g = rng.standard_normal((4, 3)), rng.standard_normal((4, 3))
        first, second = backward(model, x, 0.2, None, g), backward(model, x, 0.2, None, g)
        assert all(np.array_equal(a, b) for a, b in zip(first.arrays(), second.arrays()))


def scalar_model(w: float) -> VectorFieldModel:
    """A single weight on x with time and bias wired to zero."""
    return linear_model(np.array([[w, 0.0]]), np.zeros(1), flow_dim=1)


def scalar_grads(g: float) -> GradientSet:
    return GradientSet([np.array([[g, 0.0]])], [np.zeros(1)])


class TestOptimizers:
    def test_zero_gradient_keeps_parameters(self, rng):
        model = init_model(3, 0, hidden=(5,), rng=rng)
        before = model.copy()
        zeros = GradientSet([np.zeros_like(w) for w in model.weights], [np.zeros_like(b) for b in model.biases])
        adam_step(model, zeros, AdamState.zeros_like(model), 1, lr=0.1)
        for p, q in zip(model.parameters(), before.parameters()):
            assert np.array_equal(p, q)

    def test_first_step_moves_by_lr(self):
        model = scalar_model(1.0)
        adam_step(model, scalar_grads(1.0), AdamState.zeros_like(model), 1, lr=0.01)
        assert model.weights[0][0, 0] == pytest.approx(0.99, abs=1e-9)

    def test_matches_scalar_simulation(self):
        model = scalar_model(1.0)
        state = AdamState.zeros_like(model)
        w, m, v = 1.0, 0.0, 0.0
        for k in range(1, 101):
            g = 2.0 * w
            adam_step(model, scalar_grads(2.0 * model.weights[0][0, 0]), state, k, lr=0.1)
            m = 0.9 * m + (1 - 0.9) * g
            v = 0.99 * v + (1 - 0.99) * g * g
            w -= 0.1 * (m / (1 - 0.9 ** k)) / (np.sqrt(v / (1 - 0.99 ** k)) + 1e-8)
        assert model.weights[0][0, 0] == pytest.approx(w, rel=1e-9, abs=1e-12)
        assert abs(w) < 1.0

    def test_non_finite_gradient(self, rng):
        model = scalar_model(1.0)
        with pytest.raises(DivergenceError):
            adam_step(model, scalar_grads(np.inf), AdamState.zeros_like(model), 1, lr=0.1)
        with pytest.raises(DivergenceError):
            sgd_step(model, scalar_grads(np.nan), lr=0.1)

    def test_shape_mismatch(self, rng):
        model = init_model(2, 0, hidden=(3,), rng=rng)
        with pytest.raises(ShapeError):
            sgd_step(model, scalar_grads(1.0), lr=0.1)

    def test_sgd_step(self):
        model = scalar_model(1.0)
        sgd_step(model, scalar_grads(2.0), lr=0.25)
        assert model.weights[0][0, 0] == pytest.approx(0.5)


class TestCheckpoint:
    def test_round_trip(self, tmp_path, rng):
        model = init_model(3, 2, hidden=(4, 5), time_embedding_width=4, rng=rng)
        path = save_checkpoint(model, tmp_path / 'model.ckpt')
        loaded = load_checkpoint(path)
        assert loaded.layer_sizes == model.layer_sizes
        assert (loaded.flow_dim, loaded.cond_dim, loaded.time_embedding_width) == (3, 2, 4)
        for p, q in zip(loaded.parameters(), model.parameters()):
            assert np.array_equal(p, q)

    def test_layout(self, tmp_path, rng):
        model = init_model(2, 0, hidden=(3,), rng=rng)
        raw = save_checkpoint(model, tmp_path / 'model.ckpt').read_bytes()
        assert raw.startswith(CHECKPOINT_MAGIC)
        header = np.frombuffer(raw, dtype='<u4', count=6, offset=len(CHECKPOINT_MAGIC))
        assert header.tolist() == [1, 3, 2, 0, 1, 0]
        assert len(raw) == len(CHECKPOINT_MAGIC) + 4 * 9 + 8 * (3 * 3 + 3 + 2 * 3 + 2)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / 'bad.ckpt'
        path.write_bytes(b'NOTAMODEL' + bytes(40))
        with pytest.raises(InputError):
            load_checkpoint(path)

    def test_truncated(self, tmp_path, rng):
        raw = save_checkpoint(init_model(2, 0, hidden=(3,), rng=rng), tmp_path / 'model.ckpt').read_bytes()
        (tmp_path / 'short.ckpt').write_bytes(raw[:-8])
        with pytest.raises(InputError):
            load_checkpoint(tmp_path / 'short.ckpt')
        (tmp_path / 'long.ckpt').write_bytes(raw + bytes(8))
        with pytest.raises(InputError):
            load_checkpoint(tmp_path / 'long.ckpt')

    def test_unknown_version(self, tmp_path, rng):
        raw = bytearray(save_checkpoint(init_model(2, 0, hidden=(3,), rng=rng), tmp_path / 'model.ckpt').read_bytes())
        raw[len(CHECKPOINT_MAGIC)] = 2
        (tmp_path / 'v2.ckpt').write_bytes(bytes(raw))
        with pytest.raises(InputError):
            load_checkpoint(tmp_path / 'v2.ckpt')

    def test_non_finite_weights(self, tmp_path, rng):
        model = init_model(2, 0, hidden=(3,), rng=rng)
        model.weights[0][0, 0] = np.nan
        path = save_checkpoint(model, tmp_path / 'nan.ckpt')
        with pytest.raises(InputError, match='non-finite'):
            load_checkpoint(path)
