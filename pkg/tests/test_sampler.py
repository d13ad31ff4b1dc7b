import numpy as np
import pytest
from numpy.testing import assert_allclose

from services.exceptions import ConfigurationError, DivergenceError, ParameterError, ShapeError
from services.geometry import Block, Mode, PathParams, VariantLine, sample_target
from services.sampler import OracleField, SamplerConfig, calibrate_blocks, euler_sample, vcs_calibrate
from services.tasks import task_spectrogram_patch


class ConstantField:
    def __init__(self, c):
        self.c = np.asarray(c, dtype=float)

    def predict(self, x_t, t, cond=None):
        return np.broadcast_to(self.c, np.shape(x_t)).copy()


class DecayField:
    def predict(self, x_t, t, cond=None):
        return -np.asarray(x_t)


class TestVcs:
    def test_orthogonal_vector_unchanged(self):
        v, flagged = vcs_calibrate(np.array([0.0, 2.0]), VariantLine([1.0, 0.0], [0.0, 0.0]))
        assert_allclose(v, [0.0, 2.0])
        assert not flagged

    def test_rejection_rescaled(self):
        v, _ = vcs_calibrate(np.array([3.0, 4.0]), VariantLine([1.0, 0.0], [0.0, 0.0]))
        assert_allclose(v, [0.0, 5.0])

    def test_parallel_vector_hits_guard(self):
        v = np.array([2.0, 4.0])
        out, flagged = vcs_calibrate(v, VariantLine([1.0, 2.0], [0.0, 0.0]))
        assert_allclose(out, v)
        assert flagged

    def test_zero_direction(self):
        with pytest.raises(ConfigurationError):
            vcs_calibrate(np.ones(2), VariantLine.degenerate(np.ones(2)))

    def test_norm_orthogonality_idempotence(self, rng):
        a = rng.standard_normal(16)
        line = VariantLine(a, np.zeros(16))
        v = rng.standard_normal((200, 16))
        out, flagged = vcs_calibrate(v, line)
        assert not flagged.any()
        assert_allclose(np.linalg.norm(out, axis=1), np.linalg.norm(v, axis=1), rtol=1e-10)
        assert np.all(np.abs(out @ a) < 1e-10 * np.linalg.norm(a) * np.linalg.norm(v, axis=1))
        assert_allclose(vcs_calibrate(out, line)[0], out, rtol=1e-10, atol=1e-12)


class TestCalibrateBlocks:
    def test_single_block_matches_vcs(self, rng):
        line = VariantLine(rng.standard_normal(4), np.zeros(4))
        v = rng.standard_normal(4)
        out, _ = calibrate_blocks(v, [line], [Block('all', 0, 4)])
        assert_allclose(out, vcs_calibrate(v, line)[0])

    def test_uncalibrated_block_passes_through(self, rng):
        layout = [Block('first', 0, 3), Block('second', 3, 5)]
        v = rng.standard_normal(5)
        out, _ = calibrate_blocks(v, [VariantLine(np.ones(3), np.zeros(3)), None], layout)
        assert_allclose(out[3:], v[3:])
        assert abs(out[:3].sum()) < 1e-12

    def test_spectrogram_layout_keeps_block_norms(self, rng):
        task = task_spectrogram_patch()
        batch = task.sample(5, rng)
        v = rng.standard_normal((5, task.dim))
        out, _ = calibrate_blocks(v, batch.lines, task.layout)
        for block in task.layout:
            assert_allclose(np.linalg.norm(out[:, block.slice], axis=1), np.linalg.norm(v[:, block.slice], axis=1),
                            rtol=1e-10)

    def test_layout_mismatch(self, rng):
        with pytest.raises(ShapeError):
            calibrate_blocks(rng.standard_normal(4), [VariantLine(np.ones(2), np.zeros(2))],
                             [Block('a', 0, 2), Block('b', 2, 4)])
        with pytest.raises(ShapeError):
            calibrate_blocks(rng.standard_normal(5), [VariantLine(np.ones(4), np.zeros(4))], [Block('a', 0, 4)])


class TestSamplerConfig:
    def test_steps_positive(self):
        with pytest.raises(ParameterError):
            SamplerConfig(steps=0)

    def test_vcs_needs_lines(self):
        with pytest.raises(ConfigurationError):
            SamplerConfig(vcs_enabled=True)
        with pytest.raises(ConfigurationError):
            SamplerConfig(vcs_enabled=True, lines=[VariantLine.degenerate(np.ones(2))])


class TestEuler:
    def test_zero_field(self, rng):
        x0 = rng.standard_normal((3, 2))
        result = euler_sample(ConstantField([0.0, 0.0]), x0, SamplerConfig(steps=4))
        assert_allclose(result.x1, x0)
        assert len(result.trajectory) == 5

    def test_constant_field(self, rng):
        x0 = rng.standard_normal(2)
        result = euler_sample(ConstantField([1.5, -2.0]), x0, SamplerConfig(steps=6))
        assert_allclose(result.x1, x0 + np.array([1.5, -2.0]), rtol=1e-12)

    @pytest.mark.parametrize('steps', [1, 6, 100])
    def test_linear_decay(self, rng, steps):
        x0 = rng.standard_normal(3)
        result = euler_sample(DecayField(), x0, SamplerConfig(steps=steps))
        assert_allclose(result.x1, (1.0 - 1.0 / steps) ** steps * x0, rtol=1e-12, atol=1e-15)

    def test_many_steps_approach_exponential(self, rng):
        x0 = rng.standard_normal(3)
        result = euler_sample(DecayField(), x0, SamplerConfig(steps=10_000))
        assert_allclose(result.x1, np.exp(-1.0) * x0, rtol=1e-4)

    def test_non_finite_state(self):
        with pytest.raises(DivergenceError, match='step 1'):
            euler_sample(ConstantField([np.inf]), np.zeros(1), SamplerConfig(steps=3))

    def test_vcs_counts_guard_steps(self):
        line = VariantLine([1.0, 0.0], [0.0, 0.0])
        cfg = SamplerConfig(steps=3, vcs_enabled=True, lines=[line])
        result = euler_sample(ConstantField([1.0, 0.0]), np.zeros(2), cfg)
        assert result.degenerate_steps == 3
        assert_allclose(result.x1, [1.0, 0.0])

    def test_vcs_on_constant_field(self):
        line = VariantLine([1.0, 0.0], [0.0, 0.0])
        cfg = SamplerConfig(steps=2, vcs_enabled=True, lines=[line])
        result = euler_sample(ConstantField([3.0, 4.0]), np.zeros(2), cfg)
        assert_allclose(result.x1, [0.0, 5.0])


class TestOracleField:
    @pytest.mark.parametrize('steps', [1, 6])
    def test_lp_oracle_lands_on_target(self, rng, steps):
        n, d = 50, 4
        line = VariantLine(rng.standard_normal((n, d)), rng.standard_normal((n, d)))
        x0 = rng.standard_normal((n, d))
        oracle = OracleField([line], [Block('all', 0, d)], PathParams(mode=Mode.LP, lam=0.05))
        result = euler_sample(oracle, x0, SamplerConfig(steps=steps))
        assert_allclose(result.x1, sample_target(line, 0.05, x0), rtol=1e-9, atol=1e-10)

    @pytest.mark.parametrize('steps', [1, 6])
    def test_ot_oracle_lands_on_target(self, rng, steps):
        n, d = 50, 4
        line = VariantLine(rng.standard_normal((n, d)), rng.standard_normal((n, d)))
        x0 = rng.standard_normal((n, d))
        oracle = OracleField([line], [Block('all', 0, d)], PathParams(mode=Mode.OT, sigma_min=0.05))
        result = euler_sample(oracle, x0, SamplerConfig(steps=steps))
        assert_allclose(result.x1, line.offset + 0.05 * x0, rtol=1e-9, atol=1e-10)

    def test_lp_oracle_is_unchanged_by_vcs(self, rng):
        n, d = 50, 4
        line = VariantLine(rng.standard_normal((n, d)), rng.standard_normal((n, d)))
        x0 = rng.standard_normal((n, d))
        oracle = OracleField([line], [Block('all', 0, d)], PathParams(mode=Mode.LP, lam=0.05))
        plain = euler_sample(oracle, x0, SamplerConfig(steps=6))
        calibrated = euler_sample(oracle, x0, SamplerConfig(steps=6, vcs_enabled=True, lines=[line]))
        assert_allclose(calibrated.x1, plain.x1, rtol=1e-9, atol=1e-10)
