"""Property suites run by the `verify` and `gradcheck` commands.

Each check reports the worst value it saw next to its threshold. Checks with
no threshold are measurements and always pass.
"""
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from services.geometry import (
    VariantLine, closed_form_velocity, conditional_velocity, ot_target_and_velocity, path_point, project,
    reject, sample_target, target_mean,
)
from services.logging import logger
from services.net import VectorFieldModel, gradient_check, init_model
from services.signal import (
    MAG_FLOOR, StftConfig, dft, idft, istft, measure_stft_shift, peak_normalize, read_wav, stft,
    synthetic_tones, verify_scaling, verify_shifting,
)


@dataclass(frozen=True)
class CheckResult:
    name: str
    value: float
    threshold: Optional[float] = None
    passed: bool = True

    @classmethod
    def below(cls, name: str, value: float, threshold: float) -> 'CheckResult':
        value = float(value)
        result = cls(name, value, threshold, bool(np.isfinite(value) and value < threshold))
        log = logger.info if result.passed else logger.warning
        log('%s: %.3g (threshold %.3g) %s', name, value, threshold, 'ok' if result.passed else 'FAILED')
        return result


def _rows_norm(v: np.ndarray) -> np.ndarray:
    return np.linalg.norm(v, axis=-1)


def _worst_relative(diff: np.ndarray, scale: np.ndarray) -> float:
    return float(np.max(_rows_norm(diff) / np.maximum(_rows_norm(scale), np.finfo(float).tiny)))


# ------------------ Geometry ------------------

def geometry_invariants(d: int, cases: int, rng: np.random.Generator) -> List[CheckResult]:
    a = rng.standard_normal((cases, d))
    v = rng.standard_normal((cases, d))
    b = rng.standard_normal((cases, d))
    x0 = rng.standard_normal((cases, d))
    lam = rng.uniform(0.01, 1.0, size=(cases, 1))
    c = rng.uniform(0.1, 10.0, size=(cases, 1)) * rng.choice([-1.0, 1.0], size=(cases, 1))
    line = VariantLine(a, b)

    pv = project(line, v)
    u = np.concatenate([conditional_velocity(line.select(slice(i, i + 1)), float(lam[i, 0]), x0[i:i + 1])
                        for i in range(cases)])
    closed = np.concatenate([closed_form_velocity(line.select(slice(i, i + 1)), float(lam[i, 0]), x0[i:i + 1])
                             for i in range(cases)])
    orthogonality = np.abs(np.sum(a * u, axis=-1)) / (_rows_norm(a) * _rows_norm(u))
    return [
        CheckResult.below(f'idempotence d={d}', _worst_relative(project(line, pv) - pv, v), 1e-12),
        CheckResult.below(f'annihilation d={d}', _worst_relative(reject(line, a), a), 1e-12),
        CheckResult.below(f'split sums back d={d}', _worst_relative(pv + reject(line, v) - v, v), 1e-12),
        CheckResult.below(f'direction scale invariance d={d}',
                          _worst_relative(project(VariantLine(c * a, b), v) - pv, v), 1e-12),
        CheckResult.below(f'velocity orthogonality d={d}', float(np.max(orthogonality)), 1e-10),
        CheckResult.below(f'closed-form velocity d={d}', _worst_relative(u - closed, u), 1e-12),
    ]


def ot_reduction(cases: int, rng: np.random.Generator, d: int = 8) -> List[CheckResult]:
    """LP formulas with P = 0, b = x₁, λ = σ_min against the OT-CFM closed forms."""
    x1 = rng.standard_normal((cases, d))
    x0 = rng.standard_normal((cases, d))
    sigma = rng.uniform(0.0, 0.1, size=(cases, 1))
    t = rng.uniform(0.0, 1.0, size=cases)
    endpoint, velocity = ot_target_and_velocity(x1, sigma, x0)
    projected = np.zeros_like(x1)
    lp_endpoint = x1 - projected + (sigma * x0 + (1.0 - sigma) * projected)
    lp_point = path_point(x0, lp_endpoint, t)
    ot_point = (1.0 - (1.0 - sigma) * t[:, None]) * x0 + t[:, None] * x1
    return [
        CheckResult.below('OT reduction endpoint', _worst_relative(lp_endpoint - endpoint, endpoint), 1e-14),
        CheckResult.below('OT reduction velocity', _worst_relative((lp_endpoint - x0) - velocity, velocity), 1e-14),
        CheckResult.below('OT reduction path point', _worst_relative(lp_point - ot_point, ot_point), 1e-14),
    ]


def target_moments(lam: float, rng: np.random.Generator, d: int = 16, draws: int = 100_000) -> List[CheckResult]:
    """Monte Carlo moments of the elongated Gaussian N(b − Pb, MMᵀ)."""
    line = VariantLine(rng.standard_normal(d), rng.standard_normal(d))
    x = sample_target(line, lam, rng.standard_normal((draws, d)))
    mean = target_mean(line)
    standard_error = x.std(axis=0, ddof=1) / np.sqrt(draws)
    z = np.abs(x.mean(axis=0) - mean) / standard_error
    unit = line.direction / np.linalg.norm(line.direction)
    parallel_var = float(np.var(x @ unit, ddof=1))
    residual = reject(line, x - line.offset)
    orthogonal_std = float(np.sqrt(np.mean(np.sum(residual ** 2, axis=-1)) / (d - 1)))
    if lam < 1e-3:
        return [CheckResult.below(f'orthogonal residual lambda={lam:g}', orthogonal_std, 1e-3)]
    return [
        CheckResult.below(f'target mean z-score lambda={lam:g}', float(z.max()), 4.0),
        CheckResult.below(f'parallel variance error lambda={lam:g}', abs(parallel_var - 1.0), 0.05),
        CheckResult.below(f'orthogonal std error lambda={lam:g}', abs(orthogonal_std / lam - 1.0), 0.05),
    ]


def geometry_suite(cases: int = 1000, dims: Sequence[int] = (2, 8, 1024), seed: int = 0,
                   draws: int = 100_000) -> List[CheckResult]:
    rng = np.random.default_rng(seed)
    results: List[CheckResult] = []
    for d in dims:
        results.extend(geometry_invariants(d, cases, rng))
    results.extend(ot_reduction(cases, rng))
    for lam in (0.5, 0.1, 1e-4):
        results.extend(target_moments(lam, rng, draws=draws))
    return results


# ------------------ Signal ------------------

def naive_dft(frame: np.ndarray) -> np.ndarray:
    n = frame.shape[-1]
    k = np.arange(n // 2 + 1)[:, None]
    return np.exp(-2j * np.pi * k * np.arange(n) / n) @ frame


def parseval_error(frame: np.ndarray) -> float:
    n = frame.shape[-1]
    spectrum = np.abs(dft(frame)) ** 2
    energy = (spectrum[0] + 2.0 * spectrum[1:-1].sum() + spectrum[-1]) / n
    return abs(energy - np.sum(frame ** 2)) / np.sum(frame ** 2)


def signal_suite(seed: int = 0, wav: Optional[Path] = None) -> List[CheckResult]:
    rng = np.random.default_rng(seed)
    results: List[CheckResult] = []
    for n in (16, 64):
        frame = rng.standard_normal(n)
        results.append(CheckResult.below(f'dft vs naive N={n}', float(np.max(np.abs(dft(frame) - naive_dft(frame)))), 1e-10))
        results.append(CheckResult.below(f'idft round trip N={n}', float(np.max(np.abs(idft(dft(frame), n) - frame))), 1e-10))
        results.append(CheckResult.below(f'parseval N={n}', parseval_error(frame), 1e-9))
        config = StftConfig(n_fft=n, hop=n // 4, window='rectangular', center=False)
        for tau in (1, 5, n // 2):
            results.append(CheckResult.below(f'circular shift N={n} tau={tau}', verify_shifting(frame, tau, config), 1e-6))

    signal = rng.standard_normal(4096)
    config = StftConfig(n_fft=1024, hop=256, window='hann')
    results.append(CheckResult.below('stft round trip hann hop=N/4',
                                     float(np.max(np.abs(istft(stft(signal, config), length=signal.size) - signal))), 1e-8))
    for s in (0.5, 2.0, -3.0):
        results.append(CheckResult.below(f'scaling s={s:g}', verify_scaling(signal, s, config), 1e-9))

    tone = synthetic_tones(rng, 1, 4096)[0]
    shift = measure_stft_shift(tone, 5, config)
    logger.info('windowed STFT shift tau=5: max %.3g rad, median %.3g rad over %d bins',
                shift['max'], shift['median'], shift['bins'])
    results.append(CheckResult('windowed shift max error (reported)', shift['max']))
    results.append(CheckResult('windowed shift median error (reported)', shift['median']))

    if wav is not None:
        audio, sample_rate = read_wav(wav)
        audio = peak_normalize(audio)
        logger.info(f'Checking {wav} ({audio.size} samples at {sample_rate} Hz)')
        results.append(CheckResult.below('wav scaling s=0.5', verify_scaling(audio, 0.5, config), 1e-9))
        frame = audio[:config.n_fft]
        if np.max(np.abs(dft(frame))) > MAG_FLOOR:
            results.append(CheckResult.below('wav circular shift tau=5', verify_shifting(frame, 5, config), 1e-6))
    return results


# ------------------ Gradients ------------------

def random_small_model(rng: np.random.Generator) -> VectorFieldModel:
    flow_dim = int(rng.integers(2, 5))
    cond_dim = int(rng.choice([0, 2]))
    hidden = [int(h) for h in rng.integers(3, 7, size=int(rng.integers(1, 3)))]
    model = init_model(flow_dim, cond_dim, hidden=hidden, time_embedding_width=int(rng.choice([1, 2, 4])), rng=rng)
    for bias in model.biases:
        bias[:] = rng.normal(0.0, 0.1, size=bias.shape)
    return model


def gradcheck_suite(models: int = 20, seed: int = 0, batch: int = 4) -> List[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    for i in range(models):
        model = random_small_model(rng)
        x_t = rng.standard_normal((batch, model.flow_dim))
        cond = rng.standard_normal((batch, model.cond_dim)) if model.cond_dim else None
        t = rng.uniform(0.0, 1.0, size=batch)
        target = rng.standard_normal((batch, model.flow_dim))
        error = gradient_check(model, x_t, t, cond, target)
        results.append(CheckResult.below(f'model {i} sizes {model.layer_sizes}', error, 1e-4))
    return results
