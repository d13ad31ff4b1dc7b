"""Euler integration of a vector field with optional Vector Calibrated Sampling.

VCS replaces each predicted block vector v by ‖v‖ (I − P)v / ‖(I − P)v‖: the
component along the known variant line is dropped and the norm restored. The
map is positively homogeneous, so calibrating before or after the 1/steps
scaling gives the same step; it is applied to the raw field output.
"""
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Protocol, Sequence, Tuple, Union

import numpy as np

from services.exceptions import ConfigurationError, DivergenceError, ParameterError, ShapeError
from services.geometry import Block, Mode, PathParams, VariantLine, check_layout, reject, target_mean
from services.logging import logger


class VectorField(Protocol):
    def predict(self, x_t: np.ndarray, t, cond: Optional[np.ndarray] = None) -> np.ndarray:
        ...


@dataclass(eq=False)
class SamplerConfig:
    steps: int = 6
    vcs_enabled: bool = False
    vcs_epsilon: float = 1e-6
    lines: Optional[List[Optional[VariantLine]]] = None
    layout: Optional[List[Block]] = None

    def __post_init__(self):
        if self.steps < 1:
            raise ParameterError(f'steps must be >= 1, got {self.steps}')
        if self.vcs_epsilon <= 0:
            raise ParameterError(f'vcs_epsilon must be > 0, got {self.vcs_epsilon}')
        if not self.vcs_enabled:
            return
        if not self.lines or all(line is None for line in self.lines):
            raise ConfigurationError('VCS needs the variant line of at least one block')
        for line in self.lines:
            if line is not None and line.is_degenerate:
                raise ConfigurationError('VCS needs non-zero line directions')
        if self.layout is not None and len(self.layout) != len(self.lines):
            raise ConfigurationError(f'{len(self.lines)} lines for {len(self.layout)} blocks')


class SampleResult(NamedTuple):
    x1: np.ndarray
    trajectory: List[np.ndarray]
    degenerate_steps: int


def vcs_calibrate(v: np.ndarray, line: VariantLine, epsilon: float = 1e-6) -> Tuple[np.ndarray, np.ndarray]:
    """Norm-preserving removal of the line-parallel part of v.

    Rows whose rejection is shorter than epsilon·‖v‖ come back unchanged and
    are flagged in the returned mask.
    """
    if line.is_degenerate:
        raise ConfigurationError('VCS needs a non-zero line direction')
    v = np.asarray(v, dtype=np.float64)
    rejection = reject(line, v)
    v_norm = np.linalg.norm(v, axis=-1, keepdims=True)
    r_norm = np.linalg.norm(rejection, axis=-1, keepdims=True)
    degenerate = r_norm <= epsilon * v_norm
    scale = v_norm / np.where(degenerate, 1.0, r_norm)
    calibrated = np.where(degenerate, v, rejection * scale)
    return calibrated, degenerate[..., 0]


def calibrate_blocks(v: np.ndarray, lines: Sequence[Optional[VariantLine]], block_layout: Sequence[Block],
                     epsilon: float = 1e-6) -> Tuple[np.ndarray, np.ndarray]:
    """VCS per block; blocks whose line is None pass through."""
    v = np.asarray(v, dtype=np.float64)
    if len(lines) != len(block_layout):
        raise ShapeError(f'{len(lines)} lines for {len(block_layout)} blocks')
    check_layout(block_layout, v.shape[-1])
    out = v.copy()
    flagged = np.zeros(v.shape[:-1], dtype=bool)
    for block, line in zip(block_layout, lines):
        if line is None:
            continue
        out[..., block.slice], degenerate = vcs_calibrate(v[..., block.slice], line, epsilon)
        flagged |= degenerate
    return out, flagged


def euler_sample(model: VectorField, x0: np.ndarray, cfg: SamplerConfig,
                 cond: Optional[np.ndarray] = None) -> SampleResult:
    """x ← x + v(x, k/steps)/steps for k = 0..steps−1; every state is kept."""
    x = np.array(x0, dtype=np.float64)
    layout = cfg.layout
    if cfg.vcs_enabled and layout is None:
        layout = [Block('all', 0, x.shape[-1])]
    trajectory = [x.copy()]
    degenerate_steps = 0
    dt = 1.0 / cfg.steps
    for k in range(cfg.steps):
        v = np.asarray(model.predict(x, k / cfg.steps, cond), dtype=np.float64)
        if v.shape != x.shape:
            raise ShapeError(f'field returned shape {v.shape} for state {x.shape}')
        if cfg.vcs_enabled:
            v, flagged = calibrate_blocks(v, cfg.lines, layout, cfg.vcs_epsilon)
            if np.any(flagged):
                degenerate_steps += 1
                logger.debug('VCS guard hit on %d rows at step %d', int(np.sum(flagged)), k + 1)
        x = x + dt * v
        if not np.all(np.isfinite(x)):
            raise DivergenceError(f'non-finite sampler state at step {k + 1} of {cfg.steps}')
        trajectory.append(x.copy())
    return SampleResult(x, trajectory, degenerate_steps)


class OracleField:
    """Exact field of the conditional paths towards a known batch of lines.

    Each path is a straight line with constant speed and x₀ ↦ x_t is
    invertible for t < 1 (any t when λ > 0), so the velocity at (x_t, t) is
    known in closed form. Euler integration of this field is exact at any
    step count.
    """

    def __init__(self, lines: Sequence[Union[VariantLine, np.ndarray]], layout: Sequence[Block],
                 params: Union[PathParams, Sequence[PathParams]]):
        if isinstance(params, PathParams):
            params = [params] * len(layout)
        if len(lines) != len(layout) or len(params) != len(layout):
            raise ShapeError(f'{len(layout)} blocks, {len(lines)} lines, {len(params)} path settings')
        self.lines = list(lines)
        self.layout = list(layout)
        self.params = list(params)

    def predict(self, x_t: np.ndarray, t, cond: Optional[np.ndarray] = None) -> np.ndarray:
        x_t = np.asarray(x_t, dtype=np.float64)
        t = float(t)
        velocity = np.empty_like(x_t)
        for block, line, params in zip(self.layout, self.lines, self.params):
            x = x_t[..., block.slice]
            if params.mode is Mode.LP:
                shrink = params.lam
                perp_b = target_mean(line)
                perp_x0 = (reject(line, x) - t * perp_b) / (1.0 - t * (1.0 - shrink))
                velocity[..., block.slice] = perp_b - (1.0 - shrink) * perp_x0
            else:
                shrink = params.sigma_min
                x1 = line.offset if isinstance(line, VariantLine) else np.asarray(line, dtype=np.float64)
                x0 = (x - t * x1) / (1.0 - (1.0 - shrink) * t)
                velocity[..., block.slice] = x1 - (1.0 - shrink) * x0
        return velocity
