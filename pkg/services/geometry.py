"""Line-projection target geometry.

A variant line L(n) = a n + b holds the perceptually equivalent versions of a
target. The projector P = a aᵀ / (aᵀ a) and the scale operator
M = λI + (1 − λ)P are never built as matrices: every operator below is two dot
products and a scale, applied along the last axis. That keeps d = frames × bins
sized problems cheap and lets one call handle a whole batch of lines.

All arrays are float64. A line whose direction and offset are (n, d) arrays is
a batch of n lines, applied row-wise to (n, d) vectors.
"""
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from services.exceptions import ConfigurationError, DegenerateLineError, ParameterError, ShapeError


class Mode(str, Enum):
    LP = 'lp'
    OT = 'ot'


@dataclass(frozen=True, eq=False)
class VariantLine:
    direction: np.ndarray
    offset: np.ndarray

    def __post_init__(self):
        direction = np.asarray(self.direction, dtype=np.float64)
        offset = np.asarray(self.offset, dtype=np.float64)
        if direction.ndim == 0 or offset.ndim == 0:
            raise ShapeError('direction and offset must be vectors')
        if direction.shape[-1] != offset.shape[-1]:
            raise ShapeError(
                f'direction has length {direction.shape[-1]}, offset has length {offset.shape[-1]}'
            )
        object.__setattr__(self, 'direction', direction)
        object.__setattr__(self, 'offset', offset)

    @property
    def dim(self) -> int:
        return self.direction.shape[-1]

    @property
    def is_degenerate(self) -> bool:
        """True when any direction in the batch is zero."""
        return bool(np.any(_squared_norm(self.direction) <= 0.0))

    @classmethod
    def degenerate(cls, x1: np.ndarray) -> 'VariantLine':
        """The OT convention: no line (a = 0), offset at the data point."""
        x1 = np.asarray(x1, dtype=np.float64)
        return cls(np.zeros_like(x1), x1)

    def select(self, index) -> 'VariantLine':
        """Rows of a line batch. Shared (1-D) directions or offsets are kept as is."""
        direction = self.direction[index] if self.direction.ndim > 1 else self.direction
        offset = self.offset[index] if self.offset.ndim > 1 else self.offset
        return VariantLine(direction, offset)


@dataclass(frozen=True)
class Block:
    """A contiguous slice [start, stop) of the flattened feature vector."""
    name: str
    start: int
    stop: int

    @property
    def slice(self) -> slice:
        return slice(self.start, self.stop)

    @property
    def size(self) -> int:
        return self.stop - self.start


def check_layout(layout: Sequence[Block], dim: int) -> None:
    """Blocks must tile [0, dim) in order without gaps."""
    position = 0
    for block in layout:
        if block.start != position or block.stop <= block.start:
            raise ShapeError(f'block {block.name!r} does not continue the layout at {position}')
        position = block.stop
    if position != dim:
        raise ShapeError(f'layout covers {position} coordinates, vector has {dim}')


class PathParams(BaseModel):
    """λ and mode of a conditional path. In OT mode σ_min takes the role of λ."""
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    lam: float = Field(default=1e-4, alias='lambda', gt=0, le=1)
    mode: Mode = Mode.LP
    sigma_min: float = Field(default=1e-4, ge=0, le=1)

    @classmethod
    def for_mode(cls, mode: Mode, value: float) -> 'PathParams':
        if Mode(mode) is Mode.OT:
            return cls(mode=Mode.OT, sigma_min=value)
        return cls(mode=Mode.LP, lam=value)

    @property
    def shrink(self) -> float:
        return self.sigma_min if self.mode is Mode.OT else self.lam


def _squared_norm(a: np.ndarray) -> np.ndarray:
    return np.einsum('...i,...i->...', a, a)


def _dot(a: np.ndarray, v: np.ndarray) -> np.ndarray:
    return np.sum(a * v, axis=-1, keepdims=True)


def _checked(line: VariantLine, v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1:] != (line.dim,):
        raise ShapeError(f'vector has length {v.shape[-1] if v.ndim else 0}, line has dim {line.dim}')
    a = line.direction
    aa = _squared_norm(a)[..., None]
    if np.any(aa <= 0.0) or not np.all(np.isfinite(aa)):
        raise DegenerateLineError('line direction is zero; the OT path has no line')
    return a, aa


def _check_lambda(lam: float) -> float:
    if not 0.0 < lam <= 1.0:
        raise ParameterError(f'lambda must lie in (0, 1], got {lam}')
    return float(lam)


def project(line: VariantLine, v: np.ndarray) -> np.ndarray:
    """Pv = a (aᵀv) / (aᵀa)."""
    a, aa = _checked(line, v)
    return a * (_dot(a, v) / aa)


def reject(line: VariantLine, v: np.ndarray) -> np.ndarray:
    """(I − P)v, the component of v orthogonal to the line."""
    v = np.asarray(v, dtype=np.float64)
    return v - project(line, v)


def apply_m(line: VariantLine, lam: float, v: np.ndarray) -> np.ndarray:
    """Mv = λv + (1 − λ)Pv: keeps the parallel part, scales the orthogonal part by λ."""
    lam = _check_lambda(lam)
    v = np.asarray(v, dtype=np.float64)
    return lam * v + (1.0 - lam) * project(line, v)


def target_mean(line: VariantLine) -> np.ndarray:
    """b − Pb, the point of the line closest to the origin."""
    return reject(line, line.offset)


def sample_target(line: VariantLine, lam: float, x0: np.ndarray) -> np.ndarray:
    """Endpoint b − Pb + Mx₀ of the conditional path; N(b − Pb, MMᵀ) over x₀ ~ N(0, I)."""
    return target_mean(line) + apply_m(line, lam, x0)


def path_point(x0: np.ndarray, x1_prime: np.ndarray, t) -> np.ndarray:
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0.0) or np.any(t_arr > 1.0) or not np.all(np.isfinite(t_arr)):
        raise ParameterError(f't must lie in [0, 1], got {t}')
    x0 = np.asarray(x0, dtype=np.float64)
    x1_prime = np.asarray(x1_prime, dtype=np.float64)
    if x0.shape != x1_prime.shape:
        raise ShapeError(f'path endpoints differ in shape: {x0.shape} vs {x1_prime.shape}')
    if t_arr.ndim == 1 and x0.ndim == 2:
        t_arr = t_arr[:, None]
    return (1.0 - t_arr) * x0 + t_arr * x1_prime


def conditional_velocity(line: VariantLine, lam: float, x0: np.ndarray) -> np.ndarray:
    """u = (b − Pb + Mx₀) − x₀, constant along the path and orthogonal to the line."""
    x0 = np.asarray(x0, dtype=np.float64)
    return sample_target(line, lam, x0) - x0


def closed_form_velocity(line: VariantLine, lam: float, x0: np.ndarray) -> np.ndarray:
    """Same velocity written as (I − P)(b − (1 − λ)x₀)."""
    lam = _check_lambda(lam)
    x0 = np.asarray(x0, dtype=np.float64)
    return reject(line, line.offset - (1.0 - lam) * x0)


def ot_target_and_velocity(x1: np.ndarray, sigma_min: float,
                           x0: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """OT-CFM endpoint x₁ + σ_min x₀ and velocity x₁ − (1 − σ_min)x₀."""
    x1 = np.asarray(x1, dtype=np.float64)
    x0 = np.asarray(x0, dtype=np.float64)
    if x1.shape[-1] != x0.shape[-1]:
        raise ShapeError(f'x1 has length {x1.shape[-1]}, x0 has length {x0.shape[-1]}')
    return x1 + sigma_min * x0, x1 - (1.0 - sigma_min) * x0


@dataclass(frozen=True, eq=False)
class ConditionalDraw:
    x0: np.ndarray
    x1_prime: np.ndarray
    velocity: np.ndarray
    line: VariantLine


def draw_conditional(target, params: PathParams, x0: np.ndarray) -> ConditionalDraw:
    """Endpoint and velocity for one block.

    `target` is a VariantLine, or in OT mode either a line (its offset is the
    data point) or the data point itself.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    if params.mode is Mode.OT:
        x1 = target.offset if isinstance(target, VariantLine) else np.asarray(target, dtype=np.float64)
        x1_prime, _ = ot_target_and_velocity(x1, params.sigma_min, x0)
        line = VariantLine.degenerate(np.broadcast_to(x1, x0.shape))
    else:
        if not isinstance(target, VariantLine):
            raise ConfigurationError('LP mode needs a VariantLine target')
        if target.is_degenerate:
            raise ConfigurationError('LP mode needs a non-zero line direction; use OT mode')
        x1_prime = sample_target(target, params.lam, x0)
        line = target
    return ConditionalDraw(x0=x0, x1_prime=x1_prime, velocity=x1_prime - x0, line=line)


def distance_to_line(line: VariantLine, x: np.ndarray) -> np.ndarray:
    """‖(I − P)(x − b)‖, one value per row."""
    x = np.asarray(x, dtype=np.float64)
    return np.linalg.norm(reject(line, x - line.offset), axis=-1)


def nearest_variant(line: VariantLine, x: np.ndarray) -> np.ndarray:
    """b + P(x − b), the point of the line closest to x."""
    x = np.asarray(x, dtype=np.float64)
    return line.offset + project(line, x - line.offset)


def blockwise_distance(lines: Sequence[Optional[VariantLine]], layout: Sequence[Block],
                       x: np.ndarray) -> np.ndarray:
    """Distance to the product of block lines: √Σ per-block distance².

    Blocks without a line are ignored.
    """
    x = np.asarray(x, dtype=np.float64)
    check_layout(layout, x.shape[-1])
    total = np.zeros(x.shape[:-1])
    for block, line in zip(layout, lines):
        if line is None:
            continue
        total = total + distance_to_line(line, x[..., block.slice]) ** 2
    return np.sqrt(total)
