"""Synthetic tasks whose equivalence lines are known exactly."""
from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np

from services.exceptions import ConfigurationError
from services.geometry import Block, VariantLine, check_layout
from services.signal import StftConfig, scaling_line, shifting_line, stft, synthetic_tones


@dataclass(eq=False)
class TaskBatch:
    """Per-block line batches plus the conditioning features of each row."""
    lines: List[VariantLine]
    condition: Optional[np.ndarray]

    def select(self, index) -> 'TaskBatch':
        return TaskBatch(
            lines=[line.select(index) for line in self.lines],
            condition=None if self.condition is None else self.condition[index],
        )

    def __len__(self) -> int:
        return self.lines[0].offset.shape[0]


@dataclass(eq=False)
class ToyTask:
    name: str
    dim: int
    cond_dim: int
    layout: List[Block]
    generator: Callable[[int, np.random.Generator], TaskBatch]
    default_lambda: float

    def __post_init__(self):
        check_layout(self.layout, self.dim)

    def sample(self, n: int, rng: np.random.Generator) -> TaskBatch:
        batch = self.generator(n, rng)
        if len(batch.lines) != len(self.layout):
            raise ConfigurationError(f'task {self.name} produced {len(batch.lines)} lines for {len(self.layout)} blocks')
        return batch


def line_2d(phi: np.ndarray, offset: np.ndarray) -> VariantLine:
    phi = np.asarray(phi, dtype=np.float64)
    return VariantLine(np.stack([np.cos(phi), np.sin(phi)], axis=-1), offset)


def task_2d_line(variant_spread: float = 2.0) -> ToyTask:
    """Random lines through the plane: a = (cos φ, sin φ), φ ~ U[0, π), b ~ 2·N(0, I).

    The data point of a row is a random variant on its line, b + n·a with
    n ~ N(0, variant_spread²). The condition identifies the line only, as
    (cos 2φ, sin 2φ, b): the projector aaᵀ is affine in the doubled angle.
    """
    def generate(n: int, rng: np.random.Generator) -> TaskBatch:
        phi = rng.uniform(0.0, np.pi, size=n)
        base = 2.0 * rng.standard_normal((n, 2))
        line = line_2d(phi, base)
        sample = base + variant_spread * rng.standard_normal(n)[:, None] * line.direction
        condition = np.column_stack([np.cos(2.0 * phi), np.sin(2.0 * phi), base])
        return TaskBatch(lines=[VariantLine(line.direction, sample)], condition=condition)

    return ToyTask('2d', dim=2, cond_dim=4, layout=[Block('plane', 0, 2)],
                   generator=generate, default_lambda=0.05)


def task_fixed_line(direction: np.ndarray, offset: np.ndarray, name: str = 'fixed') -> ToyTask:
    """One line for every row, no condition. With λ = 1 the target velocity is the constant (I − P)b."""
    line = VariantLine(direction, offset)

    def generate(n: int, rng: np.random.Generator) -> TaskBatch:
        return TaskBatch(
            lines=[VariantLine(np.broadcast_to(line.direction, (n, line.dim)),
                               np.broadcast_to(line.offset, (n, line.dim)))],
            condition=None,
        )

    return ToyTask(name, dim=line.dim, cond_dim=0, layout=[Block('all', 0, line.dim)],
                   generator=generate, default_lambda=1.0)


def task_spectrogram_patch(frames: int = 4, n_fft: int = 16, hop: int = 4) -> ToyTask:
    """Log-magnitude and phase patches of short synthetic tones.

    The magnitude block varies along the scaling line, the phase block along
    the shifting line; the clean patch is the condition.
    """
    config = StftConfig(n_fft=n_fft, hop=hop, window='hann', center=False)
    length = n_fft + (frames - 1) * hop
    size = frames * config.bins

    def generate(n: int, rng: np.random.Generator) -> TaskBatch:
        spec = stft(synthetic_tones(rng, n, length), config)
        mag, phase = scaling_line(spec), shifting_line(spec)
        return TaskBatch(lines=[mag, phase], condition=np.concatenate([mag.offset, phase.offset], axis=1))

    return ToyTask('spec', dim=2 * size, cond_dim=2 * size,
                   layout=[Block('mag', 0, size), Block('phase', size, 2 * size)],
                   generator=generate, default_lambda=1e-4)


TASKS = {
    '2d': task_2d_line,
    'spec': task_spectrogram_patch,
}


def get_task(name: str) -> ToyTask:
    try:
        return TASKS[name]()
    except KeyError:
        raise ConfigurationError(f'unknown task {name!r}; choose from {", ".join(TASKS)}') from None
