"""Conditional path sampling, the CFM regression loss and the training loop."""
import time
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Dict, List, Literal, Optional, Sequence, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from services.exceptions import DivergenceError, ParameterError, ShapeError
from services.geometry import Block, Mode, PathParams, VariantLine, check_layout, draw_conditional, path_point
from services.logging import logger
from services.net import (
    AdamState, VectorFieldModel, adam_step, assemble_input, backward_cached, forward_cached, sgd_step,
)

if TYPE_CHECKING:
    from services.tasks import ToyTask


class TrainConfig(BaseModel):
    """Training settings. Defaults: Adam with betas (0.9, 0.99), lr 5e-4 decayed by 0.99 per epoch."""
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    mode: Mode = Mode.LP
    # 0 is a valid σ_min only; LP blocks reject it in path_params
    lambda_or_sigma: float = Field(default=1e-4, alias='lambda', ge=0, le=1)
    epochs: int = Field(default=500, ge=0)
    batch_size: int = Field(default=64, gt=0)
    steps_per_epoch: int = Field(default=32, gt=0)
    learning_rate: float = Field(default=5e-4, gt=0)
    lr_decay: float = Field(default=0.99, gt=0, le=1)
    optimizer: Literal['adam', 'sgd'] = 'adam'
    beta1: float = Field(default=0.9, ge=0, lt=1)
    beta2: float = Field(default=0.99, ge=0, lt=1)
    seed: int = 0
    hidden: int = Field(default=64, gt=0)
    time_embedding_width: int = Field(default=1, gt=0)
    dataset_size: Optional[int] = Field(default=None, gt=0)
    block_modes: Optional[Dict[str, Mode]] = None
    log_every: int = Field(default=50, gt=0)

    def path_params(self, block: Optional[str] = None) -> PathParams:
        mode = self.mode
        if self.block_modes and block in self.block_modes:
            mode = self.block_modes[block]
        if Mode(mode) is Mode.LP and self.lambda_or_sigma == 0:
            raise ParameterError(f'LP paths need λ > 0, block {block or "all"} has λ = 0')
        return PathParams.for_mode(mode, self.lambda_or_sigma)


@dataclass(eq=False)
class PathSample:
    x_t: np.ndarray
    u_t: np.ndarray
    t: np.ndarray
    condition: Optional[np.ndarray] = None
    x0: Optional[np.ndarray] = None


def draw_block_path_sample(lines: Sequence[Union[VariantLine, np.ndarray]], layout: Sequence[Block],
                           params: Union[PathParams, Sequence[PathParams]], rng: np.random.Generator,
                           *, t=None, x0: Optional[np.ndarray] = None,
                           condition: Optional[np.ndarray] = None) -> PathSample:
    """One (x_t, u_t, t) per row, with its own path in every block and a shared t.

    x₀ ~ N(0, I) is drawn first, then t ~ U[0, 1]; either can be forced.
    """
    if isinstance(params, PathParams):
        params = [params] * len(layout)
    if len(lines) != len(layout) or len(params) != len(layout):
        raise ShapeError(f'{len(layout)} blocks, {len(lines)} lines, {len(params)} path settings')
    dim = layout[-1].stop if layout else 0
    check_layout(layout, dim)
    batch_shape = np.broadcast_shapes(*[
        (line.offset if isinstance(line, VariantLine) else np.asarray(line)).shape[:-1] for line in lines
    ])
    if x0 is None:
        x0 = rng.standard_normal(batch_shape + (dim,))
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape[-1] != dim:
        raise ShapeError(f'x0 has length {x0.shape[-1]}, layout covers {dim}')
    if t is None:
        t = rng.uniform(0.0, 1.0, size=x0.shape[:-1])
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), x0.shape[:-1])

    x1_prime = np.empty_like(x0)
    for block, line, block_params in zip(layout, lines, params):
        draw = draw_conditional(line, block_params, x0[..., block.slice])
        x1_prime[..., block.slice] = draw.x1_prime
    x_t = path_point(x0, x1_prime, t[..., None] if t.ndim else t)
    return PathSample(x_t=x_t, u_t=x1_prime - x0, t=t, condition=condition, x0=x0)


def draw_path_sample(line_or_x1: Union[VariantLine, np.ndarray], params: PathParams,
                     rng: np.random.Generator, *, t=None, x0: Optional[np.ndarray] = None,
                     condition: Optional[np.ndarray] = None) -> PathSample:
    """Single-block draw: the LP path towards a line, or the OT path towards x₁ (a line's offset in OT mode)."""
    if isinstance(line_or_x1, VariantLine):
        dim = line_or_x1.dim
    else:
        dim = np.asarray(line_or_x1).shape[-1]
    return draw_block_path_sample([line_or_x1], [Block('all', 0, dim)], params, rng,
                                  t=t, x0=x0, condition=condition)


def cfm_loss(predicted: np.ndarray, target_u: np.ndarray) -> float:
    """‖v_θ − u_t‖² averaged over the batch and over coordinates."""
    predicted = np.asarray(predicted, dtype=np.float64)
    target_u = np.asarray(target_u, dtype=np.float64)
    if predicted.shape != target_u.shape:
        raise ShapeError(f'prediction {predicted.shape} and target {target_u.shape} differ')
    return float(np.mean((predicted - target_u) ** 2))


def cfm_loss_grad(predicted: np.ndarray, target_u: np.ndarray) -> np.ndarray:
    predicted = np.asarray(predicted, dtype=np.float64)
    target_u = np.asarray(target_u, dtype=np.float64)
    if predicted.shape != target_u.shape:
        raise ShapeError(f'prediction {predicted.shape} and target {target_u.shape} differ')
    return 2.0 * (predicted - target_u) / predicted.size


# ------------------ Training ------------------

@dataclass(eq=False)
class RunReport:
    config: Dict[str, Any]
    loss_curve: List[float]
    seed: int
    metrics: Dict[str, float] = field(default_factory=dict)
    wall_clock: float = 0.0
    status: str = 'ok'
    model: Optional[VectorFieldModel] = None

    def loss_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            'epoch': np.arange(1, len(self.loss_curve) + 1),
            'mean_loss': np.asarray(self.loss_curve, dtype=np.float64),
        })

    def summary(self) -> Dict[str, Any]:
        return {
            'config': self.config,
            'seed': self.seed,
            'status': self.status,
            'epochs_run': len(self.loss_curve),
            'final_loss': self.loss_curve[-1] if self.loss_curve else None,
            'metrics': self.metrics,
            'wall_clock': self.wall_clock,
        }


def train(model: VectorFieldModel, task: 'ToyTask', cfg: TrainConfig) -> RunReport:
    """Minibatch regression of v_θ onto freshly drawn conditional velocities.

    The model is updated in place and returned on the report.
    """
    if model.flow_dim != task.dim or model.cond_dim != task.cond_dim:
        raise ShapeError(
            f'model is ({model.flow_dim}, cond {model.cond_dim}), task {task.name} is ({task.dim}, cond {task.cond_dim})'
        )
    started = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    params = [cfg.path_params(block.name) for block in task.layout]
    pool = task.sample(cfg.dataset_size, rng) if cfg.dataset_size else None
    state = AdamState.zeros_like(model)
    logger.info('Training on %s: mode=%s lambda=%g seed=%d epochs=%d',
                task.name, cfg.mode.value, cfg.lambda_or_sigma, cfg.seed, cfg.epochs)

    loss_curve: List[float] = []
    iteration = 0
    for epoch in range(cfg.epochs):
        lr = cfg.learning_rate * cfg.lr_decay ** epoch
        epoch_total = 0.0
        for _ in range(cfg.steps_per_epoch):
            if pool is not None:
                batch = pool.select(rng.integers(0, cfg.dataset_size, size=cfg.batch_size))
            else:
                batch = task.sample(cfg.batch_size, rng)
            sample = draw_block_path_sample(batch.lines, task.layout, params, rng, condition=batch.condition)
            inputs, _ = assemble_input(model, sample.x_t, sample.t, sample.condition)
            activations = forward_cached(model, inputs)
            loss = cfm_loss(activations[-1], sample.u_t)
            iteration += 1
            if not np.isfinite(loss):
                norms = ', '.join(f'{n:.3g}' for n in model.parameter_norms())
                raise DivergenceError(
                    f'non-finite loss at iteration {iteration} (epoch {epoch + 1}); parameter norms [{norms}]'
                )
            grads = backward_cached(model, activations, cfm_loss_grad(activations[-1], sample.u_t))
            if cfg.optimizer == 'adam':
                adam_step(model, grads, state, iteration, lr, cfg.beta1, cfg.beta2)
            else:
                sgd_step(model, grads, lr)
            epoch_total += loss
        loss_curve.append(epoch_total / cfg.steps_per_epoch)
        if (epoch + 1) % cfg.log_every == 0:
            logger.info('epoch %d/%d loss %.6g lr %.3g', epoch + 1, cfg.epochs, loss_curve[-1], lr)

    wall_clock = time.perf_counter() - started
    logger.info('Training on %s finished in %.1fs', task.name, wall_clock)
    return RunReport(
        config={'task': task.name, **cfg.model_dump(mode='json')},
        loss_curve=loss_curve,
        seed=cfg.seed,
        metrics={'final_loss': loss_curve[-1]} if loss_curve else {},
        wall_clock=wall_clock,
        model=model,
    )
