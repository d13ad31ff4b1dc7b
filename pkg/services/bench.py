"""LP vs OT experiments on tasks with known equivalence lines.

Quality is measured as the distance of sampled endpoints to the true variant
line (the orthogonal residual that line projection removes), next to the endpoint
MSE to the nearest variant and the transport path length.
"""
import asyncio
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from services.exceptions import ConfigurationError, DivergenceError
from services.flow import RunReport, TrainConfig, train
from services.geometry import Mode, PathParams, blockwise_distance, distance_to_line
from services.logging import logger
from services.net import init_model
from services.sampler import OracleField, SampleResult, SamplerConfig, VectorField, euler_sample
from services.tasks import TaskBatch, ToyTask

# eval draws for training seed s come from seed s + EVAL_SEED_OFFSET, shared by every method
EVAL_SEED_OFFSET = 10_000

METRIC_COLUMNS = ['distance_to_line', 'endpoint_mse', 'path_length_mean', 'path_length_std']

FieldFactory = Callable[[TaskBatch], VectorField]


def path_length_stats(trajectories: Sequence[np.ndarray]) -> Tuple[float, float]:
    """Mean and standard deviation over the batch of Σ‖x_{k+1} − x_k‖."""
    states = np.asarray(trajectories, dtype=np.float64)
    if states.ndim == 2:
        states = states[:, None, :]
    if states.shape[0] < 2:
        return 0.0, 0.0
    lengths = np.linalg.norm(np.diff(states, axis=0), axis=-1).sum(axis=0)
    return float(lengths.mean()), float(lengths.std())


def build_model(task: ToyTask, cfg: TrainConfig):
    # initial weights depend on the seed only, so methods compared under one seed start equal
    return init_model(task.dim, task.cond_dim, hidden=(cfg.hidden, cfg.hidden),
                      time_embedding_width=cfg.time_embedding_width,
                      rng=np.random.default_rng([cfg.seed, 0]))


def train_on_task(task: ToyTask, cfg: TrainConfig) -> RunReport:
    return train(build_model(task, cfg), task, cfg)


def oracle_factory(task: ToyTask, cfg: TrainConfig) -> FieldFactory:
    params = [cfg.path_params(block.name) for block in task.layout]
    return lambda batch: OracleField(batch.lines, task.layout, params)


def model_factory(model) -> FieldFactory:
    return lambda batch: model


def sample_batch(vector_field: VectorField, task: ToyTask, batch: TaskBatch, x0: np.ndarray, steps: int,
                 vcs: bool = False) -> Tuple[Dict[str, Any], SampleResult]:
    """Euler-sample one batch and score the endpoints against the batch's lines."""
    cfg = SamplerConfig(steps=steps, vcs_enabled=vcs, lines=batch.lines if vcs else None, layout=task.layout)
    result = euler_sample(vector_field, x0, cfg, batch.condition)
    distance = blockwise_distance(batch.lines, task.layout, result.x1)
    length_mean, length_std = path_length_stats(result.trajectory)
    row = {
        'budget': steps,
        'distance_to_line': float(distance.mean()),
        'endpoint_mse': float(np.mean(distance ** 2) / task.dim),
        'path_length_mean': length_mean,
        'path_length_std': length_std,
        'degenerate_steps': result.degenerate_steps,
    }
    if len(task.layout) > 1:
        for block, line in zip(task.layout, batch.lines):
            row[f'distance_{block.name}'] = float(distance_to_line(line, result.x1[:, block.slice]).mean())
    return row, result


def eval_draws(task: ToyTask, eval_samples: int, seed: int) -> Tuple[TaskBatch, np.ndarray]:
    rng = np.random.default_rng(seed)
    batch = task.sample(eval_samples, rng)
    return batch, rng.standard_normal((eval_samples, task.dim))


def evaluate(field_for: FieldFactory, task: ToyTask, budgets: Sequence[int], *,
             vcs: bool = False, eval_samples: int = 1000, seed: int = 0) -> List[Dict[str, Any]]:
    """Sample eval_samples endpoints per step budget from the same x₀ and lines."""
    batch, x0 = eval_draws(task, eval_samples, seed)
    vector_field = field_for(batch)
    return [sample_batch(vector_field, task, batch, x0, steps, vcs)[0] for steps in budgets]


def _failed_rows(budgets: Sequence[int]) -> List[Dict[str, Any]]:
    return [{'budget': steps, **{column: np.nan for column in METRIC_COLUMNS}} for steps in budgets]


def run_cell(task: ToyTask, cfg: TrainConfig, budgets: Sequence[int], *, vcs: bool = False,
             eval_samples: int = 1000, oracle: bool = False) -> Tuple[List[Dict[str, Any]], Optional[RunReport]]:
    """Train (unless oracle) and evaluate one (method, seed) cell; divergence marks it failed."""
    eval_seed = cfg.seed + EVAL_SEED_OFFSET
    if oracle:
        rows = evaluate(oracle_factory(task, cfg), task, budgets, vcs=vcs,
                        eval_samples=eval_samples, seed=eval_seed)
        return [{**row, 'status': 'ok', 'final_loss': 0.0} for row in rows], None
    try:
        report = train_on_task(task, cfg)
        rows = evaluate(model_factory(report.model), task, budgets, vcs=vcs,
                        eval_samples=eval_samples, seed=eval_seed)
    except DivergenceError as e:
        logger.error(f'Cell {task.name}/{cfg.mode.value}/seed {cfg.seed} failed: {e}')
        return [{**row, 'status': 'failed', 'final_loss': np.nan} for row in _failed_rows(budgets)], None
    final_loss = report.loss_curve[-1] if report.loss_curve else np.nan
    report.metrics.update({f'distance_to_line@{row["budget"]}': row['distance_to_line'] for row in rows})
    return [{**row, 'status': 'ok', 'final_loss': final_loss} for row in rows], report


def _same_except_mode(first: TrainConfig, second: TrainConfig) -> bool:
    exclude = {'mode', 'block_modes'}
    return first.model_dump(exclude=exclude) == second.model_dump(exclude=exclude)


# ------------------ Compare ------------------

@dataclass(eq=False)
class Comparison:
    cells: pd.DataFrame
    summary: pd.DataFrame
    claims: Dict[str, bool] = field(default_factory=dict)
    reports: List[RunReport] = field(default_factory=list)


def summarize(cells: pd.DataFrame, labels: Sequence[str]) -> pd.DataFrame:
    """Per budget: seed-mean distance per method, failed-cell count, and second − first gap."""
    ok = cells[cells['status'] == 'ok']
    means = ok.groupby(['budget', 'method'])['distance_to_line'].mean().unstack('method')
    means = means.reindex(index=sorted(cells['budget'].unique()), columns=list(labels))
    summary = pd.DataFrame(index=means.index)
    for label in labels:
        summary[f'distance_{label}'] = means[label]
        failed = cells[(cells['method'] == label) & (cells['status'] != 'ok')]
        summary[f'failed_{label}'] = failed.groupby('budget').size().reindex(means.index, fill_value=0)
    summary['gap'] = means[labels[1]] - means[labels[0]]
    summary.index.name = 'budget'
    return summary.reset_index()


def comparison_claims(summary: pd.DataFrame, labels: Sequence[str]) -> Dict[str, bool]:
    """Directional checks: LP no worse than OT at every budget, and the gap largest at the fewest steps."""
    first, second = (f'distance_{label}' for label in labels)
    if summary[[first, second]].isna().any().any():
        return {'lp_not_worse_at_every_budget': False, 'few_step_gap_at_least_many_step_gap': False}
    ordered = summary.sort_values('budget')
    return {
        'lp_not_worse_at_every_budget': bool((ordered[first] <= ordered[second]).all()),
        'few_step_gap_at_least_many_step_gap': bool(ordered['gap'].iloc[0] >= ordered['gap'].iloc[-1]),
    }


async def compare_async(task: ToyTask, seeds: Sequence[int], cfg_lp: TrainConfig, cfg_ot: TrainConfig,
                        step_budgets: Sequence[int], *, eval_samples: int = 1000, vcs: bool = False,
                        oracle: bool = False, labels: Tuple[str, str] = ('LP', 'OT')) -> Comparison:
    """Train one model per method and seed (in worker threads) and evaluate every budget."""
    if not _same_except_mode(cfg_lp, cfg_ot):
        raise ConfigurationError('compared configs must differ in mode only')
    if not seeds:
        raise ConfigurationError('compare needs at least one seed')
    jobs = [
        (label, cfg.model_copy(update={'seed': seed}))
        for seed in seeds
        for label, cfg in zip(labels, (cfg_lp, cfg_ot))
    ]
    results = await asyncio.gather(*[
        asyncio.to_thread(run_cell, task, cfg, step_budgets, vcs=vcs, eval_samples=eval_samples, oracle=oracle)
        for _, cfg in jobs
    ])
    records, reports = [], []
    for (label, cfg), (rows, report) in zip(jobs, results):
        records.extend({'method': label, 'seed': cfg.seed, **row} for row in rows)
        if report is not None:
            reports.append(report)
        logger.info('compare %s %s seed %d done', task.name, label, cfg.seed)
    cells = pd.DataFrame.from_records(records)
    columns = ['method', 'seed', 'budget', 'status', 'final_loss', *METRIC_COLUMNS]
    cells = cells[columns + [c for c in cells.columns if c not in columns]]
    summary = summarize(cells, labels)
    return Comparison(cells, summary, comparison_claims(summary, labels), reports)


def compare(task: ToyTask, seeds: Sequence[int], cfg_lp: TrainConfig, cfg_ot: TrainConfig,
            step_budgets: Sequence[int], **kwargs) -> Comparison:
    return asyncio.run(compare_async(task, seeds, cfg_lp, cfg_ot, step_budgets, **kwargs))


# ------------------ Ablations ------------------

def _mean_rows(rows: List[Dict[str, Any]], keys: Dict[str, Any]) -> Dict[str, Any]:
    frame = pd.DataFrame.from_records(rows)
    ok = frame[frame['status'] == 'ok']
    metrics = [c for c in frame.columns if c.startswith('distance') or c in ('endpoint_mse', 'path_length_mean')]
    out = dict(keys)
    for column in metrics:
        out[column] = float(ok[column].mean()) if len(ok) else np.nan
    out['failed'] = int((frame['status'] != 'ok').sum())
    return out


def vcs_ablation(task: ToyTask, cfg: TrainConfig, seeds: Sequence[int] = (0, 1, 2), steps: int = 6, *,
                 eval_samples: int = 1000, oracle: bool = False) -> pd.DataFrame:
    """{LP, OT} × {VCS off, on}; each trained model is sampled with and without calibration."""
    rows = []
    for mode in (Mode.LP, Mode.OT):
        per_vcs: Dict[bool, List[Dict[str, Any]]] = {False: [], True: []}
        for seed in seeds:
            run_cfg = cfg.model_copy(update={'mode': mode, 'seed': seed, 'block_modes': None})
            eval_seed = seed + EVAL_SEED_OFFSET
            try:
                field_for = (oracle_factory(task, run_cfg) if oracle
                             else model_factory(train_on_task(task, run_cfg).model))
                for vcs in (False, True):
                    for row in evaluate(field_for, task, [steps], vcs=vcs, eval_samples=eval_samples, seed=eval_seed):
                        per_vcs[vcs].append({**row, 'status': 'ok'})
            except DivergenceError as e:
                logger.error(f'VCS ablation {mode.value}/seed {seed} failed: {e}')
                for vcs in (False, True):
                    per_vcs[vcs].extend({**row, 'status': 'failed'} for row in _failed_rows([steps]))
        for vcs in (False, True):
            rows.append(_mean_rows(per_vcs[vcs], {'method': mode.value.upper(), 'vcs': 'on' if vcs else 'off'}))
    return pd.DataFrame.from_records(rows)


BLOCK_ABLATION_MODES = [(Mode.OT, Mode.OT), (Mode.OT, Mode.LP), (Mode.LP, Mode.OT), (Mode.LP, Mode.LP)]


def block_ablation(task: ToyTask, cfg: TrainConfig, seeds: Sequence[int] = (0, 1, 2), steps: int = 6, *,
                   eval_samples: int = 1000, oracle: bool = False) -> pd.DataFrame:
    """Mode per block for two-block tasks (magnitude, phase), sampled without VCS."""
    if len(task.layout) != 2:
        raise ConfigurationError(f'block ablation needs a two-block task, {task.name} has {len(task.layout)}')
    first, second = task.layout
    rows = []
    for first_mode, second_mode in BLOCK_ABLATION_MODES:
        block_modes = {first.name: first_mode, second.name: second_mode}
        cell_rows: List[Dict[str, Any]] = []
        for seed in seeds:
            run_cfg = cfg.model_copy(update={'seed': seed, 'block_modes': block_modes})
            cell_rows.extend(run_cell(task, run_cfg, [steps], eval_samples=eval_samples, oracle=oracle)[0])
        rows.append(_mean_rows(cell_rows, {first.name: first_mode.value.upper(),
                                           second.name: second_mode.value.upper()}))
    return pd.DataFrame.from_records(rows)


def oracle_path_lengths(task: ToyTask, lam: float, samples: int = 10_000, seed: int = 0) -> pd.DataFrame:
    """Transport lengths of the exact LP and OT fields from matched x₀ and lines (one Euler step is exact)."""
    rng = np.random.default_rng(seed)
    batch = task.sample(samples, rng)
    x0 = rng.standard_normal((samples, task.dim))
    lengths = {}
    for mode in (Mode.LP, Mode.OT):
        oracle = OracleField(batch.lines, task.layout, PathParams.for_mode(mode, lam))
        result = euler_sample(oracle, x0, SamplerConfig(steps=1))
        lengths[mode] = np.linalg.norm(result.x1 - x0, axis=-1)
    difference = lengths[Mode.OT] - lengths[Mode.LP]
    return pd.DataFrame([
        {'method': mode.value.upper(), 'mean': float(values.mean()), 'std': float(values.std()), 'samples': samples}
        for mode, values in lengths.items()
    ] + [{
        'method': 'OT-LP', 'mean': float(difference.mean()),
        'std': float(difference.std(ddof=1) / np.sqrt(samples)), 'samples': samples,
    }])


# ------------------ Sweeps ------------------

SWEEP_PARAMETERS = ('hidden', 'dataset_size')


def sweep(task: ToyTask, seeds: Sequence[int], cfg_lp: TrainConfig, cfg_ot: TrainConfig,
          step_budgets: Sequence[int], parameter: str, values: Sequence[int], **kwargs) -> pd.DataFrame:
    """Repeat the LP/OT comparison for each value of a model-size or data-scale setting.

    One row per (method, budget), one distance column per value; the gap rows are OT − LP.
    """
    if parameter not in SWEEP_PARAMETERS:
        raise ConfigurationError(f'cannot sweep {parameter!r}; choose from {", ".join(SWEEP_PARAMETERS)}')
    if not values:
        raise ConfigurationError('sweep needs at least one value')
    columns = {}
    for value in values:
        update = {parameter: value}
        result = compare(task, seeds, cfg_lp.model_copy(update=update), cfg_ot.model_copy(update=update),
                         step_budgets, **kwargs)
        summary = result.summary.set_index('budget')
        column = pd.concat({
            'LP': summary['distance_LP'], 'OT': summary['distance_OT'], 'gap': summary['gap'],
        }, names=['method', 'budget'])
        columns[f'{parameter}={value}'] = column
        logger.info('sweep %s %s=%s: claims %s', task.name, parameter, value, result.claims)
    return pd.DataFrame(columns).reset_index()
