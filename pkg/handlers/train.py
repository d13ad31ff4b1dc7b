import argparse
import json
from pathlib import Path
from typing import Optional

import pandas as pd
from sqlalchemy.ext.asyncio import AsyncSession

from common.cli_commands_list import COMMAND_HELP
from handlers.common import TRAINING_SETTINGS, add_setting_arguments, settings_from_args
from services.bench import EVAL_SEED_OFFSET, eval_draws, sample_batch, train_on_task
from services.config import resolve_settings
from services.exceptions import DivergenceError, InputError, ShapeError
from services.logging import logger
from services.net import load_checkpoint, save_checkpoint
from services.report_generator import (
    plot_loss_curve, prepare_output, trajectories_frame, write_csv, write_json,
)
from services.runs import orm_add_run
from services.tasks import get_task


def register(subparsers) -> None:
    parser = subparsers.add_parser('train', help=COMMAND_HELP['train'])
    add_setting_arguments(parser, TRAINING_SETTINGS)
    parser.set_defaults(handler=cmd_train, needs_db=True)

    parser = subparsers.add_parser('sample', help=COMMAND_HELP['sample'])
    parser.add_argument('--checkpoint', type=Path, required=True, metavar='FILE')
    add_setting_arguments(parser, ['steps', 'vcs', 'eval_samples', 'seed', 'out'])
    parser.set_defaults(handler=cmd_sample, needs_db=False)


async def cmd_train(args: argparse.Namespace, session: Optional[AsyncSession]) -> int:
    """Command train"""
    settings = settings_from_args(args)
    task = get_task(settings.task)
    cfg = settings.train_config()
    out = prepare_output(settings.out)
    try:
        report = train_on_task(task, cfg)
    except DivergenceError:
        await orm_add_run(session, 'train', task.name, cfg.lambda_or_sigma, cfg.epochs, out,
                          mode=cfg.mode.value, seed=cfg.seed, status='failed')
        raise
    loss = report.loss_frame()
    write_csv(loss, out / 'loss.csv')
    if len(loss):
        plot_loss_curve(loss, out / 'loss.svg')
    save_checkpoint(report.model, out / 'model.ckpt')
    write_json(report.summary(), out / 'run.json')
    await orm_add_run(session, 'train', task.name, cfg.lambda_or_sigma, cfg.epochs, out,
                      mode=cfg.mode.value, seed=cfg.seed, final_loss=report.metrics.get('final_loss'),
                      metrics=report.metrics)
    print(f'final loss {report.metrics.get("final_loss", float("nan")):.6g} after {len(loss)} epochs')
    return 0


def _sidecar_settings(checkpoint: Path) -> dict:
    sidecar = checkpoint.with_name('run.json')
    if not sidecar.is_file():
        raise InputError(f'{sidecar} not found; sample needs the run.json written by train')
    config = json.loads(sidecar.read_text(encoding='utf-8'))['config']
    return {'task': config['task'], 'lambda': config['lambda_or_sigma'], 'mode': config['mode']}


async def cmd_sample(args: argparse.Namespace, session: Optional[AsyncSession]) -> int:
    """Command sample"""
    model = load_checkpoint(args.checkpoint)
    flags = {**_sidecar_settings(args.checkpoint), **{k: v for k, v in vars(args).items() if v is not None}}
    settings = resolve_settings(flags, args.config)
    task = get_task(settings.task)
    if model.flow_dim != task.dim or model.cond_dim != task.cond_dim:
        raise ShapeError(f'checkpoint does not fit task {task.name}')
    batch, x0 = eval_draws(task, settings.eval_samples, settings.seed + EVAL_SEED_OFFSET)
    row, result = sample_batch(model, task, batch, x0, settings.steps, settings.vcs)
    out = prepare_output(settings.out)
    write_csv(trajectories_frame(result.trajectory), out / 'trajectories.csv')
    write_csv(pd.DataFrame([{'vcs': settings.vcs, **row}]), out / 'samples.csv')
    logger.info('Sampled %d endpoints in %d steps, mean distance to line %.4g',
                settings.eval_samples, settings.steps, row['distance_to_line'])
    print(pd.DataFrame([row]).to_string(index=False))
    return 0
