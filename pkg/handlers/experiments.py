import argparse
import asyncio
from typing import List, Optional, Tuple

import pandas as pd
from sqlalchemy.ext.asyncio import AsyncSession

from common.cli_commands_list import COMMAND_HELP
from handlers.common import EXPERIMENT_SETTINGS, add_setting_arguments, settings_from_args
from services.bench import SWEEP_PARAMETERS, block_ablation, compare_async, oracle_path_lengths, sweep, vcs_ablation
from services.exceptions import ConfigurationError
from services.geometry import Mode
from services.report_generator import export_workbook, plot_comparison, prepare_output, write_csv
from services.runs import orm_add_run
from services.tasks import get_task


def register(subparsers) -> None:
    parser = subparsers.add_parser('compare', help=COMMAND_HELP['compare'])
    add_setting_arguments(parser, EXPERIMENT_SETTINGS + ['budgets'])
    parser.add_argument('--oracle', action='store_true', help='use the exact conditional field instead of training')
    parser.add_argument('--sweep', metavar='NAME=V1,V2,...', default=None,
                        help=f'repeat the comparison per value of one of: {", ".join(SWEEP_PARAMETERS)}')
    parser.add_argument('--path-samples', type=int, default=10_000, help='draws for the exact-field path lengths')
    parser.set_defaults(handler=cmd_compare, needs_db=True)

    for name, handler in (('ablate-vcs', cmd_ablate_vcs), ('ablate-blocks', cmd_ablate_blocks)):
        parser = subparsers.add_parser(name, help=COMMAND_HELP[name])
        add_setting_arguments(parser, EXPERIMENT_SETTINGS)
        parser.add_argument('--oracle', action='store_true', help='use the exact conditional field instead of training')
        parser.set_defaults(handler=handler, needs_db=True)


def parse_sweep(text: str) -> Tuple[str, List[int]]:
    name, _, values = text.partition('=')
    name = name.strip().replace('-', '_')
    if name not in SWEEP_PARAMETERS or not values:
        raise ConfigurationError(f'--sweep expects NAME=V1,V2 with NAME in {", ".join(SWEEP_PARAMETERS)}, got {text!r}')
    try:
        parsed = [int(v) for v in values.split(',') if v.strip()]
    except ValueError as e:
        raise ConfigurationError(f'--sweep values must be integers: {e}') from e
    if not parsed or any(v < 1 for v in parsed):
        raise ConfigurationError('--sweep values must be positive integers')
    return name, parsed


async def cmd_compare(args: argparse.Namespace, session: Optional[AsyncSession]) -> int:
    """Command compare"""
    settings = settings_from_args(args)
    sweep_spec = parse_sweep(args.sweep) if args.sweep else None
    task = get_task(settings.task)
    cfg_lp, cfg_ot = settings.train_config(Mode.LP), settings.train_config(Mode.OT)
    comparison = await compare_async(
        task, settings.seeds, cfg_lp, cfg_ot, settings.budgets,
        eval_samples=settings.eval_samples, vcs=settings.vcs, oracle=args.oracle,
    )
    path_lengths = await asyncio.to_thread(oracle_path_lengths, task, settings.resolved_lambda,
                                           args.path_samples, settings.seeds[0])
    out = prepare_output(settings.out)
    claims = pd.DataFrame([{'claim': name, 'holds': value} for name, value in comparison.claims.items()])
    sheets = {'cells': comparison.cells, 'summary': comparison.summary, 'claims': claims,
              'path_lengths': path_lengths}
    write_csv(comparison.cells, out / 'compare_cells.csv')
    write_csv(comparison.summary, out / 'compare_summary.csv')
    write_csv(path_lengths, out / 'oracle_path_lengths.csv')
    plot_comparison(comparison.summary, ('LP', 'OT'), out / 'compare.svg')
    if sweep_spec is not None:
        parameter, values = sweep_spec
        sheets['sweep'] = await asyncio.to_thread(
            sweep, task, settings.seeds, cfg_lp, cfg_ot, settings.budgets, parameter, values,
            eval_samples=settings.eval_samples, vcs=settings.vcs, oracle=args.oracle,
        )
        write_csv(sheets['sweep'], out / f'compare_sweep_{parameter}.csv')
    export_workbook(sheets, out / 'report.xlsx', title=f'LP vs OT on {task.name}')

    metrics = {f'distance_{label}@{row.budget}': getattr(row, f'distance_{label}')
               for row in comparison.summary.itertuples() for label in ('LP', 'OT')}
    metrics.update({name: float(value) for name, value in comparison.claims.items()})
    metrics.update({f'path_length_{row.method}': row.mean for row in path_lengths.itertuples()})
    failed = int((comparison.cells['status'] != 'ok').sum())
    await orm_add_run(session, 'compare', task.name, settings.resolved_lambda, settings.epochs, out,
                      status='ok' if not failed else f'{failed} failed', metrics=metrics)
    print(comparison.summary.to_string(index=False))
    print(claims.to_string(index=False))
    print(path_lengths.to_string(index=False))
    if 'sweep' in sheets:
        print(sheets['sweep'].to_string(index=False))
    return 0


async def _ablation(args: argparse.Namespace, session: Optional[AsyncSession], command: str, run, filename: str) -> int:
    settings = settings_from_args(args)
    task = get_task(settings.task)
    table = await asyncio.to_thread(run, task, settings.train_config(), settings.seeds, settings.steps,
                                    eval_samples=settings.eval_samples, oracle=args.oracle)
    out = prepare_output(settings.out)
    write_csv(table, out / filename)
    export_workbook({command: table}, out / 'report.xlsx', title=f'{command} on {task.name}')
    key_columns = [c for c in table.columns if table[c].dtype == object]
    metrics = {
        '/'.join(str(row[c]) for c in key_columns) + ' distance_to_line': row['distance_to_line']
        for _, row in table.iterrows()
    }
    await orm_add_run(session, command, task.name, settings.resolved_lambda, settings.epochs, out,
                      status='ok' if not table['failed'].any() else 'failed cells', metrics=metrics)
    print(table.to_string(index=False))
    return 0


async def cmd_ablate_vcs(args: argparse.Namespace, session: Optional[AsyncSession]) -> int:
    """Command ablate-vcs"""
    return await _ablation(args, session, 'ablate-vcs', vcs_ablation, 'vcs_ablation.csv')


async def cmd_ablate_blocks(args: argparse.Namespace, session: Optional[AsyncSession]) -> int:
    """Command ablate-blocks"""
    return await _ablation(args, session, 'ablate-blocks', block_ablation, 'block_ablation.csv')
