import argparse
from typing import Optional

import pandas as pd
from sqlalchemy.ext.asyncio import AsyncSession

from common.cli_commands_list import COMMAND_HELP
from services.exceptions import ConfigurationError
from services.runs import orm_get_runs


def register(subparsers) -> None:
    parser = subparsers.add_parser('history', help=COMMAND_HELP['history'])
    parser.add_argument('--task', default=None, choices=['2d', 'spec'])
    parser.set_defaults(handler=cmd_history, needs_db=True)


async def cmd_history(args: argparse.Namespace, session: Optional[AsyncSession]) -> int:
    """Command history"""
    if session is None:
        raise ConfigurationError('the run registry is disabled (LPCFM_REGISTRY=0)')
    runs = await orm_get_runs(session, args.task)
    if not runs:
        print('No runs recorded yet')
        return 0
    table = pd.DataFrame([{
        'id': run.id,
        'created': run.created,
        'command': run.command,
        'task': run.task,
        'mode': run.mode,
        'seed': run.seed,
        'lambda': run.lam,
        'epochs': run.epochs,
        'status': run.status,
        'final_loss': run.final_loss,
        'out': run.out_dir,
    } for run in runs])
    print(table.to_string(index=False))
    return 0
