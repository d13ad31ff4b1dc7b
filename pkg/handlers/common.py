import argparse
from typing import Iterable

from services.config import ExperimentSettings, resolve_settings
from services.geometry import Mode


def _flag(name: str) -> str:
    return '--' + name.replace('_', '-')


# argparse keyword arguments per setting; every default is None so the config file can fill gaps
SETTING_ARGUMENTS = {
    'task': dict(choices=['2d', 'spec']),
    'mode': dict(choices=[m.value for m in Mode]),
    'lam': dict(type=float, flag='--lambda', metavar='F'),
    'epochs': dict(type=int),
    'batch_size': dict(type=int),
    'steps_per_epoch': dict(type=int),
    'learning_rate': dict(type=float),
    'lr_decay': dict(type=float),
    'optimizer': dict(choices=['adam', 'sgd']),
    'seed': dict(type=int),
    'hidden': dict(type=int),
    'time_embedding_width': dict(type=int),
    'dataset_size': dict(type=int),
    'steps': dict(type=int),
    'vcs': dict(action='store_const', const=True),
    'seeds': dict(metavar='S1,S2,...'),
    'budgets': dict(metavar='B1,B2,...'),
    'eval_samples': dict(type=int),
    'out': dict(metavar='DIR'),
}

TRAINING_SETTINGS = ['task', 'mode', 'lam', 'epochs', 'batch_size', 'steps_per_epoch', 'learning_rate',
                     'lr_decay', 'optimizer', 'seed', 'hidden', 'time_embedding_width', 'dataset_size', 'out']
EXPERIMENT_SETTINGS = [name for name in TRAINING_SETTINGS if name not in ('mode', 'seed')] + [
    'seeds', 'eval_samples', 'steps', 'vcs']


def add_setting_arguments(parser: argparse.ArgumentParser, names: Iterable[str]) -> None:
    parser.add_argument('--config', metavar='FILE', default=None, help='KEY=value settings file')
    for name in names:
        kwargs = dict(SETTING_ARGUMENTS[name])
        flag = kwargs.pop('flag', _flag(name))
        field = ExperimentSettings.model_fields[name]
        parser.add_argument(flag, dest=name, default=None, help=field.description, **kwargs)


def settings_from_args(args: argparse.Namespace) -> ExperimentSettings:
    return resolve_settings(vars(args), getattr(args, 'config', None))
