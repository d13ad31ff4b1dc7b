import argparse
from pathlib import Path
from typing import List, Optional

import numpy as np
from sqlalchemy.ext.asyncio import AsyncSession

from common.cli_commands_list import COMMAND_HELP
from services.report_generator import check_table, write_csv
from services.signal import StftConfig, peak_normalize, read_wav, spectrogram_frame, stft, synthetic_tones
from services.verification import CheckResult, geometry_suite, gradcheck_suite, signal_suite


def register(subparsers) -> None:
    parser = subparsers.add_parser('verify', help=COMMAND_HELP['verify'])
    parser.add_argument('suite', choices=['geometry', 'signal'])
    parser.add_argument('--wav', type=Path, default=None, help='16-bit PCM mono file to check as well')
    parser.add_argument('--dump', type=Path, default=None, metavar='FILE', help='write a spectrogram CSV')
    parser.add_argument('--seed', type=int, default=0)
    parser.set_defaults(handler=cmd_verify, needs_db=False)

    parser = subparsers.add_parser('gradcheck', help=COMMAND_HELP['gradcheck'])
    parser.add_argument('--models', type=int, default=20)
    parser.add_argument('--seed', type=int, default=0)
    parser.set_defaults(handler=cmd_gradcheck, needs_db=False)


def _report(results: List[CheckResult]) -> int:
    print(check_table(results).to_string(index=False))
    return 0 if all(r.passed for r in results) else 1


async def cmd_verify(args: argparse.Namespace, session: Optional[AsyncSession]) -> int:
    """Command verify"""
    if args.suite == 'geometry':
        return _report(geometry_suite(seed=args.seed))
    results = signal_suite(seed=args.seed, wav=args.wav)
    if args.dump is not None:
        config = StftConfig()
        if args.wav is not None:
            audio = peak_normalize(read_wav(args.wav)[0])
        else:
            audio = synthetic_tones(np.random.default_rng(args.seed), 1, 4 * config.n_fft)[0]
        write_csv(spectrogram_frame(stft(audio, config)), args.dump)
    return _report(results)


async def cmd_gradcheck(args: argparse.Namespace, session: Optional[AsyncSession]) -> int:
    """Command gradcheck"""
    return _report(gradcheck_suite(models=args.models, seed=args.seed))
