import argparse
import asyncio
import os
import sys
from typing import List, Optional

from dotenv import find_dotenv, load_dotenv

load_dotenv(find_dotenv(usecwd=True))

from services.logging import logger
from services.exceptions import LpcfmError

from middlewares.db import DataBaseSession

from database.engine import create_db, make_engine, make_session_maker

from handlers import experiments, history, train, verify


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='lpcfm', description='Line-projection conditional flow matching bench')
    subparsers = parser.add_subparsers(dest='command', required=True)
    for module in (verify, train, experiments, history):
        module.register(subparsers)
    return parser


def registry_enabled() -> bool:
    return os.getenv('LPCFM_REGISTRY', '1').lower() not in ('0', 'false', 'no')


async def dispatch(args: argparse.Namespace) -> int:
    engine = None
    session_pool = None
    if args.needs_db and registry_enabled():
        engine = make_engine()
        await create_db(engine)
        session_pool = make_session_maker(engine)
    middleware = DataBaseSession(session_pool=session_pool)
    try:
        return await middleware(lambda data: args.handler(args, data['session']), {})
    finally:
        if engine is not None:
            await engine.dispose()


def main(argv: Optional[List[str]] = None) -> int:
    """Entry point"""
    args = build_parser().parse_args(argv)
    try:
        logger.info('Starting %s', args.command)
        return asyncio.run(dispatch(args)) or 0
    except LpcfmError as ex:
        logger.error(f'{args.command} stopped with error: {ex}')
        return 1
    except Exception as ex:
        logger.error(f'{args.command} crashed: {ex}')
        raise


if __name__ == '__main__':
    sys.exit(main())
