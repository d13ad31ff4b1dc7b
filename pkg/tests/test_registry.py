import asyncio
import math

import pytest

from database.engine import create_db, drop_db, make_engine, make_session_maker
from middlewares.db import DataBaseSession
from services.runs import orm_add_run, orm_get_runs


def run_with_session(db_url, body):
    async def go():
        engine = make_engine(db_url)
        await create_db(engine)
        try:
            async with make_session_maker(engine)() as session:
                return await body(session)
        finally:
            await drop_db(engine)
            await engine.dispose()

    return asyncio.run(go())


@pytest.fixture
def db_url(tmp_path):
    return f'sqlite+aiosqlite:///{tmp_path / "runs.sqlite3"}'


class TestRuns:
    def test_add_and_list(self, db_url, tmp_path):
        async def body(session):
            await orm_add_run(session, 'train', '2d', 0.05, 10, tmp_path, mode='lp', seed=1,
                              final_loss=0.25, metrics={'distance_to_line@1': 0.04})
            await orm_add_run(session, 'compare', 'spec', 1e-4, 5, tmp_path)
            return await orm_get_runs(session)

        runs = run_with_session(db_url, body)
        assert [run.command for run in runs] == ['train', 'compare']
        first = runs[0]
        assert (first.task, first.mode, first.seed, first.lam, first.status) == ('2d', 'lp', 1, 0.05, 'ok')
        assert first.final_loss == 0.25
        assert [(m.name, m.value) for m in first.metrics] == [('distance_to_line@1', 0.04)]
        assert runs[1].mode is None and runs[1].metrics == []

    def test_non_finite_values_stored_as_null(self, db_url, tmp_path):
        async def body(session):
            await orm_add_run(session, 'train', '2d', 0.05, 10, tmp_path, status='failed',
                              final_loss=math.nan, metrics={'distance_to_line@1': math.inf})
            return await orm_get_runs(session)

        run = run_with_session(db_url, body)[0]
        assert run.status == 'failed'
        assert run.final_loss is None
        assert run.metrics[0].value is None

    def test_filter_by_task(self, db_url, tmp_path):
        async def body(session):
            for task in ('2d', 'spec', '2d'):
                await orm_add_run(session, 'train', task, 0.05, 1, tmp_path)
            return await orm_get_runs(session, task='2d')

        assert [run.task for run in run_with_session(db_url, body)] == ['2d', '2d']

    def test_without_session(self, tmp_path):
        assert asyncio.run(orm_add_run(None, 'train', '2d', 0.05, 1, tmp_path)) is None


class TestMiddleware:
    def test_session_is_handed_over(self, db_url):
        async def go():
            engine = make_engine(db_url)
            try:
                seen = {}

                async def handler(data):
                    seen['session'] = data['session']
                    return 7

                result = await DataBaseSession(make_session_maker(engine))(handler, {})
                return result, seen['session']
            finally:
                await engine.dispose()

        result, session = asyncio.run(go())
        assert result == 7
        assert session is not None

    def test_no_pool_gives_none(self):
        async def handler(data):
            return data['session']

        assert asyncio.run(DataBaseSession(None)(handler, {})) is None
