import os

from sqlalchemy import event
from sqlalchemy.ext.asyncio import AsyncEngine, AsyncSession, async_sessionmaker, create_async_engine
from sqlalchemy.pool import Pool

from database.models import Base


DEFAULT_DB_URL = 'sqlite+aiosqlite:///runs.sqlite3'


@event.listens_for(Pool, "connect")
def enable_foreign_keys(dbapi_connection, connection_record):
    cursor = dbapi_connection.cursor()
    cursor.execute("PRAGMA foreign_keys=ON")
    cursor.close()


def make_engine(url: str = None, echo: bool = None) -> AsyncEngine:
    url = url or os.getenv('DB_URL', DEFAULT_DB_URL)
    if echo is None:
        echo = os.getenv('DB_ECHO', '0').lower() in ('1', 'true', 'yes')
    return create_async_engine(url, connect_args={"check_same_thread": False}, echo=echo)


def make_session_maker(engine: AsyncEngine) -> async_sessionmaker:
    return async_sessionmaker(bind=engine, class_=AsyncSession, expire_on_commit=False)


async def create_db(engine: AsyncEngine):
    async with engine.begin() as conn:
        await conn.run_sync(Base.metadata.create_all)


async def drop_db(engine: AsyncEngine):
    async with engine.begin() as conn:
        await conn.run_sync(Base.metadata.drop_all)
