from typing import Any, Awaitable, Callable, Dict, Optional

from sqlalchemy.ext.asyncio import AsyncSession, async_sessionmaker


Handler = Callable[[Dict[str, Any]], Awaitable[Any]]


class DataBaseSession:
    """Opens one AsyncSession per command and hands it over as data['session'].

    Without a session pool the handler gets session=None and nothing is recorded.
    """
    def __init__(self, session_pool: Optional[async_sessionmaker]):
        self.session_pool = session_pool

    async def __call__(self, handler: Handler, data: Dict[str, Any]) -> Any:
        if self.session_pool is None:
            data['session'] = None
            return await handler(data)
        async with self.session_pool() as session:
            data['session'] = session
            return await handler(data)
