import math
from pathlib import Path
from typing import Dict, List, Optional

from sqlalchemy import select
from sqlalchemy.ext.asyncio import AsyncSession

from database.models import Run, RunMetric
from services.logging import logger


def _finite_or_none(value: Optional[float]) -> Optional[float]:
    if value is None:
        return None
    value = float(value)
    return value if math.isfinite(value) else None


async def orm_add_run(session: Optional[AsyncSession], command: str, task: str, lam: float, epochs: int,
                      out_dir: Path, mode: Optional[str] = None, seed: Optional[int] = None,
                      status: str = 'ok', final_loss: Optional[float] = None,
                      metrics: Optional[Dict[str, float]] = None) -> Optional[Run]:
    if session is None:
        return None
    obj = Run(
        command=command,
        task=task,
        mode=mode,
        seed=seed,
        lam=lam,
        epochs=epochs,
        status=status,
        out_dir=str(out_dir),
        final_loss=_finite_or_none(final_loss),
        metrics=[RunMetric(name=name, value=_finite_or_none(value)) for name, value in (metrics or {}).items()],
    )
    session.add(obj)
    await session.commit()
    logger.debug('Recorded %s run %d', command, obj.id)
    return obj


async def orm_get_runs(session: AsyncSession, task: Optional[str] = None) -> List[Run]:
    query = select(Run).order_by(Run.id)
    if task is not None:
        query = query.where(Run.task == task)
    result = await session.execute(query)
    return list(result.scalars().all())
