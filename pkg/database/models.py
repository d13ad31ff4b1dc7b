from typing import Optional

from sqlalchemy import DateTime, Float, ForeignKey, Index, Integer, String, func
from sqlalchemy.orm import DeclarativeBase, Mapped, mapped_column, relationship


class Base(DeclarativeBase):
    created: Mapped[DateTime] = mapped_column(DateTime, default=func.now())
    updated: Mapped[DateTime] = mapped_column(DateTime, default=func.now(), onupdate=func.now())


class Run(Base):
    __tablename__ = 'run'

    id: Mapped[int] = mapped_column(primary_key=True, autoincrement=True)
    command: Mapped[str] = mapped_column(String(32), nullable=False)
    task: Mapped[str] = mapped_column(String(16), nullable=False)
    mode: Mapped[Optional[str]] = mapped_column(String(8))
    seed: Mapped[Optional[int]] = mapped_column(Integer)
    lam: Mapped[float] = mapped_column(Float, nullable=False)
    epochs: Mapped[int] = mapped_column(Integer, nullable=False)
    status: Mapped[str] = mapped_column(String(16), default='ok', nullable=False)
    out_dir: Mapped[str] = mapped_column(String, nullable=False)
    final_loss: Mapped[Optional[float]] = mapped_column(Float)

    metrics: Mapped[list["RunMetric"]] = relationship(
        "RunMetric", back_populates="run", cascade="all, delete-orphan", lazy="selectin")

    __table_args__ = (
        Index('idx_run_task', 'task'),
    )


class RunMetric(Base):
    __tablename__ = 'run_metric'

    id: Mapped[int] = mapped_column(primary_key=True, autoincrement=True)
    run_id: Mapped[int] = mapped_column(ForeignKey("run.id", ondelete="CASCADE"), nullable=False)
    name: Mapped[str] = mapped_column(String(64), nullable=False)
    value: Mapped[Optional[float]] = mapped_column(Float)

    run: Mapped["Run"] = relationship("Run", back_populates="metrics")
