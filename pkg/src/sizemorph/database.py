"""SQLite registry of runs and their checkpoints."""

from __future__ import annotations

import json
from datetime import datetime
from pathlib import Path
from typing import Optional

from sqlalchemy import Column, DateTime, ForeignKey, Integer, String, Text, create_engine
from sqlalchemy.orm import declarative_base, sessionmaker

from . import config

Base = declarative_base()


class Run(Base):
    """One invocation of a training or evaluation command."""
    __tablename__ = "runs"

    id = Column(Integer, primary_key=True)
    name = Column(String(200), nullable=False, unique=True)
    kind = Column(String(40), nullable=False)  # "classifier", "gan", "evaluate", ...
    config_hash = Column(String(32), nullable=False)
    out_dir = Column(Text, nullable=False)
    status = Column(String(20), default="running")  # running / finished / failed / interrupted
    summary = Column(Text, default="{}")
    created_at = Column(DateTime, default=datetime.utcnow)
    updated_at = Column(DateTime, default=datetime.utcnow)


class CheckpointRecord(Base):
    """A checkpoint file written by a run."""
    __tablename__ = "checkpoints"

    id = Column(Integer, primary_key=True)
    run_id = Column(Integer, ForeignKey("runs.id"), nullable=False)
    step = Column(Integer, nullable=False)
    path = Column(Text, nullable=False)
    created_at = Column(DateTime, default=datetime.utcnow)


class Database:
    """Run registry stored next to the outputs."""

    def __init__(self, db_path: Optional[Path] = None):
        self.db_path = db_path or config.output_root() / config.REGISTRY_DB_NAME
        self.db_path.parent.mkdir(parents=True, exist_ok=True)

        self.engine = create_engine(f"sqlite:///{self.db_path}")
        Base.metadata.create_all(self.engine)
        self.Session = sessionmaker(bind=self.engine)

    def start_run(self, name: str, kind: str, config_hash: str, out_dir: Path) -> int:
        """Register a run (or reopen the run of the same name) and return its id."""
        session = self.Session()
        try:
            run = session.query(Run).filter_by(name=name).first()
            if run:
                run.status = "running"
                run.config_hash = config_hash
                run.updated_at = datetime.utcnow()
            else:
                run = Run(name=name, kind=kind, config_hash=config_hash, out_dir=str(out_dir))
                session.add(run)
            session.commit()
            return run.id
        finally:
            session.close()

    def finish_run(self, run_id: int, status: str = "finished", summary: Optional[dict] = None):
        session = self.Session()
        try:
            run = session.get(Run, run_id)
            if run is None:
                return
            run.status = status
            run.summary = json.dumps(summary or {}, sort_keys=True)
            run.updated_at = datetime.utcnow()
            session.commit()
        finally:
            session.close()

    def get_run(self, name: str) -> Optional[dict]:
        """Get a run by name."""
        session = self.Session()
        try:
            run = session.query(Run).filter_by(name=name).first()
            if run is None:
                return None
            return {
                "id": run.id,
                "name": run.name,
                "kind": run.kind,
                "config_hash": run.config_hash,
                "out_dir": run.out_dir,
                "status": run.status,
                "summary": json.loads(run.summary or "{}"),
            }
        finally:
            session.close()

    def add_checkpoint(self, run_id: int, step: int, path: Path):
        """Record a checkpoint written by a run."""
        session = self.Session()
        try:
            session.add(CheckpointRecord(run_id=run_id, step=step, path=str(path)))
            session.commit()
        finally:
            session.close()

    def latest_checkpoint(self, run_id: int) -> Optional[tuple[int, Path]]:
        """(step, path) of the newest checkpoint of a run whose file still exists."""
        session = self.Session()
        try:
            records = session.query(CheckpointRecord).filter_by(run_id=run_id).order_by(
                CheckpointRecord.step.desc(), CheckpointRecord.id.desc()
            ).all()
            for record in records:
                if Path(record.path).is_file():
                    return record.step, Path(record.path)
            return None
        finally:
            session.close()


_database: Optional[Database] = None


def get_database(db_path: Optional[Path] = None) -> Database:
    """Get or create the registry for the current output root."""
    global _database
    path = db_path or config.output_root() / config.REGISTRY_DB_NAME
    if _database is None or _database.db_path != path:
        _database = Database(path)
    return _database
