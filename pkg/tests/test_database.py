"""Tests for the run registry."""

import pytest
import tempfile
from pathlib import Path
from sizemorph.database import Database, get_database


@pytest.fixture
def test_db():
    """Create a temporary test database."""
    with tempfile.TemporaryDirectory() as tmpdir:
        db_path = Path(tmpdir) / "test.db"
        db = Database(db_path)
        yield db


def test_start_and_get_run(test_db):
    """Test registering and retrieving a run."""
    run_id = test_db.start_run("gan-a", "gan", "hash1", Path("/tmp/gan-a"))
    run = test_db.get_run("gan-a")
    assert run["id"] == run_id
    assert run["status"] == "running"
    assert run["config_hash"] == "hash1"


def test_get_missing_run(test_db):
    """Test getting a run that doesn't exist."""
    assert test_db.get_run("nonexistent") is None


def test_restart_reuses_run(test_db):
    """Test that starting a run twice reopens it."""
    first = test_db.start_run("gan-a", "gan", "hash1", Path("/tmp/gan-a"))
    test_db.finish_run(first, status="failed")
    second = test_db.start_run("gan-a", "gan", "hash2", Path("/tmp/gan-a"))
    assert first == second
    run = test_db.get_run("gan-a")
    assert run["status"] == "running"
    assert run["config_hash"] == "hash2"


def test_finish_run_summary(test_db):
    """Test storing the final metrics of a run."""
    run_id = test_db.start_run("clf", "classifier", "h", Path("/tmp/clf"))
    test_db.finish_run(run_id, summary={"val_accuracy": 0.93})
    run = test_db.get_run("clf")
    assert run["status"] == "finished"
    assert run["summary"] == {"val_accuracy": 0.93}


def test_latest_checkpoint(test_db, tmp_path):
    """Test that the newest checkpoint on disk wins."""
    run_id = test_db.start_run("gan-a", "gan", "h", tmp_path)
    for step in (10, 20, 30):
        path = tmp_path / f"step_{step:07d}.ckpt"
        path.write_bytes(b"x")
        test_db.add_checkpoint(run_id, step, path)
    (tmp_path / "step_0000030.ckpt").unlink()
    assert test_db.latest_checkpoint(run_id) == (20, tmp_path / "step_0000020.ckpt")


def test_latest_checkpoint_empty(test_db):
    """Test a run without checkpoints."""
    run_id = test_db.start_run("gan-a", "gan", "h", Path("/tmp/gan-a"))
    assert test_db.latest_checkpoint(run_id) is None


def test_get_database_follows_path(tmp_path):
    """Test that the singleton is re-created for a new path."""
    a = get_database(tmp_path / "a.db")
    assert get_database(tmp_path / "a.db") is a
    assert get_database(tmp_path / "b.db") is not a
