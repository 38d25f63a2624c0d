"""Local SQLite ledger of generation runs and their per-record outcomes."""
import sqlite3
import logging
from collections import Counter
from datetime import datetime, timezone
from typing import Dict, List, Optional

logger = logging.getLogger(__name__)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


class Database:
    """Manages the run ledger stored next to a generated dataset."""

    def __init__(self, db_path: str = "ledger.db"):
        """Initialize database connection.

        Args:
            db_path: Path to SQLite database file
        """
        self.db_path = str(db_path)
        self.conn = None
        self.init_database()

    def init_database(self):
        """Initialize database and create tables if they don't exist."""
        try:
            self.conn = sqlite3.connect(self.db_path)
            self.conn.row_factory = sqlite3.Row

            self.conn.execute("""
                CREATE TABLE IF NOT EXISTS runs (
                    id INTEGER PRIMARY KEY AUTOINCREMENT,
                    seed INTEGER NOT NULL,
                    count INTEGER NOT NULL,
                    mode TEXT NOT NULL,
                    mix_ratio REAL,
                    workers INTEGER NOT NULL,
                    started_at TEXT NOT NULL,
                    finished_at TEXT,
                    succeeded INTEGER,
                    failed INTEGER
                )
            """)

            self.conn.execute("""
                CREATE TABLE IF NOT EXISTS records (
                    run_id INTEGER NOT NULL REFERENCES runs(id),
                    record_index INTEGER NOT NULL,
                    generator TEXT NOT NULL,
                    background_id TEXT,
                    status TEXT NOT NULL,
                    reason TEXT,
                    label_count INTEGER DEFAULT 0,
                    PRIMARY KEY (run_id, record_index)
                )
            """)

            self.conn.commit()
            logger.debug(f"Ledger initialized at {self.db_path}")

        except sqlite3.Error as e:
            logger.error(f"Error initializing ledger: {e}")
            raise

    # ==================== RUNS ====================

    def start_run(self, seed: int, count: int, mode: str, workers: int, mix_ratio: Optional[float] = None) -> int:
        """Open a new run.

        Returns:
            Run ID
        """
        cursor = self.conn.execute(
            "INSERT INTO runs (seed, count, mode, mix_ratio, workers, started_at) VALUES (?, ?, ?, ?, ?, ?)",
            (seed, count, mode, mix_ratio, workers, _now())
        )
        self.conn.commit()
        return cursor.lastrowid

    def finish_run(self, run_id: int, succeeded: int, failed: int):
        self.conn.execute(
            "UPDATE runs SET finished_at = ?, succeeded = ?, failed = ? WHERE id = ?",
            (_now(), succeeded, failed, run_id)
        )
        self.conn.commit()

    def get_runs(self) -> List[Dict]:
        cursor = self.conn.execute("SELECT * FROM runs ORDER BY id")
        return [dict(row) for row in cursor.fetchall()]

    def latest_run_id(self) -> Optional[int]:
        row = self.conn.execute("SELECT MAX(id) FROM runs").fetchone()
        return row[0] if row else None

    # ==================== RECORDS ====================

    def add_records(self, run_id: int, outcomes: List[Dict]):
        """Store per-record outcomes of a run in one transaction.

        Args:
            run_id: Run ID
            outcomes: dicts with record_index, generator, background_id,
                status, reason and label_count
        """
        self.conn.executemany(
            "INSERT OR REPLACE INTO records "
            "(run_id, record_index, generator, background_id, status, reason, label_count) "
            "VALUES (?, ?, ?, ?, ?, ?, ?)",
            [
                (run_id, o["record_index"], o["generator"], o.get("background_id"),
                 o["status"], o.get("reason"), o.get("label_count", 0))
                for o in outcomes
            ]
        )
        self.conn.commit()

    def get_records(self, run_id: int) -> List[Dict]:
        cursor = self.conn.execute(
            "SELECT * FROM records WHERE run_id = ? ORDER BY record_index", (run_id,)
        )
        return [dict(row) for row in cursor.fetchall()]

    def failure_reasons(self, run_id: Optional[int] = None) -> Dict[str, int]:
        """Count failure reasons of a run (latest run by default).

        Returns:
            reason -> number of failed records
        """
        if run_id is None:
            run_id = self.latest_run_id()
        if run_id is None:
            return {}
        cursor = self.conn.execute(
            "SELECT reason FROM records WHERE run_id = ? AND status = 'failed'", (run_id,)
        )
        return dict(Counter(row["reason"] or "unknown" for row in cursor.fetchall()))

    def close(self):
        """Close database connection."""
        if self.conn:
            self.conn.close()
            self.conn = None
