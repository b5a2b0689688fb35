"""
Run ledger

SQLite record of every pipeline run: the command, its config echo and
seeds, the artifacts it produced (with sha256) and the training history
rows, so `report` can be rebuilt from a run id.
"""

import json
import logging
import os
import sqlite3
import threading
from datetime import datetime
from typing import Dict, List, Optional

from dcdnn.errors import ConfigurationError
from dcdnn.trainer import TrainHistory

logger = logging.getLogger(__name__)

SCHEMA = [
    '''
    CREATE TABLE IF NOT EXISTS runs (
        id INTEGER PRIMARY KEY AUTOINCREMENT,
        command TEXT NOT NULL,
        argv TEXT,
        config TEXT,
        seed INTEGER,
        status TEXT DEFAULT 'running',
        message TEXT,
        started_at TIMESTAMP DEFAULT CURRENT_TIMESTAMP,
        finished_at TIMESTAMP
    )
    ''',
    '''
    CREATE TABLE IF NOT EXISTS artifacts (
        id INTEGER PRIMARY KEY AUTOINCREMENT,
        run_id INTEGER NOT NULL,
        path TEXT NOT NULL,
        kind TEXT,
        sha256 TEXT,
        FOREIGN KEY (run_id) REFERENCES runs(id)
    )
    ''',
    '''
    CREATE TABLE IF NOT EXISTS history (
        id INTEGER PRIMARY KEY AUTOINCREMENT,
        run_id INTEGER NOT NULL,
        payload TEXT NOT NULL,
        FOREIGN KEY (run_id) REFERENCES runs(id)
    )
    ''',
]


def create_schema(db_path: str) -> None:
    db_dir = os.path.dirname(db_path)
    if db_dir and not os.path.exists(db_dir):
        os.makedirs(db_dir, exist_ok=True)
    conn = sqlite3.connect(db_path)
    cursor = conn.cursor()
    for statement in SCHEMA:
        cursor.execute(statement)
    conn.commit()
    conn.close()


class RunStore:
    """Thread-safe ledger; one connection per call"""

    def __init__(self, db_path: str):
        self.db_path = db_path
        self.lock = threading.Lock()
        self.init_db()

    def init_db(self):
        create_schema(self.db_path)

    def _connect(self) -> sqlite3.Connection:
        conn = sqlite3.connect(self.db_path)
        conn.row_factory = sqlite3.Row
        return conn

    # ============================================================
    # RUNS
    # ============================================================

    def start_run(self, command: str, argv: List[str], config: Dict, seed: int) -> int:
        with self.lock:
            conn = self._connect()
            cursor = conn.cursor()
            cursor.execute(
                'INSERT INTO runs (command, argv, config, seed) VALUES (?, ?, ?, ?)',
                (command, json.dumps(argv), json.dumps(config, sort_keys=True), seed),
            )
            run_id = cursor.lastrowid
            conn.commit()
            conn.close()
            return run_id

    def finish_run(self, run_id: int, status: str = "ok", message: str = None):
        with self.lock:
            conn = self._connect()
            conn.execute(
                'UPDATE runs SET status = ?, message = ?, finished_at = ? WHERE id = ?',
                (status, message, datetime.now().isoformat(timespec="seconds"), run_id),
            )
            conn.commit()
            conn.close()

    def get_run(self, run_id: int) -> Optional[Dict]:
        conn = self._connect()
        row = conn.execute('SELECT * FROM runs WHERE id = ?', (run_id,)).fetchone()
        conn.close()
        if not row:
            return None
        run = dict(row)
        run["argv"] = json.loads(run["argv"]) if run["argv"] else []
        run["config"] = json.loads(run["config"]) if run["config"] else {}
        return run

    def list_runs(self, limit: int = 20, command: str = None) -> List[Dict]:
        conn = self._connect()
        if command:
            rows = conn.execute(
                'SELECT id, command, status, seed, started_at, finished_at FROM runs '
                'WHERE command = ? ORDER BY id DESC LIMIT ?', (command, limit)
            ).fetchall()
        else:
            rows = conn.execute(
                'SELECT id, command, status, seed, started_at, finished_at FROM runs ORDER BY id DESC LIMIT ?',
                (limit,)
            ).fetchall()
        conn.close()
        return [dict(row) for row in rows]

    # ============================================================
    # ARTIFACTS AND HISTORY
    # ============================================================

    def add_artifact(self, run_id: int, path: str, kind: str, sha256: str):
        with self.lock:
            conn = self._connect()
            conn.execute(
                'INSERT INTO artifacts (run_id, path, kind, sha256) VALUES (?, ?, ?, ?)',
                (run_id, path, kind, sha256),
            )
            conn.commit()
            conn.close()

    def get_artifacts(self, run_id: int) -> List[Dict]:
        conn = self._connect()
        rows = conn.execute('SELECT path, kind, sha256 FROM artifacts WHERE run_id = ? ORDER BY id',
                            (run_id,)).fetchall()
        conn.close()
        return [dict(row) for row in rows]

    def save_history(self, run_id: int, history: TrainHistory):
        with self.lock:
            conn = self._connect()
            conn.execute('INSERT INTO history (run_id, payload) VALUES (?, ?)',
                         (run_id, json.dumps(history.to_dict())))
            conn.commit()
            conn.close()

    def get_history(self, run_id: int) -> TrainHistory:
        conn = self._connect()
        row = conn.execute('SELECT payload FROM history WHERE run_id = ? ORDER BY id DESC LIMIT 1',
                           (run_id,)).fetchone()
        conn.close()
        if not row:
            raise ConfigurationError(f"run {run_id} has no training history in {self.db_path}")
        return TrainHistory.from_dict(json.loads(row["payload"]))
