#!/usr/bin/env python3
"""
Run Ledger Setup Script
Creates the sqlite run ledger (runs, artifacts, history tables)
"""

import os
import sqlite3
import sys

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), '..'))

from config import config
from dcdnn.run_store import create_schema


def init_run_store(db_path: str) -> bool:
    """Create the ledger schema; safe to run on an existing ledger"""
    existed = os.path.exists(db_path)
    print(f"[INFO] {'Updating' if existed else 'Creating'} run ledger at: {db_path}")
    try:
        create_schema(db_path)
    except (sqlite3.Error, OSError) as e:
        print(f"[ERROR] Could not create run ledger: {e}")
        return False

    conn = sqlite3.connect(db_path)
    tables = [row[0] for row in conn.execute(
        "SELECT name FROM sqlite_master WHERE type='table' AND name IN ('runs', 'artifacts', 'history')"
    )]
    runs = conn.execute("SELECT COUNT(*) FROM runs").fetchone()[0]
    conn.close()
    print(f"[INFO] Tables: {', '.join(sorted(tables))}")
    print(f"[INFO] Recorded runs: {runs}")
    return len(tables) == 3


def main():
    db_path = sys.argv[1] if len(sys.argv) > 1 else config.RUN_DB_PATH
    success = init_run_store(db_path)
    if success:
        print("[OK] Run ledger ready")
        print("[INFO] List runs with: python main.py runs")
    else:
        print("[ERROR] Run ledger setup failed")
    sys.exit(0 if success else 1)


if __name__ == '__main__':
    main()
