# storage.py
import json
import os
import sqlite3
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Union

from run_config import registry_path


def _connect(db_path: Optional[Union[str, Path]] = None):
    path = Path(db_path) if db_path else registry_path()
    os.makedirs(path.parent, exist_ok=True)
    conn = sqlite3.connect(path)
    conn.execute("PRAGMA journal_mode=WAL;")
    conn.row_factory = sqlite3.Row
    return conn


def init_db(db_path: Optional[Union[str, Path]] = None):
    """Initialize the run registry."""
    conn = _connect(db_path)
    conn.execute(
        """
        CREATE TABLE IF NOT EXISTS runs (
            id INTEGER PRIMARY KEY AUTOINCREMENT,
            ts TEXT NOT NULL,
            kind TEXT NOT NULL,
            experiment TEXT NOT NULL,
            input_kind TEXT NOT NULL,
            seed INTEGER NOT NULL,
            run_dir TEXT NOT NULL,
            checkpoint_path TEXT,
            metrics_path TEXT,
            payload_json TEXT NOT NULL
        );
        """
    )
    conn.execute("CREATE INDEX IF NOT EXISTS idx_runs_ts ON runs(ts DESC);")
    conn.execute(
        "CREATE INDEX IF NOT EXISTS idx_runs_experiment ON runs(experiment, input_kind, seed);"
    )

    # Migration: summary columns added after the first registry layout
    for column in ("total_steps INTEGER", "tokens_seen INTEGER", "val_loss REAL", "val_ppl REAL"):
        try:
            conn.execute(f"ALTER TABLE runs ADD COLUMN {column};")
        except sqlite3.OperationalError:
            pass  # Column already exists

    conn.commit()
    conn.close()


def store_run(record: Dict, db_path: Optional[Union[str, Path]] = None) -> int:
    """Insert a finished train or eval run; returns its row id."""
    ts = record.get("timestamp") or datetime.now(timezone.utc).isoformat()
    conn = _connect(db_path)
    cur = conn.execute(
        """
        INSERT INTO runs (ts, kind, experiment, input_kind, seed, run_dir, checkpoint_path,
                          metrics_path, total_steps, tokens_seen, val_loss, val_ppl, payload_json)
        VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?)
        """,
        (
            ts,
            record.get("kind", "train"),
            record["experiment"],
            record["input_kind"],
            int(record["seed"]),
            str(record["run_dir"]),
            record.get("checkpoint_path") and str(record["checkpoint_path"]),
            record.get("metrics_path") and str(record["metrics_path"]),
            record.get("total_steps"),
            record.get("tokens_seen"),
            record.get("val_loss"),
            record.get("val_ppl"),
            json.dumps(record, default=str),
        ),
    )
    conn.commit()
    row_id = cur.lastrowid
    conn.close()
    return row_id


def _row_to_dict(r: sqlite3.Row) -> Dict:
    return {
        "id": r["id"],
        "timestamp": r["ts"],
        "kind": r["kind"],
        "experiment": r["experiment"],
        "input_kind": r["input_kind"],
        "seed": r["seed"],
        "run_dir": r["run_dir"],
        "checkpoint_path": r["checkpoint_path"],
        "metrics_path": r["metrics_path"],
        "total_steps": r["total_steps"],
        "tokens_seen": r["tokens_seen"],
        "val_loss": r["val_loss"],
        "val_ppl": r["val_ppl"],
        "payload": json.loads(r["payload_json"]),
    }


def query_runs(
    experiment: Optional[str] = None,
    input_kind: Optional[str] = None,
    seed: Optional[int] = None,
    kind: Optional[str] = None,
    limit: int = 100,
    db_path: Optional[Union[str, Path]] = None,
) -> List[Dict]:
    """Most recent runs first."""
    conn = _connect(db_path)
    query = "SELECT * FROM runs WHERE 1=1"
    params: list = []
    if experiment:
        query += " AND experiment = ?"
        params.append(experiment)
    if input_kind:
        query += " AND input_kind = ?"
        params.append(input_kind)
    if seed is not None:
        query += " AND seed = ?"
        params.append(seed)
    if kind:
        query += " AND kind = ?"
        params.append(kind)
    query += " ORDER BY ts DESC, id DESC LIMIT ?"
    params.append(limit)
    rows = conn.execute(query, params).fetchall()
    conn.close()
    return [_row_to_dict(r) for r in rows]


def latest_train_runs(experiment: str, db_path: Optional[Union[str, Path]] = None) -> Dict[tuple, Dict]:
    """{(input_kind, seed): newest train run} for one experiment."""
    conn = _connect(db_path)
    rows = conn.execute(
        """
        SELECT * FROM runs
        WHERE experiment = ? AND kind = 'train'
        ORDER BY ts ASC, id ASC
        """,
        (experiment,),
    ).fetchall()
    conn.close()
    latest: Dict[tuple, Dict] = {}
    for r in rows:
        latest[(r["input_kind"], r["seed"])] = _row_to_dict(r)
    return latest


def get_experiments(db_path: Optional[Union[str, Path]] = None) -> List[Dict]:
    """Experiments with their run count and most recent timestamp."""
    conn = _connect(db_path)
    rows = conn.execute(
        """
        SELECT
            experiment,
            COUNT(*) as run_count,
            MAX(ts) as latest_timestamp
        FROM runs
        GROUP BY experiment
        ORDER BY latest_timestamp DESC
        """
    ).fetchall()
    conn.close()
    return [
        {
            "experiment": r["experiment"],
            "run_count": r["run_count"],
            "latest_timestamp": r["latest_timestamp"],
        }
        for r in rows
    ]
