"""Disk cache for the heavy Monte Carlo scenario runs used by the test suite.

Scenario runs are deterministic given (scenario, parallelism-independent
reduction), so their records can be reused across test modules and sessions.
Delete tests/.mc_cache to force recomputation after code changes.
"""

import hashlib
import json
from dataclasses import asdict
from pathlib import Path

from ppcf.harness import Scenario, TableRow, run_scenario_records

CACHE_DIR = Path(__file__).parent / ".mc_cache"


def run_scenario_cached(s: Scenario, parallelism: int = 2):
    """(rows per estimator, raw records), cached on disk by scenario content."""
    key_src = json.dumps(asdict(s), sort_keys=True, default=str)
    key = hashlib.sha256(key_src.encode()).hexdigest()[:24]
    path = CACHE_DIR / f"{key}.json"
    if path.exists():
        payload = json.loads(path.read_text())
        rows = {est: TableRow(**row) for est, row in payload["rows"].items()}
        return rows, payload["records"]
    rows, records = run_scenario_records(s, parallelism=parallelism)
    CACHE_DIR.mkdir(exist_ok=True)
    payload = {"scenario": json.loads(key_src),
               "rows": {est: asdict(row) for est, row in rows.items()},
               "records": records}
    path.write_text(json.dumps(payload))
    return rows, records
