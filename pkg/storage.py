import os
import sqlite3
from typing import Any, Dict, List, Optional

import pandas as pd

from config import Config
from utils.helpers import FormatHelper


class ReportStore:
    """Reports as sorted-key JSON, tables as CSV, and a small sqlite index of runs"""

    def __init__(self, out_dir=None):
        self.out_dir = out_dir or Config.OUT_DIR
        os.makedirs(self.out_dir, exist_ok=True)
        self.db_path = os.path.join(self.out_dir, 'runs.db')
        self.init_database()

    def init_database(self):
        """Initialize the run index"""
        with sqlite3.connect(self.db_path) as conn:
            conn.execute('''
                CREATE TABLE IF NOT EXISTS runs (
                    id INTEGER PRIMARY KEY AUTOINCREMENT,
                    scenario_hash TEXT NOT NULL,
                    task TEXT NOT NULL,
                    exit_code INTEGER NOT NULL,
                    message TEXT,
                    report_path TEXT,
                    created_at DATETIME DEFAULT CURRENT_TIMESTAMP
                )
            ''')
            conn.execute('CREATE INDEX IF NOT EXISTS idx_scenario_hash ON runs(scenario_hash)')

    def save_report(self, name: str, report: Dict[str, Any], scenario: Dict[str, Any]) -> str:
        """Write report.json with scenario hash and tool version; identical inputs give identical bytes"""
        payload = dict(report)
        payload['scenario_hash'] = FormatHelper.scenario_hash(scenario)
        payload['tool_version'] = Config.TOOL_VERSION
        payload['schema'] = Config.SCHEMA_VERSION
        path = os.path.join(self.out_dir, f'{name}.json')
        with open(path, 'w', encoding='utf-8', newline='\n') as fh:
            fh.write(FormatHelper.canonical_json(payload))
            fh.write('\n')
        return path

    def save_table(self, name: str, frame: pd.DataFrame) -> str:
        path = os.path.join(self.out_dir, f'{name}.csv')
        frame.to_csv(path, index=False, float_format='%.15g', lineterminator='\n')
        return path

    def log_run(self, scenario: Dict[str, Any], task: str, exit_code: int, message: Optional[str] = None,
                report_path: Optional[str] = None):
        """Record one invocation in the run index"""
        with sqlite3.connect(self.db_path) as conn:
            conn.execute('''
                INSERT INTO runs (scenario_hash, task, exit_code, message, report_path)
                VALUES (?, ?, ?, ?, ?)
            ''', (FormatHelper.scenario_hash(scenario), task, exit_code, message, report_path))

    def get_recent_runs(self, limit=10) -> List[Dict[str, Any]]:
        with sqlite3.connect(self.db_path) as conn:
            conn.row_factory = sqlite3.Row
            cursor = conn.execute('SELECT * FROM runs ORDER BY id DESC LIMIT ?', (limit,))
            return [dict(row) for row in cursor.fetchall()]

    def get_stats(self) -> Dict[str, Any]:
        """Run counts by outcome"""
        with sqlite3.connect(self.db_path) as conn:
            cursor = conn.execute('''
                SELECT
                    COUNT(*) as total_runs,
                    COUNT(CASE WHEN exit_code = 0 THEN 1 END) as succeeded,
                    COUNT(CASE WHEN exit_code != 0 THEN 1 END) as failed
                FROM runs
            ''')
            return dict(zip(('total_runs', 'succeeded', 'failed'), cursor.fetchone()))
