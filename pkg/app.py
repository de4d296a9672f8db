#!/usr/bin/env python3
"""
pauli-zero-lab - batch front door
One task per invocation: scenario file in, JSON report and CSV tables out
"""
import argparse
import logging
import sys
from dataclasses import replace
from typing import List, Optional

from config import Config
from models.errors import PauliLabError, ScenarioError
from models.scenario import TASKS, Scenario
from services.scenario_runner import INTERNAL_ERROR_EXIT_CODE, ScenarioRunner
from storage import ReportStore
from utils.helpers import FormatHelper

logger = logging.getLogger('pauli_zero_lab')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='pauli-zero-lab',
                                     description='Zero modes and spectra of planar Pauli operators')
    sub = parser.add_subparsers(dest='task', required=True)
    for task in TASKS:
        cmd = sub.add_parser(task, help=f'run a {task} scenario')
        cmd.add_argument('scenario', nargs='?' if task == 'cover' else None, help='scenario JSON file')
        cmd.add_argument('--out', help='output directory')
        cmd.add_argument('--tol', type=float, help='quadrature tolerance')
        cmd.add_argument('--threads', type=int, help='worker threads (1 keeps runs byte-identical)')
        cmd.add_argument('--seed', type=int, help='random seed')
        cmd.add_argument('--tau', type=float, help='covering exponent in (0, 1)')
        cmd.add_argument('--rmax', type=float, help='outer radius')
    runs = sub.add_parser('runs', help='show the run index of an output directory')
    runs.add_argument('--out', help='output directory')
    runs.add_argument('--limit', type=int, default=10, help='number of recent runs')
    return parser


def load_scenario(args: argparse.Namespace) -> Scenario:
    """Scenario file, then command-line overrides"""
    if args.scenario:
        scenario = Scenario.load(args.scenario)
        if scenario.task != args.task:
            raise ScenarioError(f"file describes task {scenario.task!r}, not {args.task!r}", 'task')
    else:
        scenario = Scenario.from_dict({'schema': Config.SCHEMA_VERSION, 'task': args.task})
    params = dict(scenario.params)
    for name in ('tau', 'rmax'):
        value = getattr(args, name)
        if value is not None:
            params[name] = value
    Scenario.validate_params(params)
    quad = scenario.quad if args.tol is None else replace(scenario.quad, tol=args.tol)
    seed = scenario.seed if args.seed is None else args.seed
    return replace(scenario, params=params, quad=quad, seed=seed)


def show_runs(store: ReportStore, limit: int) -> int:
    """Print run counts and the most recent runs as JSON"""
    if limit < 1:
        raise ScenarioError("limit must be positive", 'limit')
    print(FormatHelper.canonical_json({'stats': store.get_stats(), 'runs': store.get_recent_runs(limit)}))
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, Config.LOG_LEVEL.upper(), logging.INFO),
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    try:
        Config.validate_config()
    except ValueError as e:
        logger.error("invalid configuration: %s", e)
        return 1
    try:
        if args.task == 'runs':
            return show_runs(ReportStore(args.out or Config.OUT_DIR), args.limit)
        scenario = load_scenario(args)
        store = ReportStore(args.out or scenario.out or Config.OUT_DIR)
        return ScenarioRunner(store, args.threads or Config.THREADS).run(scenario)
    except PauliLabError as e:
        logger.error("%s failed: %s", args.task, e)
        return e.exit_code
    except Exception:
        logger.exception("%s failed unexpectedly", args.task)
        return INTERNAL_ERROR_EXIT_CODE


if __name__ == '__main__':
    sys.exit(main())
