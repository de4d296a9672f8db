#!/usr/bin/env python3
"""
Batch front door: scenario files, exit codes, artifacts and the run index
"""
import json
import os

import pandas as pd
import pytest

from app import main
from services.scenario_runner import ScenarioRunner
from storage import ReportStore


def write_scenario(tmp_path, payload, name='scenario.json'):
    path = tmp_path / name
    path.write_text(json.dumps(payload), encoding='utf-8')
    return str(path)


def verify_scenario(declared=None):
    params = {'checks': ['entire'], 'domain_radius': 2.0, 'max_degree': 2, 'mollifier': {'radius': 0.25}}
    if declared is not None:
        params['declared'] = {'entire': declared}
    return {'schema': 1, 'task': 'verify', 'field': {'continuous': [{'kind': 'Constant', 'B': 1.0}]},
            'params': params}


class TestCover:
    def test_writes_report_and_table(self, out_dir):
        assert main(['cover', '--tau', '0.5', '--rmax', '64', '--out', out_dir, '--threads', '1']) == 0
        with open(os.path.join(out_dir, 'cover.json'), encoding='utf-8') as fh:
            report = json.load(fh)
        assert report['task'] == 'cover'
        assert report['bounds_hold'] is True
        table = pd.read_csv(os.path.join(out_dir, 'covering.csv'))
        assert len(table) == report['tiles']
        assert list(table.columns) == ['center_x', 'center_y', 'side', 'layer']

    def test_identical_runs_give_identical_bytes(self, tmp_path):
        first, second = str(tmp_path / 'a'), str(tmp_path / 'b')
        for out in (first, second):
            assert main(['cover', '--tau', '0.5', '--rmax', '32', '--out', out, '--threads', '1']) == 0
        for name in ('cover.json', 'covering.csv'):
            with open(os.path.join(first, name), 'rb') as a, open(os.path.join(second, name), 'rb') as b:
                assert a.read() == b.read()

    def test_tau_out_of_range(self, out_dir):
        assert main(['cover', '--tau', '1.5', '--out', out_dir]) == 1


class TestScenarioErrors:
    def test_unknown_gauge(self, tmp_path, out_dir):
        path = write_scenario(tmp_path, {'schema': 1, 'task': 'potential',
                                         'field': {'solenoids': [[0, 0, 0.4]], 'gauge': 'Coulomb'}})
        assert main(['potential', path, '--out', out_dir]) == 1

    def test_missing_file(self, tmp_path, out_dir):
        assert main(['potential', str(tmp_path / 'nowhere.json'), '--out', out_dir]) == 1

    def test_task_mismatch(self, tmp_path, out_dir):
        path = write_scenario(tmp_path, {'schema': 1, 'task': 'cover'})
        assert main(['potential', path, '--out', out_dir]) == 1

    def test_bad_parameter(self, tmp_path, out_dir):
        path = write_scenario(tmp_path, {'schema': 1, 'task': 'cover', 'params': {'rmax': -3}})
        assert main(['cover', path, '--out', out_dir]) == 1

    def test_unsupported_schema(self, tmp_path, out_dir):
        path = write_scenario(tmp_path, {'schema': 99, 'task': 'cover'})
        assert main(['cover', path, '--out', out_dir]) == 1


class TestVerifyExitCodes:
    def test_no_declared_constant(self, tmp_path, out_dir):
        path = write_scenario(tmp_path, verify_scenario())
        assert main(['verify', path, '--out', out_dir, '--threads', '1']) == 0
        with open(os.path.join(out_dir, 'verify.json'), encoding='utf-8') as fh:
            report = json.load(fh)
        assert report['violations'] == []
        assert os.path.exists(os.path.join(out_dir, 'verify_rows.csv'))

    def test_declared_constant_violated(self, tmp_path, out_dir):
        path = write_scenario(tmp_path, verify_scenario(declared=0.5))
        assert main(['verify', path, '--out', out_dir, '--threads', '1']) == 4
        with open(os.path.join(out_dir, 'verify.json'), encoding='utf-8') as fh:
            assert json.load(fh)['violations'] == ['entire']

    def test_missing_mollifier(self, tmp_path, out_dir):
        scenario = verify_scenario()
        del scenario['params']['mollifier']
        path = write_scenario(tmp_path, scenario)
        assert main(['verify', path, '--out', out_dir]) == 1


class TestRunIndex:
    def test_runs_are_recorded(self, tmp_path, out_dir):
        assert main(['cover', '--tau', '0.5', '--rmax', '16', '--out', out_dir, '--threads', '1']) == 0
        path = write_scenario(tmp_path, verify_scenario(declared=0.5))
        assert main(['verify', path, '--out', out_dir, '--threads', '1']) == 4
        store = ReportStore(out_dir)
        assert store.get_stats() == {'total_runs': 2, 'succeeded': 1, 'failed': 1}
        latest = store.get_recent_runs(1)[0]
        assert latest['task'] == 'verify' and latest['exit_code'] == 4

    @pytest.mark.parametrize("argv", [['spectrum'], ['bogus']])
    def test_argument_errors_exit_through_argparse(self, argv):
        with pytest.raises(SystemExit):
            main(argv)

    def test_runs_command_prints_the_index(self, out_dir, capsys):
        assert main(['cover', '--tau', '0.5', '--rmax', '16', '--out', out_dir, '--threads', '1']) == 0
        capsys.readouterr()
        assert main(['runs', '--out', out_dir, '--limit', '5']) == 0
        listing = json.loads(capsys.readouterr().out)
        assert listing['stats'] == {'total_runs': 1, 'succeeded': 1, 'failed': 0}
        assert [run['task'] for run in listing['runs']] == ['cover']

    def test_runs_command_rejects_a_bad_limit(self, out_dir):
        assert main(['runs', '--out', out_dir, '--limit', '0']) == 1


class TestUnexpectedErrors:
    def test_crash_is_logged_and_recorded(self, out_dir, monkeypatch, caplog):
        def broken(self, scenario):
            raise RuntimeError("table shape mismatch")

        monkeypatch.setattr(ScenarioRunner, '_run_cover', broken)
        assert main(['cover', '--tau', '0.5', '--rmax', '16', '--out', out_dir]) == 5
        assert "failed unexpectedly" in caplog.text
        latest = ReportStore(out_dir).get_recent_runs(1)[0]
        assert latest['exit_code'] == 5
        assert latest['message'] == "RuntimeError: table shape mismatch"
