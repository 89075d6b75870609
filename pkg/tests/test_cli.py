"""
Tests for the rma command-line entry point.
"""
import json

import pandas as pd
import pytest

from rma_cli import (
    EXIT_CONFIG,
    EXIT_INFEASIBLE,
    EXIT_OK,
    SWEEP_SIC_ITERATIONS,
    build_parser,
    cli_dispatch,
    resolve_jobs,
)


def read_manifest(out_dir):
    with open(out_dir / "manifest.json", encoding="utf-8") as f:
        return json.load(f)


def write_design_config(path, target=0.05, num_devices=100):
    data = {
        'scenario': {
            'num_devices': num_devices,
            'num_slots': 200,
            'groups': [{'alpha': 1.0, 'deadline_slots': 200, 'target_error': target}],
        },
        'objective': 'min_sum_transmissions',
        'finite_size_c': 0.0,
        'de': {'population_size': 8, 'max_generations': 10, 'seed': 0},
    }
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(data, f, indent=2)
    return path


def run_twice(tmp_path, argv, names):
    contents = []
    for run in ("first", "second"):
        out = tmp_path / run
        assert cli_dispatch(argv + ['--out', str(out)]) == EXIT_OK
        contents.append([(out / name).read_bytes() for name in names])
    return contents


class TestParser:

    def test_help(self, capsys):
        assert cli_dispatch(['--help']) == EXIT_OK
        assert 'dynamics' in capsys.readouterr().out

    def test_unknown_flag(self):
        assert cli_dispatch(['oracle', '--no-such-flag']) == EXIT_CONFIG

    def test_subcommand_required(self):
        assert cli_dispatch([]) == EXIT_CONFIG

    def test_defaults(self):
        args = build_parser().parse_args(['simulate'])
        assert args.trials == 1000
        assert args.jobs == 1
        assert args.seed is None

    def test_jobs(self):
        assert resolve_jobs(3) == 3
        assert resolve_jobs(0) >= 1


class TestOracle:

    def test_prints_exact_error(self, config_dir, tmp_path, capsys):
        code = cli_dispatch(['oracle', '--config', str(config_dir / "oracle_k2_n2.json"), '--out', str(tmp_path)])
        assert code == EXIT_OK
        assert float(capsys.readouterr().out.split()[0]) == pytest.approx(0.4375)
        manifest = read_manifest(tmp_path)
        assert manifest['subcommand'] == 'oracle'
        assert 'oracle.csv' in manifest['outputs']
        assert manifest['parameters']['exit_code'] == EXIT_OK
        assert (tmp_path / "rma_oracle.log").exists()
        assert 'rma_oracle.log' in manifest['outputs']
        assert list(pd.read_csv(tmp_path / "oracle.csv").columns) == ['group', 'subframe', 'epsilon']

    def test_same_config_same_files(self, config_dir, tmp_path):
        first, second = run_twice(tmp_path, ['oracle', '--config', str(config_dir / "oracle_k2_n2.json")],
                                  ["oracle.csv"])
        assert first == second

    def test_missing_config_file(self, tmp_path):
        code = cli_dispatch(['oracle', '--config', str(tmp_path / "absent.json"), '--out', str(tmp_path)])
        assert code == EXIT_CONFIG
        assert read_manifest(tmp_path)['parameters']['exit_code'] == EXIT_CONFIG

    def test_config_required(self, tmp_path):
        assert cli_dispatch(['oracle', '--out', str(tmp_path)]) == EXIT_CONFIG


class TestAnalyze:

    def test_g_sweep(self, config_dir, tmp_path):
        code = cli_dispatch(['analyze', '--config', str(config_dir / "single_group_sweep.json"),
                             '--g-grid', '3.0', '3.6', '0.1', '--out', str(tmp_path)])
        assert code == EXIT_OK
        frame = pd.read_csv(tmp_path / "analyze_sweep.csv")
        assert list(frame.columns) == ['g', 'load', 'epsilon']
        assert len(frame) == 7

    def test_two_group_trace(self, config_dir, tmp_path):
        code = cli_dispatch(['analyze', '--config', str(config_dir / "two_group_ack_all.json"), '--out', str(tmp_path)])
        assert code == EXIT_OK
        assert len(pd.read_csv(tmp_path / "analyze_summary.csv")) == 4
        assert (tmp_path / "analyze_trace.csv").exists()

    def test_g_sweep_needs_one_group(self, config_dir, tmp_path):
        code = cli_dispatch(['analyze', '--config', str(config_dir / "two_group_ack_all.json"),
                             '--g-grid', '1', '2', '0.5', '--out', str(tmp_path)])
        assert code == EXIT_CONFIG

    def test_knife_edge(self, config_dir, tmp_path):
        code = cli_dispatch(['analyze', '--config', str(config_dir / "single_group_sweep.json"),
                             '--g-grid', '3.49', '3.50', '0.01', '--out', str(tmp_path)])
        assert code == EXIT_OK
        epsilon = pd.read_csv(tmp_path / "analyze_sweep.csv")['epsilon'].tolist()
        assert epsilon[0] <= 0.05
        assert epsilon[1] >= 0.5
        assert read_manifest(tmp_path)['parameters']['sic_iterations'] == SWEEP_SIC_ITERATIONS

    def test_unlimited_sic_rounds(self, config_dir, tmp_path):
        code = cli_dispatch(['analyze', '--config', str(config_dir / "single_group_sweep.json"),
                             '--g-grid', '3.49', '3.50', '0.01', '--sic-iterations', '0',
                             '--out', str(tmp_path)])
        assert code == EXIT_OK
        assert pd.read_csv(tmp_path / "analyze_sweep.csv")['epsilon'].max() < 0.05
        assert read_manifest(tmp_path)['parameters']['sic_iterations'] is None

    def test_negative_sic_rounds(self, config_dir, tmp_path):
        code = cli_dispatch(['analyze', '--config', str(config_dir / "two_group_ack_all.json"),
                             '--sic-iterations', '-1', '--out', str(tmp_path)])
        assert code == EXIT_CONFIG

    def test_columns(self, config_dir, tmp_path):
        code = cli_dispatch(['analyze', '--config', str(config_dir / "two_group_ack_all.json"), '--out', str(tmp_path)])
        assert code == EXIT_OK
        assert list(pd.read_csv(tmp_path / "analyze_summary.csv").columns) == ['group', 'subframe', 'epsilon',
                                                                           'zeta', 'M_i']
        assert list(pd.read_csv(tmp_path / "analyze_trace.csv").columns) == ['group', 'subframe', 'iteration', 'q']

    def test_same_config_same_files(self, config_dir, tmp_path):
        first, second = run_twice(tmp_path, ['analyze', '--config', str(config_dir / "two_group_ack_all.json")],
                                  ["analyze_summary.csv", "analyze_trace.csv"])
        assert first == second


class TestSimulate:

    def test_same_seed_same_files(self, config_dir, tmp_path):
        outputs = []
        for name in ("first", "second"):
            out = tmp_path / name
            code = cli_dispatch(['simulate', '--config', str(config_dir / "two_group_ack_all.json"),
                                 '--trials', '3', '--seed', '5', '--trace', '--out', str(out)])
            assert code == EXIT_OK
            outputs.append(((out / "simulate_summary.csv").read_bytes(), (out / "simulate_trials.csv").read_bytes()))
        assert outputs[0] == outputs[1]
        assert read_manifest(tmp_path / "first")['seed'] == 5
        assert list(pd.read_csv(tmp_path / "first" / "simulate_summary.csv").columns) == [
            'group', 'subframe', 'mean_eps', 'stderr', 'mean_tx']


class TestSweep:

    def test_grid_by_ratio(self, tmp_path):
        code = cli_dispatch(['sweep', '--ratios', '1.2', '2.0', '--g-grid', '1', '2', '0.5', '--out', str(tmp_path)])
        assert code == EXIT_OK
        frame = pd.read_csv(tmp_path / "sweep.csv")
        assert len(frame) == 6
        assert list(frame.columns) == ['g', 'ratio', 'load', 'epsilon']

    def test_corrected_column(self, tmp_path):
        code = cli_dispatch(['sweep', '--ratios', '2.0', '--g-grid', '2', '3', '0.5', '--num-slots', '1000',
                             '--c', '1.0', '--out', str(tmp_path)])
        assert code == EXIT_OK
        assert 'epsilon_corrected' in pd.read_csv(tmp_path / "sweep.csv").columns

    def test_knife_edge_by_default(self, tmp_path):
        code = cli_dispatch(['sweep', '--ratios', '1.2', '--g-grid', '3.49', '3.50', '0.01', '--out', str(tmp_path)])
        assert code == EXIT_OK
        epsilon = pd.read_csv(tmp_path / "sweep.csv")['epsilon'].tolist()
        assert epsilon[0] <= 0.05
        assert epsilon[1] >= 0.5

    def test_same_grid_same_files(self, tmp_path):
        first, second = run_twice(tmp_path, ['sweep', '--ratios', '1.2', '2.0', '--g-grid', '1', '4', '0.25'],
                                  ["sweep.csv"])
        assert first == second


class TestDynamics:

    def test_time_series(self, tmp_path):
        code = cli_dispatch(['dynamics', '--lambda', '5', '--rbs', '20', '--frames', '120', '--warmup', '20',
                             '--out', str(tmp_path)])
        assert code == EXIT_OK
        assert len(pd.read_csv(tmp_path / "dynamics_frames.csv")) == 120
        with open(tmp_path / "dynamics_summary.json", encoding="utf-8") as f:
            summary = json.load(f)
        assert summary['scheme'] == 'rma'
        assert summary['frames'] == 120
        assert list(pd.read_csv(tmp_path / "dynamics_frames.csv").columns) == [
            'frame', 'arrivals', 'admitted', 'resolved', 'backlog', 'b', 'mean_delay_so_far',
            'rbs', 'participants', 'k_hat', 'blocked', 'failed', 'delay_sum']

    def test_same_seed_same_files(self, tmp_path):
        first, second = run_twice(tmp_path, ['dynamics', '--lambda', '10', '--rbs-range', '0', '40', '--frames', '80',
                                             '--warmup', '20', '--seed', '3'],
                                  ["dynamics_frames.csv", "dynamics_summary.json"])
        assert first == second

    def test_capacity_scan(self, tmp_path):
        code = cli_dispatch(['dynamics', '--lambda-grid', '1', '2', '--scheme', 'dab-rbs', '--rach-rbs', '4',
                             '--rbs', '20', '--frames', '80', '--warmup', '20', '--out', str(tmp_path)])
        assert code == EXIT_OK
        assert len(pd.read_csv(tmp_path / "dynamics_scan.csv")) == 2
        assert (tmp_path / "dynamics_capacity.json").exists()

    def test_warmup_longer_than_run(self, tmp_path):
        code = cli_dispatch(['dynamics', '--rbs', '20', '--frames', '10', '--warmup', '20', '--out', str(tmp_path)])
        assert code == EXIT_CONFIG


class TestDesign:

    def test_feasible_design(self, tmp_path):
        config = write_design_config(tmp_path / "problem.json")
        out = tmp_path / "out"
        assert cli_dispatch(['design', '--config', str(config), '--out', str(out)]) == EXIT_OK
        with open(out / "design_report.json", encoding="utf-8") as f:
            report = json.load(f)
        assert report['feasible'] is True
        assert list(pd.read_csv(out / "design_G.csv").columns) == ['subframe', 'g_1']
        manifest = read_manifest(out)
        assert manifest['seed'] == 0
        assert {'design_report.json', 'design_G.csv', 'rma_design.log'} <= set(manifest['outputs'])

    def test_unreachable_target_exits_infeasible(self, tmp_path):
        config = write_design_config(tmp_path / "problem.json", target=1e-9, num_devices=180)
        out = tmp_path / "out"
        assert cli_dispatch(['design', '--config', str(config), '--out', str(out)]) == EXIT_INFEASIBLE
        with open(out / "design_report.json", encoding="utf-8") as f:
            assert json.load(f)['feasible'] is False
        assert read_manifest(out)['parameters']['exit_code'] == EXIT_INFEASIBLE

    def test_same_seed_same_files(self, tmp_path):
        config = write_design_config(tmp_path / "problem.json")
        first, second = run_twice(tmp_path, ['design', '--config', str(config), '--seed', '4'],
                                  ["design_report.json", "design_G.csv"])
        assert first == second


@pytest.mark.slow
class TestCapacity:

    def test_capacity_report(self, tmp_path):
        config = write_design_config(tmp_path / "problem.json")
        first, second = run_twice(tmp_path, ['capacity', '--config', str(config)], ["capacity_report.json"])
        assert first == second
        report = json.loads(first[0])
        assert 0.0 < report['capacity'] <= 4.0
        assert report['bracket']
