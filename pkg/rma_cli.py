#!/usr/bin/env python3
"""
RMA Command Line
Front end of the RMA toolkit: parses scenario and design files, dispatches the
analyze / simulate / design / dynamics / capacity / oracle / sweep subcommands
and writes CSV results plus a run manifest into the output directory.
"""

import argparse
import json
import logging
import os
import sys
import time
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
import psutil

from rma_andor_analyzer import (
    avg_transmissions,
    evolve,
    feasibility_check,
    finite_size_error,
    finite_size_single_error,
    single_group_error,
)
from rma_frame_dynamics import (
    DabFixedRachFraction,
    DabFixedRachRBs,
    DynamicsConfig,
    FixedRBs,
    LoadEstimator,
    RMA,
    UniformRandomRBs,
    capacity_scan,
    dynamics_config_from_dict,
    run_dynamics,
)
from rma_probe_designer import (
    InfeasibleDesignError,
    design,
    design_problem_from_dict,
    system_capacity,
)
from rma_qos_model import (
    ConfigError,
    InvalidMatrixError,
    ProbabilityExceedsOneError,
    RMAError,
    ScenarioError,
    load_json_file,
    load_scenario_file,
)
from rma_sic_simulator import exact_error_enumeration, monte_carlo

VERSION = "1.0.0"

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3

# SIC rounds per frame for single-group g sweeps; 0 on the command line iterates to convergence
SWEEP_SIC_ITERATIONS = 100

LOG_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'

logger = logging.getLogger(__name__)


def log_run_separator(script_name: str, action: str = "START"):
    """
    Log a clear separator for run identification

    Args:
        script_name: Name of the subcommand
        action: START or END
    """
    separator = "=" * 80
    timestamp = datetime.now().strftime("%Y-%m-%d %H:%M:%S")

    if action == "START":
        logger.info(separator)
        logger.info(f">> {script_name} - RUN STARTED at {timestamp}")
        logger.info(separator)
    elif action == "END":
        logger.info(separator)
        logger.info(f"<< {script_name} - RUN COMPLETED at {timestamp}")
        logger.info(separator)
        logger.info("")


def configure_logging(out_dir: Path, subcommand: str, verbose: bool) -> List[logging.Handler]:
    """Send log records to <out>/rma_<subcommand>.log and the console"""
    handlers = [
        logging.FileHandler(out_dir / f"rma_{subcommand}.log", encoding='utf-8'),
        logging.StreamHandler(),
    ]
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, format=LOG_FORMAT,
                        handlers=handlers, force=True)
    return handlers


def release_logging(handlers: Sequence[logging.Handler]) -> None:
    root = logging.getLogger()
    for handler in handlers:
        root.removeHandler(handler)
        handler.close()


def get_memory_mb() -> float:
    """Resident memory of this process in MB"""
    return psutil.Process(os.getpid()).memory_info().rss / 1024 / 1024


def resolve_jobs(jobs: int) -> int:
    """0 means one worker per physical core"""
    if jobs > 0:
        return jobs
    return psutil.cpu_count(logical=False) or 1


class RunManifest:
    """
    Record of one CLI run, written as manifest.json next to the outputs

    Args:
        subcommand: Subcommand name
        config: Input config path (if any)
        seed: Seed used
        out_dir: Output directory
    """

    def __init__(self, subcommand: str, config: Optional[str], seed: int, out_dir: Path):
        self.subcommand = subcommand
        self.config = config
        self.seed = seed
        self.out_dir = out_dir
        self.outputs: List[str] = [f"rma_{subcommand}.log"]
        self.parameters: Dict = {}
        self.started = time.perf_counter()
        self.peak_memory_mb = get_memory_mb()

    def write_csv(self, rows: List[Dict], name: str, columns: Sequence[str]) -> Path:
        path = self.out_dir / name
        pd.DataFrame(rows, columns=list(columns)).to_csv(path, index=False)
        self.outputs.append(name)
        logger.info(f"Wrote {len(rows)} rows to {path}")
        return path

    def write_json(self, data: Dict, name: str) -> Path:
        path = self.out_dir / name
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(data, f, indent=2, default=str)
        self.outputs.append(name)
        logger.info(f"Wrote {path}")
        return path

    def finish(self) -> Path:
        self.peak_memory_mb = max(self.peak_memory_mb, get_memory_mb())
        manifest = {
            'subcommand': self.subcommand,
            'config': self.config,
            'seed': self.seed,
            'out': str(self.out_dir),
            'version': VERSION,
            'wall_clock_seconds': round(time.perf_counter() - self.started, 3),
            'peak_memory_mb': round(self.peak_memory_mb, 1),
            'parameters': self.parameters,
            'outputs': sorted(self.outputs + ['manifest.json']),
        }
        path = self.out_dir / 'manifest.json'
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(manifest, f, indent=2, default=str)
        return path


def _require_config(args) -> str:
    if not args.config:
        raise ConfigError(f"The {args.command} subcommand needs --config")
    return args.config


def _g_grid(start: float, stop: float, step: float) -> np.ndarray:
    if step <= 0:
        raise ConfigError(f"Grid step must be positive, got {step}")
    return np.round(np.arange(start, stop + step / 2, step), 6)


def _sic_budget(args, default: Optional[int]) -> Optional[int]:
    budget = default if args.sic_iterations is None else args.sic_iterations
    if budget is not None and budget < 0:
        raise ConfigError(f"--sic-iterations must be non-negative, got {budget}")
    return budget or None


def cmd_analyze(args, manifest: RunManifest) -> int:
    scn, G = load_scenario_file(_require_config(args))

    if args.g_grid:
        if scn.num_groups != 1:
            raise ConfigError("--g-grid sweeps single-group scenarios only")
        grid = _g_grid(*args.g_grid)
        budget = _sic_budget(args, SWEEP_SIC_ITERATIONS)
        manifest.parameters['sic_iterations'] = budget
        errors = single_group_error(grid, scn.load, sic_iterations=budget)
        rows = [{'g': float(g), 'load': scn.load, 'epsilon': float(e)} for g, e in zip(grid, errors)]
        manifest.write_csv(rows, 'analyze_sweep.csv', ['g', 'load', 'epsilon'])
        return EXIT_OK

    if G is None:
        raise ConfigError("The scenario file needs an access_matrix for analyze")
    budget = _sic_budget(args, None)
    manifest.parameters['sic_iterations'] = budget
    trace = evolve(scn, G, tol=args.tol, max_iter=args.max_iter, sic_iterations=budget)
    M = avg_transmissions(scn, G, trace)
    corrected = finite_size_error(scn, G, args.c, sic_iterations=budget) if args.c > 0 else None

    summary = []
    for i in range(scn.num_groups):
        for s in range(scn.num_groups):
            row = {
                'group': i + 1,
                'subframe': s + 1,
                'epsilon': float(trace.epsilon[i, s]),
                'zeta': float(trace.zeta[i, s]),
                'M_i': float(M[i]),
            }
            if corrected is not None:
                row['epsilon_corrected'] = float(corrected[i]) if s == i else ''
            summary.append(row)
    columns = ['group', 'subframe', 'epsilon', 'zeta', 'M_i'] + (['epsilon_corrected'] if corrected is not None else [])
    manifest.write_csv(summary, 'analyze_summary.csv', columns)
    manifest.write_csv(trace.iteration_records(), 'analyze_trace.csv', ['group', 'subframe', 'iteration', 'q'])

    report = feasibility_check(scn, trace=trace)
    for verdict in report.groups:
        logger.info(f"Group {verdict.group}: load bound {verdict.bound_value:.4f} vs L* {verdict.limit:.4f} "
                    f"({'ok' if verdict.satisfied else 'violated'})")
    for i, eps in enumerate(trace.deadline_epsilon, 1):
        logger.info(f"Group {i}: epsilon at deadline = {eps:.6g}, M = {M[i - 1]:.4f}")
    return EXIT_OK


def cmd_simulate(args, manifest: RunManifest) -> int:
    scn, G = load_scenario_file(_require_config(args))
    if G is None:
        raise ConfigError("The scenario file needs an access_matrix for simulate")
    summary = monte_carlo(scn, G, args.trials, seed=args.seed, jobs=resolve_jobs(args.jobs))
    manifest.write_csv(summary.records(), 'simulate_summary.csv', ['group', 'subframe', 'mean_eps', 'stderr', 'mean_tx'])
    if args.trace:
        manifest.write_csv(summary.trial_records(), 'simulate_trials.csv', ['trial', 'group', 'deadline_eps'])
    for i, (eps, err) in enumerate(zip(summary.deadline_error, summary.deadline_stderr), 1):
        logger.info(f"Group {i}: unresolved at deadline = {eps:.6g} +/- {err:.2g}")
    return EXIT_OK


def cmd_design(args, manifest: RunManifest) -> int:
    problem = design_problem_from_dict(load_json_file(_require_config(args)), seed=args.seed)
    manifest.seed = problem.de.seed
    result = design(problem, jobs=resolve_jobs(args.jobs))
    manifest.write_json(result.to_report(), 'design_report.json')
    r = result.G.size
    rows = [{'subframe': s + 1, **{f"g_{i + 1}": float(result.G.entries[s, i]) for i in range(r)}} for s in range(r)]
    manifest.write_csv(rows, 'design_G.csv', ['subframe'] + [f"g_{i + 1}" for i in range(r)])
    if not result.feasible:
        raise InfeasibleDesignError(f"Design misses its targets: eps {result.eps_corrected.tolist()} "
                                    f"vs {problem.targets.tolist()}")
    return EXIT_OK


def _dynamics_config(args) -> DynamicsConfig:
    if args.config:
        return dynamics_config_from_dict(load_json_file(args.config))
    if args.rbs_range:
        resources = UniformRandomRBs(*args.rbs_range)
    else:
        resources = FixedRBs(args.rbs)
    if args.scheme == 'dab-rbs':
        scheme = DabFixedRachRBs(args.rach_rbs)
    elif args.scheme == 'dab-fraction':
        scheme = DabFixedRachFraction(args.rach_fraction)
    else:
        scheme = RMA()
    return DynamicsConfig(
        arrival_rate=args.arrival_rate,
        frames=args.frames,
        resource_model=resources,
        scheme=scheme,
        rho=args.rho,
        load_estimator=LoadEstimator.ESTIMATED if args.estimated else LoadEstimator.KNOWN,
        delay_threshold_frames=args.delay_threshold,
        warmup_frames=args.warmup,
        target_error=args.target_error,
        finite_size_c=args.c,
        feedback_loss_prob=args.feedback_loss,
    )


def cmd_dynamics(args, manifest: RunManifest) -> int:
    config = _dynamics_config(args)
    manifest.parameters['dynamics'] = {key: str(value) for key, value in vars(config).items()}

    if args.lambda_grid:
        scan = capacity_scan(config, args.lambda_grid, seed=args.seed, jobs=resolve_jobs(args.jobs))
        rows = [vars(summary) for summary in scan.summaries]
        manifest.write_csv(rows, 'dynamics_scan.csv', list(rows[0].keys()))
        manifest.write_json({'capacity': scan.capacity, 'monotone': scan.monotone, 'verdicts': scan.verdicts},
                            'dynamics_capacity.json')
        return EXIT_OK

    result = run_dynamics(config, seed=args.seed)
    manifest.write_csv(result.frame_rows(), 'dynamics_frames.csv',
                       ['frame', 'arrivals', 'admitted', 'resolved', 'backlog', 'b', 'mean_delay_so_far',
                        'rbs', 'participants', 'k_hat', 'blocked', 'failed', 'delay_sum'])
    manifest.write_json(vars(result.summary), 'dynamics_summary.json')
    return EXIT_OK


def cmd_capacity(args, manifest: RunManifest) -> int:
    problem = design_problem_from_dict(load_json_file(_require_config(args)), seed=args.seed)
    manifest.seed = problem.de.seed
    scn = problem.scenario
    result = system_capacity(
        alpha=scn.alphas.tolist(),
        beta=list(scn.deadline_fractions),
        targets=problem.targets.tolist(),
        num_slots=scn.num_slots,
        c=problem.finite_size_c,
        de=problem.de,
        scheme=scn.scheme,
        jobs=resolve_jobs(args.jobs),
    )
    manifest.write_json({
        'capacity': result.load,
        'bracket': [{'load': load, 'feasible': ok} for load, ok in result.bracket],
        'design': result.design.to_report() if result.design else None,
    }, 'capacity_report.json')
    logger.info(f"System capacity K/N = {result.load:.2f}")
    return EXIT_OK


def cmd_oracle(args, manifest: RunManifest) -> int:
    scn, G = load_scenario_file(_require_config(args))
    if G is None:
        raise ConfigError("The scenario file needs an access_matrix for oracle")
    result = exact_error_enumeration(scn, G)
    rows = [{'group': i + 1, 'subframe': s + 1, 'epsilon': float(result.unresolved[i, s])}
            for i in range(scn.num_groups) for s in range(scn.num_groups)]
    manifest.write_csv(rows, 'oracle.csv', ['group', 'subframe', 'epsilon'])
    for eps in result.deadline_error:
        print(f"{eps:.10g}")
    return EXIT_OK


def cmd_sweep(args, manifest: RunManifest) -> int:
    grid = _g_grid(*args.g_grid) if args.g_grid else _g_grid(0.0, 4.0, 0.01)
    corrected = args.c > 0 and args.num_slots
    budget = _sic_budget(args, SWEEP_SIC_ITERATIONS)
    manifest.parameters['sic_iterations'] = budget
    rows = []
    for ratio in args.ratios:
        load = 1.0 / ratio
        errors = single_group_error(grid, load, sic_iterations=budget)
        extra = (finite_size_single_error(grid, load, args.num_slots, args.c, sic_iterations=budget)
                 if corrected else None)
        for index, g in enumerate(grid):
            row = {'g': float(g), 'ratio': ratio, 'load': load, 'epsilon': float(errors[index])}
            if corrected:
                row['epsilon_corrected'] = float(extra[index])
            rows.append(row)
    columns = ['g', 'ratio', 'load', 'epsilon'] + (['epsilon_corrected'] if corrected else [])
    manifest.write_csv(rows, 'sweep.csv', columns)
    return EXIT_OK


COMMANDS = {
    'analyze': cmd_analyze,
    'simulate': cmd_simulate,
    'design': cmd_design,
    'dynamics': cmd_dynamics,
    'capacity': cmd_capacity,
    'oracle': cmd_oracle,
    'sweep': cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='Scenario, design problem or dynamics JSON file')
    common.add_argument('--seed', type=int, default=None, help='Master seed (default 0)')
    common.add_argument('--trials', type=int, default=1000, help='Monte-Carlo frames (default 1000)')
    common.add_argument('--jobs', type=int, default=1, help='Worker processes, 0 = physical cores (default 1)')
    common.add_argument('--out', default='rma_output', help='Output directory (default rma_output)')
    common.add_argument('--verbose', action='store_true', help='Log at DEBUG level')

    parser = argparse.ArgumentParser(
        prog='rma',
        description='Random multiple access toolkit: density evolution, SIC simulation, '
                    'access-matrix design and multi-frame dynamics',
        epilog="""
Examples:
  # Density evolution of a scenario with its access matrix
  rma analyze --config configs/two_group_ack_all.json --out results/analyze

  # Knife edge of a single group at N/K = 1.2
  rma analyze --config configs/single_group_sweep.json --g-grid 3.40 3.60 0.01

  # Monte-Carlo frames on 4 workers
  rma simulate --config configs/two_group_ack_all.json --trials 100 --jobs 4 --seed 7

  # Energy-minimal design
  rma design --config configs/design_two_groups.json

  # Stable capacity of RMA over an arrival-rate grid
  rma dynamics --rbs-range 0 100 --lambda-grid 10 20 30 40 50
        """,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument('--version', action='version', version=f"%(prog)s {VERSION}")
    sub = parser.add_subparsers(dest='command', required=True)

    analyze = sub.add_parser('analyze', parents=[common], help='Density evolution for a scenario and G')
    analyze.add_argument('--g-grid', nargs=3, type=float, metavar=('START', 'STOP', 'STEP'),
                         help='Sweep g for a single-group scenario instead of using its matrix')
    analyze.add_argument('--c', type=float, default=0.0, help='Finite-size spread constant (default 0)')
    analyze.add_argument('--tol', type=float, default=1e-12, help='Convergence threshold (default 1e-12)')
    analyze.add_argument('--max-iter', type=int, default=10_000, help='Iteration cap (default 10000)')
    analyze.add_argument('--sic-iterations', type=int, default=None,
                         help='SIC rounds per frame, 0 = until convergence '
                              f'(default {SWEEP_SIC_ITERATIONS} with --g-grid, otherwise 0)')

    simulate = sub.add_parser('simulate', parents=[common], help='Monte-Carlo SIC frames')
    simulate.add_argument('--trace', action='store_true', help='Also write per-trial deadline errors')

    sub.add_parser('design', parents=[common], help='Design G for a design problem file')
    sub.add_parser('capacity', parents=[common], help='System capacity of a design problem')
    sub.add_parser('oracle', parents=[common], help='Exact enumeration for tiny frames')

    dynamics = sub.add_parser('dynamics', parents=[common], help='Multi-frame queueing simulation')
    dynamics.add_argument('--lambda', dest='arrival_rate', type=float, default=20.0,
                          help='Mean arrivals per frame (default 20)')
    dynamics.add_argument('--lambda-grid', nargs='+', type=float, help='Scan these arrival rates for capacity')
    dynamics.add_argument('--frames', type=int, default=600, help='Frames simulated (default 600)')
    dynamics.add_argument('--warmup', type=int, default=100, help='Warm-up frames (default 100)')
    dynamics.add_argument('--scheme', choices=['rma', 'dab-rbs', 'dab-fraction'], default='rma')
    dynamics.add_argument('--rach-rbs', type=int, default=10, help='RACH RBs for dab-rbs (default 10)')
    dynamics.add_argument('--rach-fraction', type=float, default=0.2, help='RACH share for dab-fraction (default 0.2)')
    dynamics.add_argument('--rbs', type=int, default=50, help='Fixed RBs per frame (default 50)')
    dynamics.add_argument('--rbs-range', nargs=2, type=int, metavar=('LOW', 'HIGH'),
                          help='Uniformly random RBs per frame')
    dynamics.add_argument('--rho', type=float, default=0.0, help='Load estimate over-provisioning (default 0)')
    dynamics.add_argument('--estimated', action='store_true', help='Bar with the estimated instead of the true load')
    dynamics.add_argument('--delay-threshold', type=float, default=10.0, help='Stability delay limit (default 10)')
    dynamics.add_argument('--target-error', type=float, default=0.1, help='RMA frame target error (default 0.1)')
    dynamics.add_argument('--c', type=float, default=1.0, help='Finite-size spread constant (default 1)')
    dynamics.add_argument('--feedback-loss', type=float, default=0.0, help='ACK loss probability (default 0)')

    sweep = sub.add_parser('sweep', parents=[common], help='Single-group error over g and N/K')
    sweep.add_argument('--ratios', nargs='+', type=float, default=[1.2, 1.6, 2.0], help='N/K values')
    sweep.add_argument('--g-grid', nargs=3, type=float, metavar=('START', 'STOP', 'STEP'))
    sweep.add_argument('--num-slots', type=int, default=0, help='N for the finite-size column')
    sweep.add_argument('--c', type=float, default=0.0, help='Finite-size spread constant (default 0)')
    sweep.add_argument('--sic-iterations', type=int, default=None,
                       help=f'SIC rounds per frame, 0 = until convergence (default {SWEEP_SIC_ITERATIONS})')
    return parser


def cli_dispatch(argv: Optional[Sequence[str]] = None) -> int:
    """
    Parse argv, run the subcommand and map failures to exit codes

    Returns:
        0 success, 1 unexpected failure, 2 configuration or usage error, 3 infeasible design
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_CONFIG

    seed_given = args.seed is not None
    if not seed_given:
        args.seed = 0
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    handlers = configure_logging(out_dir, args.command, args.verbose)
    manifest = RunManifest(args.command, args.config, args.seed, out_dir)
    if not seed_given and args.command in ('design', 'capacity'):
        args.seed = None

    log_run_separator(f"rma {args.command}", "START")
    logger.info(f"Memory at start: {get_memory_mb():.1f} MB")
    exit_code = EXIT_FAILURE
    try:
        exit_code = COMMANDS[args.command](args, manifest)
    except InfeasibleDesignError as e:
        logger.error(f"Infeasible design: {e}")
        exit_code = EXIT_INFEASIBLE
    except (ScenarioError, InvalidMatrixError, ProbabilityExceedsOneError) as e:
        logger.error(f"Configuration error: {e}")
        exit_code = EXIT_CONFIG
    except RMAError as e:
        logger.error(f"Run failed: {e}")
        exit_code = EXIT_FAILURE
    except Exception as e:
        logger.exception(f"Unexpected error: {e}")
        exit_code = EXIT_FAILURE
    finally:
        manifest.parameters.setdefault('exit_code', exit_code)
        manifest.finish()
        logger.info(f"Memory at end: {get_memory_mb():.1f} MB (peak seen {manifest.peak_memory_mb:.1f} MB)")
        log_run_separator(f"rma {args.command}", "END")
        release_logging(handlers)
    return exit_code


def main():
    sys.exit(cli_dispatch())


if __name__ == "__main__":
    main()
