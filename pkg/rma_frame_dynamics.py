#!/usr/bin/env python3
"""
RMA Frame Dynamics
Multi-frame queueing simulation: Poisson packet arrivals, dynamic access
barring, RMA frames or DAB/RACH baselines, backlog and delay tracking, load
estimation and stable-capacity scans.
"""

import logging
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from functools import lru_cache
from multiprocessing import Pool
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from rma_andor_analyzer import GridTooCoarseError, LoadBound, blocking_probability, max_load
from rma_qos_model import (
    AccessMatrix,
    ConfigError,
    GroupSpec,
    RMAError,
    Scenario,
    validate_scenario,
)
from rma_sic_simulator import SeedLike, make_rng, run_frame

logger = logging.getLogger(__name__)

OPERATING_POINT_MAX_ITER = 2000
OPERATING_POINT_G_GRID = tuple(np.round(np.arange(0.0, 4.0 + 1e-9, 0.05), 2))


class NonMonotoneStabilityError(RMAError):
    """Stability verdicts along an increasing arrival-rate grid flip back to stable"""

    def __init__(self, message: str, verdicts: List[Tuple[float, bool]]):
        super().__init__(message)
        self.verdicts = verdicts


@dataclass(frozen=True)
class FixedRBs:
    count: int

    def draw(self, rng: np.random.Generator) -> int:
        return self.count

    @property
    def mean(self) -> float:
        return float(self.count)


@dataclass(frozen=True)
class UniformRandomRBs:
    """Resource blocks per frame drawn uniformly from low..high inclusive"""
    low: int
    high: int

    def draw(self, rng: np.random.Generator) -> int:
        return int(rng.integers(self.low, self.high + 1))

    @property
    def mean(self) -> float:
        return 0.5 * (self.low + self.high)


ResourceModel = Union[FixedRBs, UniformRandomRBs]


@dataclass(frozen=True)
class RMA:
    """Every resource block of the frame is an RMA slot"""


@dataclass(frozen=True)
class DabFixedRachRBs:
    """DAB with a fixed number of RACH resource blocks per frame"""
    rach_rbs: int

    def split(self, rbs: int) -> Tuple[int, int]:
        rach = min(self.rach_rbs, rbs)
        return rach, rbs - rach


@dataclass(frozen=True)
class DabFixedRachFraction:
    """DAB with a fixed fraction of each frame's resource blocks reserved for the RACH"""
    fraction: float

    def split(self, rbs: int) -> Tuple[int, int]:
        rach = int(round(self.fraction * rbs))
        return rach, rbs - rach


AccessScheme = Union[RMA, DabFixedRachRBs, DabFixedRachFraction]


class LoadEstimator(Enum):
    KNOWN = "known"
    ESTIMATED = "estimated"


@dataclass(frozen=True)
class DynamicsConfig:
    """
    Settings of a multi-frame run

    Args:
        arrival_rate: Mean new packets per frame (λ)
        frames: Frames simulated
        resource_model: Resource blocks available per frame
        scheme: RMA or one of the DAB baselines
        preambles_per_rb: Preambles carved out of one RACH resource block
        rho: Fractional over-provisioning of the estimated load
        load_estimator: Whether barring uses the true or the estimated backlog
        delay_threshold_frames: Mean delay (frames) up to which a run counts as stable
        warmup_frames: Leading frames left out of the summary
        target_error: Target error of an RMA frame
        finite_size_c: Spread constant of the finite-size guideline for RMA frames
        feedback_loss_prob: Probability that an RMA acknowledgement is lost
    """
    arrival_rate: float
    frames: int = 600
    resource_model: ResourceModel = UniformRandomRBs(0, 100)
    scheme: AccessScheme = RMA()
    preambles_per_rb: int = 8
    rho: float = 0.0
    load_estimator: LoadEstimator = LoadEstimator.KNOWN
    delay_threshold_frames: float = 10.0
    warmup_frames: int = 100
    target_error: float = 0.1
    finite_size_c: float = 1.0
    feedback_loss_prob: float = 0.0

    def __post_init__(self):
        if self.arrival_rate < 0:
            raise ConfigError(f"arrival_rate must be nonnegative, got {self.arrival_rate}")
        if self.delay_threshold_frames < 1:
            raise ConfigError(f"delay_threshold_frames must be at least 1, got {self.delay_threshold_frames}")
        if isinstance(self.scheme, DabFixedRachFraction) and not 0.0 <= self.scheme.fraction <= 1.0:
            raise ConfigError(f"RACH fraction must lie in [0, 1], got {self.scheme.fraction}")
        if not 0.0 <= self.feedback_loss_prob < 1.0:
            raise ConfigError(f"feedback_loss_prob must lie in [0, 1), got {self.feedback_loss_prob}")
        if not 0.0 < self.target_error <= 1.0:
            raise ConfigError(f"target_error must lie in (0, 1], got {self.target_error}")
        if self.preambles_per_rb < 1:
            raise ConfigError(f"preambles_per_rb must be positive, got {self.preambles_per_rb}")

    @property
    def scheme_label(self) -> str:
        if isinstance(self.scheme, DabFixedRachRBs):
            return f"dab_rach_rbs_{self.scheme.rach_rbs}"
        if isinstance(self.scheme, DabFixedRachFraction):
            return f"dab_rach_fraction_{self.scheme.fraction:g}"
        return "rma"


@dataclass(frozen=True)
class FrameRecord:
    frame: int
    arrivals: int
    rbs: int
    participants: int
    k_hat: float
    b: float
    admitted: int
    blocked: int
    resolved: int
    failed: int
    backlog: int
    delay_sum: int
    mean_delay_so_far: float


@dataclass
class DynamicsState:
    """
    Backlog and counters between frames

    backlog holds the arrival frame of every waiting packet. k_estimate is the
    running estimate of participants before the ρ offset; participants and
    served are the previous frame's K and K_s.
    """
    frame: int = 0
    backlog: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    b: float = 0.0
    k_hat: float = 0.0
    k_estimate: float = 0.0
    participants: int = 0
    served: int = 0
    arrivals_total: int = 0
    resolved_total: int = 0
    blocked_total: int = 0
    delay_sum: int = 0
    last_frame: Optional[FrameRecord] = None


def estimate_load(prev: DynamicsState, arrival_rate: float, rho: float = 0.0) -> float:
    """
    Participants expected in the next frame

    K[i] = λ + ((1 - b[i-1]) K[i-1] - K_s[i-1]) + b[i-1] K[i-1]: new arrivals,
    admitted packets that failed and barred packets. The first frame uses λ.
    The result is inflated by (1 + ρ).
    """
    if prev.frame == 0:
        estimate = arrival_rate
    else:
        previous = prev.k_estimate
        estimate = arrival_rate + ((1.0 - prev.b) * previous - prev.served) + prev.b * previous
    return max(0.0, estimate) * (1.0 + rho)


@lru_cache(maxsize=None)
def rma_operating_point(num_slots: int, target_error: float, c: float) -> LoadBound:
    """
    Load bound and g of a single-group RMA frame over num_slots slots, computed once per argument set

    A zero load means no g reaches the target on this many slots; such frames bar everybody.
    """
    try:
        bound = max_load(target_error, num_slots=num_slots if c > 0 else None, c=c,
                         g_grid=OPERATING_POINT_G_GRID, resolution=1e-3, max_iter=OPERATING_POINT_MAX_ITER)
    except GridTooCoarseError:
        logger.warning(f"No RMA operating point reaches {target_error} on {num_slots} slots")
        return LoadBound(load=0.0, g_best=0.0)
    logger.debug(f"RMA operating point for {num_slots} slots: L*={bound.load:.4f}, g={bound.g_best}")
    return bound


def dab_rach_contend(admitted: np.ndarray, rach_rbs: int, data_rbs: int, seed: SeedLike,
                     preambles_per_rb: int = 8) -> np.ndarray:
    """
    One DAB random-access round

    Every admitted packet picks one of preambles_per_rb * rach_rbs preambles;
    packets alone on their preamble win, and up to data_rbs winners chosen
    uniformly get a data resource block.

    Args:
        admitted: Identifiers of the admitted packets
        rach_rbs: Resource blocks reserved for the RACH
        data_rbs: Resource blocks available for data
        seed: Seed or generator
        preambles_per_rb: Preambles per RACH resource block

    Returns:
        Identifiers of the resolved packets
    """
    if rach_rbs < 0 or data_rbs < 0:
        raise ValueError("Resource block counts must be nonnegative")
    admitted = np.asarray(admitted)
    preambles = preambles_per_rb * rach_rbs
    if admitted.size == 0 or preambles == 0 or data_rbs == 0:
        return admitted[:0]
    rng = make_rng(seed)
    picks = rng.integers(0, preambles, size=admitted.size)
    counts = np.bincount(picks, minlength=preambles)
    winners = np.flatnonzero(counts[picks] == 1)
    if winners.size > data_rbs:
        winners = np.sort(rng.choice(winners, size=data_rbs, replace=False))
    return admitted[winners]


def _rma_contend(admitted: int, rbs: int, config: DynamicsConfig, rng: np.random.Generator) -> np.ndarray:
    """Indices (0..admitted-1) of the packets acknowledged in a single-group RMA frame"""
    if admitted == 0 or rbs == 0:
        return np.zeros(0, dtype=int)
    point = rma_operating_point(rbs, config.target_error, config.finite_size_c)
    if point.load <= 0:
        return np.zeros(0, dtype=int)
    # below the operating load every device keeps the designed number of replicas
    degree = point.g_best / point.load
    g = min(point.g_best, degree * admitted / rbs, float(admitted))
    scn = validate_scenario(Scenario(
        num_devices=admitted,
        num_slots=rbs,
        groups=(GroupSpec(alpha=1.0, deadline_slots=rbs, target_error=config.target_error),),
        feedback_loss_prob=config.feedback_loss_prob,
    ))
    outcome = run_frame(scn, AccessMatrix([[g]]), rng)
    return np.flatnonzero(outcome.acked)


def step_frame(state: DynamicsState, config: DynamicsConfig, seed: SeedLike) -> DynamicsState:
    """
    Advance the system by one frame

    Poisson arrivals join the backlog, every waiting packet is barred with the
    probability derived from the load estimate and the frame's resources, and
    the admitted packets contend. Resolved packets leave and record their
    delay; everything else waits for the next frame.

    Args:
        state: State after the previous frame
        config: Run settings
        seed: Seed or generator of this frame

    Returns:
        New DynamicsState whose last_frame holds the frame record
    """
    rng = make_rng(seed)
    frame = state.frame

    arrivals = int(rng.poisson(config.arrival_rate))
    backlog = np.concatenate([state.backlog, np.full(arrivals, frame, dtype=int)])
    participants = backlog.size
    rbs = config.resource_model.draw(rng)

    k_estimate = estimate_load(state, config.arrival_rate)
    if config.load_estimator is LoadEstimator.KNOWN:
        k_hat = float(participants)
    else:
        k_hat = k_estimate * (1.0 + config.rho)

    if isinstance(config.scheme, RMA):
        rach_rbs, data_rbs = 0, rbs
        point = rma_operating_point(rbs, config.target_error, config.finite_size_c) if rbs > 0 else None
        if point is not None and point.load > 0:
            b = blocking_probability(point.load, k_hat, rbs)
        else:
            b = 1.0 if k_hat > 0 else 0.0
    else:
        rach_rbs, data_rbs = config.scheme.split(rbs)
        preambles = config.preambles_per_rb * rach_rbs
        b = blocking_probability(1.0, k_hat, preambles) if preambles > 0 else (1.0 if k_hat > 0 else 0.0)

    admitted_mask = rng.random(participants) >= b
    admitted = np.flatnonzero(admitted_mask)

    if isinstance(config.scheme, RMA):
        resolved = admitted[_rma_contend(admitted.size, data_rbs, config, rng)]
    else:
        resolved = dab_rach_contend(admitted, rach_rbs, data_rbs, rng, config.preambles_per_rb)

    delays = frame - backlog[resolved] + 1
    remaining = np.ones(participants, dtype=bool)
    remaining[resolved] = False

    resolved_total = state.resolved_total + resolved.size
    delay_sum = state.delay_sum + int(delays.sum())
    record = FrameRecord(
        frame=frame,
        arrivals=arrivals,
        rbs=rbs,
        participants=participants,
        k_hat=k_hat,
        b=b,
        admitted=int(admitted.size),
        blocked=int(participants - admitted.size),
        resolved=int(resolved.size),
        failed=int(admitted.size - resolved.size),
        backlog=int(remaining.sum()),
        delay_sum=int(delays.sum()),
        mean_delay_so_far=delay_sum / resolved_total if resolved_total else 0.0,
    )
    return DynamicsState(
        frame=frame + 1,
        backlog=backlog[remaining],
        b=b,
        k_hat=k_hat,
        k_estimate=k_estimate,
        participants=participants,
        served=int(resolved.size),
        arrivals_total=state.arrivals_total + arrivals,
        resolved_total=resolved_total,
        blocked_total=state.blocked_total + record.blocked,
        delay_sum=delay_sum,
        last_frame=record,
    )


def frame_seed(seed: int, frame: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=(frame,))


@dataclass
class DynamicsSummary:
    arrival_rate: float
    scheme: str
    throughput: float
    blocking_rate: float
    mean_delay: float
    stable: bool
    backlog_slope: float
    final_backlog: int
    mean_admitted: float
    frames: int
    warmup_frames: int


@dataclass
class DynamicsResult:
    records: List[FrameRecord]
    summary: DynamicsSummary

    def frame_rows(self) -> List[Dict]:
        return [asdict(record) for record in self.records]


def summarize(records: Sequence[FrameRecord], config: DynamicsConfig) -> DynamicsSummary:
    """Post-warmup throughput, blocking rate, delay and stability verdict"""
    window = [record for record in records if record.frame >= config.warmup_frames]
    resolved = sum(record.resolved for record in window)
    participants = sum(record.participants for record in window)
    delays = sum(record.delay_sum for record in window)
    backlog = np.array([record.backlog for record in window], dtype=float)

    mean_delay = delays / resolved if resolved else float('inf')
    if config.arrival_rate == 0:
        stable = True
        mean_delay = mean_delay if resolved else 0.0
    else:
        stable = bool(resolved > 0 and mean_delay <= config.delay_threshold_frames)
    slope = float(np.polyfit(np.arange(backlog.size), backlog, 1)[0]) if backlog.size > 1 else 0.0

    return DynamicsSummary(
        arrival_rate=config.arrival_rate,
        scheme=config.scheme_label,
        throughput=resolved / len(window) if window else 0.0,
        blocking_rate=sum(record.blocked for record in window) / participants if participants else 0.0,
        mean_delay=mean_delay,
        stable=stable,
        backlog_slope=slope,
        final_backlog=records[-1].backlog if records else 0,
        mean_admitted=float(np.mean([record.admitted for record in window])) if window else 0.0,
        frames=len(records),
        warmup_frames=config.warmup_frames,
    )


def run_dynamics(config: DynamicsConfig, seed: int = 0) -> DynamicsResult:
    """
    Simulate config.frames frames

    Frame t draws from SeedSequence(seed, spawn_key=(t,)), so the whole time
    series is a function of (config, seed).

    Args:
        config: Run settings (frames must exceed warmup_frames)
        seed: Master seed

    Returns:
        DynamicsResult with the per-frame records and the summary
    """
    if config.frames <= config.warmup_frames:
        raise ConfigError(f"frames ({config.frames}) must exceed warmup_frames ({config.warmup_frames})")
    state = DynamicsState()
    records = []
    for frame in range(config.frames):
        state = step_frame(state, config, frame_seed(seed, frame))
        records.append(state.last_frame)
        if frame and frame % 500 == 0:
            logger.debug(f"Frame {frame}: backlog {state.last_frame.backlog}, "
                         f"mean delay so far {state.last_frame.mean_delay_so_far:.2f}")
    summary = summarize(records, config)
    logger.info(f"{summary.scheme} at lambda={config.arrival_rate:g}: throughput {summary.throughput:.2f}, "
                f"mean delay {summary.mean_delay:.2f}, {'stable' if summary.stable else 'unstable'}")
    return DynamicsResult(records=records, summary=summary)


@dataclass
class CapacityScan:
    capacity: float
    monotone: bool
    summaries: List[DynamicsSummary]

    @property
    def verdicts(self) -> List[Tuple[float, bool]]:
        return [(summary.arrival_rate, summary.stable) for summary in self.summaries]


class _ScanPoint:
    """Picklable λ-point job for worker pools"""

    def __init__(self, config: DynamicsConfig, seed: int):
        self.config = config
        self.seed = seed

    def __call__(self, arrival_rate: float) -> DynamicsSummary:
        return run_dynamics(replace(self.config, arrival_rate=float(arrival_rate)), self.seed).summary


def capacity_scan(config: DynamicsConfig, lambda_grid: Sequence[float], seed: int = 0, jobs: int = 1,
                  strict: bool = False) -> CapacityScan:
    """
    Largest stable arrival rate on an ascending grid

    The verdicts must switch from stable to unstable at most once; otherwise
    the scan is flagged non-monotone (and raises when strict).

    Args:
        config: Run settings (arrival_rate is overridden per grid point)
        lambda_grid: Ascending arrival rates
        seed: Master seed shared by every point
        jobs: Worker processes
        strict: Raise NonMonotoneStabilityError on non-monotone verdicts

    Returns:
        CapacityScan
    """
    grid = [float(value) for value in lambda_grid]
    if not grid:
        raise ValueError("lambda_grid is empty")
    if any(later < earlier for earlier, later in zip(grid, grid[1:])):
        raise ValueError(f"lambda_grid must be sorted ascending, got {grid}")

    point = _ScanPoint(config, seed)
    if jobs > 1 and len(grid) > 1:
        with Pool(processes=jobs) as pool:
            summaries = pool.map(point, grid)
    else:
        summaries = [point(value) for value in grid]

    verdicts = [summary.stable for summary in summaries]
    first_unstable = next((index for index, stable in enumerate(verdicts) if not stable), len(verdicts))
    monotone = not any(verdicts[first_unstable:])
    stable_rates = [rate for rate, stable in zip(grid, verdicts) if stable]
    capacity = max(stable_rates) if stable_rates else 0.0

    if not monotone:
        table = list(zip(grid, verdicts))
        logger.warning(f"Stability is not monotone along the arrival-rate grid: {table}")
        if strict:
            raise NonMonotoneStabilityError("Stability verdicts flip back to stable at a higher arrival rate", table)
    logger.info(f"{config.scheme_label}: largest stable arrival rate {capacity:g} "
                f"(mean RBs {config.resource_model.mean:g})")
    return CapacityScan(capacity=capacity, monotone=monotone, summaries=summaries)


def dynamics_config_from_dict(data: Dict) -> DynamicsConfig:
    """
    DynamicsConfig from parsed JSON

    resource_model is {"kind": "fixed", "rbs": n} or {"kind": "uniform", "low": a, "high": b};
    scheme is {"kind": "rma"}, {"kind": "dab_rach_rbs", "rach_rbs": m} or
    {"kind": "dab_rach_fraction", "fraction": f}.
    """
    known = {name for name in DynamicsConfig.__dataclass_fields__}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"Unknown key(s) in dynamics config: {', '.join(unknown)}")
    if 'arrival_rate' not in data:
        raise ConfigError("Dynamics config is missing 'arrival_rate'")
    values = dict(data)
    try:
        if 'resource_model' in values:
            values['resource_model'] = parse_resource_model(values['resource_model'])
        if 'scheme' in values:
            values['scheme'] = parse_access_scheme(values['scheme'])
        if 'load_estimator' in values:
            values['load_estimator'] = LoadEstimator(str(values['load_estimator']).lower())
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"Invalid dynamics config: {e}")
    return DynamicsConfig(**values)


def parse_resource_model(block: Dict) -> ResourceModel:
    kind = block.get('kind')
    if kind == 'fixed':
        return FixedRBs(int(block['rbs']))
    if kind == 'uniform':
        return UniformRandomRBs(int(block['low']), int(block['high']))
    raise ConfigError(f"Unknown resource model kind: {kind}")


def parse_access_scheme(block: Dict) -> AccessScheme:
    kind = block.get('kind')
    if kind == 'rma':
        return RMA()
    if kind == 'dab_rach_rbs':
        return DabFixedRachRBs(int(block['rach_rbs']))
    if kind == 'dab_rach_fraction':
        return DabFixedRachFraction(float(block['fraction']))
    raise ConfigError(f"Unknown access scheme kind: {kind}")
