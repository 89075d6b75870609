#!/usr/bin/env python3
"""
RMA SIC Simulator
Monte-Carlo simulation of one transmission frame: bipartite graph sampling,
iterative SIC peeling at the end of every subframe, acknowledgements with
optional feedback loss, and an exhaustive enumeration oracle for tiny frames.
"""

import itertools
import logging
from dataclasses import dataclass, field
from multiprocessing import Pool
from typing import Dict, Iterable, List, Optional, Set, Tuple, Union

import numpy as np

from rma_qos_model import (
    AccessMatrix,
    LatencyMode,
    ResidualSizes,
    RMAError,
    ScenarioError,
    ValidatedScenario,
    access_probabilities,
    check_access_matrix,
    group_device_counts,
)

logger = logging.getLogger(__name__)

MAX_ENUMERATION_BITS = 20

SeedLike = Union[int, np.random.SeedSequence, np.random.Generator, None]


class InstanceTooLargeError(RMAError, ValueError):
    pass


def make_rng(seed: SeedLike) -> np.random.Generator:
    """Counter-based generator (Philox) for an integer seed, a SeedSequence or an existing Generator"""
    if isinstance(seed, np.random.Generator):
        return seed
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(0 if seed is None else seed)
    return np.random.Generator(np.random.Philox(seed))


def trial_seed(master: int, trial: int) -> np.random.SeedSequence:
    """Independent stream of trial t under a master seed"""
    return np.random.SeedSequence(master, spawn_key=(trial,))


class TransmissionGraph:
    """
    Bipartite device/slot graph of one frame

    Slots use global 0-based indices; subframe s owns the slots of
    ValidatedScenario.subframe_slots(s). ghost_load counts replicas in a slot
    that the receiver cannot cancel (transmissions of devices whose packet it
    already holds but does not strip out).
    """

    def __init__(self, subframe_lengths: Iterable[int], device_group: np.ndarray):
        self.subframe_lengths = tuple(int(n) for n in subframe_lengths)
        self.device_group = np.asarray(device_group, dtype=int)
        num_slots = sum(self.subframe_lengths)
        self.device_edges: List[Set[int]] = [set() for _ in range(self.device_group.size)]
        self.slot_edges: List[Set[int]] = [set() for _ in range(num_slots)]
        self.ghost_load = np.zeros(num_slots, dtype=int)

    @property
    def num_devices(self) -> int:
        return self.device_group.size

    @property
    def num_slots(self) -> int:
        return len(self.slot_edges)

    @property
    def num_edges(self) -> int:
        return sum(len(slots) for slots in self.device_edges)

    def add_edge(self, device: int, slot: int) -> None:
        self.device_edges[device].add(slot)
        self.slot_edges[slot].add(device)

    def add_edges(self, edges: np.ndarray) -> None:
        for device, slot in edges:
            self.add_edge(int(device), int(slot))

    def is_singleton(self, slot: int) -> bool:
        return len(self.slot_edges[slot]) == 1 and self.ghost_load[slot] == 0

    def cancel_device(self, device: int) -> Set[int]:
        """Strip every replica of a decoded device; returns the slots that changed"""
        slots = self.device_edges[device]
        for slot in slots:
            self.slot_edges[slot].discard(device)
        self.device_edges[device] = set()
        return slots

    def copy(self) -> "TransmissionGraph":
        clone = TransmissionGraph(self.subframe_lengths, self.device_group)
        clone.device_edges = [set(slots) for slots in self.device_edges]
        clone.slot_edges = [set(devices) for devices in self.slot_edges]
        clone.ghost_load = self.ghost_load.copy()
        return clone


@dataclass
class PeelResult:
    resolved: Set[int]
    iterations: int


def peel(graph: TransmissionGraph, decodable_slots: Optional[int] = None,
         rng: Optional[np.random.Generator] = None) -> PeelResult:
    """
    Iterative SIC over slots 0..decodable_slots-1

    Every round decodes all current singleton slots and cancels the decoded
    devices' replicas everywhere in the graph; rounds repeat until no singleton
    is left. The graph is modified in place.

    Args:
        graph: Transmission graph
        decodable_slots: Number of leading slots the receiver has seen (defaults to all)
        rng: Shuffles the order singletons are handled in within a round

    Returns:
        PeelResult with the decoded devices and the number of rounds
    """
    limit = graph.num_slots if decodable_slots is None else decodable_slots
    resolved: Set[int] = set()
    rounds = 0
    candidates: Iterable[int] = range(limit)
    while True:
        singletons = sorted(slot for slot in candidates if slot < limit and graph.is_singleton(slot))
        if not singletons:
            break
        rounds += 1
        if rng is not None:
            rng.shuffle(singletons)
        touched: Set[int] = set()
        for slot in singletons:
            if not graph.is_singleton(slot):
                continue
            device = next(iter(graph.slot_edges[slot]))
            resolved.add(device)
            touched.update(graph.cancel_device(device))
        candidates = touched
    return PeelResult(resolved=resolved, iterations=rounds)


def _draw_edges(devices: np.ndarray, device_p: np.ndarray, num_slots: int, offset: int,
                rng: np.random.Generator) -> np.ndarray:
    """Each device picks Binomial(num_slots, p) distinct slots of the subframe"""
    degrees = rng.binomial(num_slots, device_p)
    edges = []
    for device, degree in zip(devices, degrees):
        if degree == 0:
            continue
        slots = rng.choice(num_slots, size=degree, replace=False) + offset
        edges.extend((int(device), int(slot)) for slot in slots)
    return np.array(edges, dtype=int).reshape(-1, 2)


def _subframe_probabilities(G: AccessMatrix, residual_counts: np.ndarray, subframe: int,
                            clamp: bool) -> np.ndarray:
    r = G.size
    sizes = np.zeros((r, r))
    sizes[:, subframe] = residual_counts
    # other subframes have no residuals here, so only row s may carry traffic
    row_only = np.zeros((r, r))
    row_only[subframe] = G.entries[subframe]
    return access_probabilities(AccessMatrix(row_only), ResidualSizes(sizes), clamp=clamp)[subframe]


def sample_graph(scn: ValidatedScenario, G: AccessMatrix, devices: np.ndarray, device_group: np.ndarray,
                 subframe: int, seed: SeedLike, residual_counts: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Draw the edges of one subframe

    Every (active device, slot of the subframe) pair becomes an edge
    independently with probability p_i^(s) = g_i^(s) / residual_i.

    Args:
        scn: Validated scenario
        G: Access matrix
        devices: Ids of the devices that transmit in this subframe
        device_group: Group index of every device id
        subframe: 0-based subframe index
        seed: Seed or generator
        residual_counts: Per-group population behind p (defaults to the active devices per group)

    Returns:
        Integer array of (device, global slot) rows
    """
    devices = np.asarray(devices, dtype=int)
    if residual_counts is None:
        residual_counts = np.bincount(device_group[devices], minlength=scn.num_groups)
    p = _subframe_probabilities(G, np.asarray(residual_counts, dtype=float), subframe, clamp=False)
    offset = scn.subframe_slots(subframe).start
    return _draw_edges(devices, p[device_group[devices]], scn.subframe_lengths[subframe], offset, make_rng(seed))


@dataclass
class FrameOutcome:
    """
    Result of one simulated frame

    resolved_at holds the subframe in which the receiver decoded a device (-1
    if never). unresolved[i, s] is the fraction of group i not decoded by the
    end of subframe s; its diagonal is the deadline error.
    """
    resolved_at: np.ndarray
    unresolved: np.ndarray
    transmissions: np.ndarray
    device_group: np.ndarray
    acked: np.ndarray
    ack_lost: Set[int] = field(default_factory=set)
    peel_rounds: List[int] = field(default_factory=list)

    @property
    def deadline_error(self) -> np.ndarray:
        return np.diag(self.unresolved).copy()

    def mean_transmissions(self) -> np.ndarray:
        r = self.unresolved.shape[0]
        totals = np.bincount(self.device_group, weights=self.transmissions, minlength=r)
        counts = np.bincount(self.device_group, minlength=r)
        return np.divide(totals, counts, out=np.zeros(r), where=counts > 0)


def _unresolved_fractions(resolved_at: np.ndarray, device_group: np.ndarray, r: int) -> np.ndarray:
    counts = np.bincount(device_group, minlength=r)
    open_counts = np.bincount(device_group[resolved_at < 0], minlength=r)
    return np.divide(open_counts, counts, out=np.zeros(r), where=counts > 0)


def run_frame(scn: ValidatedScenario, G: AccessMatrix, seed: SeedLike = 0) -> FrameOutcome:
    """
    Simulate one frame

    At every subframe the devices still transmitting draw their edges, the
    receiver peels the cumulative graph of the slots received so far and sends
    ACKs. An ACK is lost with probability feedback_loss_prob; a decoded device
    without ACK keeps transmitting and is re-ACKed at later subframe ends. Its
    further replicas are stripped by the receiver when cancel_unacked_replicas
    is set and act as uncancellable interference otherwise. Under strict
    latency group i stops after subframe i while its edges stay in the graph.

    Args:
        scn: Validated scenario
        G: Access matrix
        seed: Seed or generator

    Returns:
        FrameOutcome
    """
    check_access_matrix(scn, G)
    rng = make_rng(seed)
    r = scn.num_groups
    device_group = np.repeat(np.arange(r), group_device_counts(scn))
    num_devices = device_group.size

    graph = TransmissionGraph(scn.subframe_lengths, device_group)
    resolved_at = np.full(num_devices, -1, dtype=int)
    acked = np.zeros(num_devices, dtype=bool)
    transmissions = np.zeros(num_devices, dtype=int)
    unresolved = np.ones((r, r))
    ack_lost: Set[int] = set()
    peel_rounds = []
    strict = scn.latency_mode is LatencyMode.STRICT

    for s in range(r):
        eligible = ~acked
        if strict:
            eligible &= device_group >= s
        open_devices = eligible & (resolved_at < 0)
        residual_counts = np.bincount(device_group[open_devices], minlength=r).astype(float)

        g_row = G.entries[s]
        if np.any(g_row > residual_counts):
            logger.warning(f"Subframe {s + 1}: g exceeds the unresolved population of some group, clamping p to 1")
        p = _subframe_probabilities(G, residual_counts, s, clamp=True)

        devices = np.flatnonzero(eligible)
        offset = scn.subframe_slots(s).start
        edges = _draw_edges(devices, p[device_group[devices]], scn.subframe_lengths[s], offset, rng)
        if edges.size:
            np.add.at(transmissions, edges[:, 0], 1)
            known = resolved_at[edges[:, 0]] >= 0
            graph.add_edges(edges[~known])
            if not scn.cancel_unacked_replicas:
                np.add.at(graph.ghost_load, edges[known, 1], 1)

        result = peel(graph, scn.subframe_slots(s).stop)
        peel_rounds.append(result.iterations)
        if result.resolved:
            resolved_at[sorted(result.resolved)] = s

        waiting = np.flatnonzero((resolved_at >= 0) & ~acked & eligible)
        if scn.feedback_loss_prob > 0 and waiting.size:
            lost = rng.random(waiting.size) < scn.feedback_loss_prob
            ack_lost.update(int(device) for device in waiting[lost])
            acked[waiting[~lost]] = True
        else:
            acked[waiting] = True

        unresolved[:, s] = _unresolved_fractions(resolved_at, device_group, r)
        logger.debug(f"Subframe {s + 1}: {len(result.resolved)} decoded in {result.iterations} rounds, "
                     f"unresolved={np.array2string(unresolved[:, s], precision=4)}")

    return FrameOutcome(resolved_at=resolved_at, unresolved=unresolved, transmissions=transmissions,
                        device_group=device_group, acked=acked, ack_lost=ack_lost, peel_rounds=peel_rounds)


@dataclass
class MonteCarloSummary:
    """
    Aggregate of independent frames

    mean_unresolved and stderr are indexed [group, subframe]; per_trial keeps
    every trial's unresolved matrix in trial order.
    """
    trials: int
    seed: int
    mean_unresolved: np.ndarray
    stderr: np.ndarray
    mean_transmissions: np.ndarray
    per_trial: np.ndarray
    ack_lost_fraction: float = 0.0

    @property
    def deadline_error(self) -> np.ndarray:
        return np.diag(self.mean_unresolved).copy()

    @property
    def deadline_stderr(self) -> np.ndarray:
        return np.diag(self.stderr).copy()

    def records(self) -> List[Dict]:
        rows = []
        r = self.mean_unresolved.shape[0]
        for i in range(r):
            for s in range(r):
                rows.append({
                    'group': i + 1,
                    'subframe': s + 1,
                    'mean_eps': float(self.mean_unresolved[i, s]),
                    'stderr': float(self.stderr[i, s]),
                    'mean_tx': float(self.mean_transmissions[i]),
                })
        return rows

    def trial_records(self) -> List[Dict]:
        rows = []
        for trial, matrix in enumerate(self.per_trial):
            for i in range(matrix.shape[0]):
                rows.append({'trial': trial, 'group': i + 1, 'deadline_eps': float(matrix[i, i])})
        return rows


class _TrialRunner:
    """Picklable per-trial job for worker pools"""

    def __init__(self, scn: ValidatedScenario, G: AccessMatrix, master_seed: int):
        self.scn = scn
        self.G = G
        self.master_seed = master_seed

    def __call__(self, trial: int) -> Tuple[np.ndarray, np.ndarray, int]:
        outcome = run_frame(self.scn, self.G, trial_seed(self.master_seed, trial))
        return outcome.unresolved, outcome.mean_transmissions(), len(outcome.ack_lost)


def monte_carlo(scn: ValidatedScenario, G: AccessMatrix, trials: int, seed: int = 0,
                jobs: int = 1) -> MonteCarloSummary:
    """
    Run independent frames and aggregate them

    Trial t draws from trial_seed(seed, t), so the summary depends only on
    (scenario, G, trials, seed), never on jobs.

    Args:
        scn: Validated scenario
        G: Access matrix
        trials: Number of frames (>= 1)
        seed: Master seed
        jobs: Worker processes

    Returns:
        MonteCarloSummary
    """
    if trials < 1:
        raise ValueError(f"trials must be at least 1, got {trials}")
    check_access_matrix(scn, G)
    runner = _TrialRunner(scn, G, seed)
    logger.info(f"Running {trials} frames with {jobs} worker(s), seed {seed}")

    if jobs > 1 and trials > 1:
        with Pool(processes=jobs) as pool:
            results = pool.map(runner, range(trials), chunksize=max(1, trials // (4 * jobs)))
    else:
        results = [runner(trial) for trial in range(trials)]

    per_trial = np.stack([result[0] for result in results])
    transmissions = np.stack([result[1] for result in results])
    lost = sum(result[2] for result in results)

    mean = per_trial.mean(axis=0)
    if trials > 1:
        stderr = per_trial.std(axis=0, ddof=1) / np.sqrt(trials)
    else:
        stderr = np.zeros_like(mean)

    summary = MonteCarloSummary(
        trials=trials,
        seed=seed,
        mean_unresolved=mean,
        stderr=stderr,
        mean_transmissions=transmissions.mean(axis=0),
        per_trial=per_trial,
        ack_lost_fraction=lost / (trials * scn.num_devices),
    )
    logger.info(f"Deadline errors: {np.array2string(summary.deadline_error, precision=6)}")
    return summary


@dataclass
class EnumerationResult:
    unresolved: np.ndarray
    patterns: int

    @property
    def deadline_error(self) -> np.ndarray:
        return np.diag(self.unresolved).copy()


def exact_error_enumeration(scn: ValidatedScenario, G: AccessMatrix) -> EnumerationResult:
    """
    Exact expected unresolved fractions of a tiny frame

    Enumerates every edge pattern of every subframe with its Bernoulli weight,
    using the same realized-residual access probabilities and deactivation
    rules as run_frame with perfect feedback.

    Args:
        scn: Validated scenario with K·N <= 20
        G: Access matrix

    Returns:
        EnumerationResult
    """
    if scn.num_devices * scn.num_slots > MAX_ENUMERATION_BITS:
        raise InstanceTooLargeError(
            f"K*N = {scn.num_devices * scn.num_slots} exceeds the enumeration limit of {MAX_ENUMERATION_BITS}"
        )
    if scn.feedback_loss_prob > 0:
        raise ScenarioError("Exact enumeration assumes perfect feedback")
    check_access_matrix(scn, G)

    r = scn.num_groups
    device_group = np.repeat(np.arange(r), group_device_counts(scn))
    strict = scn.latency_mode is LatencyMode.STRICT
    expected = np.zeros((r, r))
    patterns = 0

    def descend(s: int, graph: TransmissionGraph, resolved_at: np.ndarray, weight: float) -> None:
        nonlocal patterns
        if s == r:
            patterns += 1
            return
        active = resolved_at < 0
        if strict:
            active &= device_group >= s
        residual_counts = np.bincount(device_group[active], minlength=r).astype(float)
        p = _subframe_probabilities(G, residual_counts, s, clamp=True)
        devices = np.flatnonzero(active)
        slots = list(scn.subframe_slots(s))
        pairs = [(int(device), slot) for device in devices for slot in slots]
        pair_p = np.array([p[device_group[device]] for device, _ in pairs])

        for bits in itertools.product((0, 1), repeat=len(pairs)):
            chosen = np.array(bits, dtype=bool)
            pattern_weight = weight * float(np.prod(np.where(chosen, pair_p, 1.0 - pair_p)))
            if pattern_weight == 0.0:
                continue
            branch = graph.copy()
            for (device, slot), picked in zip(pairs, bits):
                if picked:
                    branch.add_edge(device, slot)
            decoded = peel(branch, scn.subframe_slots(s).stop).resolved
            branch_resolved = resolved_at.copy()
            if decoded:
                branch_resolved[sorted(decoded)] = s
            expected[:, s] += pattern_weight * _unresolved_fractions(branch_resolved, device_group, r)
            descend(s + 1, branch, branch_resolved, pattern_weight)

    descend(0, TransmissionGraph(scn.subframe_lengths, device_group), np.full(device_group.size, -1), 1.0)
    logger.debug(f"Enumerated {patterns} complete edge patterns")
    return EnumerationResult(unresolved=expected, patterns=patterns)
