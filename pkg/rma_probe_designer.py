#!/usr/bin/env python3
"""
RMA Probe Designer
Searches the access matrix G under per-group QoS targets with differential
evolution: energy-minimal designs, reliability designs with the finite-size
guideline, the system capacity used for access barring and the subframe
shortening rule for fair ACK-Group comparisons.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize

from rma_andor_analyzer import (
    avg_transmissions,
    evolve,
    finite_size_error,
    max_load_single,
)
from rma_qos_model import (
    AccessMatrix,
    ConfigError,
    GroupSpec,
    RMAError,
    Scenario,
    ScenarioError,
    Scheme,
    ValidatedScenario,
    allowed_entries,
    scenario_from_dict,
    scenario_to_dict,
    validate_scenario,
)

logger = logging.getLogger(__name__)

FEASIBILITY_OFFSET = 1e3
INVALID_CANDIDATE = 1e12
CAPACITY_BUDGET_GENERATIONS = 50
POPULATION_FACTOR = 15
MIN_POPULATION = 5


class InfeasibleDesignError(RMAError):
    """No access matrix met every group's target"""


class Objective(Enum):
    MIN_SUM_TRANSMISSIONS = "min_sum_transmissions"
    MIN_MAX_ERROR_RATIO = "min_max_error_ratio"


@dataclass(frozen=True)
class DEParams:
    """
    Differential evolution settings

    Args:
        population_size: Number of candidates (15 x dimension when omitted)
        weight: Differential weight F
        crossover: Binomial crossover rate CR
        max_generations: Generation budget
        seed: Seed of the search
        tol: Relative spread of the population fitness that ends the search early
            (0 stops only once the whole population scores the same)
    """
    population_size: Optional[int] = None
    weight: float = 0.5
    crossover: float = 0.9
    max_generations: int = 300
    seed: int = 0
    tol: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.weight < 2.0:
            raise ValueError(f"DE weight must lie in [0, 2), got {self.weight}")
        if not 0.0 <= self.crossover <= 1.0:
            raise ValueError(f"DE crossover must lie in [0, 1], got {self.crossover}")
        if self.population_size is not None and self.population_size < MIN_POPULATION:
            raise ValueError(f"DE population must hold at least {MIN_POPULATION} candidates, "
                             f"got {self.population_size}")
        if self.max_generations < 0:
            raise ValueError(f"max_generations must be nonnegative, got {self.max_generations}")
        if self.tol < 0:
            raise ValueError(f"DE tol must be nonnegative, got {self.tol}")


@dataclass
class DEResult:
    x: np.ndarray
    fun: float
    generations: int
    history: List[float] = field(default_factory=list)


class DifferentialEvolution:
    """
    DE/rand/1/bin with greedy selection, run by scipy.optimize.differential_evolution

    The initial population is drawn here so that population_size is the exact
    number of candidates. Selection is deferred to the end of every
    generation, which lets scipy score a whole generation on a worker pool
    while the result stays a function of the seed alone.
    """

    def __init__(self, objective: Callable[[np.ndarray], float], bounds: Sequence[Tuple[float, float]],
                 params: Optional[DEParams] = None, jobs: int = 1):
        self.f = objective
        self.bounds = np.array(bounds, dtype=float).reshape(-1, 2)
        if self.bounds.shape[0] == 0:
            raise ValueError("DE needs at least one bounded dimension")
        if np.any(self.bounds[:, 0] > self.bounds[:, 1]):
            raise ValueError("Every lower bound must not exceed its upper bound")
        self.params = params or DEParams()
        self.dim = self.bounds.shape[0]
        self.pop_size = self.params.population_size or POPULATION_FACTOR * self.dim
        if self.pop_size < MIN_POPULATION:
            raise ValueError(f"DE population must hold at least {MIN_POPULATION} candidates, got {self.pop_size}")
        self.jobs = jobs
        self.history: List[float] = []

    def _initial_population(self) -> np.ndarray:
        rng = np.random.default_rng(self.params.seed)
        low, high = self.bounds[:, 0], self.bounds[:, 1]
        return low + rng.random((self.pop_size, self.dim)) * (high - low)

    def _record(self, intermediate_result: optimize.OptimizeResult) -> None:
        self.history.append(float(intermediate_result.fun))
        logger.debug(f"Generation {len(self.history)}: best fitness = {intermediate_result.fun:.6g}")

    def optimize(self) -> DEResult:
        self.history = []
        result = optimize.differential_evolution(
            self.f,
            bounds=[tuple(bound) for bound in self.bounds],
            strategy='rand1bin',
            maxiter=self.params.max_generations,
            mutation=self.params.weight,
            recombination=self.params.crossover,
            seed=self.params.seed,
            tol=self.params.tol,
            atol=0.0,
            init=self._initial_population(),
            callback=self._record,
            polish=False,
            updating='deferred',
            workers=self.jobs,
        )
        if result.nit < self.params.max_generations:
            logger.debug(f"Population converged after {result.nit} generations")
        return DEResult(x=np.array(result.x, dtype=float), fun=float(result.fun), generations=int(result.nit),
                        history=list(self.history))


def differential_evolution(objective: Callable[[np.ndarray], float], bounds: Sequence[Tuple[float, float]],
                           params: Optional[DEParams] = None, jobs: int = 1) -> DEResult:
    """Minimize objective over a box with DE/rand/1/bin"""
    return DifferentialEvolution(objective, bounds, params, jobs).optimize()


@dataclass
class DesignProblem:
    """
    Access-matrix design problem

    Args:
        scenario: Validated scenario (scheme and zero pattern come from it)
        objective: Energy or reliability objective
        targets: Per-group ε* (defaults to the scenario's targets)
        g_max: Upper bound of every free entry of G
        finite_size_c: Spread constant of the finite-size guideline
        penalty_weight: Weight of the summed target violation
        shrink_subframes: Shorten ACK-Group subframes before designing
        de: Differential evolution settings
    """
    scenario: ValidatedScenario
    objective: Objective = Objective.MIN_SUM_TRANSMISSIONS
    targets: Optional[np.ndarray] = None
    g_max: float = 4.0
    finite_size_c: float = 10.0
    penalty_weight: float = 1e6
    shrink_subframes: bool = False
    de: DEParams = field(default_factory=DEParams)

    def __post_init__(self):
        self.targets = self.scenario.targets if self.targets is None else np.asarray(self.targets, dtype=float)
        if self.targets.shape != (self.scenario.num_groups,):
            raise ScenarioError(f"Expected {self.scenario.num_groups} targets, got {self.targets.tolist()}")
        if self.g_max <= 0:
            raise ScenarioError(f"g_max must be positive, got {self.g_max}")
        if self.finite_size_c < 0:
            raise ScenarioError(f"finite_size_c must be nonnegative, got {self.finite_size_c}")

    @property
    def free_entries(self) -> np.ndarray:
        return allowed_entries(self.scenario)

    def matrix(self, x: np.ndarray) -> AccessMatrix:
        entries = np.zeros(self.free_entries.shape)
        entries[self.free_entries] = x
        return AccessMatrix(entries)


@dataclass
class DesignResult:
    G: AccessMatrix
    eps_raw: np.ndarray
    eps_corrected: np.ndarray
    M: np.ndarray
    feasible: bool
    generations_used: int
    objective_value: float
    scenario: ValidatedScenario

    def to_report(self) -> Dict:
        return {
            'feasible': self.feasible,
            'objective_value': self.objective_value,
            'generations_used': self.generations_used,
            'access_matrix': self.G.to_rows(),
            'eps_raw': self.eps_raw.tolist(),
            'eps_corrected': self.eps_corrected.tolist(),
            'avg_transmissions': self.M.tolist(),
            'sum_transmissions': float(np.sum(self.M)),
            'subframe_lengths': list(self.scenario.subframe_lengths),
            'scenario': scenario_to_dict(self.scenario),
        }


class _DesignObjective:
    """Picklable objective of a design problem"""

    def __init__(self, problem: DesignProblem):
        self.problem = problem
        scn = problem.scenario
        lengths = np.asarray(scn.subframe_lengths, dtype=float)[:, None]
        worst_case = problem.g_max * problem.free_entries * lengths / scn.group_sizes[None, :]
        self.offset = max(FEASIBILITY_OFFSET, float(worst_case.sum()) + 1.0)

    def __call__(self, x: np.ndarray) -> float:
        problem = self.problem
        G = problem.matrix(x)
        try:
            if problem.objective is Objective.MIN_MAX_ERROR_RATIO:
                corrected = finite_size_error(problem.scenario, G, problem.finite_size_c)
                return float(np.max(corrected / problem.targets))
            eps = evolve(problem.scenario, G).deadline_epsilon
            cost = float(np.sum(avg_transmissions(problem.scenario, G)))
            violation = float(np.sum(np.maximum(0.0, eps - problem.targets)))
            if violation > 0:
                cost += self.offset + problem.penalty_weight * violation
            return cost
        except (RMAError, FloatingPointError) as e:
            logger.debug(f"Candidate rejected: {e}")
            return INVALID_CANDIDATE


def _solve(problem: DesignProblem, jobs: int) -> DesignResult:
    if problem.shrink_subframes:
        lengths = shrink_subframes(problem.scenario, problem.targets)
        problem = replace(problem, scenario=with_subframe_lengths(problem.scenario, lengths), shrink_subframes=False)

    scn = problem.scenario
    dim = int(problem.free_entries.sum())
    logger.info(f"Designing G for {problem.objective.value}: {dim} free entries, "
                f"targets {problem.targets.tolist()}, scheme {scn.scheme.value}")

    search = differential_evolution(_DesignObjective(problem), [(0.0, problem.g_max)] * dim, problem.de, jobs)
    G = problem.matrix(search.x)

    eps_raw = evolve(scn, G).deadline_epsilon
    if problem.objective is Objective.MIN_MAX_ERROR_RATIO:
        eps_corrected = finite_size_error(scn, G, problem.finite_size_c)
    else:
        eps_corrected = eps_raw.copy()
    feasible = bool(np.all(eps_corrected <= problem.targets))

    result = DesignResult(
        G=G,
        eps_raw=eps_raw,
        eps_corrected=eps_corrected,
        M=avg_transmissions(scn, G),
        feasible=feasible,
        generations_used=search.generations,
        objective_value=search.fun,
        scenario=scn,
    )
    if feasible:
        logger.info(f"Feasible design after {search.generations} generations: "
                    f"sum M = {np.sum(result.M):.4f}, eps = {np.array2string(eps_corrected, precision=6)}")
    else:
        logger.warning(f"No design met every target: eps = {np.array2string(eps_corrected, precision=6)} "
                       f"vs targets {problem.targets.tolist()}")
    return result


def design_energy_min(problem: DesignProblem, jobs: int = 1) -> DesignResult:
    """
    Minimize Σ_i M_i subject to ε_i^(i) <= ε*_i

    Violations are penalized so that every feasible candidate scores below
    every infeasible one; the result carries the feasibility flag.
    """
    if problem.objective is not Objective.MIN_SUM_TRANSMISSIONS:
        raise ValueError("design_energy_min needs the min_sum_transmissions objective")
    return _solve(problem, jobs)


def design_reliable(problem: DesignProblem, jobs: int = 1) -> DesignResult:
    """Minimize max_i ε̂_i / ε*_i with ε̂ from the finite-size guideline"""
    if problem.objective is not Objective.MIN_MAX_ERROR_RATIO:
        problem = replace(problem, objective=Objective.MIN_MAX_ERROR_RATIO)
    return _solve(problem, jobs)


def design(problem: DesignProblem, jobs: int = 1) -> DesignResult:
    if problem.objective is Objective.MIN_MAX_ERROR_RATIO:
        return design_reliable(problem, jobs)
    return design_energy_min(problem, jobs)


def with_subframe_lengths(scn: ValidatedScenario, lengths: Sequence[int]) -> ValidatedScenario:
    """Same scenario with deadlines moved to match new subframe lengths"""
    deadlines = np.cumsum(lengths).tolist()
    groups = tuple(replace(group, deadline_slots=int(deadline)) for group, deadline in zip(scn.groups, deadlines))
    return validate_scenario(Scenario(
        num_devices=scn.num_devices,
        num_slots=scn.num_slots,
        groups=groups,
        scheme=scn.scheme,
        latency_mode=scn.latency_mode,
        feedback_loss_prob=scn.feedback_loss_prob,
        cancel_unacked_replicas=scn.cancel_unacked_replicas,
    ))


def shrink_subframes(scn: ValidatedScenario, targets: Optional[Sequence[float]] = None) -> List[int]:
    """
    ACK-Group fair-comparison lengths

    Every subframe s < r keeps min(ΔN_s, ceil(α_s K / L*(ε*_s))) slots; the
    slots freed go to the last subframe so the frame length is unchanged.
    """
    if scn.scheme is not Scheme.ACK_GROUP:
        raise ScenarioError("Subframe shortening applies to ACK-Group frames only")
    targets = scn.targets if targets is None else np.asarray(targets, dtype=float)
    lengths = list(scn.subframe_lengths)
    for s in range(scn.num_groups - 1):
        bound = max_load_single(min(1.0, float(targets[s]))).load
        needed = max(1, math.ceil(scn.alphas[s] * scn.num_devices / bound))
        lengths[s] = min(lengths[s], needed)
    lengths[-1] = scn.num_slots - sum(lengths[:-1])
    if lengths != list(scn.subframe_lengths):
        logger.info(f"Subframe lengths {list(scn.subframe_lengths)} shortened to {lengths}")
    return lengths


@dataclass
class CapacityResult:
    load: float
    design: Optional[DesignResult]
    bracket: List[Tuple[float, bool]] = field(default_factory=list)


def capacity_scenario(alpha: Sequence[float], beta: Sequence[float], targets: Sequence[float], num_slots: int,
                      load: float, scheme: Scheme = Scheme.ACK_ALL) -> ValidatedScenario:
    """Scenario at load K/N with cumulative deadline fractions β"""
    deadlines = [int(round(b * num_slots)) for b in beta]
    groups = tuple(GroupSpec(alpha=float(a), deadline_slots=d, target_error=float(t))
                   for a, d, t in zip(alpha, deadlines, targets))
    return validate_scenario(Scenario(num_devices=max(1, int(round(load * num_slots))), num_slots=num_slots,
                                      groups=groups, scheme=scheme))


def system_capacity(alpha: Sequence[float], beta: Sequence[float], targets: Sequence[float], num_slots: int,
                    c: float = 10.0, de: Optional[DEParams] = None, scheme: Scheme = Scheme.ACK_ALL,
                    resolution: float = 1e-2, load_max: float = 4.0, jobs: int = 1) -> CapacityResult:
    """
    Largest load K/N for which a reliability design meets every target

    Bisection runs with a reduced DE budget; the reported capacity is checked
    again with the full budget and lowered step by step if that check fails.

    Args:
        alpha: Group fractions
        beta: Cumulative deadline fractions N_i/N (last one 1)
        targets: Per-group ε*
        num_slots: Frame length N
        c: Finite-size spread constant
        de: Full-budget DE settings
        scheme: Feedback scheme
        resolution: Bisection resolution on K/N

    Returns:
        CapacityResult
    """
    full = de or DEParams()
    budget = replace(full, max_generations=min(full.max_generations, CAPACITY_BUDGET_GENERATIONS))
    bracket: List[Tuple[float, bool]] = []

    def attempt(load: float, params: DEParams) -> DesignResult:
        scn = capacity_scenario(alpha, beta, targets, num_slots, load, scheme)
        problem = DesignProblem(scenario=scn, objective=Objective.MIN_MAX_ERROR_RATIO,
                                finite_size_c=c, de=params)
        result = design_reliable(problem, jobs)
        bracket.append((load, result.feasible))
        logger.info(f"Capacity attempt at K/N = {load:.4f}: {'feasible' if result.feasible else 'infeasible'}")
        return result

    if attempt(load_max, budget).feasible:
        verified = attempt(load_max, full)
        if verified.feasible:
            return CapacityResult(load=load_max, design=verified, bracket=bracket)

    lo, hi = resolution, load_max
    if not attempt(lo, budget).feasible:
        logger.warning(f"Targets {list(targets)} cannot be met even at K/N = {lo}")
        return CapacityResult(load=0.0, design=None, bracket=bracket)
    while hi - lo > resolution:
        mid = 0.5 * (lo + hi)
        if attempt(mid, budget).feasible:
            lo = mid
        else:
            hi = mid

    load = lo
    while load >= resolution:
        verified = attempt(load, full)
        if verified.feasible:
            return CapacityResult(load=load, design=verified, bracket=bracket)
        load -= resolution
    return CapacityResult(load=0.0, design=None, bracket=bracket)


PROBLEM_KEYS = ('scenario', 'objective', 'g_max', 'finite_size_c', 'penalty_weight', 'shrink_subframes', 'de')
DE_KEYS = ('population_size', 'weight', 'crossover', 'max_generations', 'seed', 'tol')


def design_problem_from_dict(data: Dict, seed: Optional[int] = None) -> DesignProblem:
    """
    DesignProblem from parsed JSON

    Args:
        data: Dictionary with a nested scenario block and optional design settings
        seed: Overrides de.seed when given

    Returns:
        DesignProblem
    """
    if not isinstance(data, dict):
        raise ConfigError("Design problem must be a JSON object")
    unknown = sorted(set(data) - set(PROBLEM_KEYS))
    if unknown:
        raise ConfigError(f"Unknown key(s) in design problem: {', '.join(unknown)}")
    if 'scenario' not in data:
        raise ConfigError("Design problem is missing 'scenario'")
    scenario, _ = scenario_from_dict(data['scenario'])

    de_block = data.get('de', {}) or {}
    unknown = sorted(set(de_block) - set(DE_KEYS))
    if unknown:
        raise ConfigError(f"Unknown key(s) in de settings: {', '.join(unknown)}")
    if seed is not None:
        de_block = {**de_block, 'seed': seed}
    try:
        objective = Objective(str(data.get('objective', Objective.MIN_SUM_TRANSMISSIONS.value)).lower())
        de = DEParams(**de_block)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Invalid design settings: {e}")

    return DesignProblem(
        scenario=validate_scenario(scenario),
        objective=objective,
        g_max=float(data.get('g_max', 4.0)),
        finite_size_c=float(data.get('finite_size_c', 10.0)),
        penalty_weight=float(data.get('penalty_weight', 1e6)),
        shrink_subframes=bool(data.get('shrink_subframes', False)),
        de=de,
    )
