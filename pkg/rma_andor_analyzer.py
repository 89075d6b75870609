#!/usr/bin/env python3
"""
RMA AND-OR Tree Analyzer
Degree-spectrum algebra and the asymptotic density evolution of the SIC
decoder: per-group resolution-error probabilities for ACK-All and ACK-Group
frames, average transmissions, the finite-size guideline and the load bounds
used for access barring.
"""

import logging
from dataclasses import dataclass, field
from functools import lru_cache, reduce
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats

from rma_qos_model import (
    AccessMatrix,
    NonDiagonalMatrixError,
    ProbabilityExceedsOneError,
    ResidualSizes,
    RMAError,
    Scheme,
    ValidatedScenario,
    access_probabilities,
    check_access_matrix,
    group_device_counts,
)

logger = logging.getLogger(__name__)

NORMALIZATION_TOLERANCE = 1e-9
TAIL_MASS = 1e-12
DEFAULT_TOL = 1e-12
DEFAULT_MAX_ITER = 10_000
DEFAULT_G_GRID = np.round(np.arange(0.0, 4.0 + 1e-9, 0.01), 2)


class ZeroMeanSpectrumError(RMAError, ValueError):
    pass


class TruncationTooSmallError(RMAError, ValueError):
    pass


class NonConvergenceError(RMAError, ArithmeticError):
    pass


class GridTooCoarseError(RMAError, ValueError):
    pass


class DegreeSpectrum:
    """
    Probability vector over node degrees d = 0, 1, 2, ...

    Args:
        probs: probs[d] is the probability that a node has degree d
    """

    def __init__(self, probs: Union[Sequence[float], np.ndarray]):
        values = np.atleast_1d(np.array(probs, dtype=float))
        if values.ndim != 1 or values.size == 0:
            raise ValueError("A degree spectrum needs a non-empty 1-D probability vector")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise ValueError("Degree probabilities must be finite and nonnegative")
        total = values.sum()
        if abs(total - 1.0) > NORMALIZATION_TOLERANCE:
            raise ValueError(f"Degree probabilities sum to {total}, not 1")
        values = values / total
        values.setflags(write=False)
        self.probs = values
        self.mean = float(np.dot(np.arange(values.size), values))

    @classmethod
    def from_weights(cls, weights: np.ndarray) -> "DegreeSpectrum":
        """Normalize nonnegative weights and drop trailing zero degrees"""
        weights = np.trim_zeros(np.asarray(weights, dtype=float), 'b')
        if weights.size == 0:
            return cls([1.0])
        return cls(weights / weights.sum())

    @property
    def max_degree(self) -> int:
        return self.probs.size - 1

    def padded(self, length: int) -> np.ndarray:
        out = np.zeros(max(length, self.probs.size))
        out[:self.probs.size] = self.probs
        return out

    def generating_function(self, x: Union[float, np.ndarray]) -> np.ndarray:
        """Evaluate Σ_d probs[d] x^d"""
        return np.polynomial.polynomial.polyval(x, self.probs)

    def __repr__(self) -> str:
        return f"DegreeSpectrum(max_degree={self.max_degree}, mean={self.mean:.6g})"


def binomial_spectrum(p: float, n: int) -> DegreeSpectrum:
    """Degree of a node with n independent Bernoulli(p) edge chances"""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    if n < 0:
        raise ValueError(f"n must be nonnegative, got {n}")
    return DegreeSpectrum.from_weights(stats.binom.pmf(np.arange(n + 1), n, p))


def poisson_spectrum(mean: float, truncation: Optional[int] = None) -> DegreeSpectrum:
    """
    Poisson degree spectrum truncated at a maximum degree and renormalized

    Args:
        mean: Poisson mean
        truncation: Largest degree kept; chosen so the dropped tail is below 1e-12 when omitted

    Returns:
        DegreeSpectrum
    """
    if mean < 0:
        raise ValueError(f"Poisson mean must be nonnegative, got {mean}")
    if mean == 0:
        return DegreeSpectrum([1.0])
    if truncation is None:
        truncation = int(stats.poisson.isf(TAIL_MASS, mean)) + 1
    tail = stats.poisson.sf(truncation, mean)
    if tail >= TAIL_MASS:
        raise TruncationTooSmallError(
            f"Truncating Poisson({mean}) at degree {truncation} drops tail mass {tail:.3g}"
        )
    return DegreeSpectrum.from_weights(stats.poisson.pmf(np.arange(truncation + 1), mean))


def convolve_spectra(spectra: Sequence[DegreeSpectrum]) -> DegreeSpectrum:
    """Spectrum of the sum of independent degrees"""
    if not spectra:
        return DegreeSpectrum([1.0])
    weights = reduce(np.convolve, (spectrum.probs for spectrum in spectra))
    return DegreeSpectrum.from_weights(np.clip(weights, 0.0, None))


def edge_perspective(node: DegreeSpectrum) -> DegreeSpectrum:
    """Degree seen from a uniformly chosen edge, minus that edge (probs'[d-1] = d probs[d] / mean)"""
    if node.mean <= 0:
        raise ZeroMeanSpectrumError("Edge perspective is undefined for a spectrum without edges")
    degrees = np.arange(node.probs.size)
    return DegreeSpectrum.from_weights((degrees * node.probs)[1:] / node.mean)


def total_variation(a: DegreeSpectrum, b: DegreeSpectrum) -> float:
    length = max(a.probs.size, b.probs.size)
    return 0.5 * float(np.abs(a.padded(length) - b.padded(length)).sum())


def vn_degree_spectrum(scn: ValidatedScenario, G: AccessMatrix, group: int) -> DegreeSpectrum:
    """
    Exact degree spectrum of a group device over the whole frame, nobody acknowledged

    Sums Binomial(ΔN_s, p_i^(s)) over the subframes.
    """
    counts = group_device_counts(scn)
    residuals = ResidualSizes(np.tile(counts[:, None].astype(float), (1, scn.num_groups)))
    p = access_probabilities(G, residuals)
    return convolve_spectra([
        binomial_spectrum(p[s, group], scn.subframe_lengths[s]) for s in range(scn.num_groups)
    ])


def cn_degree_spectrum(scn: ValidatedScenario, G: AccessMatrix, subframe: int) -> DegreeSpectrum:
    """Exact degree spectrum of a slot in a subframe when every device is still active"""
    counts = group_device_counts(scn)
    residuals = ResidualSizes(np.tile(counts[:, None].astype(float), (1, scn.num_groups)))
    p = access_probabilities(G, residuals)
    return convolve_spectra([
        binomial_spectrum(p[subframe, i], int(counts[i])) for i in range(scn.num_groups)
    ])


@dataclass
class EvolutionTrace:
    """
    Density evolution record of one frame

    Arrays are indexed [group, subframe] unless noted. mixing_v[s] holds, for
    the decoder run at the end of subframe s, the share of each group in the
    edges of subframe j (rows j, columns groups). mixing_c[s] holds the share
    of a group's edges landing in subframe j (rows groups, columns j).
    """
    q: Dict[Tuple[int, int], np.ndarray]
    epsilon: np.ndarray
    zeta: np.ndarray
    mixing_v: np.ndarray
    mixing_c: np.ndarray
    iterations_used: int = 0
    iterations: List[int] = field(default_factory=list)

    @property
    def num_groups(self) -> int:
        return self.epsilon.shape[0]

    @property
    def deadline_epsilon(self) -> np.ndarray:
        """ε_i^(i): error of every group at its own deadline"""
        return np.diag(self.epsilon).copy()

    def iteration_records(self) -> List[Dict]:
        rows = []
        for (group, subframe), values in sorted(self.q.items()):
            for iteration, value in enumerate(values):
                rows.append({'group': group + 1, 'subframe': subframe + 1, 'iteration': iteration, 'q': float(value)})
        return rows


def _unresolved_update(zeta: np.ndarray, check_means: np.ndarray, x: np.ndarray) -> np.ndarray:
    """
    One AND-OR step with Poisson spectra: x_i = exp(-Σ_j ζ_ij exp(-Σ_k W_jk x_k))

    Exponents are combined in log space so that large ζ with tiny exp(-a) does not underflow early.
    """
    a = check_means @ x
    with np.errstate(divide='ignore'):
        log_zeta = np.log(zeta)
    exponent = np.where(zeta > 0, np.exp(log_zeta - a[None, :]), 0.0)
    return np.exp(-exponent.sum(axis=1))


def _iterate_fixed_point(zeta: np.ndarray, check_means: np.ndarray, tol: float, max_iter: int,
                         context: str, start: Optional[np.ndarray] = None,
                         sic_iterations: Optional[int] = None) -> List[np.ndarray]:
    x = np.ones(zeta.shape[0]) if start is None else np.array(start, dtype=float)
    history = [x]
    if sic_iterations is not None:
        for _ in range(sic_iterations):
            x = _unresolved_update(zeta, check_means, x)
            history.append(x)
        return history
    for _ in range(max_iter):
        x_next = _unresolved_update(zeta, check_means, x)
        history.append(x_next)
        if np.max(np.abs(x_next - x)) < tol:
            return history
        x = x_next
    gap = float(np.max(np.abs(history[-1] - history[-2])))
    raise NonConvergenceError(f"{context}: no fixed point after {max_iter} iterations (last change {gap:.3g})")


def _check_budget(sic_iterations: Optional[int]) -> None:
    if sic_iterations is not None and sic_iterations < 0:
        raise ValueError(f"sic_iterations must be nonnegative, got {sic_iterations}")


def _residual_check(residual: float, g: float, group: int, subframe: int) -> None:
    if g > residual * (1.0 + 1e-12):
        raise ProbabilityExceedsOneError(
            f"g={g} for group {group + 1} in subframe {subframe + 1} exceeds {residual:.6g} expected unresolved devices"
        )


def evolve_ack_all(scn: ValidatedScenario, G: AccessMatrix, tol: float = DEFAULT_TOL,
                   max_iter: int = DEFAULT_MAX_ITER, sic_iterations: Optional[int] = None) -> EvolutionTrace:
    """
    Density evolution of an ACK-All frame

    The decoder at the end of subframe s restarts from q[0] = ε^(s-1) and
    iterates q_i = exp(-Σ_j ζ_i^(j) exp(-Σ_k g_k^(j) q_k / ε_k^(j-1))) over the
    subframes j <= s, so a subframe-j slot only sees the share of its
    transmitters still unresolved. ε^(s) is the limit of q. A group without
    new slots keeps its ε unless other groups it shares slots with are
    resolved.

    Args:
        scn: Validated scenario
        G: Access matrix respecting the scenario's zero pattern
        tol: Stop once the largest change between iterations is below this
        max_iter: Iteration cap per subframe
        sic_iterations: Run exactly this many SIC rounds per subframe instead of iterating to convergence

    Returns:
        EvolutionTrace
    """
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    _check_budget(sic_iterations)
    check_access_matrix(scn, G)
    r = scn.num_groups
    g = G.entries
    group_sizes = scn.group_sizes

    epsilon = np.ones((r, r))
    zeta = np.zeros((r, r))
    start_eps = np.ones((r, r))
    mixing_v = np.zeros((r, r, r))
    mixing_c = np.zeros((r, r, r))
    q_trace = {}
    iterations = []

    previous = np.ones(r)
    for s in range(r):
        start_eps[:, s] = previous
        residual = group_sizes * previous
        for i in range(r):
            _residual_check(residual[i], g[s, i], i, s)
            zeta[i, s] = g[s, i] * scn.subframe_lengths[s] / residual[i] if residual[i] > 0 else 0.0

        earlier = start_eps[:, :s + 1].T
        with np.errstate(divide='ignore', invalid='ignore'):
            check_means = np.where(earlier > 0, g[:s + 1, :] / earlier, 0.0)
        reduced_means = check_means * previous[None, :]
        active_zeta = zeta[:, :s + 1]

        edge_totals = reduced_means.sum(axis=1, keepdims=True)
        mixing_v[s, :s + 1, :] = np.divide(reduced_means, edge_totals, out=np.zeros_like(reduced_means),
                                           where=edge_totals > 0)
        degree_totals = active_zeta.sum(axis=1, keepdims=True)
        mixing_c[s, :, :s + 1] = np.divide(active_zeta, degree_totals, out=np.zeros_like(active_zeta),
                                           where=degree_totals > 0)

        history = _iterate_fixed_point(active_zeta, check_means, tol, max_iter, f"ACK-All subframe {s + 1}",
                                       start=previous, sic_iterations=sic_iterations)
        iterations.append(len(history) - 1)
        stacked = np.vstack(history)
        for i in range(r):
            q_trace[(i, s)] = stacked[:, i]

        previous = history[-1]
        epsilon[:, s] = previous
        logger.debug(f"ACK-All subframe {s + 1}: {iterations[-1]} iterations, epsilon={np.array2string(previous, precision=4)}")

    return EvolutionTrace(q=q_trace, epsilon=epsilon, zeta=zeta, mixing_v=mixing_v, mixing_c=mixing_c,
                          iterations_used=int(sum(iterations)), iterations=iterations)


def evolve_ack_group(scn: ValidatedScenario, G: AccessMatrix, tol: float = DEFAULT_TOL,
                     max_iter: int = DEFAULT_MAX_ITER, sic_iterations: Optional[int] = None) -> EvolutionTrace:
    """
    Density evolution of an ACK-Group frame: every group decodes alone in its own subframe

    Args:
        scn: Validated scenario
        G: Diagonal access matrix
        tol: Convergence threshold
        max_iter: Iteration cap per group
        sic_iterations: Fixed SIC round budget per group (None iterates to convergence)

    Returns:
        EvolutionTrace with ε_i^(s) = 1 before subframe i and the group's deadline value afterwards
    """
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    _check_budget(sic_iterations)
    if not G.is_diagonal():
        raise NonDiagonalMatrixError("ACK-Group evolution requires a diagonal access matrix")
    check_access_matrix(scn, G)
    r = scn.num_groups
    group_sizes = scn.group_sizes

    epsilon = np.ones((r, r))
    zeta = np.zeros((r, r))
    mixing_v = np.zeros((r, r, r))
    mixing_c = np.zeros((r, r, r))
    q_trace = {}
    iterations = []

    for i in range(r):
        g = G.g(i, i)
        _residual_check(group_sizes[i], g, i, i)
        zeta[i, i] = g * scn.subframe_lengths[i] / group_sizes[i]
        history = _iterate_fixed_point(np.array([[zeta[i, i]]]), np.array([[g]]), tol, max_iter,
                                       f"ACK-Group group {i + 1}", sic_iterations=sic_iterations)
        iterations.append(len(history) - 1)
        q_trace[(i, i)] = np.concatenate(history)
        epsilon[i, i:] = history[-1][0]
        if g > 0:
            mixing_v[i:, i, i] = 1.0
            mixing_c[i:, i, i] = 1.0
        logger.debug(f"ACK-Group group {i + 1}: g={g}, epsilon={epsilon[i, i]:.6g} after {iterations[-1]} iterations")

    return EvolutionTrace(q=q_trace, epsilon=epsilon, zeta=zeta, mixing_v=mixing_v, mixing_c=mixing_c,
                          iterations_used=int(sum(iterations)), iterations=iterations)


def evolve(scn: ValidatedScenario, G: AccessMatrix, tol: float = DEFAULT_TOL,
           max_iter: int = DEFAULT_MAX_ITER, sic_iterations: Optional[int] = None) -> EvolutionTrace:
    """Run the evolution that matches the scenario's feedback scheme"""
    if scn.scheme is Scheme.ACK_GROUP:
        return evolve_ack_group(scn, G, tol, max_iter, sic_iterations)
    return evolve_ack_all(scn, G, tol, max_iter, sic_iterations)


def avg_transmissions(scn: ValidatedScenario, G: AccessMatrix,
                      trace: Optional[EvolutionTrace] = None) -> np.ndarray:
    """
    Average number of transmissions per device of each group

    M_i = Σ_s ΔN_s g_i^(s) / (α_i K). The expression holds for both schemes,
    so the trace is accepted for symmetry with the other analyzer calls but
    not needed.
    """
    lengths = np.asarray(scn.subframe_lengths, dtype=float)
    return (lengths @ G.entries) / scn.group_sizes


def finite_size_sigma(g: Union[float, np.ndarray], num_slots: Union[int, np.ndarray], c: float) -> np.ndarray:
    """Finite-size spread σ = c √(g/N) of a mean occupancy over N slots"""
    if c < 0:
        raise ValueError(f"c must be nonnegative, got {c}")
    return c * np.sqrt(np.asarray(g, dtype=float) / num_slots)


def perturbed_matrices(scn: ValidatedScenario, G: AccessMatrix, c: float) -> Tuple[AccessMatrix, AccessMatrix, AccessMatrix]:
    """G shifted entrywise by -σ, 0 and +σ with σ = c √(g/ΔN_s); negative entries are clamped to 0"""
    lengths = np.asarray(scn.subframe_lengths, dtype=float)[:, None]
    sigma = finite_size_sigma(G.entries, lengths, c)
    return (AccessMatrix(np.clip(G.entries - sigma, 0.0, None)), G, AccessMatrix(G.entries + sigma))


def finite_size_error(scn: ValidatedScenario, G: AccessMatrix, c: float, tol: float = DEFAULT_TOL,
                      max_iter: int = DEFAULT_MAX_ITER, sic_iterations: Optional[int] = None) -> np.ndarray:
    """
    Corrected deadline errors ε̂_i: the mean of the analyzer at G-σ, G and G+σ

    Args:
        scn: Validated scenario
        G: Access matrix
        c: Spread constant (0 returns the plain analyzer result)
        sic_iterations: Optional fixed SIC round budget passed to every evolution

    Returns:
        Array of per-group corrected errors
    """
    if c == 0:
        return evolve(scn, G, tol, max_iter, sic_iterations).deadline_epsilon
    results = [evolve(scn, matrix, tol, max_iter, sic_iterations).deadline_epsilon
               for matrix in perturbed_matrices(scn, G, c)]
    return np.mean(results, axis=0)


def single_group_error(g: Union[float, np.ndarray], load: float, tol: float = DEFAULT_TOL,
                       max_iter: int = DEFAULT_MAX_ITER, strict: bool = False,
                       sic_iterations: Optional[int] = None) -> Union[float, np.ndarray]:
    """
    Error probability of a single group frame for one or many g at load K/N

    Vectorized over g; equals evolve_ack_group on a 1x1 scenario. With
    strict=False points that have not settled after max_iter are returned as is.
    With sic_iterations the map is applied exactly that many times from q = 1,
    the error a receiver sees after that many SIC rounds; close to the
    threshold this differs sharply from the converged value.
    """
    if load <= 0:
        raise ValueError(f"load must be positive, got {load}")
    _check_budget(sic_iterations)
    g_values = np.atleast_1d(np.asarray(g, dtype=float))
    zeta = g_values / load
    x = np.ones_like(g_values)
    with np.errstate(divide='ignore'):
        log_zeta = np.log(zeta)

    def step(x: np.ndarray) -> np.ndarray:
        return np.exp(-np.where(zeta > 0, np.exp(log_zeta - g_values * x), 0.0))

    if sic_iterations is not None:
        for _ in range(sic_iterations):
            x = step(x)
        return float(x[0]) if np.ndim(g) == 0 else x

    for _ in range(max_iter):
        x_next = step(x)
        change = np.max(np.abs(x_next - x)) if x.size else 0.0
        x = x_next
        if change < tol:
            break
    else:
        message = f"Single-group evolution at load {load:.6g} did not settle in {max_iter} iterations"
        if strict:
            raise NonConvergenceError(message)
        logger.debug(message)
    return float(x[0]) if np.ndim(g) == 0 else x


def finite_size_single_error(g: Union[float, np.ndarray], load: float, num_slots: int, c: float,
                             tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
                             sic_iterations: Optional[int] = None) -> Union[float, np.ndarray]:
    """Single-group finite-size corrected error over N slots: mean at g-σ, g, g+σ"""
    g_values = np.atleast_1d(np.asarray(g, dtype=float))
    sigma = finite_size_sigma(g_values, num_slots, c)
    errors = [
        single_group_error(shifted, load, tol, max_iter, sic_iterations=sic_iterations)
        for shifted in (np.clip(g_values - sigma, 0.0, None), g_values, g_values + sigma)
    ]
    corrected = np.mean(errors, axis=0)
    return float(corrected[0]) if np.ndim(g) == 0 else corrected


@dataclass(frozen=True)
class LoadBound:
    """
    Largest load K/N reaching a target error, and the g that achieves it

    saturated is set when every load up to the search ceiling is feasible.
    """
    load: float
    g_best: float
    saturated: bool = False


def _best_on_grid(grid: np.ndarray, load: float, num_slots: Optional[int], c: float,
                  tol: float, max_iter: int) -> Tuple[float, float]:
    if c > 0 and num_slots:
        errors = finite_size_single_error(grid, load, num_slots, c, tol=tol, max_iter=max_iter)
    else:
        errors = single_group_error(grid, load, tol=tol, max_iter=max_iter)
    best = int(np.argmin(errors))
    return float(errors[best]), float(grid[best])


def max_load(eps_target: float, num_slots: Optional[int] = None, c: float = 0.0,
             g_grid: Optional[Sequence[float]] = None, load_max: float = 4.0,
             resolution: float = 1e-4, tol: float = 1e-10,
             max_iter: int = DEFAULT_MAX_ITER) -> LoadBound:
    """
    L*(ε): the largest load for which some g on the grid meets the target

    Args:
        eps_target: Target error probability, 0 < ε
        num_slots: Frame length for the finite-size correction (needed when c > 0)
        c: Finite-size spread constant; 0 evaluates the asymptotic analyzer
        g_grid: Candidate g values (default 0..4 in steps of 0.01)
        load_max: Search ceiling for the load
        resolution: Bisection stops once the bracket is narrower than this
        tol, max_iter: Convergence settings of the inner evolutions

    Returns:
        LoadBound
    """
    if eps_target <= 0:
        raise ValueError(f"eps_target must be positive, got {eps_target}")
    if c > 0 and not num_slots:
        raise ValueError("The finite-size correction needs num_slots")
    if c == 0:
        num_slots = None
    if g_grid is None:
        return _max_load_default_grid(float(eps_target), num_slots, float(c), load_max, resolution, tol, max_iter)
    return _search_max_load(eps_target, np.asarray(g_grid, dtype=float), num_slots, c, load_max, resolution, tol,
                            max_iter)


@lru_cache(maxsize=256)
def _max_load_default_grid(eps_target: float, num_slots: Optional[int], c: float, load_max: float,
                           resolution: float, tol: float, max_iter: int) -> LoadBound:
    return _search_max_load(eps_target, DEFAULT_G_GRID, num_slots, c, load_max, resolution, tol, max_iter)


def _search_max_load(eps_target: float, grid: np.ndarray, num_slots: Optional[int], c: float,
                     load_max: float, resolution: float, tol: float, max_iter: int) -> LoadBound:
    def feasible(load: float) -> Tuple[bool, float]:
        error, g_best = _best_on_grid(grid, load, num_slots, c, tol, max_iter)
        return error <= eps_target, g_best

    ok, g_best = feasible(load_max)
    if ok:
        logger.debug(f"Target {eps_target} is met at the load ceiling {load_max}")
        return LoadBound(load=load_max, g_best=g_best, saturated=True)

    lo, hi = resolution, load_max
    ok, g_lo = feasible(lo)
    if not ok:
        raise GridTooCoarseError(
            f"No g on the grid reaches {eps_target} even at load {lo}; refine the grid or relax the target"
        )
    while hi - lo > resolution:
        mid = 0.5 * (lo + hi)
        ok, g_mid = feasible(mid)
        if ok:
            lo, g_lo = mid, g_mid
        else:
            hi = mid
    logger.debug(f"L*({eps_target}) = {lo:.4f} with g = {g_lo}")
    return LoadBound(load=lo, g_best=g_lo, saturated=False)


def max_load_single(eps_target: float, g_grid: Optional[Sequence[float]] = None) -> LoadBound:
    """Asymptotic single-group L*(ε) over the g grid"""
    return max_load(eps_target, g_grid=g_grid)


@dataclass(frozen=True)
class GroupFeasibility:
    group: int
    bound_value: float
    limit: float
    satisfied: bool


@dataclass
class FeasibilityReport:
    groups: List[GroupFeasibility]
    equal_target_limit: Optional[float] = None
    equal_target_satisfied: Optional[bool] = None

    @property
    def satisfied(self) -> bool:
        verdicts = [group.satisfied for group in self.groups]
        if self.equal_target_satisfied is not None:
            verdicts.append(self.equal_target_satisfied)
        return all(verdicts)


def feasibility_check(scn: ValidatedScenario, targets: Optional[Sequence[float]] = None,
                      trace: Optional[EvolutionTrace] = None,
                      previous_errors: Optional[Sequence[float]] = None) -> FeasibilityReport:
    """
    Necessary load conditions for meeting every group's target

    Group i needs ε_i^(i-1) α_i K / (β_i N) ≤ L*(ε*_i / ε_i^(i-1)) with the
    cumulative fraction β_i = N_i/N. ε_i^(i-1) comes from the trace, from
    previous_errors, or defaults to 1 (no earlier resolution, as in ACK-Group).
    When all targets are equal the condition K/N ≤ L*(ε) min_i β_i/α_i is
    evaluated as well.

    Args:
        scn: Validated scenario
        targets: Per-group ε* (defaults to the scenario's)
        trace: Evolution trace providing ε_i^(i-1)
        previous_errors: Explicit ε_i^(i-1) values

    Returns:
        FeasibilityReport
    """
    targets = scn.targets if targets is None else np.asarray(targets, dtype=float)
    r = scn.num_groups
    if trace is not None:
        previous = np.array([1.0] + [trace.epsilon[i, i - 1] for i in range(1, r)])
    elif previous_errors is not None:
        previous = np.asarray(previous_errors, dtype=float)
    else:
        previous = np.ones(r)

    cumulative = np.asarray(scn.deadline_fractions)
    load = scn.load
    verdicts = []
    for i in range(r):
        if previous[i] <= 0:
            verdicts.append(GroupFeasibility(group=i + 1, bound_value=0.0, limit=float('inf'), satisfied=True))
            continue
        bound_value = previous[i] * scn.alphas[i] / cumulative[i] * load
        limit = max_load_single(min(1.0, targets[i] / previous[i])).load
        verdicts.append(GroupFeasibility(group=i + 1, bound_value=float(bound_value), limit=float(limit),
                                         satisfied=bool(bound_value <= limit)))

    report = FeasibilityReport(groups=verdicts)
    if np.allclose(targets, targets[0]):
        limit = max_load_single(float(targets[0])).load * float(np.min(cumulative / scn.alphas))
        report.equal_target_limit = float(limit)
        report.equal_target_satisfied = bool(load <= limit)
    return report


def blocking_probability(L_star: float, K: int, N: int) -> float:
    """Barring probability b = 1 - min(1, L* N / K); nobody is barred when K = 0"""
    if L_star <= 0:
        raise ValueError(f"L_star must be positive, got {L_star}")
    if K <= 0:
        return 0.0
    return 1.0 - min(1.0, L_star * N / K)
