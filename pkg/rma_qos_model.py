#!/usr/bin/env python3
"""
RMA QoS Model
Domain types for grouped random multiple access: delay groups, frame geometry,
the access matrix G, residual group sizes, scenario validation and the mapping
from mean slot occupancies to per-device access probabilities.
"""

import json
import logging
from dataclasses import asdict, dataclass, fields
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

logger = logging.getLogger(__name__)

ALPHA_SUM_TOLERANCE = 1e-9
PROBABILITY_SLACK = 1e-12


class RMAError(Exception):
    """Base class for every error raised by the RMA toolkit"""


class ScenarioError(RMAError, ValueError):
    """A scenario or configuration file is not usable"""


class NonIncreasingDeadlinesError(ScenarioError):
    pass


class AlphaSumMismatchError(ScenarioError):
    pass


class EmptySubframeError(ScenarioError):
    pass


class ConfigError(ScenarioError):
    """Malformed, missing or unknown configuration content"""


class ProbabilityExceedsOneError(RMAError, ValueError):
    """A mean occupancy g is larger than the population that has to carry it"""


class InvalidMatrixError(RMAError, ValueError):
    pass


class NonDiagonalMatrixError(InvalidMatrixError):
    pass


class Scheme(Enum):
    ACK_ALL = "ack_all"
    ACK_GROUP = "ack_group"


class LatencyMode(Enum):
    STRICT = "strict"
    FLEXIBLE = "flexible"


@dataclass(frozen=True)
class GroupSpec:
    """
    One delay group

    Args:
        alpha: Fraction of the devices that belong to the group
        deadline_slots: Latency requirement N_i in slots, counted from the frame start
        target_error: Acceptable fraction of the group still unresolved at its deadline
    """
    alpha: float
    deadline_slots: int
    target_error: float = 1.0


@dataclass(frozen=True)
class Scenario:
    num_devices: int
    num_slots: int
    groups: Tuple[GroupSpec, ...]
    scheme: Scheme = Scheme.ACK_ALL
    latency_mode: LatencyMode = LatencyMode.STRICT
    feedback_loss_prob: float = 0.0
    # simulator only: replicas of a resolved device whose ACK got lost are known to the BS
    cancel_unacked_replicas: bool = True

    @property
    def num_groups(self) -> int:
        return len(self.groups)

    @property
    def alphas(self) -> np.ndarray:
        return np.array([group.alpha for group in self.groups], dtype=float)

    @property
    def targets(self) -> np.ndarray:
        return np.array([group.target_error for group in self.groups], dtype=float)

    @property
    def deadlines(self) -> List[int]:
        return [group.deadline_slots for group in self.groups]

    @property
    def load(self) -> float:
        """System load K/N"""
        return self.num_devices / self.num_slots


@dataclass(frozen=True)
class ValidatedScenario(Scenario):
    """
    Scenario that passed validate_scenario, carrying the derived frame geometry

    subframe_lengths holds ΔN_s, subframe_fractions the per-subframe share
    ΔN_s/N and deadline_fractions the cumulative share N_s/N. Formulas read
    one or the other; they are not interchangeable.
    """
    subframe_lengths: Tuple[int, ...] = ()
    subframe_fractions: Tuple[float, ...] = ()
    deadline_fractions: Tuple[float, ...] = ()

    @property
    def group_sizes(self) -> np.ndarray:
        """Expected group sizes α_i K"""
        return self.alphas * self.num_devices

    def subframe_slots(self, subframe: int) -> range:
        """Global (0-based) slot indices of a subframe"""
        start = sum(self.subframe_lengths[:subframe])
        return range(start, start + self.subframe_lengths[subframe])


class AccessMatrix:
    """
    The r×r matrix G of mean slot occupancies

    Entry (row s, column i) is g_i^(s): the mean number of group-i devices that
    transmit in one slot of subframe s. Indices are 0-based.
    """

    def __init__(self, entries: Union[Sequence[Sequence[float]], np.ndarray]):
        matrix = np.array(entries, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise InvalidMatrixError(f"Access matrix must be square, got shape {matrix.shape}")
        if not np.all(np.isfinite(matrix)):
            raise InvalidMatrixError("Access matrix contains non-finite entries")
        if np.any(matrix < 0):
            raise InvalidMatrixError("Access matrix entries must be nonnegative")
        matrix.setflags(write=False)
        self.entries = matrix

    @classmethod
    def zeros(cls, size: int) -> "AccessMatrix":
        return cls(np.zeros((size, size)))

    @classmethod
    def diagonal(cls, values: Sequence[float]) -> "AccessMatrix":
        return cls(np.diag(np.asarray(values, dtype=float)))

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    def g(self, group: int, subframe: int) -> float:
        return float(self.entries[subframe, group])

    def is_diagonal(self) -> bool:
        return not np.any(self.entries[~np.eye(self.size, dtype=bool)])

    def to_rows(self) -> List[List[float]]:
        return self.entries.tolist()

    def __eq__(self, other) -> bool:
        return isinstance(other, AccessMatrix) and np.array_equal(self.entries, other.entries)

    def __repr__(self) -> str:
        return f"AccessMatrix({self.to_rows()})"


@dataclass
class ResidualSizes:
    """
    Unresolved population per (group, subframe)

    sizes[i, s] is |C_{i,s}^(s)|, the number of group-i devices still unresolved
    when subframe s starts: an expectation for the analyzer, a count for the
    simulator.
    """
    sizes: np.ndarray

    @classmethod
    def initial(cls, scn: ValidatedScenario) -> "ResidualSizes":
        """Residuals of a frame in which nothing has been resolved yet"""
        r = scn.num_groups
        return cls(np.tile(scn.group_sizes[:, None], (1, r)))


def validate_scenario(scn: Scenario) -> ValidatedScenario:
    """
    Check a scenario and derive its subframe geometry

    Args:
        scn: Scenario to check (a ValidatedScenario is re-checked and returned unchanged)

    Returns:
        ValidatedScenario with ΔN_s, ΔN_s/N and N_s/N filled in
    """
    if scn.num_devices < 1:
        raise ScenarioError(f"num_devices must be positive, got {scn.num_devices}")
    if scn.num_slots < 1:
        raise ScenarioError(f"num_slots must be positive, got {scn.num_slots}")
    if not scn.groups:
        raise ScenarioError("A scenario needs at least one group")
    if not 0.0 <= scn.feedback_loss_prob < 1.0:
        raise ScenarioError(f"feedback_loss_prob must lie in [0, 1), got {scn.feedback_loss_prob}")

    for index, group in enumerate(scn.groups, 1):
        if not 0.0 < group.alpha <= 1.0:
            raise ScenarioError(f"Group {index}: alpha must lie in (0, 1], got {group.alpha}")
        if not 0.0 < group.target_error <= 1.0:
            raise ScenarioError(f"Group {index}: target_error must lie in (0, 1], got {group.target_error}")

    deadlines = scn.deadlines
    for earlier, later in zip(deadlines, deadlines[1:]):
        if later <= earlier:
            raise NonIncreasingDeadlinesError(f"Deadlines must be strictly increasing, got {deadlines}")
    if deadlines[0] < 1:
        raise EmptySubframeError(f"First subframe is empty (deadline {deadlines[0]})")
    if deadlines[-1] != scn.num_slots:
        raise ScenarioError(
            f"Last group deadline ({deadlines[-1]}) must equal num_slots ({scn.num_slots})"
        )

    alpha_sum = float(np.sum(scn.alphas))
    if abs(alpha_sum - 1.0) > ALPHA_SUM_TOLERANCE:
        raise AlphaSumMismatchError(f"Group fractions must sum to 1, got {alpha_sum}")

    lengths = tuple(int(n) for n in np.diff([0] + deadlines))
    if any(length < 1 for length in lengths):
        raise EmptySubframeError(f"Every subframe needs at least one slot, got {lengths}")

    base = {f.name: getattr(scn, f.name) for f in fields(Scenario)}
    base['groups'] = tuple(scn.groups)
    return ValidatedScenario(
        **base,
        subframe_lengths=lengths,
        subframe_fractions=tuple(length / scn.num_slots for length in lengths),
        deadline_fractions=tuple(deadline / scn.num_slots for deadline in deadlines),
    )


def group_device_counts(scn: Scenario) -> np.ndarray:
    """Integer group sizes round(α_i K); the last group absorbs the rounding remainder"""
    counts = np.rint(scn.alphas[:-1] * scn.num_devices).astype(int)
    remainder = scn.num_devices - int(np.sum(counts))
    if remainder < 0:
        raise ScenarioError(f"Cannot split {scn.num_devices} devices over fractions {scn.alphas.tolist()}")
    return np.append(counts, remainder)


def allowed_entries(scn: Scenario) -> np.ndarray:
    """
    Boolean r×r mask of the entries of G the scenario lets be non-zero

    ACK-Group keeps the diagonal, strict latency keeps subframes up to the
    group's own deadline subframe (s <= i), flexible latency keeps everything.
    """
    r = scn.num_groups
    if scn.scheme is Scheme.ACK_GROUP:
        return np.eye(r, dtype=bool)
    if scn.latency_mode is LatencyMode.STRICT:
        rows, cols = np.indices((r, r))
        return rows <= cols
    return np.ones((r, r), dtype=bool)


def check_access_matrix(scn: Scenario, G: AccessMatrix) -> None:
    """Raise if G does not fit the scenario's size and zero pattern"""
    if G.size != scn.num_groups:
        raise InvalidMatrixError(f"Access matrix is {G.size}x{G.size} but the scenario has {scn.num_groups} groups")
    if scn.scheme is Scheme.ACK_GROUP and not G.is_diagonal():
        raise NonDiagonalMatrixError("ACK-Group transmissions require a diagonal access matrix")
    outside = G.entries[~allowed_entries(scn)]
    if np.any(outside > 0):
        raise InvalidMatrixError(
            "Access matrix has transmissions after a group's deadline subframe under strict latency"
        )


def access_probabilities(G: AccessMatrix, residuals: ResidualSizes, clamp: bool = False) -> np.ndarray:
    """
    Per-slot transmit probabilities p_i^(s) = g_i^(s) / |C_{i,s}^(s)|

    Args:
        G: Access matrix (rows subframes, columns groups)
        residuals: Unresolved group sizes, indexed [group, subframe]
        clamp: Cap infeasible probabilities at 1 instead of raising

    Returns:
        Array indexed [subframe, group]
    """
    g = G.entries
    sizes = np.asarray(residuals.sizes, dtype=float).T
    if sizes.shape != g.shape:
        raise InvalidMatrixError(f"Residual sizes {sizes.T.shape} do not match the access matrix {g.shape}")

    probabilities = np.zeros_like(g)
    active = g > 0
    starved = active & (sizes <= 0)
    if np.any(starved) and not clamp:
        s, i = np.argwhere(starved)[0]
        raise ProbabilityExceedsOneError(f"g={g[s, i]} for group {i + 1} in subframe {s + 1} but nobody is left")

    usable = active & (sizes > 0)
    probabilities[usable] = g[usable] / sizes[usable]
    probabilities[starved] = 1.0

    too_large = probabilities > 1.0 + PROBABILITY_SLACK
    if np.any(too_large):
        if not clamp:
            s, i = np.argwhere(too_large)[0]
            raise ProbabilityExceedsOneError(
                f"g={g[s, i]} exceeds the {sizes[s, i]:g} unresolved devices of group {i + 1} in subframe {s + 1}"
            )
        logger.debug(f"Clamped {int(np.sum(too_large))} access probabilities to 1")
    return np.minimum(probabilities, 1.0)


def _reject_unknown(section: str, data: Dict, known: Sequence[str]) -> None:
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"Unknown key(s) in {section}: {', '.join(unknown)}")


SCENARIO_KEYS = (
    'num_devices', 'num_slots', 'scheme', 'latency_mode', 'feedback_loss_prob',
    'groups', 'access_matrix', 'cancel_unacked_replicas',
)
GROUP_KEYS = ('alpha', 'deadline_slots', 'target_error')


def _enum_value(enum_cls, raw, section: str):
    try:
        return enum_cls(str(raw).lower())
    except ValueError:
        choices = ', '.join(member.value for member in enum_cls)
        raise ConfigError(f"{section}: '{raw}' is not one of {choices}")


def scenario_from_dict(data: Dict) -> Tuple[Scenario, Optional[AccessMatrix]]:
    """
    Build a scenario (and its optional access matrix) from parsed config content

    Args:
        data: Dictionary with the scenario schema documented in CONFIG_FORMAT_GUIDE.md

    Returns:
        Tuple of (Scenario, AccessMatrix or None)
    """
    if not isinstance(data, dict):
        raise ConfigError("Scenario config must be a JSON object")
    _reject_unknown("scenario", data, SCENARIO_KEYS)
    for key in ('num_devices', 'num_slots', 'groups'):
        if key not in data:
            raise ConfigError(f"Scenario config is missing '{key}'")

    groups = []
    for index, block in enumerate(data['groups'], 1):
        if not isinstance(block, dict):
            raise ConfigError(f"Group block {index} must be an object")
        _reject_unknown(f"group {index}", block, GROUP_KEYS)
        try:
            groups.append(GroupSpec(
                alpha=float(block['alpha']),
                deadline_slots=int(block['deadline_slots']),
                target_error=float(block.get('target_error', 1.0)),
            ))
        except KeyError as e:
            raise ConfigError(f"Group block {index} is missing {e}")

    scenario = Scenario(
        num_devices=int(data['num_devices']),
        num_slots=int(data['num_slots']),
        groups=tuple(groups),
        scheme=_enum_value(Scheme, data.get('scheme', 'ack_all'), "scheme"),
        latency_mode=_enum_value(LatencyMode, data.get('latency_mode', 'strict'), "latency_mode"),
        feedback_loss_prob=float(data.get('feedback_loss_prob', 0.0)),
        cancel_unacked_replicas=bool(data.get('cancel_unacked_replicas', True)),
    )

    matrix = None
    if data.get('access_matrix') is not None:
        matrix = AccessMatrix(data['access_matrix'])
    return scenario, matrix


def scenario_to_dict(scn: Scenario, G: Optional[AccessMatrix] = None) -> Dict:
    """Inverse of scenario_from_dict, used for reports and manifests"""
    data = {
        'num_devices': scn.num_devices,
        'num_slots': scn.num_slots,
        'scheme': scn.scheme.value,
        'latency_mode': scn.latency_mode.value,
        'feedback_loss_prob': scn.feedback_loss_prob,
        'cancel_unacked_replicas': scn.cancel_unacked_replicas,
        'groups': [asdict(group) for group in scn.groups],
    }
    if G is not None:
        data['access_matrix'] = G.to_rows()
    return data


def load_json_file(config_file: Union[str, Path]) -> Dict:
    """
    Load a JSON config file

    Args:
        config_file: Path to the file

    Returns:
        Parsed content
    """
    try:
        with open(config_file, 'r', encoding='utf-8') as f:
            data = json.load(f)
        logger.info(f"Loaded config from {config_file}")
        return data
    except FileNotFoundError:
        logger.error(f"Config file not found: {config_file}")
        raise ConfigError(f"Config file not found: {config_file}")
    except json.JSONDecodeError as e:
        logger.error(f"Invalid JSON in config file: {e}")
        raise ConfigError(f"Invalid JSON in {config_file}: {e}")


def load_scenario_file(config_file: Union[str, Path]) -> Tuple[ValidatedScenario, Optional[AccessMatrix]]:
    """Load, parse and validate a scenario file; the access matrix is checked against it"""
    scenario, matrix = scenario_from_dict(load_json_file(config_file))
    validated = validate_scenario(scenario)
    if matrix is not None:
        check_access_matrix(validated, matrix)
    logger.info(
        f"Scenario: K={validated.num_devices}, N={validated.num_slots}, r={validated.num_groups}, "
        f"scheme={validated.scheme.value}, latency={validated.latency_mode.value}"
    )
    return validated, matrix
