"""
Tests for scenario validation, the access matrix and access probabilities.
"""
import json

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_equal
from pytest import raises as assert_raises

from rma_qos_model import (
    AccessMatrix,
    AlphaSumMismatchError,
    ConfigError,
    EmptySubframeError,
    GroupSpec,
    InvalidMatrixError,
    LatencyMode,
    NonDiagonalMatrixError,
    NonIncreasingDeadlinesError,
    ProbabilityExceedsOneError,
    ResidualSizes,
    Scenario,
    ScenarioError,
    Scheme,
    allowed_entries,
    access_probabilities,
    check_access_matrix,
    group_device_counts,
    load_scenario_file,
    scenario_from_dict,
    scenario_to_dict,
    validate_scenario,
)


def two_groups(scheme=Scheme.ACK_ALL, latency=LatencyMode.STRICT, deadlines=(1000, 2000)):
    return Scenario(
        num_devices=1000,
        num_slots=deadlines[-1],
        groups=(GroupSpec(0.5, deadlines[0], 0.01), GroupSpec(0.5, deadlines[1], 0.01)),
        scheme=scheme,
        latency_mode=latency,
    )


class TestValidateScenario:

    def test_subframe_geometry(self):
        scn = validate_scenario(Scenario(
            num_devices=4000,
            num_slots=8000,
            groups=(GroupSpec(0.5, 5600), GroupSpec(0.5, 8000)),
        ))
        assert_equal(scn.subframe_lengths, (5600, 2400))
        assert_allclose(scn.subframe_fractions, [0.7, 0.3])
        assert_allclose(scn.deadline_fractions, [0.7, 1.0])
        assert_allclose(scn.group_sizes, [2000, 2000])
        assert scn.load == 0.5
        assert list(scn.subframe_slots(1)) == list(range(5600, 8000))

    def test_idempotent(self):
        scn = validate_scenario(two_groups())
        again = validate_scenario(scn)
        assert again == scn

    def test_non_increasing_deadlines(self):
        with assert_raises(NonIncreasingDeadlinesError):
            validate_scenario(two_groups(deadlines=(2000, 2000)))

    def test_alpha_sum(self):
        scn = Scenario(num_devices=10, num_slots=20, groups=(GroupSpec(0.5, 10), GroupSpec(0.4, 20)))
        with assert_raises(AlphaSumMismatchError):
            validate_scenario(scn)

    def test_empty_first_subframe(self):
        scn = Scenario(num_devices=10, num_slots=20, groups=(GroupSpec(0.5, 0), GroupSpec(0.5, 20)))
        with assert_raises(EmptySubframeError):
            validate_scenario(scn)

    def test_last_deadline_must_be_frame_end(self):
        scn = Scenario(num_devices=10, num_slots=30, groups=(GroupSpec(0.5, 10), GroupSpec(0.5, 20)))
        with assert_raises(ScenarioError):
            validate_scenario(scn)

    @pytest.mark.parametrize("loss", [-0.1, 1.0])
    def test_feedback_loss_range(self, loss):
        scn = Scenario(num_devices=10, num_slots=20, groups=(GroupSpec(1.0, 20),), feedback_loss_prob=loss)
        with assert_raises(ScenarioError):
            validate_scenario(scn)

    def test_errors_are_value_errors(self):
        with assert_raises(ValueError):
            validate_scenario(two_groups(deadlines=(2000, 1000)))


class TestAccessMatrix:

    def test_rejects_negative_and_non_square(self):
        with assert_raises(InvalidMatrixError):
            AccessMatrix([[1.0, -0.1], [0.0, 1.0]])
        with assert_raises(InvalidMatrixError):
            AccessMatrix([[1.0, 2.0]])
        with assert_raises(InvalidMatrixError):
            AccessMatrix([[np.nan]])

    def test_indexing_is_subframe_then_group(self):
        G = AccessMatrix([[2.0, 1.0], [0.0, 3.0]])
        assert G.g(group=1, subframe=0) == 1.0
        assert G.g(group=0, subframe=1) == 0.0
        assert G.size == 2
        assert not G.is_diagonal()
        assert AccessMatrix.diagonal([1.0, 2.0]).is_diagonal()

    def test_entries_are_read_only(self):
        G = AccessMatrix.zeros(2)
        with assert_raises(ValueError):
            G.entries[0, 0] = 1.0

    def test_strict_pattern(self):
        assert_equal(allowed_entries(two_groups()), [[True, True], [False, True]])
        assert_equal(allowed_entries(two_groups(latency=LatencyMode.FLEXIBLE)), np.ones((2, 2), dtype=bool))
        assert_equal(allowed_entries(two_groups(scheme=Scheme.ACK_GROUP)), np.eye(2, dtype=bool))

    def test_strict_rejects_late_transmissions(self):
        with assert_raises(InvalidMatrixError):
            check_access_matrix(two_groups(), AccessMatrix([[1.0, 1.0], [1.0, 1.0]]))
        check_access_matrix(two_groups(latency=LatencyMode.FLEXIBLE), AccessMatrix([[1.0, 1.0], [1.0, 1.0]]))

    def test_ack_group_needs_diagonal(self):
        with assert_raises(NonDiagonalMatrixError):
            check_access_matrix(two_groups(scheme=Scheme.ACK_GROUP), AccessMatrix([[1.0, 1.0], [0.0, 1.0]]))

    def test_size_mismatch(self):
        with assert_raises(InvalidMatrixError):
            check_access_matrix(two_groups(), AccessMatrix([[1.0]]))


class TestAccessProbabilities:

    def test_initial_residuals(self):
        scn = validate_scenario(two_groups())
        G = AccessMatrix([[2.0, 1.0], [0.0, 3.0]])
        p = access_probabilities(G, ResidualSizes.initial(scn))
        assert_allclose(p, [[2.0 / 500, 1.0 / 500], [0.0, 3.0 / 500]])

    def test_zero_g_gives_zero_probability(self):
        G = AccessMatrix([[0.0]])
        p = access_probabilities(G, ResidualSizes(np.array([[0.0]])))
        assert_equal(p, [[0.0]])

    def test_raises_when_g_exceeds_residual(self):
        G = AccessMatrix([[3.0]])
        with assert_raises(ProbabilityExceedsOneError):
            access_probabilities(G, ResidualSizes(np.array([[2.0]])))
        with assert_raises(ProbabilityExceedsOneError):
            access_probabilities(G, ResidualSizes(np.array([[0.0]])))

    def test_clamp(self):
        G = AccessMatrix([[3.0]])
        assert_equal(access_probabilities(G, ResidualSizes(np.array([[2.0]])), clamp=True), [[1.0]])
        assert_equal(access_probabilities(G, ResidualSizes(np.array([[0.0]])), clamp=True), [[1.0]])


class TestGroupCounts:

    def test_last_group_takes_remainder(self):
        scn = Scenario(num_devices=10, num_slots=30,
                       groups=(GroupSpec(1 / 3, 10), GroupSpec(1 / 3, 20), GroupSpec(1 / 3, 30)))
        counts = group_device_counts(scn)
        assert counts.sum() == 10
        assert_equal(counts, [3, 3, 4])


class TestConfig:

    def test_round_trip(self):
        scn = validate_scenario(two_groups(scheme=Scheme.ACK_GROUP))
        G = AccessMatrix.diagonal([3.0, 3.0])
        parsed, matrix = scenario_from_dict(scenario_to_dict(scn, G))
        assert validate_scenario(parsed) == scn
        assert matrix == G

    def test_unknown_keys_rejected(self):
        data = scenario_to_dict(two_groups())
        data['num_devics'] = 5
        with assert_raises(ConfigError):
            scenario_from_dict(data)
        data = scenario_to_dict(two_groups())
        data['groups'][0]['deadline'] = 3
        with assert_raises(ConfigError):
            scenario_from_dict(data)

    def test_bad_enum(self):
        data = scenario_to_dict(two_groups())
        data['scheme'] = 'ack_some'
        with assert_raises(ConfigError):
            scenario_from_dict(data)

    def test_missing_file(self, tmp_path):
        with assert_raises(ConfigError):
            load_scenario_file(tmp_path / "nope.json")

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json", encoding="utf-8")
        with assert_raises(ConfigError):
            load_scenario_file(path)

    def test_shipped_configs_load(self, config_dir):
        for name in ("oracle_k2_n2.json", "single_group_sweep.json", "two_group_ack_all.json",
                     "two_group_ack_group.json"):
            scn, G = load_scenario_file(config_dir / name)
            assert G is not None
            assert G.size == scn.num_groups

    def test_file_matrix_checked(self, tmp_path):
        data = scenario_to_dict(two_groups(), AccessMatrix([[1.0, 1.0], [1.0, 1.0]]))
        path = tmp_path / "late.json"
        path.write_text(json.dumps(data), encoding="utf-8")
        with assert_raises(InvalidMatrixError):
            load_scenario_file(path)
