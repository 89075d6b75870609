"""
Tests for the multi-frame queueing simulation.
"""
import numpy as np
import pytest
from numpy.testing import assert_equal
from pytest import raises as assert_raises

from rma_frame_dynamics import (
    DabFixedRachFraction,
    DabFixedRachRBs,
    DynamicsConfig,
    DynamicsState,
    FixedRBs,
    LoadEstimator,
    NonMonotoneStabilityError,
    RMA,
    UniformRandomRBs,
    capacity_scan,
    dab_rach_contend,
    dynamics_config_from_dict,
    estimate_load,
    frame_seed,
    rma_operating_point,
    run_dynamics,
    step_frame,
)
from rma_qos_model import ConfigError, load_json_file


def quick(arrival_rate, **kwargs):
    settings = dict(frames=120, warmup_frames=20, resource_model=FixedRBs(40))
    settings.update(kwargs)
    return DynamicsConfig(arrival_rate=arrival_rate, **settings)


class TestEstimateLoad:

    def test_formula(self):
        prev = DynamicsState(frame=3, b=0.2, k_estimate=500.0, served=300)
        assert estimate_load(prev, 100.0) == pytest.approx(300.0)

    def test_everything_served(self):
        prev = DynamicsState(frame=3, b=0.0, k_estimate=40.0, served=40)
        assert estimate_load(prev, 25.0) == pytest.approx(25.0)

    def test_first_frame_uses_arrival_rate(self):
        assert estimate_load(DynamicsState(), 17.0) == 17.0

    def test_over_provisioning(self):
        prev = DynamicsState(frame=3, b=0.2, k_estimate=500.0, served=300)
        assert estimate_load(prev, 100.0, rho=0.1) == pytest.approx(330.0)


class TestResources:

    def test_splits(self):
        assert DabFixedRachRBs(10).split(50) == (10, 40)
        assert DabFixedRachRBs(10).split(4) == (4, 0)
        assert DabFixedRachFraction(0.2).split(50) == (10, 40)

    def test_uniform_draws_cover_range(self):
        rng = np.random.default_rng(0)
        draws = [UniformRandomRBs(0, 3).draw(rng) for _ in range(200)]
        assert set(draws) == {0, 1, 2, 3}
        assert UniformRandomRBs(0, 100).mean == 50.0


class TestDabRach:

    def test_single_packet_wins(self):
        assert_equal(dab_rach_contend(np.array([7]), 1, 1, seed=0), [7])

    def test_collision_on_one_preamble(self):
        assert dab_rach_contend(np.array([1, 2]), 1, 5, seed=0, preambles_per_rb=1).size == 0

    def test_data_rbs_cap_winners(self):
        resolved = dab_rach_contend(np.arange(3), 10, 1, seed=1)
        assert resolved.size <= 1

    def test_no_resources(self):
        assert dab_rach_contend(np.arange(3), 0, 5, seed=0).size == 0
        assert dab_rach_contend(np.arange(3), 2, 0, seed=0).size == 0

    def test_expected_singletons(self):
        n, rach_rbs = 20, 2
        preambles = 8 * rach_rbs
        wins = [dab_rach_contend(np.arange(n), rach_rbs, 100, seed=seed).size for seed in range(3000)]
        expected = n * (1 - 1 / preambles) ** (n - 1)
        assert np.mean(wins) == pytest.approx(expected, abs=0.2)

    def test_negative_resources(self):
        with assert_raises(ValueError):
            dab_rach_contend(np.arange(3), -1, 5, seed=0)


class TestStepFrame:

    def test_idle_system(self):
        config = quick(0.0)
        state = step_frame(DynamicsState(), config, frame_seed(0, 0))
        assert state.frame == 1
        assert state.backlog.size == 0
        assert state.b == 0.0
        assert state.resolved_total == 0
        assert state.last_frame.arrivals == 0

    def test_conservation(self):
        config = quick(30.0)
        state = DynamicsState()
        for frame in range(30):
            before = state.backlog.size
            state = step_frame(state, config, frame_seed(4, frame))
            record = state.last_frame
            assert record.participants == before + record.arrivals
            assert record.backlog == record.participants - record.resolved
            assert record.admitted + record.blocked == record.participants
            assert record.delay_sum >= record.resolved
            assert 0.0 <= record.b <= 1.0

    def test_dab_frame(self):
        config = quick(30.0, scheme=DabFixedRachRBs(4))
        state = step_frame(DynamicsState(), config, frame_seed(0, 0))
        assert state.last_frame.resolved <= 36

    def test_barring_admits_load_bound(self):
        config = quick(0.0, resource_model=FixedRBs(100))
        bound = rma_operating_point(100, config.target_error, config.finite_size_c).load
        K = int(round(2 * bound * 100))
        state = DynamicsState(frame=5, backlog=np.zeros(K, dtype=int))
        admitted = [step_frame(state, config, frame_seed(1, t)).last_frame.admitted for t in range(1000)]
        b = 1.0 - bound * 100 / K
        sd = np.sqrt(K * b * (1 - b) / len(admitted))
        assert abs(np.mean(admitted) - bound * 100) <= 3 * sd + 1e-9


class TestRunDynamics:

    def test_deterministic(self):
        config = quick(20.0)
        first = run_dynamics(config, seed=3)
        second = run_dynamics(config, seed=3)
        assert first.frame_rows() == second.frame_rows()
        assert first.summary == second.summary

    def test_light_load_delay_near_one_frame(self):
        result = run_dynamics(quick(2.0, resource_model=FixedRBs(100)), seed=1)
        assert result.summary.stable
        assert 1.0 <= result.summary.mean_delay <= 1.5

    def test_overload_backlog_grows(self):
        result = run_dynamics(quick(100.0, resource_model=FixedRBs(20), frames=300, warmup_frames=50), seed=2)
        assert not result.summary.stable
        assert result.summary.backlog_slope > 0

    def test_packet_conservation_over_run(self):
        result = run_dynamics(quick(25.0), seed=5)
        arrivals = sum(record.arrivals for record in result.records)
        resolved = sum(record.resolved for record in result.records)
        assert arrivals == resolved + result.records[-1].backlog

    def test_estimated_load(self):
        config = quick(6.0, load_estimator=LoadEstimator.ESTIMATED, rho=0.1)
        summary = run_dynamics(config, seed=6).summary
        assert summary.stable

    def test_frames_must_exceed_warmup(self):
        with assert_raises(ConfigError):
            run_dynamics(quick(1.0, frames=20, warmup_frames=20))

    def test_idle_run(self):
        summary = run_dynamics(quick(0.0), seed=0).summary
        assert summary.stable
        assert summary.throughput == 0.0
        assert summary.mean_delay == 0.0


class TestCapacityScan:

    def test_all_stable_returns_grid_max(self):
        scan = capacity_scan(quick(0.0, resource_model=FixedRBs(100)), [1.0, 2.0, 3.0], seed=0)
        assert scan.capacity == 3.0
        assert scan.monotone

    def test_capacity_brackets_saturation(self):
        scan = capacity_scan(quick(0.0, resource_model=FixedRBs(20), frames=200, warmup_frames=50),
                             [2.0, 5.0, 60.0], seed=0)
        assert scan.capacity == 5.0
        assert scan.verdicts[-1] == (60.0, False)

    def test_grid_must_ascend(self):
        with assert_raises(ValueError):
            capacity_scan(quick(0.0), [3.0, 1.0])

    def test_non_monotone_error_carries_verdicts(self):
        error = NonMonotoneStabilityError("flip", [(1.0, True), (2.0, False), (3.0, True)])
        assert error.verdicts[2] == (3.0, True)


class TestConfig:

    def test_shipped_config(self, config_dir):
        config = dynamics_config_from_dict(load_json_file(config_dir / "dynamics_rma.json"))
        assert config.resource_model == UniformRandomRBs(0, 100)
        assert config.scheme == RMA()
        assert config.load_estimator is LoadEstimator.ESTIMATED

    def test_schemes(self):
        config = dynamics_config_from_dict({'arrival_rate': 5, 'scheme': {'kind': 'dab_rach_fraction', 'fraction': 0.3},
                                            'resource_model': {'kind': 'fixed', 'rbs': 30}})
        assert config.scheme == DabFixedRachFraction(0.3)
        assert config.resource_model == FixedRBs(30)
        assert config.scheme_label == "dab_rach_fraction_0.3"

    @pytest.mark.parametrize("data", [
        {'arrival_rate': 5, 'speed': 2},
        {'frames': 10},
        {'arrival_rate': 5, 'scheme': {'kind': 'aloha'}},
        {'arrival_rate': 5, 'resource_model': {'kind': 'fixed'}},
        {'arrival_rate': -1},
        {'arrival_rate': 5, 'delay_threshold_frames': 0.5},
        {'arrival_rate': 5, 'scheme': {'kind': 'dab_rach_fraction', 'fraction': 1.5}},
    ])
    def test_invalid(self, data):
        with assert_raises(ConfigError):
            dynamics_config_from_dict(data)


@pytest.mark.slow
class TestTrends:

    def test_rma_outperforms_dab_at_saturation(self):
        settings = dict(frames=300, warmup_frames=50, resource_model=UniformRandomRBs(0, 100))
        rma = run_dynamics(DynamicsConfig(arrival_rate=80.0, **settings), seed=0).summary
        fixed = run_dynamics(DynamicsConfig(arrival_rate=80.0, scheme=DabFixedRachRBs(10), **settings), seed=0).summary
        share = run_dynamics(DynamicsConfig(arrival_rate=80.0, scheme=DabFixedRachFraction(0.2), **settings),
                             seed=0).summary
        assert rma.throughput > fixed.throughput
        assert rma.throughput > share.throughput

    def test_throughput_saturates(self):
        settings = dict(frames=300, warmup_frames=50, resource_model=FixedRBs(50))
        throughput = [run_dynamics(DynamicsConfig(arrival_rate=rate, **settings), seed=0).summary.throughput
                      for rate in (5.0, 15.0, 80.0, 120.0)]
        assert throughput[0] < throughput[1] < throughput[2]
        assert throughput[3] == pytest.approx(throughput[2], rel=0.1)

    def test_capacity_grows_with_resource_blocks(self):
        grid = np.arange(5.0, 161.0, 5.0)
        capacities = [capacity_scan(quick(0.0, frames=200, warmup_frames=40, resource_model=FixedRBs(rbs)), grid,
                                    seed=0).capacity
                      for rbs in (20, 40, 80)]
        assert capacities[0] > 0
        assert capacities[0] <= capacities[1] <= capacities[2]

    def test_rare_ack_loss_barely_moves_capacity(self):
        # 3% steps keep one grid step inside the allowed change
        grid = 5.0 * 1.03 ** np.arange(100)
        clean = capacity_scan(quick(0.0, frames=200, warmup_frames=40), grid, seed=0).capacity
        lossy = capacity_scan(quick(0.0, frames=200, warmup_frames=40, feedback_loss_prob=0.01), grid,
                              seed=0).capacity
        assert clean > 0
        assert abs(lossy - clean) <= 0.05 * clean
