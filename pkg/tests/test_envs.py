"""Environments: randomization bounds, waypoint task reward/termination,
waypoint clipping, and the payload course state machine."""

import math

import numpy as np
import pytest

from quadrl.control import REFERENCE_POSE_GAINS
from quadrl.controllers import (
    HoverStubController,
    PosePidWaypointController,
    TeleportStubController,
)
from quadrl.dynamics import DisturbanceConfig, nominal_params
from quadrl.envs import (
    CourseSpec,
    RandomizationSpec,
    WaypointEnv,
    clip_waypoint,
    reward_function,
    run_payload_course,
    sample_test_params,
    spawn_state,
    summary_row,
    write_record_csv,
)


class TestRandomization:
    def test_disabled_gives_fixed_vehicle(self):
        spec = RandomizationSpec(enabled=False)
        p = spec.sample(np.random.default_rng(0))
        assert p == nominal_params()
        assert (p.prop_diameter, p.hub_radius, p.arm_length, p.mass) == (10.0, 0.10, 0.3, 1.2)

    def test_sampled_parameters_respect_coupled_bounds(self):
        spec = RandomizationSpec()
        rng = np.random.default_rng(1)
        for _ in range(100_000):
            p = spec.sample(rng)
            assert 6.0 <= p.prop_diameter <= 12.0
            assert 0.05 <= p.hub_radius <= 0.15
            lo, hi = spec.arm_bounds(p.prop_diameter)
            assert lo <= p.arm_length <= hi
            mlo, mhi = spec.mass_bounds(p.prop_diameter)
            assert mlo <= p.mass <= mhi

    def test_mass_bounds_over_resets(self):
        spec = RandomizationSpec()
        rng = np.random.default_rng(2)
        for _ in range(10_000):
            p = spec.sample(rng)
            assert 0.1 * p.prop_diameter - 0.3 <= p.mass <= 0.265 * p.prop_diameter - 0.9

    def test_test_params_pickup_mass_ceiling(self):
        rng = np.random.default_rng(3)
        for _ in range(2000):
            p = sample_test_params(rng, task="pickup")
            assert p.mass <= 0.2 * p.prop_diameter - 0.66 + 1e-12
            assert p.arm_length == pytest.approx(0.025 * p.prop_diameter + 0.05, rel=1e-12)
            assert p.hub_radius == 0.10

    def test_spawn_distance_exactly_one_meter(self):
        rng = np.random.default_rng(4)
        for _ in range(200):
            s = spawn_state(rng)
            assert np.linalg.norm(s.p) == pytest.approx(1.0, abs=1e-12)
            assert abs(s.euler[0]) <= 0.064 * math.pi
            assert abs(s.euler[1]) <= 0.064 * math.pi
            assert abs(s.euler[2]) <= 0.3 * math.pi
            assert np.array_equal(s.nu, np.zeros(3))


class TestReward:
    def test_zero_at_zero_error(self):
        assert reward_function(np.zeros(3), 0.0, 0.0, 0.0) == 0.0

    def test_unit_position_error(self):
        assert reward_function(np.array([1.0, 0.0, 0.0]), 0.0, 0.0, 0.0) == -1.0

    def test_yaw_half_radian(self):
        assert reward_function(np.zeros(3), 0.0, 0.0, 0.5) == -0.25

    def test_never_positive(self):
        rng = np.random.default_rng(5)
        for _ in range(500):
            r = reward_function(rng.uniform(-2, 2, 3), rng.uniform(-1, 1),
                                rng.uniform(-1, 1), rng.uniform(-3, 3))
            assert r <= 0.0


class TestWaypointEnv:
    def test_reset_returns_observation(self):
        env = WaypointEnv(randomization=RandomizationSpec(enabled=False), seed=0)
        obs = env.reset()
        assert obs.shape == (12,)
        assert np.linalg.norm(obs[0:3]) == pytest.approx(1.0, abs=1e-12)

    def test_boundary_exit_terminal_reward(self):
        env = WaypointEnv(randomization=RandomizationSpec(enabled=False), seed=1)
        env.reset()
        done = False
        while not done:
            obs, reward, done, info = env.step(np.ones(4))  # full throttle up
        assert info["terminal"]
        assert info["outcome"] in ("boundary", "unstable")
        assert reward == -80.0

    def test_step_cap_is_quiet_success(self):
        env = WaypointEnv(randomization=RandomizationSpec(enabled=False),
                          max_steps=5, seed=2)
        env.reset()
        from quadrl.control import hover_fraction

        action = np.full(4, 2.0 * hover_fraction() - 1.0)
        for _ in range(5):
            obs, reward, done, info = env.step(action)
        assert done and not info["terminal"]
        assert info["outcome"] == "success"
        assert reward > -80.0

    def test_episode_reset_required_after_done(self):
        env = WaypointEnv(randomization=RandomizationSpec(enabled=False),
                          max_steps=1, seed=3)
        env.reset()
        env.step(np.zeros(4))
        with pytest.raises(RuntimeError):
            env.step(np.zeros(4))

    def test_episode_streams_reproducible(self):
        def rollout(seed):
            env = WaypointEnv(seed=seed)
            obs = env.reset()
            out = [obs]
            for _ in range(20):
                obs, r, done, _ = env.step(np.full(4, 0.1))
                out.append(obs)
                if done:
                    break
            return np.concatenate(out)

        assert np.array_equal(rollout(9), rollout(9))

    def test_velocity_mode_runs(self):
        env = WaypointEnv(randomization=RandomizationSpec(enabled=False),
                          action_mode="velocity", max_steps=10, seed=0)
        env.reset()
        obs, r, done, info = env.step(np.array([0.0, 0.0, 0.1, 0.0]))
        assert obs.shape == (12,)


class TestClipWaypoint:
    def test_near_target_unchanged(self):
        target = np.array([0.3, 0.2, -0.1])
        out = clip_waypoint(np.zeros(3), target)
        assert np.array_equal(out, target)

    def test_far_target_clipped_to_unit(self):
        out = clip_waypoint(np.zeros(3), np.array([2.0, 0.0, 0.0]))
        assert np.allclose(out, [1.0, 0.0, 0.0], atol=1e-12)

    def test_clipped_distance_exactly_one(self):
        rng = np.random.default_rng(6)
        for _ in range(300):
            p = rng.uniform(-1, 1, 3)
            target = p + rng.uniform(1.5, 30.0) * _unit(rng.normal(size=3))
            out = clip_waypoint(p, target)
            assert np.linalg.norm(out - p) == pytest.approx(1.0, rel=1e-12)


def _unit(v):
    return v / np.linalg.norm(v)


class TestPayloadCourse:
    def test_teleport_oracle_completes_with_three_waypoints(self):
        record = run_payload_course(TeleportStubController(), nominal_params(), seed=0)
        assert record.success and record.outcome == "success"
        assert len(record.waypoint_times) == 3
        assert record.waypoint_times == sorted(record.waypoint_times)

    def test_hover_stub_times_out_in_first_leg(self):
        record = run_payload_course(HoverStubController(), nominal_params(), seed=0)
        assert not record.success
        assert record.outcome == "timeout"
        assert record.n_steps == CourseSpec().step_limit
        assert record.waypoint_times == []

    def test_mass_trace_applies_and_reverts_payload(self):
        p = nominal_params()
        record = run_payload_course(TeleportStubController(), p, seed=1)
        masses = np.array(record.masses)
        times = np.array(record.times)
        t1, t2, _ = record.waypoint_times
        assert np.allclose(masses[times <= t1], p.mass)
        mid = (times > t1) & (times <= t2)
        assert np.allclose(masses[mid], 1.30 * p.mass)
        assert np.allclose(masses[times > t2], p.mass)

    def test_pose_pid_completes_course(self):
        controller = PosePidWaypointController(REFERENCE_POSE_GAINS)
        record = run_payload_course(controller, nominal_params(), seed=3)
        assert record.success
        assert len(record.waypoint_times) == 3

    def test_course_reproducible_with_disturbances(self):
        cfg = DisturbanceConfig(sensor_noise_std=0.05, motor_filter_enabled=True)

        def run():
            controller = PosePidWaypointController(REFERENCE_POSE_GAINS)
            return run_payload_course(controller, nominal_params(),
                                      disturbances=cfg, seed=7)

        a, b = run(), run()
        assert a.outcome == b.outcome
        assert a.waypoint_times == b.waypoint_times
        assert np.array_equal(a.state_matrix(), b.state_matrix())

    def test_spawn_inside_cube(self):
        spec = CourseSpec()
        for seed in range(30):
            record = run_payload_course(HoverStubController(), nominal_params(),
                                        spec=spec, seed=seed)
            first = record.states[0][6:9]
            offset = first - np.asarray(spec.pickup_point)
            assert (np.abs(offset) <= spec.spawn_half_width + 1e-9).all()


class TestRecordSerialization:
    def test_csv_round_trip_shape(self, tmp_path):
        record = run_payload_course(TeleportStubController(), nominal_params(), seed=0)
        path = tmp_path / "ep.csv"
        write_record_csv(record, path)
        lines = path.read_text().strip().split("\n")
        assert len(lines) == record.n_steps + 1
        header = lines[0].split(",")
        assert header[0] == "time" and "mass" in header

    def test_summary_row_fields(self):
        record = run_payload_course(TeleportStubController(), nominal_params(), seed=0)
        row = summary_row(record, episode=5)
        assert row[0] == 5
        assert row[3] == "success"
        assert row[4] == 1
