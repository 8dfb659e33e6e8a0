"""Control stack: allocation, trapezoid trajectories, PID loops, and the
closed-loop behavior of both controller stacks with the reference gains."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quadrl import dynamics as dyn
from quadrl.control import (
    ALLOCATION_MATRIX,
    CommandScaling,
    PIDGainSet,
    Pid,
    PosePidController,
    REFERENCE_POSE_GAINS,
    REFERENCE_VELOCITY_GAINS,
    TrapezoidTrajectory,
    VelocityPidController,
    allocate,
    hover_fraction,
)
from quadrl.dynamics import QuadState, fraction_to_rpm, integrate_step, nominal_params


class TestAllocation:
    def test_throttle_column(self):
        assert np.array_equal(allocate([1.0, 0.0, 0.0, 0.0]), [1.0, 1.0, 1.0, 1.0])

    def test_roll_column(self):
        assert np.array_equal(allocate([0.0, 1.0, 0.0, 0.0]), [1.0, 0.0, -1.0, 0.0])

    def test_yaw_column(self):
        assert np.array_equal(allocate([0.0, 0.0, 0.0, 1.0]), [1.0, -1.0, 1.0, -1.0])

    def test_linearity_exact(self):
        # dyadic rationals keep every product and sum exact in binary fp
        rng = np.random.default_rng(0)
        for _ in range(50):
            d1 = rng.integers(-512, 512, 4) / 1024.0
            d2 = rng.integers(-512, 512, 4) / 1024.0
            a = rng.integers(-8, 8)
            b = rng.integers(-8, 8)
            lhs = allocate(a * d1 + b * d2)
            rhs = a * allocate(d1) + b * allocate(d2)
            assert np.array_equal(lhs, rhs)

    def test_pseudo_inverse_round_trip(self):
        pinv = np.linalg.pinv(ALLOCATION_MATRIX)
        rng = np.random.default_rng(1)
        for _ in range(20):
            delta = rng.uniform(-1, 1, 4)
            back = pinv @ allocate(delta)
            assert np.allclose(back, delta, atol=1e-12)

    def test_pure_yaw_zero_net_thrust_first_order(self):
        # linearized at hover, a yaw command must not change total thrust
        p = nominal_params()
        sim = dyn.DEFAULT_SIM
        f0 = hover_fraction(sim)

        def total_thrust(u_yaw):
            frac = allocate([f0, 0.0, 0.0, u_yaw])
            rpm = fraction_to_rpm(frac, sim)
            return sum(dyn.rotor_thrust(p, r) for r in rpm)

        eps = 1e-6
        slope = (total_thrust(eps) - total_thrust(-eps)) / (2 * eps)
        assert abs(slope) < 1e-6 * total_thrust(0.0)


class TestTrapezoidTrajectory:
    def make(self, disp=1.0, te=10.0, rt=0.335):
        return TrapezoidTrajectory(np.zeros(4), np.array([disp, 0, 0, 0]), te, rt)

    def test_boundaries(self):
        traj = self.make()
        pose, vel = traj.eval(0.0)
        assert np.array_equal(pose, np.zeros(4)) and np.array_equal(vel, np.zeros(4))
        pose, vel = traj.eval(12.0)
        assert np.allclose(pose, [1, 0, 0, 0]) and np.array_equal(vel, np.zeros(4))

    def test_plateau_speed(self):
        # area under the profile fixes v_max = D / (Te (1 - rt))
        traj = self.make(disp=1.0, te=10.0, rt=0.335)
        _, vel = traj.eval(5.0)
        assert vel[0] == pytest.approx(1.0 / (10.0 * 0.665), rel=1e-12)
        assert vel[0] == pytest.approx(0.150376, abs=1e-6)

    def test_velocity_integrates_to_displacement(self):
        for rt in (0.0, 0.2, 0.335, 0.5):
            traj = TrapezoidTrajectory(
                np.array([0.5, -1.0, 2.0, 0.3]), np.array([-1.5, 2.0, 0.0, -0.7]),
                te=8.0, rt=rt,
            )
            n = 80_000
            h = 8.0 / n
            total = np.zeros(4)
            for i in range(n):
                _, v = traj.eval((i + 0.5) * h)
                total += v * h
            assert np.allclose(total, traj.goal_pose - traj.start_pose, atol=1e-9)

    def test_position_continuity(self):
        traj = self.make(te=10.0, rt=0.3)
        for t in (3.0, 7.0, 10.0):  # phase boundaries
            before, _ = traj.eval(t - 1e-9)
            after, _ = traj.eval(t + 1e-9)
            assert np.allclose(before, after, atol=1e-6)

    def test_validation(self):
        with pytest.raises(ValueError):
            TrapezoidTrajectory(np.zeros(4), np.ones(4), te=0.0, rt=0.3)
        with pytest.raises(ValueError):
            TrapezoidTrajectory(np.zeros(4), np.ones(4), te=5.0, rt=0.6)


class TestPid:
    def test_zero_error_zero_output(self):
        pid = Pid(2.0, 1.0, 0.5)
        assert pid.step(0.0, 0.025) == 0.0
        assert pid.integral == 0.0

    def test_proportional_only(self):
        pid = Pid(2.0, 0.0, 0.0)
        assert pid.step(0.5, 0.025) == pytest.approx(1.0, rel=1e-12)

    def test_integral_rectangle_sum(self):
        pid = Pid(0.0, 1.0, 0.0)
        out = 0.0
        for _ in range(40):
            out = pid.step(1.0, 0.025)
        assert out == pytest.approx(1.0, abs=0.025 + 1e-12)

    def test_backward_difference_derivative(self):
        pid = Pid(0.0, 0.0, 1.0)
        pid.step(0.0, 0.1)
        assert pid.step(0.5, 0.1) == pytest.approx(5.0, rel=1e-12)

    def test_explicit_derivative_overrides(self):
        pid = Pid(0.0, 0.0, 2.0)
        assert pid.step(1.0, 0.1, derivative=-3.0) == pytest.approx(-6.0, rel=1e-12)

    def test_reset_and_replay_reproduces(self):
        rng = np.random.default_rng(5)
        errors = rng.uniform(-1, 1, 100)
        pid = Pid(1.2, 0.8, 0.3, out_limit=5.0, int_limit=2.0)
        first = [pid.step(e, 0.025) for e in errors]
        pid.reset()
        second = [pid.step(e, 0.025) for e in errors]
        assert first == second

    def test_anti_windup_clamps_integral_term(self):
        pid = Pid(0.0, 10.0, 0.0, int_limit=1.0)
        for _ in range(1000):
            out = pid.step(1.0, 0.025)
        assert out == pytest.approx(1.0, rel=1e-12)


def run_pose_episode(gains=REFERENCE_POSE_GAINS, scaling=CommandScaling(), seed=0,
                     noise=0.0, motor_filter_on=False, duration=12.5, hz=40):
    """Closed-loop waypoint run; returns (times, positions, speeds) or None."""
    params = nominal_params()
    sim = dyn.DEFAULT_SIM
    rng = np.random.default_rng(seed)
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    att = (rng.uniform(-0.064 * np.pi, 0.064 * np.pi),
           rng.uniform(-0.064 * np.pi, 0.064 * np.pi),
           rng.uniform(-0.3 * np.pi, 0.3 * np.pi))
    state = QuadState.at_rest(direction, att)
    ctl = PosePidController(gains, scaling)
    traj = TrapezoidTrajectory(np.array([*state.p, att[2]]), np.zeros(4),
                               gains.traj_te, gains.traj_rt)
    dt = 1.0 / hz
    prev = np.zeros(4)
    rows = []
    for k in range(int(duration * hz)):
        sp, spv = traj.eval(k * dt)
        meas = np.concatenate([
            state.p, [state.euler[2], state.euler[0], state.euler[1]],
            state.nu, state.omega,
        ])
        if noise > 0:
            meas = meas + rng.normal(0, noise, 12)
        delta = ctl.step(meas[:6], meas[6:12], sp, spv, dt)
        rpm = fraction_to_rpm(allocate(delta), sim)
        if motor_filter_on:
            rpm = dyn.motor_filter(prev, rpm)
            prev = rpm
        try:
            state = integrate_step(state, params, rpm, dt, sim)
        except dyn.FlightDynamicsError:
            return None
        if not state.is_valid() or np.abs(state.p).max() > 1.5:
            return None
        rows.append((k * dt + dt, state.p.copy(), state.speed()))
    return rows


class TestPosePidController:
    def test_equilibrium_outputs_hover_feed_forward(self):
        ctl = PosePidController(REFERENCE_POSE_GAINS)
        pose = (0.2, -0.1, 0.5, 0.3, 0.0, 0.0)
        delta = ctl.step(pose, np.zeros(6), np.array([0.2, -0.1, 0.5, 0.3]), np.zeros(4), 0.025)
        assert delta[0] == pytest.approx(hover_fraction(), rel=1e-12)
        assert np.allclose(delta[1:], 0.0, atol=1e-15)

    def test_forward_error_commands_nose_down_pitch(self):
        # free-body sign check: thrust tilts toward +x when pitch is
        # positive in this frame, so a target ahead must raise the pitch
        # command
        ctl = PosePidController(REFERENCE_POSE_GAINS)
        pose = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
        delta = ctl.step(pose, np.zeros(6), np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(4), 0.025)
        assert delta[2] > 0.0

    def test_forward_error_closed_loop_moves_forward(self):
        params = nominal_params()
        sim = dyn.DEFAULT_SIM
        ctl = PosePidController(REFERENCE_POSE_GAINS)
        state = QuadState.at_rest((0.0, 0.0, 0.0))
        target = np.array([1.0, 0.0, 0.0, 0.0])
        dt = 0.025
        for _ in range(40):
            pose = (state.p[0], state.p[1], state.p[2],
                    state.euler[2], state.euler[0], state.euler[1])
            rates = np.concatenate([state.nu, state.omega])
            delta = ctl.step(pose, rates, target, np.zeros(4), dt)
            state = integrate_step(state, params, fraction_to_rpm(allocate(delta), sim), dt, sim)
        assert state.p[0] > 0.05
        assert abs(state.p[1]) < 0.02

    def test_reference_gains_settle_with_small_error(self):
        rows = run_pose_episode(seed=3, motor_filter_on=True)
        assert rows is not None
        final_err = np.linalg.norm(rows[-1][1])
        assert final_err < 0.15
        tail = [r for r in rows if r[0] >= 10.5]
        assert all(np.linalg.norm(r[1]) < 0.15 for r in tail)

    def test_reference_gains_settling_band(self):
        rows = run_pose_episode(seed=7, motor_filter_on=True)
        speeds = [r[2] for r in rows]
        settle = 12.5
        for i in range(len(rows)):
            if all(s <= 0.1 for s in speeds[i:]):
                settle = rows[i][0]
                break
        assert 8.0 <= settle <= 12.5


class TestVelocityPidController:
    def run_pulse(self, axis, value=1.0, duration=3.0, gains=REFERENCE_VELOCITY_GAINS):
        params = nominal_params()
        sim = dyn.DEFAULT_SIM
        ctl = VelocityPidController(gains)
        state = QuadState.at_rest((0.0, 0.0, 0.0))
        dt = 1.0 / 40
        out = []
        for k in range(int(duration * 40)):
            sp = np.zeros(4)
            sp[axis] = value
            meas = (*state.nu, *state.omega, state.euler[0], state.euler[1])
            delta = ctl.step(meas, sp, dt)
            state = integrate_step(state, params, fraction_to_rpm(allocate(delta), sim), dt, sim)
            achieved = state.nu[axis] if axis < 3 else state.omega[2]
            out.append((k * dt + dt, achieved))
        return out

    def test_hover_equilibrium(self):
        ctl = VelocityPidController(REFERENCE_VELOCITY_GAINS)
        delta = ctl.step((0.0,) * 8, np.zeros(4), 0.025)
        assert delta[0] == pytest.approx(hover_fraction(), rel=1e-12)
        assert np.allclose(delta[1:], 0.0, atol=1e-15)

    def test_climb_rate_pulse(self):
        out = self.run_pulse(axis=2)
        at_two = [v for t, v in out if 1.9 <= t <= 2.1]
        assert abs(np.mean(at_two) - 1.0) < 0.2

    def test_yaw_rate_pulse_steady_error(self):
        out = self.run_pulse(axis=3)
        tail = [abs(1.0 - v) for t, v in out if t >= 2.0]
        assert np.mean(tail) < 0.1


class TestGainSet:
    def test_vector_round_trip(self):
        g = REFERENCE_POSE_GAINS
        back = PIDGainSet.from_vector(g.as_vector(with_trajectory=True))
        assert back == g

    def test_vector_round_trip_without_trajectory(self):
        g = REFERENCE_VELOCITY_GAINS
        back = PIDGainSet.from_vector(g.as_vector())
        assert back.kp_yaw == g.kp_yaw and back.kd_rp == g.kd_rp

    @given(st.integers(0, 11))
    @settings(max_examples=12, deadline=None)
    def test_vector_order_stable(self, idx):
        vec = np.zeros(12)
        vec[idx] = 1.5
        g = PIDGainSet.from_vector(vec)
        assert np.array_equal(g.as_vector(), vec)
