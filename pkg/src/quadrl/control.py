"""Classical control stack for the plus-frame quadrotor.

Control allocation, trapezoidal trajectory generation, and the two cascaded
PID controllers: the pose controller (position errors -> attitude targets ->
motor commands, tracking a generated trajectory) and the velocity controller
(velocity setpoints -> attitude targets -> motor commands) used inside the
learned cascade stack.

Command convention: a control vector delta = [throttle, roll, pitch, yaw]
in normalized rotor-fraction units. The allocation matrix maps delta to
per-rotor command fractions which saturate to [0, 1] before the motor map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .dynamics import (
    DEFAULT_SIM,
    SimConfig,
    hover_rpm,
    nominal_params,
    wrap_angle,
)

# Plus-frame allocation: rows are rotors (+Y, -X, -Y, +X), columns are
# [throttle, roll, pitch, yaw].
ALLOCATION_MATRIX = np.array(
    [
        [1.0, 1.0, 0.0, 1.0],
        [1.0, 0.0, 1.0, -1.0],
        [1.0, -1.0, 0.0, 1.0],
        [1.0, 0.0, -1.0, -1.0],
    ]
)


def allocate(delta: np.ndarray) -> np.ndarray:
    """Map [throttle, roll, pitch, yaw] commands to per-rotor fractions."""
    return ALLOCATION_MATRIX @ np.asarray(delta, dtype=float)


@dataclass(frozen=True)
class PIDGainSet:
    """Reduced gain set: symmetric axes share gains.

    traj_te / traj_rt parameterize the trapezoidal trajectory and are only
    meaningful for the pose stack.
    """

    kp_xy: float = 0.0
    ki_xy: float = 0.0
    kd_xy: float = 0.0
    kp_z: float = 0.0
    ki_z: float = 0.0
    kd_z: float = 0.0
    kp_rp: float = 0.0
    ki_rp: float = 0.0
    kd_rp: float = 0.0
    kp_yaw: float = 0.0
    ki_yaw: float = 0.0
    kd_yaw: float = 0.0
    traj_te: float = 10.0
    traj_rt: float = 0.335

    def as_vector(self, with_trajectory: bool = False) -> np.ndarray:
        v = [
            self.kp_xy, self.kp_z, self.ki_xy, self.ki_z, self.kd_xy, self.kd_z,
            self.kp_rp, self.kp_yaw, self.ki_rp, self.ki_yaw, self.kd_rp, self.kd_yaw,
        ]
        if with_trajectory:
            v += [self.traj_te, self.traj_rt]
        return np.array(v)

    @classmethod
    def from_vector(cls, v) -> "PIDGainSet":
        v = np.asarray(v, dtype=float)
        if v.shape[0] not in (12, 14):
            raise ValueError("gain vector must have 12 or 14 entries")
        gains = cls(
            kp_xy=v[0], kp_z=v[1], ki_xy=v[2], ki_z=v[3], kd_xy=v[4], kd_z=v[5],
            kp_rp=v[6], kp_yaw=v[7], ki_rp=v[8], ki_yaw=v[9], kd_rp=v[10], kd_yaw=v[11],
        )
        if v.shape[0] == 14:
            gains = replace(gains, traj_te=v[12], traj_rt=v[13])
        return gains


# Baseline tuned gains for the nominal vehicle class (search results; the
# pose set includes its 10.0 s / 33.5 % trajectory).
REFERENCE_POSE_GAINS = PIDGainSet(
    kp_xy=0.52, ki_xy=0.00, kd_xy=0.40,
    kp_z=7.28, ki_z=8.24, kd_z=0.69,
    kp_rp=10.00, ki_rp=0.01, kd_rp=3.15,
    kp_yaw=3.62, ki_yaw=1.71, kd_yaw=4.09,
    traj_te=10.0, traj_rt=0.335,
)

REFERENCE_VELOCITY_GAINS = PIDGainSet(
    kp_xy=0.14, ki_xy=0.00, kd_xy=0.00,
    kp_z=4.96, ki_z=1.54, kd_z=0.00,
    kp_rp=9.88, ki_rp=0.51, kd_rp=0.96,
    kp_yaw=9.78, ki_yaw=0.00, kd_yaw=3.41,
)


@dataclass(frozen=True)
class TrapezoidTrajectory:
    """Straight-line pose trajectory with a trapezoidal speed profile.

    Each axis (x, y, z, yaw) ramps linearly to its plateau speed over
    rt * te seconds, holds it, and ramps back down, arriving at te.
    """

    start_pose: np.ndarray  # x, y, z, yaw
    goal_pose: np.ndarray
    te: float
    rt: float

    def __post_init__(self):
        if self.te <= 0.0:
            raise ValueError("te must be positive")
        if not 0.0 <= self.rt <= 0.5:
            raise ValueError("rt must be in [0, 0.5]")

    def eval(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        """Pose and velocity setpoints at time t >= 0."""
        start = np.asarray(self.start_pose, dtype=float)
        goal = np.asarray(self.goal_pose, dtype=float)
        disp = goal - start
        if t >= self.te:
            return goal.copy(), np.zeros(4)
        if t <= 0.0:
            return start.copy(), np.zeros(4)
        v_max = disp / (self.te * (1.0 - self.rt))
        t_rise = self.rt * self.te
        if t_rise <= 0.0:
            # degenerate rectangle profile
            return start + v_max * t, v_max.copy()
        if t < t_rise:
            vel = v_max * (t / t_rise)
            pos = start + v_max * t * t / (2.0 * t_rise)
        elif t <= self.te - t_rise:
            vel = v_max.copy()
            pos = start + v_max * (t - t_rise / 2.0)
        else:
            remaining = self.te - t
            vel = v_max * (remaining / t_rise)
            pos = goal - v_max * remaining * remaining / (2.0 * t_rise)
        return pos, vel


class Pid:
    """Single PID loop.

    The derivative defaults to a backward difference of the error; loops
    that can measure the error rate directly (gyro, velocity sensors) pass
    it explicitly to avoid differencing sensor noise. The integral term
    (gain times accumulated error) clamps to int_limit and the total output
    to out_limit; either may be None for no clamp.
    """

    def __init__(self, kp, ki, kd, out_limit=None, int_limit=None):
        self.kp = kp
        self.ki = ki
        self.kd = kd
        self.out_limit = out_limit
        self.int_limit = int_limit
        self.reset()

    def reset(self):
        self.integral = 0.0
        self.prev_error = None

    def step(self, error: float, dt: float, derivative: float | None = None) -> float:
        if dt <= 0.0:
            raise ValueError("dt must be positive")
        self.integral += error * dt
        i_term = self.ki * self.integral
        if self.int_limit is not None and self.ki > 0.0:
            if abs(i_term) > self.int_limit:
                i_term = math.copysign(self.int_limit, i_term)
                self.integral = i_term / self.ki
        if derivative is None:
            derivative = 0.0 if self.prev_error is None else (error - self.prev_error) / dt
        self.prev_error = error
        out = self.kp * error + i_term + self.kd * derivative
        if self.out_limit is not None:
            out = min(max(out, -self.out_limit), self.out_limit)
        return out


@dataclass(frozen=True)
class CommandScaling:
    """Physical scale of the normalized command channels.

    The published gain sets are dimensionless; these factors fix what one
    unit of PID output means in rotor-fraction terms so those gains sit in
    the stable envelope of a 40 Hz loop.
    """

    throttle: float = 0.05
    rollpitch: float = 0.010
    yaw: float = 0.006
    attitude_limit: float = 0.3  # rad, clamp on roll/pitch targets


def hover_fraction(sim: SimConfig = DEFAULT_SIM) -> float:
    """Throttle feed-forward: hover command fraction of the nominal vehicle.

    Derived from the fixed nominal mass, never the true randomized one; the
    integral term absorbs the mismatch.
    """
    return hover_rpm(nominal_params()) / sim.omega_max_rpm


class PosePidController:
    """Two-loop pose controller: position/yaw errors to motor commands.

    The outer loop turns position errors (rotated into the yaw-aligned
    frame for x, y) into roll/pitch targets and a throttle command about
    the nominal hover feed-forward; the inner loop turns attitude errors
    into torque commands. Derivative action uses the measured velocity and
    rate channels against the setpoint velocities.
    """

    def __init__(self, gains: PIDGainSet, scaling: CommandScaling = CommandScaling(),
                 sim: SimConfig = DEFAULT_SIM):
        self.gains = gains
        self.scaling = scaling
        self.hover_fraction = hover_fraction(sim)
        s = scaling
        g = gains
        self.pid_x = Pid(g.kp_xy, g.ki_xy, g.kd_xy, out_limit=s.attitude_limit, int_limit=s.attitude_limit)
        self.pid_y = Pid(g.kp_xy, g.ki_xy, g.kd_xy, out_limit=s.attitude_limit, int_limit=s.attitude_limit)
        self.pid_z = Pid(g.kp_z, g.ki_z, g.kd_z, out_limit=1.0 / s.throttle, int_limit=1.0 / s.throttle)
        self.pid_roll = Pid(g.kp_rp, g.ki_rp, g.kd_rp, out_limit=1.0 / s.rollpitch, int_limit=1.0 / s.rollpitch)
        self.pid_pitch = Pid(g.kp_rp, g.ki_rp, g.kd_rp, out_limit=1.0 / s.rollpitch, int_limit=1.0 / s.rollpitch)
        self.pid_yaw = Pid(g.kp_yaw, g.ki_yaw, g.kd_yaw, out_limit=1.0 / s.yaw, int_limit=1.0 / s.yaw)

    def reset(self):
        for pid in (self.pid_x, self.pid_y, self.pid_z,
                    self.pid_roll, self.pid_pitch, self.pid_yaw):
            pid.reset()

    def step(self, pose, rates, setpoint_pose, setpoint_vel=None, dt: float = 0.025) -> np.ndarray:
        """One control period.

        pose: measured (x, y, z, yaw, roll, pitch); rates: measured
        (vx, vy, vz, wx, wy, wz) in the body frame; setpoint_pose:
        (x, y, z, yaw). setpoint_vel is accepted for interface symmetry
        with the trajectory generator but the derivative terms act on the
        measured rates alone, which is what produces the documented slight
        lag behind the moving setpoint and the small overshoot after it
        stops. Returns delta = [throttle, roll, pitch, yaw].
        """
        x, y, z, yaw, roll, pitch = (float(v) for v in pose)
        vx, vy, vz, wx, wy, wz = (float(v) for v in rates)
        sp = np.asarray(setpoint_pose, dtype=float)

        # horizontal errors in the yaw-aligned frame
        cy_, sy_ = math.cos(yaw), math.sin(yaw)
        ex, ey = sp[0] - x, sp[1] - y
        ex_b = cy_ * ex + sy_ * ey
        ey_b = -sy_ * ex + cy_ * ey

        # tilting toward +x needs nose-down (+pitch); toward +y needs -roll
        pitch_t = self.pid_x.step(ex_b, dt, derivative=-vx)
        roll_t = -self.pid_y.step(ey_b, dt, derivative=-vy)
        throttle = self.hover_fraction + self.scaling.throttle * self.pid_z.step(
            sp[2] - z, dt, derivative=-vz
        )

        d_roll = self.scaling.rollpitch * self.pid_roll.step(roll_t - roll, dt, derivative=-wx)
        d_pitch = self.scaling.rollpitch * self.pid_pitch.step(pitch_t - pitch, dt, derivative=-wy)
        d_yaw = self.scaling.yaw * self.pid_yaw.step(
            wrap_angle(sp[3] - yaw), dt, derivative=-wz
        )
        return np.array([throttle, d_roll, d_pitch, d_yaw])


class VelocityPidController:
    """Two-loop velocity controller: body-frame velocity setpoints to motors.

    Outer loop maps body-referenced linear velocity errors to roll/pitch
    targets and throttle; the yaw loop tracks a yaw-rate setpoint directly.
    """

    def __init__(self, gains: PIDGainSet, scaling: CommandScaling = CommandScaling(),
                 sim: SimConfig = DEFAULT_SIM):
        self.gains = gains
        self.scaling = scaling
        self.hover_fraction = hover_fraction(sim)
        s = scaling
        g = gains
        self.pid_vx = Pid(g.kp_xy, g.ki_xy, g.kd_xy, out_limit=s.attitude_limit, int_limit=s.attitude_limit)
        self.pid_vy = Pid(g.kp_xy, g.ki_xy, g.kd_xy, out_limit=s.attitude_limit, int_limit=s.attitude_limit)
        self.pid_vz = Pid(g.kp_z, g.ki_z, g.kd_z, out_limit=1.0 / s.throttle, int_limit=1.0 / s.throttle)
        self.pid_roll = Pid(g.kp_rp, g.ki_rp, g.kd_rp, out_limit=1.0 / s.rollpitch, int_limit=1.0 / s.rollpitch)
        self.pid_pitch = Pid(g.kp_rp, g.ki_rp, g.kd_rp, out_limit=1.0 / s.rollpitch, int_limit=1.0 / s.rollpitch)
        self.pid_yaw_rate = Pid(g.kp_yaw, g.ki_yaw, g.kd_yaw, out_limit=1.0 / s.yaw, int_limit=1.0 / s.yaw)

    def reset(self):
        for pid in (self.pid_vx, self.pid_vy, self.pid_vz,
                    self.pid_roll, self.pid_pitch, self.pid_yaw_rate):
            pid.reset()

    def step(self, meas, setpoint, dt: float) -> np.ndarray:
        """One control period.

        meas: (vx, vy, vz, wx, wy, wz, roll, pitch) with body-frame
        velocities and rates; setpoint: (vx, vy, vz, yaw_rate). Returns
        delta = [throttle, roll, pitch, yaw].
        """
        vx, vy, vz, wx, wy, wz, roll, pitch = (float(v) for v in meas)
        sp = np.asarray(setpoint, dtype=float)

        pitch_t = self.pid_vx.step(sp[0] - vx, dt)
        roll_t = -self.pid_vy.step(sp[1] - vy, dt)
        throttle = self.hover_fraction + self.scaling.throttle * self.pid_vz.step(sp[2] - vz, dt)

        d_roll = self.scaling.rollpitch * self.pid_roll.step(roll_t - roll, dt, derivative=-wx)
        d_pitch = self.scaling.rollpitch * self.pid_pitch.step(pitch_t - pitch, dt, derivative=-wy)
        # no angular-acceleration sensor exists, so the yaw-rate loop keeps
        # the backward-difference derivative of its error
        d_yaw = self.scaling.yaw * self.pid_yaw_rate.step(sp[3] - wz, dt)
        return np.array([throttle, d_roll, d_pitch, d_yaw])
