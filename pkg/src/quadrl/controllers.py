"""Waypoint-controller adapters.

Wraps the three controller stacks (pose PID, fully learned, learned cascade)
plus two harness stubs behind one protocol used by the evaluation runners:

    reset()                         episode start
    begin_leg(start_pose, target)   new waypoint leg (pose4 = x, y, z, yaw)
    act(t, obs, effective_target, dt) -> rotor command fractions [0, 1]^4
    wants_waypoint_clipping         learned stacks cap the target distance
    teleports / teleport(...)       oracle stub only
"""

from __future__ import annotations

import numpy as np

from .control import (
    CommandScaling,
    PIDGainSet,
    PosePidController,
    TrapezoidTrajectory,
    VelocityPidController,
    allocate,
    hover_fraction,
)
from .dynamics import DEFAULT_SIM, QuadState, SimConfig


class WaypointController:
    """Base adapter: hovers nothing, exposes the protocol defaults."""

    wants_waypoint_clipping = False
    teleports = False

    def reset(self):
        pass

    def begin_leg(self, start_pose: np.ndarray, target_pose: np.ndarray):
        pass

    def act(self, t: float, obs: np.ndarray, effective_target: np.ndarray,
            dt: float) -> np.ndarray:
        raise NotImplementedError


class PosePidWaypointController(WaypointController):
    """Trajectory-tracking pose PID stack.

    Regenerates its trapezoidal trajectory at every leg start from the
    current pose; PID trim state persists across legs within an episode.
    """

    def __init__(self, gains: PIDGainSet, scaling: CommandScaling = CommandScaling(),
                 sim: SimConfig = DEFAULT_SIM):
        self.gains = gains
        self.pid = PosePidController(gains, scaling, sim)
        self._trajectory = None
        self._leg_t = 0.0

    def reset(self):
        self.pid.reset()
        self._trajectory = None
        self._leg_t = 0.0

    def begin_leg(self, start_pose, target_pose):
        self._trajectory = TrapezoidTrajectory(
            np.asarray(start_pose, dtype=float), np.asarray(target_pose, dtype=float),
            self.gains.traj_te, self.gains.traj_rt,
        )
        self._leg_t = 0.0

    def act(self, t, obs, effective_target, dt):
        if self._trajectory is None:
            target = np.asarray(effective_target, dtype=float)
            pose_now = np.array([target[0] + obs[0], target[1] + obs[1],
                                 target[2] + obs[2], target[3] + obs[3]])
            self.begin_leg(pose_now, target)
        setpoint, setpoint_vel = self._trajectory.eval(self._leg_t)
        self._leg_t += dt
        pose = (
            effective_target[0] + obs[0], effective_target[1] + obs[1],
            effective_target[2] + obs[2], effective_target[3] + obs[3],
            obs[4], obs[5],
        )
        delta = self.pid.step(pose, obs[6:12], setpoint, setpoint_vel, dt)
        return allocate(delta)


class LearnedWaypointController(WaypointController):
    """Deterministic policy of a trained agent driving motors directly."""

    wants_waypoint_clipping = True

    def __init__(self, agent):
        self.agent = agent

    def act(self, t, obs, effective_target, dt):
        action, _ = self.agent.sample_action(obs, deterministic=True)
        return (np.clip(action, -1.0, 1.0) + 1.0) * 0.5


class CascadeWaypointController(WaypointController):
    """Learned policy emitting velocity setpoints for an internal velocity PID."""

    wants_waypoint_clipping = True

    def __init__(self, agent, velocity_gains: PIDGainSet,
                 scaling: CommandScaling = CommandScaling(),
                 sim: SimConfig = DEFAULT_SIM, action_scale: float = 1.5):
        self.agent = agent
        self.action_scale = action_scale
        self.velocity_pid = VelocityPidController(velocity_gains, scaling, sim)

    def reset(self):
        self.velocity_pid.reset()

    def act(self, t, obs, effective_target, dt):
        action, _ = self.agent.sample_action(obs, deterministic=True)
        setpoint = np.clip(action, -1.0, 1.0) * self.action_scale
        meas = (*obs[6:12], obs[4], obs[5])
        delta = self.velocity_pid.step(meas, setpoint, dt)
        return allocate(delta)


class TeleportStubController(WaypointController):
    """Oracle that jumps straight to the target; harness checks only."""

    teleports = True

    def teleport(self, state: QuadState, target_pose: np.ndarray) -> QuadState:
        target_pose = np.asarray(target_pose, dtype=float)
        return QuadState.at_rest(target_pose[0:3], (0.0, 0.0, target_pose[3]))

    def act(self, t, obs, effective_target, dt):
        raise RuntimeError("teleport stub does not produce motor commands")


class HoverStubController(WaypointController):
    """Oracle that freezes level at its spawn point; exercises the
    per-waypoint timeout path (it never travels anywhere)."""

    teleports = True

    def __init__(self):
        self._position = None

    def reset(self):
        self._position = None

    def teleport(self, state: QuadState, target_pose: np.ndarray) -> QuadState:
        if self._position is None:
            self._position = state.p.copy()
        return QuadState.at_rest(self._position)

    def act(self, t, obs, effective_target, dt):
        raise RuntimeError("hover stub does not produce motor commands")


class ConstantCommandController(WaypointController):
    """Physical open-loop stub holding the nominal hover command fraction."""

    def __init__(self, sim: SimConfig = DEFAULT_SIM):
        self.fraction = hover_fraction(sim)

    def act(self, t, obs, effective_target, dt):
        return np.full(4, self.fraction)
