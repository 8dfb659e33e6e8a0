"""Training and evaluation environments.

The waypoint-guidance task (randomized vehicle, navigate to the origin,
dense negative reward, -80 on leaving the boundary) and the payload
pick-up-and-drop course with mid-flight parameter changes, waypoint
clipping for learned controllers, and RMS-stability arrival checks.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import (
    DEFAULT_PROP_PITCH,
    DEFAULT_SIM,
    DisturbanceConfig,
    FlightDynamicsError,
    QuadParams,
    QuadState,
    SimConfig,
    fraction_to_rpm,
    integrate_step,
    motor_filter,
    nominal_params,
    observe,
)

TERMINAL_REWARD = -80.0
TRAIN_CONTROL_HZ = 20
TEST_CONTROL_HZ = 40
TRAIN_MAX_STEPS = 1200
TEST_MAX_STEPS = 2400


def reward_function(position_error, roll, pitch, yaw_error) -> float:
    """Dense flight reward: weighted root-square position, tilt, and yaw terms."""
    pos = math.sqrt(
        position_error[0] ** 2 + position_error[1] ** 2 + position_error[2] ** 2
    )
    tilt = math.sqrt(roll * roll + pitch * pitch)
    return -1.0 * pos - 0.1 * tilt - 0.5 * abs(yaw_error)


@dataclass(frozen=True)
class RandomizationSpec:
    """Vehicle-parameter distribution for domain randomization.

    Arm length and mass bounds are coupled to the sampled prop diameter;
    with randomization disabled every episode uses the fixed vehicle.
    """

    enabled: bool = True
    diameter_range: tuple[float, float] = (6.0, 12.0)
    hub_range: tuple[float, float] = (0.05, 0.15)
    arm_coeff: tuple[float, float] = (0.0167, 0.0334)  # arm = coeff*d + 0.05
    arm_offset: float = 0.05
    mass_lower: tuple[float, float] = (0.1, -0.3)      # mass >= 0.1*d - 0.3
    mass_upper: tuple[float, float] = (0.265, -0.9)    # mass <= 0.265*d - 0.9
    prop_pitch: float = DEFAULT_PROP_PITCH

    def mass_bounds(self, diameter: float) -> tuple[float, float]:
        return (
            self.mass_lower[0] * diameter + self.mass_lower[1],
            self.mass_upper[0] * diameter + self.mass_upper[1],
        )

    def arm_bounds(self, diameter: float) -> tuple[float, float]:
        return (
            self.arm_coeff[0] * diameter + self.arm_offset,
            self.arm_coeff[1] * diameter + self.arm_offset,
        )

    def sample(self, rng: np.random.Generator) -> QuadParams:
        if not self.enabled:
            return nominal_params()
        d = rng.uniform(*self.diameter_range)
        hub = rng.uniform(*self.hub_range)
        arm = rng.uniform(*self.arm_bounds(d))
        mass = rng.uniform(*self.mass_bounds(d))
        return QuadParams(
            prop_diameter=d, prop_pitch=self.prop_pitch,
            arm_length=arm, hub_radius=hub, mass=mass,
        )


def sample_test_params(rng: np.random.Generator, task: str = "waypoint",
                       spec: RandomizationSpec = RandomizationSpec()) -> QuadParams:
    """Experiment vehicles vary only diameter and mass; the arm length sits
    at the mean of the training bounds and the hub stays nominal. The
    pickup task lowers the mass ceiling so the loaded vehicle can hover."""
    d = rng.uniform(*spec.diameter_range)
    lo = spec.mass_lower[0] * d + spec.mass_lower[1]
    if task == "pickup":
        hi = 0.2 * d - 0.66
    elif task == "waypoint":
        hi = spec.mass_upper[0] * d + spec.mass_upper[1]
    else:
        raise ValueError(f"unknown task {task!r}")
    mass = rng.uniform(lo, hi)
    return QuadParams(
        prop_diameter=d, prop_pitch=spec.prop_pitch,
        arm_length=0.025 * d + 0.05, hub_radius=0.10, mass=mass,
    )


def spawn_state(rng: np.random.Generator, distance: float = 1.0,
                center=(0.0, 0.0, 0.0)) -> QuadState:
    """Rest state at an exact distance from center in a uniform-random
    direction, with the training-range random attitude."""
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    roll = rng.uniform(-0.064 * math.pi, 0.064 * math.pi)
    pitch = rng.uniform(-0.064 * math.pi, 0.064 * math.pi)
    yaw = rng.uniform(-0.3 * math.pi, 0.3 * math.pi)
    return QuadState.at_rest(np.asarray(center) + distance * direction, (roll, pitch, yaw))


def clip_waypoint(position: np.ndarray, target: np.ndarray,
                  max_distance: float = 1.0) -> np.ndarray:
    """Pull a target further than max_distance back onto that radius."""
    position = np.asarray(position, dtype=float)
    target = np.asarray(target, dtype=float)
    offset = target - position
    dist = float(np.linalg.norm(offset))
    if dist <= max_distance or dist == 0.0:
        return target.copy()
    return position + offset * (max_distance / dist)


class WaypointEnv:
    """Origin-guidance task: spawn 1 m out, fly to the origin pose.

    Gym-style reset/step with normalized actions in [-1, 1]^4. In 'motor'
    mode actions are per-rotor speed commands; in 'velocity' mode they are
    velocity setpoints tracked by an internal velocity PID (the cascade
    stack). Episodes terminate with the terminal reward when the vehicle
    leaves the boundary cube or destabilizes, and end quietly at the step
    cap.
    """

    def __init__(self, randomization: RandomizationSpec = RandomizationSpec(),
                 disturbances: DisturbanceConfig = DisturbanceConfig(),
                 sim: SimConfig = DEFAULT_SIM,
                 control_hz: int = TRAIN_CONTROL_HZ,
                 max_steps: int = TRAIN_MAX_STEPS,
                 boundary_half_width: float = 1.5,
                 action_mode: str = "motor",
                 velocity_gains=None,
                 velocity_action_scale: float = 1.5,
                 seed: int = 0):
        if action_mode not in ("motor", "velocity"):
            raise ValueError("action_mode must be 'motor' or 'velocity'")
        self.randomization = randomization
        self.disturbances = disturbances
        self.sim = sim
        self.dt = 1.0 / control_hz
        self.max_steps = max_steps
        self.boundary = boundary_half_width
        self.action_mode = action_mode
        self.velocity_action_scale = velocity_action_scale
        if action_mode == "velocity":
            from .control import REFERENCE_VELOCITY_GAINS, VelocityPidController

            gains = velocity_gains if velocity_gains is not None else REFERENCE_VELOCITY_GAINS
            self._velocity_pid = VelocityPidController(gains, sim=sim)
        else:
            self._velocity_pid = None
        self._seed = seed
        self._episode = -1
        self.target_pose = np.zeros(4)
        self.params: QuadParams | None = None
        self.state: QuadState | None = None

    def reset(self, episode: int | None = None) -> np.ndarray:
        """Sample a vehicle and spawn; returns the first observation."""
        self._episode = self._episode + 1 if episode is None else episode
        self.rng = np.random.default_rng(
            np.random.SeedSequence([self._seed, self._episode])
        )
        self.params = self.randomization.sample(self.rng)
        self.state = spawn_state(self.rng)
        self._prev_rpm = np.zeros(4)
        self._steps = 0
        self._done = False
        if self._velocity_pid is not None:
            self._velocity_pid.reset()
        return self._observe()

    def _observe(self) -> np.ndarray:
        return observe(self.state, self.target_pose, self.disturbances, self.rng)

    def position_error(self) -> float:
        return float(np.linalg.norm(self.state.p - self.target_pose[0:3]))

    def _apply_action(self, action: np.ndarray) -> np.ndarray:
        """Translate a normalized action into saturated rotor speeds."""
        action = np.clip(np.asarray(action, dtype=float), -1.0, 1.0)
        if self.action_mode == "motor":
            fractions = (action + 1.0) * 0.5
        else:
            setpoint = action * self.velocity_action_scale
            meas = (*self.state.nu, *self.state.omega,
                    self.state.euler[0], self.state.euler[1])
            from .control import allocate

            delta = self._velocity_pid.step(meas, setpoint, self.dt)
            fractions = allocate(delta)
        rpm = fraction_to_rpm(fractions, self.sim)
        if self.disturbances.motor_filter_enabled:
            rpm = motor_filter(self._prev_rpm, rpm)
        self._prev_rpm = rpm
        return rpm

    def step(self, action: np.ndarray):
        """Advance one control period; returns (obs, reward, done, info)."""
        if self._done:
            raise RuntimeError("step() on a finished episode; call reset()")
        rpm = self._apply_action(action)
        last_finite_error = self.position_error()
        failed = False
        try:
            self.state = integrate_step(self.state, self.params, rpm, self.dt, self.sim)
        except FlightDynamicsError:
            failed = True
        self._steps += 1

        if failed or not self.state.is_valid():
            outcome, terminal = "unstable", True
        elif np.abs(self.state.p - 0.0).max() > self.boundary:
            outcome, terminal = "boundary", True
        else:
            outcome, terminal = "running", False

        if terminal:
            reward = TERMINAL_REWARD
            done = True
        else:
            err = self.state.p - self.target_pose[0:3]
            reward = reward_function(err, self.state.euler[0], self.state.euler[1],
                                     self.state.euler[2] - self.target_pose[3])
            done = self._steps >= self.max_steps
            if done:
                outcome = "success"
        self._done = done
        err = self.position_error()
        info = {
            "terminal": terminal,
            "outcome": outcome,
            # the last finite error stands in when the state blew up
            "position_error": err if math.isfinite(err) else last_finite_error,
        }
        return self._observe(), reward, done, info


@dataclass(frozen=True)
class CourseSpec:
    """Payload pick-up-and-drop course geometry and success rules."""

    pickup_point: tuple[float, float, float] = (-0.8, -0.3, -0.5)
    drop_point: tuple[float, float, float] = (0.8, 0.3, 0.5)
    payload_mass_factor: float = 0.30
    payload_hub_delta: float = 0.10
    waypoint_radius: float = 0.15
    step_limit: int = 500
    spawn_half_width: float = 0.25
    boundary_half_width: float = 1.2
    stability_rms_threshold: float = 0.15
    stability_window_s: float = 1.0


@dataclass
class EpisodeRecord:
    """Time-stamped trajectory of one evaluation episode.

    Rows hold (time, 12-dim state, 4 rotor command fractions, reward,
    vehicle mass at that step). Waypoint arrival times are absolute episode
    times; success means the full course (or survival, for the waypoint
    task) completed.
    """

    params: QuadParams
    seed: int
    dt: float
    task: str
    outcome: str = "running"
    success: bool = False
    waypoint_times: list[float] = field(default_factory=list)
    times: list[float] = field(default_factory=list)
    states: list[np.ndarray] = field(default_factory=list)
    actions: list[np.ndarray] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)
    masses: list[float] = field(default_factory=list)

    def add_row(self, t, state: QuadState, action, reward, mass):
        self.times.append(t)
        self.states.append(state.as_vector())
        self.actions.append(np.asarray(action, dtype=float).copy())
        self.rewards.append(float(reward))
        self.masses.append(float(mass))

    @property
    def n_steps(self) -> int:
        return len(self.times)

    def state_matrix(self) -> np.ndarray:
        return np.asarray(self.states)

    def speeds(self) -> np.ndarray:
        s = self.state_matrix()
        return np.linalg.norm(s[:, 0:3], axis=1)

    def positions(self) -> np.ndarray:
        return self.state_matrix()[:, 6:9]


def fmt(value) -> str:
    """Shortest-round-trip decimal form of a scalar (stable across runs)."""
    return repr(float(value))


STEP_CSV_FIELDS = (
    ["time"]
    + [f"nu_{a}" for a in "xyz"]
    + [f"omega_{a}" for a in "xyz"]
    + [f"p_{a}" for a in "xyz"]
    + ["roll", "pitch", "yaw"]
    + [f"cmd_{i}" for i in range(4)]
    + ["reward", "mass"]
)

SUMMARY_CSV_FIELDS = [
    "episode", "seed", "task", "outcome", "success", "steps", "dt",
    "prop_diameter", "prop_pitch", "arm_length", "hub_radius", "mass",
    "waypoint_times",
]


def write_record_csv(record: EpisodeRecord, path) -> None:
    """One row per step, schema per STEP_CSV_FIELDS."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(STEP_CSV_FIELDS)
        for i in range(record.n_steps):
            row = (
                [fmt(record.times[i])]
                + [fmt(v) for v in record.states[i]]
                + [fmt(v) for v in record.actions[i]]
                + [fmt(record.rewards[i]), fmt(record.masses[i])]
            )
            writer.writerow(row)


def summary_row(record: EpisodeRecord, episode: int) -> list:
    p = record.params
    return [
        episode, record.seed, record.task, record.outcome, int(record.success),
        record.n_steps, fmt(record.dt),
        fmt(p.prop_diameter), fmt(p.prop_pitch), fmt(p.arm_length),
        fmt(p.hub_radius), fmt(p.mass),
        ";".join(fmt(t) for t in record.waypoint_times),
    ]


def _controller_measurements(obs: np.ndarray, effective_target: np.ndarray):
    """Reconstruct absolute pose and rates from an error observation."""
    pose = (
        effective_target[0] + obs[0], effective_target[1] + obs[1],
        effective_target[2] + obs[2], effective_target[3] + obs[3],
        obs[4], obs[5],
    )
    rates = obs[6:12]
    return pose, rates


def run_waypoint_episode(controller, params: QuadParams,
                         disturbances: DisturbanceConfig = DisturbanceConfig(),
                         sim: SimConfig = DEFAULT_SIM,
                         control_hz: int = TEST_CONTROL_HZ,
                         duration_s: float = 12.5,
                         boundary_half_width: float = 1.5,
                         seed: int = 0) -> EpisodeRecord:
    """Run one seeded waypoint-guidance test; success = staying in bounds."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xE7A1]))
    state = spawn_state(rng)
    dt = 1.0 / control_hz
    record = EpisodeRecord(params=params, seed=seed, dt=dt, task="waypoint")
    target = np.zeros(4)
    controller.reset()
    start_pose = np.array([*state.p, state.euler[2]])
    controller.begin_leg(start_pose, target)
    prev_rpm = np.zeros(4)
    n = int(round(duration_s * control_hz))
    for k in range(n):
        t = k * dt
        eff_target = target
        if controller.wants_waypoint_clipping:
            eff = clip_waypoint(state.p, target[0:3])
            eff_target = np.array([*eff, target[3]])
        obs = observe(state, eff_target, disturbances, rng)
        fractions = controller.act(t, obs, eff_target, dt)
        rpm = fraction_to_rpm(fractions, sim)
        if disturbances.motor_filter_enabled:
            rpm = motor_filter(prev_rpm, rpm)
        prev_rpm = rpm
        try:
            state = integrate_step(state, params, rpm, dt, sim)
        except FlightDynamicsError:
            record.outcome = "unstable"
            return record
        err = state.p - target[0:3]
        reward = reward_function(err, state.euler[0], state.euler[1],
                                 state.euler[2] - target[3])
        record.add_row(t + dt, state, fractions, reward, params.mass)
        if not state.is_valid():
            record.outcome = "unstable"
            return record
        if np.abs(state.p).max() > boundary_half_width:
            record.outcome = "boundary"
            return record
    record.outcome = "success"
    record.success = True
    return record


def _stability_ok(att_window: list[np.ndarray], rate_window: list[np.ndarray],
                  needed: int, threshold: float) -> bool:
    """Trailing-window RMS of angular positions and rates, both below
    threshold; requires a full window."""
    if len(att_window) < needed:
        return False
    att = np.asarray(att_window[-needed:])
    rate = np.asarray(rate_window[-needed:])
    rms_att = math.sqrt(float(np.mean(att * att)))
    rms_rate = math.sqrt(float(np.mean(rate * rate)))
    return rms_att < threshold and rms_rate < threshold


def run_payload_course(controller, params: QuadParams,
                       spec: CourseSpec = CourseSpec(),
                       disturbances: DisturbanceConfig = DisturbanceConfig(),
                       sim: SimConfig = DEFAULT_SIM,
                       control_hz: int = TEST_CONTROL_HZ,
                       seed: int = 0) -> EpisodeRecord:
    """Pickup -> drop -> return course with the mid-flight payload change.

    A waypoint counts as reached when the vehicle is inside the arrival
    radius and its trailing-window attitude/rate RMS is below the
    stability threshold. The payload multiplies mass and widens the hub at
    pickup and both revert exactly at the drop.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC0A5]))
    dt = 1.0 / control_hz
    record = EpisodeRecord(params=params, seed=seed, dt=dt, task="pickup")
    base_params = params
    pickup = np.asarray(spec.pickup_point)
    drop = np.asarray(spec.drop_point)
    legs = [pickup, drop, pickup]

    spawn_offset = rng.uniform(-spec.spawn_half_width, spec.spawn_half_width, size=3)
    roll = rng.uniform(-0.064 * math.pi, 0.064 * math.pi)
    pitch = rng.uniform(-0.064 * math.pi, 0.064 * math.pi)
    yaw = rng.uniform(-0.3 * math.pi, 0.3 * math.pi)
    state = QuadState.at_rest(pickup + spawn_offset, (roll, pitch, yaw))

    window = max(1, int(round(spec.stability_window_s * control_hz)))
    controller.reset()
    current = params
    prev_rpm = np.zeros(4)
    t = 0.0

    for leg_idx, wp in enumerate(legs):
        target = np.array([wp[0], wp[1], wp[2], 0.0])
        controller.begin_leg(np.array([*state.p, state.euler[2]]), target)
        att_window: list[np.ndarray] = []
        rate_window: list[np.ndarray] = []
        reached = False
        for _ in range(spec.step_limit):
            if getattr(controller, "teleports", False):
                state = controller.teleport(state, target)
                record.add_row(t + dt, state, np.zeros(4), 0.0, current.mass)
                t += dt
            else:
                eff_target = target
                if controller.wants_waypoint_clipping:
                    eff = clip_waypoint(state.p, target[0:3])
                    eff_target = np.array([*eff, target[3]])
                obs = observe(state, eff_target, disturbances, rng)
                fractions = controller.act(t, obs, eff_target, dt)
                if not np.isfinite(np.asarray(fractions, dtype=float)).all():
                    record.outcome = "unstable"
                    return record
                rpm = fraction_to_rpm(fractions, sim)
                if disturbances.motor_filter_enabled:
                    rpm = motor_filter(prev_rpm, rpm)
                prev_rpm = rpm
                try:
                    state = integrate_step(state, current, rpm, dt, sim)
                except FlightDynamicsError:
                    record.outcome = "unstable"
                    return record
                t += dt
                err = state.p - target[0:3]
                reward = reward_function(err, state.euler[0], state.euler[1],
                                         state.euler[2] - target[3])
                record.add_row(t, state, fractions, reward, current.mass)
                if not state.is_valid():
                    record.outcome = "unstable"
                    return record
                if np.abs(state.p).max() > spec.boundary_half_width:
                    record.outcome = "boundary"
                    return record

            att_window.append(np.array([state.euler[0], state.euler[1],
                                         state.euler[2] - target[3]]))
            rate_window.append(state.omega.copy())
            dist = float(np.linalg.norm(state.p - wp))
            if dist <= spec.waypoint_radius and _stability_ok(
                att_window, rate_window, window, spec.stability_rms_threshold
            ):
                reached = True
                break
        if not reached:
            record.outcome = "timeout"
            return record
        record.waypoint_times.append(t)
        if leg_idx == 0:
            current = base_params.with_payload(spec.payload_mass_factor,
                                               spec.payload_hub_delta)
        elif leg_idx == 1:
            current = base_params

    record.outcome = "success"
    record.success = True
    return record
