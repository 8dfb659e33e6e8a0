"""Deterministic 6-DoF plus-frame quadrotor simulation.

Thrust model, rigid-body equations of motion in the NEU frame, fixed-step
RK4 integration, sensor observation with optional Gaussian noise, and the
test-time motor command filter.

State layout used throughout (12-vector):
    [0:3]  nu     body-frame linear velocity (m/s)
    [3:6]  omega  body-frame angular velocity (rad/s)
    [6:9]  p      inertial position (m), Z up
    [9:12] euler  attitude (roll, pitch, yaw) in rad, ZYX convention
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

GRAVITY = 9.81

# Static thrust of a dual-blade propeller, N per RPM^2 * in^3.5 * in^0.5:
# T = THRUST_COEFF * rpm^2 * diameter^3.5 * sqrt(pitch)
THRUST_COEFF = 4.392e-8 * 4.23e-4

# Nominal (fixed-configuration) vehicle.
NOMINAL_PROP_DIAMETER = 10.0  # in
NOMINAL_HUB_RADIUS = 0.10     # m
NOMINAL_ARM_LENGTH = 0.30     # m
NOMINAL_MASS = 1.2            # kg
NOMINAL_HOVER_RPM = 5323.0


class FlightDynamicsError(Exception):
    """Base class for simulation failures."""


class GimbalLockError(FlightDynamicsError):
    """Attitude representation singular: |pitch| reached pi/2."""


class DivergenceError(FlightDynamicsError):
    """Integration produced a non-finite state."""


def solve_prop_pitch(mass: float, diameter: float, hover_rpm: float) -> float:
    """Propeller pitch (in) that puts the vehicle's hover point at hover_rpm.

    Inverts the static thrust model for the pitch that balances weight with
    four rotors at the given speed.
    """
    per_rotor = mass * GRAVITY / 4.0
    root = per_rotor / (THRUST_COEFF * hover_rpm**2 * diameter**3.5)
    return root * root


# Pitch is never varied: it is fixed so that the nominal vehicle hovers at
# its known operating point, and shared by every randomized vehicle.
DEFAULT_PROP_PITCH = solve_prop_pitch(
    NOMINAL_MASS, NOMINAL_PROP_DIAMETER, NOMINAL_HOVER_RPM
)


@dataclass(frozen=True)
class QuadParams:
    """Physical vehicle description (lengths in m, prop dimensions in in)."""

    prop_diameter: float
    prop_pitch: float
    arm_length: float
    hub_radius: float
    mass: float

    def __post_init__(self):
        for name in ("prop_diameter", "prop_pitch", "arm_length", "hub_radius", "mass"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be strictly positive")
        if self.arm_length < self.hub_radius:
            raise ValueError("arm_length must be >= hub_radius")

    def with_payload(self, mass_factor: float, hub_delta: float) -> "QuadParams":
        """New params with the payload attached (relative mass, extra hub radius)."""
        return replace(
            self,
            mass=self.mass * (1.0 + mass_factor),
            hub_radius=self.hub_radius + hub_delta,
        )


def nominal_params() -> QuadParams:
    """The fixed vehicle used when randomization is disabled."""
    return QuadParams(
        prop_diameter=NOMINAL_PROP_DIAMETER,
        prop_pitch=DEFAULT_PROP_PITCH,
        arm_length=NOMINAL_ARM_LENGTH,
        hub_radius=NOMINAL_HUB_RADIUS,
        mass=NOMINAL_MASS,
    )


def rotor_thrust(params: QuadParams, rpm: float) -> float:
    """Static thrust (N) of one rotor at the given speed (RPM >= 0)."""
    return (
        THRUST_COEFF
        * rpm
        * rpm
        * params.prop_diameter**3.5
        * math.sqrt(params.prop_pitch)
    )


def hover_rpm(params: QuadParams) -> float:
    """Rotor speed at which total thrust equals weight."""
    per_rotor = params.mass * GRAVITY / 4.0
    k = THRUST_COEFF * params.prop_diameter**3.5 * math.sqrt(params.prop_pitch)
    return math.sqrt(per_rotor / k)


def _worst_case_omega_max() -> float:
    """Double the hover speed of the most heavily loaded admissible vehicle.

    The training distribution bounds mass by 0.265*d - 0.9 (kg) for prop
    diameters d in [6, 12] in; the vehicle needing the highest hover speed
    sets the saturation limit so every admissible vehicle keeps a thrust to
    weight ratio of at least 4.
    """
    worst = 0.0
    d = 6.0
    while d <= 12.0 + 1e-9:
        p = QuadParams(d, DEFAULT_PROP_PITCH, 0.025 * d + 0.05, 0.05, 0.265 * d - 0.9)
        worst = max(worst, hover_rpm(p))
        d += 0.05
    return 2.0 * worst


DEFAULT_OMEGA_MAX_RPM = _worst_case_omega_max()


@dataclass(frozen=True)
class SimConfig:
    """Simulator-level constants shared by every vehicle."""

    hub_mass_fraction: float = 0.6    # remaining mass split equally over rotors
    rotor_mass_fraction: float = 0.1  # per rotor
    yaw_torque_coeff: float = 0.016   # m, reaction torque = coeff * thrust
    omega_max_rpm: float = DEFAULT_OMEGA_MAX_RPM
    substeps: int = 50                # RK4 sub-steps per control period, <= 500

    def __post_init__(self):
        if not 0 < self.substeps <= 500:
            raise ValueError("substeps must be in 1..500")


DEFAULT_SIM = SimConfig()


@dataclass(frozen=True)
class DisturbanceConfig:
    """Test-time disturbances applied outside the rigid-body model."""

    sensor_noise_std: float = 0.0
    motor_filter_enabled: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.sensor_noise_std < 0.0:
            raise ValueError("sensor_noise_std must be >= 0")


@dataclass
class QuadState:
    """Rigid-body state: body velocities, inertial pose."""

    nu: np.ndarray      # body linear velocity, m/s
    omega: np.ndarray   # body angular velocity, rad/s
    p: np.ndarray       # inertial position, m (Z up)
    euler: np.ndarray   # roll, pitch, yaw, rad

    @classmethod
    def at_rest(cls, position, euler=(0.0, 0.0, 0.0)) -> "QuadState":
        return cls(
            nu=np.zeros(3),
            omega=np.zeros(3),
            p=np.asarray(position, dtype=float).copy(),
            euler=np.asarray(euler, dtype=float).copy(),
        )

    @classmethod
    def from_vector(cls, y: np.ndarray) -> "QuadState":
        y = np.asarray(y, dtype=float)
        return cls(nu=y[0:3].copy(), omega=y[3:6].copy(), p=y[6:9].copy(), euler=y[9:12].copy())

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.nu, self.omega, self.p, self.euler])

    def is_valid(self) -> bool:
        """Finite entries and roll/pitch inside the gimbal-lock envelope."""
        if not np.isfinite(self.nu).all() or not np.isfinite(self.omega).all():
            return False
        if not np.isfinite(self.p).all() or not np.isfinite(self.euler).all():
            return False
        return abs(self.euler[0]) < math.pi / 2 and abs(self.euler[1]) < math.pi / 2

    def speed(self) -> float:
        return float(np.linalg.norm(self.nu))

    def copy(self) -> "QuadState":
        return QuadState(self.nu.copy(), self.omega.copy(), self.p.copy(), self.euler.copy())


def rotation_body_to_inertial(euler: np.ndarray) -> np.ndarray:
    """ZYX rotation matrix taking body-frame vectors into the inertial frame."""
    sr, cr = math.sin(euler[0]), math.cos(euler[0])
    sp, cp = math.sin(euler[1]), math.cos(euler[1])
    sy, cy = math.sin(euler[2]), math.cos(euler[2])
    return np.array(
        [
            [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
            [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
            [-sp, cp * sr, cp * cr],
        ]
    )


def inertia_matrix(params: QuadParams, sim: SimConfig = DEFAULT_SIM) -> np.ndarray:
    """Diagonal inertia of the sphere-hub, point-mass-rotor model (kg m^2)."""
    m_hub = sim.hub_mass_fraction * params.mass
    m_rotor = sim.rotor_mass_fraction * params.mass
    hub = 0.4 * m_hub * params.hub_radius**2
    arm = params.arm_length**2 * m_rotor
    return np.diag([hub + 2 * arm, hub + 2 * arm, hub + 4 * arm])


@lru_cache(maxsize=512)
def _vehicle_constants(params: QuadParams, sim: SimConfig):
    inertia = inertia_matrix(params, sim)
    k_thrust = THRUST_COEFF * params.prop_diameter**3.5 * math.sqrt(params.prop_pitch)
    return (
        params.mass,
        params.arm_length,
        k_thrust,
        sim.yaw_torque_coeff,
        float(inertia[0, 0]),
        float(inertia[1, 1]),
        float(inertia[2, 2]),
    )


def _derivative(y, rpm, consts):
    """Time derivative of the 12-dim state under the given rotor speeds.

    Plus-frame rotor layout (matching the control allocation matrix):
    rotor 0 on +Y, rotor 1 on -X, rotor 2 on -Y, rotor 3 on +X; reaction
    torque signs alternate (+, -, +, -).
    """
    m, arm, kt, kq, ixx, iyy, izz = consts
    nvx, nvy, nvz = y[0], y[1], y[2]
    wx, wy, wz = y[3], y[4], y[5]
    roll, pitch, yaw = y[9], y[10], y[11]

    t0 = kt * rpm[0] * rpm[0]
    t1 = kt * rpm[1] * rpm[1]
    t2 = kt * rpm[2] * rpm[2]
    t3 = kt * rpm[3] * rpm[3]
    f_total = t0 + t1 + t2 + t3
    mx = arm * (t0 - t2)
    my = arm * (t1 - t3)
    mz = kq * (t0 - t1 + t2 - t3)

    sr, cr = math.sin(roll), math.cos(roll)
    sp, cp = math.sin(pitch), math.cos(pitch)
    sy, cy = math.sin(yaw), math.cos(yaw)
    if abs(cp) < 1e-9:
        raise GimbalLockError(f"pitch at {pitch:.6f} rad")

    # nu_dot = -omega x nu + R^T g + F/m  (gravity is -Z inertial)
    g = GRAVITY
    nu_dot_x = -(wy * nvz - wz * nvy) + g * sp
    nu_dot_y = -(wz * nvx - wx * nvz) - g * cp * sr
    nu_dot_z = -(wx * nvy - wy * nvx) - g * cp * cr + f_total / m

    # omega_dot = I^-1 (M - omega x I omega), diagonal inertia
    om_dot_x = (mx - (wy * izz * wz - wz * iyy * wy)) / ixx
    om_dot_y = (my - (wz * ixx * wx - wx * izz * wz)) / iyy
    om_dot_z = (mz - (wx * iyy * wy - wy * ixx * wx)) / izz

    # p_dot = R nu
    r00 = cy * cp
    r01 = cy * sp * sr - sy * cr
    r02 = cy * sp * cr + sy * sr
    r10 = sy * cp
    r11 = sy * sp * sr + cy * cr
    r12 = sy * sp * cr - cy * sr
    r20 = -sp
    r21 = cp * sr
    r22 = cp * cr
    p_dot_x = r00 * nvx + r01 * nvy + r02 * nvz
    p_dot_y = r10 * nvx + r11 * nvy + r12 * nvz
    p_dot_z = r20 * nvx + r21 * nvy + r22 * nvz

    # euler_dot = S omega (representation Jacobian, singular at |pitch| = pi/2)
    tp = sp / cp
    e_dot_roll = wx + sr * tp * wy + cr * tp * wz
    e_dot_pitch = cr * wy - sr * wz
    e_dot_yaw = (sr * wy + cr * wz) / cp

    return np.array(
        [
            nu_dot_x, nu_dot_y, nu_dot_z,
            om_dot_x, om_dot_y, om_dot_z,
            p_dot_x, p_dot_y, p_dot_z,
            e_dot_roll, e_dot_pitch, e_dot_yaw,
        ]
    )


def state_derivative(
    state: QuadState,
    params: QuadParams,
    rpm: np.ndarray,
    sim: SimConfig = DEFAULT_SIM,
) -> np.ndarray:
    """d/dt of the state vector [nu, omega, p, euler] at the given speeds."""
    return _derivative(state.as_vector(), np.asarray(rpm, dtype=float), _vehicle_constants(params, sim))


def integrate_step(
    state: QuadState,
    params: QuadParams,
    rpm: np.ndarray,
    dt: float,
    sim: SimConfig = DEFAULT_SIM,
    substeps: int | None = None,
) -> QuadState:
    """Advance the state by dt with fixed-step RK4 sub-stepping.

    Rotor speeds are held constant over the step and must already be
    saturated to [0, omega_max]. Raises GimbalLockError at the attitude
    singularity and DivergenceError on non-finite output.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    n = sim.substeps if substeps is None else substeps
    if not 0 < n <= 500:
        raise ValueError("substeps must be in 1..500")
    rpm = np.asarray(rpm, dtype=float)
    consts = _vehicle_constants(params, sim)
    h = dt / n
    y = state.as_vector()
    for _ in range(n):
        k1 = _derivative(y, rpm, consts)
        k2 = _derivative(y + 0.5 * h * k1, rpm, consts)
        k3 = _derivative(y + 0.5 * h * k2, rpm, consts)
        k4 = _derivative(y + h * k3, rpm, consts)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.isfinite(y).all():
        raise DivergenceError("non-finite state after integration")
    return QuadState.from_vector(y)


def clamp_speeds(rpm: np.ndarray, sim: SimConfig = DEFAULT_SIM) -> np.ndarray:
    """Saturate rotor speeds to [0, omega_max]; idempotent."""
    return np.clip(np.asarray(rpm, dtype=float), 0.0, sim.omega_max_rpm)


def fraction_to_rpm(fraction: np.ndarray, sim: SimConfig = DEFAULT_SIM) -> np.ndarray:
    """Map per-rotor command fractions [0, 1] to saturated speeds (RPM)."""
    return np.clip(np.asarray(fraction, dtype=float), 0.0, 1.0) * sim.omega_max_rpm


def action_to_rpm(action: np.ndarray, sim: SimConfig = DEFAULT_SIM) -> np.ndarray:
    """Affine map of normalized actions [-1, 1] onto [0, omega_max] RPM."""
    a = np.clip(np.asarray(action, dtype=float), -1.0, 1.0)
    return (a + 1.0) * 0.5 * sim.omega_max_rpm


def motor_filter(prev_rpm: np.ndarray, new_rpm: np.ndarray) -> np.ndarray:
    """One step of the motor-delay low-pass: mean of new and previous command."""
    return 0.5 * np.asarray(new_rpm, dtype=float) + 0.5 * np.asarray(prev_rpm, dtype=float)


def wrap_angle(angle: float) -> float:
    """Wrap to (-pi, pi]."""
    return math.pi - (math.pi - angle) % (2.0 * math.pi)


def observe(
    state: QuadState,
    target_pose: np.ndarray,
    cfg: DisturbanceConfig | None = None,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Sensor view of the state relative to a pose setpoint (x, y, z, yaw).

    Channels: position error (3), yaw error, roll, pitch, body linear
    velocity (3), body angular rates (3). Adds i.i.d. Gaussian noise per
    channel when a noise level is configured.
    """
    target_pose = np.asarray(target_pose, dtype=float)
    obs = np.empty(12)
    obs[0:3] = state.p - target_pose[0:3]
    obs[3] = wrap_angle(state.euler[2] - target_pose[3])
    obs[4] = state.euler[0]
    obs[5] = state.euler[1]
    obs[6:9] = state.nu
    obs[9:12] = state.omega
    if cfg is not None and cfg.sensor_noise_std > 0.0:
        if rng is None:
            raise ValueError("rng required when sensor noise is enabled")
        obs = obs + rng.normal(0.0, cfg.sensor_noise_std, size=12)
    return obs
