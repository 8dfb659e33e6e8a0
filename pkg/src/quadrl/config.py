"""Human-readable (YAML) configuration for vehicles, simulation constants,
disturbances, randomization, command scaling, and PID gain sets.

Schema (all sections optional, defaults fill the gaps):

    vehicle:
      prop_diameter_in: 10.0
      prop_pitch_in: 3.1257      # defaults to the solved nominal pitch
      arm_length_m: 0.30
      hub_radius_m: 0.10
      mass_kg: 1.2
    sim:
      substeps: 50
      omega_max_rpm: 19735.8
      hub_mass_fraction: 0.6
      rotor_mass_fraction: 0.1
      yaw_torque_coeff: 0.016
    disturbances:
      sensor_noise_std: 0.05
      motor_filter: true
    randomization:
      enabled: true
    scaling:
      throttle: 0.05
      rollpitch: 0.010
      yaw: 0.006
      attitude_limit: 0.3

Gain files:

    stack: pose | velocity
    gains: {kp_xy: ..., ki_xy: ..., kd_xy: ..., kp_z: ..., ...}
    trajectory: {te: 10.0, rt: 0.335}   # pose stack only
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import yaml

from .control import CommandScaling, PIDGainSet
from .dynamics import (
    DEFAULT_PROP_PITCH,
    DisturbanceConfig,
    QuadParams,
    SimConfig,
    nominal_params,
)
from .envs import RandomizationSpec

GAIN_KEYS = (
    "kp_xy", "ki_xy", "kd_xy", "kp_z", "ki_z", "kd_z",
    "kp_rp", "ki_rp", "kd_rp", "kp_yaw", "ki_yaw", "kd_yaw",
)


@dataclass(frozen=True)
class RunConfig:
    """Resolved configuration shared by the CLI workflows."""

    vehicle: QuadParams
    sim: SimConfig
    disturbances: DisturbanceConfig
    randomization: RandomizationSpec
    scaling: CommandScaling

    def to_dict(self) -> dict:
        v = self.vehicle
        return {
            "vehicle": {
                "prop_diameter_in": v.prop_diameter,
                "prop_pitch_in": v.prop_pitch,
                "arm_length_m": v.arm_length,
                "hub_radius_m": v.hub_radius,
                "mass_kg": v.mass,
            },
            "sim": {
                "substeps": self.sim.substeps,
                "omega_max_rpm": self.sim.omega_max_rpm,
                "hub_mass_fraction": self.sim.hub_mass_fraction,
                "rotor_mass_fraction": self.sim.rotor_mass_fraction,
                "yaw_torque_coeff": self.sim.yaw_torque_coeff,
            },
            "disturbances": {
                "sensor_noise_std": self.disturbances.sensor_noise_std,
                "motor_filter": self.disturbances.motor_filter_enabled,
            },
            "randomization": {"enabled": self.randomization.enabled},
            "scaling": {
                "throttle": self.scaling.throttle,
                "rollpitch": self.scaling.rollpitch,
                "yaw": self.scaling.yaw,
                "attitude_limit": self.scaling.attitude_limit,
            },
        }


def default_run_config() -> RunConfig:
    return RunConfig(
        vehicle=nominal_params(),
        sim=SimConfig(),
        disturbances=DisturbanceConfig(),
        randomization=RandomizationSpec(),
        scaling=CommandScaling(),
    )


def _vehicle_from_dict(d: dict) -> QuadParams:
    base = nominal_params()
    return QuadParams(
        prop_diameter=float(d.get("prop_diameter_in", base.prop_diameter)),
        prop_pitch=float(d.get("prop_pitch_in", DEFAULT_PROP_PITCH)),
        arm_length=float(d.get("arm_length_m", base.arm_length)),
        hub_radius=float(d.get("hub_radius_m", base.hub_radius)),
        mass=float(d.get("mass_kg", base.mass)),
    )


def run_config_from_dict(data: dict) -> RunConfig:
    base = default_run_config()
    vehicle = _vehicle_from_dict(data.get("vehicle", {}) or {})
    sim_d = data.get("sim", {}) or {}
    sim = SimConfig(
        hub_mass_fraction=float(sim_d.get("hub_mass_fraction", base.sim.hub_mass_fraction)),
        rotor_mass_fraction=float(sim_d.get("rotor_mass_fraction", base.sim.rotor_mass_fraction)),
        yaw_torque_coeff=float(sim_d.get("yaw_torque_coeff", base.sim.yaw_torque_coeff)),
        omega_max_rpm=float(sim_d.get("omega_max_rpm", base.sim.omega_max_rpm)),
        substeps=int(sim_d.get("substeps", base.sim.substeps)),
    )
    dist_d = data.get("disturbances", {}) or {}
    disturbances = DisturbanceConfig(
        sensor_noise_std=float(dist_d.get("sensor_noise_std", 0.0)),
        motor_filter_enabled=bool(dist_d.get("motor_filter", False)),
    )
    rand_d = data.get("randomization", {}) or {}
    randomization = RandomizationSpec(enabled=bool(rand_d.get("enabled", True)))
    sc_d = data.get("scaling", {}) or {}
    base_sc = base.scaling
    scaling = CommandScaling(
        throttle=float(sc_d.get("throttle", base_sc.throttle)),
        rollpitch=float(sc_d.get("rollpitch", base_sc.rollpitch)),
        yaw=float(sc_d.get("yaw", base_sc.yaw)),
        attitude_limit=float(sc_d.get("attitude_limit", base_sc.attitude_limit)),
    )
    return RunConfig(vehicle=vehicle, sim=sim, disturbances=disturbances,
                     randomization=randomization, scaling=scaling)


def load_run_config(path) -> RunConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ValueError(f"config root must be a mapping: {path}")
    return run_config_from_dict(data)


def save_run_config(config: RunConfig, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(config.to_dict(), fh, sort_keys=True)


def save_gains(gains: PIDGainSet, path, stack: str = "pose") -> None:
    data = {
        "stack": stack,
        "gains": {k: float(getattr(gains, k)) for k in GAIN_KEYS},
    }
    if stack == "pose":
        data["trajectory"] = {"te": float(gains.traj_te), "rt": float(gains.traj_rt)}
    with open(path, "w") as fh:
        yaml.safe_dump(data, fh, sort_keys=True)


def load_gains(path) -> PIDGainSet:
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict) or "gains" not in data:
        raise ValueError(f"not a gain file: {path}")
    gains = PIDGainSet(**{k: float(v) for k, v in data["gains"].items()})
    traj = data.get("trajectory")
    if traj:
        gains = replace(gains, traj_te=float(traj["te"]), traj_rt=float(traj["rt"]))
    return gains
