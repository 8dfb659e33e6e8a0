"""CMA-ES search over PID gain sets with the waypoint and velocity-pulse
fitness functions.

The search operates on unbounded vectors mapped into box bounds by a
sinusoidal transform; fitness evaluations run against a frozen batch of
randomized evaluation environments so repeated evaluation of a candidate is
bit-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SearchSpec:
    """Box-bounded search problem description."""

    lower: np.ndarray
    upper: np.ndarray
    sigma0: float = 2.0
    iterations: int = 1000
    x0: np.ndarray | None = None

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lower/upper must be 1-D and the same shape")
        if not (lo < hi).all():
            raise ValueError("need lower < upper per dimension")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]


def constrain(raw: np.ndarray, spec: SearchSpec) -> np.ndarray:
    """Sinusoidal box map: each coordinate lands in [lower, upper]."""
    raw = np.asarray(raw, dtype=float)
    return spec.lower + (spec.upper - spec.lower) * (np.sin(raw) + 1.0) / 2.0


def constrain_inverse(bounded: np.ndarray, spec: SearchSpec) -> np.ndarray:
    """A raw preimage of a bounded vector (principal arcsine branch)."""
    bounded = np.asarray(bounded, dtype=float)
    frac = 2.0 * (bounded - spec.lower) / (spec.upper - spec.lower) - 1.0
    return np.arcsin(np.clip(frac, -1.0, 1.0))


class CmaEs:
    """(mu/mu_w, lambda) covariance matrix adaptation evolution strategy.

    Standard rank-based selection with rank-one plus rank-mu covariance
    updates and cumulative step-size control. Deterministic for a fixed
    seed. Non-finite fitness values are treated as worst-in-population;
    a generation with no fitness spread performs no update.
    """

    def __init__(self, x0: np.ndarray, sigma0: float, seed: int = 0,
                 population: int | None = None):
        self.mean = np.asarray(x0, dtype=float).copy()
        self.sigma = float(sigma0)
        n = self.mean.shape[0]
        self.n = n
        self.lam = population if population is not None else 4 + int(3 * math.log(n))
        self.mu = self.lam // 2
        w = math.log(self.mu + 0.5) - np.log(np.arange(1, self.mu + 1))
        self.weights = w / w.sum()
        self.mu_eff = 1.0 / np.sum(self.weights**2)

        self.c_sigma = (self.mu_eff + 2.0) / (n + self.mu_eff + 5.0)
        self.d_sigma = (
            1.0
            + 2.0 * max(0.0, math.sqrt((self.mu_eff - 1.0) / (n + 1.0)) - 1.0)
            + self.c_sigma
        )
        self.c_c = (4.0 + self.mu_eff / n) / (n + 4.0 + 2.0 * self.mu_eff / n)
        self.c_1 = 2.0 / ((n + 1.3) ** 2 + self.mu_eff)
        self.c_mu = min(
            1.0 - self.c_1,
            2.0 * (self.mu_eff - 2.0 + 1.0 / self.mu_eff) / ((n + 2.0) ** 2 + self.mu_eff),
        )
        self.chi_n = math.sqrt(n) * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n))

        self.p_sigma = np.zeros(n)
        self.p_c = np.zeros(n)
        self.cov = np.eye(n)
        self._decompose()
        self.generation = 0
        self.rng = np.random.default_rng(seed)
        self._pending: np.ndarray | None = None
        self.best_x: np.ndarray | None = None
        self.best_fitness = math.inf

    def _decompose(self):
        self.cov = (self.cov + self.cov.T) / 2.0
        eigvals, eigvecs = np.linalg.eigh(self.cov)
        eigvals = np.maximum(eigvals, 1e-20)
        self._b = eigvecs
        self._d = np.sqrt(eigvals)

    def ask(self) -> np.ndarray:
        """Sample a (lambda, n) population of candidate vectors."""
        z = self.rng.standard_normal((self.lam, self.n))
        y = (z * self._d) @ self._b.T
        self._pending = y
        return self.mean + self.sigma * y

    def tell(self, fitnesses) -> None:
        """Update state from the fitnesses of the last ask() population."""
        if self._pending is None:
            raise RuntimeError("tell() without a preceding ask()")
        f = np.asarray(fitnesses, dtype=float).copy()
        if f.shape != (self.lam,):
            raise ValueError(f"expected {self.lam} fitness values")
        y = self._pending
        self._pending = None
        self.generation += 1

        f[~np.isfinite(f)] = math.inf
        order = np.argsort(f, kind="stable")
        if math.isfinite(f[order[0]]) and f[order[0]] < self.best_fitness:
            self.best_fitness = float(f[order[0]])
            self.best_x = self.mean + self.sigma * y[order[0]]
        if f[order[0]] == f[order[-1]]:
            # no selection gradient: leave the distribution untouched
            return

        sel = y[order[: self.mu]]
        y_w = self.weights @ sel
        self.mean = self.mean + self.sigma * y_w

        # whitened evolution path for step-size control
        c_inv_half_yw = self._b @ ((self._b.T @ y_w) / self._d)
        self.p_sigma = (1.0 - self.c_sigma) * self.p_sigma + math.sqrt(
            self.c_sigma * (2.0 - self.c_sigma) * self.mu_eff
        ) * c_inv_half_yw

        h_sigma = float(
            np.linalg.norm(self.p_sigma)
            / math.sqrt(1.0 - (1.0 - self.c_sigma) ** (2.0 * self.generation))
            < (1.4 + 2.0 / (self.n + 1.0)) * self.chi_n
        )
        self.p_c = (1.0 - self.c_c) * self.p_c + h_sigma * math.sqrt(
            self.c_c * (2.0 - self.c_c) * self.mu_eff
        ) * y_w

        rank_one = np.outer(self.p_c, self.p_c)
        rank_mu = (sel * self.weights[:, None]).T @ sel
        delta_h = (1.0 - h_sigma) * self.c_c * (2.0 - self.c_c)
        self.cov = (
            (1.0 - self.c_1 - self.c_mu) * self.cov
            + self.c_1 * (rank_one + delta_h * self.cov)
            + self.c_mu * rank_mu
        )
        self.sigma *= math.exp(
            (self.c_sigma / self.d_sigma)
            * (np.linalg.norm(self.p_sigma) / self.chi_n - 1.0)
        )
        self._decompose()


def soft_clip(e: float, knee: float = 200.0) -> float:
    """Identity below the knee, knee + sqrt(excess) above; continuous."""
    if e <= knee:
        return e
    return knee + math.sqrt(e - knee)


def expand_gains(reduced: np.ndarray) -> dict[str, tuple[float, float, float]]:
    """Expand the reduced 12-vector (plus optional trajectory pair) to the
    full per-loop (kp, ki, kd) table, duplicating shared axes."""
    v = np.asarray(reduced, dtype=float)
    if v.shape[0] not in (12, 14):
        raise ValueError("expected 12 or 14 entries")
    table = {
        "x": (v[0], v[2], v[4]),
        "y": (v[0], v[2], v[4]),
        "z": (v[1], v[3], v[5]),
        "roll": (v[6], v[8], v[10]),
        "pitch": (v[6], v[8], v[10]),
        "yaw": (v[7], v[9], v[11]),
    }
    if v.shape[0] == 14:
        table["trajectory"] = (v[12], v[13], 0.0)
    return table


def collapse_gains(table: dict[str, tuple[float, float, float]]) -> np.ndarray:
    """Inverse of expand_gains (shared axes must agree)."""
    for a, b in (("x", "y"), ("roll", "pitch")):
        if not np.allclose(table[a], table[b]):
            raise ValueError(f"{a} and {b} gains must match")
    v = [
        table["x"][0], table["z"][0], table["x"][1], table["z"][1], table["x"][2], table["z"][2],
        table["roll"][0], table["yaw"][0], table["roll"][1], table["yaw"][1], table["roll"][2], table["yaw"][2],
    ]
    if "trajectory" in table:
        v += [table["trajectory"][0], table["trajectory"][1]]
    return np.array(v)


# Search-space bounds: indispensable proportional gains have raised lower
# bounds, everything else starts at zero; gains sample up to 10. The pose
# space appends trajectory duration [1, 10] s and rise fraction [0, 0.5].
POSE_LOWER = np.array([0.1, 0.5, 0, 0, 0, 0, 1.0, 0.5, 0, 0, 0, 0, 1.0, 0.0])
POSE_UPPER = np.array([10.0] * 12 + [10.0, 0.5])
VELOCITY_LOWER = np.array([0.1, 0.5, 0, 0, 0, 0, 1.0, 5.0, 0, 0, 0, 0])
VELOCITY_UPPER = np.array([10.0] * 12)


@dataclass(frozen=True)
class EvalBatch:
    """Frozen set of evaluation environments shared by every candidate.

    The pose task pairs each sampled vehicle with a spawn seed; the
    velocity task reuses the vehicles on its fixed pulse sequence. Frozen
    seeds make candidate fitness bit-reproducible.
    """

    vehicles: tuple
    spawn_seeds: tuple

    @classmethod
    def create(cls, n: int = 100, seed: int = 0, randomization=None) -> "EvalBatch":
        from .envs import RandomizationSpec

        spec = randomization if randomization is not None else RandomizationSpec()
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xBA7C]))
        vehicles = tuple(spec.sample(rng) for _ in range(n))
        spawn_seeds = tuple(int(s) for s in rng.integers(0, 2**31 - 1, size=n))
        return cls(vehicles=vehicles, spawn_seeds=spawn_seeds)


POSE_FAILURE_SCORE = 80.0
VELOCITY_FAILURE_RESIDUAL = 800.0
FITNESS_HORIZON_S = 12.5
FITNESS_CONTROL_HZ = 40
PULSE_DURATION_S = 5.0


def fitness_pose(gains, batch: EvalBatch, scaling=None, sim=None) -> float:
    """Average time-integrated cost of the waypoint task over the batch.

    Per environment: the negated reward integral of a 12.5 s run, replaced
    by the flat failure score when the vehicle leaves the boundary or
    destabilizes. Bounded in [0, 80].
    """
    from .control import CommandScaling
    from .controllers import PosePidWaypointController
    from .dynamics import DEFAULT_SIM
    from .envs import run_waypoint_episode

    scaling = scaling if scaling is not None else CommandScaling()
    sim = sim if sim is not None else DEFAULT_SIM
    dt = 1.0 / FITNESS_CONTROL_HZ
    total = 0.0
    for params, spawn_seed in zip(batch.vehicles, batch.spawn_seeds):
        controller = PosePidWaypointController(gains, scaling, sim)
        record = run_waypoint_episode(
            controller, params, sim=sim, control_hz=FITNESS_CONTROL_HZ,
            duration_s=FITNESS_HORIZON_S, seed=spawn_seed,
        )
        if record.outcome != "success":
            total += POSE_FAILURE_SCORE
        else:
            total += -sum(record.rewards) * dt
    return total / len(batch.vehicles)


def velocity_pulse_sequence() -> list[tuple[int, float]]:
    """(axis, value) pulses: +x, +y, +z, +yaw rate, then the negations."""
    return [(0, 1.0), (1, 1.0), (2, 1.0), (3, 1.0),
            (0, -1.0), (1, -1.0), (2, -1.0), (3, -1.0)]


def fitness_velocity(gains, batch: EvalBatch, scaling=None, sim=None) -> float:
    """Average soft-clipped velocity-tracking error over the pulse course.

    Accumulates the time-integrated absolute setpoint error over all four
    degrees of freedom; destabilized runs contribute a flat raw residual
    before the soft clip. Clipping happens per environment, before the
    batch average.
    """
    from .control import CommandScaling, VelocityPidController, allocate
    from .dynamics import DEFAULT_SIM, FlightDynamicsError, QuadState, fraction_to_rpm, integrate_step

    scaling = scaling if scaling is not None else CommandScaling()
    sim = sim if sim is not None else DEFAULT_SIM
    dt = 1.0 / FITNESS_CONTROL_HZ
    steps_per_pulse = int(PULSE_DURATION_S * FITNESS_CONTROL_HZ)
    total = 0.0
    for params in batch.vehicles:
        controller = VelocityPidController(gains, scaling, sim)
        state = QuadState.at_rest(np.zeros(3))
        err = 0.0
        failed = False
        for axis, value in velocity_pulse_sequence():
            setpoint = np.zeros(4)
            setpoint[axis] = value
            for _ in range(steps_per_pulse):
                meas = (*state.nu, *state.omega, state.euler[0], state.euler[1])
                delta = controller.step(meas, setpoint, dt)
                rpm = fraction_to_rpm(allocate(delta), sim)
                try:
                    state = integrate_step(state, params, rpm, dt, sim)
                except FlightDynamicsError:
                    failed = True
                    break
                if not state.is_valid():
                    failed = True
                    break
                achieved = np.array([*state.nu, state.omega[2]])
                err += float(np.abs(setpoint - achieved).sum()) * dt
            if failed:
                break
        total += soft_clip(VELOCITY_FAILURE_RESIDUAL if failed else err)
    return total / len(batch.vehicles)


def pose_search_spec(iterations: int = 1000, sigma0: float = 2.0,
                     x0_gains=None) -> SearchSpec:
    from .control import REFERENCE_POSE_GAINS

    gains = x0_gains if x0_gains is not None else REFERENCE_POSE_GAINS
    spec = SearchSpec(POSE_LOWER, POSE_UPPER, sigma0=sigma0, iterations=iterations)
    x0 = constrain_inverse(gains.as_vector(with_trajectory=True), spec)
    return SearchSpec(POSE_LOWER, POSE_UPPER, sigma0=sigma0, iterations=iterations, x0=x0)


def velocity_search_spec(iterations: int = 1000, sigma0: float = 2.0) -> SearchSpec:
    spec = SearchSpec(VELOCITY_LOWER, VELOCITY_UPPER, sigma0=sigma0, iterations=iterations)
    x0 = constrain_inverse(np.full(12, 5.0), spec)
    return SearchSpec(VELOCITY_LOWER, VELOCITY_UPPER, sigma0=sigma0,
                      iterations=iterations, x0=x0)
