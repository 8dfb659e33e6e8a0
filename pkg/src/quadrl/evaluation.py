"""Metrics and aggregation over evaluation episodes.

Settling time, steady-state errors, course times with confidence
intervals, success-expectation maps over the (prop diameter x mass)
parameter plane, and trajectory occupancy heatmaps.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .dynamics import QuadParams
from .envs import EpisodeRecord, fmt

SETTLING_SPEED_THRESHOLD = 0.1  # m/s
WAYPOINT_TEST_CAP_S = 12.5
STEADY_STATE_WINDOW_S = 2.0


def settling_time(record: EpisodeRecord, threshold: float = SETTLING_SPEED_THRESHOLD,
                  cap: float | None = None) -> float:
    """Earliest time after which speed never exceeds the threshold.

    A record that is slow from the start settles at 0; one that never
    settles reports the cap (the record's end time by default).
    """
    if record.n_steps == 0:
        raise ValueError("empty record")
    speeds = record.speeds()
    cap = cap if cap is not None else record.times[-1]
    above = np.nonzero(speeds > threshold)[0]
    if above.size == 0:
        return 0.0
    last = int(above[-1])
    if last == len(speeds) - 1:
        return cap
    return float(record.times[last + 1])


def steady_state_errors(record: EpisodeRecord, target=(0.0, 0.0, 0.0),
                        window_s: float = STEADY_STATE_WINDOW_S) -> tuple[float, float]:
    """(longitudinal, vertical) position error averaged over the final window.

    Longitudinal is the horizontal-plane Euclidean error, vertical the
    absolute height error.
    """
    if record.n_steps == 0:
        raise ValueError("empty record")
    times = np.asarray(record.times)
    pos = record.positions() - np.asarray(target)
    mask = times >= times[-1] - window_s
    tail = pos[mask]
    longitudinal = float(np.mean(np.hypot(tail[:, 0], tail[:, 1])))
    vertical = float(np.mean(np.abs(tail[:, 2])))
    return longitudinal, vertical


@dataclass(frozen=True)
class RunSummary:
    """Per-episode metric row."""

    settling_time_s: float
    longitudinal_error_m: float
    vertical_error_m: float
    course_time_s: float  # nan when not a course run
    success: bool


def run_summary(record: EpisodeRecord, cap: float = WAYPOINT_TEST_CAP_S) -> RunSummary:
    lon, ver = steady_state_errors(record)
    course = float("nan")
    if record.task == "pickup" and len(record.waypoint_times) == 3:
        course = record.waypoint_times[-1]
    return RunSummary(
        settling_time_s=settling_time(record, cap=cap),
        longitudinal_error_m=lon,
        vertical_error_m=ver,
        course_time_s=course,
        success=record.success,
    )


def summarize_runs(summaries: list[RunSummary]) -> dict:
    """Mean/std of the per-run metrics plus a 95 % normal-approximation
    interval on the course time."""
    if not summaries:
        raise ValueError("need at least one summary")
    settle = np.array([s.settling_time_s for s in summaries])
    lon = np.array([s.longitudinal_error_m for s in summaries])
    ver = np.array([s.vertical_error_m for s in summaries])
    course = np.array([s.course_time_s for s in summaries])
    course = course[np.isfinite(course)]
    out = {
        "n": len(summaries),
        "n_success": int(sum(s.success for s in summaries)),
        "settling_mean_s": float(settle.mean()),
        "settling_std_s": float(settle.std()),
        "longitudinal_mean_m": float(lon.mean()),
        "longitudinal_std_m": float(lon.std()),
        "vertical_mean_m": float(ver.mean()),
        "vertical_std_m": float(ver.std()),
    }
    if course.size:
        mean = float(course.mean())
        half = 1.96 * float(course.std()) / math.sqrt(course.size)
        out.update({
            "course_time_mean_s": mean,
            "course_time_ci95_s": half,
            "course_n": int(course.size),
        })
    return out


@dataclass
class ExpectationMap:
    """Moving-window success expectation over the parameter rectangle.

    expectation is NaN where no test falls under the window or the cell
    lies outside the diameter-coupled admissible mass band.
    """

    diameters: np.ndarray
    masses: np.ndarray
    n_success: np.ndarray
    n_total: np.ndarray
    expectation: np.ndarray


def admissible_mass_bounds(diameter: float, task: str = "waypoint") -> tuple[float, float]:
    lo = 0.1 * diameter - 0.3
    hi = (0.2 * diameter - 0.66) if task == "pickup" else (0.265 * diameter - 0.9)
    return lo, hi


def expectation_map(results: list[tuple[QuadParams, bool]], task: str = "waypoint",
                    grid: int = 100,
                    window: tuple[float, float] = (1.0, 0.417),
                    diameter_range: tuple[float, float] = (6.0, 12.0)) -> ExpectationMap:
    """Windowed success-rate estimate on a grid x grid lattice."""
    d_lo, d_hi = diameter_range
    m_lo = admissible_mass_bounds(d_lo, task)[0]
    m_hi = admissible_mass_bounds(d_hi, task)[1]
    d_centers = np.linspace(d_lo, d_hi, grid)
    m_centers = np.linspace(m_lo, m_hi, grid)
    half_d, half_m = window[0] / 2.0, window[1] / 2.0

    n_success = np.zeros((grid, grid))
    n_total = np.zeros((grid, grid))
    for params, success in results:
        d_mask = np.abs(d_centers - params.prop_diameter) <= half_d
        m_mask = np.abs(m_centers - params.mass) <= half_m
        cell = np.outer(m_mask, d_mask)  # rows: mass, cols: diameter
        n_total += cell
        if success:
            n_success += cell

    with np.errstate(invalid="ignore", divide="ignore"):
        expectation = n_success / n_total
    lo = 0.1 * d_centers - 0.3
    hi = (0.2 * d_centers - 0.66) if task == "pickup" else (0.265 * d_centers - 0.9)
    outside = (m_centers[:, None] < lo[None, :]) | (m_centers[:, None] > hi[None, :])
    expectation[outside] = np.nan
    expectation[n_total == 0] = np.nan
    return ExpectationMap(d_centers, m_centers, n_success, n_total, expectation)


def write_expectation_csv(emap: ExpectationMap, path) -> None:
    """Long-format CSV: one row per grid cell, blanks where undefined."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["prop_diameter", "mass", "n_success", "n_total", "expectation"])
        for i, m in enumerate(emap.masses):
            for j, d in enumerate(emap.diameters):
                e = emap.expectation[i, j]
                writer.writerow([
                    fmt(d), fmt(m),
                    int(emap.n_success[i, j]), int(emap.n_total[i, j]),
                    "" if np.isnan(e) else fmt(e),
                ])


def trajectory_heatmap(records: list[EpisodeRecord], plane: str = "XY",
                       resolution: int = 100,
                       bounds: tuple[float, float] = (-1.2, 1.2)) -> np.ndarray:
    """Raw occupancy counts of visited positions projected onto a plane."""
    if plane.upper() == "XY":
        cols = (0, 1)
    elif plane.upper() == "XZ":
        cols = (0, 2)
    else:
        raise ValueError("plane must be 'XY' or 'XZ'")
    counts = np.zeros((resolution, resolution))
    lo, hi = bounds
    for record in records:
        pos = record.positions()
        a = pos[:, cols[0]]
        b = pos[:, cols[1]]
        hist, _, _ = np.histogram2d(
            b, a, bins=resolution, range=[[lo, hi], [lo, hi]]
        )
        counts += hist
    return counts


def write_heatmap_csv(counts: np.ndarray, path) -> None:
    """Occupancy grid normalized to a max of one, row-major CSV."""
    peak = counts.max()
    normalized = counts / peak if peak > 0 else counts
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in normalized:
            writer.writerow([fmt(v) for v in row])


def write_summary_csv(summaries: list[RunSummary], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([
            "settling_time_s", "longitudinal_error_m", "vertical_error_m",
            "course_time_s", "success",
        ])
        for s in summaries:
            writer.writerow([
                fmt(s.settling_time_s), fmt(s.longitudinal_error_m),
                fmt(s.vertical_error_m), fmt(s.course_time_s), int(s.success),
            ])


def write_aggregate_csv(aggregate: dict, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        for key in sorted(aggregate):
            value = aggregate[key]
            writer.writerow([key, fmt(value) if isinstance(value, float) else value])
