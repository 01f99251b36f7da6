"""Headways and traffic throughput of the mixed PAV / permanent-HDV stream.

Each state carries a time gap ``tau`` and standstill distance ``L``. Unlocked
states use the equilibrium values of their mode. Lock stages move from the
origin mode toward the target mode along a logistic curve in the stage
fraction, sampled at stage midpoints (a piecewise-constant transition).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .integrator import Trajectory, fmt
from .model import check_simplex

SECONDS_PER_HOUR = 3600.0
H_TO_A = "h_to_a"
A_TO_H = "a_to_h"


@dataclass(frozen=True)
class HeadwayParams:
    tau_a0: float = 1.0
    tau_h0: float = 1.5
    l_a0: float = 5.0
    l_h0: float = 7.0
    sigmoid_steepness: float = 10.0
    sigmoid_midpoint: float = 0.5

    def __post_init__(self):
        for name in ("tau_a0", "tau_h0", "l_a0", "l_h0", "sigmoid_steepness"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValidationError(f"{name} must be positive, got {value!r}")
        if self.tau_h0 < self.tau_a0 or self.l_h0 < self.l_a0:
            raise ValidationError("HDV time gap and standstill distance must dominate the AV ones")
        if not math.isfinite(self.sigmoid_midpoint):
            raise ValidationError("sigmoid_midpoint must be finite")

    def mode_headway(self, mode: str, v: float) -> float:
        _check_speed(v)
        if mode == "hdv":
            return self.tau_h0 + self.l_h0 / v
        return self.tau_a0 + self.l_a0 / v


def _check_speed(v):
    if not (v > 0 and math.isfinite(v)):
        raise ValidationError(f"speed must be positive, got {v!r}")


def _sigmoid(hp: HeadwayParams, s):
    return 1.0 / (1.0 + np.exp(-hp.sigmoid_steepness * (s - hp.sigmoid_midpoint)))


def stage_headway(hp: HeadwayParams, stage_i: int, k: int, direction: str) -> tuple[float, float]:
    """``(tau, standstill)`` of lock stage ``stage_i`` in a chain of ``k``."""
    if not (0 <= stage_i <= k):
        raise ValidationError(f"stage index {stage_i} outside 0..{k}")
    if direction == H_TO_A:
        origin = (hp.tau_h0, hp.l_h0)
        target = (hp.tau_a0, hp.l_a0)
    elif direction == A_TO_H:
        origin = (hp.tau_a0, hp.l_a0)
        target = (hp.tau_h0, hp.l_h0)
    else:
        raise ValidationError(f"unknown direction {direction!r}")
    if stage_i == 0:
        return origin
    w = float(_sigmoid(hp, (stage_i - 0.5) / k))
    return (origin[0] + (target[0] - origin[0]) * w, origin[1] + (target[1] - origin[1]) * w)


def stage_tables(hp: HeadwayParams, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-state ``tau`` and ``L`` arrays in the flat ``[H_0..H_k, A_0..A_k]`` layout."""
    s = (np.arange(1, k + 1) - 0.5) / k
    w = _sigmoid(hp, s)
    tau = np.empty(2 * (k + 1))
    length = np.empty(2 * (k + 1))
    tau[0], length[0] = hp.tau_h0, hp.l_h0
    tau[1 : k + 1] = hp.tau_h0 + (hp.tau_a0 - hp.tau_h0) * w
    length[1 : k + 1] = hp.l_h0 + (hp.l_a0 - hp.l_h0) * w
    tau[k + 1], length[k + 1] = hp.tau_a0, hp.l_a0
    tau[k + 2 :] = hp.tau_a0 + (hp.tau_h0 - hp.tau_a0) * w
    length[k + 2 :] = hp.l_a0 + (hp.l_h0 - hp.l_a0) * w
    return tau, length


def _state_values(x) -> np.ndarray:
    if hasattr(x, "values"):
        return x.values
    values = np.asarray(x, dtype=float)
    check_simplex(values)
    return values


def _check_gamma(gamma):
    if not (0.0 <= gamma <= 1.0):
        raise ValidationError(f"gamma must lie in [0, 1], got {gamma!r}")


def effective_headway(hp: HeadwayParams, x, v: float, gamma: float) -> float:
    """Fleet-average headway in seconds at speed ``v``."""
    _check_speed(v)
    _check_gamma(gamma)
    values = _state_values(x)
    k = values.size // 2 - 1
    tau, length = stage_tables(hp, k)
    pav = float(values @ tau + (values @ length) / v)
    return (1.0 - gamma) * pav + gamma * (hp.tau_h0 + hp.l_h0 / v)


def throughput(hp: HeadwayParams, x, v: float, gamma: float) -> float:
    """Throughput in vehicles per hour per lane."""
    return SECONDS_PER_HOUR / effective_headway(hp, x, v, gamma)


def steady_throughput(hp: HeadwayParams, x_star, v_star: float, gamma: float) -> float:
    return throughput(hp, x_star, v_star, gamma)


@dataclass(frozen=True, eq=False)
class SpeedProfile:
    """Piecewise-linear speed profile ``v(t)``."""

    times: np.ndarray
    speeds: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        speeds = np.asarray(self.speeds, dtype=float)
        if times.ndim != 1 or times.shape != speeds.shape or times.size < 1:
            raise ValidationError("profile needs matching 1-D time and speed arrays")
        if np.any(np.diff(times) <= 0):
            raise ValidationError("profile times must be strictly increasing")
        if np.any(~np.isfinite(speeds)) or np.any(speeds <= 0):
            raise ValidationError("profile speeds must be positive")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "speeds", speeds)

    @classmethod
    def constant(cls, v: float, t_end: float) -> "SpeedProfile":
        return cls(np.array([0.0, t_end]), np.array([v, v]))

    @classmethod
    def from_csv(cls, path) -> "SpeedProfile":
        """Read ``time_s,speed_mps``; errors name the offending row."""
        times, speeds = [], []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip() for h in header] != ["time_s", "speed_mps"]:
                raise ValidationError(f"{path}: expected header 'time_s,speed_mps', got {header!r}")
            for row_no, row in enumerate(reader, start=2):
                if not row or all(not cell.strip() for cell in row):
                    continue
                if len(row) != 2:
                    raise ValidationError(f"{path}:{row_no}: expected 2 columns, got {len(row)}")
                try:
                    t, v = float(row[0]), float(row[1])
                except ValueError:
                    raise ValidationError(f"{path}:{row_no}: non-numeric value in {row!r}") from None
                if not (math.isfinite(t) and math.isfinite(v)):
                    raise ValidationError(f"{path}:{row_no}: non-finite value in {row!r}")
                if v <= 0:
                    raise ValidationError(f"{path}:{row_no}: speed must be positive, got {v!r}")
                if times and t <= times[-1]:
                    raise ValidationError(f"{path}:{row_no}: time {t!r} not increasing")
                times.append(t)
                speeds.append(v)
        if not times:
            raise ValidationError(f"{path}: no data rows")
        return cls(np.array(times), np.array(speeds))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["time_s", "speed_mps"])
            for t, v in zip(self.times, self.speeds):
                writer.writerow([fmt(t), fmt(v)])

    def covers(self, t0: float, t1: float) -> bool:
        tol = 1e-9 * max(1.0, abs(t1))
        return self.times[0] <= t0 + tol and self.times[-1] >= t1 - tol

    def __call__(self, t):
        return np.interp(t, self.times, self.speeds)


@dataclass(frozen=True, eq=False)
class ThroughputSeries:
    times: np.ndarray
    speeds: np.ndarray
    h_eff: np.ndarray
    capacity: np.ndarray

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["time_s", "v_mps", "h_eff_s", "c_vphpl"])
            for row in zip(self.times, self.speeds, self.h_eff, self.capacity):
                writer.writerow([fmt(v) for v in row])


def headway_series(hp: HeadwayParams, states: np.ndarray, speeds: np.ndarray, gamma: float) -> np.ndarray:
    """Vectorised effective headway for rows of ``states`` at ``speeds``."""
    _check_gamma(gamma)
    speeds = np.asarray(speeds, dtype=float)
    if np.any(~(speeds > 0)):
        raise ValidationError("speeds must be positive")
    k = states.shape[1] // 2 - 1
    tau, length = stage_tables(hp, k)
    pav = states @ tau + (states @ length) / speeds
    return (1.0 - gamma) * pav + gamma * (hp.tau_h0 + hp.l_h0 / speeds)


def throughput_series(hp: HeadwayParams, traj: Trajectory, profile: SpeedProfile, gamma: float) -> ThroughputSeries:
    """Throughput along a trajectory with speeds interpolated from ``profile``."""
    if not profile.covers(traj.times[0], traj.times[-1]):
        raise ValidationError(
            f"speed profile spans [{profile.times[0]}, {profile.times[-1]}] s but the "
            f"trajectory spans [{traj.times[0]}, {traj.times[-1]}] s"
        )
    speeds = profile(traj.times)
    h_eff = headway_series(hp, traj.states, speeds, gamma)
    return ThroughputSeries(traj.times, speeds, h_eff, SECONDS_PER_HOUR / h_eff)


def l2_fluctuation(times: np.ndarray, capacity: np.ndarray, steady: float) -> float:
    """L2 norm over time of the deviation from the steady throughput (vphpl * sqrt(s))."""
    dev2 = (np.asarray(capacity) - steady) ** 2
    return float(math.sqrt(np.trapezoid(dev2, times)))
