"""Fixed-step RK4 integration of the mode-switching system."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import StepSizeError, ValidationError
from .model import ModelParams, StateVector, as_array, drift_array

#: Bound on ``h * fastest_rate``; RK4's real stability interval ends near 2.785.
RK4_GUARD = 2.5
#: Undershoot below this is reported as a too-large step instead of clamped.
NEGATIVE_TOL = 1e-9


@dataclass(frozen=True)
class IntegrationConfig:
    step_h: float = 0.01
    horizon_t: float = 30.0
    renormalize: bool = True
    record_stride: int = 1

    def __post_init__(self):
        if not (self.step_h > 0 and math.isfinite(self.step_h)):
            raise ValidationError(f"step_h must be positive, got {self.step_h!r}")
        if not (self.horizon_t > 0 and math.isfinite(self.horizon_t)):
            raise ValidationError(f"horizon_t must be positive, got {self.horizon_t!r}")
        if self.step_h > self.horizon_t:
            raise ValidationError("step_h must not exceed horizon_t")
        if int(self.record_stride) != self.record_stride or self.record_stride < 1:
            raise ValidationError(f"record_stride must be a positive integer, got {self.record_stride!r}")

    @property
    def n_steps(self) -> int:
        # tolerate float noise in horizon/step, e.g. 30 / 0.01
        ratio = self.horizon_t / self.step_h
        return max(1, math.ceil(ratio - 1e-9))


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Recorded samples of a simulation.

    ``states`` has one row per sample (flat ``2(k+1)`` layout). The initial
    state is always the first sample and the terminal state the last.
    """

    times: np.ndarray
    states: np.ndarray
    q_hdv: np.ndarray
    k: int

    @property
    def sum_h(self) -> np.ndarray:
        return self.states[:, : self.k + 1].sum(axis=1)

    @property
    def sum_a(self) -> np.ndarray:
        return self.states[:, self.k + 1 :].sum(axis=1)

    @property
    def aggregates(self) -> np.ndarray:
        return np.column_stack([self.sum_h, self.sum_a])

    @property
    def terminal(self) -> np.ndarray:
        return self.states[-1]

    def state(self, i: int) -> StateVector:
        return StateVector(self.states[i])

    def __len__(self):
        return self.times.size

    def to_csv(self, path, full_state_path=None) -> None:
        """Write ``time_s,sum_xh,sum_xa,q_hdv,xh0,xa0``; optionally all states."""
        n = self.k + 1
        sum_h, sum_a = self.sum_h, self.sum_a
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["time_s", "sum_xh", "sum_xa", "q_hdv", "xh0", "xa0"])
            for i in range(len(self)):
                writer.writerow(
                    fmt(v)
                    for v in (self.times[i], sum_h[i], sum_a[i], self.q_hdv[i], self.states[i, 0], self.states[i, n])
                )
        if full_state_path is not None:
            header = ["time_s"] + [f"xh{i}" for i in range(n)] + [f"xa{i}" for i in range(n)]
            with open(full_state_path, "w", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(header)
                for t, row in zip(self.times, self.states):
                    writer.writerow([fmt(t)] + [fmt(v) for v in row])


def fmt(value) -> str:
    """Shortest round-tripping decimal; independent of locale."""
    return repr(float(value))


def check_step(params: ModelParams, h: float) -> None:
    if not h > 0:
        raise StepSizeError(f"step must be positive, got {h!r}")
    if h * params.max_rate() >= RK4_GUARD:
        raise StepSizeError(
            f"step {h:g} s violates the RK4 guard h*rate < {RK4_GUARD} "
            f"(fastest rate {params.max_rate():g} 1/s)"
        )


def _rk4(params, y, h):
    k1 = drift_array(params, y)
    k2 = drift_array(params, y + 0.5 * h * k1)
    k3 = drift_array(params, y + 0.5 * h * k2)
    k4 = drift_array(params, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _advance(params, y, h, renormalize, time=None):
    y = _rk4(params, y, h)
    low = y.min()
    if low < -NEGATIVE_TOL:
        raise StepSizeError(f"RK4 step produced negative fraction {low:.3g}; reduce the step", time)
    if renormalize:
        y = y / y.sum()
    return y


def rk4_step(params: ModelParams, x, h: float, renormalize: bool = True) -> StateVector:
    """One classic RK4 step of size ``h`` from ``x``."""
    check_step(params, h)
    y = as_array(params, x)
    return StateVector(_advance(params, y, h, renormalize))


def simulate(params: ModelParams, x0, cfg: IntegrationConfig | None = None) -> Trajectory:
    """Integrate from ``x0`` over ``cfg.horizon_t`` with ``ceil(horizon/step)`` steps."""
    cfg = cfg or IntegrationConfig()
    h = cfg.step_h
    check_step(params, h)
    y = np.array(as_array(params, x0), dtype=float)
    n_steps = cfg.n_steps
    stride = int(cfg.record_stride)
    record_idx = list(range(0, n_steps + 1, stride))
    if record_idx[-1] != n_steps:
        record_idx.append(n_steps)

    times = np.empty(len(record_idx))
    states = np.empty((len(record_idx), y.size))
    times[0] = 0.0
    states[0] = y
    slot = 1
    for step in range(1, n_steps + 1):
        y = _advance(params, y, h, cfg.renormalize, time=step * h)
        if slot < len(record_idx) and record_idx[slot] == step:
            times[slot] = step * h
            states[slot] = y
            slot += 1

    n = params.k + 1
    q = params.gamma + (1.0 - params.gamma) * states[:, :n].sum(axis=1)
    return Trajectory(times=times, states=states, q_hdv=q, k=params.k)


def max_drift_norm(params: ModelParams, traj: Trajectory) -> np.ndarray:
    """``||drift||_inf`` along the recorded samples (diagnostic only)."""
    return np.array([np.abs(drift_array(params, row)).max() for row in traj.states])
