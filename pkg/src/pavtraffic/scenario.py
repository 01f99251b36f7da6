"""Scenario configuration, presets and the paired-run experiments.

Config files are flat ``key = value`` text with ``#`` comments. Unknown
keys, malformed lines and invalid values are reported with line numbers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace

import numpy as np

from .equilibrium import solve_equilibrium
from .errors import ValidationError
from .integrator import IntegrationConfig, Trajectory, simulate
from .model import ModelParams, StateVector
from .throughput import (
    HeadwayParams,
    SpeedProfile,
    ThroughputSeries,
    l2_fluctuation,
    steady_throughput,
    throughput_series,
)

CONVERGENCE_TOL = 1e-3
PAIRING_TOL = 1e-12


@dataclass(frozen=True)
class ScenarioConfig:
    label: str = "default"
    lambda1: float = 0.1
    lambda2: float = 0.15
    lambda3: float = 0.9
    lambda4: float = 0.05
    gamma: float = 0.2
    k: int = 200
    t_lock_h: float = 3.0
    t_lock_a: float = 3.0
    tau_a0: float = 1.0
    tau_h0: float = 1.5
    l_a0: float = 5.0
    l_h0: float = 7.0
    sigmoid_steepness: float = 10.0
    sigmoid_midpoint: float = 0.5
    frac_h0: float = 0.5
    frac_a0: float = 0.5
    speed_mps: float = 10.0
    step_h: float = 0.01
    horizon_t: float = 30.0
    renormalize: bool = True
    record_stride: int = 1
    sweep_stride: int = 10
    sweep_points: int = 11
    convergence_tol: float = CONVERGENCE_TOL
    equilibrium_tol: float = 1e-10
    analysis_k: int = 5
    grid_step: float = 0.05
    lmi_eps: float = 1e-6
    lmi_max_iter: int = 5000
    hurwitz_samples: int = 21
    erlang_t_lock: float = 3.0
    erlang_threshold: float = 0.2
    erlang_ks: str = "1,2,4,8,16,32,64,128,200,256,512"
    oracle_n: int = 100_000
    oracle_dt: float = 0.0
    oracle_record_dt: float = 0.1
    multistart: int = 20
    workers: int = 1

    def __post_init__(self):
        if abs(self.frac_h0 + self.frac_a0 - 1.0) > 1e-9:
            raise ValidationError("frac_h0 + frac_a0 must equal 1")
        if not (0.0 <= self.frac_h0 <= 1.0):
            raise ValidationError("frac_h0 must lie in [0, 1]")
        positive = ("speed_mps", "convergence_tol", "equilibrium_tol", "grid_step", "lmi_eps",
                    "erlang_t_lock", "erlang_threshold", "oracle_record_dt")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")
        for name in ("sweep_stride", "sweep_points", "analysis_k", "lmi_max_iter",
                     "hurwitz_samples", "workers", "multistart"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be at least 1")
        if self.oracle_dt < 0:
            raise ValidationError("oracle_dt must be nonnegative (0 picks a step automatically)")
        self.model_params()
        self.headway_params()
        self.integration()
        self.erlang_k_list()

    def model_params(self, **changes) -> ModelParams:
        base = dict(
            lambda1=self.lambda1, lambda2=self.lambda2, lambda3=self.lambda3, lambda4=self.lambda4,
            gamma=self.gamma, k=self.k, t_lock_h=self.t_lock_h, t_lock_a=self.t_lock_a,
        )
        base.update(changes)
        return ModelParams(**base)

    def headway_params(self) -> HeadwayParams:
        return HeadwayParams(
            tau_a0=self.tau_a0, tau_h0=self.tau_h0, l_a0=self.l_a0, l_h0=self.l_h0,
            sigmoid_steepness=self.sigmoid_steepness, sigmoid_midpoint=self.sigmoid_midpoint,
        )

    def integration(self, stride: int | None = None, horizon: float | None = None) -> IntegrationConfig:
        return IntegrationConfig(
            step_h=self.step_h,
            horizon_t=self.horizon_t if horizon is None else horizon,
            renormalize=self.renormalize,
            record_stride=self.record_stride if stride is None else stride,
        )

    def initial_state(self, k: int | None = None, frac_h0: float | None = None) -> StateVector:
        f = self.frac_h0 if frac_h0 is None else frac_h0
        return StateVector.initial(self.k if k is None else k, f, 1.0 - f)

    def erlang_k_list(self) -> list[int]:
        try:
            ks = [int(tok) for tok in self.erlang_ks.split(",") if tok.strip()]
        except ValueError:
            raise ValidationError(f"erlang_ks must be a comma-separated list of integers, got {self.erlang_ks!r}") from None
        if not ks or min(ks) < 1:
            raise ValidationError("erlang_ks must list positive integers")
        return ks

    def with_values(self, **changes) -> "ScenarioConfig":
        return replace(self, **changes)


_FIELDS = {f.name: f for f in fields(ScenarioConfig)}


def _parse_value(name, text):
    kind = type(getattr(ScenarioConfig, name))
    if kind is bool:
        low = text.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    if kind is int:
        return int(text)
    if kind is float:
        value = float(text)
        if not math.isfinite(value):
            raise ValueError(f"expected a finite number, got {text!r}")
        return value
    return text


def parse_config(text: str, base: ScenarioConfig | None = None, source: str = "<config>") -> ScenarioConfig:
    values = {}
    lines = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{source}:{line_no}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _FIELDS:
            raise ValidationError(f"{source}:{line_no}: unknown key {key!r}")
        if key in values:
            raise ValidationError(f"{source}:{line_no}: duplicate key {key!r}")
        try:
            values[key] = _parse_value(key, value)
        except ValueError as exc:
            raise ValidationError(f"{source}:{line_no}: {key}: {exc}") from None
        lines[key] = line_no
    try:
        return replace(base or ScenarioConfig(), **values)
    except ValidationError as exc:
        # point at the first offending key when the message names one
        for key, line_no in lines.items():
            if key in str(exc):
                raise ValidationError(f"{source}:{line_no}: {exc}") from None
        raise ValidationError(f"{source}: {exc}") from None


def load_config(path, base: ScenarioConfig | None = None) -> ScenarioConfig:
    with open(path) as fh:
        return parse_config(fh.read(), base=base, source=str(path))


def serialize_config(cfg: ScenarioConfig) -> str:
    out = []
    for name in _FIELDS:
        value = getattr(cfg, name)
        if isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, float):
            text = repr(value)
        else:
            text = str(value)
        out.append(f"{name} = {text}")
    return "\n".join(out) + "\n"


# Leader-dependent variants keep the leader-averaged rates of their regime.
_REGIMES = {
    "downward": (0.1, 0.5),
    "upward": (0.5, 0.1),
}
_VARIANTS = {
    "downward": {
        "baseline": (0.1, 0.5, 0.1, 0.5),
        "cascade": (0.01, 0.9, 0.19, 0.1),
        "asymmetric": (0.035, 0.0225, 0.165, 0.9775),
        "near-independent-a": (0.08, 0.55, 0.12, 0.45),
        "near-independent-b": (0.12, 0.45, 0.08, 0.55),
    },
    "upward": {
        "baseline": (0.5, 0.1, 0.5, 0.1),
        "cascade": (0.1, 0.19, 0.9, 0.01),
        "asymmetric": (0.9775, 0.165, 0.0225, 0.035),
        "near-independent-a": (0.45, 0.08, 0.55, 0.12),
        "near-independent-b": (0.55, 0.12, 0.45, 0.08),
    },
}
PRESETS = {
    f"{regime}-{variant}": rates for regime, table in _VARIANTS.items() for variant, rates in table.items()
}


def preset(name: str) -> ScenarioConfig:
    if name not in PRESETS:
        raise ValidationError(f"unknown preset {name!r}; choose from {', '.join(sorted(PRESETS))}")
    l1, l2, l3, l4 = PRESETS[name]
    return ScenarioConfig(label=name, lambda1=l1, lambda2=l2, lambda3=l3, lambda4=l4)


@dataclass(frozen=True)
class PairedScenario:
    lambda1: float
    lambda2: float
    lambda3: float
    lambda4: float
    lambda_ha_bar: float
    lambda_ah_bar: float

    def __post_init__(self):
        if abs((self.lambda1 + self.lambda3) / 2 - self.lambda_ha_bar) > PAIRING_TOL:
            raise ValidationError("baseline HDV->AV rate must equal the mean of lambda1 and lambda3")
        if abs((self.lambda2 + self.lambda4) / 2 - self.lambda_ah_bar) > PAIRING_TOL:
            raise ValidationError("baseline AV->HDV rate must equal the mean of lambda2 and lambda4")

    @classmethod
    def from_config(cls, cfg: ScenarioConfig) -> "PairedScenario":
        return cls(
            cfg.lambda1, cfg.lambda2, cfg.lambda3, cfg.lambda4,
            (cfg.lambda1 + cfg.lambda3) / 2, (cfg.lambda2 + cfg.lambda4) / 2,
        )

    def dependent(self, cfg: ScenarioConfig, **changes) -> ModelParams:
        return cfg.model_params(
            lambda1=self.lambda1, lambda2=self.lambda2, lambda3=self.lambda3, lambda4=self.lambda4, **changes
        )

    def baseline(self, cfg: ScenarioConfig, **changes) -> ModelParams:
        return cfg.model_params(
            lambda1=self.lambda_ha_bar, lambda2=self.lambda_ah_bar,
            lambda3=self.lambda_ha_bar, lambda4=self.lambda_ah_bar, **changes
        )


@dataclass(frozen=True, eq=False)
class RunSummary:
    trajectory: Trajectory
    series: ThroughputSeries
    x_star: StateVector
    steady: float
    l2: float


def run_scenario(cfg: ScenarioConfig, params: ModelParams, profile: SpeedProfile | None = None,
                 stride: int | None = None, x0=None, horizon: float | None = None) -> RunSummary:
    """Integrate, evaluate throughput and the steady value at ``speed_mps``."""
    icfg = cfg.integration(stride=stride, horizon=horizon)
    traj = simulate(params, cfg.initial_state(params.k) if x0 is None else x0, icfg)
    hp = cfg.headway_params()
    if profile is None:
        profile = SpeedProfile.constant(cfg.speed_mps, traj.times[-1])
    series = throughput_series(hp, traj, profile, params.gamma)
    eq = solve_equilibrium(params, tol=cfg.equilibrium_tol)
    steady = steady_throughput(hp, eq.x_star, cfg.speed_mps, params.gamma)
    return RunSummary(traj, series, eq.x_star, steady, l2_fluctuation(series.times, series.capacity, steady))


@dataclass(frozen=True, eq=False)
class Comparison:
    dependent: RunSummary
    baseline: RunSummary

    @property
    def steady_gap(self) -> float:
        return self.dependent.steady - self.baseline.steady

    @property
    def gap_series(self) -> np.ndarray:
        return self.dependent.series.capacity - self.baseline.series.capacity

    def report(self) -> dict:
        return {
            "steady_dependent_vphpl": self.dependent.steady,
            "steady_baseline_vphpl": self.baseline.steady,
            "steady_gap_vphpl": self.steady_gap,
            "l2_dependent": self.dependent.l2,
            "l2_baseline": self.baseline.l2,
            "max_abs_gap_vphpl": float(np.abs(self.gap_series).max()),
        }


def compare(cfg: ScenarioConfig, paired: PairedScenario | None = None,
            profile: SpeedProfile | None = None, **changes) -> Comparison:
    paired = paired or PairedScenario.from_config(cfg)
    return Comparison(
        dependent=run_scenario(cfg, paired.dependent(cfg, **changes), profile),
        baseline=run_scenario(cfg, paired.baseline(cfg, **changes), profile),
    )


@dataclass(frozen=True)
class TransientMetrics:
    convergence_time: float
    overshoot: float


def transient_metrics(cfg: ScenarioConfig, params: ModelParams, x0, stride: int | None = None) -> TransientMetrics:
    """First time with ``|x - x*|_inf <= convergence_tol`` and ``max |C(t) - C_inf|``.

    The convergence time is ``nan`` when the threshold is not met within the horizon.
    """
    run = run_scenario(cfg, params, stride=stride, x0=x0)
    dist = np.abs(run.trajectory.states - run.x_star.values).max(axis=1)
    hit = np.flatnonzero(dist <= cfg.convergence_tol)
    t_conv = float(run.trajectory.times[hit[0]]) if hit.size else math.nan
    return TransientMetrics(t_conv, float(np.abs(run.series.capacity - run.steady).max()))
