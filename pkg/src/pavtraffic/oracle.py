"""Monte Carlo particle oracle for the mean-field system.

Particles switch mode from the unlocked states with probability
``1 - exp(-rate * dt)`` per step, where the rate is recomputed every step
from the current empirical fractions (mean-field coupling). Locked
particles either advance through Erlang stages (``erlang_stage``) or count
down a deterministic timer of exactly ``T_lock`` (``deterministic_lockout``).

Two backends produce the same process:

``"counts"``
    Particles are exchangeable, so the per-particle Bernoulli thinning is
    replaced by binomial draws on the occupancy of each state (a ring
    buffer of entry cohorts for deterministic timers). Cost is independent
    of ``n``.
``"particles"``
    Literal per-particle state, processed in fixed-size blocks with one
    counter-based stream per block so results do not depend on how blocks
    are scheduled.

Switch decisions out of the unlocked states use a dedicated stream in both
modes, which gives common random numbers when the two lockout modes are
compared.
"""
from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .integrator import fmt
from .model import ModelParams, as_array

ERLANG_STAGE = "erlang_stage"
DETERMINISTIC_LOCKOUT = "deterministic_lockout"
MODES = (ERLANG_STAGE, DETERMINISTIC_LOCKOUT)
MIN_PARTICLES = 1000
MAX_EVENT_PROB = 0.1
DEFAULT_EVENT_PROB = 0.02
BLOCK_SIZE = 8192


@dataclass(frozen=True)
class ParticleEnsemble:
    """Initial configuration of a particle run."""

    n: int
    rng_seed: int
    mode: str

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.n < MIN_PARTICLES:
            raise ValidationError(f"need at least {MIN_PARTICLES} particles, got {self.n}")
        if not (0 <= self.rng_seed < 2**64):
            raise ValidationError("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True, eq=False)
class OracleResult:
    times: np.ndarray
    frac_h: np.ndarray
    frac_a: np.ndarray
    n: int
    mode: str
    counts_h: np.ndarray
    counts_a: np.ndarray

    @property
    def se_h(self) -> np.ndarray:
        return np.sqrt(self.frac_h * (1.0 - self.frac_h) / self.n)

    @property
    def se_a(self) -> np.ndarray:
        return np.sqrt(self.frac_a * (1.0 - self.frac_a) / self.n)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["time_s", "frac_h", "frac_a", "se_h", "se_a"])
            for row in zip(self.times, self.frac_h, self.frac_a, self.se_h, self.se_a):
                writer.writerow([fmt(v) for v in row])


@dataclass(frozen=True)
class ModeComparison:
    times: np.ndarray
    erlang: OracleResult
    deterministic: OracleResult

    @property
    def gap(self) -> np.ndarray:
        return np.abs(self.erlang.frac_h - self.deterministic.frac_h)

    @property
    def max_gap(self) -> float:
        return float(self.gap.max())


def _streams(seed: int, count: int):
    """Independent counter-based generators derived from ``seed``."""
    return [np.random.Generator(np.random.Philox(s)) for s in np.random.SeedSequence(seed).spawn(count)]


def default_dt(params: ModelParams, record_dt: float) -> float:
    """Largest ``record_dt / m`` keeping the fastest event probability near 2%."""
    rate = params.max_rate()
    steps = max(1, math.ceil(record_dt * rate / -math.log1p(-DEFAULT_EVENT_PROB)))
    return record_dt / steps


def _check_run(params, n, horizon, dt, record_dt):
    if n < MIN_PARTICLES:
        raise ValidationError(f"need at least {MIN_PARTICLES} particles, got {n}")
    if not (horizon > 0 and dt > 0 and record_dt > 0):
        raise ValidationError("horizon, dt and record_dt must be positive")
    p_max = -math.expm1(-params.max_rate() * dt)
    if p_max >= MAX_EVENT_PROB:
        raise ValidationError(
            f"dt={dt:g} gives event probability {p_max:.3f} >= {MAX_EVENT_PROB} for the fastest rate"
        )
    stride = round(record_dt / dt)
    if stride < 1 or abs(stride * dt - record_dt) > 1e-9 * record_dt:
        raise ValidationError("record_dt must be an integer multiple of dt")
    n_steps = math.ceil(horizon / dt - 1e-9)
    return stride, n_steps


def _lock_steps(t_lock, dt):
    return max(1, round(t_lock / dt))


def _initial_counts(params, x0, n, rng):
    x = as_array(params, x0)
    return rng.multinomial(n, x / x.sum())


def _rates(params, frac_h):
    q = params.gamma + (1.0 - params.gamma) * frac_h
    lam_ha = q * params.lambda1 + (1.0 - q) * params.lambda3
    lam_ah = q * params.lambda2 + (1.0 - q) * params.lambda4
    return lam_ha, lam_ah


def _run_counts(params, x0, n, n_steps, dt, stride, seed, mode):
    k = params.k
    n1 = k + 1
    init_rng, switch_rng, lock_rng = _streams(seed, 3)
    counts = _initial_counts(params, x0, n, init_rng).astype(np.int64)
    up, down = params.upward_lockout, params.downward_lockout
    p_mu_h = -math.expm1(-params.mu_h * dt) if up else 1.0
    p_mu_a = -math.expm1(-params.mu_a * dt) if down else 1.0

    if mode == DETERMINISTIC_LOCKOUT:
        # collapse Erlang stages: a particle already in stage i is placed in
        # the timer cohort with the matching share of the lockout left
        m_h = _lock_steps(params.t_lock_h, dt) if up else 0
        m_a = _lock_steps(params.t_lock_a, dt) if down else 0
        pipe_h = deque([0] * m_h, maxlen=m_h) if up else None
        pipe_a = deque([0] * m_a, maxlen=m_a) if down else None
        for pipe, offset, m in ((pipe_h, 1, m_h), (pipe_a, n1 + 1, m_a)):
            if pipe is None:
                continue
            for i in range(1, n1):
                left = max(1, round(m * (k - i + 1) / k))
                pipe[m - left] += int(counts[offset + i - 1])
        unl_h, unl_a = int(counts[0]), int(counts[n1])
        lock_h = sum(pipe_h) if up else 0
        lock_a = sum(pipe_a) if down else 0

    n_rec = n_steps // stride + 1 + (1 if n_steps % stride else 0)
    counts_h = np.empty(n_rec, dtype=np.int64)
    counts_a = np.empty(n_rec, dtype=np.int64)
    times = np.empty(n_rec)

    def record(slot, step):
        times[slot] = step * dt
        if mode == ERLANG_STAGE:
            counts_h[slot] = counts[:n1].sum()
            counts_a[slot] = counts[n1:].sum()
        else:
            counts_h[slot] = unl_h + lock_h
            counts_a[slot] = unl_a + lock_a

    record(0, 0)
    slot = 1
    for step in range(1, n_steps + 1):
        if mode == ERLANG_STAGE:
            frac_h = counts[:n1].sum() / n
        else:
            frac_h = (unl_h + lock_h) / n
        lam_ha, lam_ah = _rates(params, frac_h)
        p_ha = -math.expm1(-lam_ha * dt)
        p_ah = -math.expm1(-lam_ah * dt)

        if mode == ERLANG_STAGE:
            fire_h = switch_rng.binomial(counts[0], p_ha)
            fire_a = switch_rng.binomial(counts[n1], p_ah)
            new = counts.copy()
            new[0] -= fire_h
            new[n1] -= fire_a
            if up:
                adv = lock_rng.binomial(counts[1:n1], p_mu_h)
                new[1] += fire_h
                new[1:n1] -= adv
                new[2:n1] += adv[:-1]
                new[n1] += adv[-1]
            else:
                new[n1] += fire_h
            if down:
                adv = lock_rng.binomial(counts[n1 + 1 :], p_mu_a)
                new[n1 + 1] += fire_a
                new[n1 + 1 :] -= adv
                new[n1 + 2 :] += adv[:-1]
                new[0] += adv[-1]
            else:
                new[0] += fire_a
            counts = new
        else:
            fire_h = int(switch_rng.binomial(unl_h, p_ha))
            fire_a = int(switch_rng.binomial(unl_a, p_ah))
            unl_h -= fire_h
            unl_a -= fire_a
            if up:
                done = pipe_h.popleft()
                pipe_h.append(fire_h)
                lock_h += fire_h - done
                unl_a += done
            else:
                unl_a += fire_h
            if down:
                done = pipe_a.popleft()
                pipe_a.append(fire_a)
                lock_a += fire_a - done
                unl_h += done
            else:
                unl_h += fire_a

        if step % stride == 0 or step == n_steps:
            record(slot, step)
            slot += 1
    return times, counts_h, counts_a


def _run_particles(params, x0, n, n_steps, dt, stride, seed, mode):
    k = params.k
    n1 = k + 1
    n_blocks = math.ceil(n / BLOCK_SIZE)
    init_rng, *block_rngs = _streams(seed, 1 + 2 * n_blocks)
    switch_rngs = block_rngs[:n_blocks]
    lock_rngs = block_rngs[n_blocks:]

    counts = _initial_counts(params, x0, n, init_rng)
    flat = np.repeat(np.arange(counts.size), counts)
    side = (flat >= n1).astype(np.int8)  # 0 = HDV mode, 1 = AV mode
    stage = np.where(side == 0, flat, flat - n1).astype(np.int32)
    up, down = params.upward_lockout, params.downward_lockout
    lock_steps = np.array([_lock_steps(params.t_lock_h, dt) if up else 0,
                           _lock_steps(params.t_lock_a, dt) if down else 0])
    has_lock = np.array([up, down])
    p_mu = np.array([-math.expm1(-params.mu_h * dt) if up else 1.0,
                     -math.expm1(-params.mu_a * dt) if down else 1.0])
    if mode == DETERMINISTIC_LOCKOUT:
        timer = np.zeros(n, dtype=np.int64)
        locked = stage > 0
        m = lock_steps[side]
        timer[locked] = np.maximum(1, np.rint(m[locked] * (k - stage[locked] + 1) / k)).astype(np.int64)

    n_rec = n_steps // stride + 1 + (1 if n_steps % stride else 0)
    counts_h = np.empty(n_rec, dtype=np.int64)
    counts_a = np.empty(n_rec, dtype=np.int64)
    times = np.empty(n_rec)

    def record(slot, step):
        times[slot] = step * dt
        counts_h[slot] = n - int(side.sum())
        counts_a[slot] = int(side.sum())

    record(0, 0)
    slot = 1
    blocks = [slice(b * BLOCK_SIZE, min(n, (b + 1) * BLOCK_SIZE)) for b in range(n_blocks)]
    for step in range(1, n_steps + 1):
        frac_h = 1.0 - side.sum() / n
        lam_ha, lam_ah = _rates(params, frac_h)
        p_switch = np.array([-math.expm1(-lam_ha * dt), -math.expm1(-lam_ah * dt)])
        for b, sl in enumerate(blocks):
            s = side[sl]
            u = switch_rngs[b].random(s.size)
            w = lock_rngs[b].random(s.size)
            if mode == ERLANG_STAGE:
                st = stage[sl]
                unlocked = st == 0
                fire = unlocked & (u < p_switch[s])
                advance = ~unlocked & (w < p_mu[s])
                st = st + advance
                finish = advance & (st > k)
                # without a lock chain a switch completes immediately
                instant = fire & ~has_lock[s]
                st = np.where(fire & has_lock[s], 1, st)
                flip = finish | instant
                st = np.where(flip, 0, st)
                side[sl] = np.where(flip, 1 - s, s)
                stage[sl] = st
            else:
                tm = timer[sl]
                unlocked = tm == 0
                fire = unlocked & (u < p_switch[s])
                counting = ~unlocked
                tm = tm - counting
                finish = counting & (tm == 0)
                instant = fire & ~has_lock[s]
                tm = np.where(fire & has_lock[s], lock_steps[s], tm)
                side[sl] = np.where(finish | instant, 1 - s, s)
                timer[sl] = tm
        if step % stride == 0 or step == n_steps:
            record(slot, step)
            slot += 1
    return times, counts_h, counts_a


def run_oracle(
    params: ModelParams,
    n: int,
    x0,
    horizon: float,
    dt: float | None = None,
    seed: int = 0,
    mode: str = ERLANG_STAGE,
    record_dt: float = 0.1,
    backend: str = "counts",
) -> OracleResult:
    """Simulate ``n`` particles and return aggregate HDV/AV-mode fractions over time."""
    ParticleEnsemble(n=n, rng_seed=seed, mode=mode)
    if dt is None:
        dt = default_dt(params, record_dt)
    stride, n_steps = _check_run(params, n, horizon, dt, record_dt)
    runner = {"counts": _run_counts, "particles": _run_particles}.get(backend)
    if runner is None:
        raise ValidationError(f"unknown backend {backend!r}")
    times, ch, ca = runner(params, x0, n, n_steps, dt, stride, seed, mode)
    return OracleResult(
        times=times, frac_h=ch / n, frac_a=ca / n, n=n, mode=mode, counts_h=ch, counts_a=ca
    )


def compare_modes(
    params: ModelParams,
    n: int,
    x0,
    horizon: float,
    dt: float | None = None,
    seed: int = 0,
    record_dt: float = 0.1,
    backend: str = "counts",
) -> ModeComparison:
    """Paired Erlang-stage and deterministic-lockout runs sharing switch draws."""
    kwargs = dict(dt=dt, seed=seed, record_dt=record_dt, backend=backend)
    erl = run_oracle(params, n, x0, horizon, mode=ERLANG_STAGE, **kwargs)
    det = run_oracle(params, n, x0, horizon, mode=DETERMINISTIC_LOCKOUT, **kwargs)
    return ModeComparison(times=erl.times, erlang=erl, deterministic=det)
