"""Equilibria of the mode-switching system.

The primary route iterates the self-map ``T(x) = x + alpha * F(x)`` on the
simplex, then polishes with damped Newton on the reduced system obtained by
eliminating the last AV lock stage through the conservation constraint.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, ValidationError
from .model import (
    ModelParams,
    StateVector,
    _require_cap,
    as_array,
    assemble_generator,
    drift_array,
)

FD_STEP = 1e-7


@dataclass(frozen=True, eq=False)
class ReducedSystem:
    """Affine system ``dy/dt = a_prime @ y + c`` on the retained coordinates.

    ``kept`` lists the retained coordinates of the full state in order;
    ``eliminated_index`` is reconstructed as one minus their sum.
    """

    a_prime: np.ndarray
    c: np.ndarray
    eliminated_index: int
    kept: np.ndarray

    def rhs(self, y: np.ndarray) -> np.ndarray:
        return self.a_prime @ y + self.c


@dataclass(frozen=True, eq=False)
class EquilibriumResult:
    x_star: StateVector
    residual_inf: float
    iterations: int
    method: str

    def to_record(self, params: ModelParams) -> dict:
        return {
            "params": {name: getattr(params, name) for name in params.__dataclass_fields__},
            "x_star": [float(v) for v in self.x_star.values],
            "residual": float(self.residual_inf),
            "iterations": int(self.iterations),
            "method": self.method,
        }

    def to_json(self, params: ModelParams) -> str:
        return json.dumps(self.to_record(params), indent=2, sort_keys=True)


def eliminated_index(params: ModelParams) -> int:
    """Last AV lock stage, or ``A_0`` when the downward chain is absent."""
    return params.n_states - 1 if params.downward_lockout else params.k + 1


def kept_indices(params: ModelParams) -> np.ndarray:
    mask = params.live_mask()
    mask[eliminated_index(params)] = False
    return np.flatnonzero(mask)


def alpha_max(params: ModelParams) -> float:
    """Largest admissible self-map step, ``0.5 / max |diag A(q)|`` over q in {0, 1}."""
    # the diagonal of A(0) and A(1) holds -lambda_i and the stage rates
    return 0.5 / params.max_rate()


def fixed_point_map(params: ModelParams, x, alpha: float) -> StateVector:
    """``x + alpha * drift(x)``; stays on the simplex for ``alpha <= alpha_max``."""
    cap = alpha_max(params)
    if not (0.0 <= alpha <= cap * (1 + 1e-12)):
        raise ValidationError(f"alpha={alpha!r} outside [0, {cap!r}]")
    y = as_array(params, x)
    return StateVector(y + alpha * drift_array(params, y))


def flow_balance_equilibrium(params: ModelParams) -> StateVector:
    """Closed-form equilibrium for leader-independent rates.

    Around the H -> A -> H cycle the stationary flow ``f`` is the same
    through every state, so each occupancy is ``f`` times the mean sojourn
    and ``f`` is one over the mean cycle time.
    """
    if not params.leader_independent:
        raise ValidationError("closed form requires leader-independent rates")
    lam_ha, lam_ah = params.lambda1, params.lambda2
    flow = 1.0 / (1.0 / lam_ha + 1.0 / lam_ah + params.t_lock_h + params.t_lock_a)
    k = params.k
    x = np.zeros(params.n_states)
    x[0] = flow / lam_ha
    x[k + 1] = flow / lam_ah
    if params.upward_lockout:
        x[1 : k + 1] = flow / params.mu_h
    if params.downward_lockout:
        x[k + 2 :] = flow / params.mu_a
    return StateVector(x / x.sum())


def reduce_system(params: ModelParams, q_hdv: float) -> ReducedSystem:
    """Eliminate the redundant coordinate from ``A(q) x`` using ``sum(x) = 1``."""
    _require_cap(params)
    full = assemble_generator(params, q_hdv)
    n_idx = eliminated_index(params)
    kept = kept_indices(params)
    col = full[kept, n_idx]
    a_prime = full[np.ix_(kept, kept)] - col[:, None]
    return ReducedSystem(a_prime=a_prime, c=col.copy(), eliminated_index=n_idx, kept=kept)


def _expand(params, kept, n_idx, y):
    x = np.zeros(params.n_states)
    x[kept] = y
    x[n_idx] = 1.0 - y.sum()
    return x


def _reduced_residual(params, kept, n_idx, y):
    return drift_array(params, _expand(params, kept, n_idx, y))[kept]


def _newton_polish(params, x, tol, max_iter):
    """Damped Newton on the reduced nonlinear system.

    The Jacobian includes the dependence of ``q_hdv`` on the state and is
    built by forward differences.
    """
    kept = kept_indices(params)
    n_idx = eliminated_index(params)
    y = x[kept].copy()
    g = _reduced_residual(params, kept, n_idx, y)
    res = np.abs(drift_array(params, _expand(params, kept, n_idx, y))).max()
    iterations = 0
    for iterations in range(1, max_iter + 1):
        if res <= tol:
            break
        jac = np.empty((y.size, y.size))
        for j in range(y.size):
            yp = y.copy()
            yp[j] += FD_STEP
            jac[:, j] = (_reduced_residual(params, kept, n_idx, yp) - g) / FD_STEP
        try:
            step = np.linalg.solve(jac, -g)
        except np.linalg.LinAlgError:
            break
        t = 1.0
        improved = False
        while t > 1e-6:
            y_new = y + t * step
            x_new = _expand(params, kept, n_idx, y_new)
            if x_new.min() >= -1e-12:
                res_new = np.abs(drift_array(params, x_new)).max()
                if res_new < res:
                    improved = True
                    break
            t *= 0.5
        if not improved:
            break
        y, res = y_new, res_new
        g = _reduced_residual(params, kept, n_idx, y)
    x = np.clip(_expand(params, kept, n_idx, y), 0.0, None)
    x /= x.sum()
    return x, float(np.abs(drift_array(params, x)).max()), iterations


def solve_equilibrium(
    params: ModelParams,
    tol: float = 1e-10,
    max_iter: int = 200_000,
    x0=None,
    newton: bool = True,
    newton_switch: float = 1e-5,
) -> EquilibriumResult:
    """Equilibrium ``A(x*) x* = 0`` via the self-map, finished by Newton.

    Self-map iterations run from ``x0`` (uniform over live states by
    default) until the residual drops below ``newton_switch``; damped
    Newton then drives it below ``tol``. If Newton stalls, self-map
    iterations continue up to ``max_iter``.
    """
    if not tol > 0:
        raise ValidationError("tol must be positive")
    x = np.array(as_array(params, x0) if x0 is not None else StateVector.uniform(params).values)
    alpha = alpha_max(params)
    best_x, best_res = x, np.inf
    used = 0
    newton_tried = not newton
    while used < max_iter:
        f = drift_array(params, x)
        res = float(np.abs(f).max())
        if res < best_res:
            best_x, best_res = x, res
        if res <= tol:
            return EquilibriumResult(StateVector(x), res, used, "self-map")
        if not newton_tried and res <= max(newton_switch, tol):
            newton_tried = True
            xn, res_n, its = _newton_polish(params, x, tol, max_iter=50)
            used += its
            if res_n <= tol:
                return EquilibriumResult(StateVector(xn), res_n, used, "damped-newton")
            if res_n < res:
                x = xn
            continue
        x = x + alpha * f
        used += 1
    raise ConvergenceError(
        f"no equilibrium within {max_iter} iterations (best residual {best_res:.3g})",
        best_residual=best_res,
        best_state=best_x,
    )


def random_simplex_states(params: ModelParams, count: int, rng) -> list[StateVector]:
    """Uniformly distributed states on the live face of the simplex."""
    mask = params.live_mask()
    out = []
    for _ in range(count):
        x = np.zeros(params.n_states)
        x[mask] = rng.dirichlet(np.ones(mask.sum()))
        out.append(StateVector(x))
    return out


def multistart_equilibria(
    params: ModelParams,
    n_starts: int = 20,
    seed: int = 0,
    tol: float = 1e-10,
    distinct_tol: float = 1e-6,
) -> list[EquilibriumResult]:
    """Solve from random starts and return the distinct fixed points found."""
    rng = np.random.default_rng(seed)
    found: list[EquilibriumResult] = []
    for x0 in random_simplex_states(params, n_starts, rng):
        result = solve_equilibrium(params, tol=tol, x0=x0)
        if not any(
            np.abs(result.x_star.values - other.x_star.values).max() <= distinct_tol for other in found
        ):
            found.append(result)
    return found
