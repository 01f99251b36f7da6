"""Leader-dependent mode-switching model of partially automated vehicles.

The state is a distribution of PAVs over ``2(k+1)`` states::

    [H_0, H_1, ..., H_k, A_0, A_1, ..., A_k]

``H_0`` / ``A_0`` are the unlocked HDV / AV modes. ``H_1..H_k`` are the
Erlang stages of the upward lockout (still driven in HDV mode) and
``A_1..A_k`` those of the downward lockout. Leaving ``H_k`` lands in
``A_0`` and leaving ``A_k`` lands in ``H_0``.

Switching rates out of the unlocked states depend on the leader type
through ``q_hdv``, the probability that the vehicle ahead is an HDV,
which itself depends on the state. The drift is therefore bilinear:
``dx/dt = [A0 + q_hdv(x) A1 + (1 - q_hdv(x)) A2] x``.

A zero lockout removes the corresponding stage chain (switching becomes
immediate); its stage coordinates are kept in the vector but carry no
dynamics.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import AnalysisCapError, SimplexError, ValidationError

#: Largest stage count for which dense generator matrices are built.
ANALYSIS_K_CAP = 32
#: Tolerance on the simplex constraints for inputs.
SIMPLEX_TOL = 1e-9


@dataclass(frozen=True)
class ModelParams:
    """Transition rates, lockout durations and fleet composition.

    ``lambda1``/``lambda2`` are the HDV->AV / AV->HDV rates when the leader
    is an HDV, ``lambda3``/``lambda4`` the same when the leader is an AV.
    The defaults use leader-dependent rates (the example setting of the
    stability study) with 3 s lockouts, ``k = 200`` and ``gamma = 0.2``.
    """

    lambda1: float = 0.1
    lambda2: float = 0.15
    lambda3: float = 0.9
    lambda4: float = 0.05
    gamma: float = 0.2
    k: int = 200
    t_lock_h: float = 3.0
    t_lock_a: float = 3.0

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3", "lambda4"):
            value = getattr(self, name)
            if not (math.isfinite(value) and 0.0 < value <= 1.0):
                raise ValidationError(f"{name} must lie in (0, 1], got {value!r}")
        if not (0.0 <= self.gamma <= 1.0):
            raise ValidationError(f"gamma must lie in [0, 1], got {self.gamma!r}")
        if isinstance(self.k, bool) or int(self.k) != self.k or self.k < 1:
            raise ValidationError(f"k must be a positive integer, got {self.k!r}")
        object.__setattr__(self, "k", int(self.k))
        for name in ("t_lock_h", "t_lock_a"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0.0):
                raise ValidationError(f"{name} must be finite and >= 0, got {value!r}")

    @property
    def n_states(self) -> int:
        return 2 * (self.k + 1)

    @property
    def upward_lockout(self) -> bool:
        return self.t_lock_h > 0.0

    @property
    def downward_lockout(self) -> bool:
        return self.t_lock_a > 0.0

    @property
    def mu_h(self) -> float:
        """Stage rate of the upward lockout chain (inf without lockout)."""
        return self.k / self.t_lock_h if self.upward_lockout else math.inf

    @property
    def mu_a(self) -> float:
        return self.k / self.t_lock_a if self.downward_lockout else math.inf

    @property
    def leader_independent(self) -> bool:
        return self.lambda1 == self.lambda3 and self.lambda2 == self.lambda4

    def max_rate(self) -> float:
        """Largest finite rate in the model (fastest linear mode)."""
        rates = [self.lambda1, self.lambda2, self.lambda3, self.lambda4]
        rates += [mu for mu in (self.mu_h, self.mu_a) if math.isfinite(mu)]
        return max(rates)

    def live_mask(self) -> np.ndarray:
        """Boolean mask of coordinates that carry dynamics."""
        n = self.k + 1
        mask = np.ones(2 * n, dtype=bool)
        if not self.upward_lockout:
            mask[1:n] = False
        if not self.downward_lockout:
            mask[n + 1 :] = False
        return mask

    def replace(self, **changes) -> "ModelParams":
        fields = {name: getattr(self, name) for name in self.__dataclass_fields__}
        fields.update(changes)
        return ModelParams(**fields)


def leader_independent_params(lambda_ha, lambda_ah, **kwargs) -> ModelParams:
    """Parameters whose switching rates ignore the leader type."""
    return ModelParams(
        lambda1=lambda_ha, lambda2=lambda_ah, lambda3=lambda_ha, lambda4=lambda_ah, **kwargs
    )


@dataclass(frozen=True, eq=False)
class StateVector:
    """Fractions of PAVs over the ``2(k+1)`` mode/stage states."""

    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float).ravel()
        if values.size < 4 or values.size % 2:
            raise SimplexError(f"state length must be 2(k+1) with k >= 1, got {values.size}")
        check_simplex(values)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_parts(cls, x_h, x_a) -> "StateVector":
        x_h = np.asarray(x_h, dtype=float)
        x_a = np.asarray(x_a, dtype=float)
        if x_h.shape != x_a.shape:
            raise SimplexError("x_h and x_a must have the same length")
        return cls(np.concatenate([x_h, x_a]))

    @classmethod
    def initial(cls, k: int, frac_h0: float = 0.5, frac_a0: float = 0.5) -> "StateVector":
        """All PAVs unlocked, split between ``H_0`` and ``A_0``."""
        values = np.zeros(2 * (k + 1))
        values[0] = frac_h0
        values[k + 1] = frac_a0
        return cls(values)

    @classmethod
    def uniform(cls, params: ModelParams) -> "StateVector":
        """Uniform over the live coordinates of ``params``."""
        mask = params.live_mask()
        return cls(mask / mask.sum())

    @property
    def k(self) -> int:
        return self.values.size // 2 - 1

    @property
    def x_h(self) -> np.ndarray:
        return self.values[: self.k + 1]

    @property
    def x_a(self) -> np.ndarray:
        return self.values[self.k + 1 :]

    def sums(self) -> tuple[float, float]:
        return float(self.x_h.sum()), float(self.x_a.sum())

    def __eq__(self, other):
        if not isinstance(other, StateVector):
            return NotImplemented
        return np.array_equal(self.values, other.values)

    def __repr__(self):
        sh, sa = self.sums()
        return f"StateVector(k={self.k}, sum_h={sh:.6g}, sum_a={sa:.6g})"


@dataclass(frozen=True)
class LeaderProbabilities:
    q_hdv: float
    q_av: float


@dataclass(frozen=True, eq=False)
class GeneratorDecomposition:
    """Constant matrices with ``A(q) = a0 + q a1 + (1 - q) a2``."""

    a0: np.ndarray
    a1: np.ndarray
    a2: np.ndarray

    def at(self, q_hdv: float) -> np.ndarray:
        return self.a0 + q_hdv * self.a1 + (1.0 - q_hdv) * self.a2


def check_simplex(values: np.ndarray, tol: float = SIMPLEX_TOL) -> None:
    if not np.all(np.isfinite(values)):
        raise SimplexError("state contains non-finite entries")
    low = values.min()
    if low < -tol:
        raise SimplexError(f"state has negative entry {low:.3g}")
    total = values.sum()
    if abs(total - 1.0) > tol:
        raise SimplexError(f"state sums to {total!r}, expected 1")


def as_array(params: ModelParams, x) -> np.ndarray:
    """Flat state array for ``params``, validated against the simplex."""
    if isinstance(x, StateVector):
        values = x.values
    else:
        values = np.asarray(x, dtype=float)
        check_simplex(values)
    if values.shape != (params.n_states,):
        raise SimplexError(
            f"state has shape {values.shape}, expected ({params.n_states},) for k={params.k}"
        )
    return values


def leader_probabilities(params: ModelParams, x) -> LeaderProbabilities:
    values = as_array(params, x)
    n = params.k + 1
    q_hdv = params.gamma + (1.0 - params.gamma) * values[:n].sum()
    q_av = (1.0 - params.gamma) * values[n:].sum()
    # the two sums agree with 1 - other only up to the simplex tolerance
    q_hdv = min(max(q_hdv, 0.0), 1.0)
    return LeaderProbabilities(q_hdv=q_hdv, q_av=1.0 - q_hdv)


def effective_rates(params: ModelParams, q: LeaderProbabilities) -> tuple[float, float]:
    """Leader-weighted switching rates ``(rate_h_to_a, rate_a_to_h)``."""
    rate_h_to_a = q.q_hdv * params.lambda1 + q.q_av * params.lambda3
    rate_a_to_h = q.q_hdv * params.lambda2 + q.q_av * params.lambda4
    return rate_h_to_a, rate_a_to_h


def q_hdv_of(params: ModelParams, values: np.ndarray) -> float:
    """Unvalidated ``q_hdv`` for internal hot loops."""
    return params.gamma + (1.0 - params.gamma) * values[: params.k + 1].sum()


def drift_array(params: ModelParams, values: np.ndarray, q_hdv: float | None = None) -> np.ndarray:
    """Matrix-free drift on a raw array, O(k) per call.

    ``q_hdv`` may be pinned to evaluate the linear system ``A(q) x`` at a
    fixed leader mix; by default it is taken from ``values``.
    """
    k = params.k
    n = k + 1
    if q_hdv is None:
        q_hdv = params.gamma + (1.0 - params.gamma) * values[:n].sum()
    q_av = 1.0 - q_hdv
    lam_ha = q_hdv * params.lambda1 + q_av * params.lambda3
    lam_ah = q_hdv * params.lambda2 + q_av * params.lambda4

    h = values[:n]
    a = values[n:]
    out = np.zeros_like(values)
    dh = out[:n]
    da = out[n:]

    flow_ha = lam_ha * h[0]
    flow_ah = lam_ah * a[0]
    dh[0] -= flow_ha
    da[0] -= flow_ah

    if params.upward_lockout:
        mu_h = params.mu_h
        dh[1] += flow_ha
        dh[1:] -= mu_h * h[1:]
        dh[2:] += mu_h * h[1:-1]
        da[0] += mu_h * h[k]
    else:
        da[0] += flow_ha

    if params.downward_lockout:
        mu_a = params.mu_a
        da[1] += flow_ah
        da[1:] -= mu_a * a[1:]
        da[2:] += mu_a * a[1:-1]
        dh[0] += mu_a * a[k]
    else:
        dh[0] += flow_ah
    return out


def drift(params: ModelParams, x) -> np.ndarray:
    """Right-hand side ``A(x) x`` of the nonlinear system."""
    return drift_array(params, as_array(params, x))


def _require_cap(params: ModelParams) -> None:
    if params.k > ANALYSIS_K_CAP:
        raise AnalysisCapError(
            f"dense analysis is limited to k <= {ANALYSIS_K_CAP}, got k={params.k}"
        )


def decompose(params: ModelParams) -> GeneratorDecomposition:
    """Dense ``A0``, ``A1`` (HDV leader) and ``A2`` (AV leader)."""
    _require_cap(params)
    k = params.k
    n = k + 1
    dim = 2 * n
    a0 = np.zeros((dim, dim))
    a1 = np.zeros((dim, dim))
    a2 = np.zeros((dim, dim))
    h0, a_0 = 0, n

    # where a switch out of an unlocked state lands
    up_target = 1 if params.upward_lockout else a_0
    down_target = n + 1 if params.downward_lockout else h0

    for mat, lam_up, lam_down in ((a1, params.lambda1, params.lambda2), (a2, params.lambda3, params.lambda4)):
        mat[h0, h0] = -lam_up
        mat[up_target, h0] = lam_up
        mat[a_0, a_0] = -lam_down
        mat[down_target, a_0] = lam_down

    if params.upward_lockout:
        mu = params.mu_h
        for i in range(1, n):
            a0[i, i] = -mu
            a0[i + 1 if i < k else a_0, i] = mu
    if params.downward_lockout:
        mu = params.mu_a
        for i in range(n + 1, dim):
            a0[i, i] = -mu
            a0[i + 1 if i < dim - 1 else h0, i] = mu
    return GeneratorDecomposition(a0, a1, a2)


def assemble_generator(params: ModelParams, q_hdv: float) -> np.ndarray:
    """Dense generator ``A0 + q A1 + (1 - q) A2`` at a fixed leader mix."""
    if not (0.0 <= q_hdv <= 1.0):
        raise ValidationError(f"q_hdv must lie in [0, 1], got {q_hdv!r}")
    return decompose(params).at(q_hdv)
