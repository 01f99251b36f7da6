"""Common quadratic Lyapunov certificates for the reduced system.

The reduced matrix ``A'(q)`` is affine in the leader mix ``q``, so the whole
family lies on the segment between the vertices ``M0 = A'(0)`` and
``M1 = A'(1)``. A single ``P > 0`` with ``Mi^T P + P Mi < 0`` at both
vertices certifies every matrix on the segment.

The search is done in-house by alternating projections on a lifted
problem with variables ``P`` and slacks ``S_i``:

* cone half: ``P >= shift I`` and ``S_i >= 0``, each by eigenvalue clipping
  (for ``S_i`` this works in the eigenbasis of the Lyapunov form);
* affine half: ``S_i = -(Mi^T P + P Mi) - shift I`` and ``trace(P) = n``,
  a small equality-constrained least-squares solve factored once.

A working shift larger than ``eps`` is tried first to keep the iterates
interior; the final stage uses ``eps`` itself.

Any certificate returned is re-verified with a symmetric eigensolver, so
a weakness of the search cannot produce a false positive.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from .equilibrium import reduce_system
from .errors import ValidationError
from .model import ModelParams, _require_cap

DEFAULT_EPS = 1e-6
DEFAULT_MAX_ITER = 5000
WORKING_SHIFTS = (1e-2, 1e-3)


@dataclass(frozen=True, eq=False)
class PolytopeVertices:
    m0: np.ndarray
    m1: np.ndarray

    @property
    def dimension(self) -> int:
        return self.m0.shape[0]

    def at(self, q_hdv: float) -> np.ndarray:
        return self.m0 + q_hdv * (self.m1 - self.m0)


@dataclass(frozen=True, eq=False)
class LyapunovCertificate:
    p: np.ndarray
    margin: float
    p_min_eig: float


@dataclass(frozen=True)
class SearchOutcome:
    """Result of :func:`search_common_lyapunov`.

    ``status`` is ``"feasible"``, ``"not-hurwitz"`` (a vertex fails the
    necessary condition; ``offending_real_part`` is its spectral abscissa)
    or ``"inconclusive"`` (no certificate within the iteration budget).
    """

    status: str
    certificate: LyapunovCertificate | None = None
    offending_real_part: float | None = None
    iterations: int = 0


@dataclass(frozen=True)
class HurwitzReport:
    q_values: np.ndarray
    abscissae: np.ndarray

    @property
    def worst_abscissa(self) -> float:
        return float(self.abscissae.max())

    @property
    def worst_q(self) -> float:
        return float(self.q_values[int(self.abscissae.argmax())])


def spectral_abscissa(m: np.ndarray) -> float:
    return float(np.linalg.eigvals(m).real.max())


def build_vertices(params: ModelParams) -> PolytopeVertices:
    _require_cap(params)
    return PolytopeVertices(
        m0=reduce_system(params, 0.0).a_prime,
        m1=reduce_system(params, 1.0).a_prime,
    )


def lyapunov_form(m: np.ndarray, p: np.ndarray) -> np.ndarray:
    form = m.T @ p + p @ m
    return 0.5 * (form + form.T)


def verify_certificate(vertices, p: np.ndarray) -> LyapunovCertificate:
    """Recompute margin and ``lambda_min(P)`` with a symmetric eigensolver."""
    if isinstance(vertices, PolytopeVertices):
        vertices = (vertices.m0, vertices.m1)
    p = 0.5 * (p + p.T)
    margin = min(-np.linalg.eigvalsh(lyapunov_form(m, p)).max() for m in vertices)
    return LyapunovCertificate(p=p, margin=float(margin), p_min_eig=float(np.linalg.eigvalsh(p).min()))


def _check_inputs(v: PolytopeVertices):
    m0 = np.asarray(v.m0, dtype=float)
    m1 = np.asarray(v.m1, dtype=float)
    if m0.ndim != 2 or m0.shape[0] != m0.shape[1] or m0.shape != m1.shape:
        raise ValidationError("vertices must be square matrices of equal size")
    if not (np.all(np.isfinite(m0)) and np.all(np.isfinite(m1))):
        raise ValidationError("vertices contain non-finite entries")
    return m0, m1


def _svec_basis(n):
    """Orthonormal basis of symmetric n x n matrices, shape (m, n, n)."""
    basis = []
    for a in range(n):
        for b in range(a, n):
            e = np.zeros((n, n))
            if a == b:
                e[a, a] = 1.0
            else:
                e[a, b] = e[b, a] = 1.0 / np.sqrt(2.0)
            basis.append(e)
    return np.array(basis)


class _LiftedProblem:
    """Affine half of the alternating projections.

    Variables are ``P`` and slacks ``S_i = -(Mi^T P + P Mi) - shift I``; the
    affine set ties the slacks to ``P`` and fixes ``trace(P) = n``. The cone
    half asks ``P >= shift I`` and ``S_i >= 0``.
    """

    def __init__(self, mats):
        n = mats[0].shape[0]
        self.n = n
        self.basis = _svec_basis(n)
        m = len(self.basis)
        # column j of K_i is vec(Mi^T E_j + E_j Mi)
        self.ops = [
            np.array([(mat.T @ e + e @ mat).ravel() for e in self.basis]).T for mat in mats
        ]
        self.trace_row = np.array([np.trace(e) for e in self.basis])
        kkt = np.zeros((m + 1, m + 1))
        kkt[:m, :m] = np.eye(m) + sum(op.T @ op for op in self.ops)
        kkt[:m, m] = self.trace_row
        kkt[m, :m] = self.trace_row
        self.kkt_inv = np.linalg.inv(kkt)
        self.eye_vec = np.eye(n).ravel()

    def to_matrix(self, p_vec):
        return np.tensordot(p_vec, self.basis, axes=1)

    def to_svec(self, p):
        return np.tensordot(self.basis, p, axes=([1, 2], [0, 1]))

    def project(self, p, slacks, shift):
        c = shift * self.eye_vec
        rhs = self.to_svec(p) - sum(op.T @ (c + s.ravel()) for op, s in zip(self.ops, slacks))
        sol = self.kkt_inv @ np.append(rhs, self.n)
        p_vec = sol[:-1]
        new_slacks = [(-(op @ p_vec) - c).reshape(self.n, self.n) for op in self.ops]
        return self.to_matrix(p_vec), new_slacks


def _clip_below(sym, floor):
    w, v = np.linalg.eigh(0.5 * (sym + sym.T))
    if w.min() >= floor:
        return sym
    return (v * np.maximum(w, floor)) @ v.T


def _alternate(mats, lifted, shift, eps, max_iter):
    """Alternate cone and affine projections until the certificate holds.

    A stage stops once the margin reaches half its working shift, so early
    stages return well-conditioned certificates rather than barely feasible
    ones.
    """
    wanted = max(eps, 0.5 * shift)
    n = lifted.n
    p = np.eye(n)
    slacks = [-lyapunov_form(m, p) - shift * np.eye(n) for m in mats]
    for it in range(1, max_iter + 1):
        p_hat = _clip_below(p, shift)
        s_hat = [_clip_below(s, 0.0) for s in slacks]
        p, slacks = lifted.project(p_hat, s_hat, shift)
        cert = verify_certificate(mats, p)
        if cert.margin >= wanted and cert.p_min_eig >= eps:
            return cert, it
    return None, max_iter


def search_common_lyapunov(
    v: PolytopeVertices, eps: float = DEFAULT_EPS, max_iter: int = DEFAULT_MAX_ITER
) -> SearchOutcome:
    """Search for ``P`` with ``trace(P) = dim``, ``P >= eps I`` and both forms ``<= -eps I``."""
    m0, m1 = _check_inputs(v)
    mats = (m0, m1)
    for m in mats:
        abscissa = spectral_abscissa(m)
        if abscissa >= 0:
            return SearchOutcome("not-hurwitz", offending_real_part=abscissa)
    lifted = _LiftedProblem(mats)
    used = 0
    # aim for a comfortable margin first; a larger shift keeps iterates interior
    shifts = [s for s in WORKING_SHIFTS if s > eps] + [eps]
    budget = max(1, max_iter // len(shifts))
    for i, shift in enumerate(shifts):
        steps = budget if i < len(shifts) - 1 else max_iter - used
        cert, its = _alternate(mats, lifted, shift, eps, steps)
        used += its
        if cert is not None:
            return SearchOutcome("feasible", certificate=cert, iterations=used)
    return SearchOutcome("inconclusive", iterations=used)


def find_common_lyapunov(
    v: PolytopeVertices, eps: float = DEFAULT_EPS, max_iter: int = DEFAULT_MAX_ITER
) -> LyapunovCertificate | None:
    """Certificate if one is found, else ``None`` (absence proves nothing)."""
    return search_common_lyapunov(v, eps, max_iter).certificate


def check_hurwitz_grid(params: ModelParams, n_samples: int = 21) -> HurwitzReport:
    """Spectral abscissa of ``A'(q)`` on a uniform grid of ``q`` in [0, 1]."""
    if n_samples < 1:
        raise ValidationError("n_samples must be positive")
    v = build_vertices(params)
    qs = np.array([0.0]) if n_samples == 1 else np.linspace(0.0, 1.0, n_samples)
    return HurwitzReport(q_values=qs, abscissae=np.array([spectral_abscissa(v.at(q)) for q in qs]))
