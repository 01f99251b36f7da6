"""Erlang-k approximation of a deterministic lockout."""
from __future__ import annotations

import math
import sys
from dataclasses import dataclass

from scipy import integrate

from .errors import NumericalError, ValidationError

K_CAP = 100_000
_EPS = 1e-16
_TINY = sys.float_info.min / _EPS


@dataclass(frozen=True)
class ErlangSpec:
    k: int
    rate_mu: float

    @property
    def mean(self) -> float:
        return self.k / self.rate_mu

    @property
    def variance(self) -> float:
        return self.k / self.rate_mu**2


def design_rate(k: int, t_lock: float) -> ErlangSpec:
    """Stage rate ``k / t_lock`` so that the mean sojourn equals ``t_lock``."""
    if isinstance(k, bool) or int(k) != k or k < 1:
        raise ValidationError(f"k must be a positive integer, got {k!r}")
    if not (t_lock > 0 and math.isfinite(t_lock)):
        raise ValidationError(f"t_lock must be positive, got {t_lock!r}")
    return ErlangSpec(k=int(k), rate_mu=k / t_lock)


def _series(a, x, max_iter):
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(max_iter):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            return total * math.exp(-x + a * math.log(x) - math.lgamma(a))
    raise NumericalError(f"incomplete gamma series did not converge (a={a}, x={x})")


def _continued_fraction(a, x, max_iter):
    # modified Lentz for the upper tail Q(a, x)
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, max_iter + 1):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h
    raise NumericalError(f"incomplete gamma continued fraction did not converge (a={a}, x={x})")


def _max_iter(a):
    # both expansions need O(sqrt(a)) terms near the transition x ~ a
    return 1000 + 100 * int(math.sqrt(a) + 1)


def regularized_gamma_p(a: float, x: float) -> float:
    """Lower regularized incomplete gamma ``P(a, x)``."""
    if a <= 0:
        raise ValidationError("a must be positive")
    if x < 0:
        raise ValidationError("x must be nonnegative")
    if x == 0:
        return 0.0
    max_iter = _max_iter(a)
    if x < a + 1.0:
        return _series(a, x, max_iter)
    return 1.0 - _continued_fraction(a, x, max_iter)


def regularized_gamma_q(a: float, x: float) -> float:
    """Upper tail ``1 - P(a, x)`` without cancellation for large ``x``."""
    if x == 0:
        return 1.0
    max_iter = _max_iter(a)
    if x < a + 1.0:
        return 1.0 - _series(a, x, max_iter)
    return _continued_fraction(a, x, max_iter)


def erlang_cdf(spec: ErlangSpec, t: float) -> float:
    if t < 0:
        raise ValidationError(f"t must be nonnegative, got {t!r}")
    return regularized_gamma_p(spec.k, spec.rate_mu * t)


def erlang_pdf(spec: ErlangSpec, t: float) -> float:
    if t < 0:
        return 0.0
    if t == 0:
        return spec.rate_mu if spec.k == 1 else 0.0
    x = spec.rate_mu * t
    return spec.rate_mu * math.exp((spec.k - 1) * math.log(x) - x - math.lgamma(spec.k))


def wasserstein_to_dirac(spec: ErlangSpec) -> float:
    """W1 distance between Erlang-k and a point mass at its mean.

    Integrates ``|F(t) - 1{t >= T}|`` with the integral split at ``T``.
    """
    t_lock = spec.mean
    sd = math.sqrt(spec.variance)
    quad_kw = dict(epsabs=1e-10, epsrel=1e-10, limit=200)
    below, _ = integrate.quad(lambda t: erlang_cdf(spec, t), 0.0, t_lock, **quad_kw)
    # the upper tail is negligible far past the mean; finish with an infinite piece
    upper = t_lock + 40.0 * sd
    above, _ = integrate.quad(
        lambda t: regularized_gamma_q(spec.k, spec.rate_mu * t), t_lock, upper, **quad_kw
    )
    tail, _ = integrate.quad(
        lambda t: regularized_gamma_q(spec.k, spec.rate_mu * t), upper, math.inf, **quad_kw
    )
    return below + above + tail


def choose_k(t_lock: float, threshold: float, k_cap: int = K_CAP) -> int:
    """Smallest ``k`` whose W1 distance to the deterministic lockout is <= threshold."""
    if not threshold > 0:
        raise ValidationError("threshold must be positive")

    def w1(k):
        return wasserstein_to_dirac(design_rate(k, t_lock))

    probed = {}

    def ok(k):
        probed[k] = w1(k)
        return probed[k] <= threshold

    if ok(1):
        return 1
    lo, hi = 1, 2
    while not ok(hi):
        lo = hi
        hi *= 2
        if hi > k_cap:
            if ok(k_cap):
                hi = k_cap
                break
            raise NumericalError(f"threshold {threshold} not reached for k <= {k_cap}")
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid
    ks = sorted(probed)
    values = [probed[k] for k in ks]
    if any(b > a for a, b in zip(values, values[1:])):
        raise NumericalError("W1 distance not monotone in k on the probed points")
    return hi
