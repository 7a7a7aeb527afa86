r"""Modified Bessel function of the third kind, :math:`K_v(u)`.

Orders met by the likelihood are :math:`v = 1 - p/2`, so for odd ``p`` the
order is a half-integer and :math:`K_v` has the terminating closed form

.. math::
    K_{n+1/2}(u) = \sqrt{\frac{\pi}{2u}} e^{-u}
        \sum_{k=0}^{n} \frac{(n+k)!}{k!\,(n-k)!\,(2u)^k}.

Other orders go through

* a trapezoid rule on :math:`K_v(u) = \int_0^\infty e^{-u\cosh t}\cosh(vt)\,dt`
  (exponentially convergent, evaluated on the log scale),
* a piecewise Chebyshev table in :math:`\log u` built once per order from
  that rule, which is what the likelihood hot path uses, and
* the large-argument expansion for :math:`u > 30`.

:func:`bessel_k_quadrature` evaluates the definition

.. math::
    K_v(u) = \tfrac12 (u/2)^v \int_0^\infty s^{-v-1} e^{-s - u^2/(4s)}\,ds

by adaptive quadrature after substituting :math:`s = e^t`. It shares no code
with the main path and serves as the reference in tests.
"""

import functools
import math

import numba
import numpy as np
from numpy.polynomial import chebyshev
from scipy import integrate, special

from alqmle.exceptions import DomainError

__all__ = [
    "U_ASYMPTOTIC",
    "order_for_dimension",
    "bessel_k",
    "log_bessel_k",
    "bessel_bound_constant",
    "bessel_k_quadrature",
    "log_bessel_k_quadrature",
    "log_bessel_k_trapezoid",
]

U_ASYMPTOTIC = 30.0

_TRAPEZOID_STEP = 0.2
_TRAPEZOID_TAIL = 50.0  # integrand ratio e^-50 at the cut

_TABLE_LOG_U_MIN = math.log(1e-10)
_TABLE_LOG_U_MAX = math.log(U_ASYMPTOTIC)
_TABLE_PIECES = 64
_TABLE_DEGREE = 14

_LOG_FLOAT_MAX = math.log(np.finfo(float).max)


def order_for_dimension(p):
    """Bessel order ``1 - p/2`` attached to a ``p``-dimensional innovation."""
    p = int(p)
    if p < 1:
        raise DomainError(f"innovation dimension must be >= 1, got {p}")
    return 1.0 - p / 2.0


def _as_argument(u):
    arr = np.asarray(u, dtype=float)
    if arr.size and not np.all(arr > 0.0):
        raise DomainError("Bessel argument must be > 0")
    return arr


def _is_half_integer(v):
    twice = 2.0 * v
    return twice == math.floor(twice) and int(twice) % 2 != 0


def _log_k_half_integer(v, u):
    n = int(round(abs(v) - 0.5))
    base = 0.5 * np.log(np.pi / (2.0 * u)) - u
    if n == 0:
        return base
    k = np.arange(n + 1)
    log_coef = (special.gammaln(n + k + 1) - special.gammaln(k + 1)
                - special.gammaln(n - k + 1))
    z = 0.5 / u
    poly = np.zeros_like(u)
    with np.errstate(over="ignore", invalid="ignore"):
        for c in np.exp(log_coef)[::-1]:
            poly = poly * z + c
        out = base + np.log(poly)
    bad = ~np.isfinite(out)
    if bad.any():
        log_terms = log_coef[:, None] - np.outer(k, np.log(2.0 * u[bad]))
        out[bad] = base[bad] + special.logsumexp(log_terms, axis=0)
    return out


def _log_k_asymptotic(v, u, max_terms=60):
    # Hankel expansion; summation stops per element at the smallest term.
    mu = 4.0 * v * v
    total = np.ones_like(u)
    term = np.ones_like(u)
    active = np.ones(u.shape, dtype=bool)
    for k in range(1, max_terms + 1):
        new = term * (mu - (2 * k - 1) ** 2) / (8.0 * k * u)
        grow = np.abs(new) >= np.abs(term)
        active &= ~(grow & (k > 1))
        if not active.any():
            break
        term = np.where(active, new, term)
        total = total + np.where(active, new, 0.0)
        active &= np.abs(new) > 1e-17 * np.abs(total)
    return 0.5 * np.log(np.pi / (2.0 * u)) - u + np.log(total)


def log_bessel_k_trapezoid(v, u, step=_TRAPEZOID_STEP):
    r"""``log K_v(u)`` by the trapezoid rule on the hyperbolic-cosine form.

    Computes :math:`-u + \log\int_0^T e^{-u(\cosh t - 1)}\cosh(vt)\,dt`
    with the cut ``T`` chosen per element so the integrand has fallen by
    :math:`e^{-50}`. All elements share the same node count.
    """
    u = _as_argument(u)
    scalar = u.ndim == 0
    u = np.atleast_1d(u)
    a = abs(float(v))
    cut0 = np.arccosh(1.0 + _TRAPEZOID_TAIL / u)
    cut = np.arccosh(1.0 + (_TRAPEZOID_TAIL + a * cut0) / u)
    nodes = max(int(math.ceil(cut.max() / step)), 8)
    h = cut / nodes
    t = h[:, None] * np.arange(nodes + 1)
    expo = -2.0 * u[:, None] * np.sinh(0.5 * t) ** 2
    if a:
        expo = expo + a * t + np.log1p(np.exp(-2.0 * a * t)) - math.log(2.0)
    weights = np.ones(nodes + 1)
    weights[0] = weights[-1] = 0.5
    # log-space sum: exp(a t) overflows for tiny u where the cut is long
    out = -u + special.logsumexp(expo, axis=1, b=weights) + np.log(h)
    return float(out[0]) if scalar else out


class _LogKTable:
    """Piecewise Chebyshev interpolant of ``log K_v(u) + u`` in ``log u``."""

    def __init__(self, v):
        self.v = v
        self.lo = _TABLE_LOG_U_MIN
        self.width = (_TABLE_LOG_U_MAX - _TABLE_LOG_U_MIN) / _TABLE_PIECES
        coefs = []
        for i in range(_TABLE_PIECES):
            left = self.lo + i * self.width

            def g(y, left=left):
                x = left + 0.5 * (y + 1.0) * self.width
                u = np.exp(x)
                return log_bessel_k_trapezoid(v, u) + u

            coefs.append(chebyshev.chebinterpolate(g, _TABLE_DEGREE))
        self.coefs = np.array(coefs)

    def __call__(self, u):
        return _clenshaw_pieces(self.coefs, self.lo, self.width, u)


@numba.njit(cache=True)
def _clenshaw_pieces(coefs, lo, width, u):
    pieces, top = coefs.shape
    out = np.empty(u.size)
    for e in range(u.size):
        pos = (math.log(u[e]) - lo) / width
        idx = min(max(int(math.floor(pos)), 0), pieces - 1)
        y = 2.0 * (pos - idx) - 1.0
        y2 = 2.0 * y
        b1 = 0.0
        b2 = 0.0
        for k in range(top - 1, 0, -1):
            b1, b2 = coefs[idx, k] + y2 * b1 - b2, b1
        out[e] = coefs[idx, 0] + y * b1 - b2 - u[e]
    return out


@functools.lru_cache(maxsize=16)
def _table(v):
    return _LogKTable(v)


def log_bessel_k(v, u):
    """Natural log of ``K_v(u)`` for ``u > 0``, free of overflow/underflow.

    Accepts a scalar or an array ``u``; the order ``v`` is a scalar.

    Raises
    ------
    DomainError
        If any ``u <= 0``.
    """
    u = _as_argument(u)
    scalar = u.ndim == 0
    u = np.atleast_1d(u)
    v = abs(float(v))
    if _is_half_integer(v):
        out = _log_k_half_integer(v, u)
    else:
        out = np.empty_like(u)
        big = u > U_ASYMPTOTIC
        tiny = u < math.exp(_TABLE_LOG_U_MIN)
        mid = ~(big | tiny)
        if big.any():
            out[big] = _log_k_asymptotic(v, u[big])
        if mid.any():
            out[mid] = _table(v)(u[mid])
        if tiny.any():
            out[tiny] = log_bessel_k_trapezoid(v, u[tiny])
    return float(out[0]) if scalar else out


def bessel_k(v, u):
    """``K_v(u)`` for ``u > 0``.

    Underflows to 0.0 for large ``u``; use :func:`log_bessel_k` there.

    Raises
    ------
    DomainError
        If any ``u <= 0``.
    OverflowError
        If ``K_v(u)`` exceeds the largest float (``u`` too small).
    """
    logk = log_bessel_k(v, u)
    if np.any(np.asarray(logk) > _LOG_FLOAT_MAX):
        raise OverflowError("K_v(u) overflows; use log_bessel_k")
    return np.exp(logk) if isinstance(logk, np.ndarray) else math.exp(logk)


def bessel_bound_constant(v):
    r"""Constant ``A(v) = Gamma(-v) / 2**(v+1)`` with ``K_v(u) <= A(v) u**v``.

    Valid for negative orders only: dropping :math:`e^{-u^2/4t}` from the
    integral definition leaves :math:`\int_0^\infty t^{-v-1}e^{-t}dt`.
    """
    v = float(v)
    if not v < 0.0:
        raise DomainError(f"bound constant needs v < 0, got {v}")
    return math.gamma(-v) / 2.0 ** (v + 1.0)


def log_bessel_k_quadrature(v, u):
    """Reference ``log K_v(u)`` from the integral definition (scalar ``u``)."""
    u = float(u)
    if not u > 0.0:
        raise DomainError("Bessel argument must be > 0")
    v = float(v)
    c = 0.25 * u * u

    def log_phi(t):
        return -v * t - math.exp(t) - c * math.exp(-t)

    # peak of the substituted integrand
    t_star = math.log(0.5 * (math.hypot(v, u) - v)) if v <= 0 else \
        math.log(0.5 * u * u / (math.hypot(v, u) + v))
    peak = log_phi(t_star)

    def f(t):
        return math.exp(log_phi(t) - peak)

    def edge(direction):
        # walk out until the integrand is below e^-60 of its peak
        step = 1.0
        t = t_star
        while log_phi(t + direction * step) - peak > -60.0:
            t += direction * step
            step *= 2.0
        return t + direction * step

    opts = dict(epsabs=0.0, epsrel=1e-13, limit=400)
    left, _ = integrate.quad(f, edge(-1.0), t_star, **opts)
    right, _ = integrate.quad(f, t_star, edge(1.0), **opts)
    return math.log(0.5) + v * math.log(0.5 * u) + peak + math.log(left + right)


def bessel_k_quadrature(v, u):
    """Reference ``K_v(u)`` from the integral definition (scalar ``u``)."""
    return math.exp(log_bessel_k_quadrature(v, u))
