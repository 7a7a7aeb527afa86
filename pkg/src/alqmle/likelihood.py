"""Laplace quasi-log-likelihood.

For residual ``r_t = X_t - f_t`` and scatter ``H_t = M_t M_t'`` the per-step
contribution is

    q_t = log K_v(sqrt(2 Q_t)) + (v/2) log Q_t - (1/2) log det H_t,
    Q_t = r_t' H_t^{-1} r_t,   v = 1 - p/2.

The exact log density of ``X_t`` given the past is ``q_t`` plus the
theta-free constant :func:`density_constant`; it is dropped because it does
not move the maximizer.

For ``p >= 2`` both Bessel terms diverge as ``Q_t -> 0``, so ``Q_t`` is raised
to :data:`Q_FLOOR` and the event counted; for ``p = 1`` the term is finite at
zero and only an exact zero is lifted (to the smallest positive double).

``full_loglik`` takes the values before ``t = 1`` from an explicit presample;
``truncated_loglik`` replaces them by zeros, which is the observable objective
the estimator maximizes.
"""

from dataclasses import dataclass
import math

import numba
import numpy as np

from alqmle.bessel import log_bessel_k, order_for_dimension
from alqmle.exceptions import DomainError, FactorizationError
from alqmle.models import theta2_membership

__all__ = [
    "Q_FLOOR",
    "LikelihoodEvaluation",
    "TruncationReport",
    "ProfilePoint",
    "density_constant",
    "lag_windows",
    "q_t",
    "full_loglik",
    "truncated_loglik",
    "profile_loglik",
    "truncation_report",
    "LikelihoodObjective",
]

Q_FLOOR = 1e-12


@dataclass
class LikelihoodEvaluation:
    """Value of the quasi-log-likelihood with per-step diagnostics.

    ``quad_form``, ``logdet`` and ``terms`` hold ``Q_t``, ``log det H_t`` and
    ``q_t`` for ``t = 1..n``; ``value`` is their left-to-right sum.
    """

    value: float
    quad_form: np.ndarray
    logdet: np.ndarray
    terms: np.ndarray
    truncated: bool
    clamp_count: int

    @property
    def n(self):
        return self.terms.size

    def records(self):
        return list(zip(self.quad_form.tolist(), self.logdet.tolist(), self.terms.tolist()))


@dataclass(frozen=True)
class TruncationReport:
    sup_diff: float
    mean_diff: float


@dataclass(frozen=True)
class ProfilePoint:
    theta: np.ndarray
    value: float
    clamp_count: int
    in_theta2: bool


def density_constant(p):
    """Constant turning ``q_t`` into the exact conditional log density."""
    v = order_for_dimension(p)
    return math.log(2.0) - 0.5 * p * math.log(2.0 * math.pi) - 0.5 * v * math.log(2.0)


def _as_series(series, p):
    x = np.asarray(series, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1) if p == 1 else x.reshape(1, -1)
    if x.ndim != 2 or x.shape[1] != p:
        raise DomainError(f"series must have shape (n, {p}), got {np.shape(series)}")
    if not np.all(np.isfinite(x)):
        raise DomainError("series has non-finite entries")
    return x


def lag_windows(series, q, presample=None):
    """Stack past windows: ``out[t, j - 1] = X_{t-j}`` (0-based ``t``).

    Values before the series come from the last ``q`` rows of ``presample``
    or are zero when it is ``None``.
    """
    n, p = series.shape
    if presample is None:
        head = np.zeros((q, p))
    else:
        if presample.shape[0] < q:
            raise DomainError(f"presample needs at least {q} rows, got {presample.shape[0]}")
        head = presample[presample.shape[0] - q:]
    padded = np.concatenate([head, series])
    out = np.empty((n, q, p))
    for j in range(1, q + 1):
        out[:, j - 1, :] = padded[q - j:q - j + n]
    return out


def _fmt(theta):
    return None if theta is None else np.asarray(theta).tolist()


@numba.njit(cache=True)
def _scatter_solve(f, m, x):
    """Per-step Cholesky of ``H_t = M_t M_t'`` and ``Q_t``, ``log det H_t``.

    Returns the 0-based index of the first non-positive pivot, or -1.
    """
    n, p = x.shape
    quad = np.empty(n)
    logdet = np.empty(n)
    h = np.empty((p, p))
    chol = np.zeros((p, p))
    z = np.empty(p)
    for t in range(n):
        for i in range(p):
            for j in range(i + 1):
                acc = 0.0
                for k in range(p):
                    acc += m[t, i, k] * m[t, j, k]
                h[i, j] = acc
        half_logdet = 0.0
        for j in range(p):
            s = h[j, j]
            for k in range(j):
                s -= chol[j, k] * chol[j, k]
            if not s > 0.0:
                return quad, logdet, t
            d = math.sqrt(s)
            chol[j, j] = d
            half_logdet += math.log(d)
            for i in range(j + 1, p):
                s = h[i, j]
                for k in range(j):
                    s -= chol[i, k] * chol[j, k]
                chol[i, j] = s / d
        acc = 0.0
        for i in range(p):
            s = x[t, i] - f[t, i]
            for k in range(i):
                s -= chol[i, k] * z[k]
            z[i] = s / chol[i, i]
            acc += z[i] * z[i]
        quad[t] = acc
        logdet[t] = 2.0 * half_logdet
    return quad, logdet, -1


def _evaluate(evaluate, lags, x, theta, truncated):
    n, p = x.shape
    if n == 0:
        empty = np.zeros(0)
        return LikelihoodEvaluation(0.0, empty, empty.copy(), empty.copy(), truncated, 0)
    v = order_for_dimension(p)
    f, m = evaluate(lags)
    quad, logdet, bad = _scatter_solve(f, m, x)
    if bad >= 0:
        raise FactorizationError(
            f"scatter matrix not positive definite at t={bad + 1} for theta={_fmt(theta)}",
            theta=_fmt(theta), t=int(bad) + 1)
    # p = 1 has a finite term at Q = 0, so only exact zeros are lifted there
    floor = Q_FLOOR if p >= 2 else np.finfo(float).tiny
    clamped = quad < floor
    qc = np.where(clamped, floor, quad)
    terms = log_bessel_k(v, np.sqrt(2.0 * qc)) + 0.5 * v * np.log(qc) - 0.5 * logdet
    value = float(np.cumsum(terms)[-1])
    return LikelihoodEvaluation(value, quad, logdet, terms, truncated, int(clamped.sum()))


def q_t(family, theta, window, x_t):
    """Single contribution ``q_t`` for one past window (``q x p``, most
    recent first) and observation ``x_t``."""
    window = np.asarray(window, dtype=float).reshape(1, family.q, family.p)
    x = np.asarray(x_t, dtype=float).reshape(1, family.p)
    theta = family.check_theta(theta)
    return float(_evaluate(family.bind(theta), window, x, theta, False).terms[0])


def full_loglik(family, theta, series, presample):
    """``L_n(theta)`` with the past before ``t = 1`` taken from ``presample``."""
    x = _as_series(series, family.p)
    pre = _as_series(presample, family.p)
    theta = family.check_theta(theta)
    lags = lag_windows(x, family.q, pre)
    return _evaluate(family.bind(theta), lags, x, theta, False)


def truncated_loglik(family, theta, series):
    """Observable ``L^_n(theta)`` with zero values before ``t = 1``."""
    x = _as_series(series, family.p)
    theta = family.check_theta(theta)
    return _evaluate(family.bind(theta), lag_windows(x, family.q), x, theta, True)


def profile_loglik(family, series, grid, presample=None):
    """Evaluate the likelihood over a grid of parameter vectors.

    Uses the truncated likelihood, or the full one when a presample is
    given. Points outside Theta(2) are evaluated and flagged.
    """
    objective = LikelihoodObjective(family, series, presample)
    out = []
    for theta in grid:
        theta = family.check_theta(theta)
        ev = objective.evaluate(theta)
        member = theta2_membership(family, theta).member
        out.append(ProfilePoint(theta, ev.value, ev.clamp_count, member))
    return out


def truncation_report(family, thetas, series, presample):
    """Gap between truncated and full likelihood over parameter vectors.

    ``sup_diff`` is the largest ``|q^_t - q_t|`` and ``mean_diff`` the largest
    ``|L^_n - L_n| / n`` over ``thetas``.
    """
    x = _as_series(series, family.p)
    sup_diff = 0.0
    mean_diff = 0.0
    for theta in thetas:
        full = full_loglik(family, theta, x, presample)
        trunc = truncated_loglik(family, theta, x)
        if x.shape[0]:
            gap = trunc.terms - full.terms
            sup_diff = max(sup_diff, float(np.max(np.abs(gap))))
            # summing per-step gaps avoids cancelling two large totals
            mean_diff = max(mean_diff, abs(float(np.cumsum(gap)[-1])) / x.shape[0])
    return TruncationReport(sup_diff, mean_diff)


class LikelihoodObjective:
    """Likelihood of a fixed series as a function of theta.

    Builds the lag windows once; every call re-evaluates ``f``, ``M`` and the
    factorization at the new parameter.
    """

    def __init__(self, family, series, presample=None):
        self.family = family
        self.series = _as_series(series, family.p)
        self.truncated = presample is None
        pre = None if presample is None else _as_series(presample, family.p)
        self.lags = lag_windows(self.series, family.q, pre)

    def evaluate(self, theta):
        theta = self.family.check_theta(theta)
        return _evaluate(self.family.bind(theta), self.lags, self.series, theta, self.truncated)

    def __call__(self, theta):
        return self.evaluate(theta).value
