"""Standardized multivariate Laplace innovations.

The law has location zero and identity scatter matrix, so each component has
unit variance and distinct components are uncorrelated. Its density is

    g(z) = 2 / (2 pi)^(p/2) * (z'z / 2)^(v/2) * K_v(sqrt(2 z'z)),   v = 1 - p/2,

and a draw is obtained as ``sqrt(W) * Z`` with ``W ~ Exp(1)`` independent of
``Z ~ N(0, I_p)``.
"""

from dataclasses import dataclass
import math

import numpy as np
from scipy import special

from alqmle.bessel import log_bessel_k, order_for_dimension
from alqmle.exceptions import DomainError

__all__ = [
    "ORIGIN_CLAMP",
    "InnovationSpec",
    "InnovationSampler",
    "sample_innovations",
    "al_log_density",
    "al_density_normalization_check",
    "innovation_norm_moment",
    "estimate_norm_moment",
]

ORIGIN_CLAMP = 1e-12

_SEED_LIMIT = 2 ** 64


@dataclass(frozen=True)
class InnovationSpec:
    """Innovation dimension ``p`` and the 64-bit seed of its sampler."""

    p: int
    seed: int = 0

    def __post_init__(self):
        if int(self.p) != self.p or self.p < 1:
            raise DomainError(f"innovation dimension must be a positive integer, got {self.p}")
        if not 0 <= int(self.seed) < _SEED_LIMIT:
            raise DomainError(f"seed must fit in 64 unsigned bits, got {self.seed}")

    @property
    def order(self):
        return order_for_dimension(self.p)


class InnovationSampler:
    """Stateful sampler; successive :meth:`draw` calls continue one stream."""

    def __init__(self, spec):
        self.spec = spec
        self._rng = np.random.Generator(np.random.PCG64(int(spec.seed)))

    def draw(self, count):
        count = int(count)
        if count < 1:
            raise DomainError(f"count must be >= 1, got {count}")
        scale = np.sqrt(self._rng.standard_exponential(count))
        gauss = self._rng.standard_normal((count, self.spec.p))
        return scale[:, None] * gauss


def sample_innovations(spec, count):
    """Draw ``count`` i.i.d. innovations, shape ``(count, p)``.

    Deterministic given ``spec.seed``.
    """
    return InnovationSampler(spec).draw(count)


def _dimension(spec_or_p):
    return spec_or_p.p if isinstance(spec_or_p, InnovationSpec) else int(spec_or_p)


def al_log_density(spec_or_p, z, return_clamped=False):
    """Log density of the standardized Laplace law at ``z``.

    ``z`` has shape ``(..., p)``. For ``p >= 2`` the density diverges
    (integrably) at the origin; norms below :data:`ORIGIN_CLAMP` are raised to
    it and reported through the ``clamped`` mask when ``return_clamped`` is
    set. For ``p = 1`` the density is finite at 0 and no clamping happens.
    """
    p = _dimension(spec_or_p)
    z = np.asarray(z, dtype=float)
    if z.shape[-1:] != (p,):
        raise DomainError(f"expected trailing dimension {p}, got shape {z.shape}")
    v = order_for_dimension(p)
    sq = np.sum(z * z, axis=-1)
    if p == 1:
        clamped = np.zeros(sq.shape, dtype=bool)
        sq = np.maximum(sq, np.finfo(float).tiny)
    else:
        clamped = sq < ORIGIN_CLAMP ** 2
        sq = np.where(clamped, ORIGIN_CLAMP ** 2, sq)
    out = (math.log(2.0) - 0.5 * p * math.log(2.0 * math.pi)
           + 0.5 * v * np.log(0.5 * sq) + log_bessel_k(v, np.sqrt(2.0 * sq)))
    if np.ndim(out) == 0:
        out = float(out)
        clamped = bool(clamped)
    return (out, clamped) if return_clamped else out


def al_density_normalization_check(spec_or_p, limit=None, step=None):
    """Numerical mass of the density on a truncated grid.

    ``p = 1``: trapezoid rule on ``[-limit, limit]`` (defaults 12 and 1e-3).
    ``p = 2``: radial trapezoid on a geometric grid ``r in [1e-8, limit]``
    (default limit 15); ``step`` is then the number of radial points.
    """
    p = _dimension(spec_or_p)
    if p == 1:
        limit = 12.0 if limit is None else float(limit)
        step = 1e-3 if step is None else float(step)
        half = int(round(limit / step))
        x = np.arange(-half, half + 1) * step
        dens = np.exp(al_log_density(1, x[:, None]))
        return float(np.trapezoid(dens, x))
    if p == 2:
        limit = 15.0 if limit is None else float(limit)
        points = 40001 if step is None else int(step)
        r = np.geomspace(1e-8, limit, points)
        z = np.column_stack([r, np.zeros_like(r)])
        dens = np.exp(al_log_density(2, z))
        return float(np.trapezoid(2.0 * math.pi * r * dens, r))
    raise DomainError("grid normalization is implemented for p in {1, 2}; use Monte Carlo beyond")


def innovation_norm_moment(p, r):
    """``(E ||zeta||^r)^(1/r)`` in closed form.

    Uses ``E W^(r/2) = Gamma(r/2 + 1)`` and
    ``E ||Z||^r = 2^(r/2) Gamma((p + r)/2) / Gamma(p/2)``.
    """
    p = int(p)
    r = float(r)
    if r <= 0:
        raise DomainError("moment order must be positive")
    log_m = (special.gammaln(0.5 * r + 1.0) + 0.5 * r * math.log(2.0)
             + special.gammaln(0.5 * (p + r)) - special.gammaln(0.5 * p))
    return math.exp(log_m / r)


def estimate_norm_moment(p, r, count=10 ** 6, seed=0):
    """Monte Carlo estimate of ``(E ||zeta||^r)^(1/r)``."""
    z = sample_innovations(InnovationSpec(p, seed), count)
    norms = np.sqrt(np.sum(z * z, axis=1))
    return float(np.mean(norms ** r) ** (1.0 / r))
