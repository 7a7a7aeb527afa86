"""Causal model families ``X_t = M_theta(past) zeta_t + f_theta(past)``.

Every family reads a finite number ``q`` of lags and is square: ``X_t`` and
``zeta_t`` are both ``p``-vectors and ``M_theta`` is ``p x p``. Past windows
are arrays of shape ``(n, q, p)`` whose slot ``j - 1`` holds ``X_{t-j}``.

Each family also reports the Lipschitz coefficients of ``f`` and ``M`` with
respect to each lag (Euclidean norm on vectors, spectral norm on matrices)
and a lower bound on ``det(M M')``. Identifiability is built into the
parameterizations (positive diagonal scale, positive ARCH intercepts); it is
not checked at runtime.
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass
import math

import numpy as np

from alqmle.exceptions import DomainError, NotInTheta2Error
from alqmle.innovations import InnovationSampler, InnovationSpec

__all__ = [
    "DEFAULT_BURN_IN",
    "Box",
    "ModelFamily",
    "VARFamily",
    "DiagonalARCHFamily",
    "ARARCHFamily",
    "FAMILY_NAMES",
    "make_family",
    "Theta2Report",
    "theta2_membership",
    "theta_r_membership",
    "simulate_from_innovations",
    "simulate_trajectory",
    "simulate_with_presample",
]

DEFAULT_BURN_IN = 500


@dataclass(frozen=True)
class Box:
    """Closed coordinate-wise bounds of the compact parameter set."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.array(self.lower, dtype=float).ravel()
        hi = np.array(self.upper, dtype=float).ravel()
        if lo.shape != hi.shape:
            raise DomainError("box bounds differ in length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise DomainError("box must be bounded")
        if np.any(lo > hi):
            raise DomainError("box is empty")
        lo.flags.writeable = False
        hi.flags.writeable = False
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self):
        return self.lower.size

    def contains(self, theta):
        theta = np.asarray(theta, dtype=float)
        return bool(np.all(theta >= self.lower) and np.all(theta <= self.upper))

    def clip(self, theta):
        return np.minimum(np.maximum(theta, self.lower), self.upper)

    @classmethod
    def point(cls, theta):
        return cls(theta, theta)

    def to_dict(self, names=None):
        out = {"lower": self.lower.tolist(), "upper": self.upper.tolist()}
        if names is not None:
            out["names"] = list(names)
        return out


class ModelFamily(ABC):
    """A parametric finite-memory causal model.

    Subclasses set ``name``, ``p``, ``q``, ``param_names`` and
    ``scale_floors`` (``nan`` for unrestricted coordinates, otherwise the
    value a scale coordinate must stay strictly above).
    """

    name = "abstract"

    def __init__(self, p, q):
        if int(p) != p or p < 1:
            raise DomainError(f"dimension p must be a positive integer, got {p}")
        if int(q) != q or q < 1:
            raise DomainError(f"memory q must be a positive integer, got {q}")
        self.p = int(p)
        self.q = int(q)

    @property
    def dim(self):
        return len(self.param_names)

    def check_theta(self, theta):
        theta = np.asarray(theta, dtype=float).ravel()
        if theta.size != self.dim:
            raise DomainError(f"{self.name} expects {self.dim} parameters, got {theta.size}")
        if not np.all(np.isfinite(theta)):
            raise DomainError("parameter vector has non-finite entries")
        return theta

    @abstractmethod
    def bind(self, theta):
        """Return ``evaluate(lags) -> (f, M)`` with ``theta`` fixed.

        ``lags`` has shape ``(n, q, p)``; ``f`` is ``(n, p)`` and ``M`` is
        ``(n, p, p)``.
        """

    def evaluate(self, theta, lags):
        return self.bind(theta)(np.asarray(lags, dtype=float))

    @abstractmethod
    def lipschitz_f(self, theta):
        """Coefficients ``alpha_j(f, theta)``, ``j = 1..q``."""

    @abstractmethod
    def lipschitz_M(self, theta):
        """Coefficients ``alpha_j(M, theta)``, ``j = 1..q``."""

    @abstractmethod
    def h_floor(self, theta):
        """Lower bound on ``det(M_theta(x) M_theta(x)')`` over all windows."""

    @abstractmethod
    def default_box(self):
        """Box used when the caller supplies none."""

    def describe(self):
        box = self.default_box()
        params = []
        for i, name in enumerate(self.param_names):
            floor = self.scale_floors[i]
            entry = {"index": i, "name": name,
                     "lower": float(box.lower[i]), "upper": float(box.upper[i]),
                     "kind": "linear" if np.isnan(floor) else "scale"}
            if not np.isnan(floor):
                entry["floor"] = float(floor)
            params.append(entry)
        return {"family": self.name, "p": self.p, "q": self.q, "parameters": params}

    def __repr__(self):
        return f"{type(self).__name__}(p={self.p}, q={self.q})"


def _spectral_norm(a):
    return float(np.linalg.norm(a, 2))


def _apply(a, x):
    # rows of x times a', without BLAS so results do not depend on threading
    out = x[:, :1] * a[:, 0]
    for k in range(1, a.shape[1]):
        out = out + x[:, k:k + 1] * a[:, k]
    return out


def _lower_tri_names(p, prefix):
    return [f"{prefix}[{i + 1},{j + 1}]" for i in range(p) for j in range(i + 1)]


class VARFamily(ModelFamily):
    """``f = c + sum_j A_j x_j`` and constant lower-triangular ``M = L``.

    Layout: intercept ``c`` (if enabled), then each ``A_j`` row-major, then
    the lower triangle of ``L`` row-major. Diagonal entries of ``L`` are scale
    coordinates (strictly positive).
    """

    name = "var"

    def __init__(self, p, q=1, intercept=True):
        super().__init__(p, q)
        self.intercept = bool(intercept)
        names = [f"c[{i + 1}]" for i in range(p)] if intercept else []
        for j in range(q):
            names += [f"A{j + 1}[{i + 1},{k + 1}]" for i in range(p) for k in range(p)]
        names += _lower_tri_names(p, "L")
        self.param_names = tuple(names)
        floors = np.full(len(names), np.nan)
        offset = len(names) - p * (p + 1) // 2
        self._tril = np.tril_indices(p)
        diag = offset + np.flatnonzero(self._tril[0] == self._tril[1])
        floors[diag] = 0.0
        self.scale_floors = floors

    def unpack(self, theta):
        theta = self.check_theta(theta)
        p, q = self.p, self.q
        pos = 0
        if self.intercept:
            c = theta[:p]
            pos = p
        else:
            c = np.zeros(p)
        coef = theta[pos:pos + q * p * p].reshape(q, p, p)
        pos += q * p * p
        chol = np.zeros((p, p))
        chol[self._tril] = theta[pos:]
        return c, coef, chol

    def bind(self, theta):
        c, coef, chol = self.unpack(theta)

        def evaluate(lags):
            n = lags.shape[0]
            f = np.broadcast_to(c, (n, self.p)).copy()
            for j in range(self.q):
                f += _apply(coef[j], lags[:, j, :])
            return f, np.broadcast_to(chol, (n, self.p, self.p))

        return evaluate

    def lipschitz_f(self, theta):
        _, coef, _ = self.unpack(theta)
        return np.array([_spectral_norm(a) for a in coef])

    def lipschitz_M(self, theta):
        self.check_theta(theta)
        return np.zeros(self.q)

    def h_floor(self, theta):
        _, _, chol = self.unpack(theta)
        return float(np.prod(np.diag(chol) ** 2))

    def default_box(self):
        lo, hi = [], []
        if self.intercept:
            lo += [-5.0] * self.p
            hi += [5.0] * self.p
        lo += [-0.95] * (self.q * self.p * self.p)
        hi += [0.95] * (self.q * self.p * self.p)
        for i, j in zip(*self._tril):
            lo.append(0.05 if i == j else -5.0)
            hi.append(5.0)
        return Box(lo, hi)


class DiagonalARCHFamily(ModelFamily):
    """``f = 0`` and ``M = diag(sqrt(omega_k + sum_j a_{j,k} x_{j,k}^2))``.

    Layout: ``omega_1..omega_p`` then ``a_j[k]`` for ``j = 1..q``,
    ``k = 1..p``. Intercepts stay above ``omega_min``; ARCH coefficients are
    nonnegative.
    """

    name = "arch"

    def __init__(self, p, q=1, omega_min=1e-6):
        super().__init__(p, q)
        self.omega_min = float(omega_min)
        names = [f"omega[{k + 1}]" for k in range(p)]
        names += [f"a{j + 1}[{k + 1}]" for j in range(q) for k in range(p)]
        self.param_names = tuple(names)
        floors = np.full(len(names), np.nan)
        floors[:p] = self.omega_min
        self.scale_floors = floors

    def unpack(self, theta):
        theta = self.check_theta(theta)
        p = self.p
        omega = theta[:p]
        a = theta[p:].reshape(self.q, p)
        if np.any(omega <= 0.0) or np.any(a < 0.0):
            raise DomainError("ARCH parameters need omega > 0 and a >= 0")
        return omega, a

    def _scales(self, omega, a, lags):
        return np.sqrt(omega + np.sum(a * lags * lags, axis=1))

    def bind(self, theta):
        omega, a = self.unpack(theta)
        idx = np.arange(self.p)

        def evaluate(lags):
            n = lags.shape[0]
            m = np.zeros((n, self.p, self.p))
            m[:, idx, idx] = self._scales(omega, a, lags)
            return np.zeros((n, self.p)), m

        return evaluate

    def lipschitz_f(self, theta):
        self.check_theta(theta)
        return np.zeros(self.q)

    def lipschitz_M(self, theta):
        _, a = self.unpack(theta)
        return np.sqrt(a).max(axis=1)

    def h_floor(self, theta):
        omega, _ = self.unpack(theta)
        return float(np.prod(omega))

    def default_box(self):
        lo = [0.01] * self.p + [0.0] * (self.q * self.p)
        hi = [10.0] * self.p + [0.99] * (self.q * self.p)
        return Box(lo, hi)


class ARARCHFamily(ModelFamily):
    """AR(1) mean with diagonal ARCH(1) scale, both driven by ``X_{t-1}``.

    ``f = c + A x_1`` and ``M = diag(sqrt(omega_k + a_k x_{1,k}^2))``.
    Layout: ``c`` (if enabled), ``A`` row-major, ``omega``, ``a``.
    """

    name = "ar-arch"

    def __init__(self, p, intercept=True, omega_min=1e-6):
        super().__init__(p, 1)
        self.intercept = bool(intercept)
        self.omega_min = float(omega_min)
        names = [f"c[{i + 1}]" for i in range(p)] if intercept else []
        names += [f"A1[{i + 1},{k + 1}]" for i in range(p) for k in range(p)]
        n_mean = len(names)
        names += [f"omega[{k + 1}]" for k in range(p)]
        names += [f"a1[{k + 1}]" for k in range(p)]
        self.param_names = tuple(names)
        floors = np.full(len(names), np.nan)
        floors[n_mean:n_mean + p] = self.omega_min
        self.scale_floors = floors
        self._n_mean = n_mean

    def unpack(self, theta):
        theta = self.check_theta(theta)
        p = self.p
        c = theta[:p] if self.intercept else np.zeros(p)
        start = p if self.intercept else 0
        coef = theta[start:self._n_mean].reshape(p, p)
        omega = theta[self._n_mean:self._n_mean + p]
        a = theta[self._n_mean + p:]
        if np.any(omega <= 0.0) or np.any(a < 0.0):
            raise DomainError("ARCH parameters need omega > 0 and a >= 0")
        return c, coef, omega, a

    def bind(self, theta):
        c, coef, omega, a = self.unpack(theta)
        idx = np.arange(self.p)

        def evaluate(lags):
            x1 = lags[:, 0, :]
            n = lags.shape[0]
            f = c + _apply(coef, x1)
            m = np.zeros((n, self.p, self.p))
            m[:, idx, idx] = np.sqrt(omega + a * x1 * x1)
            return f, m

        return evaluate

    def lipschitz_f(self, theta):
        _, coef, _, _ = self.unpack(theta)
        return np.array([_spectral_norm(coef)])

    def lipschitz_M(self, theta):
        _, _, _, a = self.unpack(theta)
        return np.array([math.sqrt(a.max())])

    def h_floor(self, theta):
        _, _, omega, _ = self.unpack(theta)
        return float(np.prod(omega))

    def default_box(self):
        lo, hi = [], []
        if self.intercept:
            lo += [-5.0] * self.p
            hi += [5.0] * self.p
        lo += [-0.95] * (self.p * self.p) + [0.01] * self.p + [0.0] * self.p
        hi += [0.95] * (self.p * self.p) + [10.0] * self.p + [0.99] * self.p
        return Box(lo, hi)


FAMILY_NAMES = ("var1", "arch1", "ar-arch")


def make_family(name, p, lags=1, intercept=True):
    """Build a family from its command-line name."""
    if name in ("var1", "var"):
        return VARFamily(p, q=lags, intercept=intercept)
    if name in ("arch1", "arch"):
        return DiagonalARCHFamily(p, q=lags)
    if name == "ar-arch":
        return ARARCHFamily(p, intercept=intercept)
    raise DomainError(f"unknown family {name!r}; choose from {', '.join(FAMILY_NAMES)}")


@dataclass(frozen=True)
class Theta2Report:
    sum_f: float
    sum_M: float
    margin: float
    member: bool


def theta2_membership(family, theta):
    """Check ``sum_j alpha_j(f) + sqrt(p) sum_j alpha_j(M) < 1``.

    ``sqrt(p) = (E||zeta||^2)^(1/2)`` under unit-variance, uncorrelated
    components.
    """
    sum_f = float(np.sum(family.lipschitz_f(theta)))
    sum_m = float(np.sum(family.lipschitz_M(theta)))
    margin = 1.0 - (sum_f + math.sqrt(family.p) * sum_m)
    return Theta2Report(sum_f, sum_m, margin, margin > 0.0)


def theta_r_membership(family, theta, r, moment_r):
    """Contraction condition with the ``r``-th innovation norm moment.

    ``moment_r`` is ``(E||zeta||^r)^(1/r)``, see
    :func:`alqmle.innovations.innovation_norm_moment`.
    """
    if r < 1:
        raise DomainError("r must be >= 1")
    if not moment_r > 0:
        raise DomainError("moment_r must be positive")
    total = np.sum(family.lipschitz_f(theta)) + moment_r * np.sum(family.lipschitz_M(theta))
    return bool(total < 1.0)


def simulate_from_innovations(family, theta, innovations, initial=None):
    """Run the recursion over given innovations.

    ``initial`` holds the ``q`` values preceding the first step, oldest
    first; zeros by default. Returns an array shaped like ``innovations``.
    """
    innovations = np.asarray(innovations, dtype=float)
    n, p = innovations.shape
    if p != family.p:
        raise DomainError(f"innovations have {p} columns, family expects {family.p}")
    q = family.q
    evaluate = family.bind(theta)
    path = np.zeros((q + n, p))
    if initial is not None:
        path[:q] = np.asarray(initial, dtype=float).reshape(q, p)
    for t in range(n):
        window = path[t:t + q][::-1][None]
        f, m = evaluate(window)
        path[q + t] = m[0] @ innovations[t] + f[0]
    return path[q:]


def _check_theta2(family, theta, force):
    report = theta2_membership(family, theta)
    if not report.member and not force:
        raise NotInTheta2Error(
            f"parameter not in Theta(2) (margin {report.margin:.6g}); pass force to simulate anyway")
    return report


def _as_spec(spec, p):
    if isinstance(spec, InnovationSpec):
        if spec.p != p:
            raise DomainError(f"innovation dimension {spec.p} does not match family p={p}")
        return spec
    return InnovationSpec(p, int(spec))


def simulate_trajectory(family, theta, n, burn_in=DEFAULT_BURN_IN, spec=0, force=False):
    """Simulate ``n`` values after discarding ``burn_in`` from a zero past.

    ``spec`` is an :class:`InnovationSpec` or a seed. Refuses parameters
    outside Theta(2) unless ``force`` is set.
    """
    _, series = simulate_with_presample(family, theta, n, 0, burn_in, spec, force)
    return series


def simulate_with_presample(family, theta, n, presample, burn_in=DEFAULT_BURN_IN,
                            spec=0, force=False):
    """Like :func:`simulate_trajectory`, also returning the last
    ``presample`` burn-in values that precede the series."""
    n, presample, burn_in = int(n), int(presample), int(burn_in)
    if n < 1 or burn_in < 0 or presample < 0:
        raise DomainError("need n >= 1, burn_in >= 0 and presample >= 0")
    if presample > burn_in:
        raise DomainError("presample cannot be longer than the burn-in")
    theta = family.check_theta(theta)
    _check_theta2(family, theta, force)
    spec = _as_spec(spec, family.p)
    zeta = InnovationSampler(spec).draw(burn_in + n)
    path = simulate_from_innovations(family, theta, zeta)
    return path[burn_in - presample:burn_in], path[burn_in:]
