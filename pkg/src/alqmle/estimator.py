"""Quasi-maximum likelihood estimation over a compact box.

The estimator maximizes the truncated likelihood with a Nelder-Mead simplex
search started from several quasi-random points. Trial points are projected
coordinate-wise onto the box, so the objective is only ever evaluated inside
it. Scale coordinates (positive diagonal of ``L``, ARCH intercepts) are
searched as ``log(theta - floor)`` and reported on their natural scale.

With ``restrict_theta2`` on (the default) the objective is lowered by
``1e6`` times the violated margin outside Theta(2), and the starts are drawn
from the part of the box inside Theta(2).
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
import math
import os
import warnings

import numpy as np
from scipy.stats import qmc

from alqmle.exceptions import DomainError, EstimationError, NotInTheta2Error
from alqmle.likelihood import LikelihoodObjective
from alqmle.models import DEFAULT_BURN_IN, Box, simulate_trajectory, theta2_membership
from alqmle.seeds import derive_seed

__all__ = [
    "PENALTY_WEIGHT",
    "OptimizerConfig",
    "StartResult",
    "EstimationResult",
    "McRow",
    "McReport",
    "nelder_mead_box",
    "estimate",
    "estimate_consistency_path",
]

PENALTY_WEIGHT = 1e6


@dataclass(frozen=True)
class OptimizerConfig:
    starts: int = 8
    max_evals: int = 2000
    xtol: float = 1e-8
    ftol: float = 1e-10
    seed: int = 1
    restrict_theta2: bool = True

    def __post_init__(self):
        if self.starts < 1:
            raise DomainError("need at least one start")
        if self.max_evals < 1:
            raise DomainError("max_evals must be positive")
        if not (self.xtol > 0 and self.ftol > 0):
            raise DomainError("tolerances must be positive")


@dataclass
class StartResult:
    theta_start: np.ndarray
    theta_end: np.ndarray
    value: float
    objective: float
    evals: int
    converged: bool
    trace: np.ndarray = field(repr=False)

    def to_dict(self):
        return {"theta_start": self.theta_start.tolist(), "theta_end": self.theta_end.tolist(),
                "value": self.value, "objective": self.objective, "evals": self.evals,
                "converged": self.converged}


@dataclass
class EstimationResult:
    """Outcome of :func:`estimate`.

    ``value`` is the truncated log-likelihood at ``theta_hat``; ``objective``
    adds the Theta(2) penalty (zero inside) and is what starts compete on.
    ``box_violations`` counts objective calls outside the box, which the
    projection should keep at zero.
    """

    theta_hat: np.ndarray
    value: float
    objective: float
    start_results: list
    best_start_index: int
    in_theta2: bool
    clamp_count: int
    box_violations: int
    param_names: tuple

    @property
    def converged(self):
        return self.start_results[self.best_start_index].converged

    def to_dict(self):
        return {
            "param_names": list(self.param_names),
            "theta_hat": self.theta_hat.tolist(),
            "value": self.value,
            "objective": self.objective,
            "best_start_index": self.best_start_index,
            "in_theta2": self.in_theta2,
            "clamp_count": self.clamp_count,
            "box_violations": self.box_violations,
            "converged": self.converged,
            "start_results": [s.to_dict() for s in self.start_results],
        }


class _Coordinates:
    """Map between natural parameters and the free search coordinates."""

    def __init__(self, family, box):
        if box.dim != family.dim:
            raise DomainError(f"box has {box.dim} coordinates, family needs {family.dim}")
        self.box = box
        self.floors = np.asarray(family.scale_floors, dtype=float)
        self.scale = ~np.isnan(self.floors)
        if np.any(box.lower[self.scale] <= self.floors[self.scale]):
            raise DomainError("box lower bound must exceed the floor of every scale coordinate")
        self.free = box.lower < box.upper
        self.lower = self.to_internal(box.lower)[self.free]
        self.upper = self.to_internal(box.upper)[self.free]

    def to_internal(self, theta):
        eta = np.array(theta, dtype=float)
        eta[self.scale] = np.log(eta[self.scale] - self.floors[self.scale])
        return eta

    def to_natural(self, free_eta):
        eta = self.to_internal(self.box.lower)
        eta[self.free] = free_eta
        theta = eta.copy()
        theta[self.scale] = self.floors[self.scale] + np.exp(eta[self.scale])
        # exp/log round trips may leave the box by an ulp
        return self.box.clip(theta)


def nelder_mead_box(fun, x0, lower, upper, xtol=1e-8, ftol=1e-10, max_evals=2000,
                    initial_step=0.05):
    """Minimize ``fun`` over a box with a projected Nelder-Mead simplex.

    Every trial point is clipped to ``[lower, upper]`` before evaluation, so
    the simplex can flatten against a face; to recover, a fresh simplex is
    rebuilt around the best point each time the current one converges. The
    search has converged once a rebuilt simplex converges without improving
    the best value by more than ``ftol``. A simplex has converged when it
    spans at most ``xtol`` in every coordinate and its values differ by at
    most ``ftol``. At most ``max_evals`` calls are made in total.

    Returns
    -------
    x, fx, evals, converged, trace
        ``trace[k]`` is the best value seen after ``k + 1`` evaluations.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    d = lower.size
    trace = []
    best = [math.inf]

    def g(x):
        val = fun(x)
        if not math.isfinite(val):
            val = math.inf
        best[0] = min(best[0], val)
        trace.append(best[0])
        return val

    def clip(x):
        return np.minimum(np.maximum(x, lower), upper)

    # dimension-dependent coefficients (Gao & Han) for d >= 3
    if d >= 3:
        expand, contract, shrink = 1.0 + 2.0 / d, 0.75 - 0.5 / d, 1.0 - 1.0 / d
    else:
        expand, contract, shrink = 2.0, 0.5, 0.5
    width = upper - lower

    def simplex_search(x0, f0, scale):
        pts = [x0]
        for i in range(d):
            x = x0.copy()
            step = scale * width[i]
            x[i] = x[i] + step if x[i] + step <= upper[i] else x[i] - step
            pts.append(x)
        sim = np.array(pts)
        vals = np.array([f0] + [g(x) for x in sim[1:]])
        while True:
            order = np.argsort(vals, kind="stable")
            sim, vals = sim[order], vals[order]
            spread = np.max(vals[1:]) - vals[0] if math.isfinite(vals[-1]) else math.inf
            if np.max(np.abs(sim[1:] - sim[0])) <= xtol and spread <= ftol:
                return sim[0], vals[0], True
            if len(trace) >= max_evals:
                return sim[0], vals[0], False
            centroid = sim[:-1].mean(axis=0)
            worst = sim[-1]
            xr = clip(centroid + (centroid - worst))
            fr = g(xr)
            if fr < vals[0]:
                xe = clip(centroid + expand * (centroid - worst))
                fe = g(xe)
                if fe < fr:
                    sim[-1], vals[-1] = xe, fe
                else:
                    sim[-1], vals[-1] = xr, fr
                continue
            if fr < vals[-2]:
                sim[-1], vals[-1] = xr, fr
                continue
            if fr < vals[-1]:
                xc = clip(centroid + contract * (xr - centroid))
                fc = g(xc)
                if fc <= fr:
                    sim[-1], vals[-1] = xc, fc
                    continue
            else:
                xc = clip(centroid + contract * (worst - centroid))
                fc = g(xc)
                if fc < vals[-1]:
                    sim[-1], vals[-1] = xc, fc
                    continue
            for i in range(1, d + 1):
                sim[i] = clip(sim[0] + shrink * (sim[i] - sim[0]))
                vals[i] = g(sim[i])

    x = clip(np.asarray(x0, dtype=float))
    fx = g(x)
    converged = False
    scale = initial_step
    while True:
        x_new, f_new, done = simplex_search(x, fx, scale)
        improved = f_new < fx - ftol or not math.isfinite(fx)
        x, fx = x_new, f_new
        # later simplices only need to unflatten, not to explore
        scale = max(0.1 * scale, _RESTART_STEP_MIN)
        if not done:
            break
        if not improved:
            converged = True
            break
    return x, float(fx), len(trace), converged, np.array(trace)


_RESTART_STEP_MIN = 1e-4


def _start_points(coords, starts, seed, accept=None):
    """Scrambled Halton points in the box.

    With ``accept``, points failing it are skipped; if too few pass within
    a fixed number of draws the remaining slots keep the first rejected
    points so that ``starts`` points are always returned.
    """
    d = int(coords.free.sum())
    if d == 0:
        return np.zeros((starts, 0))
    sampler = qmc.Halton(d=d, scramble=True, seed=np.random.default_rng(int(seed)))
    if accept is None:
        return coords.lower + sampler.random(starts) * (coords.upper - coords.lower)
    kept, rejected = [], []
    for _ in range(_START_BATCHES):
        for x in coords.lower + sampler.random(starts) * (coords.upper - coords.lower):
            (kept if accept(x) else rejected).append(x)
        if len(kept) >= starts:
            return np.array(kept[:starts])
    return np.array((kept + rejected)[:starts])


_START_BATCHES = 64


def estimate(family, series, box=None, config=None):
    """Maximize the truncated quasi-log-likelihood over ``box``.

    Parameters
    ----------
    family : ModelFamily
    series : array, shape (n, p)
    box : Box, optional
        Defaults to ``family.default_box()``.
    config : OptimizerConfig, optional

    Raises
    ------
    EstimationError
        If no start reaches a finite objective.
    """
    config = config or OptimizerConfig()
    box = box or family.default_box()
    coords = _Coordinates(family, box)
    objective = LikelihoodObjective(family, series)
    n = objective.series.shape[0]
    if n < 10 * family.dim:
        warnings.warn(f"series length {n} is short for {family.dim} parameters", stacklevel=2)

    violations = [0]

    def penalized(theta):
        if not box.contains(theta):
            violations[0] += 1
        try:
            value = objective(theta)
        except (ArithmeticError, DomainError):
            return -math.inf
        if config.restrict_theta2:
            margin = theta2_membership(family, theta).margin
            if margin <= 0.0:
                value -= PENALTY_WEIGHT * (-margin)
        return value

    results = []
    accept = None
    if config.restrict_theta2:
        def accept(eta):
            return theta2_membership(family, coords.to_natural(eta)).member
    for start in _start_points(coords, config.starts, config.seed, accept):
        theta_start = coords.to_natural(start)
        if start.size:
            x, fx, evals, converged, trace = nelder_mead_box(
                lambda eta: -penalized(coords.to_natural(eta)), start,
                coords.lower, coords.upper, config.xtol, config.ftol, config.max_evals)
            theta_end = coords.to_natural(x)
            obj = -fx
        else:
            theta_end = theta_start
            obj = penalized(theta_end)
            evals, converged, trace = 1, True, np.array([-obj])
        value = objective(theta_end) if math.isfinite(obj) else -math.inf
        results.append(StartResult(theta_start, theta_end, value, obj, evals, converged, -trace))

    best = None
    for i, res in enumerate(results):
        if math.isfinite(res.objective) and (best is None or res.objective > results[best].objective):
            best = i
    if best is None:
        raise EstimationError("objective non-finite everywhere")
    theta_hat = results[best].theta_end
    ev = objective.evaluate(theta_hat)
    return EstimationResult(
        theta_hat=theta_hat, value=ev.value, objective=results[best].objective,
        start_results=results, best_start_index=best,
        in_theta2=theta2_membership(family, theta_hat).member,
        clamp_count=ev.clamp_count, box_violations=violations[0],
        param_names=tuple(family.param_names))


@dataclass(frozen=True)
class McRow:
    n: int
    rep: int
    seed: int
    err_norm: float
    converged: bool
    clamp_count: int
    error: str = ""


@dataclass
class McReport:
    """Rows of a consistency experiment and their per-length summaries."""

    rows: list
    n_list: tuple

    @property
    def summaries(self):
        out = {}
        for n in self.n_list:
            errs = np.array([r.err_norm for r in self.rows if r.n == n and not r.error])
            if errs.size:
                q1, med, q3 = np.percentile(errs, [25, 50, 75])
                out[n] = {"median": float(med), "iqr": float(q3 - q1), "max": float(errs.max()),
                          "count": int(errs.size)}
            else:
                out[n] = {"median": math.nan, "iqr": math.nan, "max": math.nan, "count": 0}
        return out

    @property
    def errors(self):
        return [r for r in self.rows if r.error]

    @property
    def verdict(self):
        medians = [self.summaries[n]["median"] for n in self.n_list]
        if any(math.isnan(m) for m in medians):
            return False
        return all(b < a for a, b in zip(medians, medians[1:]))


def _one_replication(task):
    family, theta0, n, rep, seed, config, box, burn_in = task
    try:
        series = simulate_trajectory(family, theta0, n, burn_in, seed)
        res = estimate(family, series, box, config)
    except (ArithmeticError, ValueError, EstimationError) as exc:
        return McRow(n, rep, seed, math.nan, False, 0, f"{type(exc).__name__}: {exc}")
    err = float(np.linalg.norm(res.theta_hat - theta0))
    return McRow(n, rep, seed, err, res.converged, res.clamp_count)


def estimate_consistency_path(family, theta0, n_list, replications, seed, config=None,
                              box=None, burn_in=DEFAULT_BURN_IN, threads=1):
    """Monte Carlo estimate of ``||theta_hat_n - theta0||`` along ``n_list``.

    Replication ``(n, rep)`` simulates with seed
    ``derive_seed(seed, [("n", n), ("rep", rep)])``; failures are recorded as
    rows with an error message. Rows come back ordered by ``(n, rep)``
    whatever the number of worker processes.
    """
    theta0 = family.check_theta(theta0)
    n_list = tuple(int(n) for n in n_list)
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise DomainError("n_list must be strictly increasing")
    report = theta2_membership(family, theta0)
    if not report.member:
        raise NotInTheta2Error(f"theta0 not in Theta(2) (margin {report.margin:.6g})")
    config = config or OptimizerConfig()
    tasks = [(family, theta0, n, rep, derive_seed(seed, [("n", n), ("rep", rep)]),
              config, box, burn_in)
             for n in n_list for rep in range(int(replications))]
    threads = int(threads) or (os.cpu_count() or 1)
    if threads == 1:
        rows = [_one_replication(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(_one_replication, tasks, chunksize=1))
    rows.sort(key=lambda r: (n_list.index(r.n), r.rep))
    return McReport(rows, n_list)
