"""Fast invariant suite behind the ``selfcheck`` subcommand."""

from dataclasses import dataclass
import math
import time

import numpy as np

from alqmle.bessel import bessel_bound_constant, bessel_k, log_bessel_k, log_bessel_k_quadrature
from alqmle.estimator import OptimizerConfig, estimate
from alqmle.innovations import InnovationSpec, sample_innovations
from alqmle.likelihood import q_t
from alqmle.models import Box, DiagonalARCHFamily, VARFamily, theta2_membership

__all__ = ["CheckResult", "run_selfcheck", "CHECKS"]


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def to_dict(self):
        return {"name": self.name, "passed": self.passed, "detail": self.detail,
                "seconds": self.seconds}


def check_half_order_oracle():
    u = np.geomspace(1e-3, 50.0, 200)
    exact = np.sqrt(np.pi / (2.0 * u)) * np.exp(-u)
    rel = float(np.max(np.abs(bessel_k(0.5, u) / exact - 1.0)))
    worst = 0.0
    for v in (0.0, -0.5, -1.0, -2.0, 0.5):
        for x in np.geomspace(0.01, 30.0, 7):
            main = log_bessel_k(v, x)
            ref = log_bessel_k_quadrature(v, x)
            worst = max(worst, abs(math.expm1(main - ref)))
    ok = rel <= 1e-10 and worst <= 1e-8
    return ok, f"closed-form rel err {rel:.2e}; quadrature rel err {worst:.2e}"


def check_bound_grid():
    u = np.geomspace(1e-3, 10.0, 200)
    violations = 0
    for v in (-0.5, -1.0, -1.5, -2.0):
        bound = bessel_bound_constant(v) * u ** v
        violations += int(np.sum(bessel_k(v, u) > bound))
    return violations == 0, f"{violations} violations on 4 x 200 points"


def check_sampler_moments(count=10 ** 5, seed=20240601):
    z = sample_innovations(InnovationSpec(2, seed), count)
    mean = float(np.max(np.abs(z.mean(axis=0))))
    cov = float(np.max(np.abs(np.cov(z, rowvar=False) - np.eye(2))))
    c = z[:, 0] - z[:, 0].mean()
    kurt = float(np.mean(c ** 4) / np.mean(c ** 2) ** 2 - 3.0)
    # tolerances sized to 1e5 draws (several standard errors)
    ok = mean < 0.02 and cov < 0.05 and abs(kurt - 3.0) < 0.75
    return ok, f"|mean| {mean:.4f}, |cov - I| {cov:.4f}, excess kurtosis {kurt:.3f}"


def check_univariate_collapse(count=1000, seed=7):
    rng = np.random.default_rng(seed)
    family = VARFamily(1, intercept=True)
    worst = 0.0
    for _ in range(count):
        c, a, s = rng.uniform(-2, 2), rng.uniform(-0.9, 0.9), rng.uniform(0.1, 3.0)
        past, x = rng.normal(scale=2.0), rng.normal(scale=2.0)
        r = x - c - a * past
        quad = r * r / (s * s)
        closed = (0.5 * math.log(math.pi / 2) - 0.25 * math.log(2.0)
                  - math.sqrt(2.0 * quad) - 0.5 * math.log(s * s))
        got = q_t(family, [c, a, s], [[past]], [x])
        worst = max(worst, abs(got - closed))
    return worst <= 1e-10, f"max abs diff {worst:.2e} over {count} inputs"


def check_median_oracle(n=2001, seed=11):
    family = VARFamily(1, intercept=True)
    x = sample_innovations(InnovationSpec(1, seed), n) * 1.7 + 0.4
    box = Box([-5.0, 0.0, 1.0], [5.0, 0.0, 1.0])
    config = OptimizerConfig(starts=2)
    res = estimate(family, x, box, config)
    gap = abs(res.theta_hat[0] - float(np.median(x)))
    return gap < 10 * config.xtol, f"|c_hat - median| = {gap:.2e}"


def check_theta2_examples():
    r1 = theta2_membership(VARFamily(2, intercept=False), [0.3, 0, 0, 0.3, 1, 0, 1])
    r2 = theta2_membership(DiagonalARCHFamily(2), [1.0, 1.0, 0.2, 0.2])
    r3 = theta2_membership(VARFamily(2, intercept=False), [1.05, 0, 0, 1.05, 1, 0, 1])
    ok = (r1.member and abs(r1.margin - 0.7) <= 1e-12 and r1.sum_M == 0.0
          and r2.member and abs(r2.sum_M - math.sqrt(0.2)) <= 1e-12
          and abs(r2.margin - (1 - math.sqrt(0.4))) <= 1e-12
          and not r3.member and abs(r3.margin + 0.05) <= 1e-12)
    return ok, f"margins {r1.margin:.12f}, {r2.margin:.12f}, {r3.margin:.12f}"


CHECKS = (
    ("bessel half-order and quadrature oracles", check_half_order_oracle),
    ("bessel small-argument bound", check_bound_grid),
    ("sampler moments", check_sampler_moments),
    ("univariate likelihood collapse", check_univariate_collapse),
    ("median oracle", check_median_oracle),
    ("theta2 worked examples", check_theta2_examples),
)


def run_selfcheck(checks=CHECKS):
    results = []
    for name, fn in checks:
        start = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as exc:  # a crash is a failed check, not an abort
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append(CheckResult(name, bool(ok), detail, time.perf_counter() - start))
    return results
