import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from alqmle.exceptions import DomainError, NotInTheta2Error
from alqmle.innovations import InnovationSpec, innovation_norm_moment, sample_innovations
from alqmle.models import (
    ARARCHFamily, Box, DiagonalARCHFamily, VARFamily, make_family, simulate_from_innovations,
    simulate_trajectory, simulate_with_presample, theta2_membership, theta_r_membership)

FAMILIES = [
    VARFamily(1), VARFamily(2, intercept=False), VARFamily(2, q=2), VARFamily(3),
    DiagonalARCHFamily(1), DiagonalARCHFamily(2, q=2), ARARCHFamily(1), ARARCHFamily(2),
]


def _random_theta(family, rng):
    box = family.default_box()
    return box.lower + rng.random(box.dim) * (box.upper - box.lower)


def test_box_validation():
    with pytest.raises(DomainError):
        Box([0.0, 1.0], [1.0, 0.0])
    with pytest.raises(DomainError):
        Box([0.0], [math.inf])
    with pytest.raises(DomainError):
        Box([0.0, 0.0], [1.0])
    box = Box([0.0, -1.0], [1.0, 1.0])
    assert box.contains([0.5, 1.0]) and not box.contains([1.5, 0.0])
    assert box.clip(np.array([2.0, -3.0])).tolist() == [1.0, -1.0]
    with pytest.raises(ValueError):
        box.lower[0] = 3.0


def test_layouts():
    fam = VARFamily(2, intercept=False)
    assert fam.dim == 7
    assert fam.param_names[:4] == ("A1[1,1]", "A1[1,2]", "A1[2,1]", "A1[2,2]")
    assert VARFamily(2).dim == 9
    assert DiagonalARCHFamily(2, q=2).dim == 6
    assert ARARCHFamily(2).dim == 10
    assert make_family("var1", 2, intercept=False).dim == 7
    assert make_family("arch1", 1).param_names == ("omega[1]", "a1[1]")
    with pytest.raises(DomainError):
        make_family("garch", 1)
    with pytest.raises(DomainError):
        fam.check_theta(np.zeros(6))


def test_var_evaluation_by_hand():
    fam = VARFamily(2, intercept=True)
    theta = np.array([0.1, -0.2, 0.5, 0.1, -0.2, 0.3, 1.0, 0.3, 0.8])
    lags = np.array([[[2.0, -1.0]]])
    f, m = fam.evaluate(theta, lags)
    assert f[0].tolist() == pytest.approx([0.1 + 1.0 - 0.1, -0.2 - 0.4 - 0.3])
    assert m[0].tolist() == [[1.0, 0.0], [0.3, 0.8]]


def test_arch_evaluation_by_hand():
    fam = DiagonalARCHFamily(2)
    f, m = fam.evaluate([1.0, 0.5, 0.2, 0.4], np.array([[[3.0, -1.0]]]))
    assert np.all(f == 0)
    assert np.diag(m[0]) == pytest.approx([math.sqrt(1.0 + 0.2 * 9), math.sqrt(0.5 + 0.4)])


def test_theta2_worked_examples():
    var = VARFamily(2, intercept=False)
    r = theta2_membership(var, [0.3, 0, 0, 0.3, 1, 0, 1])
    assert (r.sum_f, r.sum_M, r.member) == (pytest.approx(0.3, abs=1e-15), 0.0, True)
    assert r.margin == pytest.approx(0.7, abs=1e-12)
    r = theta2_membership(DiagonalARCHFamily(2), [1.0, 1.0, 0.2, 0.2])
    assert r.member and r.sum_M == pytest.approx(math.sqrt(0.2), abs=1e-12)
    assert 1 - r.margin == pytest.approx(0.632455532, abs=1e-9)
    r = theta2_membership(var, [1.05, 0, 0, 1.05, 1, 0, 1])
    assert not r.member and r.margin == pytest.approx(-0.05, abs=1e-12)


def test_theta_r_examples():
    var2 = VARFamily(2, intercept=False)
    theta = [0.4, 0.1, 0.0, 0.2, 1, 0, 1]
    assert theta_r_membership(var2, theta, 2, math.sqrt(2)) == theta2_membership(var2, theta).member
    assert theta_r_membership(VARFamily(1, intercept=False), [0.5, 1.0], 2, 1.0)
    m4 = innovation_norm_moment(1, 4)
    assert m4 == pytest.approx(1.5651, abs=1e-4)
    assert theta_r_membership(DiagonalARCHFamily(1), [1.0, 0.35], 4, m4)
    assert not theta_r_membership(DiagonalARCHFamily(1), [1.0, 0.45], 4, m4)
    with pytest.raises(DomainError):
        theta_r_membership(var2, theta, 0.5, 1.0)


@pytest.mark.parametrize("family", FAMILIES, ids=repr)
def test_lipschitz_and_scale_floor_certification(family):
    rng = np.random.default_rng(11)
    for _ in range(1000):
        theta = _random_theta(family, rng)
        x = rng.normal(scale=3.0, size=(1, family.q, family.p))
        y = rng.normal(scale=3.0, size=(1, family.q, family.p))
        fx, mx = family.evaluate(theta, x)
        fy, my = family.evaluate(theta, y)
        gaps = np.linalg.norm(x[0] - y[0], axis=1)
        assert np.linalg.norm(fx - fy) <= family.lipschitz_f(theta) @ gaps * (1 + 1e-12) + 1e-12
        assert np.linalg.norm(mx[0] - my[0], 2) <= family.lipschitz_M(theta) @ gaps * (1 + 1e-12) + 1e-12
        for m in (mx[0], my[0]):
            # equality holds for constant M, so allow LU rounding
            assert np.linalg.det(m @ m.T) >= family.h_floor(theta) * (1 - 1e-9)


@given(a=st.floats(0.0, 0.99), omega=st.floats(0.01, 10.0),
       x=st.floats(-50, 50), y=st.floats(-50, 50))
def test_arch_scale_lipschitz_constant(a, omega, x, y):
    # |sqrt(w + a x^2) - sqrt(w + a y^2)| <= sqrt(a) |x - y|
    lhs = abs(math.sqrt(omega + a * x * x) - math.sqrt(omega + a * y * y))
    assert lhs <= math.sqrt(a) * abs(x - y) * (1 + 1e-12) + 1e-15


def test_alpha_vanishes_beyond_memory():
    fam = VARFamily(2, q=2)
    theta = _random_theta(fam, np.random.default_rng(0))
    assert fam.lipschitz_f(theta).shape == (2,)
    assert np.all(fam.lipschitz_M(theta) == 0)


def test_one_step_recursion():
    fam = VARFamily(2, intercept=True)
    theta = [0.7, -1.2, 0, 0, 0, 0, 1, 0, 1]
    x = simulate_trajectory(fam, theta, 1, burn_in=0, spec=InnovationSpec(2, 9))
    z = sample_innovations(InnovationSpec(2, 9), 1)
    assert np.array_equal(x[0], np.array([0.7, -1.2]) + z[0])


def test_simulation_is_deterministic():
    fam = DiagonalARCHFamily(2)
    a = simulate_trajectory(fam, [1, 1, 0.2, 0.3], 200, spec=4)
    b = simulate_trajectory(fam, [1, 1, 0.2, 0.3], 200, spec=InnovationSpec(2, 4))
    assert np.array_equal(a, b)


def test_refuses_outside_theta2():
    fam = VARFamily(1, intercept=False)
    with pytest.raises(NotInTheta2Error, match="not in Theta"):
        simulate_trajectory(fam, [1.05, 1.0], 10)
    x = simulate_trajectory(fam, [1.05, 1.0], 10, force=True)
    assert x.shape == (10, 1)


def test_causality():
    fam = ARARCHFamily(2)
    theta = [0.1, 0.0, 0.4, 0.1, 0.0, 0.3, 1.0, 0.5, 0.2, 0.1]
    z = sample_innovations(InnovationSpec(2, 1), 300)
    base = simulate_from_innovations(fam, theta, z)
    z2 = z.copy()
    z2[150:] = sample_innovations(InnovationSpec(2, 2), 150)
    alt = simulate_from_innovations(fam, theta, z2)
    assert np.array_equal(base[:150], alt[:150])
    assert not np.array_equal(base[150:], alt[150:])


def test_presample_continues_the_path():
    fam = VARFamily(1, q=2)
    theta = [0.0, 0.3, 0.2, 1.0]
    pre, series = simulate_with_presample(fam, theta, 50, 2, burn_in=100, spec=5)
    full = simulate_trajectory(fam, theta, 50, burn_in=100, spec=5)
    assert np.array_equal(series, full)
    longer = simulate_trajectory(fam, theta, 52, burn_in=98, spec=5)
    assert np.array_equal(pre, longer[:2])
    with pytest.raises(DomainError):
        simulate_with_presample(fam, theta, 5, 10, burn_in=5)


def test_ar1_stationary_variance():
    x = simulate_trajectory(VARFamily(1, intercept=False), [0.5, 1.0], 10 ** 5, spec=2)
    assert abs(x.mean()) < 0.02
    assert x.var() == pytest.approx(1 / (1 - 0.25), abs=0.05)


def test_arch1_second_moment():
    x = simulate_trajectory(DiagonalARCHFamily(1), [1.0, 0.5], 10 ** 5, spec=3)
    assert np.mean(x ** 2) == pytest.approx(2.0, abs=0.1)


def test_stationarity_of_halves():
    x = simulate_trajectory(VARFamily(2, intercept=True),
                            [0.5, -0.5, 0.4, 0.1, -0.1, 0.3, 1.0, 0.2, 0.7], 40000, spec=8)
    a, b = x[:20000], x[20000:]
    # standard errors of the half-sample means are about 0.01 here
    assert np.all(np.abs(a.mean(axis=0) - b.mean(axis=0)) < 0.06)
    assert np.all(np.abs(a.var(axis=0) / b.var(axis=0) - 1) < 0.08)


def test_describe_round_trips_box():
    fam = ARARCHFamily(1)
    info = fam.describe()
    assert [p["name"] for p in info["parameters"]] == list(fam.param_names)
    assert [p["kind"] for p in info["parameters"]] == ["linear", "linear", "scale", "linear"]
    box = fam.default_box()
    assert [p["lower"] for p in info["parameters"]] == box.lower.tolist()
