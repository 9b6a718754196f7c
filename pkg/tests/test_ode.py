import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special

from qpng_lab.errors import DomainError
from qpng_lab.ode import (
    OdeFamilyParam, as_family, exact_triple, f_c, f_c_derivs, f_c_prime, f_infinity,
    f_two, f_two_middle, f_two_middle_prime, g_c, g_c_derivs, g_system_residual,
    gluing_constants, match_c, ode_residual,
)
from qpng_lab.ratefn import RateCurve
from qpng_lab.specialfn import QParam


def implicit_rhs(g, x, c):
    # right side of the implicit relation for log G, principal square roots
    d = c * c - 4
    num = c * x * np.sqrt(d * g + 0j) - np.sqrt(d * d * g * x * x + 16 * d + 0j)
    den = d * x * np.sqrt(g + 0j) - np.sqrt(d * c * c * g * x * x + 16 * c * c + 0j)
    return (2 * c / np.sqrt(d + 0j) * np.arctanh(num / den)).real


def fd_residual(F, x, h=1e-3):
    # independent central differences for -4F + 3xF' - x^2F'' + 4 - 4exp(-F'')
    f0, fp, fm = F(x), F(x + h), F(x - h)
    d1 = (fp - fm) / (2 * h)
    d2 = (fp - 2 * f0 + fm) / (h * h)
    return -4 * f0 + 3 * x * d1 - x * x * d2 + 4 - 4 * math.exp(-d2)


def test_family_param():
    assert as_family("inf").infinite
    assert as_family(3).c == 3.0
    assert str(as_family("inf")) == "inf"
    with pytest.raises(DomainError):
        OdeFamilyParam(0.0)


def test_g_special_values():
    assert g_c(1.0, "inf") == pytest.approx(2.0, abs=1e-14)
    assert g_c(2.0 - 1e-9, 2.0) == pytest.approx(1.0, abs=1e-8)
    assert g_c(2.0, 5.0) == 1.0
    # c = 2 closed form through Lambert W
    x = 0.7
    w = special.lambertw(math.e * x / 2).real
    assert g_c(x, 2.0) == pytest.approx(4 * w * w / (x * x), rel=1e-13)
    with pytest.raises(DomainError):
        g_c(2.5, 3.0)


@pytest.mark.parametrize("c", [2.5, 5.0, 20.0])
@pytest.mark.parametrize("x", [0.05, 0.4, 1.0, 1.7, 1.99])
def test_g_solves_implicit_relation(c, x):
    g = g_c(x, c)
    assert g > 1.0
    assert abs(math.log(g) - implicit_rhs(g, x, c)) < 1e-10


@pytest.mark.parametrize("c", [0.5, 1.5, 2.0, 5.0, 50.0, "inf"])
def test_g_system_residual(c):
    xs = np.linspace(0.1, 1.95, 20)
    assert max(abs(g_system_residual(x, c)) for x in xs) < 1e-6
    assert all(g_c(x, c) >= 1.0 for x in xs)


@pytest.mark.parametrize("c", [2.0, 5.0, math.inf])
def test_boundary_conditions(c):
    assert f_c(2.0, c) == 0.0 and f_c_prime(2.0, c) == 0.0
    x = 2.0 - 1e-7
    f, f1, f2, f3 = f_c_derivs(x, c)
    assert abs(f) < 1e-6 and abs(f1) < 1e-6 and abs(f2) < 1e-6
    assert f3 == pytest.approx(-0.5, abs=1e-3)
    g, g1, g2 = g_c_derivs(1.99999, c)
    cc = as_family(c).c
    assert g2 == pytest.approx(0.5 - 0.25 / cc ** 2, abs=1e-3)


def test_c_infinity_closed_form():
    for x in np.linspace(0.1, 2.0, 12):
        assert f_c(x, "inf") == pytest.approx(float(f_infinity(x)), abs=1e-8)


def test_c_two_closed_form():
    for x in np.linspace(0.1, 1.9, 10):
        assert f_c(x, 2.0) == pytest.approx(f_two_middle(x), abs=1e-8)
        assert f_c_prime(x, 2.0) == pytest.approx(f_two_middle_prime(x), abs=1e-8)


def test_residual_closed_forms():
    for x in np.linspace(0.2, 1.9, 10):
        assert abs(fd_residual(lambda v: float(f_infinity(v)), x)) < 1e-6
        assert abs(ode_residual(lambda v: float(f_infinity(v)), x)) < 1e-6
        assert abs(ode_residual(exact_triple("inf"), x)) < 1e-12
    qp = QParam(0.4)
    par = lambda v: (1 - qp.q) + 0.5 * qp.eta * v * v
    for x in (-3.0, -0.5, 0.7, 4.0):
        # differences are exact on a quadratic, so a wide step avoids roundoff
        assert abs(ode_residual(par, x, h=0.1)) < 1e-8
        assert abs(fd_residual(par, x, h=0.1)) < 1e-8
    assert abs(fd_residual(f_two_middle, 1.0)) < 1e-6


@pytest.mark.parametrize("c", [1.0, 3.0, 8.0])
def test_residual_family(c):
    for x in (0.3, 1.0, 1.6):
        assert abs(ode_residual(exact_triple(c), x)) < 1e-8


def test_residual_on_curve():
    grid = np.linspace(0.2, 1.9, 341)
    curve = RateCurve(grid, np.asarray(f_infinity(grid)), {})
    assert abs(ode_residual(curve, 1.0)) < 1e-4


def test_gluing_constants():
    q2, x0 = gluing_constants()
    assert q2 == pytest.approx(3.724e-5, abs=1e-7)
    assert x0 == pytest.approx(-0.1867, abs=1e-3)
    eta = -math.log(q2)
    assert 1 - q2 + 0.5 * eta * x0 * x0 == pytest.approx(f_two_middle(x0), abs=1e-8)
    assert eta * x0 == pytest.approx(f_two_middle_prime(x0), abs=1e-8)


def test_f_two_branches():
    q2, x0 = gluing_constants()
    assert f_two(2.5) == 0.0 and f_two(2.0) == pytest.approx(0.0, abs=1e-14)
    h = 1e-7
    assert f_two(x0 - h) == pytest.approx(f_two(x0 + h), abs=1e-6)
    assert f_two(-3.0) == pytest.approx(1 - q2 + 4.5 * (-math.log(q2)), rel=1e-14)
    vals = f_two(np.linspace(-1, 2, 31))
    assert np.all(np.diff(vals) <= 1e-12)


@given(st.floats(min_value=0.3, max_value=30.0), st.floats(min_value=0.05, max_value=1.95))
@settings(max_examples=30, deadline=None)
def test_log_g_is_nonnegative(c, x):
    # F'' = log G >= 0 keeps F_c convex
    assert g_c(x, c) >= 1.0 - 1e-14


def test_match_c_recovers_two():
    q2, _ = gluing_constants()
    grid = np.linspace(-1.0, 2.0, 61)
    curve = RateCurve(grid, f_two(grid), {})
    rep = match_c(QParam(q2), curve, c_bounds=(0.5, 50.0))
    d = rep.as_dict()
    assert set(d) >= {"label", "c", "gluing_point", "residual"}
    assert d["label"].startswith("conjecture probe")
    assert rep.c == pytest.approx(2.0, rel=0.02)
    assert rep.gluing_point == pytest.approx(-0.1867, abs=0.02)
    assert rep.residual < 1e-4
