import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from qpng_lab.distributions import volume_size_pmf
from qpng_lab.errors import DomainError, InputError
from qpng_lab.partitions import Partition
from qpng_lab.ratefn import (
    RateCurve, ShapeGrid, SolverOptions, empty_cplan_log_mass, hook_integral, hook_integral_ls,
    inf_conv, j_eta, kappa_star, legendre, lipschitz_ratio, log_energy, minimize_f, moreau_check,
    parabola, phi_minus, phi_plus, phi_plus_prime, solve_inner, sup_deconv, u_closed_form, u_v,
    upsilon, v_q, vkls_shape, w_q,
)
from qpng_lab.specialfn import QParam

SQRT2 = math.sqrt(2.0)
COARSE = SolverOptions(left=-6.0, right=6.0, nodes=241)


def hook_oracle(rows):
    # 2-D quadrature of log(arm + leg) over the diagram scaled to unit area
    n = sum(rows)
    u = 1 / math.sqrt(n)
    cols = [sum(1 for r in rows if r > j) for j in range(rows[0])]
    total = 0.0
    for i, r in enumerate(rows):
        for j in range(r):
            f = lambda y, x, i=i, j=j: math.log((rows[i] * u - x) + (cols[j] * u - y))
            val, _ = integrate.dblquad(f, j * u, (j + 1) * u, i * u, (i + 1) * u, epsabs=1e-12)
            total += val
    return total


@st.composite
def partition_shapes(draw, max_n=30):
    n = draw(st.integers(min_value=1, max_value=max_n))
    k = draw(st.integers(min_value=1, max_value=n))
    bins = draw(st.lists(st.integers(min_value=0, max_value=k - 1), min_size=n, max_size=n))
    lam = Partition(sorted(Counter(bins).values(), reverse=True))
    return ShapeGrid.from_partition(lam, sub=draw(st.integers(1, 3)))


@st.composite
def feasible_shapes(draw):
    if draw(st.booleans()):
        return draw(partition_shapes())
    a = draw(st.floats(min_value=1.0, max_value=2.5))
    return ShapeGrid.from_function(lambda x: vkls_shape(x / a), nodes=801)


def test_phi_plus_values():
    assert phi_plus(2.0) == 0.0
    assert phi_plus(2 * math.cosh(1.0)) == pytest.approx(4 / math.e, abs=1e-13)
    h = 1e-5
    fd = (phi_plus(3 + h) - phi_plus(3 - h)) / (2 * h)
    assert phi_plus_prime(3.0) == pytest.approx(fd, abs=1e-7)
    with pytest.raises(DomainError):
        phi_plus(1.9)


def test_upsilon_values():
    assert upsilon(1.0) == pytest.approx(4 * math.sinh(0.5), abs=1e-15)
    assert upsilon(1e-8) / 1e-8 == pytest.approx(2.0, rel=1e-8)


def test_legendre_duality():
    mu = np.arange(2.05, 6.0 + 1e-9, 0.01)
    curve = legendre(upsilon, mu)
    assert np.max(np.abs(curve.values - phi_plus(mu))) < 1e-6
    p = np.arange(0.2, 3.0 + 1e-9, 0.05)
    back = legendre(phi_plus, p, bracket=(2.0, 60.0))
    assert np.max(np.abs(back.values - upsilon(p))) < 1e-6


def test_legendre_quadratic_self_dual():
    eta = 0.7
    x = np.linspace(-2, 2, 21)
    curve = legendre(lambda p: 0.5 * eta * p * p, x, bracket=(-50.0, 50.0))
    np.testing.assert_allclose(curve.values, x * x / (2 * eta), atol=1e-8)


def test_legendre_unbounded_is_infinite():
    curve = legendre(lambda p: -p, [1.0], bracket=(0.0, 1.0), max_expand=5)
    assert curve.values[0] == math.inf


@pytest.mark.parametrize("v", [0.3, 1.0, 2.0])
def test_u_v_maximizer(v):
    xs = 2 * math.cosh(v / 2)
    assert float(u_v(v, xs)) == pytest.approx(upsilon(v), abs=1e-8)
    for dx in (1e-3, 0.1):
        assert float(u_v(v, xs + dx)) < float(u_v(v, xs))
        if xs - dx >= 2:
            assert float(u_v(v, xs - dx)) < float(u_v(v, xs))


def test_vkls_shape():
    assert vkls_shape(SQRT2) == 0.0 and vkls_shape(-SQRT2) == 0.0
    assert vkls_shape(0.0) == pytest.approx(2 * SQRT2 / math.pi, abs=1e-15)
    x = np.arange(-SQRT2, SQRT2 + 1e-12, 1e-4)
    assert np.trapezoid(vkls_shape(x), x) == pytest.approx(1.0, abs=1e-6)


def test_shape_grid_validation():
    s = ShapeGrid.vkls()
    assert s.area == pytest.approx(1.0, abs=1e-12)
    bad = s.values.copy()
    bad[400] += 0.5
    with pytest.raises(InputError):
        ShapeGrid(s.left, s.right, s.step, bad)
    with pytest.raises(InputError):
        ShapeGrid(s.left, s.right, s.step, 2 * s.values)
    with pytest.raises(InputError):
        ShapeGrid(-1.05, 1.05, 0.1, np.zeros(22))


@given(feasible_shapes())
@settings(max_examples=30, deadline=None)
def test_shape_invariants(shape):
    v = shape.values
    assert np.all(v >= -1e-12)
    assert abs(v[0]) < 1e-12 and abs(v[-1]) < 1e-12
    assert np.all(np.abs(np.diff(v)) <= 2 * shape.step + 1e-9)
    assert shape.area == pytest.approx(1.0, abs=1e-9)
    assert shape.mirror().mirror().values.tolist() == v.tolist()


def test_hook_integral_vkls():
    assert hook_integral(ShapeGrid.vkls()) == pytest.approx(-0.5, abs=1e-6)
    coarse = abs(log_energy(ShapeGrid.vkls()) - 1.0)
    fine = abs(log_energy(ShapeGrid.vkls(nodes=3201)) - 1.0)
    assert coarse < 1e-3 and fine < coarse / 4


@pytest.mark.parametrize("rows", [(2, 1), (3, 1), (2, 2), (3, 2, 1)])
def test_hook_integral_staircase_quadrature(rows):
    shape = ShapeGrid.from_partition(rows, sub=8)
    oracle = hook_oracle(list(rows))
    assert hook_integral(shape) == pytest.approx(oracle, abs=1e-3)
    assert hook_integral_ls(shape) == pytest.approx(oracle, abs=1e-9)


@given(feasible_shapes())
@settings(max_examples=50, deadline=None)
def test_hook_representations_agree(shape):
    vk = hook_integral(shape)
    assert vk == pytest.approx(hook_integral_ls(shape), abs=1e-6)
    assert vk >= -0.5 - 1e-6
    assert hook_integral(shape.mirror()) == pytest.approx(vk, abs=1e-9)


def test_v_q_zero_and_asymptotics():
    qp = QParam(0.5)
    s = ShapeGrid.vkls()
    # the sampled edge at -sqrt 2 sits inside a grid cell
    assert v_q(2.0, s, qp) == pytest.approx(0.0, abs=1e-6)
    assert v_q(2.1, s, qp) == 0.0
    assert v_q(1.9, s, qp) > 0
    x = -5.0
    assert v_q(x, s, qp) == pytest.approx(qp.eta * (x * x / 2 + 1), abs=1e-12)


@given(feasible_shapes(), st.floats(min_value=-6, max_value=6), st.floats(min_value=0.05, max_value=0.95))
@settings(max_examples=50, deadline=None)
def test_v_q_bounds(shape, x, q):
    qp = QParam(q)
    neg = max(-x, 0.0)
    v = v_q(x, shape, qp)
    assert qp.eta * neg ** 2 / 2 - 1e-12 <= v <= qp.eta * (neg ** 2 / 2 + 1) + 1e-12


def test_w_q_special_values():
    qp = QParam(0.5)
    s = ShapeGrid.vkls()
    assert w_q(1.0, s, 2.5, qp) == pytest.approx(0.0, abs=1e-6)
    k = 1e-9
    for x in (-1.5, 0.5):
        assert w_q(k, s, x, qp) == pytest.approx(1 + qp.eta * max(-x, 0) ** 2 / 2, abs=1e-6)
    kappa, x = 0.7, -6.0
    expected = 1 + kappa * math.log(kappa) + kappa * (qp.eta - 1) + qp.eta * x * x / 2
    assert w_q(kappa, s, x, qp) == pytest.approx(expected, abs=1e-6)
    with pytest.raises(DomainError):
        w_q(0.0, s, 0.0, qp)


@given(feasible_shapes(), st.floats(min_value=0.05, max_value=3.0),
       st.floats(min_value=-4, max_value=4))
@settings(max_examples=40, deadline=None)
def test_w_q_matches_transposed_j_form(shape, kappa, x):
    qp = QParam(0.4)
    direct = w_q(kappa, shape, x, qp)
    j_form = 1 + kappa * math.log(kappa) + kappa * j_eta(shape.mirror(), x / math.sqrt(kappa), qp.eta)
    assert direct == pytest.approx(j_form, abs=1e-8)


def test_kappa_star_root():
    for q in (0.1, 0.5, 0.9):
        qp = QParam(q)
        k = kappa_star(qp)
        assert k > 1
        assert 1 + k * math.log(k) - k == pytest.approx(qp.eta, abs=1e-12)


def test_inner_solver_closed_form_regions():
    qp = QParam(0.5)
    assert u_closed_form(2.5, qp) == -1.0
    assert u_closed_form(0.0, qp) is None
    res = solve_inner(3.0, qp, COARSE)
    assert res.converged
    assert res.value == pytest.approx(-1.0, abs=2e-3)
    assert np.all(np.diff(res.history) <= 1e-12)
    y = -3.0
    res = solve_inner(y, qp, COARSE)
    assert res.value == pytest.approx(u_closed_form(y, qp), abs=2e-3)


@pytest.mark.slow
def test_minimize_f_parabola_and_zero():
    qp = QParam(0.5)
    res = minimize_f(-3.0, qp, COARSE)
    assert res.value == pytest.approx(float(parabola(-3.0, qp)), abs=1e-2)
    assert res.kappa == pytest.approx(0.5, abs=2e-2)
    assert minimize_f(2.5, qp, COARSE).value < 1e-3
    vals = [h for _, h in res.history]
    assert min(vals) == pytest.approx(res.value)


def convex_curve(f, lo=-3, hi=3, n=241):
    x = np.linspace(lo, hi, n)
    return RateCurve(x, f(x))


def brute_inf_conv(f, eta, xs):
    return np.array([np.min(f.values + 0.5 * eta * (x - f.grid) ** 2) for x in xs])


def test_inf_conv_trivial_and_brute_force():
    eta = 0.8
    x = np.linspace(-2, 2, 41)
    zero = RateCurve(x, np.zeros_like(x))
    np.testing.assert_allclose(inf_conv(zero, eta, x).values, 0.0, atol=1e-15)
    vals = np.full_like(x, math.inf)
    vals[10] = 0.3
    point = RateCurve(x, vals)
    np.testing.assert_allclose(inf_conv(point, eta, x).values,
                               0.3 + 0.5 * eta * (x - x[10]) ** 2, atol=1e-14)
    wiggly = RateCurve(x, np.sin(3 * x) + 0.1 * x * x)
    np.testing.assert_allclose(inf_conv(wiggly, eta, x).values, brute_inf_conv(wiggly, eta, x),
                               atol=1e-13)


@pytest.mark.parametrize("f", [np.abs, lambda x: x ** 4 / 40, lambda x: np.maximum(x, 0) ** 2])
def test_moreau_round_trip(f):
    # the deconvolution maximizer sits at mu + slope / eta, so the
    # smoothed curve needs a wider domain than the comparison window
    eta = 0.69
    curve = convex_curve(f, -8, 8, 641)
    smoothed = inf_conv(curve, eta, curve.grid)
    window = np.linspace(-2, 2, 81)
    back = sup_deconv(smoothed, eta, window)
    assert np.max(np.abs(back.values - f(window))) < 2e-2


def test_sup_deconv_of_parabola():
    eta = 0.5
    curve = convex_curve(lambda x: 0.5 * eta * x * x)
    out = sup_deconv(curve, eta, np.array([0.0]))
    # exact for the piecewise-linear interpolant, whose chords sit eta dx^2 / 8 high
    dx = curve.grid[1] - curve.grid[0]
    assert 0.0 <= out.values[0] <= eta * dx * dx / 8 + 1e-15


def test_phi_minus_domain_and_moreau_report():
    qp = QParam(0.5)
    x = np.linspace(-4, 4, 161)
    F = RateCurve(x, np.where(x < 2, 0.25 * (2 - x) ** 2 * 0.69 / 0.5, 0.0))
    mu = np.linspace(-1, 4, 101)
    pm = phi_minus(F, qp, mu)
    assert np.all(np.isinf(pm.values[mu < 0]))
    assert np.all(np.isfinite(pm.values[mu >= 0]))
    rep = moreau_check(F, pm, qp.eta)
    assert set(rep) >= {"sup_gap", "lipschitz_ratio", "convexity_defect_F",
                        "convexity_defect_phi_minus"}
    assert rep["lipschitz_ratio"] == pytest.approx(lipschitz_ratio(F))


def test_rate_curve_csv_round_trip(tmp_path):
    c = RateCurve([0.0, 0.5, 1.0], [1.0, math.inf, 0.25], {"kind": "test"})
    path = tmp_path / "c.csv"
    c.write_csv(path)
    back = RateCurve.read_csv(path)
    np.testing.assert_array_equal(back.grid, c.grid)
    np.testing.assert_array_equal(back.values, c.values)
    assert convex_curve(np.abs).convexity_defect() >= 0
    assert convex_curve(lambda x: -x * x).convexity_defect() < 0
    with pytest.raises(InputError):
        RateCurve([1.0, 0.0], [0.0, 0.0])


def test_empty_cylindric_mass():
    q = 0.5
    for t in (1.0, 3.0):
        oracle = -t * t * (1 - q) + math.log(volume_size_pmf(q, 0)[0])
        assert empty_cplan_log_mass(t, q) == pytest.approx(oracle, abs=1e-13)
    t = 200.0
    assert -empty_cplan_log_mass(t, q) / t ** 2 == pytest.approx(1 - q, abs=1e-4)
