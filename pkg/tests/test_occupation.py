import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from occlab import geometry as geo
from occlab.occupation import (DensityEstimate, SingularFunction, _cell_factor, disintegrate,
                               distance_power, exponent_comparison, fmt, grid_spacing,
                               integrability_check, level_set_fraction, occupation_formula_residual,
                               occupation_integral, occupation_measure, slab_centers,
                               transversal_density, uniform_levels)
from occlab.paths import QuadraticVariationModel, TimeGrid, simulate_paths, standard_bm


@pytest.fixture(scope="module")
def bm1():
    m = standard_bm(1)
    return m, QuadraticVariationModel("analytic", m), simulate_paths(m, TimeGrid(1.0, 1000), 2000, 5)


@pytest.fixture(scope="module")
def bm2():
    m = standard_bm(2, [1.0, 0.0])
    return m, QuadraticVariationModel("analytic", m), simulate_paths(m, TimeGrid(1.0, 500), 400, 9)


def local_time_mean(a, t=1.0):
    """E L^a_t of BM from 0 via Tanaka: E|B_t - a| - |a|."""
    s = math.sqrt(t)
    z = a / s
    return s * (2 * stats.norm.pdf(z) + z * (2 * stats.norm.cdf(z) - 1)) - abs(a)


def test_fmt_uses_twelve_significant_digits():
    assert fmt(1 / 3) == "0.333333333333"
    assert fmt(2.0) == "2"


def test_uniform_levels_anchored_at_zero():
    lv = uniform_levels(-0.234, 0.5, 0.1)
    assert lv[0] == pytest.approx(-0.3) and lv[-1] == pytest.approx(0.5)
    assert np.any(np.isclose(lv, 0.0, atol=1e-15))
    assert grid_spacing(lv) == pytest.approx(0.1)
    with pytest.raises(ValueError):
        grid_spacing([0.0, 0.1, 0.3])


def test_cell_factor():
    assert _cell_factor([0.01], 0.01) == 1
    assert _cell_factor([0.01, 0.005], 0.01) == 2
    assert _cell_factor([0.01], 0.015) == 3
    assert _cell_factor([math.pi * 1e-3], 0.01) is None


def test_occupation_mass_equals_horizon(bm1):
    m, qv, b = bm1
    occ = occupation_measure(b, qv)
    assert occ.total_mass == pytest.approx(1.0, rel=1e-12)
    assert occupation_measure(b, qv, geo.empty_region()).total_mass == 0.0
    est = occupation_integral(b, qv, None, 0, lambda x: np.ones(len(x)))
    assert est.value == pytest.approx(1.0, rel=1e-12) and est.stderr == pytest.approx(0, abs=1e-12)


def test_occupation_integral_second_moment(bm1):
    # E int_0^1 B_t^2 dt = 1/2 (left-point sum: (1 - dt)/2)
    m, qv, b = bm1
    est = occupation_integral(b, qv, None, 0, lambda x: x[:, 0] ** 2)
    assert abs(est.value - 0.4995) <= 3 * est.stderr


def test_singular_integrand_skips_only_declared_set():
    m = standard_bm(1)
    qv = QuadraticVariationModel("analytic", m)
    b = simulate_paths(m, TimeGrid(1.0, 10), 3, 0)  # X_0 = 0 lies on the singular set
    plane = geo.Hyperplane([1.0], 0.0)
    f = SingularFunction(plane, lambda d: 1.0 / d, singular_tol=0.0)
    est = occupation_integral(b, qv, None, 0, f)
    assert est.skipped == 3 and np.all(np.isfinite(est.per_path))
    with pytest.raises(FloatingPointError):
        occupation_integral(b, qv, None, 0, lambda x: 1.0 / x[:, 0])


def brute_density(b, qv, fol, eps, levels):
    x = b.left_states
    w = qv.component(b, 0)
    phi = fol(x)
    out = np.empty((len(b), len(levels)))
    for m, a in enumerate(levels):
        band = (phi >= a - eps) & (phi < a + eps)
        out[:, m] = (w * band).sum(axis=1) / (2 * eps)
    return out


@pytest.mark.parametrize("spacing,eps", [(0.01, 0.01), (0.015, 0.02), (0.007, 0.01)])
def test_density_matches_brute_force(bm1, spacing, eps):
    m, qv, b = bm1
    fol = geo.coordinate_foliation(0)
    levels = uniform_levels(-1.0, 1.0, spacing)
    est = transversal_density(b, qv, fol, 0, eps, levels)
    np.testing.assert_allclose(est.per_path, brute_density(b, qv, fol, eps, levels), atol=1e-12)


def test_density_mass_conservation_is_exact(bm1):
    m, qv, b = bm1
    est = transversal_density(b, qv, geo.coordinate_foliation(0), 0, 0.01,
                              uniform_levels(-6, 6, 0.01))
    assert est.outside_mass == pytest.approx(0.0, abs=1e-12)
    assert est.integral() == pytest.approx(1.0, rel=1e-9)


def test_density_coverage_gap_rejected(bm1):
    m, qv, b = bm1
    with pytest.raises(ValueError, match="coverage gap"):
        transversal_density(b, qv, geo.coordinate_foliation(0), 0, 0.01, uniform_levels(-1, 1, 0.02))


@pytest.mark.parametrize("a", [0.0, 0.5, -1.0])
def test_density_matches_tanaka_oracle(bm1, a):
    m, qv, b = bm1
    est = transversal_density(b, qv, geo.coordinate_foliation(0), 0, 0.02,
                              uniform_levels(-2, 2, 0.02), richardson=True)
    k = est.index(a)
    # discretisation bias of order sqrt(dt) at a = 0 is ~0.02
    assert abs(est.values[k] - local_time_mean(a)) <= 3 * est.stderr[k] + 0.03
    assert est.richardson["bandwidth"] == 0.01
    assert abs(est.richardson["values"][k] - est.values[k]) <= 3 * math.hypot(
        est.stderr[k], est.richardson["stderr"][k])


def test_density_csv(tmp_path, bm1):
    m, qv, b = bm1
    est = transversal_density(b, qv, geo.coordinate_foliation(0), 0, 0.05,
                              uniform_levels(-0.1, 0.1, 0.05))
    p = tmp_path / "d.csv"
    est.to_csv(p)
    rows = list(csv.reader(p.open()))
    assert rows[0] == ["level", "value", "stderr", "bandwidth"]
    assert len(rows) == 1 + len(est.levels)
    assert isinstance(est, DensityEstimate) and est.n_paths == 2000


def test_disintegration_regroups_occupation_integral(bm2):
    m, qv, b = bm2
    s = geo.Sphere([0.0, 0.0], 1.0)
    fol = geo.signed_distance_foliation(s, geo.ball_complement([0, 0], 0.2))
    f = lambda x: np.linalg.norm(x, axis=-1) ** 2
    centers = slab_centers(-1.0, 4.0, 0.05)
    lhs = occupation_integral(b, qv, fol.region, 0, f).value
    from_paths = disintegrate(b, fol, centers, {"f": f}, qv=qv)
    occ = occupation_measure(b, qv, fol.region)
    from_cloud = disintegrate(occ, fol, centers, {"f": f})
    assert from_paths.reconstruct("f") == pytest.approx(lhs, rel=1e-12)
    assert from_cloud.reconstruct("f") == pytest.approx(lhs, rel=1e-12)
    assert from_paths.total_mass == pytest.approx(occ.total_mass, rel=1e-12)
    # conditional law of |x|^2 on the leaf phi = c is concentrated on (1 + c)^2
    cm = from_paths.conditional_mean("f")
    occupied = from_paths.nu > 1e-3
    np.testing.assert_allclose(cm[occupied], (1 + centers[occupied]) ** 2, atol=0.06)
    pts, w = from_cloud.slab_cloud(int(np.argmax(from_cloud.nu)))
    assert w.sum() == pytest.approx(1.0)


def test_disintegration_needs_qv_for_paths(bm2):
    m, qv, b = bm2
    with pytest.raises(ValueError):
        disintegrate(b, geo.coordinate_foliation(0), [0.0, 0.1])


def test_occupation_formula_residual_small(bm2):
    m, qv, b = bm2
    s = geo.Sphere([0.0, 0.0], 1.0)
    fol = geo.signed_distance_foliation(s, geo.ball_complement([0, 0], 0.25))
    rep = occupation_formula_residual(b, qv, fol, lambda x: np.linalg.norm(x, axis=-1), 0, 0.02,
                                      uniform_levels(-0.8, 4.0, 0.02))
    assert rep.residual < 0.02
    assert rep.slab_width == pytest.approx(0.03)


def test_level_set_fraction_monotone(bm2):
    m, qv, b = bm2
    fr = level_set_fraction(b, qv, geo.coordinate_foliation(1), 0, [0.5, 0.1, 0.01])
    assert np.all(np.diff(fr) <= 0) and 0 < fr[0] <= 1


@pytest.mark.parametrize("p,passed,value", [(0.5, True, 2.0), (0.9, True, 10.0),
                                            (1.0, False, math.inf), (1.5, False, math.inf)])
def test_integrability_certificate(p, passed, value):
    cert = integrability_check(distance_power(geo.Sphere([0.0, 0.0], 1.0), p))
    assert cert.passed is passed
    if passed:
        assert cert.value == pytest.approx(value, rel=1e-6)
    else:
        assert math.isinf(cert.value)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.05, 0.95), st.sampled_from([2, 3, 4]))
def test_integrability_iff_p_below_one(p, dim):
    cert = integrability_check(distance_power(geo.Sphere(np.zeros(dim), 1.0), p))
    assert cert.passed
    assert cert.value == pytest.approx(1 / (1 - p), rel=1e-6)


@settings(max_examples=10, deadline=None)
@given(st.floats(1.0, 3.0))
def test_integrability_fails_from_one(p):
    assert not integrability_check(distance_power(geo.Hyperplane([0.0, 1.0]), p)).passed


def test_exponent_comparison_closed_forms():
    r = exponent_comparison(0.9, 3)
    assert r["transversal_pass"] and not r["lq_route_pass"]
    assert r["q_needed_gt"] == 1.5 and r["q_max_lt"] == pytest.approx(1 / 0.9)
    assert r["transversal_integral"] == pytest.approx(10.0)
    assert not exponent_comparison(1.0, 2)["transversal_pass"]


def test_banded_singular_function():
    s = geo.Sphere([0.0, 0.0], 1.0)
    f = SingularFunction(s, lambda d: d ** -0.5, tag="banded", band=0.3,
                         outer=lambda x: np.full(len(x), 7.0))
    x = np.array([[1.04, 0.0], [2.0, 0.0]])
    np.testing.assert_allclose(f(x), [5.0, 7.0])
    assert f.envelope(0.5, 2.0) == 7.0
    with pytest.raises(ValueError):
        SingularFunction(s, lambda d: d, tag="banded")
