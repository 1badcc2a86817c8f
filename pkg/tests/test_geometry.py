import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import ndimage

from occlab import geometry as geo

RNG = np.random.default_rng(12345)


def leaf_shapes():
    return [
        geo.Hyperplane([0.0, 1.0], 0.3),
        geo.Hyperplane(np.array([1.0, 2.0, 2.0]) / 3.0, -0.5),
        geo.Sphere([0.0, 0.0], 1.0),
        geo.Sphere([0.5, -1.0, 2.0], 2.0),
        geo.Graph.linear([1.0]),
        geo.Graph.linear([2.0, -1.0]),
        geo.Graph.quadratic(0.25, (-3.0, 3.0)),
    ]


def tube_points(man, n, frac=0.9, cap=2.0, rng=RNG):
    p, nrm = man.sample(n, rng, radius=2.0)
    r = min(man.reach, cap) * frac
    t = rng.uniform(-r, r, size=n)
    return p + t[:, None] * nrm


@pytest.mark.parametrize("man", leaf_shapes(), ids=lambda m: m.describe()["tag"])
def test_eikonal_by_finite_differences(man):
    x = tube_points(man, 1000)
    # keep central differences away from the manifold itself and the sphere centre
    d = man.distance(x)
    x = x[d > 1e-4]
    g = geo.fd_gradient(lambda y: man.signed_distance(y, check=False), x, h=1e-6)
    assert np.all(np.abs(np.linalg.norm(g, axis=-1) - 1.0) <= 1e-4)


@pytest.mark.parametrize("man", leaf_shapes(), ids=lambda m: m.describe()["tag"])
def test_analytic_normal_matches_finite_differences(man):
    x = tube_points(man, 300)
    x = x[man.distance(x) > 1e-4]
    fd = geo.fd_gradient(lambda y: man.signed_distance(y, check=False), x)
    np.testing.assert_allclose(man.gradient_signed_distance(x, check=False), fd, atol=1e-5)


@pytest.mark.parametrize("man", leaf_shapes() + [geo.SquareBoundary(), geo.CrossingLines()],
                         ids=lambda m: m.describe()["tag"])
def test_projection_idempotent_and_optimal(man):
    if man.reach > 0:
        x = tube_points(man, 1000)
    else:
        x = RNG.uniform(-2, 2, size=(1000, man.dim))
    p = man.project(x)
    np.testing.assert_allclose(man.project(p), p, atol=1e-9)
    np.testing.assert_allclose(man.distance(p), 0.0, atol=1e-9)
    np.testing.assert_allclose(np.linalg.norm(x - p, axis=-1), man.distance(x), atol=1e-9)
    q, _ = man.sample(4000, RNG, radius=2.5)
    brute = np.min(np.linalg.norm(x[:, None, :] - q[None, :, :], axis=-1), axis=1)
    assert np.all(man.distance(x) <= brute + 1e-9)


def level_set_cases():
    return [
        (geo.Hyperplane([0.0, 1.0], 0.0), 1.0),
        (geo.Sphere([0.0, 0.0], 1.0), 1.0),
        (geo.Sphere([0.0, 0.0, 0.0], 1.0), 1.0),
        (geo.Graph.quadratic(0.25, (-3.0, 3.0)), 2.0),
    ]


@pytest.mark.parametrize("man,reach", level_set_cases(), ids=lambda v: getattr(v, "tag", str(v)))
def test_level_set_distance_equivalence_on_triples(man, reach):
    rng = np.random.default_rng(7)
    n = 10_000
    cap = min(reach, 2.0)
    a_values = np.linspace(0.01, 0.6 * cap, 50)
    a = a_values[rng.integers(0, 50, n)]
    eps = rng.uniform(1e-3, 1.0, n) * (0.99 * cap - a)
    p, nrm = man.sample(n, rng, radius=1.5)
    t = rng.uniform(-0.95 * cap, 0.95 * cap, n)
    x = p + t[:, None] * nrm
    d = man.distance(x)
    dl = np.empty(n)
    for av in a_values:
        m = a == av
        dl[m] = man.level_set_distance(x[m], av)
    lhs = dl < eps
    rhs = (d > a - eps) & (d < a + eps)
    # points on a band edge are decided by rounding; nothing else may disagree
    edge = (np.abs(dl - eps) < 1e-9) | (np.abs(d - (a - eps)) < 1e-9) | (np.abs(d - (a + eps)) < 1e-9)
    assert np.array_equal(lhs[~edge], rhs[~edge])
    assert edge.mean() < 1e-3
    assert lhs.any() and (~lhs).any()


def test_level_set_distance_equivalence_helper_and_precondition():
    s = geo.Sphere([0.0, 0.0], 1.0)
    x = np.array([[1.25, 0.0], [1.5, 0.0], [0.8, 0.0]])
    near_level, in_band = geo.level_set_distance_equivalence(s, 0.2, 0.1, x)
    assert near_level.tolist() == in_band.tolist() == [True, False, True]
    with pytest.raises(geo.OutsideReachError):
        geo.level_set_distance_equivalence(s, 0.95, 0.1, x)


def test_good_extension_band_identity_on_grid():
    s = geo.Sphere([0.0, 0.0], 1.0)
    band = 0.45
    fol = geo.good_extension(s, band)
    g = np.linspace(-2.0, 2.0, 801)
    X = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1)
    d = s.distance(X)
    phi = fol(X)
    inside = d <= band
    assert np.array_equal(phi[inside], d[inside])
    assert np.all(phi[~inside] >= band)
    # small sublevel sets coincide with distance tubes
    for a in (0.05, 0.2, 0.45):
        assert np.array_equal(phi < a, d < a)
    # beyond the outer radius phi is constant
    outer = fol.params["outer"]
    far = d >= outer
    assert np.ptp(phi[far]) == 0.0
    # {phi >= band} splits into the inner disk and the outer region
    _, n_comp = ndimage.label(phi >= band)
    assert n_comp == 2
    _, n_tube = ndimage.label(phi < band)
    assert n_tube == 1


def test_good_extension_gradient_continuous_and_bounded():
    s = geo.Sphere([0.0, 0.0], 1.0)
    fol = geo.good_extension(s, 0.45)
    r = np.linspace(0.05, 1.95, 4000)
    x = np.stack([r, np.zeros_like(r)], axis=1)
    gr = fol.gradient(x)[:, 0]
    fd = geo.fd_gradient(fol, x)[:, 0]
    np.testing.assert_allclose(gr, fd, atol=1e-6)
    # continuous off the circle; the kink of d sits at r = 1
    jumps = np.abs(np.diff(gr))
    crossing = (r[:-1] < 1) & (r[1:] > 1)
    assert np.max(jumps[~crossing]) < 0.01
    assert np.all(np.abs(gr) <= 1.0 + 1e-12)


def test_good_extension_requires_band_inside_reach():
    with pytest.raises(geo.OutsideReachError):
        geo.good_extension(geo.Sphere([0.0, 0.0], 1.0), 1.0)


def test_signed_distance_outside_reach_raises():
    s = geo.Sphere([0.0, 0.0], 1.0)
    with pytest.raises(geo.OutsideReachError):
        s.signed_distance(np.array([[0.0, 0.0]]))
    with pytest.raises(geo.ProjectionNotUnique):
        s.project(np.array([0.0, 0.0]))


def test_orientation_conventions():
    assert geo.Sphere([0, 0], 1.0).signed_distance(np.array([1.5, 0.0])) == pytest.approx(0.5)
    assert geo.Hyperplane([0.0, 1.0]).signed_distance(np.array([0.0, -2.0])) == -2.0
    g = geo.Graph.linear([1.0])
    assert g.signed_distance(np.array([0.0, 1.0])) == pytest.approx(1 / math.sqrt(2))


def test_piecewise_shapes_have_no_signed_distance():
    for m in (geo.SquareBoundary(), geo.CrossingLines()):
        assert m.reach == 0.0
        with pytest.raises(geo.UnsupportedShapeError):
            m.signed_distance(np.zeros(2))


def test_piecewise_projection_multiplicity():
    _, mult = geo.SquareBoundary().minimizers(np.array([[0.5, 0.5], [0.5, 0.1]]))
    assert mult.tolist() == [True, False]
    p, tie = geo.CrossingLines().minimizers(np.array([[1.0, 0.0], [1.0, 0.5]]))
    assert tie.tolist() == [True, False]


def test_square_interior_foliation_unit_gradient_off_diagonals():
    fol = geo.square_interior_foliation()
    x = RNG.uniform(-1, 2, size=(5000, 2))
    g = fol.gradient(x)
    np.testing.assert_allclose(np.linalg.norm(g, axis=1), 1.0, atol=1e-12)
    _, n = ndimage.label(fol(np.stack(np.meshgrid(np.linspace(-1, 2, 301),
                                                  np.linspace(-1, 2, 301), indexing="ij"),
                                      axis=-1)) > 0)
    assert n == 1


def test_decomposition_formulas_degenerate_in_mixed_quadrants():
    # both decomposition formulas vanish identically on x1 < 0 < x2 and on x2 < 0 < x1 (square)
    x = np.array([[-0.5, 0.7], [0.3, -0.2]])
    np.testing.assert_array_equal(geo.square_decomposition_phi(x), 0.0)
    g = geo.fd_gradient(geo.square_decomposition_phi, x)
    np.testing.assert_array_equal(g, 0.0)


def test_level_set_manifold_of_sphere():
    s = geo.Sphere([0.0, 0.0], 1.0)
    u = geo.level_set_manifold(s, 0.2)
    assert u.reach == pytest.approx(0.2)
    x = np.array([[1.3, 0.0], [0.7, 0.0], [0.0, 0.0]])
    np.testing.assert_allclose(u.distance(x), [0.1, 0.1, 0.8])
    assert geo.level_set_manifold(s, 1.5).radius == 2.5


def test_graph_newton_projection_matches_brute_force():
    g = geo.Graph.quadratic(0.25, (-4.0, 4.0))
    x = RNG.normal(size=(300, 2)) * 1.5
    u = np.linspace(-8, 8, 160001)

    def brute(xi):
        k = np.argmin(np.hypot(u - xi[0], 0.25 * u * u - xi[1]))
        v = np.linspace(u[k] - 2e-4, u[k] + 2e-4, 4001)
        return np.min(np.hypot(v - xi[0], 0.25 * v * v - xi[1]))

    np.testing.assert_allclose(g.distance(x), [brute(xi) for xi in x], atol=1e-10)
    assert g.reach == pytest.approx(2.0)


def test_make_manifold_and_catalog():
    assert isinstance(geo.make_manifold({"tag": "sphere", "center": [0, 0]}), geo.Sphere)
    assert isinstance(geo.make_manifold({"tag": "graph", "slope": [1.0]}), geo.Graph)
    with pytest.raises(geo.GeometryError):
        geo.make_manifold({"tag": "torus"})
    with pytest.raises(geo.GeometryError):
        geo.Hyperplane([1.0, 1.0])
    assert set(geo.MANIFOLD_CATALOG) >= {"hyperplane", "sphere", "graph"}


def test_foliation_provenance_validated():
    with pytest.raises(ValueError):
        geo.Foliation(lambda x: x[..., 0], None, geo.full_space(), "made-up")


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=4, max_size=4))
def test_distance_is_one_lipschitz(v):
    x, y = np.array(v[:2]), np.array(v[2:])
    for m in (geo.Sphere([0, 0], 1.0), geo.SquareBoundary(), geo.CrossingLines(),
              geo.Graph.linear([0.5])):
        assert abs(m.distance(x) - m.distance(y)) <= np.linalg.norm(x - y) + 1e-12


@settings(max_examples=60, deadline=None)
@given(st.floats(0.05, 0.9), st.floats(-0.95, 0.95), st.floats(0, 2 * math.pi))
def test_good_extension_equals_distance_in_band(band, t, ang):
    s = geo.Sphere([0.0, 0.0], 1.0)
    fol = geo.good_extension(s, band)
    r = 1 + t * band
    x = np.array([r * math.cos(ang), r * math.sin(ang)])
    assert fol(x) == pytest.approx(abs(r - 1), abs=1e-15)
