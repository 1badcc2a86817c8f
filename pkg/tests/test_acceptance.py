"""Acceptance criteria at full scale; each test prints one PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -s`` or ``scripts/run_acceptance.sh``.
"""
import math
import time

import numpy as np
import pytest
from scipy import ndimage

from occlab import experiments as ex
from occlab import geometry as geo

pytestmark = pytest.mark.slow


def report(capsys, k, ok, detail):
    with capsys.disabled():
        print(f"\n[acceptance {k:>2}] {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def gates(rep, prefix=""):
    return {g["name"]: g for g in rep.gates if g["name"].startswith(prefix)}


@pytest.fixture(scope="module")
def circle_run(tmp_path_factory):
    return ex.run_scenario(ex.builtin("circle-L=L=L"), tmp_path_factory.mktemp("circle"))


def test_1_mass_conservation(capsys, tmp_path):
    sc = ex.builtin("bm-mass-conservation")
    assert sc.estimator["dt"] == 1e-4 and sc.n_paths == 1000
    t0 = time.perf_counter()
    rep = ex.run_scenario(sc, tmp_path)
    wall = time.perf_counter() - t0
    mass = rep.estimates["trapezoid_mass"]
    rel = abs(mass - 1.0)
    ok = rel <= 1e-6 and wall < 10.0 and rep.passed
    report(capsys, 1, ok, f"trapezoid mass {mass!r}, rel err {rel:.1e} <= 1e-6; {wall:.2f} s < 10 s")


def test_2_local_time_level(capsys, tmp_path):
    sc = ex.builtin("bm-local-time")
    assert sc.estimator["dt"] == 1e-5 and sc.n_paths == 10_000 and sc.eps == [1e-2]
    rep = ex.run_scenario(sc, tmp_path)
    lt = rep.estimates["local_time"]
    target = math.sqrt(2 / math.pi)
    ok = abs(lt["value"] - target) <= 3 * lt["stderr"] and gates(rep)["tanaka_level"]["passed"]
    report(capsys, 2, ok, f"E L0 = {lt['value']:.5f} vs {target:.5f}, "
                          f"|diff| {abs(lt['value'] - target):.4f} <= 3 s.e. {3 * lt['stderr']:.4f}")


def test_3_density_equals_symmetric_local_time(capsys, circle_run):
    rows = {r["level"]: r for r in circle_run.estimates["identity"]["levels"]}
    pos = [rows[a] for a in (0.1, 0.2, 0.3)]
    ok = all(r["mean_abs_diff"] <= 3 * r["pooled_se"] for r in pos)
    neg = rows[-0.2]
    ok &= neg["density"] == 0.0 and neg["local_time"] == 0.0
    ok &= all(g["passed"] for g in gates(circle_run, "L_equals_symmetric").values())
    ok &= gates(circle_run)["negative_level_zero[a=-0.2]"]["passed"]
    worst = max(r["mean_abs_diff"] for r in pos)
    report(capsys, 3, ok, f"max per-path |diff| {worst:.1e} within 3 pooled s.e.; a=-0.2 both 0")


def test_4_density_equals_geometric_local_time(capsys, circle_run):
    rows = {r["level"]: r for r in circle_run.estimates["identity"]["levels"]}
    pos = [rows[a] for a in (0.1, 0.2, 0.3)]
    ok = all(abs(r["geometric_diff"]) <= 3 * r["geometric_pooled_se"] for r in pos)
    ok &= all(g["passed"] for g in gates(circle_run, "L_equals_geometric").values())
    parts = ", ".join(f"a={r['level']}: {abs(r['geometric_diff']):.1e}<={3 * r['geometric_pooled_se']:.3f}"
                      for r in pos)
    report(capsys, 4, ok, parts)


def test_5_graph_scaling(capsys, tmp_path):
    sc = ex.builtin("graph-scaling")
    assert sc.n_paths == 10_000
    rep = ex.run_scenario(sc, tmp_path)
    rows = rep.estimates["scaling"]
    ok = len(rows) == 3
    for r in rows:
        a = abs(r["graph"]["slope"][0])
        ok &= r["expected"] == pytest.approx(math.sqrt(1 + a * a))
        ok &= abs(r["ratio"] / r["expected"] - 1) <= 0.05
    ok &= rep.passed
    report(capsys, 5, ok, ", ".join(f"|a|={abs(r['graph']['slope'][0]):g}: "
                                    f"{r['ratio']:.4f}/{r['expected']:.4f}" for r in rows))


def test_6_occupation_formula_residual(capsys, tmp_path):
    rep = ex.run_scenario(ex.builtin("sphere-residual"), tmp_path)
    r = rep.estimates["residual"]
    ok = r["residual"] < 0.05 and r["slab_width"] != r["level_spacing"] and rep.passed
    report(capsys, 6, ok, f"relative residual {r['residual']:.2e} < 0.05 "
                          f"(levels {r['level_spacing']:.3g}, slabs {r['slab_width']:.3g})")


def _geometry_suite():
    rng = np.random.default_rng(2024)
    shapes = [geo.Hyperplane([0.0, 1.0], 0.3), geo.Hyperplane(np.array([1.0, 2.0, 2.0]) / 3, -0.5),
              geo.Sphere([0.0, 0.0], 1.0), geo.Sphere([0.5, -1.0, 2.0], 2.0),
              geo.Graph.linear([1.0]), geo.Graph.quadratic(0.25, (-3.0, 3.0))]
    fails = []
    for m in shapes:
        cap = min(m.reach, 2.0)
        p, nrm = m.sample(1000, rng, radius=2.0)
        x = p + rng.uniform(-0.9 * cap, 0.9 * cap, 1000)[:, None] * nrm
        x = x[m.distance(x) > 1e-4]
        g = geo.fd_gradient(lambda y: m.signed_distance(y, check=False), x, h=1e-6)
        if np.any(np.abs(np.linalg.norm(g, axis=-1) - 1) > 1e-4):
            fails.append(f"eikonal {m.describe()['tag']}")
    for m in shapes + [geo.SquareBoundary(), geo.CrossingLines()]:
        x = rng.uniform(-2, 2, size=(1000, m.dim))
        if m.reach > 0:
            p, nrm = m.sample(1000, rng, radius=2.0)
            x = p + rng.uniform(-0.9, 0.9, 1000)[:, None] * min(m.reach, 2.0) * nrm
        pr = m.project(x)
        q, _ = m.sample(4000, rng, radius=2.5)
        brute = np.min(np.linalg.norm(x[:, None] - q[None], axis=-1), axis=1)
        if not (np.allclose(m.project(pr), pr, atol=1e-9) and np.all(m.distance(x) <= brute + 1e-9)):
            fails.append(f"projection {m.describe()['tag']}")
    for m, reach in [(geo.Hyperplane([0.0, 1.0]), 1.0), (geo.Sphere([0.0, 0.0], 1.0), 1.0),
                     (geo.Sphere([0.0, 0.0, 0.0], 1.0), 1.0),
                     (geo.Graph.quadratic(0.25, (-3.0, 3.0)), 2.0)]:
        n = 10_000
        av = np.linspace(0.01, 0.6 * reach, 50)
        a = av[rng.integers(0, 50, n)]
        eps = rng.uniform(1e-3, 1.0, n) * (0.99 * reach - a)
        p, nrm = m.sample(n, rng, radius=1.5)
        x = p + rng.uniform(-0.95 * reach, 0.95 * reach, n)[:, None] * nrm
        d = m.distance(x)
        dl = np.empty(n)
        for v in av:
            dl[a == v] = m.level_set_distance(x[a == v], v)
        edge = (np.abs(dl - eps) < 1e-9) | (np.abs(d - a + eps) < 1e-9) | (np.abs(d - a - eps) < 1e-9)
        lhs, rhs = dl < eps, (d > a - eps) & (d < a + eps)
        if not np.array_equal(lhs[~edge], rhs[~edge]) or edge.mean() >= 1e-3:
            fails.append(f"level-set equivalence {m.describe()['tag']}")
    s = geo.Sphere([0.0, 0.0], 1.0)
    fol = geo.good_extension(s, 0.45)
    g = np.linspace(-2, 2, 801)
    X = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1)
    d, phi = s.distance(X), fol(X)
    ok = np.array_equal(phi[d <= 0.45], d[d <= 0.45]) and np.all(phi[d > 0.45] >= 0.45)
    ok &= all(np.array_equal(phi < a, d < a) for a in (0.05, 0.2, 0.45))
    ok &= ndimage.label(phi >= 0.45)[1] == 2
    if not ok:
        fails.append("good extension grid")
    return fails


def test_7_geometry_suite(capsys):
    t0 = time.perf_counter()
    fails = _geometry_suite()
    wall = time.perf_counter() - t0
    ok = not fails and wall < 60
    report(capsys, 7, ok, f"eikonal, projection, level-set equivalence, good extension: "
                          f"{'all exact' if not fails else fails}; {wall:.1f} s")


def test_8_integrability(capsys, tmp_path):
    rep = ex.run_scenario(ex.builtin("integrability"), tmp_path)
    cases = {(c["p"], c["dim"]): c for c in rep.estimates["cases"]}
    ok = all(c["certificate"]["passed"] == (p < 1) for (p, _), c in cases.items())
    ok &= {0.5, 1.0} <= {p for p, _ in cases}
    half = cases[(0.5, 2)]["paths"]
    ok &= half["n_paths"] == 1000 and half["all_finite"] and half["skipped"] == 0
    ok &= (tmp_path / "integrability" / "exponents.csv").exists()
    ok &= rep.passed
    report(capsys, 8, ok, f"certified iff p<1 for {sorted(cases)}; p=1/2 all "
                          f"{half['n_paths']} path integrals finite; exponent table written")


def test_9_singular_sde(capsys, tmp_path):
    rep = ex.run_scenario(ex.builtin("singular-sde"), tmp_path)
    d = rep.estimates["diagnostics"]
    occ = dict(zip(d["deltas"], d["occupation"]))
    T = rep.estimates["horizon"]
    cov = np.array(d["covariation_over_T"])
    ok = occ[1e-3] < 1e-3 * T
    ok &= np.max(np.abs(cov - np.eye(2))) <= 0.05
    ok &= bool(d["monotone"]) and rep.passed
    report(capsys, 9, ok, f"occupation(|x|<1e-3) {occ[1e-3]:.2e} < 1e-3 T; "
                          f"max |<X,X>/T - I| {np.max(np.abs(cov - np.eye(2))):.4f}; "
                          f"monotone {d['monotone']}")


@pytest.mark.parametrize("name", ["bm-mass-conservation", "integrability", "circle-L=L=L"])
def test_10_reproducible_reports(capsys, tmp_path, name):
    texts = []
    for run in ("a", "b"):
        ex.run_scenario(ex.builtin(name), tmp_path / run)
        texts.append((tmp_path / run / name / "report.json").read_text())
    same = ex.comparable_report(texts[0]) == ex.comparable_report(texts[1])
    tables = sorted(p.name for p in (tmp_path / "a" / name).iterdir())
    same &= all((tmp_path / "a" / name / f).read_bytes() == (tmp_path / "b" / name / f).read_bytes()
                for f in tables if f != "report.json")
    report(capsys, 10, same, f"{name}: rerun byte-identical except timestamp/wallclock ({tables})")
