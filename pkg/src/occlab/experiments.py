"""Built-in scenarios, validation, gate evaluation and artifact writing.

A scenario is a plain nested mapping (so it round-trips through YAML/JSON and
can be echoed verbatim into its report) wrapped in :class:`Scenario`.  Each
scenario names a pipeline; the pipeline runs the estimators, then turns the
configured gates into pass/fail outcomes.  Tolerances live in the gate
configuration only.
"""

from __future__ import annotations

import copy
import csv
import datetime as _dt
import hashlib
import json
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import geometry as geo
from .localtime import (_ControlAcc, _GeometricAcc, _GraphAcc, _ScalarLocalTimeAcc,
                        LocalTimeEstimate, LOCALTIME_CSV_HEADER, conjecture_probe,
                        control_diagnostics, field_local_time_accumulator, graph_scaling,
                        verify_L_equals_symmetric)
from .occupation import (_IntegralAcc, distance_power, exponent_comparison, fmt,
                         grid_spacing, integrability_check, occupation_formula_residual,
                         occupation_integral, transversal_density_accumulator, uniform_levels)
from .paths import (QuadraticVariationModel, SdeModel, TimeGrid, drifted_bm, iter_path_batches,
                    linear_sde, singular_radial_drift, standard_bm)
from .stats import fold, mean_se, pooled_se

FORMAT_VERSION = 1
DEFAULT_SEED = 20240601
DENSITY_CSV_HEADER = ["level", "value", "stderr", "bandwidth"]


class ScenarioError(ValueError):
    """Configuration or validation problem (reported before any simulation)."""

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


# ---------------------------------------------------------------- scenario type


SCENARIO_KEYS = ("name", "pipeline", "description", "tags", "exploratory", "model", "geometry",
                 "region", "estimator", "gates")


@dataclass
class Scenario:
    name: str
    pipeline: str
    model: dict
    estimator: dict
    geometry: dict = field(default_factory=dict)
    region: dict = field(default_factory=lambda: {"kind": "full-space"})
    gates: dict = field(default_factory=dict)
    exploratory: bool = False
    tags: list = field(default_factory=list)
    description: str = ""

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        unknown = sorted(set(d) - set(SCENARIO_KEYS))
        if unknown:
            raise ScenarioError([f"unknown scenario key {k!r}" for k in unknown])
        missing = [k for k in ("name", "pipeline", "model", "estimator") if k not in d]
        if missing:
            raise ScenarioError([f"missing scenario key {k!r}" for k in missing])
        return cls(**copy.deepcopy(d))

    def to_dict(self) -> dict:
        return {k: copy.deepcopy(getattr(self, k)) for k in SCENARIO_KEYS}

    @property
    def seed(self) -> int:
        return int(self.estimator.get("seed", DEFAULT_SEED))

    @property
    def eps(self) -> list:
        e = self.estimator.get("eps", [1e-2, 5e-3])
        return [float(v) for v in (e if isinstance(e, (list, tuple)) else [e])]

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid.from_dt(float(self.estimator.get("horizon", 1.0)),
                                float(self.estimator["dt"]))

    @property
    def n_paths(self) -> int:
        return int(self.estimator["n_paths"])


@dataclass
class RunReport:
    scenario: str
    config: dict
    estimates: dict
    gates: list
    seed: int
    input_hash: str
    wallclock_s: float
    timestamp: str

    @property
    def passed(self) -> bool:
        return all(g["passed"] for g in self.gates)

    def to_dict(self) -> dict:
        return {"scenario": self.scenario, "config": self.config, "estimates": self.estimates,
                "gates": self.gates, "seed": self.seed, "input_hash": self.input_hash,
                "wallclock_s": self.wallclock_s, "timestamp": self.timestamp}

    def to_json(self) -> str:
        return json.dumps(jsonable(self.to_dict()), indent=2, sort_keys=True) + "\n"


def jsonable(obj):
    """Plain-JSON view: numpy scalars unwrapped, arrays listed, non-finite floats as strings."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isfinite(v):
            return v
        return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
    return obj


def canonical_json(obj) -> bytes:
    return json.dumps(jsonable(obj), sort_keys=True, separators=(",", ":")).encode()


def input_hash(config: dict) -> str:
    """Git blob hash of the canonical JSON encoding of ``config``."""
    data = canonical_json(config)
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


# ---------------------------------------------------------------- config builders


def make_model(cfg: dict) -> SdeModel:
    cfg = dict(cfg)
    tag = cfg.get("tag")
    dim = int(cfg.get("dim", len(cfg.get("x0", [0.0]))))
    x0 = cfg.get("x0", [0.0] * dim)
    if tag == "standard-BM":
        return standard_bm(dim, x0)
    if tag == "drifted-BM":
        return drifted_bm(cfg.get("mu", 0.0), cfg.get("sigma", 1.0), x0)
    if tag == "linear-SDE":
        return linear_sde(cfg["matrix"], cfg.get("sigma", 1.0), x0)
    if tag == "singular-radial-drift":
        return singular_radial_drift(dim, x0)
    if tag == "user-coefficient":
        raise ScenarioError("user-coefficient models are code-only; they cannot come from a config")
    raise ScenarioError(f"unknown model tag {tag!r}")


def make_region(cfg: dict, manifold: Optional[geo.Manifold] = None) -> geo.Region:
    kind = cfg.get("kind", "full-space")
    if kind == "full-space":
        return geo.full_space()
    if kind == "empty":
        return geo.empty_region()
    if kind == "tubular-band":
        if manifold is None:
            raise ScenarioError("tubular-band region needs a manifold")
        return geo.tubular_band(manifold, float(cfg["width"]))
    if kind == "ball-complement":
        return geo.ball_complement(cfg.get("center", [0.0, 0.0]), float(cfg["radius"]))
    if kind == "level-band":
        raise ScenarioError("level-band regions are built from a foliation in code")
    raise ScenarioError(f"unknown region kind {kind!r}")


def make_levels(spec, eps: float) -> np.ndarray:
    if isinstance(spec, dict):
        return uniform_levels(float(spec["lo"]), float(spec["hi"]), float(spec.get("spacing", eps)))
    return np.asarray(spec, dtype=float)


# ---------------------------------------------------------------- gates


def gate(name: str, passed: bool, value=None, target=None, tolerance=None, detail: str = "") -> dict:
    return {"name": name, "passed": bool(passed), "value": value, "target": target,
            "tolerance": tolerance, "detail": detail}


def _within_se(name, value, target, se, k, detail=""):
    tol = k * se
    return gate(name, abs(value - target) <= tol, value, target, tol,
                detail or f"|value - target| <= {k:g} s.e.")


def _rel(name, value, target, rel_tol, detail=""):
    err = abs(value - target) / max(abs(target), 1e-300)
    return gate(name, err <= rel_tol, value, target, rel_tol,
                detail or f"relative error {err:.3g} <= {rel_tol:g}")


@dataclass
class Context:
    scenario: Scenario
    jobs: int = 1
    tables: dict = field(default_factory=dict)

    def paths(self, model, n_paths=None, dt=None, keep_noise=False, seed=None):
        sc = self.scenario
        grid = sc.grid if dt is None else TimeGrid.from_dt(sc.grid.horizon, dt)
        return iter_path_batches(model, grid, n_paths or sc.n_paths,
                                 sc.seed if seed is None else seed,
                                 keep_noise=keep_noise, jobs=self.jobs)

    def gate_cfg(self, name) -> Optional[dict]:
        return self.scenario.gates.get(name)

    def density_table(self, name, dens):
        self.tables[name] = (DENSITY_CSV_HEADER, dens.to_rows())

    def localtime_table(self, name, estimates: list[LocalTimeEstimate]):
        self.tables[name] = (LOCALTIME_CSV_HEADER, [e.row() for e in estimates])


# ---------------------------------------------------------------- pipelines


def _pipe_frozen(ctx: Context):
    sc = ctx.scenario
    model = make_model(sc.model)
    qv = QuadraticVariationModel("analytic", model)
    eps = sc.eps[0]
    levels = make_levels(sc.estimator["levels"], eps)
    circle = geo.Sphere(np.zeros(model.dim), 1.0)
    line = geo.Graph.linear([0.0] * (model.dim - 1))
    accs = [_IntegralAcc(qv, geo.full_space(), 0, lambda x: np.ones(len(x))),
            transversal_density_accumulator(qv, geo.coordinate_foliation(model.dim - 1), 0,
                                            eps, levels),
            _ScalarLocalTimeAcc(qv, float(model.x0[-1]), eps, component=model.dim - 1,
                                tanaka=True),
            _GeometricAcc(qv, circle, eps), _GraphAcc(qv, line, eps, weighted=True)]
    occ, dens, lt1, lgeo, lgr = fold(ctx.paths(model), accs)
    weighted = lgr.extra.pop("weighted_per_path")
    ctx.density_table("density.csv", dens)
    ctx.localtime_table("localtime.csv", [lt1, lgeo, lgr])
    values = {"occupation_integral": occ.value, "density_max": float(np.max(np.abs(dens.values))),
              "local_time_1d": lt1.value, "tanaka": lt1.crosscheck,
              "geometric_circle": lgeo.value, "graph_flat": lgr.value,
              "conjecture_weighted": float(weighted.mean())}
    out = {"values": values}
    gates = []
    if (g := ctx.gate_cfg("all_zero")) is not None:
        worst = max(abs(v) for v in values.values())
        gates.append(gate("all_zero", worst <= g.get("abs_tol", 0.0), worst, 0.0,
                          g.get("abs_tol", 0.0), "every estimate vanishes"))
    return out, gates


def _pipe_mass(ctx: Context):
    sc = ctx.scenario
    model = make_model(sc.model)
    qv = QuadraticVariationModel("analytic", model)
    eps = sc.eps[0]
    comp = int(sc.geometry.get("component", 0))
    fol = geo.coordinate_foliation(int(sc.geometry.get("phi_index", 0)))
    levels = make_levels(sc.estimator["levels"], eps)
    dens, = fold(ctx.paths(model), [transversal_density_accumulator(qv, fol, comp, eps, levels)])
    ctx.density_table("density.csv", dens)
    T = sc.grid.horizon
    out = {"density": dens.summary(), "trapezoid_mass": dens.integral(), "horizon": T}
    gates = []
    if (g := ctx.gate_cfg("mass_conservation")) is not None:
        gates.append(_rel("mass_conservation", dens.integral(), T, g["rel_tol"],
                          "trapezoid mass of the density against the horizon"))
    return out, gates


def _pipe_hyperplane(ctx: Context):
    sc = ctx.scenario
    model = make_model(sc.model)
    qv = QuadraticVariationModel("analytic", model)
    eps = sc.eps[0]
    comp = int(sc.geometry.get("component", 0))
    j = int(sc.geometry.get("phi_index", model.dim - 1))
    fol = geo.coordinate_foliation(j)
    levels = make_levels(sc.estimator["levels"], eps)
    normal = np.zeros(model.dim)
    normal[j] = 1.0
    plane = geo.Hyperplane(normal, 0.0)
    accs = [transversal_density_accumulator(qv, fol, comp, eps, levels, richardson=True),
            _ScalarLocalTimeAcc(qv, 0.0, eps, component=j, tanaka=True),
            _GeometricAcc(qv, plane, eps),
            _ControlAcc(qv, fol, None, 10, 1e-8)]
    dens, lt1, lgeo, ctrl = fold(ctx.paths(model), accs)
    ctx.density_table("density.csv", dens)
    lt1.extra.pop("bridge_per_path", None)
    ctx.localtime_table("localtime.csv", [lt1, lgeo])
    T = sc.grid.horizon
    k0 = dens.index(0.0)
    half = dens.richardson
    target = math.sqrt(2 * T / math.pi)
    reduction = float(np.max(np.abs(lgeo.per_path - lt1.per_path)))
    out = {"density": dens.summary(), "trapezoid_mass": dens.integral(),
           "density_at_0": float(dens.values[k0]), "density_at_0_stderr": float(dens.stderr[k0]),
           "density_at_0_half_band": float(half["values"][k0]),
           "density_at_0_extrapolated": float(half["extrapolated"][k0]),
           "local_time_1d": lt1.to_dict(), "geometric": lgeo.to_dict(),
           "hyperplane_reduction_max_abs_diff": reduction, "control": ctrl.to_dict(),
           "oracle": target}
    gates = []
    if (g := ctx.gate_cfg("mass_conservation")) is not None:
        gates.append(_rel("mass_conservation", dens.integral(), T, g["rel_tol"]))
    if (g := ctx.gate_cfg("tanaka_level")) is not None:
        gates.append(_within_se("tanaka_level", float(dens.values[k0]), target,
                                float(dens.stderr[k0]), g["k_se"],
                                "density at level 0 against E|B_T|"))
    if (g := ctx.gate_cfg("bandwidth_consistency")) is not None:
        se = pooled_se(dens.stderr[k0], half["stderr"][k0])
        gates.append(_within_se("bandwidth_consistency", float(half["values"][k0]),
                                float(dens.values[k0]), se, g["k_se"]))
    if (g := ctx.gate_cfg("hyperplane_reduction")) is not None:
        gates.append(gate("hyperplane_reduction", reduction <= g["abs_tol"], reduction, 0.0,
                          g["abs_tol"], "geometric vs 1-D local time, per path"))
    if (g := ctx.gate_cfg("control_floor")) is not None:
        gates.append(gate("control_floor", abs(ctrl.floor - 1.0) <= g["abs_tol"], ctrl.floor,
                          1.0, g["abs_tol"]))
    return out, gates


def _circle_parts(sc: Scenario):
    c = sc.geometry
    sphere = geo.Sphere(c.get("center", [0.0, 0.0]), float(c.get("radius", 1.0)))
    return sphere, float(c.get("band", 0.45)), [float(a) for a in c["levels"]]


def _pipe_circle(ctx: Context):
    sc = ctx.scenario
    model = make_model(sc.model)
    qv = QuadraticVariationModel("analytic", model)
    sphere, band, levels = _circle_parts(sc)
    eps = sc.eps[0]
    fol = geo.good_extension(sphere, band)
    k = float(sc.gates.get("L_equals_symmetric", {}).get("k_se", 3.0))
    rep = verify_L_equals_symmetric(ctx.paths(model), qv, fol, levels, eps,
                                    int(sc.geometry.get("component", 0)), k_se=k)
    n_ctrl = min(sc.n_paths, int(sc.estimator.get("n_paths_control", 200)))
    sd = geo.signed_distance_foliation(sphere, geo.tubular_band(sphere, band))
    ctrl_paths = list(ctx.paths(model, n_paths=n_ctrl))
    ctrl = control_diagnostics(ctrl_paths, qv, sd)
    # paths leaving the uniform band, where phi stops being the distance
    outside = np.concatenate([np.any(sphere.distance(b.states) >= band, axis=1)
                              for b in ctrl_paths])
    rows = []
    for r in rep["levels"]:
        rows.append(["density", fmt(r["level"]), fmt(r["density"]), fmt(r["density_stderr"]),
                     fmt(eps), fmt(r["local_time"])])
        if "geometric" in r:
            rows.append(["geometric", fmt(r["level"]), fmt(r["geometric"]),
                         fmt(r["geometric_stderr"]), fmt(eps), fmt(r["density"])])
    ctx.tables["localtime.csv"] = (LOCALTIME_CSV_HEADER, rows)
    out = {"identity": rep, "control": ctrl.to_dict(), "good_extension": fol.describe(),
           "band_exit": {"fraction": float(outside.mean()), "n_paths": int(outside.size)}}
    gates = []
    for r in rep["levels"]:
        a = r["level"]
        if a < -eps:
            if ctx.gate_cfg("negative_level_zero") is not None:
                gates.append(gate(f"negative_level_zero[a={a:g}]", r["both_zero"], 0.0, 0.0, 0.0))
            continue
        if (g := ctx.gate_cfg("L_equals_symmetric")) is not None:
            gates.append(gate(f"L_equals_symmetric[a={a:g}]",
                              r["mean_abs_diff"] <= g["k_se"] * r["pooled_se"],
                              r["mean_abs_diff"], 0.0, g["k_se"] * r["pooled_se"],
                              "per-path mean |density - local time of phi(X)|"))
        if (g := ctx.gate_cfg("L_equals_geometric")) is not None and "geometric" in r:
            gates.append(gate(f"L_equals_geometric[a={a:g}]",
                              r["geometric_diff"] <= g["k_se"] * r["geometric_pooled_se"],
                              r["geometric"], r["density"], g["k_se"] * r["geometric_pooled_se"],
                              "geometric local time at {d = a} against the density"))
    if (g := ctx.gate_cfg("control_floor")) is not None:
        gates.append(gate("control_floor", abs(ctrl.floor - 1.0) <= g["abs_tol"], ctrl.floor, 1.0,
                          g["abs_tol"], "signed distance in the band"))
    return out, gates


def _pipe_graph_scaling(ctx: Context):
    sc = ctx.scenario
    model = make_model(sc.model)
    qv = QuadraticVariationModel("analytic", model)
    eps = sc.eps[0]
    slopes = sc.geometry.get("slopes", [0.0, 1.0, 2.0])
    graphs = [geo.Graph.linear(np.atleast_1d(s).astype(float), model.dim) for s in slopes]
    rows = graph_scaling(ctx.paths(model), qv, graphs, eps)
    ctx.tables["scaling.csv"] = (["slope", "graph", "graph_stderr", "geometric",
                                  "geometric_stderr", "ratio", "ratio_stderr", "expected"],
                                 [[fmt(float(np.linalg.norm(np.atleast_1d(s)))), fmt(r["graph_lt"]),
                                   fmt(r["graph_lt_stderr"]), fmt(r["geometric_lt"]),
                                   fmt(r["geometric_lt_stderr"]), fmt(r["ratio"]),
                                   fmt(r["ratio_stderr"]), fmt(r["expected"])]
                                  for s, r in zip(slopes, rows)])
    out = {"scaling": rows}
    gates = []
    if (g := ctx.gate_cfg("ratio")) is not None:
        for s, r in zip(slopes, rows):
            gates.append(_rel(f"ratio[|a|={float(np.linalg.norm(np.atleast_1d(s))):g}]",
                              r["ratio"], r["expected"], g["rel_tol"],
                              f"ratio stderr {r['ratio_stderr']:.3g}"))
    return out, gates


def singular_sde_diagnostics(model: SdeModel, grid: TimeGrid, n_paths: int, seed: int,
                             deltas=(1e-1, 1e-2, 1e-3), jobs: int = 1,
                             reference: Optional[dict] = None) -> dict:
    """Observable surrogates for the singular radial drift: occupation of small balls
    around 0, the residual of ``|X|^2 - |X_0|^2 - sum 2 X.dW`` and realized covariation.

    ``reference`` (``{"n_paths", "refine"}``) reruns the occupation statistic at
    a finer step.  Only numbers are produced; nothing is interpreted.
    """
    deltas = [float(d) for d in deltas]
    N, n, dt, T = model.dim, grid.n_steps, grid.dt, grid.horizon
    occ_rows, qv_rows, resid_T, resid_mean = [], [], [], np.zeros(n + 1)
    clamps = exploded = 0
    for b in iter_path_batches(model, grid, n_paths, seed, keep_noise=True, jobs=jobs):
        r = np.linalg.norm(b.left_states, axis=-1)
        occ_rows.append(np.stack([(r < d).sum(axis=1) * dt / T for d in deltas], axis=1))
        inc = b.increments
        qv_rows.append(np.einsum("pki,pkj->pij", inc, inc) / T)
        x2 = np.sum(b.states ** 2, axis=-1)
        mart = np.concatenate([np.zeros((len(b), 1)),
                               np.cumsum(2 * np.einsum("pki,pki->pk", b.left_states, b.noise),
                                         axis=1)], axis=1)
        resid = x2 - x2[:, :1] - mart
        resid_T.append(resid[:, -1])
        resid_mean += resid.sum(axis=0)
        clamps += int(b.clamp_events.sum())
        exploded += int(b.exploded.sum())
    occ = np.concatenate(occ_rows)
    qvm = np.concatenate(qv_rows)
    om, ose = mean_se(occ)
    qm, qse = mean_se(qvm)
    resid_mean /= n_paths
    t = grid.times
    slope = float(np.polyfit(t, resid_mean, 1)[0])
    rt, rse = mean_se(np.concatenate(resid_T))
    clamp_rate = clamps / (n_paths * n)
    out = {"deltas": deltas, "occupation": om.tolist(), "occupation_stderr": ose.tolist(),
           "monotone": bool(np.all(np.diff(om) <= 0)),
           "covariation_over_T": qm.tolist(), "covariation_stderr": qse.tolist(),
           "martingale_residual_T": float(rt), "martingale_residual_T_stderr": float(rse),
           "martingale_residual_trend": slope, "clamp_rate": clamp_rate,
           "clamp_events": clamps, "exploded_paths": exploded,
           "unreliable": bool(clamp_rate > 0.5), "n_paths": n_paths, "dt": dt, "dim": N}
    if reference:
        fine = TimeGrid(grid.horizon, n * int(reference.get("refine", 4)))
        sub = singular_sde_diagnostics(model, fine, int(reference["n_paths"]), seed, deltas, jobs)
        out["reference"] = {"dt": fine.dt, "n_paths": sub["n_paths"],
                            "occupation": sub["occupation"],
                            "occupation_stderr": sub["occupation_stderr"],
                            "clamp_rate": sub["clamp_rate"]}
    return out


def _pipe_singular(ctx: Context):
    sc = ctx.scenario
    model = make_model(sc.model)
    if model.tag != "singular-radial-drift":
        raise ScenarioError("singular-sde pipeline needs the singular-radial-drift model")
    ref = sc.estimator.get("reference")
    rep = singular_sde_diagnostics(model, sc.grid, sc.n_paths, sc.seed,
                                   sc.geometry.get("deltas", [1e-1, 1e-2, 1e-3]), ctx.jobs, ref)
    ctx.tables["occupation.csv"] = (["delta", "occupation", "stderr"],
                                    [[fmt(d), fmt(v), fmt(s)] for d, v, s in
                                     zip(rep["deltas"], rep["occupation"],
                                         rep["occupation_stderr"])])
    gates = []
    T = sc.grid.horizon
    if (g := ctx.gate_cfg("small_ball_occupation")) is not None:
        d = float(g.get("delta", 1e-3))
        k = rep["deltas"].index(d)
        v = rep["occupation"][k]
        gates.append(gate(f"small_ball_occupation[delta={d:g}]", v < g["bound"], v, 0.0,
                          g["bound"], "fraction of [0, T] spent in the ball"))
    if (g := ctx.gate_cfg("covariation")) is not None:
        q = np.asarray(rep["covariation_over_T"])
        err = float(np.max(np.abs(q - np.eye(q.shape[0]))))
        gates.append(gate("covariation", err <= g["abs_tol"], err, 0.0, g["abs_tol"],
                          "max |<X^i, X^j>_T / T - delta_ij| (path average)"))
    if ctx.gate_cfg("monotone") is not None:
        gates.append(gate("monotone", rep["monotone"], rep["occupation"], None, None,
                          "occupation non-increasing as delta shrinks"))
    return {"diagnostics": rep, "horizon": T}, gates


def integrability_scenario(p: float, manifold: geo.Manifold, radius: float = 2.0,
                           model: Optional[SdeModel] = None, grid: Optional[TimeGrid] = None,
                           n_paths: int = 1000, seed: int = DEFAULT_SEED,
                           jobs: int = 1) -> dict:
    """Certificate for ``d(x, Gamma)^{-p}``, then path integrals of ``|f|`` when it passes."""
    f = distance_power(manifold, p)
    cert = integrability_check(f, radius)
    out = {"p": p, "dim": manifold.dim, "certificate": cert.to_dict(),
           "comparison": exponent_comparison(p, manifold.dim)}
    if cert.passed and model is not None:
        qv = QuadraticVariationModel("analytic", model)
        est = occupation_integral(iter_path_batches(model, grid, n_paths, seed, jobs=jobs),
                                  qv, None, 0, lambda x: np.abs(f(x)))
        out["paths"] = {"value": est.value, "stderr": est.stderr, "skipped": est.skipped,
                        "all_finite": bool(np.all(np.isfinite(est.per_path))),
                        "max": float(np.max(est.per_path)), "n_paths": n_paths}
    return out


def _pipe_integrability(ctx: Context):
    sc = ctx.scenario
    model = make_model(sc.model)
    radius = float(sc.geometry.get("radius", 2.0))
    cases = []
    for case in sc.geometry["cases"]:
        dim = int(case.get("dim", model.dim))
        man = geo.Sphere(np.zeros(dim), float(case.get("sphere_radius", 1.0)))
        run_paths = dim == model.dim and case.get("paths", True)
        cases.append(integrability_scenario(float(case["p"]), man, radius,
                                            model if run_paths else None, sc.grid,
                                            sc.n_paths, sc.seed, ctx.jobs))
    table = [exponent_comparison(p, n) for p in sc.geometry.get("table_p", [0.5, 0.9, 1.0])
             for n in sc.geometry.get("table_dim", [2, 3])]
    ctx.tables["exponents.csv"] = (
        ["p", "dim", "transversal_pass", "q_needed_gt", "q_max_lt", "lq_route_pass"],
        [[fmt(r["p"]), str(r["dim"]), str(r["transversal_pass"]).lower(), fmt(r["q_needed_gt"]),
          fmt(r["q_max_lt"]), str(r["lq_route_pass"]).lower()] for r in table])
    gates = []
    if ctx.gate_cfg("certificate") is not None:
        for c in cases:
            want = c["p"] < 1
            got = c["certificate"]["passed"]
            gates.append(gate(f"certificate[p={c['p']:g},N={c['dim']}]", got == want, got, want,
                              None, "certificate passes iff p < 1"))
    if (g := ctx.gate_cfg("closed_form")) is not None:
        for c in cases:
            if c["certificate"]["passed"]:
                gates.append(_rel(f"closed_form[p={c['p']:g},N={c['dim']}]",
                                  c["certificate"]["value"], 1.0 / (1.0 - c["p"]), g["rel_tol"]))
    if ctx.gate_cfg("paths_finite") is not None:
        for c in cases:
            if "paths" in c:
                gates.append(gate(f"paths_finite[p={c['p']:g}]", c["paths"]["all_finite"],
                                  c["paths"]["max"], None, None,
                                  "every per-path occupation integral of |f| is finite"))
    return {"cases": cases, "comparison_table": table}, gates


def _piecewise_common(ctx: Context, manifold, fol: geo.Foliation, decomposition: geo.Foliation,
                      probes: dict):
    sc = ctx.scenario
    model = make_model(sc.model)
    qv = QuadraticVariationModel("analytic", model)
    eps = sc.eps[0]
    levels = make_levels(sc.estimator["levels"], eps)
    accs = [transversal_density_accumulator(qv, fol, 0, eps, levels),
            field_local_time_accumulator(qv, fol, 0.0, eps),
            _ControlAcc(qv, fol, None, 10, 1e-8)]
    dens, lt0, ctrl = fold(ctx.paths(model), accs)
    ctx.density_table("density.csv", dens)
    ctx.localtime_table("localtime.csv", [lt0])
    n_ctrl = min(sc.n_paths, int(sc.estimator.get("n_paths_control", 100)))
    pr = control_diagnostics(ctx.paths(model, n_paths=n_ctrl), qv, decomposition)
    rng = np.random.default_rng(sc.seed)
    pts = rng.uniform(-2, 2, size=(20000, 2))
    gp = decomposition.gradient(pts)
    zero_frac = float(np.mean(np.linalg.norm(gp, axis=1) < 1e-9))
    proj = {name: {"point": list(x), "multiple": bool(manifold.minimizers(np.array(x))[1])}
            for name, x in probes.items()}
    T = sc.grid.horizon
    k0 = dens.index(0.0)
    out = {"density": dens.summary(), "trapezoid_mass": dens.integral(),
           "density_at_0": float(dens.values[k0]), "local_time_phi_at_0": lt0.to_dict(),
           "control": ctrl.to_dict(), "projections": proj,
           "decomposition_formula": {"control": pr.to_dict(), "zero_gradient_fraction": zero_frac,
                               "formula": decomposition.params.get("formula")}}
    gates = []
    if (g := ctx.gate_cfg("mass_conservation")) is not None:
        gates.append(_rel("mass_conservation", dens.integral(), T, g["rel_tol"]))
    if (g := ctx.gate_cfg("control_floor")) is not None:
        gates.append(gate("control_floor", abs(ctrl.floor - 1.0) <= g["abs_tol"], ctrl.floor,
                          1.0, g["abs_tol"]))
    if ctx.gate_cfg("projection_multiplicity") is not None:
        for name, pr_ in proj.items():
            gates.append(gate(f"projection_multiplicity[{name}]", pr_["multiple"], True, True,
                              None, "equidistant point reports several minimizers"))
    return out, gates


def _pipe_square(ctx: Context):
    sq = geo.SquareBoundary()
    return _piecewise_common(ctx, sq, geo.square_interior_foliation(),
                             geo.square_boundary_foliation(), {"centre": [0.5, 0.5]})


def _pipe_crossing(ctx: Context):
    cl = geo.CrossingLines()
    return _piecewise_common(ctx, cl, geo.crossing_sector_foliation(),
                             geo.crossing_lines_foliation(), {"axis": [1.0, 0.0]})


def _pipe_residual(ctx: Context):
    sc = ctx.scenario
    model = make_model(sc.model)
    qv = QuadraticVariationModel("analytic", model)
    c = sc.geometry
    sphere = geo.Sphere(c.get("center", [0.0] * model.dim), float(c.get("radius", 1.0)))
    region = make_region(sc.region, sphere)
    fol = geo.signed_distance_foliation(sphere, region)
    eps = sc.eps[0]
    levels = make_levels(sc.estimator["levels"], eps)
    slab = float(c.get("slab_width", 1.5 * grid_spacing(levels)))

    def f(x):
        return np.linalg.norm(x, axis=-1)

    rep = occupation_formula_residual(ctx.paths(model), qv, fol, f, 0, eps, levels, slab)
    out = {"residual": rep.to_dict()}
    ref = sc.estimator.get("reference")
    if ref:
        dt_f = sc.grid.dt / int(ref.get("refine", 4))
        fine = occupation_integral(ctx.paths(model, n_paths=int(ref["n_paths"]), dt=dt_f), qv,
                                   region, 0, f)
        out["lhs_fine_dt"] = {"dt": dt_f, "value": fine.value, "stderr": fine.stderr,
                              "n_paths": int(ref["n_paths"])}
    ctx.tables["residual.csv"] = (["lhs", "lhs_stderr", "rhs", "residual", "bandwidth",
                                   "level_spacing", "slab_width"],
                                  [[fmt(rep.lhs), fmt(rep.lhs_stderr), fmt(rep.rhs),
                                    fmt(rep.residual), fmt(rep.bandwidth), fmt(rep.level_spacing),
                                    fmt(rep.slab_width)]])
    gates = []
    if (g := ctx.gate_cfg("residual")) is not None:
        gates.append(gate("residual", rep.residual < g["bound"], rep.residual, 0.0, g["bound"],
                          "relative gap between both sides of the occupation formula"))
    return out, gates


def _pipe_bm_local_time(ctx: Context):
    sc = ctx.scenario
    model = make_model(sc.model)
    qv = QuadraticVariationModel("analytic", model)
    eps = sc.eps[0]
    a = float(sc.geometry.get("level", 0.0))
    lt, = fold(ctx.paths(model), [_ScalarLocalTimeAcc(qv, a, eps, tanaka=True)])
    lt.extra.pop("bridge_per_path")
    ctx.localtime_table("localtime.csv", [lt])
    T = sc.grid.horizon
    x0 = float(model.x0[0])
    # E|B_T - a| - |x0 - a| for a Brownian motion started at x0 (a = x0 = 0 by default)
    target = math.sqrt(2 * T / math.pi) if a == x0 else None
    out = {"local_time": lt.to_dict(), "oracle": target}
    gates = []
    if (g := ctx.gate_cfg("tanaka_level")) is not None and target is not None:
        gates.append(_within_se("tanaka_level", lt.value, target, lt.stderr, g["k_se"],
                                "mean band local time against E|B_T|"))
    if (g := ctx.gate_cfg("band_vs_tanaka")) is not None:
        v = lt.extra["bridge_mean_abs_diff"]
        gates.append(gate("band_vs_tanaka", v < g["bound"], v, 0.0, g["bound"],
                          "per-path mean |band - Tanaka| (bridge-conditioned Tanaka sum)"))
    return out, gates


def _pipe_conjecture(ctx: Context):
    sc = ctx.scenario
    model = make_model(sc.model)
    qv = QuadraticVariationModel("analytic", model)
    c = sc.geometry
    graph = geo.Graph.quadratic(float(c.get("coefficient", 0.25)), tuple(c.get("box", (-4, 4))))
    eps = sc.eps[0]
    rep = conjecture_probe(ctx.paths(model), qv, graph, eps)
    lin = conjecture_probe(ctx.paths(model, n_paths=min(sc.n_paths, 500)), qv,
                           geo.Graph.linear([float(c.get("linear_slope", 1.0))]), eps)
    return {"nonlinear": rep, "linear_check": lin}, []


# name -> (runner, allowed gate names)
PIPELINES: dict[str, tuple[Callable, tuple]] = {
    "frozen": (_pipe_frozen, ("all_zero",)),
    "mass-conservation": (_pipe_mass, ("mass_conservation",)),
    "hyperplane-foliation": (_pipe_hyperplane, ("mass_conservation", "tanaka_level",
                                                "bandwidth_consistency", "hyperplane_reduction",
                                                "control_floor")),
    "circle-identity": (_pipe_circle, ("L_equals_symmetric", "L_equals_geometric",
                                       "negative_level_zero", "control_floor")),
    "graph-scaling": (_pipe_graph_scaling, ("ratio",)),
    "singular-sde": (_pipe_singular, ("small_ball_occupation", "covariation", "monotone")),
    "integrability": (_pipe_integrability, ("certificate", "closed_form", "paths_finite")),
    "square-boundary": (_pipe_square, ("mass_conservation", "control_floor",
                                       "projection_multiplicity")),
    "crossing-lines": (_pipe_crossing, ("mass_conservation", "control_floor",
                                        "projection_multiplicity")),
    "sphere-residual": (_pipe_residual, ("residual",)),
    "bm-local-time": (_pipe_bm_local_time, ("tanaka_level", "band_vs_tanaka")),
    "conjecture": (_pipe_conjecture, ()),
}


# ---------------------------------------------------------------- built-in catalog


def _bm(dim, x0=None):
    return {"tag": "standard-BM", "dim": dim, "x0": list(x0 if x0 is not None else [0.0] * dim)}


_BUILTINS = [
    {"name": "frozen", "pipeline": "frozen",
     "description": "sigma = 0: every occupation and local-time estimate vanishes",
     "tags": ["topic:plumbing"],
     "model": {"tag": "drifted-BM", "dim": 2, "x0": [3.0, 4.0], "mu": 0.0, "sigma": 0.0},
     "estimator": {"horizon": 1.0, "dt": 1e-2, "n_paths": 8, "seed": DEFAULT_SEED,
                   "eps": [1e-2], "levels": {"lo": 3.0, "hi": 5.0, "spacing": 1e-2}},
     "gates": {"all_zero": {"abs_tol": 0.0}}},
    {"name": "bm-mass-conservation", "pipeline": "mass-conservation",
     "description": "1-D BM, phi = identity: trapezoid mass of the density equals T",
     "tags": ["topic:occupation-formula"],
     "model": _bm(1),
     "estimator": {"horizon": 1.0, "dt": 1e-4, "n_paths": 1000, "seed": DEFAULT_SEED,
                   "eps": [1e-2], "levels": {"lo": -6.0, "hi": 6.0, "spacing": 1e-2}},
     "gates": {"mass_conservation": {"rel_tol": 1e-6}}},
    {"name": "hyperplane-foliation", "pipeline": "hyperplane-foliation",
     "description": "2-D BM from 0, phi = x_2: mass conservation and density at 0 vs sqrt(2T/pi)",
     "tags": ["topic:occupation-formula", "topic:local-time"],
     "model": _bm(2),
     "geometry": {"phi_index": 1, "component": 0},
     "estimator": {"horizon": 1.0, "dt": 1e-4, "n_paths": 10000, "seed": DEFAULT_SEED,
                   "eps": [1e-2, 5e-3], "levels": {"lo": -5.5, "hi": 5.5, "spacing": 1e-2}},
     "gates": {"mass_conservation": {"rel_tol": 1e-6}, "tanaka_level": {"k_se": 3.0},
               "bandwidth_consistency": {"k_se": 3.0}, "hyperplane_reduction": {"abs_tol": 1e-12},
               "control_floor": {"abs_tol": 1e-12}}},
    {"name": "circle-L=L=L", "pipeline": "circle-identity",
     "description": "2-D BM on the unit circle: density of the good extension vs local time "
                    "of phi(X) and vs geometric local time at {d = a}",
     "tags": ["topic:local-time", "topic:geometry"],
     "model": _bm(2, [1.0, 0.0]),
     "geometry": {"center": [0.0, 0.0], "radius": 1.0, "band": 0.45,
                  "levels": [0.1, 0.2, 0.3, -0.2], "component": 0},
     "region": {"kind": "tubular-band", "width": 0.45},
     "estimator": {"horizon": 1.0, "dt": 1e-4, "n_paths": 2000, "seed": DEFAULT_SEED,
                   "eps": [1e-2], "n_paths_control": 200},
     "gates": {"L_equals_symmetric": {"k_se": 3.0}, "L_equals_geometric": {"k_se": 3.0},
               "negative_level_zero": {}, "control_floor": {"abs_tol": 1e-4}}},
    {"name": "graph-scaling", "pipeline": "graph-scaling",
     "description": "Linear graphs: graph over geometric local time equals sqrt(1 + |a|^2)",
     "tags": ["topic:local-time", "topic:graph"],
     "model": _bm(2),
     "geometry": {"slopes": [0.0, 1.0, 2.0]},
     "estimator": {"horizon": 1.0, "dt": 1e-4, "n_paths": 10000, "seed": DEFAULT_SEED,
                   "eps": [1e-2]},
     "gates": {"ratio": {"rel_tol": 0.05}}},
    {"name": "singular-sde", "pipeline": "singular-sde",
     "description": "Radial drift -x/(2|x|^2): small-ball occupation, martingale residual, "
                    "realized covariation",
     "tags": ["topic:singular-sde"],
     "model": {"tag": "singular-radial-drift", "dim": 2, "x0": [1.0, 0.0]},
     "geometry": {"deltas": [1e-1, 1e-2, 1e-3]},
     "estimator": {"horizon": 1.0, "dt": 1e-4, "n_paths": 1000, "seed": DEFAULT_SEED,
                   "reference": {"n_paths": 250, "refine": 4}},
     "gates": {"small_ball_occupation": {"delta": 1e-3, "bound": 1e-3},
               "covariation": {"abs_tol": 0.05}, "monotone": {}}},
    {"name": "integrability", "pipeline": "integrability",
     "description": "Profiles d(x, Gamma)^-p at the unit sphere: certificate iff p < 1, "
                    "finite path integrals, exponent comparison",
     "tags": ["topic:integrability"],
     "model": _bm(2, [0.9, 0.0]),
     "geometry": {"radius": 2.0,
                  "cases": [{"p": 0.5}, {"p": 1.0}, {"p": 0.9, "dim": 3}],
                  "table_p": [0.5, 0.9, 1.0], "table_dim": [2, 3]},
     "estimator": {"horizon": 1.0, "dt": 1e-3, "n_paths": 1000, "seed": DEFAULT_SEED},
     "gates": {"certificate": {}, "closed_form": {"rel_tol": 1e-6}, "paths_finite": {}}},
    {"name": "square-boundary", "pipeline": "square-boundary",
     "description": "Boundary of the unit square: interior signed distance foliation; "
                    "positive-part decomposition formula reported",
     "tags": ["topic:singular-manifold", "topic:geometry"],
     "model": _bm(2, [0.5, 0.25]),
     "estimator": {"horizon": 1.0, "dt": 1e-4, "n_paths": 1000, "seed": DEFAULT_SEED,
                   "eps": [1e-2], "levels": {"lo": -5.0, "hi": 0.6, "spacing": 1e-2},
                   "n_paths_control": 100},
     "gates": {"mass_conservation": {"rel_tol": 1e-6}, "control_floor": {"abs_tol": 1e-4},
               "projection_multiplicity": {}}},
    {"name": "crossing-lines", "pipeline": "crossing-lines",
     "description": "Lines x_2 = +-x_1: sector-signed distance foliation; decomposition formula reported",
     "tags": ["topic:singular-manifold", "topic:geometry"],
     "model": _bm(2, [0.5, 0.1]),
     "estimator": {"horizon": 1.0, "dt": 1e-4, "n_paths": 1000, "seed": DEFAULT_SEED,
                   "eps": [1e-2], "levels": {"lo": -4.0, "hi": 4.0, "spacing": 1e-2},
                   "n_paths_control": 100},
     "gates": {"mass_conservation": {"rel_tol": 1e-6}, "control_floor": {"abs_tol": 1e-4},
               "projection_multiplicity": {}}},
    {"name": "sphere-residual", "pipeline": "sphere-residual",
     "description": "2-D BM, phi = |x| - 1 off a small ball, f = |x|: both sides of the "
                    "occupation formula with independent binnings",
     "tags": ["topic:occupation-formula"],
     "model": _bm(2, [1.0, 0.0]),
     "geometry": {"center": [0.0, 0.0], "radius": 1.0, "slab_width": 0.015},
     "region": {"kind": "ball-complement", "center": [0.0, 0.0], "radius": 0.25},
     "estimator": {"horizon": 1.0, "dt": 1e-4, "n_paths": 10000, "seed": DEFAULT_SEED,
                   "eps": [1e-2], "levels": {"lo": -0.8, "hi": 5.5, "spacing": 1e-2},
                   "reference": {"n_paths": 1000, "refine": 4}},
     "gates": {"residual": {"bound": 0.05}}},
    {"name": "bm-local-time", "pipeline": "bm-local-time",
     "description": "1-D BM local time at 0 against E|B_1| = sqrt(2/pi)",
     "tags": ["topic:local-time"],
     "model": _bm(1),
     "geometry": {"level": 0.0},
     "estimator": {"horizon": 1.0, "dt": 1e-5, "n_paths": 10000, "seed": DEFAULT_SEED,
                   "eps": [1e-2]},
     "gates": {"tanaka_level": {"k_se": 3.0}, "band_vs_tanaka": {"bound": 0.05}}},
    {"name": "conjecture", "pipeline": "conjecture", "exploratory": True,
     "description": "g(x) = x^2/4: geometric local time vs the slope-weighted graph band sum "
                    "(exploratory, no gates)",
     "tags": ["topic:graph", "topic:exploratory"],
     "model": _bm(2),
     "geometry": {"coefficient": 0.25, "box": [-4.0, 4.0], "linear_slope": 1.0},
     "estimator": {"horizon": 1.0, "dt": 1e-4, "n_paths": 1000, "seed": DEFAULT_SEED,
                   "eps": [1e-2]},
     "gates": {}},
]

BUILTIN = {d["name"]: d for d in _BUILTINS}


def builtin(name: str) -> Scenario:
    if name not in BUILTIN:
        raise ScenarioError(f"unknown built-in scenario {name!r}; see 'occlab list'")
    return Scenario.from_dict(BUILTIN[name])


def catalog(tag: Optional[str] = None) -> list[dict]:
    out = []
    for d in _BUILTINS:
        if tag and tag not in d.get("tags", []):
            continue
        out.append({"name": d["name"], "pipeline": d["pipeline"], "tags": d.get("tags", []),
                    "exploratory": d.get("exploratory", False),
                    "description": d.get("description", ""),
                    "gates": sorted(d.get("gates", {}))})
    return out


# ---------------------------------------------------------------- validation


def _check_levels(sc: Scenario, eps: float, v: list):
    spec = sc.estimator.get("levels")
    if spec is None:
        v.append("estimator.levels missing")
        return None
    try:
        levels = make_levels(spec, eps)
        da = grid_spacing(levels)
    except (KeyError, ValueError, TypeError) as exc:
        v.append(f"estimator.levels: {exc}")
        return None
    if da > eps * (1 + 1e-12):
        v.append(f"coverage gap: level spacing {da:g} exceeds bandwidth eps={eps:g}")
    return levels


def validate_scenario(sc: Scenario) -> list[str]:
    """Every violated precondition, found without simulating."""
    v: list[str] = []
    if sc.pipeline not in PIPELINES:
        return [f"unknown pipeline {sc.pipeline!r}"]
    _, allowed = PIPELINES[sc.pipeline]
    for name in sc.gates:
        if name not in allowed:
            v.append(f"gate {name!r} is not implemented for pipeline {sc.pipeline!r}")
    if sc.exploratory and sc.gates:
        v.append("exploratory scenarios carry no gates")
    if not sc.exploratory and not sc.gates:
        v.append("non-exploratory scenario declares no gates")
    try:
        model = make_model(sc.model)
    except (ScenarioError, ValueError, KeyError, TypeError) as exc:
        v.append(f"model: {exc}")
        model = None
    est = sc.estimator
    try:
        n = int(est["n_paths"])
        if n < 1 or n != est["n_paths"]:
            v.append("n_paths must be a positive integer")
    except (KeyError, TypeError, ValueError):
        v.append("estimator.n_paths missing or not an integer")
    try:
        sc.grid
    except (KeyError, TypeError, ValueError) as exc:
        v.append(f"time grid: {exc}")
    seed = est.get("seed", DEFAULT_SEED)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        v.append("seed must be a non-negative integer")
    try:
        eps_list = sc.eps
    except (TypeError, ValueError):
        v.append("eps must be a number or a list of numbers")
        eps_list = []
    if not eps_list or any(not e > 0 for e in eps_list):
        v.append("eps must be positive")
        return v
    eps = eps_list[0]
    p = sc.pipeline
    g = sc.geometry
    if p in ("mass-conservation", "hyperplane-foliation", "frozen", "square-boundary",
             "crossing-lines", "sphere-residual"):
        _check_levels(sc, eps, v)
    if model is not None:
        if p in ("square-boundary", "crossing-lines", "circle-identity", "sphere-residual",
                 "graph-scaling", "conjecture") and model.dim != 2:
            v.append(f"pipeline {p!r} is planar: model dimension must be 2")
        if p in ("hyperplane-foliation", "mass-conservation"):
            j = int(g.get("phi_index", model.dim - 1 if p == "hyperplane-foliation" else 0))
            if not 0 <= j < model.dim:
                v.append(f"phi_index {j} out of range for dimension {model.dim}")
    if p == "circle-identity":
        try:
            sphere, band, levels = _circle_parts(sc)
        except (KeyError, ValueError, TypeError) as exc:
            v.append(f"geometry: {exc}")
        else:
            if not 0 < band < sphere.reach:
                v.append(f"ε must be < reach: good-extension band {band:g} "
                         f"vs reach {sphere.reach:g}")
            for a in levels:
                if a == 0:
                    v.append("level 0 is excluded from the identity check")
                elif a > 0:
                    if a + eps >= band:
                        v.append(f"level {a:g} + eps leaves the band (band={band:g})")
                    if a < sphere.reach:
                        r = geo.level_set_manifold(sphere, a).reach
                        if eps >= r:
                            v.append(f"ε must be < reach: eps={eps:g} vs reach {r:g} "
                                     f"of the level set at a={a:g}")
                    else:
                        v.append(f"level {a:g} is not below the reach {sphere.reach:g}")
            if eps >= sphere.reach:
                v.append(f"ε must be < reach: eps={eps:g} vs sphere reach {sphere.reach:g}")
    if p == "sphere-residual":
        if float(g.get("radius", 1.0)) <= 0:
            v.append("sphere radius must be positive")
        if sc.region.get("kind") != "ball-complement":
            v.append("sphere-residual needs a ball-complement region (phi is singular at the centre)")
    if p == "graph-scaling" and not g.get("slopes"):
        v.append("graph-scaling needs a non-empty 'slopes' list")
    if p == "integrability":
        for case in g.get("cases", []):
            if "p" not in case:
                v.append("integrability case without 'p'")
        if not g.get("cases"):
            v.append("integrability needs 'cases'")
    if p == "singular-sde" and model is not None and model.tag != "singular-radial-drift":
        v.append("singular-sde pipeline needs the singular-radial-drift model")
    if p == "hyperplane-foliation" and "normal" in g:
        nrm = np.asarray(g["normal"], dtype=float)
        if abs(np.linalg.norm(nrm) - 1) > 1e-12:
            v.append("hyperplane normal must have unit length")
    if p == "conjecture":
        try:
            gr = geo.Graph.quadratic(float(g.get("coefficient", 0.25)), tuple(g.get("box", (-4, 4))))
            if eps >= gr.reach:
                v.append(f"ε must be < reach: eps={eps:g} vs graph reach {gr.reach:g}")
        except (TypeError, ValueError) as exc:
            v.append(f"geometry: {exc}")
    return v


# ---------------------------------------------------------------- running


def default_out_dir() -> Path:
    return Path(os.environ.get("OCCLAB_OUT", "out"))


def run_scenario(sc: Scenario, out_dir=None, jobs: int = 1, write: bool = True) -> RunReport:
    """Validate, run the pipeline, evaluate gates and (optionally) write artifacts."""
    problems = validate_scenario(sc)
    if problems:
        raise ScenarioError(problems)
    runner, _ = PIPELINES[sc.pipeline]
    ctx = Context(sc, jobs=max(1, int(jobs)))
    t0 = time.perf_counter()
    estimates, gates = runner(ctx)
    wall = time.perf_counter() - t0
    config = sc.to_dict()
    rep = RunReport(sc.name, config, jsonable(estimates), jsonable(gates), sc.seed,
                    input_hash(config), round(wall, 3),
                    _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"))
    rep.tables = ctx.tables
    if write:
        write_artifacts(rep, out_dir)
    return rep


def write_artifacts(rep: RunReport, out_dir=None) -> Path:
    base = Path(out_dir) if out_dir is not None else default_out_dir()
    d = base / rep.scenario
    d.mkdir(parents=True, exist_ok=True)
    (d / "report.json").write_text(rep.to_json())
    (d / "gates.csv").write_text(_csv_text(["name", "passed", "value", "target", "tolerance"],
                                           [_gate_row(g) for g in rep.gates]))
    for name, (header, rows) in getattr(rep, "tables", {}).items():
        (d / name).write_text(_csv_text(header, rows))
    return d


def _gate_row(g: dict) -> list[str]:
    def cell(x):
        if isinstance(x, bool):
            return str(x).lower()
        if isinstance(x, (int, float)):
            return fmt(x)
        return "" if x is None else json.dumps(x)
    return [g["name"], str(g["passed"]).lower(), cell(g["value"]), cell(g["target"]),
            cell(g["tolerance"])]


def gates_csv(rep: RunReport) -> str:
    return _csv_text(["name", "passed", "value", "target", "tolerance"],
                     [_gate_row(g) for g in rep.gates])


def _csv_text(header, rows) -> str:
    import io
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def comparable_report(text: str) -> str:
    """Report JSON with the run-dependent fields (timestamp, wall-clock) removed."""
    d = json.loads(text)
    d.pop("timestamp", None)
    d.pop("wallclock_s", None)
    return json.dumps(d, indent=2, sort_keys=True)


