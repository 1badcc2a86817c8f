"""Local-time estimators: 1-D band local times, geometric and graph local times.

Band conventions follow each definition literally: the 1-D symmetric local
time uses the open band ``(a - eps, a + eps)``, the right/left variants
``[a, a + eps)`` and ``(a - eps, a)`` scaled by ``1/eps``, and the geometric
and graph local times use ``d < eps`` (resp. ``|Y| < eps``) scaled by
``1/(2 eps)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import special

from .geometry import (Foliation, Graph, GeometryError, Manifold, OutsideReachError, Region,
                       full_space, level_set_manifold)
from .occupation import check_density_grid, fmt
from .paths import PathBatch, QuadraticVariationModel, eta_increments
from .stats import Accumulator, fold, mean_se, pooled_se, ratio_se, stack_rows

Array = np.ndarray

KINDS = ("symmetric-1d", "right-1d", "left-1d", "geometric", "graph")


@dataclass
class LocalTimeEstimate:
    kind: str
    level: float
    value: float
    stderr: float
    bandwidth: float
    per_path: Array
    crosscheck: Optional[float] = None
    crosscheck_per_path: Optional[Array] = None
    reference: Optional[dict] = None
    extra: dict = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return int(self.per_path.size)

    def row(self) -> list[str]:
        cc = "" if self.crosscheck is None else fmt(self.crosscheck)
        return [self.kind, fmt(self.level), fmt(self.value), fmt(self.stderr),
                fmt(self.bandwidth), cc]

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "level": self.level, "value": self.value,
               "stderr": self.stderr, "bandwidth": self.bandwidth, "n_paths": self.n_paths,
               "crosscheck": self.crosscheck}
        if self.reference is not None:
            out["reference"] = self.reference
        out.update({k: v for k, v in self.extra.items() if not isinstance(v, np.ndarray)})
        return out


LOCALTIME_CSV_HEADER = ["kind", "level", "value", "stderr", "bandwidth", "crosscheck"]


def write_local_time_csv(path, estimates: Sequence[LocalTimeEstimate]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOCALTIME_CSV_HEADER)
        for e in estimates:
            w.writerow(e.row())


def _estimate(kind, level, eps, per_path, cross=None, **kw) -> LocalTimeEstimate:
    m, se = mean_se(per_path)
    cm = None if cross is None else float(np.mean(cross))
    return LocalTimeEstimate(kind, float(level), float(m), float(se), float(eps), per_path,
                             cm, cross, **kw)


# ---------------------------------------------------------------- 1-D local time


def band_local_time(y: Array, dq: Array, a: float, eps: float,
                    kind: str = "symmetric-1d") -> Array:
    """Per-path band sums of ``d<Y>`` near ``a``; ``y`` is ``(P, n+1)``, ``dq`` is ``(P, n)``."""
    if not eps > 0:
        raise ValueError("bandwidth must be positive")
    y = np.atleast_2d(y)[:, :-1]
    dq = np.atleast_2d(dq)
    if kind == "symmetric-1d":
        band, scale = (y > a - eps) & (y < a + eps), 2 * eps
    elif kind == "right-1d":
        band, scale = (y >= a) & (y < a + eps), eps
    elif kind == "left-1d":
        band, scale = (y > a - eps) & (y < a), eps
    else:
        raise ValueError(f"unknown 1-D local-time kind {kind!r}")
    return np.where(band, dq, 0.0).sum(axis=1) / scale


def tanaka_local_time(y: Array, a: float) -> Array:
    """``|Y_T - a| - |Y_0 - a| - sum_k sgn(Y_k - a) dY_k`` per path."""
    y = np.atleast_2d(y)
    s = np.sign(y[:, :-1] - a)
    return np.abs(y[:, -1] - a) - np.abs(y[:, 0] - a) - np.sum(s * np.diff(y, axis=1), axis=1)


def bridge_local_time(y: Array, dq: Array, a: float) -> Array:
    """Per-path conditional mean of the local time at ``a`` given the grid values.

    Each step is treated as a Brownian bridge with variance ``dq_k``; its
    expected local time at ``a`` is
    ``erfc((|y_k - a| + |y_{k+1} - a|) / sqrt(2 q)) / (2 p_q(y_{k+1} - y_k))``
    with ``p_q`` the centred Gaussian density.
    """
    y = np.atleast_2d(y)
    q = np.atleast_2d(dq)
    s = np.abs(y[:, :-1] - a) + np.abs(y[:, 1:] - a)
    jump = np.diff(y, axis=1)
    pos = q > 0
    qq = np.where(pos, q, 1.0)
    z = s / np.sqrt(2 * qq)
    # erfc(z) / p(jump) written with erfcx so neither factor overflows
    val = 0.5 * np.sqrt(2 * np.pi * qq) * special.erfcx(z) * np.exp(jump ** 2 / (2 * qq) - z ** 2)
    return np.where(pos, val, 0.0).sum(axis=1)


class _ScalarLocalTimeAcc(Accumulator):
    """Band local time of a scalar process ``Y = field(X)`` (or a coordinate of ``X``)."""

    def __init__(self, qv, a, eps, kind="symmetric-1d", component=0, field=None, grad=None,
                 tanaka=False):
        self.qv, self.a, self.eps, self.kind = qv, a, eps, kind
        self.component, self.field, self.grad, self.tanaka = component, field, grad, tanaka
        self.vals, self.cross, self.bridge = [], [], []

    def update(self, batch):
        if self.field is None:
            y = batch.states[..., self.component]
            if self.qv is None:
                dq = np.diff(y, axis=1) ** 2
            else:
                dq = self.qv.component(batch, self.component)
        else:
            y = self.field(batch.states)
            if self.qv is None or self.qv.mode == "realized":
                dq = np.diff(y, axis=1) ** 2
            else:
                # Ito <phi(X)> only where it can contribute
                yl = y[:, :-1]
                near = (yl > self.a - self.eps) & (yl < self.a + self.eps)
                dq = np.zeros(yl.shape)
                dq[near] = _quadratic_form_at(self.qv, batch, near,
                                              self.grad(batch.left_states[near]))
        self.vals.append(band_local_time(y, dq, self.a, self.eps, self.kind))
        if self.tanaka:
            self.cross.append(tanaka_local_time(y, self.a))
            self.bridge.append(bridge_local_time(y, dq, self.a))

    def finish(self):
        cross = stack_rows(self.cross) if self.tanaka else None
        est = _estimate(self.kind, self.a, self.eps, stack_rows(self.vals), cross)
        if cross is not None:
            est.extra["tanaka_mean_abs_diff"] = float(np.mean(np.abs(est.per_path - cross)))
            est.extra["tanaka_stderr"] = float(mean_se(cross)[1])
            br = stack_rows(self.bridge)
            est.extra["bridge_per_path"] = br
            est.extra["bridge_mean"] = float(br.mean())
            est.extra["bridge_mean_abs_diff"] = float(np.mean(np.abs(est.per_path - br)))
        return est


def local_time_1d(paths, qv: Optional[QuadraticVariationModel] = None, a: float = 0.0,
                  eps: float = 1e-2, component: int = 0, kind: str = "symmetric-1d",
                  tanaka: bool = True) -> LocalTimeEstimate:
    """Band local time of the coordinate ``Y = X^component`` at level ``a``.

    ``qv=None`` uses the realized increments ``(dY)^2``.  The Tanaka
    cross-check is attached per path when ``tanaka`` is set.
    """
    return fold(paths, [_ScalarLocalTimeAcc(qv, a, eps, kind, component, tanaka=tanaka)])[0]


def field_local_time_accumulator(qv, foliation: Foliation, a, eps, kind="symmetric-1d",
                                 tanaka=False) -> Accumulator:
    return _ScalarLocalTimeAcc(qv, a, eps, kind, field=foliation.phi, grad=foliation.gradient,
                               tanaka=tanaka)


def field_local_time(paths, qv: QuadraticVariationModel, foliation: Foliation, a: float,
                     eps: float, kind: str = "symmetric-1d") -> LocalTimeEstimate:
    """Band local time of the scalar semimartingale ``phi(X)``.

    ``<phi(X)>`` is the Ito expression ``grad phi^T g grad phi dt`` in analytic
    mode and ``(d phi(X))^2`` in realized mode.
    """
    return fold(paths, [field_local_time_accumulator(qv, foliation, a, eps, kind)])[0]


# ---------------------------------------------------------------- geometric local time


def _quadratic_form_at(qv: QuadraticVariationModel, batch: PathBatch, mask: Array,
                       vec: Array) -> Array:
    """``v^T d<X, X> v`` on the masked steps only; ``vec`` is ``(mask.sum(), N)``."""
    if qv.mode == "realized":
        return np.einsum("ki,ki->k", vec, batch.increments[mask]) ** 2
    m = qv.model
    dt = batch.grid.dt
    if m.sigma_const is not None:
        g = m.sigma_const @ m.sigma_const.T
        return np.einsum("ki,ij,kj->k", vec, g, vec) * dt
    full = np.zeros(batch.left_states.shape)
    full[mask] = vec
    return qv.quadratic_form(batch, full)[mask]


class _GeometricAcc(Accumulator):
    def __init__(self, qv, manifold: Manifold, eps):
        if not eps < manifold.reach:
            raise OutsideReachError(f"bandwidth {eps} must be below the reach", manifold.reach)
        self.qv, self.manifold, self.eps = qv, manifold, eps
        self.weighted, self.brownian = [], []

    def update(self, batch):
        x = batch.left_states
        P = len(batch)
        cand = self.manifold.candidate_mask(x, self.eps)
        with np.errstate(invalid="ignore"):
            if cand is None:
                band = self.manifold.distance(x) < self.eps
            else:
                cand &= np.isfinite(x).all(axis=-1)
                band = np.zeros_like(cand)
                band[cand] = self.manifold.distance(x[cand]) < self.eps
        rows = np.nonzero(band)[0]
        grad = self.manifold._normal_field(x[band])
        q = _quadratic_form_at(self.qv, batch, band, grad)
        self.weighted.append(np.bincount(rows, q, minlength=P) / (2 * self.eps))
        self.brownian.append(np.bincount(rows, minlength=P) * batch.grid.dt / (2 * self.eps))

    def finish(self):
        w, b = stack_rows(self.weighted), stack_rows(self.brownian)
        est = _estimate("geometric", 0.0, self.eps, w, b,
                        reference=self.manifold.describe())
        est.extra["brownian_form"] = float(b.mean())
        est.extra["forms_max_abs_diff"] = float(np.max(np.abs(w - b))) if w.size else 0.0
        return est


def geometric_local_time_accumulator(qv, manifold, eps) -> Accumulator:
    return _GeometricAcc(qv, manifold, eps)


def geometric_local_time(paths, qv: QuadraticVariationModel, manifold: Manifold,
                         eps: float) -> LocalTimeEstimate:
    """``(1/2eps) sum_k 1_{d(X_k, Gamma) < eps} grad delta^T d<X, X>_k grad delta``.

    The cross-check slot holds the Brownian form ``(1/2eps) sum 1_{d < eps} dt``.
    """
    return fold(paths, [_GeometricAcc(qv, manifold, eps)])[0]


class _GraphAcc(Accumulator):
    def __init__(self, qv, graph: Graph, eps, mode="analytic", weighted=False):
        if not isinstance(graph, Graph):
            raise GeometryError("graph local time needs a graph manifold")
        if not eps > 0:
            raise ValueError("bandwidth must be positive")
        if mode not in ("analytic", "realized"):
            raise ValueError(f"unknown <Y> mode {mode!r}")
        self.qv, self.graph, self.eps, self.mode, self.weighted = qv, graph, eps, mode, weighted
        self.vals, self.wvals = [], []

    def update(self, batch):
        P = len(batch)
        y = self.graph.vertical_offset(batch.states)
        yl = y[:, :-1]
        band = np.abs(yl) < self.eps
        rows = np.nonzero(band)[0]
        x = batch.left_states[band]
        dg = self.graph.grad(x[:, :-1])
        if self.mode == "realized":
            q = np.diff(y, axis=1)[band] ** 2
        else:
            vec = np.concatenate([-dg, np.ones((len(x), 1))], axis=1)
            q = _quadratic_form_at(self.qv, batch, band, vec)
        self.vals.append(np.bincount(rows, q, minlength=P) / (2 * self.eps))
        if self.weighted:
            wq = q / np.sqrt(1 + np.sum(dg * dg, axis=1))
            self.wvals.append(np.bincount(rows, wq, minlength=P) / (2 * self.eps))

    def finish(self):
        est = _estimate("graph", 0.0, self.eps, stack_rows(self.vals),
                        reference=self.graph.describe())
        est.extra["qv_mode"] = self.mode
        if self.weighted:
            est.extra["weighted_per_path"] = stack_rows(self.wvals)
        return est


def graph_local_time_accumulator(qv, graph, eps, mode="analytic", weighted=False):
    return _GraphAcc(qv, graph, eps, mode, weighted)


def graph_local_time(paths, qv: QuadraticVariationModel, graph: Graph, eps: float,
                     mode: str = "analytic") -> LocalTimeEstimate:
    """``(1/2eps) sum_k 1_{|Y_k| < eps} d<Y>_k`` with ``Y = X^N - g(X_bar)``."""
    return fold(paths, [_GraphAcc(qv, graph, eps, mode)])[0]


def graph_scaling(paths, qv: QuadraticVariationModel, graphs: Sequence[Graph],
                  eps: float) -> list[dict]:
    """Graph over geometric local time for each graph, all from one pass over ``paths``."""
    accs = []
    for g in graphs:
        accs += [_GraphAcc(qv, g, eps), _GeometricAcc(qv, g, eps)]
    res = fold(paths, accs)
    out = []
    for g, gr, ge in zip(graphs, res[::2], res[1::2]):
        r, se = ratio_se(gr.per_path, ge.per_path)
        slope = np.atleast_1d(g.params.get("slope", [math.nan]))
        out.append({"graph": g.describe(), "graph_lt": gr.value, "graph_lt_stderr": gr.stderr,
                    "geometric_lt": ge.value, "geometric_lt_stderr": ge.stderr,
                    "ratio": r, "ratio_stderr": se,
                    "expected": float(math.sqrt(1 + float(slope @ slope)))})
    return out


# ---------------------------------------------------------------- identities


class _IdentityAcc(Accumulator):
    """Shares one evaluation of ``phi`` across every level and bandwidth of the identity check."""

    def __init__(self, qv, foliation: Foliation, levels, eps_list, component, geometric):
        self.qv, self.fol, self.component = qv, foliation, component
        self.levels, self.eps_list = [float(a) for a in levels], list(eps_list)
        man = foliation.manifold
        self.geo = {a: _GeometricAcc(qv, level_set_manifold(man, a), eps_list[0])
                    for a in self.levels if geometric and man is not None and a > 0}
        self.dens = {(a, e): [] for a in self.levels for e in self.eps_list}
        self.lt = {(a, e): [] for a in self.levels for e in self.eps_list}

    def update(self, batch):
        P = len(batch)
        phi_all = self.fol(batch.states)
        phi = phi_all[:, :-1]
        x = batch.left_states
        ok = np.isfinite(x).all(axis=-1)
        inA = np.zeros(ok.shape, dtype=bool)
        inA[ok] = self.fol.region.contains(x[ok])
        w = self.qv.component(batch, self.component)
        for a in self.levels:
            for e in self.eps_list:
                band = inA & (phi >= a - e) & (phi < a + e)
                self.dens[(a, e)].append(np.where(band, w, 0.0).sum(axis=1) / (2 * e))
                near = (phi > a - e) & (phi < a + e)
                dq = np.zeros(phi.shape)
                dq[near] = _quadratic_form_at(self.qv, batch, near, self.fol.gradient(x[near]))
                self.lt[(a, e)].append(band_local_time(phi_all, dq, a, e))
        for acc in self.geo.values():
            acc.update(batch)

    def finish(self):
        return ({k: stack_rows(v) for k, v in self.dens.items()},
                {k: stack_rows(v) for k, v in self.lt.items()},
                {a: acc.finish() for a, acc in self.geo.items()})


def verify_L_equals_symmetric(paths, qv: QuadraticVariationModel, foliation: Foliation,
                              levels: Sequence[float], eps: float, component: int = 0,
                              k_se: float = 3.0, geometric: bool = True) -> dict:
    """Compare, per path, the transversal density of ``phi`` with the local time of ``phi(X)``.

    Both estimators run at ``eps`` and ``eps/2`` for every level.  With
    ``geometric`` set, positive levels are also compared with the geometric
    local time at the distance level set ``{d(., Gamma) = a}``.  Levels below
    ``-eps`` must give exactly zero for both estimators.
    """
    for a in levels:
        check_density_grid([a], eps)
    (dens, lts, geos), = fold(paths, [_IdentityAcc(qv, foliation, levels, [eps, eps / 2],
                                                component, geometric)])
    out = []
    for a in (float(v) for v in levels):
        dv, lv = dens[(a, eps)], lts[(a, eps)]
        dm, dse = mean_se(dv)
        lm, lse = mean_se(lv)
        pse = pooled_se(dse, lse)
        diff = np.abs(dv - lv)
        row = {"level": a, "density": float(dm), "density_stderr": float(dse),
               "local_time": float(lm), "local_time_stderr": float(lse),
               "mean_abs_diff": float(diff.mean()), "max_abs_diff": float(diff.max()),
               "pooled_se": pse,
               "half_band_density": float(dens[(a, eps / 2)].mean()),
               "half_band_local_time": float(lts[(a, eps / 2)].mean())}
        row["half_band_shift"] = abs(row["half_band_density"] - row["density"])
        if a < -eps:
            row["both_zero"] = bool(np.all(dv == 0) and np.all(lv == 0))
            row["passed"] = row["both_zero"]
        else:
            row["passed"] = bool(row["mean_abs_diff"] <= k_se * pse)
        if a in geos:
            geo = geos[a]
            gse = pooled_se(dse, geo.stderr)
            gdiff = abs(geo.value - float(dm))
            row.update({"geometric": geo.value, "geometric_stderr": geo.stderr,
                        "geometric_diff": gdiff, "geometric_pooled_se": gse,
                        "geometric_mean_abs_diff": float(np.mean(np.abs(dv - geo.per_path))),
                        "geometric_passed": bool(gdiff <= k_se * gse)})
        out.append(row)
    return {"bandwidth": eps, "levels": out,
            "passed": all(r["passed"] and r.get("geometric_passed", True) for r in out)}


# ---------------------------------------------------------------- control diagnostics


@dataclass
class ControlDiagnostic:
    ratio: float
    floor: float
    violation: bool
    ratio_per_path: Array
    floor_per_path: Array
    n_windows: int

    def to_dict(self) -> dict:
        return {"control_ratio": self.ratio, "floor": self.floor, "violation": self.violation,
                "n_windows": self.n_windows, "n_paths": int(self.ratio_per_path.size)}


class _ControlAcc(Accumulator):
    def __init__(self, qv, foliation, region, n_windows, floor_tol):
        self.qv, self.fol, self.region = qv, foliation, region or foliation.region
        self.n_windows, self.floor_tol = n_windows, floor_tol
        self.ratios, self.floors = [], []

    def update(self, batch):
        x = batch.left_states
        P, n, N = x.shape
        ok = np.isfinite(x).all(axis=-1)
        inA = np.zeros((P, n), dtype=bool)
        inA[ok] = self.region.contains(x[ok])
        grad = np.zeros(x.shape)
        grad[inA] = self.fol.gradient(x[inA])
        dphi = self.qv.quadratic_form(batch, grad)
        eta = eta_increments(self.qv, batch) * inA
        dt = batch.grid.dt
        dens = np.where(inA, dphi / dt, np.inf)
        floor = dens.min(axis=1) if n else np.full(P, np.inf)
        edges = np.linspace(0, n, self.n_windows + 1).round().astype(int)
        num = np.add.reduceat(eta, edges[:-1], axis=1)
        den = np.add.reduceat(dphi * inA, edges[:-1], axis=1)
        num = np.concatenate([num, eta.sum(axis=1, keepdims=True)], axis=1)
        den = np.concatenate([den, (dphi * inA).sum(axis=1, keepdims=True)], axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(den > 0, num / den, np.where(num > 0, np.inf, 0.0))
        ratio = r.max(axis=1)
        ratio = np.where(floor <= self.floor_tol, np.inf, ratio)
        self.ratios.append(ratio)
        self.floors.append(floor)

    def finish(self):
        r, f = stack_rows(self.ratios), stack_rows(self.floors)
        fmin = float(f.min()) if f.size else math.inf
        return ControlDiagnostic(float(r.max()) if r.size else 0.0, fmin,
                                 bool(fmin <= self.floor_tol), r, f, self.n_windows)


def control_diagnostics(paths, qv: QuadraticVariationModel, foliation: Foliation,
                        region: Optional[Region] = None, n_windows: int = 10,
                        floor_tol: float = 1e-8) -> ControlDiagnostic:
    """Empirical control constant and non-degeneracy floor of ``phi(X)`` on ``A``.

    Test functions are indicators of ``n_windows`` equal time windows plus the
    whole horizon.  The control ratio of a path is the largest window ratio of
    ``eta_X`` mass to ``<phi(X)>`` mass inside ``A``; it is infinite once the
    floor ``inf grad phi^T g grad phi`` falls to ``floor_tol`` or below.
    """
    return fold(paths, [_ControlAcc(qv, foliation, region, n_windows, floor_tol)])[0]


# ---------------------------------------------------------------- exploratory


def conjecture_probe(paths, qv: QuadraticVariationModel, graph: Graph, eps: float) -> dict:
    """Geometric local time against the ``(1 + |grad g|^2)^{-1/2}``-weighted graph band sum.

    Exploratory: reports both sides and their discrepancy, never a verdict.
    """
    gr, ge = fold(paths, [_GraphAcc(qv, graph, eps, weighted=True), _GeometricAcc(qv, graph, eps)])
    w = gr.extra.pop("weighted_per_path")
    wm, wse = mean_se(w)
    diff = w - ge.per_path
    dm, dse = mean_se(diff)
    return {"exploratory": True, "graph": graph.describe(), "bandwidth": eps,
            "geometric": ge.value, "geometric_stderr": ge.stderr,
            "weighted_graph": float(wm), "weighted_graph_stderr": float(wse),
            "graph_unweighted": gr.value, "discrepancy": float(dm), "discrepancy_stderr": float(dse)}
