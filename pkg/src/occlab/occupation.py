"""Occupation measures, transversal densities and their disintegration along a foliation.

All estimators evaluate integrands at the left endpoint of each step and weight
them by the increment of ``<X^i>`` over that step.  They consume path batches
in ascending index order, so results do not depend on batching or threading.

Bands in the level variable are half-open, ``[a - eps, a + eps)``.  With that
convention every sample falls in exactly ``2 eps / da`` bands of a grid with
spacing ``da``, which makes the trapezoid mass of the density equal the total
occupation mass up to rounding.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
from scipy import integrate

from .geometry import Foliation, Manifold, Region, full_space
from .paths import PathBatch, QuadraticVariationModel
from .stats import Accumulator, fold, mean_se, stack_rows

Array = np.ndarray

CSV_DIGITS = 12


def fmt(v) -> str:
    """Decimal with 12 significant digits."""
    return f"{float(v):.{CSV_DIGITS}g}"


def _batch_weights(batch: PathBatch, qv: QuadraticVariationModel, region: Region,
                   component: int) -> tuple[Array, Array, Array]:
    """In-A left states, their weights and their path rows within the batch."""
    x = batch.left_states
    w = qv.component(batch, component)
    ok = np.isfinite(x).all(axis=-1) & np.isfinite(w)
    mask = np.zeros(ok.shape, dtype=bool)
    mask[ok] = region.contains(x[ok])
    rows = np.nonzero(mask)[0]
    return x[mask], w[mask], rows


def uniform_levels(lo: float, hi: float, spacing: float) -> Array:
    """Uniform grid with the given spacing, anchored at 0, covering ``[lo, hi]``."""
    k0 = math.floor(lo / spacing + 1e-9)
    k1 = math.ceil(hi / spacing - 1e-9)
    return np.arange(k0, k1 + 1) * spacing


def grid_spacing(levels: Array) -> float:
    levels = np.asarray(levels, dtype=float)
    if levels.size < 2:
        return 0.0
    d = np.diff(levels)
    if np.any(d <= 0) or np.ptp(d) > 1e-9 * max(1.0, abs(d[0])):
        raise ValueError("level grid must be uniform and increasing")
    return float(d.mean())


# ---------------------------------------------------------------- occupation measure


@dataclass(eq=False)
class OccupationMeasure:
    """Weighted sample cloud ``{(X_{t_k}, d<X^i>_k)}`` restricted to ``A``."""

    points: Array
    weights: Array
    path: Array
    n_paths: int
    component: int
    region: Region

    @property
    def mass_per_path(self) -> Array:
        return np.bincount(self.path, self.weights, minlength=self.n_paths)

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum() / self.n_paths)

    def integral(self, f: Callable[[Array], Array]) -> float:
        return float(np.sum(f(self.points) * self.weights) / self.n_paths)


class _MeasureAcc(Accumulator):
    def __init__(self, qv, region, component):
        self.qv, self.region, self.component = qv, region, component
        self.pts, self.w, self.rows = [], [], []
        self.offset = 0

    def update(self, batch):
        x, w, rows = _batch_weights(batch, self.qv, self.region, self.component)
        self.pts.append(x)
        self.w.append(w)
        self.rows.append(rows + self.offset)
        self.offset += len(batch)

    def finish(self):
        N = self.pts[0].shape[-1] if self.pts else 1
        return OccupationMeasure(stack_rows(self.pts, N).reshape(-1, N), stack_rows(self.w),
                                 stack_rows(self.rows).astype(np.int64), self.offset,
                                 self.component, self.region)


def occupation_measure(paths, qv: QuadraticVariationModel, region: Optional[Region] = None,
                       component: int = 0) -> OccupationMeasure:
    """Materialise the in-A sample cloud (small runs only)."""
    return fold(paths, [_MeasureAcc(qv, region or full_space(), component)])[0]


# ---------------------------------------------------------------- singular functions


@dataclass(eq=False)
class SingularFunction:
    """Function singular on a manifold, described through its transversal profile.

    ``tag`` selects the form:

    * ``"product"``: ``factor(x) * profile(d(x, Gamma))``;
    * ``"banded"``: as ``product`` inside ``{d < band}``, ``outer(x)`` beyond;
    * ``"profile"``: ``profile(d(x, Gamma))`` alone.

    Points with ``d(x, Gamma) <= singular_tol`` form the declared singular set.
    """

    manifold: Manifold
    profile: Callable[[Array], Array]
    tag: str = "profile"
    factor: Optional[Callable[[Array], Array]] = None
    outer: Optional[Callable[[Array], Array]] = None
    band: float = math.inf
    singular_tol: float = 0.0
    name: str = "f"
    n_envelope: int = 512
    _cloud: Optional[tuple] = field(default=None, repr=False)

    def __post_init__(self):
        if self.tag not in ("product", "banded", "profile"):
            raise ValueError(f"unknown singular-function form {self.tag!r}")
        if self.tag == "banded" and (self.outer is None or not math.isfinite(self.band)):
            raise ValueError("banded form needs 'outer' and a finite 'band'")

    def __call__(self, x) -> Array:
        x = np.asarray(x, dtype=float)
        d = self.manifold.distance(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            val = np.asarray(self.profile(d), dtype=float)
            if self.factor is not None:
                val = val * self.factor(x)
        if self.tag == "banded":
            val = np.where(d < self.band, val, self.outer(x))
        return val

    def on_singular_set(self, x) -> Array:
        return self.manifold.distance(x) <= self.singular_tol

    def envelope(self, a: float, radius: float) -> float:
        """``M_{a,R}(|f|)``: sup of ``|f|`` over sampled points at distance ``a`` within ``B(0, R)``."""
        if self._cloud is None or self._cloud[0] != radius:
            rng = np.random.default_rng(20240601)
            p, n = self.manifold.sample(self.n_envelope, rng, radius=radius)
            self._cloud = (radius, p, n)
        _, p, n = self._cloud
        cand = np.concatenate([p + a * n, p - a * n])
        cand = cand[np.linalg.norm(cand, axis=1) <= radius]
        if cand.size == 0:
            return 0.0
        # profile at the nominal distance: recomputing d(cand) loses a below rounding
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.tag == "banded" and a >= self.band:
                return float(np.max(np.abs(self.outer(cand))))
            v = abs(float(np.asarray(self.profile(np.array([a]))).reshape(-1)[0]))
            if self.factor is not None:
                v *= float(np.max(np.abs(self.factor(cand))))
        return v

    def describe(self) -> dict:
        return {"name": self.name, "form": self.tag, "manifold": self.manifold.describe(),
                "band": None if math.isinf(self.band) else self.band}


def distance_power(manifold: Manifold, p: float) -> SingularFunction:
    """``f(x) = d(x, Gamma)^{-p}``."""
    return SingularFunction(manifold, lambda d: d ** (-p), name=f"d^-{p:g}")


@dataclass
class IntegrabilityCertificate:
    passed: bool
    value: float
    ratio: float
    shells: Array
    quad_ok: bool
    message: str
    radius: float

    def to_dict(self) -> dict:
        return {"passed": self.passed, "value": self.value, "shell_ratio": self.ratio,
                "quad_ok": self.quad_ok, "message": self.message, "radius": self.radius,
                "n_shells": int(self.shells.size)}


def integrability_check(f: SingularFunction, radius: float = 2.0, n_shells: int = 60,
                        tol: float = 1e-3, tail_shells: int = 10) -> IntegrabilityCertificate:
    """Certify ``int_0^1 M_{a,R}(|f|) da < inf``.

    The interval is split into decadic shells ``[10^{-k-1}, 10^{-k}]``, each
    integrated by adaptive quadrature in ``log a``.  The ratio of consecutive
    shells near ``a = 0`` decides convergence: below ``1 - tol`` the tail is
    summed as a geometric series, otherwise the integral is declared divergent.
    """
    shells = np.empty(n_shells)
    quad_ok = True
    msgs = []
    for k in range(n_shells):
        lo, hi = -(k + 1) * math.log(10), -k * math.log(10)
        with warnings.catch_warnings():
            warnings.simplefilter("error", integrate.IntegrationWarning)
            try:
                val, err = integrate.quad(lambda u: f.envelope(math.exp(u), radius) * math.exp(u),
                                          lo, hi, limit=200)
            except integrate.IntegrationWarning as exc:
                quad_ok = False
                msgs.append(f"shell {k}: {exc}")
                val = math.nan
        shells[k] = val
    if not quad_ok or not np.all(np.isfinite(shells)):
        return IntegrabilityCertificate(False, math.nan, math.nan, shells, False,
                                        "; ".join(msgs) or "non-finite shell integral", radius)
    head, tail_end = shells[-tail_shells - 1], shells[-1]
    if tail_end == 0.0:
        ratio = 0.0
    elif head <= 0.0:
        ratio = math.inf
    else:
        ratio = (tail_end / head) ** (1.0 / tail_shells)
    if ratio < 1.0 - tol:
        value = float(shells.sum() + tail_end * ratio / (1.0 - ratio))
        return IntegrabilityCertificate(True, value, ratio, shells, True,
                                        "geometric shell decay", radius)
    return IntegrabilityCertificate(False, math.inf, ratio, shells, True,
                                    f"shell ratio {ratio:.6g} >= 1 - {tol:g}: divergent", radius)


def exponent_comparison(p: float, dim: int) -> dict:
    """Transversal criterion versus the ``L^q_loc`` route for ``f = d(x, Gamma)^{-p}``.

    The transversal integral ``int_0^1 a^{-p} da`` is finite iff ``p < 1``.
    ``d^{-p}`` lies in ``L^q_loc`` near a hypersurface iff ``p q < 1``, while
    the ``L^q`` argument needs ``q > N/2``; both are 1-D closed forms.
    """
    q_needed = dim / 2.0
    q_max = math.inf if p <= 0 else 1.0 / p
    return {"p": p, "dim": dim,
            "transversal_pass": p < 1,
            "transversal_integral": 1.0 / (1.0 - p) if p < 1 else math.inf,
            "q_needed_gt": q_needed, "q_max_lt": q_max,
            "lq_route_pass": q_max > q_needed}


# ---------------------------------------------------------------- occupation integral


@dataclass
class IntegralEstimate:
    value: float
    stderr: float
    per_path: Array
    skipped: int
    component: int

    def to_dict(self) -> dict:
        return {"value": self.value, "stderr": self.stderr, "skipped": self.skipped,
                "component": self.component, "n_paths": int(self.per_path.size)}


class _IntegralAcc(Accumulator):
    def __init__(self, qv, region, component, f):
        self.qv, self.region, self.component, self.f = qv, region, component, f
        self.rows, self.skipped = [], 0

    def update(self, batch):
        x, w, rows = _batch_weights(batch, self.qv, self.region, self.component)
        with np.errstate(divide="ignore", invalid="ignore"):
            v = np.asarray(self.f(x), dtype=float) * np.ones(len(x))
        bad = ~np.isfinite(v)
        if bad.any():
            singular = getattr(self.f, "on_singular_set", None)
            on_set = singular(x[bad]) if singular is not None else np.zeros(bad.sum(), bool)
            if not np.all(on_set):
                raise FloatingPointError("integrand is not finite at an in-A state "
                                         "off its declared singular set")
            self.skipped += int(bad.sum())
            v = np.where(bad, 0.0, v)
        self.rows.append(np.bincount(rows, v * w, minlength=len(batch)))

    def finish(self):
        per = stack_rows(self.rows)
        m, se = mean_se(per)
        return IntegralEstimate(float(m), float(se), per, self.skipped, self.component)


def occupation_integral(paths, qv: QuadraticVariationModel, region: Optional[Region],
                        component: int, f: Callable[[Array], Array]) -> IntegralEstimate:
    """Monte-Carlo mean over paths of ``sum_k 1_A(X_k) f(X_k) d<X^i>_k``.

    Non-finite values of a :class:`SingularFunction` on its singular set are
    skipped and counted; anywhere else they raise ``FloatingPointError``.
    """
    return fold(paths, [_IntegralAcc(qv, region or full_space(), component, f)])[0]


# ---------------------------------------------------------------- transversal density


@dataclass
class DensityEstimate:
    levels: Array
    values: Array
    stderr: Array
    bandwidth: float
    per_path: Array
    component: int
    support: tuple
    total_mass: float
    outside_mass: float
    richardson: Optional[dict] = None

    @property
    def spacing(self) -> float:
        return grid_spacing(self.levels)

    @property
    def n_paths(self) -> int:
        return int(self.per_path.shape[0])

    def integral(self) -> float:
        """Trapezoid integral of the estimated density over the level grid."""
        return float(np.trapezoid(self.values, self.levels))

    def index(self, a: float) -> int:
        k = int(np.argmin(np.abs(self.levels - a)))
        if abs(self.levels[k] - a) > 1e-9 * max(1.0, abs(a)):
            raise KeyError(f"level {a} not on the grid")
        return k

    def to_rows(self) -> list[list[str]]:
        return [[fmt(a), fmt(v), fmt(s), fmt(self.bandwidth)]
                for a, v, s in zip(self.levels, self.values, self.stderr)]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["level", "value", "stderr", "bandwidth"])
            w.writerows(self.to_rows())

    def summary(self) -> dict:
        out = {"bandwidth": self.bandwidth, "n_levels": int(self.levels.size),
               "n_paths": self.n_paths, "component": self.component,
               "integral": self.integral(), "total_mass": self.total_mass,
               "outside_mass": self.outside_mass, "support": list(self.support)}
        if self.richardson is not None:
            out["richardson_bandwidth"] = self.richardson["bandwidth"]
        return out


def _cell_factor(eps_list: Sequence[float], da: float, max_q: int = 64) -> Optional[int]:
    """Smallest ``q`` such that every half-width is a whole number of cells ``da / q``."""
    for q in range(1, max_q + 1):
        r = [e * q / da for e in eps_list]
        if all(abs(x - round(x)) < 1e-9 and round(x) >= 1 for x in r):
            return q
    return None


class _DensityAcc(Accumulator):
    def __init__(self, qv, foliation: Foliation, component, levels, eps_list):
        self.qv, self.fol, self.component = qv, foliation, component
        self.levels = np.asarray(levels, dtype=float)
        self.eps_list = list(eps_list)
        self.da = grid_spacing(self.levels)
        self.q = _cell_factor(self.eps_list, self.da) if self.da > 0 else None
        emax = max(self.eps_list)
        if self.q is not None:
            self.h = self.da / self.q
            self.R = int(round(emax / self.h))
            self.ncell = 2 * self.R + (len(self.levels) - 1) * self.q
            self.e0 = self.levels[0] - emax
        self.rows = [[] for _ in self.eps_list]
        self.mass, self.outside = [], []
        self.lo, self.hi = math.inf, -math.inf

    def update(self, batch):
        x, w, rows = _batch_weights(batch, self.qv, self.fol.region, self.component)
        P = len(batch)
        phi = self.fol(x) if len(x) else np.zeros(0)
        if len(phi):
            self.lo, self.hi = min(self.lo, float(phi.min())), max(self.hi, float(phi.max()))
        self.mass.append(np.bincount(rows, w, minlength=P))
        M = len(self.levels)
        if self.q is not None:
            cell = np.floor((phi - self.e0) / self.h)
            inside = (cell >= 0) & (cell < self.ncell)
            idx = rows[inside] * self.ncell + cell[inside].astype(np.int64)
            hist = np.bincount(idx, w[inside], minlength=P * self.ncell).reshape(P, self.ncell)
            self.outside.append(self.mass[-1] - hist.sum(axis=1))
            cum = np.zeros((P, self.ncell + 1))
            np.cumsum(hist, axis=1, out=cum[:, 1:])
            centre = self.R + np.arange(M) * self.q
            for slot, e in enumerate(self.eps_list):
                r = int(round(e / self.h))
                self.rows[slot].append((cum[:, centre + r] - cum[:, centre - r]) / (2 * e))
        else:
            covered = np.zeros(len(phi), dtype=bool)
            for slot, e in enumerate(self.eps_list):
                out = np.empty((P, M))
                for m, a in enumerate(self.levels):
                    band = (phi >= a - e) & (phi < a + e)
                    covered |= band
                    out[:, m] = np.bincount(rows[band], w[band], minlength=P) / (2 * e)
                self.rows[slot].append(out)
            self.outside.append(np.bincount(rows[~covered], w[~covered], minlength=P))

    def finish(self):
        M = len(self.levels)
        per = [stack_rows(r, M).reshape(-1, M) for r in self.rows]
        stats = [mean_se(p) for p in per]
        mass = stack_rows(self.mass)
        outside = stack_rows(self.outside)
        support = (self.lo, self.hi) if math.isfinite(self.lo) else (0.0, 0.0)
        est = DensityEstimate(self.levels, stats[0][0], stats[0][1], self.eps_list[0], per[0],
                              self.component, support, float(mass.mean()),
                              float(outside.mean()))
        if len(self.eps_list) > 1:
            extra = 2 * per[1] - per[0]
            ev, es = mean_se(extra)
            est.richardson = {"bandwidth": self.eps_list[1], "values": stats[1][0],
                              "stderr": stats[1][1], "per_path": per[1],
                              "extrapolated": ev, "extrapolated_stderr": es}
        return est


def check_density_grid(levels, eps: float) -> None:
    if not eps > 0:
        raise ValueError("bandwidth must be positive")
    da = grid_spacing(levels)
    if da > eps * (1 + 1e-12):
        raise ValueError(f"coverage gap: level spacing {da:g} exceeds bandwidth {eps:g}")


def transversal_density_accumulator(qv, foliation, component, eps, levels,
                                    richardson: bool = False) -> Accumulator:
    check_density_grid(levels, eps)
    return _DensityAcc(qv, foliation, component, levels, [eps, eps / 2] if richardson else [eps])


def transversal_density(paths, qv: QuadraticVariationModel, foliation: Foliation,
                        component: int, eps: float, levels,
                        richardson: bool = False) -> DensityEstimate:
    """Band estimator ``(1/2eps) sum_k 1_A 1_[a-eps, a+eps)(phi(X_k)) d<X^i>_k`` per level.

    With ``richardson=True`` the same pass also evaluates half bandwidth and
    the extrapolation ``2 L(eps/2) - L(eps)``.
    """
    acc = transversal_density_accumulator(qv, foliation, component, eps, levels, richardson)
    return fold(paths, [acc])[0]


# ---------------------------------------------------------------- disintegration


def _fill_empty(values: Array, present: Array) -> Array:
    """Copy each empty slab's value from the nearest non-empty slab."""
    if not present.any():
        return np.zeros_like(values)
    idx = np.flatnonzero(present)
    pos = np.arange(values.size)
    right = np.clip(np.searchsorted(idx, pos), 0, idx.size - 1)
    left = np.clip(right - 1, 0, idx.size - 1)
    pick = np.where(np.abs(idx[left] - pos) <= np.abs(idx[right] - pos), idx[left], idx[right])
    return values[pick]


@dataclass(eq=False)
class Disintegration:
    """Slab-wise regrouping of the occupation measure by ``phi`` value.

    Slab ``m`` holds samples with ``phi`` in ``[c_m - w/2, c_m + w/2)``.
    ``nu_per_path[:, m]`` is its occupation mass and ``sums[name][:, m]`` the
    integral of test function ``name`` over it, so the conditional law
    ``Q(c_m, .)`` integrates ``name`` to ``sums / nu``.
    """

    centers: Array
    width: float
    nu_per_path: Array
    sums: dict
    cloud: Optional[dict] = None

    @property
    def nu(self) -> Array:
        return self.nu_per_path.mean(axis=0)

    @property
    def total_mass(self) -> float:
        return float(self.nu_per_path.sum(axis=1).mean())

    def conditional_mean(self, name: str) -> Array:
        nu = self.nu_per_path.sum(axis=0)
        s = self.sums[name].sum(axis=0)
        present = nu > 0
        out = np.where(present, s / np.where(present, nu, 1.0), 0.0)
        return _fill_empty(out, present)

    def reconstruct(self, name: str) -> float:
        """``sum_m (int f dQ(c_m)) nu_m``, a regrouping of the occupation integral."""
        return float(np.sum(self.conditional_mean(name) * self.nu))

    def at_levels(self, name: str, levels: Array) -> Array:
        """Conditional means interpolated linearly between slab centres."""
        return np.interp(levels, self.centers, self.conditional_mean(name))

    def slab_cloud(self, m: int) -> tuple[Array, Array]:
        """Points of slab ``m`` and their probability weights (needs ``keep_cloud``)."""
        if self.cloud is None:
            raise ValueError("disintegration built without a sample cloud")
        sel = self.cloud["slab"] == m
        w = self.cloud["weights"][sel]
        tot = w.sum()
        return self.cloud["points"][sel], (w / tot if tot > 0 else w)

    def to_csv(self, path, name: Optional[str] = None) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            cols = ["level", "nu", "nu_stderr", "width"] + ([f"mean_{name}"] if name else [])
            wr.writerow(cols)
            nu, se = mean_se(self.nu_per_path)
            cm = self.conditional_mean(name) if name else None
            for m, c in enumerate(self.centers):
                row = [fmt(c), fmt(nu[m]), fmt(se[m]), fmt(self.width)]
                if name:
                    row.append(fmt(cm[m]))
                wr.writerow(row)


def slab_centers(lo: float, hi: float, width: float, offset: float = 0.0) -> Array:
    """Centres ``offset + k w`` of slabs covering ``[lo, hi]``."""
    k0 = math.floor((lo - offset) / width + 0.5)
    k1 = math.ceil((hi - offset) / width - 0.5)
    return offset + np.arange(k0, k1 + 1) * width


class _DisintegrationAcc(Accumulator):
    def __init__(self, qv, foliation, component, centers, functions, keep_cloud):
        self.qv, self.fol, self.component = qv, foliation, component
        self.centers = np.asarray(centers, dtype=float)
        self.width = grid_spacing(self.centers)
        self.e0 = self.centers[0] - self.width / 2
        self.functions = dict(functions or {})
        self.nu, self.sums = [], {k: [] for k in self.functions}
        self.keep = keep_cloud
        self.cloud = {"points": [], "weights": [], "slab": [], "path": []}
        self.offset = 0

    def update(self, batch):
        x, w, rows = _batch_weights(batch, self.qv, self.fol.region, self.component)
        P, S = len(batch), len(self.centers)
        slab = np.floor((self.fol(x) - self.e0) / self.width).astype(np.int64)
        ok = (slab >= 0) & (slab < S)
        idx = rows[ok] * S + slab[ok]
        self.nu.append(np.bincount(idx, w[ok], minlength=P * S).reshape(P, S))
        for name, f in self.functions.items():
            v = np.asarray(f(x[ok]), dtype=float) * w[ok]
            self.sums[name].append(np.bincount(idx, v, minlength=P * S).reshape(P, S))
        if self.keep:
            self.cloud["points"].append(x[ok])
            self.cloud["weights"].append(w[ok])
            self.cloud["slab"].append(slab[ok])
            self.cloud["path"].append(rows[ok] + self.offset)
        self.offset += P

    def finish(self):
        S = len(self.centers)
        cloud = None
        if self.keep:
            N = self.cloud["points"][0].shape[-1] if self.cloud["points"] else 1
            cloud = {"points": stack_rows(self.cloud["points"], N).reshape(-1, N),
                     "weights": stack_rows(self.cloud["weights"]),
                     "slab": stack_rows(self.cloud["slab"]).astype(np.int64),
                     "path": stack_rows(self.cloud["path"]).astype(np.int64)}
        return Disintegration(self.centers, self.width,
                              stack_rows(self.nu, S).reshape(-1, S),
                              {k: stack_rows(v, S).reshape(-1, S) for k, v in self.sums.items()},
                              cloud)


def disintegration_accumulator(qv, foliation, component, centers, functions=None,
                               keep_cloud=False) -> Accumulator:
    return _DisintegrationAcc(qv, foliation, component, centers, functions, keep_cloud)


def disintegrate(source, foliation: Foliation, centers, functions: Optional[Mapping] = None,
                 qv: Optional[QuadraticVariationModel] = None, component: int = 0,
                 keep_cloud: bool = False) -> Disintegration:
    """Group occupation mass into ``phi``-slabs centred on ``centers``.

    ``source`` is either an :class:`OccupationMeasure` or paths (then ``qv``
    is required).  A measure keeps its own region; ``foliation`` only supplies
    ``phi``.
    """
    centers = np.asarray(centers, dtype=float)
    if isinstance(source, OccupationMeasure):
        width = grid_spacing(centers)
        S = len(centers)
        slab = np.floor((foliation(source.points) - centers[0] + width / 2) / width).astype(np.int64)
        ok = (slab >= 0) & (slab < S)
        idx = source.path[ok] * S + slab[ok]
        nu = np.bincount(idx, source.weights[ok], minlength=source.n_paths * S)
        sums = {}
        for name, f in (functions or {}).items():
            v = np.asarray(f(source.points[ok]), dtype=float) * source.weights[ok]
            sums[name] = np.bincount(idx, v, minlength=source.n_paths * S).reshape(-1, S)
        cloud = {"points": source.points[ok], "weights": source.weights[ok],
                 "slab": slab[ok], "path": source.path[ok]}
        return Disintegration(centers, width, nu.reshape(-1, S), sums, cloud)
    if qv is None:
        raise ValueError("disintegrating paths needs a QuadraticVariationModel")
    acc = disintegration_accumulator(qv, foliation, component, centers, functions, keep_cloud)
    return fold(source, [acc])[0]


# ---------------------------------------------------------------- formula residual


@dataclass
class ResidualReport:
    lhs: float
    lhs_stderr: float
    rhs: float
    residual: float
    bandwidth: float
    level_spacing: float
    slab_width: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def occupation_formula_residual(paths, qv: QuadraticVariationModel, foliation: Foliation,
                                f: Callable[[Array], Array], component: int, eps: float,
                                levels, slab_width: Optional[float] = None) -> ResidualReport:
    """Relative gap between ``int f(X) 1_A d<X^i>`` and ``int (int f dQ(a)) L^a da``.

    The density comes from the band estimator on ``levels``; the conditional
    means come from an independent slab binning of width ``slab_width``
    (default ``1.5`` level spacings, offset by half a slab).
    """
    levels = np.asarray(levels, dtype=float)
    da = grid_spacing(levels)
    w = slab_width or 1.5 * da
    centers = slab_centers(levels[0] - eps - w, levels[-1] + eps + w, w, offset=w / 2)
    accs = [_IntegralAcc(qv, foliation.region, component, f),
            transversal_density_accumulator(qv, foliation, component, eps, levels),
            disintegration_accumulator(qv, foliation, component, centers, {"f": f})]
    lhs, dens, dis = fold(paths, accs)
    rhs = float(np.sum(dis.at_levels("f", levels) * dens.values) * da)
    resid = abs(lhs.value - rhs) / max(abs(lhs.value), 1e-12)
    if lhs.value == 0 and rhs == 0:
        resid = 0.0
    return ResidualReport(lhs.value, lhs.stderr, rhs, resid, eps, da, w)


# ---------------------------------------------------------------- level-set occupation


class _LevelFractionAcc(Accumulator):
    def __init__(self, qv, foliation, component, deltas, level):
        self.qv, self.fol, self.component = qv, foliation, component
        self.deltas, self.level = list(deltas), level
        self.hits = np.zeros(len(self.deltas))
        self.total = 0.0

    def update(self, batch):
        x, w, _ = _batch_weights(batch, self.qv, self.fol.region, self.component)
        dev = np.abs(self.fol(x) - self.level)
        self.total += float(w.sum())
        for k, d in enumerate(self.deltas):
            self.hits[k] += float(w[dev < d].sum())

    def finish(self):
        return self.hits / self.total if self.total > 0 else np.zeros_like(self.hits)


def level_set_fraction(paths, qv: QuadraticVariationModel, foliation: Foliation, component: int,
                       deltas: Sequence[float], level: float = 0.0) -> Array:
    """Fraction of in-A ``<X^i>`` mass carried by ``{|phi - level| < delta}`` for each delta."""
    return fold(paths, [_LevelFractionAcc(qv, foliation, component, deltas, level)])[0]
