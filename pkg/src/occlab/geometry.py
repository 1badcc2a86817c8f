"""Manifold catalog, level-set foliations and the good extension of the distance.

All point arguments are arrays of shape ``(..., N)``; results broadcast over the
leading axes.  Orientation conventions for signed distances:

* sphere: positive outside,
* hyperplane ``{v.x = c}``: positive where ``v.x > c``,
* graph ``{x_N = g(x_bar)}``: positive where ``x_N > g(x_bar)``.

Piecewise shapes (square boundary, crossing lines) have no signed distance in
this sense; they carry explicit foliations instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

Array = np.ndarray


class GeometryError(ValueError):
    pass


class OutsideReachError(GeometryError):
    def __init__(self, message: str, reach: float):
        super().__init__(f"{message} (reach = {reach})")
        self.reach = reach


class UnsupportedShapeError(GeometryError):
    pass


class ProjectionNotUnique(GeometryError):
    pass


class NonConvergenceError(GeometryError):
    def __init__(self, message: str, best: Array, residual: Array):
        super().__init__(message)
        self.best = best
        self.residual = residual


def _pts(x) -> Array:
    return np.asarray(x, dtype=float)


class Manifold:
    tag: str = ""
    smoothness: str = "leaf"
    dim: int

    # subclasses implement distance / minimizers; leaf ones also _signed / _normal

    @property
    def reach(self) -> float:
        raise NotImplementedError

    @property
    def is_leaf(self) -> bool:
        return self.smoothness == "leaf"

    def distance(self, x) -> Array:
        raise NotImplementedError

    def minimizers(self, x) -> tuple[Array, Array]:
        """Nearest points and a flag telling whether the minimizer is not unique."""
        raise NotImplementedError

    def project(self, x) -> Array:
        return self.minimizers(x)[0]

    def _require_leaf(self):
        if not self.is_leaf:
            raise UnsupportedShapeError(f"{self.tag} is piecewise smooth: no signed distance")

    def candidate_mask(self, x, eps: float) -> Optional[Array]:
        """Cheap superset of ``{d(x, Gamma) < eps}``, or ``None`` when no filter is cheaper."""
        return None

    def check_within_reach(self, x) -> None:
        d = self.distance(x)
        if np.any(d >= self.reach):
            raise OutsideReachError("point outside the tubular neighbourhood", self.reach)

    def signed_distance(self, x, check: bool = True) -> Array:
        self._require_leaf()
        if check:
            self.check_within_reach(x)
        return self._signed(_pts(x))

    def gradient_signed_distance(self, x, check: bool = True) -> Array:
        self._require_leaf()
        if check:
            self.check_within_reach(x)
        return self._normal_field(_pts(x))

    def sample(self, n: int, rng: np.random.Generator, radius: float = 3.0) -> tuple[Array, Array]:
        """Points on the manifold (roughly within ``radius`` of the origin) and unit normals."""
        raise NotImplementedError

    def level_set_distance(self, x, a: float) -> Array:
        """Distance from ``x`` to ``{y : d(y, Gamma) = a}``, computed on the parallel sets."""
        raise NotImplementedError

    def describe(self) -> dict:
        raise NotImplementedError


@dataclass(eq=False)
class Hyperplane(Manifold):
    normal: Array
    offset: float = 0.0
    tag = "hyperplane"

    def __post_init__(self):
        self.normal = _pts(self.normal).reshape(-1)
        if abs(np.linalg.norm(self.normal) - 1.0) > 1e-12:
            raise GeometryError("hyperplane normal must have unit length")
        self.dim = self.normal.size

    @property
    def reach(self) -> float:
        return math.inf

    def _signed(self, x):
        return x @ self.normal - self.offset

    def distance(self, x):
        return np.abs(self._signed(_pts(x)))

    def minimizers(self, x):
        x = _pts(x)
        p = x - self._signed(x)[..., None] * self.normal
        return p, np.zeros(x.shape[:-1], dtype=bool)

    def _normal_field(self, x):
        return np.broadcast_to(self.normal, x.shape).copy()

    def sample(self, n, rng, radius=3.0):
        z = rng.uniform(-radius, radius, size=(n, self.dim))
        p = z - (z @ self.normal - self.offset)[:, None] * self.normal
        return p, np.broadcast_to(self.normal, p.shape).copy()

    def level_set_distance(self, x, a):
        s = _pts(x) @ self.normal
        return np.minimum(np.abs(s - (self.offset + a)), np.abs(s - (self.offset - a)))

    def describe(self):
        return {"tag": self.tag, "normal": self.normal.tolist(), "offset": self.offset}


@dataclass(eq=False)
class Sphere(Manifold):
    center: Array
    radius: float = 1.0
    tag = "sphere"

    def __post_init__(self):
        self.center = _pts(self.center).reshape(-1)
        if not self.radius > 0:
            raise GeometryError("sphere radius must be positive")
        self.dim = self.center.size

    @property
    def reach(self) -> float:
        return float(self.radius)

    def _r(self, x):
        v = x - self.center if self.center.any() else x
        if v.shape[-1] == 2:
            return np.hypot(v[..., 0], v[..., 1])
        return np.sqrt(np.einsum("...i,...i->...", v, v))

    def _signed(self, x):
        return self._r(x) - self.radius

    def distance(self, x):
        return np.abs(self._signed(_pts(x)))

    def minimizers(self, x):
        x = _pts(x)
        r = self._r(x)
        if np.any(r == 0):
            raise ProjectionNotUnique("the sphere centre has no unique projection")
        u = (x - self.center) / r[..., None]
        return self.center + self.radius * u, np.zeros(x.shape[:-1], dtype=bool)

    def _normal_field(self, x):
        r = self._r(x)
        if np.any(r == 0):
            raise ProjectionNotUnique("the sphere centre has no unique projection")
        return (x - self.center) / r[..., None]

    def sample(self, n, rng, radius=3.0):
        z = rng.standard_normal((n, self.dim))
        u = z / np.linalg.norm(z, axis=1, keepdims=True)
        return self.center + self.radius * u, u

    def level_set_distance(self, x, a):
        r = self._r(_pts(x))
        out = np.abs(r - (self.radius + a))
        if a <= self.radius:
            out = np.minimum(out, np.abs(r - (self.radius - a)))
        return out

    def describe(self):
        return {"tag": self.tag, "center": self.center.tolist(), "radius": self.radius}


@dataclass(eq=False)
class LeafUnion(Manifold):
    """Disjoint union of leaf manifolds, e.g. both components of a sphere's level set."""

    parts: Sequence[Manifold] = ()
    separation: float = math.inf
    tag = "union"

    def __post_init__(self):
        self.parts = list(self.parts)
        self.dim = self.parts[0].dim

    @property
    def reach(self) -> float:
        return min(min(p.reach for p in self.parts), self.separation / 2)

    def _nearest(self, x):
        d = np.stack([p.distance(x) for p in self.parts])
        return d.argmin(axis=0), d.min(axis=0)

    def distance(self, x):
        x = _pts(x)
        return np.minimum.reduce([p.distance(x) for p in self.parts])

    def _select(self, x, fn):
        x = _pts(x)
        which, _ = self._nearest(x)
        out = np.empty(x.shape[:-1] + fn(self.parts[0], x[..., :1, :]).shape[x.ndim - 1:])
        for k, p in enumerate(self.parts):
            m = which == k
            if m.any():
                out[m] = fn(p, x[m])
        return out

    def _signed(self, x):
        return self._select(x, lambda p, y: p._signed(y))

    def _normal_field(self, x):
        return self._select(x, lambda p, y: p._normal_field(y))

    def minimizers(self, x):
        pts = self._select(x, lambda p, y: p.minimizers(y)[0])
        return pts, np.zeros(pts.shape[:-1], dtype=bool)

    def sample(self, n, rng, radius=3.0):
        pts, nrm = zip(*(p.sample(n // len(self.parts) + 1, rng, radius) for p in self.parts))
        return np.concatenate(pts)[:n], np.concatenate(nrm)[:n]

    def describe(self):
        return {"tag": self.tag, "parts": [p.describe() for p in self.parts]}


@dataclass(eq=False)
class Graph(Manifold):
    """Graph ``{x_N = g(x_bar)}`` of a C^2 function ``g: R^{N-1} -> R``.

    ``g``, ``grad`` and ``hess`` are vectorised over leading axes of ``u``
    (shape ``(..., N-1)``).  The reach is bounded below by
    ``1 / sup |Hess g|`` over ``box``.
    """

    g: Callable[[Array], Array]
    grad: Callable[[Array], Array]
    hess: Callable[[Array], Array]
    dim: int = 2
    box: tuple = (-5.0, 5.0)
    name: str = "graph"
    params: dict = field(default_factory=dict)
    tol: float = 1e-12
    max_iter: int = 100
    tag = "graph"

    def __post_init__(self):
        self._reach = None
        self._grad_bound = None
        self._slope = np.asarray(self.params["slope"]) if self.name == "linear" else None

    @classmethod
    def linear(cls, slope, dim: Optional[int] = None) -> "Graph":
        a = np.atleast_1d(np.asarray(slope, dtype=float))
        dim = dim or a.size + 1
        zero_h = np.zeros((dim - 1, dim - 1))
        return cls(lambda u: u @ a,
                   lambda u: np.broadcast_to(a, u.shape).copy(),
                   lambda u: np.broadcast_to(zero_h, u.shape[:-1] + zero_h.shape).copy(),
                   dim=dim, name="linear", params={"slope": a.tolist()})

    @classmethod
    def quadratic(cls, coefficient: float, box=(-5.0, 5.0)) -> "Graph":
        """``g(u) = c |u|^2`` in R^2 (one graph variable)."""
        c = float(coefficient)
        return cls(lambda u: c * np.sum(u * u, axis=-1),
                   lambda u: 2 * c * u,
                   lambda u: np.broadcast_to(2 * c * np.eye(u.shape[-1]),
                                             u.shape[:-1] + (u.shape[-1],) * 2).copy(),
                   dim=2, box=box, name="quadratic", params={"coefficient": c})

    @property
    def reach(self) -> float:
        if self._reach is None:
            m = self.dim - 1
            lo, hi = self.box
            k = max(2, int(round(40000 ** (1.0 / m))))
            axes = np.meshgrid(*([np.linspace(lo, hi, k)] * m), indexing="ij")
            u = np.stack([a.ravel() for a in axes], axis=-1)
            H = self.hess(u)
            sup = np.max(np.linalg.norm(H, ord=2, axis=(-2, -1))) if m > 1 else np.max(np.abs(H))
            self._reach = math.inf if sup == 0 else 1.0 / float(sup)
        return self._reach

    @property
    def gradient_bound(self) -> float:
        """``sup |grad g|`` over the declared box (grid estimate)."""
        if self._grad_bound is None:
            m = self.dim - 1
            lo, hi = self.box
            k = max(2, int(round(40000 ** (1.0 / m))))
            axes = np.meshgrid(*([np.linspace(lo, hi, k)] * m), indexing="ij")
            u = np.stack([a.ravel() for a in axes], axis=-1)
            self._grad_bound = float(np.max(np.linalg.norm(self.grad(u), axis=-1)))
        return self._grad_bound

    def candidate_mask(self, x, eps: float) -> Array:
        # d(x, Gamma) >= |x_N - g(x_bar)| / sqrt(1 + sup|grad g|^2)
        return np.abs(self.vertical_offset(x)) < eps * math.sqrt(1 + self.gradient_bound ** 2)

    def vertical_offset(self, x) -> Array:
        x = _pts(x)
        return x[..., -1] - self.g(x[..., :-1])

    def normal(self, u) -> Array:
        dg = self.grad(u)
        n = np.concatenate([-dg, np.ones(dg.shape[:-1] + (1,))], axis=-1)
        return n / np.linalg.norm(n, axis=-1, keepdims=True)

    def _objective(self, u, xb, r):
        return 0.5 * np.sum((u - xb) ** 2, axis=-1) + 0.5 * (self.g(u) - r) ** 2

    def _solve(self, x):
        """Damped Newton on the optimality condition in ``u = x_bar``."""
        if self._slope is not None:
            # affine g: the nearest point is the orthogonal projection
            n = self.normal(x[..., :-1])
            return x - (self.vertical_offset(x) / np.sqrt(1 + self._slope @ self._slope))[..., None] * n
        shape = x.shape[:-1]
        x = x.reshape(-1, self.dim)
        xb, r = x[:, :-1], x[:, -1]
        u = xb.copy()
        m = self.dim - 1
        eye = np.eye(m)
        tol = self.tol * np.maximum(1.0, np.linalg.norm(x, axis=1))
        active = np.ones(len(x), dtype=bool)
        res = np.full(len(x), np.inf)
        for _ in range(self.max_iter):
            ua, xa, ra = u[active], xb[active], r[active]
            G, dg, H = self.g(ua), self.grad(ua), self.hess(ua)
            grad_f = (ua - xa) + (G - ra)[:, None] * dg
            res_a = np.linalg.norm(grad_f, axis=1)
            res[active] = res_a
            done = res_a <= tol[active]
            if done.all():
                active[:] = False
                break
            hess_f = eye + dg[:, :, None] * dg[:, None, :] + (G - ra)[:, None, None] * H
            pd = np.all(np.linalg.eigvalsh(hess_f) > 1e-14, axis=1)
            step = np.where(pd[:, None],
                            np.linalg.solve(np.where(pd[:, None, None], hess_f, eye),
                                            grad_f[..., None])[..., 0],
                            grad_f)
            f0 = self._objective(ua, xa, ra)
            alpha = np.ones(len(ua))
            for _ in range(40):
                trial = ua - alpha[:, None] * step
                worse = self._objective(trial, xa, ra) > f0 + 1e-300
                worse &= ~done
                if not worse.any():
                    break
                alpha = np.where(worse, alpha / 2, alpha)
            move = np.where(done[:, None], 0.0, alpha[:, None] * step)
            ua = ua - move
            u[active] = ua
            # rounding stall: Newton no longer moves, residual already tiny
            stalled = np.linalg.norm(move, axis=1) <= 1e-15 * (1 + np.linalg.norm(ua, axis=1))
            done |= stalled & (res_a <= math.sqrt(self.tol) * tol[active] / self.tol)
            idx = np.flatnonzero(active)
            active[idx[done]] = False
            if not active.any():
                break
        if active.any():
            best = np.concatenate([u, self.g(u)[:, None]], axis=1)
            raise NonConvergenceError("graph nearest-point solve did not converge",
                                      best[active], res[active])
        p = np.concatenate([u, self.g(u)[:, None]], axis=1)
        return p.reshape(shape + (self.dim,))

    def minimizers(self, x):
        x = _pts(x)
        return self._solve(x), np.zeros(x.shape[:-1], dtype=bool)

    def distance(self, x):
        x = _pts(x)
        return np.linalg.norm(x - self._solve(x), axis=-1)

    def _signed(self, x):
        d = self.distance(x)
        return np.where(self.vertical_offset(x) >= 0, d, -d)

    def _normal_field(self, x):
        p = self._solve(x)
        v = x - p
        n = np.linalg.norm(v, axis=-1, keepdims=True)
        on = n[..., 0] < 1e-14
        sgn = np.where(self.vertical_offset(x) >= 0, 1.0, -1.0)[..., None]
        out = np.where(on[..., None], 0.0, sgn * v / np.where(on[..., None], 1.0, n))
        if on.any():
            out[on] = self.normal(x[on][..., :-1])
        return out

    def sample(self, n, rng, radius=3.0):
        lo, hi = max(self.box[0], -radius), min(self.box[1], radius)
        u = rng.uniform(lo, hi, size=(n, self.dim - 1))
        return np.concatenate([u, self.g(u)[:, None]], axis=1), self.normal(u)

    def level_set_distance(self, x, a, window: float = 2.0, coarse: int = 2001):
        """Distance to the two parallel curves ``p(u) +/- a n(u)`` (planar graphs only).

        Dense sampling of ``u`` followed by a vectorised golden-section
        refinement; independent of the nearest-point solver.
        """
        if self.dim != 2:
            raise UnsupportedShapeError("parallel-set distance implemented for planar graphs")
        x = _pts(x).reshape(-1, 2)
        best = np.full(len(x), np.inf)
        for side in (1.0, -1.0):
            def curve_d2(u, xx):
                uu = u[..., None]
                n = self.normal(uu)
                p = np.concatenate([uu, self.g(uu)[..., None]], axis=-1) + side * a * n
                return np.sum((p - xx) ** 2, axis=-1)

            grid = np.linspace(-window, window, coarse)
            h = grid[1] - grid[0]
            for lo in range(0, len(x), 256):
                xs = x[lo:lo + 256]
                u = xs[:, :1] + grid[None, :]
                d2 = curve_d2(u, xs[:, None, :])
                k = d2.argmin(axis=1)
                a_, b_ = u[np.arange(len(xs)), k] - h, u[np.arange(len(xs)), k] + h
                gr = (math.sqrt(5) - 1) / 2
                for _ in range(80):
                    c_ = b_ - gr * (b_ - a_)
                    d_ = a_ + gr * (b_ - a_)
                    left = curve_d2(c_, xs) < curve_d2(d_, xs)
                    b_ = np.where(left, d_, b_)
                    a_ = np.where(left, a_, c_)
                val = np.sqrt(curve_d2(0.5 * (a_ + b_), xs))
                best[lo:lo + 256] = np.minimum(best[lo:lo + 256], val)
        return best

    def describe(self):
        return {"tag": self.tag, "name": self.name, "dim": self.dim,
                "box": list(self.box), **self.params}


@dataclass(eq=False)
class SquareBoundary(Manifold):
    """Boundary of the unit square ``[0, 1]^2``."""

    tag = "square-boundary"
    smoothness = "piecewise"

    def __post_init__(self):
        self.dim = 2

    @property
    def reach(self) -> float:
        return 0.0

    def _candidates(self, x):
        x = _pts(x)
        c = np.clip(x, 0.0, 1.0)
        sides = []
        for axis in (0, 1):
            for val in (0.0, 1.0):
                p = c.copy()
                p[..., axis] = val
                sides.append(p)
        return np.stack(sides)  # (4, ..., 2)

    def minimizers(self, x):
        x = _pts(x)
        cand = self._candidates(x)
        d = np.linalg.norm(cand - x, axis=-1)
        k = d.argmin(axis=0)
        p = np.take_along_axis(cand, k[None, ..., None], axis=0)[0]
        near = np.abs(d - d.min(axis=0)) <= 1e-12
        distinct = np.linalg.norm(cand - p, axis=-1) > 1e-12
        return p, np.any(near & distinct, axis=0)

    def distance(self, x):
        x = _pts(x)
        return np.linalg.norm(self._candidates(x) - x, axis=-1).min(axis=0)

    def interior(self, x) -> Array:
        x = _pts(x)
        return np.all((x > 0) & (x < 1), axis=-1)

    def interior_signed_distance(self, x) -> Array:
        """``d`` inside the square and ``-d`` outside."""
        d = self.distance(x)
        return np.where(self.interior(x), d, -d)

    def interior_signed_gradient(self, x) -> Array:
        x = _pts(x)
        p, _ = self.minimizers(x)
        v = x - p
        n = np.linalg.norm(v, axis=-1, keepdims=True)
        s = np.where(self.interior(x), 1.0, -1.0)[..., None]
        return s * v / np.where(n == 0, 1.0, n)

    def sample(self, n, rng, radius=3.0):
        s = rng.uniform(0, 4, size=n)
        side = np.floor(s).astype(int)
        t = s - side
        pts = np.stack([np.choose(side, [t, np.ones(n), 1 - t, np.zeros(n)]),
                        np.choose(side, [np.zeros(n), t, np.ones(n), 1 - t])], axis=1)
        nrm = np.stack([np.choose(side, [np.zeros(n), np.ones(n), np.zeros(n), -np.ones(n)]),
                        np.choose(side, [-np.ones(n), np.zeros(n), np.ones(n), np.zeros(n)])],
                       axis=1)
        return pts, nrm

    def describe(self):
        return {"tag": self.tag}


@dataclass(eq=False)
class CrossingLines(Manifold):
    """The union of the lines ``x2 = x1`` and ``x2 = -x1``."""

    tag = "crossing-lines"
    smoothness = "piecewise"

    def __post_init__(self):
        self.dim = 2
        self._dirs = np.array([[1.0, 1.0], [1.0, -1.0]]) / math.sqrt(2)

    @property
    def reach(self) -> float:
        return 0.0

    def minimizers(self, x):
        x = _pts(x)
        cand = np.stack([(x @ u)[..., None] * u for u in self._dirs])
        d = np.linalg.norm(cand - x, axis=-1)
        k = d.argmin(axis=0)
        p = np.take_along_axis(cand, k[None, ..., None], axis=0)[0]
        tie = (np.abs(d[0] - d[1]) <= 1e-12) & (np.linalg.norm(cand[0] - cand[1], axis=-1) > 1e-12)
        return p, tie

    def distance(self, x):
        x = _pts(x)
        return np.minimum(np.abs(x[..., 1] - x[..., 0]), np.abs(x[..., 1] + x[..., 0])) / math.sqrt(2)

    def sector_signed_distance(self, x) -> Array:
        """``d`` on the sectors ``|x2| < |x1|``, ``-d`` on ``|x1| < |x2|``, 0 on the lines."""
        x = _pts(x)
        return np.sign(np.abs(x[..., 0]) - np.abs(x[..., 1])) * self.distance(x)

    def sector_signed_gradient(self, x) -> Array:
        x = _pts(x)
        p, _ = self.minimizers(x)
        v = x - p
        n = np.linalg.norm(v, axis=-1, keepdims=True)
        s = np.sign(np.abs(x[..., 0]) - np.abs(x[..., 1]))[..., None]
        return s * v / np.where(n == 0, 1.0, n)

    def sample(self, n, rng, radius=3.0):
        t = rng.uniform(-radius, radius, size=n)
        k = rng.integers(0, 2, size=n)
        d = self._dirs[k]
        nrm = np.stack([-d[:, 1], d[:, 0]], axis=1)
        return t[:, None] * d, nrm

    def describe(self):
        return {"tag": self.tag}


# ---------------------------------------------------------------- foliations


@dataclass(eq=False)
class Region:
    """Region mask ``A`` given by a predicate on points."""

    kind: str
    predicate: Callable[[Array], Array]
    params: dict = field(default_factory=dict)

    def contains(self, x) -> Array:
        return np.asarray(self.predicate(_pts(x)), dtype=bool)

    def describe(self) -> dict:
        return {"kind": self.kind, **self.params}


def full_space() -> Region:
    return Region("full-space", lambda x: np.ones(x.shape[:-1], dtype=bool))


def empty_region() -> Region:
    return Region("empty", lambda x: np.zeros(x.shape[:-1], dtype=bool))


def tubular_band(manifold: Manifold, width: float) -> Region:
    return Region("tubular-band", lambda x: manifold.distance(x) < width, {"width": width})


def level_band(phi: Callable[[Array], Array], lo: float = -1.0, hi: float = 1.0) -> Region:
    return Region("level-band", lambda x: (phi(x) > lo) & (phi(x) < hi), {"lo": lo, "hi": hi})


def ball_complement(center, radius: float) -> Region:
    c = _pts(center)
    return Region("ball-complement", lambda x: np.linalg.norm(x - c, axis=-1) > radius,
                  {"center": c.tolist(), "radius": radius})


def fd_gradient(fn: Callable[[Array], Array], x, h: float = 1e-6) -> Array:
    """Central finite-difference gradient of a scalar field."""
    x = _pts(x)
    out = np.empty(x.shape)
    for i in range(x.shape[-1]):
        e = np.zeros(x.shape[-1])
        e[i] = h
        out[..., i] = (fn(x + e) - fn(x - e)) / (2 * h)
    return out


PROVENANCES = ("coordinate", "squared-norm", "graph-difference", "signed-distance",
               "good-extension-of-distance", "explicit-piecewise")


@dataclass(eq=False)
class Foliation:
    """Scalar field ``phi`` whose level sets ``{x in A : phi(x) = a}`` are the leaves."""

    phi: Callable[[Array], Array]
    grad: Optional[Callable[[Array], Array]]
    region: Region
    provenance: str
    manifold: Optional[Manifold] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")

    def __call__(self, x) -> Array:
        return self.phi(_pts(x))

    def gradient(self, x) -> Array:
        if self.grad is None:
            return fd_gradient(self.phi, x)
        return self.grad(_pts(x))

    def in_region(self, x) -> Array:
        return self.region.contains(x)

    def with_region(self, region: Region) -> "Foliation":
        return Foliation(self.phi, self.grad, region, self.provenance, self.manifold, self.params)

    def describe(self) -> dict:
        out = {"provenance": self.provenance, "region": self.region.describe(), **self.params}
        if self.manifold is not None:
            out["manifold"] = self.manifold.describe()
        return out


def coordinate_foliation(index: int, region: Optional[Region] = None) -> Foliation:
    def grad(x):
        out = np.zeros(x.shape)
        out[..., index] = 1.0
        return out
    return Foliation(lambda x: x[..., index], grad, region or full_space(), "coordinate",
                     params={"index": index})


def squared_norm_foliation(region: Optional[Region] = None) -> Foliation:
    return Foliation(lambda x: np.sum(x * x, axis=-1), lambda x: 2 * x,
                     region or full_space(), "squared-norm")


def graph_difference_foliation(graph: Graph, region: Optional[Region] = None) -> Foliation:
    def grad(x):
        dg = graph.grad(x[..., :-1])
        return np.concatenate([-dg, np.ones(dg.shape[:-1] + (1,))], axis=-1)
    return Foliation(graph.vertical_offset, grad, region or full_space(), "graph-difference",
                     manifold=graph)


def signed_distance_foliation(manifold: Manifold, region: Optional[Region] = None) -> Foliation:
    """``phi = delta_Gamma`` without reach checks; the caller restricts ``A``."""
    manifold._require_leaf()
    return Foliation(manifold._signed, manifold._normal_field, region or full_space(),
                     "signed-distance", manifold=manifold)


# Quintic smoothstep S(u) = 6u^5 - 15u^4 + 10u^3 on [0, 1] and its primitive.
def _smoothstep(u):
    u = np.clip(u, 0.0, 1.0)
    return u ** 3 * (u * (6 * u - 15) + 10)


def _smoothstep_d(u):
    inside = (u > 0) & (u < 1)
    return np.where(inside, 30 * u ** 2 * (u - 1) ** 2, 0.0)


def _smoothstep_int(u):
    u = np.clip(u, 0.0, 1.0)
    return u ** 6 - 3 * u ** 5 + 2.5 * u ** 4


@dataclass(frozen=True)
class _DistanceBlend:
    """1-D profile ``F(r) = (1 - theta(r)) h(r) + theta(r) r`` applied to ``r = d(x, Gamma)``.

    ``theta`` is 1 on ``[0, inner]`` and 0 beyond ``outer``; ``h`` is the
    regularised distance, equal to ``r`` up to ``inner`` and constant beyond
    ``outer``, so ``F(d)`` is C^2 away from the manifold.
    """

    inner: float
    outer: float

    def _u(self, r):
        return (r - self.inner) / (self.outer - self.inner)

    def theta(self, r):
        return 1.0 - _smoothstep(self._u(r))

    def h(self, r):
        w = self.outer - self.inner
        u = self._u(r)
        return np.where(r <= self.inner, r, self.inner + w * (np.clip(u, 0, 1) - _smoothstep_int(u)))

    def value(self, r):
        th = self.theta(r)
        return (1 - th) * self.h(r) + th * r  # d1 + d2

    def slope(self, r):
        u = self._u(r)
        w = self.outer - self.inner
        th = self.theta(r)
        dth = -_smoothstep_d(u) / w
        dh = np.where(r <= self.inner, 1.0, np.where(u < 1, 1.0 - _smoothstep(u), 0.0))
        return dth * (r - self.h(r)) + (1 - th) * dh + th


def good_extension(manifold: Manifold, band: float) -> Foliation:
    """Extension of ``d(., Gamma)`` off the band ``{d <= band}``.

    Equal to the distance on the closed band, C^2 off the manifold, at least
    ``band`` outside it, and constant once ``d`` exceeds an outer radius that
    stays strictly inside the reach.  Region ``A`` is the open band.
    """
    manifold._require_leaf()
    reach = manifold.reach
    if not 0 < band < reach:
        raise OutsideReachError(f"band {band} must lie in (0, reach)", reach)
    outer = min(2 * band, 0.5 * (band + reach))
    blend = _DistanceBlend(band, outer)

    def phi(x):
        return blend.value(manifold.distance(x))

    def grad(x):
        x = _pts(x)
        d = manifold.distance(x)
        out = np.zeros(x.shape)
        m = (d < outer) & (d > 0)
        if m.any():
            xm = x[m]
            s = np.sign(manifold._signed(xm))[..., None]
            out[m] = blend.slope(d[m])[..., None] * s * manifold._normal_field(xm)
        return out

    return Foliation(phi, grad, tubular_band(manifold, band), "good-extension-of-distance",
                     manifold=manifold, params={"band": band, "outer": outer})


def _pos(v):
    return np.maximum(v, 0.0)


def square_decomposition_phi(x) -> Array:
    """``x1+ - (x1+ - x2+)+ - ((-x1)+ - ((-x1)+ - (-x2)+)+)``, positive parts of coordinates."""
    x = _pts(x)
    x1, x2 = x[..., 0], x[..., 1]
    return _pos(x1) - _pos(_pos(x1) - _pos(x2)) - (_pos(-x1) - _pos(_pos(-x1) - _pos(-x2)))


def crossing_decomposition_phi(x) -> Array:
    """``x1+ - (x1+ - x2+)+ - |((-x1)+, (-x2)+)|``."""
    x = _pts(x)
    x1, x2 = x[..., 0], x[..., 1]
    return _pos(x1) - _pos(_pos(x1) - _pos(x2)) - np.hypot(_pos(-x1), _pos(-x2))


def square_boundary_foliation(region: Optional[Region] = None) -> Foliation:
    return Foliation(square_decomposition_phi, None, region or full_space(),
                     "explicit-piecewise", manifold=SquareBoundary(),
                     params={"formula": "positive-part difference"})


def crossing_lines_foliation(region: Optional[Region] = None) -> Foliation:
    return Foliation(crossing_decomposition_phi, None, region or full_space(),
                     "explicit-piecewise", manifold=CrossingLines(),
                     params={"formula": "positive-part difference plus norm"})


def square_interior_foliation(region: Optional[Region] = None) -> Foliation:
    sq = SquareBoundary()
    return Foliation(sq.interior_signed_distance, sq.interior_signed_gradient,
                     region or full_space(), "explicit-piecewise", manifold=sq,
                     params={"formula": "interior-positive distance"})


def crossing_sector_foliation(region: Optional[Region] = None) -> Foliation:
    cl = CrossingLines()
    return Foliation(cl.sector_signed_distance, cl.sector_signed_gradient, region or full_space(),
                     "explicit-piecewise", manifold=cl,
                     params={"formula": "sector-signed distance"})


def level_set_distance_equivalence(manifold: Manifold, a: float, eps: float, x) -> tuple:
    """``(d(x, Gamma_a) < eps, a - eps < d(x, Gamma) < a + eps)`` with ``Gamma_a = {d = a}``."""
    manifold._require_leaf()
    if not (a > 0 and eps > 0 and a + eps < manifold.reach):
        raise OutsideReachError(f"a={a}, eps={eps} must satisfy a + eps < reach", manifold.reach)
    d = manifold.distance(x)
    return manifold.level_set_distance(x, a) < eps, (d > a - eps) & (d < a + eps)


def level_set_manifold(manifold: Manifold, a: float) -> Manifold:
    """Leaf manifold ``{d(., Gamma) = a}`` for catalog shapes with closed-form parallels."""
    if isinstance(manifold, Sphere):
        if a == 0:
            return manifold
        if a >= manifold.radius:
            return Sphere(manifold.center, manifold.radius + a)
        return LeafUnion([Sphere(manifold.center, manifold.radius + a),
                          Sphere(manifold.center, manifold.radius - a)], separation=2 * a)
    if isinstance(manifold, Hyperplane):
        if a == 0:
            return manifold
        return LeafUnion([Hyperplane(manifold.normal, manifold.offset + a),
                          Hyperplane(manifold.normal, manifold.offset - a)], separation=2 * a)
    raise UnsupportedShapeError(f"no closed-form level set for {manifold.tag}")


def make_manifold(spec: dict) -> Manifold:
    """Build a catalog manifold from a config mapping."""
    spec = dict(spec)
    tag = spec.pop("tag")
    if tag == "hyperplane":
        return Hyperplane(spec["normal"], float(spec.get("offset", 0.0)))
    if tag == "sphere":
        return Sphere(spec["center"], float(spec.get("radius", 1.0)))
    if tag == "graph":
        if "slope" in spec:
            return Graph.linear(spec["slope"])
        if "coefficient" in spec:
            return Graph.quadratic(spec["coefficient"], tuple(spec.get("box", (-5.0, 5.0))))
        raise GeometryError("graph needs 'slope' (linear) or 'coefficient' (quadratic)")
    if tag == "square-boundary":
        return SquareBoundary()
    if tag == "crossing-lines":
        return CrossingLines()
    raise GeometryError(f"unknown manifold tag {tag!r}")


MANIFOLD_CATALOG = {
    "hyperplane": "affine hyperplane {v.x = c}; reach infinite",
    "sphere": "sphere |x - c| = r; reach r",
    "graph": "graph x_N = g(x_bar) (linear or quadratic g); reach 1/sup|Hess g|",
    "square-boundary": "boundary of the unit square; piecewise, reach 0",
    "crossing-lines": "x2 = x1 union x2 = -x1; piecewise, reach 0",
}
