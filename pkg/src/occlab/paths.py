"""Discretized continuous semimartingales in R^N.

Paths are produced by explicit Euler-Maruyama on a uniform grid.  Every path
draws its Gaussian increments from its own counter-based generator (Philox),
keyed by ``(seed, path_index)``, so a path is reproducible regardless of how
the collection was batched or scheduled.

Models whose drift and diffusion are constant take a cumulative-sum shortcut,
which is exactly the Euler scheme for those coefficients.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Optional, Sequence

import numpy as np

Array = np.ndarray

MODEL_TAGS = (
    "standard-BM",
    "drifted-BM",
    "linear-SDE",
    "singular-radial-drift",
    "user-coefficient",
)

# ~32 MB of float64 per batch of states.
_BATCH_ELEMENTS = 1 << 22


@dataclass(frozen=True)
class TimeGrid:
    horizon: float
    n_steps: int

    def __post_init__(self):
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError(f"n_steps must be a positive integer, got {self.n_steps!r}")
        if not (np.isfinite(self.horizon) and self.horizon > 0):
            raise ValueError(f"horizon must be positive and finite, got {self.horizon!r}")

    @classmethod
    def from_dt(cls, horizon: float, dt: float) -> "TimeGrid":
        n = int(round(horizon / dt))
        if n < 1 or abs(n * dt - horizon) > 1e-9 * horizon:
            raise ValueError(f"dt={dt} does not divide horizon={horizon}")
        return cls(horizon, n)

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @property
    def times(self) -> Array:
        t = np.arange(self.n_steps + 1) * self.dt
        t[-1] = self.horizon
        return t


@dataclass(frozen=True, eq=False)
class SdeModel:
    """``dX = b(t, X) dt + sigma(t, X) dW`` started at ``x0``.

    ``drift(t, x)`` maps ``(P, N) -> (P, N)`` and ``diffusion(t, x)`` maps
    ``(P, N) -> (P, N, N)``.  When the coefficients are constant,
    ``drift_const``/``sigma_const`` hold them and the callables are unused.
    """

    dim: int
    x0: Array
    tag: str = "user-coefficient"
    drift: Optional[Callable[[float, Array], Array]] = None
    diffusion: Optional[Callable[[float, Array], Array]] = None
    drift_const: Optional[Array] = None
    sigma_const: Optional[Array] = None
    clamp_drift: bool = False
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.tag not in MODEL_TAGS:
            raise ValueError(f"unknown model tag {self.tag!r}")
        x0 = np.asarray(self.x0, dtype=float).reshape(-1)
        if x0.shape != (self.dim,):
            raise ValueError(f"x0 must have {self.dim} components, got {x0.shape}")
        object.__setattr__(self, "x0", x0)

    @property
    def constant_coefficients(self) -> bool:
        return self.drift_const is not None and self.sigma_const is not None

    def b(self, t: float, x: Array) -> Array:
        x = np.atleast_2d(x)
        if self.drift_const is not None:
            return np.broadcast_to(self.drift_const, x.shape)
        return np.asarray(self.drift(t, x), dtype=float)

    def sigma(self, t: float, x: Array) -> Array:
        x = np.atleast_2d(x)
        if self.sigma_const is not None:
            return np.broadcast_to(self.sigma_const, x.shape[:-1] + (self.dim, self.dim))
        return np.asarray(self.diffusion(t, x), dtype=float)

    def g(self, t: float, x: Array) -> Array:
        """Quadratic-variation density ``sigma sigma^T`` at ``(t, x)``."""
        s = self.sigma(t, x)
        return s @ np.swapaxes(s, -1, -2)

    def describe(self) -> dict:
        return {"tag": self.tag, "dim": self.dim, "x0": self.x0.tolist(), **self.params}


def standard_bm(dim: int, x0: Optional[Sequence[float]] = None) -> SdeModel:
    x0 = np.zeros(dim) if x0 is None else x0
    return SdeModel(dim, x0, "standard-BM", drift_const=np.zeros(dim),
                    sigma_const=np.eye(dim))


def drifted_bm(mu, sigma, x0) -> SdeModel:
    """Constant drift ``mu`` and constant diffusion matrix (or scalar) ``sigma``."""
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    dim = x0.size
    mu = np.broadcast_to(np.asarray(mu, dtype=float), (dim,)).copy()
    sigma = np.asarray(sigma, dtype=float)
    sigma = sigma * np.eye(dim) if sigma.ndim == 0 else sigma.reshape(dim, dim)
    return SdeModel(dim, x0, "drifted-BM", drift_const=mu, sigma_const=sigma,
                    params={"mu": mu.tolist(), "sigma": sigma.tolist()})


def linear_sde(matrix, sigma, x0) -> SdeModel:
    """``dX = M X dt + sigma dW`` with constant ``sigma``."""
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    dim = x0.size
    m = np.asarray(matrix, dtype=float).reshape(dim, dim)
    sigma = np.asarray(sigma, dtype=float)
    sigma = sigma * np.eye(dim) if sigma.ndim == 0 else sigma.reshape(dim, dim)
    return SdeModel(dim, x0, "linear-SDE", drift=lambda t, x: x @ m.T, sigma_const=sigma,
                    params={"matrix": m.tolist(), "sigma": sigma.tolist()})


def singular_drift(x: Array) -> Array:
    """``b(x) = -x / (2|x|^2)`` for ``x != 0`` and ``b(0) = 0``."""
    x = np.asarray(x, dtype=float)
    r2 = np.sum(x * x, axis=-1, keepdims=True)
    out = np.zeros_like(x)
    nz = r2[..., 0] > 0
    out[nz] = -x[nz] / (2.0 * r2[nz])
    return out


def singular_radial_drift(dim: int, x0) -> SdeModel:
    return SdeModel(dim, x0, "singular-radial-drift", drift=lambda t, x: singular_drift(x),
                    sigma_const=np.eye(dim), clamp_drift=True)


def user_coefficient(dim: int, x0, drift, diffusion) -> SdeModel:
    return SdeModel(dim, x0, "user-coefficient", drift=drift, diffusion=diffusion)


def path_rng(seed: int, index: int) -> np.random.Generator:
    """Counter-based generator for path ``index`` under top-level ``seed``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(index),))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(eq=False)
class SamplePath:
    grid: TimeGrid
    states: Array  # (n_steps + 1, N)
    seed: int
    index: int
    exploded: bool = False
    first_bad: int = -1
    clamp_events: int = 0
    noise: Optional[Array] = None  # (n_steps, N) Brownian increments

    @property
    def dim(self) -> int:
        return self.states.shape[-1]


@dataclass(eq=False)
class PathBatch:
    """A contiguous block of paths stored as one ``(P, n_steps + 1, N)`` array."""

    grid: TimeGrid
    states: Array
    seed: int
    indices: Array
    exploded: Array
    first_bad: Array
    clamp_events: Array
    noise: Optional[Array] = None

    def __len__(self) -> int:
        return self.states.shape[0]

    def __iter__(self) -> Iterator[SamplePath]:
        for p in range(len(self)):
            yield self.path(p)

    def __getitem__(self, p: int) -> SamplePath:
        return self.path(p)

    @property
    def dim(self) -> int:
        return self.states.shape[-1]

    @property
    def increments(self) -> Array:
        return np.diff(self.states, axis=1)

    @property
    def left_states(self) -> Array:
        """States at the left endpoint of each step, ``(P, n_steps, N)``."""
        return self.states[:, :-1, :]

    def path(self, p: int) -> SamplePath:
        return SamplePath(self.grid, self.states[p], self.seed, int(self.indices[p]),
                          bool(self.exploded[p]), int(self.first_bad[p]),
                          int(self.clamp_events[p]),
                          None if self.noise is None else self.noise[p])

    @classmethod
    def from_paths(cls, paths: Sequence[SamplePath]) -> "PathBatch":
        paths = list(paths)
        noise = None
        if all(p.noise is not None for p in paths):
            noise = np.stack([p.noise for p in paths])
        return cls(paths[0].grid, np.stack([p.states for p in paths]), paths[0].seed,
                   np.array([p.index for p in paths]),
                   np.array([p.exploded for p in paths]),
                   np.array([p.first_bad for p in paths]),
                   np.array([p.clamp_events for p in paths]), noise)

    @classmethod
    def concatenate(cls, batches: Sequence["PathBatch"]) -> "PathBatch":
        noise = None
        if all(b.noise is not None for b in batches):
            noise = np.concatenate([b.noise for b in batches])
        return cls(batches[0].grid, np.concatenate([b.states for b in batches]),
                   batches[0].seed,
                   np.concatenate([b.indices for b in batches]),
                   np.concatenate([b.exploded for b in batches]),
                   np.concatenate([b.first_bad for b in batches]),
                   np.concatenate([b.clamp_events for b in batches]), noise)


def _brownian_increments(grid: TimeGrid, dim: int, seed: int, indices) -> Array:
    sq = np.sqrt(grid.dt)
    out = np.empty((len(indices), grid.n_steps, dim))
    for row, i in enumerate(indices):
        path_rng(seed, i).standard_normal((grid.n_steps, dim), out=out[row])
    out *= sq
    return out


def _simulate_block(model: SdeModel, grid: TimeGrid, seed: int, indices,
                    keep_noise: bool) -> PathBatch:
    indices = np.asarray(indices, dtype=np.int64)
    P, n, N = len(indices), grid.n_steps, model.dim
    dW = _brownian_increments(grid, N, seed, indices)
    clamps = np.zeros(P, dtype=np.int64)
    states = np.empty((P, n + 1, N))
    states[:, 0, :] = model.x0
    dt = grid.dt
    with np.errstate(over="ignore", invalid="ignore"):
        if model.constant_coefficients:
            if np.array_equal(model.sigma_const, np.eye(N)):
                steps = dW.copy() if keep_noise else dW
            else:
                steps = dW @ model.sigma_const.T
            if np.any(model.drift_const):
                steps += model.drift_const * dt
            np.cumsum(steps, axis=1, out=states[:, 1:, :])
            states[:, 1:, :] += model.x0
        else:
            cap = dt ** -0.5
            t = grid.times
            noise = dW @ model.sigma_const.T if model.sigma_const is not None else dW
            x = states[:, 0, :].copy()
            for k in range(n):
                b = model.b(t[k], x)
                if model.clamp_drift:
                    nb = np.linalg.norm(b, axis=-1)
                    hit = nb > cap
                    if hit.any():
                        clamps += hit
                        b = np.where(hit[:, None], b * (cap / np.where(hit, nb, 1.0))[:, None], b)
                if model.sigma_const is not None:
                    x = x + b * dt + noise[:, k, :]
                else:
                    x = x + b * dt + np.einsum("pij,pj->pi", model.sigma(t[k], x), dW[:, k, :])
                states[:, k + 1, :] = x
    bad = ~np.isfinite(states).all(axis=-1)
    exploded = bad.any(axis=1)
    first_bad = np.where(exploded, bad.argmax(axis=1), -1)
    for p in np.flatnonzero(exploded):
        states[p, first_bad[p]:, :] = np.nan
    return PathBatch(grid, states, int(seed), indices, exploded, first_bad, clamps,
                     dW if keep_noise else None)


def default_batch_size(grid: TimeGrid, dim: int, stepwise: bool = False) -> int:
    # The step loop pays per-iteration overhead, so it gets wider batches.
    budget = _BATCH_ELEMENTS * (4 if stepwise else 1)
    return max(1, budget // ((grid.n_steps + 1) * dim))


def iter_path_batches(model: SdeModel, grid: TimeGrid, n_paths: int, seed: int,
                      batch_size: Optional[int] = None, keep_noise: bool = False,
                      jobs: int = 1, start: int = 0) -> Iterator[PathBatch]:
    """Yield batches of paths ``start .. start + n_paths - 1`` in ascending index order."""
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    _check_model(model)
    bs = batch_size or default_batch_size(grid, model.dim, not model.constant_coefficients)
    blocks = [np.arange(lo, min(lo + bs, start + n_paths))
              for lo in range(start, start + n_paths, bs)]
    if jobs <= 1:
        for idx in blocks:
            yield _simulate_block(model, grid, seed, idx, keep_noise)
        return
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        # map() preserves submission order, so folds stay deterministic.
        yield from pool.map(lambda idx: _simulate_block(model, grid, seed, idx, keep_noise),
                            blocks)


def simulate_paths(model: SdeModel, grid: TimeGrid, n_paths: int, seed: int,
                   keep_noise: bool = False, jobs: int = 1) -> PathBatch:
    """Simulate ``n_paths`` independent paths and keep them all in memory."""
    return PathBatch.concatenate(list(iter_path_batches(model, grid, n_paths, seed,
                                                        keep_noise=keep_noise, jobs=jobs)))


def _check_model(model: SdeModel) -> None:
    x = model.x0[None, :]
    b = model.b(0.0, x)
    s = model.sigma(0.0, x)
    if not (np.isfinite(b).all() and np.isfinite(s).all()):
        raise ValueError("drift or diffusion not evaluable at x0")


def as_batches(paths) -> Iterable[PathBatch]:
    """Accept a PathBatch, a SamplePath, or an iterable of either."""
    if isinstance(paths, PathBatch):
        return [paths]
    if isinstance(paths, SamplePath):
        return [PathBatch.from_paths([paths])]
    return (_coerce(b) for b in paths)


def _coerce(b) -> PathBatch:
    if isinstance(b, PathBatch):
        return b
    if isinstance(b, SamplePath):
        return PathBatch.from_paths([b])
    raise TypeError(f"expected PathBatch or SamplePath, got {type(b).__name__}")


@dataclass(frozen=True, eq=False)
class QuadraticVariationModel:
    """Per-step quadratic covariation increments.

    ``analytic`` uses ``g(t_k, X_{t_k}) dt`` from the model coefficients;
    ``realized`` uses the outer products ``dX_k dX_k^T`` of the path itself.
    """

    mode: str
    model: Optional[SdeModel] = None

    def __post_init__(self):
        if self.mode not in ("analytic", "realized"):
            raise ValueError(f"mode must be 'analytic' or 'realized', got {self.mode!r}")
        if self.mode == "analytic" and self.model is None:
            raise ValueError("analytic mode needs the SDE model")

    def _g_steps(self, batch: PathBatch) -> Array:
        m = self.model
        if m.sigma_const is not None:
            return m.sigma_const @ m.sigma_const.T
        x = batch.left_states
        t = batch.grid.times[:-1]
        P, n, N = x.shape
        out = np.empty((P, n, N, N))
        for k in range(n):
            out[:, k] = m.g(t[k], x[:, k])
        return out

    def matrix_increments(self, batch: PathBatch) -> Array:
        """``(P, n, N, N)`` increments of ``<X^i, X^j>`` (broadcast if constant)."""
        if self.mode == "realized":
            d = batch.increments
            return d[..., :, None] * d[..., None, :]
        g = self._g_steps(batch) * batch.grid.dt
        if g.ndim == 2:
            P, n = len(batch), batch.grid.n_steps
            return np.broadcast_to(g, (P, n) + g.shape)
        return g

    def component(self, batch: PathBatch, i: int, j: Optional[int] = None) -> Array:
        """``(P, n)`` increments of ``<X^i, X^j>`` (``j`` defaults to ``i``)."""
        j = i if j is None else j
        N = batch.dim
        if not (0 <= i < N and 0 <= j < N):
            raise IndexError(f"component pair ({i}, {j}) out of range for N={N}")
        P, n = len(batch), batch.grid.n_steps
        if self.mode == "realized":
            d = batch.increments
            return d[..., i] * d[..., j]
        g = self._g_steps(batch)
        if g.ndim == 2:
            return np.full((P, n), g[i, j] * batch.grid.dt)
        return g[..., i, j] * batch.grid.dt

    def quadratic_form(self, batch: PathBatch, vec: Array) -> Array:
        """Increments of ``sum_ij v^i v^j d<X^i, X^j>`` for per-step vectors ``vec`` ``(P, n, N)``."""
        if self.mode == "realized":
            return np.einsum("pki,pki->pk", vec, batch.increments) ** 2
        g = self._g_steps(batch)
        dt = batch.grid.dt
        if g.ndim == 2:
            return np.einsum("pki,ij,pkj->pk", vec, g, vec) * dt
        return np.einsum("pki,pkij,pkj->pk", vec, g, vec) * dt


def _check_step(path: SamplePath, k: int) -> None:
    if not 0 <= k < path.grid.n_steps:
        raise IndexError(f"step {k} out of range [0, {path.grid.n_steps})")


def quadratic_covariation_increment(qv: QuadraticVariationModel, path: SamplePath,
                                    k: int, pair: tuple[int, int]) -> float:
    """Increment of ``<X^i, X^j>`` over step ``k`` (0-based components)."""
    _check_step(path, k)
    i, j = pair
    N = path.dim
    if not (0 <= i < N and 0 <= j < N):
        raise IndexError(f"component pair {pair} out of range for N={N}")
    if qv.mode == "realized":
        d = path.states[k + 1] - path.states[k]
        return float(d[i] * d[j])
    g = qv.model.g(path.grid.times[k], path.states[k][None, :])[0]
    return float(g[i, j] * path.grid.dt)


def eta_weights(q: Array) -> Array:
    """``sum_i q_ii + sum_ij (q_ii + q_jj + 2 q_ij)`` for covariation increments ``q[..., N, N]``."""
    diag = np.einsum("...ii->...i", q)
    N = q.shape[-1]
    tr = diag.sum(-1)
    return tr + 2 * N * tr + 2 * q.sum(axis=(-1, -2))


def eta_measure_increment(qv: QuadraticVariationModel, path: SamplePath, k: int) -> float:
    """Mass of the control measure ``eta_X`` on step ``k``."""
    _check_step(path, k)
    N = path.dim
    q = np.array([[quadratic_covariation_increment(qv, path, k, (i, j)) for j in range(N)]
                  for i in range(N)])
    return float(eta_weights(q))


def eta_increments(qv: QuadraticVariationModel, batch: PathBatch) -> Array:
    """Vectorised ``eta_X`` increments, ``(P, n)``."""
    return eta_weights(qv.matrix_increments(batch))
