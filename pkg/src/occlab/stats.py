"""Streaming folds over path batches and cross-path summary statistics."""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np

from .paths import PathBatch, as_batches

Array = np.ndarray


class Accumulator:
    """Consumes path batches in ascending index order, then produces a result."""

    def update(self, batch: PathBatch) -> None:
        raise NotImplementedError

    def finish(self):
        raise NotImplementedError


def fold(paths, accumulators: Sequence[Accumulator]) -> list:
    """Single pass over ``paths`` feeding every accumulator, batch by batch."""
    for batch in as_batches(paths):
        for acc in accumulators:
            acc.update(batch)
    return [acc.finish() for acc in accumulators]


def stack_rows(chunks: Iterable[Array], width: int | None = None) -> Array:
    chunks = list(chunks)
    if not chunks:
        return np.zeros((0,) if width is None else (0, width))
    return np.concatenate(chunks, axis=0)


def mean_se(values: Array, axis: int = 0) -> tuple[Array, Array]:
    """Sample mean and its standard error along ``axis``."""
    values = np.asarray(values, dtype=float)
    n = values.shape[axis]
    mean = values.mean(axis=axis)
    if n < 2:
        return mean, np.full_like(mean, np.nan)
    return mean, values.std(axis=axis, ddof=1) / math.sqrt(n)


def pooled_se(*se: float) -> float:
    return float(math.sqrt(sum(float(s) ** 2 for s in se)))


def ratio_se(num: Array, den: Array) -> tuple[float, float]:
    """Ratio of means and its delta-method standard error from paired per-path values."""
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    n = num.size
    mn, md = num.mean(), den.mean()
    if md == 0:
        return math.nan, math.nan
    r = mn / md
    if n < 2:
        return float(r), math.nan
    resid = num - r * den
    return float(r), float(resid.std(ddof=1) / (math.sqrt(n) * abs(md)))
