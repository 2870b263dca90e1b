"""Unified per-batch hard-negative sampling.

One distribution serves the whole batch: candidate j is weighted by the
number of batch members whose rank-slice row contains j, since an extra hard
negative is contrasted against every query in the batch. Batch members and
any index in a member's false-negative set never enter the support.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .ranking import RankSlice


@dataclass(frozen=True)
class UnifiedDistribution:
    batch_id: tuple[int, int] | None
    support: np.ndarray
    weights: np.ndarray
    total: int

    def __post_init__(self):
        self.support.setflags(write=False)
        self.weights.setflags(write=False)

    @property
    def empty(self) -> bool:
        return self.support.size == 0

    @property
    def probabilities(self) -> np.ndarray:
        return self.weights / self.total


@dataclass(frozen=True)
class NegativeSampleSet:
    batch_id: tuple[int, int] | None
    negatives: np.ndarray
    shortfall: bool

    def __post_init__(self):
        self.negatives.setflags(write=False)


def build_distribution(
    slc: RankSlice, batch: np.ndarray, batch_id: tuple[int, int] | None = None
) -> UnifiedDistribution:
    """Tally how often each candidate appears in the batch members' slice rows.

    Excluded from the support: the batch members themselves and every index in
    any member's false-negative set (its top-p ranks plus filtered indices).
    An empty support is legal and simply yields an empty distribution.
    """
    batch = np.asarray(batch, dtype=np.int64)
    if batch.size == 0:
        raise ValidationError("batch must be non-empty")
    if batch.min() < 0 or batch.max() >= slc.n:
        raise ValidationError(f"batch index out of range for n = {slc.n}")
    if np.unique(batch).size != batch.size:
        raise ValidationError("batch indices must be distinct")

    counts = np.bincount(slc.candidates[batch].reshape(-1), minlength=slc.n)
    counts[batch] = 0
    for i in batch:
        counts[slc.excluded_row(int(i))] = 0
    support = np.flatnonzero(counts).astype(np.int64)
    weights = counts[support].astype(np.int64)
    return UnifiedDistribution(
        batch_id=batch_id,
        support=support,
        weights=weights,
        total=int(weights.sum()),
    )


def sample_negatives(dist: UnifiedDistribution, h: int, seed: int) -> NegativeSampleSet:
    """Draw h distinct negatives without replacement, proportional to weights.

    Iterated draw-and-remove keeps each draw exactly proportional to the
    remaining weights. If the support is smaller than h, returns all of it and
    flags the shortfall.
    """
    if h < 0:
        raise ValidationError("h must be >= 0")
    rng = np.random.default_rng(seed)
    draws = min(h, dist.support.size)
    alive = np.ones(dist.support.size, dtype=bool)
    weights = dist.weights.astype(np.float64)
    picked = np.empty(draws, dtype=np.int64)
    for t in range(draws):
        w = np.where(alive, weights, 0.0)
        w /= w.sum()
        j = rng.choice(dist.support.size, p=w)
        picked[t] = dist.support[j]
        alive[j] = False
    return NegativeSampleSet(
        batch_id=dist.batch_id,
        negatives=picked,
        shortfall=dist.support.size < h,
    )
