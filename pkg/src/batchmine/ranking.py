"""Teacher-similarity ranking and rank-slice construction.

For each query the corpus positives are ranked by teacher similarity; the
slice keeps the candidate indices at ranks [p, p+m) after filtering, where the
first p survivors are treated as likely false negatives and excluded. The full
n-by-n rank matrix is never materialized: scoring runs in query blocks and
only the top p+m survivors per row are selected, which is provably identical
to slicing a full sort.

Filters act on the rank list before the window is taken: the query's own
positive is always removed, and for classification tasks every candidate
sharing the query's label is removed. Each row's removed-or-top-p index set is
kept alongside the slice; the negative sampler uses it as the row's
false-negative exclusion set.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._binfile import BinReader, BinWriter
from .corpus import EmbeddingCorpus, normalize_rows
from .errors import FormatError, ValidationError

FORMAT_VERSION = 1

DEFAULT_M = 100
DEFAULT_P = {"retrieval": 30, "grounding": 30, "vqa": 70, "classification": 0, "other": 30}
DEFAULT_BLOCK_SIZE = 1024


@dataclass(frozen=True)
class RankConfig:
    """Ranking hyperparameters.

    p: count of top ranks excluded as false negatives (0 for classification,
       which filters by golden label instead).
    m: count of ranks retained after the offset.
    """

    p: int
    m: int = DEFAULT_M
    similarity: str = "cosine"
    block_size: int = DEFAULT_BLOCK_SIZE

    def __post_init__(self):
        if self.p < 0:
            raise ValidationError(f"p must be >= 0, got {self.p}")
        if self.m < 1:
            raise ValidationError(f"m must be >= 1, got {self.m}")
        if self.similarity not in ("cosine", "dot"):
            raise ValidationError(f"similarity must be cosine or dot, got {self.similarity!r}")
        if self.block_size < 1:
            raise ValidationError("block_size must be >= 1")

    @staticmethod
    def for_category(task_category: str, m: int = DEFAULT_M, **kw) -> "RankConfig":
        return RankConfig(p=DEFAULT_P[task_category], m=m, **kw)

    def validate_for(self, n: int) -> None:
        if self.p + self.m > n - 1:
            raise ValidationError(
                f"p + m = {self.p + self.m} exceeds n - 1 = {n - 1}: "
                "not enough candidates to fill the slice"
            )


@dataclass(frozen=True)
class RankSlice:
    """Per-query candidate indices at ranks [p, p+m), best first.

    excluded_indptr/excluded_indices form a CSR structure holding each row's
    false-negative set: the query's own index, filter-removed candidates, and
    the top-p survivors. excluded_counts tracks filter removals only.
    """

    task_id: str
    n: int
    m: int
    p: int
    candidates: np.ndarray
    excluded_indptr: np.ndarray
    excluded_indices: np.ndarray

    def __post_init__(self):
        for name in ("candidates", "excluded_indptr", "excluded_indices"):
            getattr(self, name).setflags(write=False)

    def row(self, i: int) -> np.ndarray:
        return self.candidates[i]

    def excluded_row(self, i: int) -> np.ndarray:
        return self.excluded_indices[self.excluded_indptr[i] : self.excluded_indptr[i + 1]]

    @property
    def excluded_counts(self) -> np.ndarray:
        """Per-row count of candidates removed by filters (self + golden label)."""
        return (np.diff(self.excluded_indptr) - self.p).astype(np.int32)


def score_block(
    corpus: EmbeddingCorpus, query_range: tuple[int, int], config: RankConfig
) -> np.ndarray:
    """Similarity rows sim(x_i, y_j) for queries i in [lo, hi), all positives j."""
    lo, hi = query_range
    if not (0 <= lo <= hi <= corpus.n):
        raise ValidationError(f"query_range {query_range} out of bounds for n={corpus.n}")
    q = corpus.queries[lo:hi]
    p = corpus.positives
    if config.similarity == "cosine":
        q = normalize_rows(q)
        p = normalize_rows(p)
    return q @ p.T


def top_select(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k highest scores, descending, ties broken by ascending index.

    Exactly matches a full stable sort, in O(n + k log k): threshold at the
    k-th largest value, keep everything strictly above it, and fill the
    remainder from the tied values in index order.
    """
    s = np.asarray(scores)
    n = s.size
    if not (0 <= k <= n):
        raise ValidationError(f"k={k} out of range for row of length {n}")
    if k == 0:
        return np.empty(0, dtype=np.int64)
    kth = np.partition(s, n - k)[n - k]
    above = np.flatnonzero(s > kth)
    tied = np.flatnonzero(s == kth)
    sel = np.concatenate([above, tied[: k - above.size]])
    order = np.lexsort((sel, -s[sel]))
    return sel[order]


def _label_groups(corpus: EmbeddingCorpus) -> dict[str, np.ndarray] | None:
    if corpus.task_category != "classification":
        return None
    groups: dict[str, list[int]] = {}
    for i, lab in enumerate(corpus.labels):
        groups.setdefault(lab, []).append(i)
    return {lab: np.asarray(idx, dtype=np.int64) for lab, idx in groups.items()}


def _block_top_k(scores: np.ndarray, k: int, row_offset: int) -> np.ndarray:
    """Exact top-k per row of a masked score block (-inf marks filtered entries).

    Vectorized argpartition handles the common case; rows whose k-th and
    (k+1)-th values tie fall back to the exact per-row path, so boundary ties
    resolve identically to a full stable sort. Rows with fewer than k finite
    survivors are an error.
    """
    b, n = scores.shape
    kk = min(k + 1, n)
    part = np.argpartition(scores, n - kk, axis=1)[:, n - kk :]
    part.sort(axis=1)
    vals = np.take_along_axis(scores, part, axis=1)
    order = np.argsort(-vals, axis=1, kind="stable")
    sorted_idx = np.take_along_axis(part, order, axis=1)
    sorted_vals = np.take_along_axis(vals, order, axis=1)

    exhausted = np.flatnonzero(np.isneginf(sorted_vals[:, k - 1]))
    if exhausted.size:
        row = row_offset + int(exhausted[0])
        survivors = int(np.isfinite(scores[exhausted[0]]).sum())
        raise ValidationError(
            f"row {row}: only {survivors} candidates survive filtering, need {k} (p + m)"
        )

    top = sorted_idx[:, :k].astype(np.int64)
    if kk > k:
        ambiguous = np.flatnonzero(sorted_vals[:, k - 1] == sorted_vals[:, k])
        for r in ambiguous:
            top[r] = top_select(scores[r], k)
    return top


def build_rank_slice(corpus: EmbeddingCorpus, config: RankConfig) -> RankSlice:
    """Rank, filter, and slice: rows hold the candidate indices at [p, p+m)."""
    config.validate_for(corpus.n)
    n, p, m = corpus.n, config.p, config.m
    k = p + m
    groups = _label_groups(corpus)

    q_all = corpus.queries
    p_all = corpus.positives
    if config.similarity == "cosine":
        q_all = normalize_rows(q_all)
        p_all = normalize_rows(p_all)
    pos_t = np.ascontiguousarray(p_all.T)

    candidates = np.empty((n, m), dtype=np.int32)
    top_p = np.empty((n, p), dtype=np.int32)
    buf = np.empty((min(config.block_size, n), n), dtype=q_all.dtype)

    for lo in range(0, n, config.block_size):
        hi = min(lo + config.block_size, n)
        scores = np.matmul(q_all[lo:hi], pos_t, out=buf[: hi - lo])
        rows = np.arange(hi - lo)
        scores[rows, lo + rows] = -np.inf
        if groups is not None:
            block_rows: dict[str, list[int]] = {}
            for r in range(lo, hi):
                block_rows.setdefault(corpus.labels[r], []).append(r - lo)
            for lab, rws in block_rows.items():
                scores[np.ix_(rws, groups[lab])] = -np.inf
        top = _block_top_k(scores, k, lo)
        top_p[lo:hi] = top[:, :p]
        candidates[lo:hi] = top[:, p:]

    # Per-row false-negative sets: self + filter removals + top-p survivors.
    if groups is None:
        rows = np.concatenate([np.arange(n, dtype=np.int32)[:, None], top_p], axis=1)
        rows.sort(axis=1)
        excluded = rows.reshape(-1).copy()
        indptr = np.arange(n + 1, dtype=np.int64) * (1 + p)
    else:
        parts = []
        indptr = np.zeros(n + 1, dtype=np.int64)
        for i in range(n):
            row = np.union1d(groups[corpus.labels[i]], top_p[i]).astype(np.int32)
            parts.append(row)
            indptr[i + 1] = indptr[i] + row.size
        excluded = np.concatenate(parts) if parts else np.empty(0, dtype=np.int32)

    return RankSlice(
        task_id=corpus.task_id,
        n=n,
        m=m,
        p=p,
        candidates=candidates,
        excluded_indptr=indptr,
        excluded_indices=excluded,
    )


def save_slice(slc: RankSlice, path: str | Path) -> int:
    header = {
        "format_version": FORMAT_VERSION,
        "task_id": slc.task_id,
        "n": slc.n,
        "m": slc.m,
        "p": slc.p,
    }
    w = BinWriter(header)
    w.add_array(slc.candidates, "<u4")
    w.add_array(slc.excluded_indptr, "<u8")
    w.add_array(slc.excluded_indices, "<u4")
    return w.write(path)


def load_slice(path: str | Path) -> RankSlice:
    r = BinReader(path)
    if r.field("format_version") != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format_version {r.header['format_version']}")
    n, m, p = int(r.field("n")), int(r.field("m")), int(r.field("p"))
    candidates = r.read_array(n * m, "<u4", "candidate indices").reshape(n, m)
    indptr = r.read_array(n + 1, "<u8", "exclusion offsets")
    excluded = r.read_array(int(indptr[-1]), "<u4", "exclusion indices")
    r.done()
    return RankSlice(
        task_id=str(r.field("task_id")),
        n=n,
        m=m,
        p=p,
        candidates=candidates.astype(np.int32),
        excluded_indptr=indptr.astype(np.int64),
        excluded_indices=excluded.astype(np.int32),
    )
