"""Shared test fixtures and independent oracles.

Every oracle here deliberately takes the dumb-but-obviously-correct path
(full sorts, pairwise set probing, exhaustive enumeration, extended-precision
sums) so the optimized implementations have something honest to be checked
against.
"""

from __future__ import annotations

import itertools

import mpmath
import numpy as np

from batchmine.corpus import EmbeddingCorpus
from batchmine.graph import PreferenceGraph, _csr_from_edges
from batchmine.ranking import RankConfig, RankSlice, score_block


def random_corpus(
    n: int,
    d: int,
    seed: int = 0,
    task_category: str = "retrieval",
    n_labels: int = 0,
    task_id: str = "test",
) -> EmbeddingCorpus:
    rng = np.random.default_rng(seed)
    labels = None
    if task_category == "classification":
        labels = tuple(f"class{int(x)}" for x in rng.integers(0, n_labels, size=n))
    return EmbeddingCorpus(
        task_id=task_id,
        queries=rng.standard_normal((n, d)).astype(np.float32),
        positives=rng.standard_normal((n, d)).astype(np.float32),
        task_category=task_category,
        labels=labels,
    )


def full_sort_slice_oracle(corpus: EmbeddingCorpus, config: RankConfig):
    """Rank slice via a full O(n^2 log n) stable sort per row.

    Returns (candidates, exclusion_sets): the [p, p+m) window of the filtered
    descending sort (ties by ascending index) and, per row, the set of all
    filtered indices plus the top-p survivors.
    """
    n = corpus.n
    scores = score_block(corpus, (0, n), config)
    candidates = np.empty((n, config.m), dtype=np.int64)
    exclusions = []
    for i in range(n):
        row = scores[i].copy()
        banned = {i}
        if corpus.task_category == "classification":
            banned |= {j for j in range(n) if corpus.labels[j] == corpus.labels[i]}
        order = np.lexsort((np.arange(n), -row))
        order = [j for j in order if j not in banned]
        candidates[i] = order[config.p : config.p + config.m]
        exclusions.append(banned | set(order[: config.p]))
    return candidates, exclusions


def mutual_edges_oracle(slc: RankSlice) -> set[tuple[int, int]]:
    """Pairwise reciprocity probe over row sets."""
    rows = [set(slc.candidates[i].tolist()) for i in range(slc.n)]
    edges = set()
    for i in range(slc.n):
        for j in rows[i]:
            if i in rows[j]:
                edges.add((min(i, j), max(i, j)))
    return edges


def graph_from_edges(n: int, edges: list[tuple[int, int]]) -> PreferenceGraph:
    if not edges:
        return _csr_from_edges(
            n, np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64), None
        )
    src = np.array([min(e) for e in edges], dtype=np.int64)
    dst = np.array([max(e) for e in edges], dtype=np.int64)
    return _csr_from_edges(n, src, dst, None)


def random_graph(n: int, n_edges: int, seed: int = 0) -> PreferenceGraph:
    """Uniform random simple undirected graph with exactly n_edges edges."""
    rng = np.random.default_rng(seed)
    seen = set()
    while len(seen) < n_edges:
        u, v = rng.integers(0, n, size=2)
        if u != v:
            seen.add((min(int(u), int(v)), max(int(u), int(v))))
    return graph_from_edges(n, sorted(seen))


def planted_graph(blocks: int, size: int, p_in: float, p_out: float, seed: int = 0):
    """Stochastic block model graph plus its ground-truth labels."""
    rng = np.random.default_rng(seed)
    n = blocks * size
    labels = np.repeat(np.arange(blocks), size)
    edges = []
    for i in range(n):
        for j in range(i + 1, n):
            p = p_in if labels[i] == labels[j] else p_out
            if rng.random() < p:
                edges.append((i, j))
    return graph_from_edges(n, edges), labels


def cut_of(graph: PreferenceGraph, assignment: np.ndarray) -> int:
    src = np.repeat(np.arange(graph.n, dtype=np.int64), np.diff(graph.indptr))
    return int((assignment[src] != assignment[graph.indices]).sum()) // 2


def exhaustive_min_cut(graph: PreferenceGraph, size_a: int) -> int:
    """Minimum edge cut over all bipartitions with exactly size_a vertices on
    one side, by explicit enumeration."""
    best = None
    undirected = []
    src = np.repeat(np.arange(graph.n, dtype=np.int64), np.diff(graph.indptr))
    for u, v in zip(src, graph.indices):
        if u < v:
            undirected.append((int(u), int(v)))
    for combo in itertools.combinations(range(graph.n), size_a):
        in_a = set(combo)
        cut = sum(1 for u, v in undirected if (u in in_a) != (v in in_a))
        if best is None or cut < best:
            best = cut
    return best


def mp_global_loss(corpus: EmbeddingCorpus, tau: float, dps: int = 50) -> float:
    """Direct unstabilized InfoNCE evaluation at dps decimal digits."""
    with mpmath.workdps(dps):
        s = corpus.queries.astype(np.float64) @ corpus.positives.astype(np.float64).T
        total = mpmath.mpf(0)
        for i in range(corpus.n):
            den = mpmath.fsum(mpmath.e ** (mpmath.mpf(float(x)) / tau) for x in s[i])
            num = mpmath.e ** (mpmath.mpf(float(s[i, i])) / tau)
            total += -mpmath.log(num / den)
        return float(total)


def mp_batch_loss(corpus, batches, tau: float, dps: int = 50) -> float:
    with mpmath.workdps(dps):
        s = corpus.queries.astype(np.float64) @ corpus.positives.astype(np.float64).T
        total = mpmath.mpf(0)
        for b in batches:
            dens = list(b.members)
            if b.hard_negatives is not None:
                dens += list(b.hard_negatives)
            for i in b.members:
                den = mpmath.fsum(mpmath.e ** (mpmath.mpf(float(s[i, j])) / tau) for j in dens)
                num = mpmath.e ** (mpmath.mpf(float(s[i, i])) / tau)
                total += -mpmath.log(num / den)
        return float(total)


def mp_bound_rhs(corpus, batches, K: int, tau: float, dps: int = 50) -> float:
    """Direct evaluation of sum_i log((N/K) H_i / H_Bi) at high precision."""
    with mpmath.workdps(dps):
        s = corpus.queries.astype(np.float64) @ corpus.positives.astype(np.float64).T
        n = corpus.n
        total = mpmath.mpf(0)
        for b in batches:
            dens = list(b.members)
            if b.hard_negatives is not None:
                dens += list(b.hard_negatives)
            for i in b.members:
                row = sorted((mpmath.e ** (mpmath.mpf(float(x)) / tau) for x in s[i]), reverse=True)
                h_global = mpmath.fsum(row[:K])
                brow = sorted(
                    (mpmath.e ** (mpmath.mpf(float(s[i, j])) / tau) for j in dens), reverse=True
            )
                h_batch = mpmath.fsum(brow[:K])
                total += mpmath.log(mpmath.mpf(n) / K * h_global / h_batch)
        return float(total)
