"""Mutual-preference graph construction.

The rank slice is the adjacency list of a sparse directed graph; keeping only
the reciprocated arcs yields the undirected graph whose edges mark pairs that
prefer each other as in-batch negatives. Isolated vertices stay in the vertex
set so the partitioner can still place every example in a batch.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from ._binfile import BinReader, BinWriter
from .errors import FormatError, ValidationError
from .ranking import RankSlice

FORMAT_VERSION = 1


@dataclass(frozen=True)
class PreferenceGraph:
    """Undirected graph in CSR form; each edge appears in both adjacency rows.

    Weights, when present, are per-entry and symmetric: the entry for (i, j)
    in row i equals the entry for (i, j) in row j.
    """

    n: int
    indptr: np.ndarray
    indices: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        self.indptr.setflags(write=False)
        self.indices.setflags(write=False)
        if self.weights is not None:
            self.weights.setflags(write=False)

    @property
    def edge_count(self) -> int:
        return self.indices.size // 2

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    @property
    def isolated(self) -> np.ndarray:
        return np.flatnonzero(self.degrees == 0)

    def neighbors(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v] : self.indptr[v + 1]]


def _csr_from_edges(
    n: int, src: np.ndarray, dst: np.ndarray, w: np.ndarray | None
) -> PreferenceGraph:
    """Build a sorted CSR from an undirected edge list (each edge once)."""
    all_src = np.concatenate([src, dst])
    all_dst = np.concatenate([dst, src])
    order = np.lexsort((all_dst, all_src))
    indices = all_dst[order].astype(np.int32)
    counts = np.bincount(all_src, minlength=n)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    weights = None
    if w is not None:
        weights = np.concatenate([w, w])[order].astype(np.float64)
    return PreferenceGraph(n=n, indptr=indptr, indices=indices, weights=weights)


def build_graph(slc: RankSlice, weighted: bool = False) -> PreferenceGraph:
    """Keep exactly the mutual pairs of the slice as undirected edges.

    Mutuality is decided on the whole rows: (i, j) is an edge iff j appears in
    row i and i appears in row j. With the optional weighting, an edge scores
    2m - rank_i(j) - rank_j(i) over the 0-based in-row ranks, so strongly
    mutual pairs weigh more.
    """
    n, m = slc.n, slc.m
    rows = np.repeat(np.arange(n, dtype=np.int64), m)
    cols = slc.candidates.reshape(-1).astype(np.int64)
    keys = rows * n + cols
    order = np.argsort(keys)
    sorted_keys = keys[order]
    rev = cols * n + rows
    pos = np.searchsorted(sorted_keys, rev)
    pos_clip = np.minimum(pos, sorted_keys.size - 1)
    mutual = sorted_keys[pos_clip] == rev
    keep = mutual & (rows < cols)

    src = rows[keep]
    dst = cols[keep]
    w = None
    if weighted:
        ranks = np.tile(np.arange(m, dtype=np.int64), n)
        ranks_sorted = ranks[order]
        w = (2 * m - ranks[keep] - ranks_sorted[pos[keep]]).astype(np.float64)
    return _csr_from_edges(n, src, dst, w)


@dataclass(frozen=True)
class GraphStats:
    n: int
    edge_count: int
    isolated_count: int
    component_count: int
    degree_histogram: np.ndarray
    mean_degree: float
    max_degree: int


def graph_stats(graph: PreferenceGraph) -> GraphStats:
    """Exact degree/connectivity statistics for mining-quality reporting."""
    deg = graph.degrees
    if graph.n == 0:
        raise ValidationError("empty graph")
    mat = csr_matrix(
        (np.ones(graph.indices.size, dtype=np.int8), graph.indices, graph.indptr),
        shape=(graph.n, graph.n),
    )
    ncomp = connected_components(mat, directed=False, return_labels=False)
    return GraphStats(
        n=graph.n,
        edge_count=graph.edge_count,
        isolated_count=int((deg == 0).sum()),
        component_count=int(ncomp),
        degree_histogram=np.bincount(deg),
        mean_degree=float(deg.mean()),
        max_degree=int(deg.max()),
    )


def save_graph(graph: PreferenceGraph, path: str | Path) -> int:
    header = {
        "format_version": FORMAT_VERSION,
        "n": graph.n,
        "edge_count": graph.edge_count,
        "weighted": graph.weights is not None,
    }
    w = BinWriter(header)
    w.add_array(graph.indptr, "<u8")
    w.add_array(graph.indices, "<u4")
    if graph.weights is not None:
        w.add_array(graph.weights, "<f4")
    return w.write(path)


def load_graph(path: str | Path) -> PreferenceGraph:
    r = BinReader(path)
    if r.field("format_version") != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format_version {r.header['format_version']}")
    n = int(r.field("n"))
    nnz = 2 * int(r.field("edge_count"))
    indptr = r.read_array(n + 1, "<u8", "offset array").astype(np.int64)
    indices = r.read_array(nnz, "<u4", "neighbor array").astype(np.int32)
    weights = None
    if r.field("weighted"):
        weights = r.read_array(nnz, "<f4", "edge weights").astype(np.float64)
    r.done()
    return PreferenceGraph(n=n, indptr=indptr, indices=indices, weights=weights)
