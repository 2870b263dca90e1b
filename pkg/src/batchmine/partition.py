"""Balanced K-way min-cut partitioning, multilevel style, from scratch.

Vertices are split into clusters of exactly K (one smaller remainder cluster
when K does not divide n) while maximizing intra-cluster edges. K-way is done
by recursive bisection so the balance constraint stays local: every bisection
coarsens the graph by seeded heavy-edge matching, partitions the coarsest
level (exhaustively when tiny, greedy region growing otherwise), then projects
back with rebalancing and Fiduccia-Mattheyses refinement at each level.

Everything is deterministic given the config seed: matching visit order,
region-growing seeds, and all tie-breaks (ascending index) are fixed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._binfile import BinReader, BinWriter
from ._hashing import derive_seed
from ._kernels import (
    fm_pass,
    kway_move_pass,
    match_heavy_edge,
    rebalance_side,
    region_grow_two,
)
from .errors import FormatError, ValidationError
from .graph import PreferenceGraph

FORMAT_VERSION = 1

# Above this vertex count, partition() coarsens the whole graph once before
# the recursive bisection. Full-resolution recursion gives the best cuts but
# costs Theta(E log C); the threshold keeps it whenever that is a second or
# two, and switches to the near-linear coarse path for genuinely large
# graphs.
PRE_COARSEN_THRESHOLD = 32768


@dataclass(frozen=True)
class PartitionConfig:
    K: int
    seed: int = 0
    coarsen_stop: int | None = None
    refine_passes: int = 8
    exhaustive_threshold: int = 16

    def __post_init__(self):
        if self.K < 2:
            raise ValidationError(f"K must be >= 2, got {self.K}")
        if self.coarsen_stop is None:
            object.__setattr__(self, "coarsen_stop", max(64, 2 * self.K))
        if self.coarsen_stop < 2 * self.K:
            raise ValidationError(
                f"coarsen_stop must be >= 2*K = {2 * self.K}, got {self.coarsen_stop}"
            )
        if self.refine_passes < 1:
            raise ValidationError("refine_passes must be >= 1")
        if self.exhaustive_threshold < 2 or self.exhaustive_threshold > 20:
            raise ValidationError("exhaustive_threshold must be in [2, 20]")
        if self.seed < 0:
            raise ValidationError("seed must be non-negative")


@dataclass(frozen=True)
class ClusterAssignment:
    n: int
    K: int
    C: int
    seed: int
    assignment: np.ndarray
    cut: int
    retained: int

    def __post_init__(self):
        self.assignment.setflags(write=False)
        sizes = np.bincount(self.assignment, minlength=self.C)
        remainder = self.n % self.K
        expected = np.full(self.C, self.K, dtype=np.int64)
        if remainder:
            expected[self.C - 1] = remainder
        if sizes.size != self.C or not np.array_equal(np.sort(sizes)[::-1], np.sort(expected)[::-1]):
            raise ValidationError(
                f"cluster sizes {sizes.tolist()} violate the exact-K balance invariant"
            )

    @property
    def cluster_members(self) -> list[np.ndarray]:
        order = np.argsort(self.assignment, kind="stable")
        bounds = np.searchsorted(self.assignment[order], np.arange(self.C + 1))
        return [np.sort(order[bounds[c] : bounds[c + 1]]) for c in range(self.C)]


@dataclass(frozen=True)
class CoarseLevel:
    """One coarsening step: the contracted graph, supervertex sizes, and the
    map from the previous level's vertices into this one."""

    graph: PreferenceGraph
    vsize: np.ndarray
    mapping: np.ndarray


def _unit_weights(graph: PreferenceGraph) -> np.ndarray:
    if graph.weights is not None:
        return graph.weights.astype(np.float64)
    return np.ones(graph.indices.size, dtype=np.float64)


def _contract(indptr, indices, weights, vsize, cmap, n_new):
    src = np.repeat(np.arange(indptr.size - 1, dtype=np.int64), np.diff(indptr))
    csrc = cmap[src]
    cdst = cmap[indices]
    keep = csrc != cdst
    keys = csrc[keep] * np.int64(n_new) + cdst[keep]
    uk, inv = np.unique(keys, return_inverse=True)
    w_new = np.bincount(inv, weights=weights[keep])
    new_src = (uk // n_new).astype(np.int64)
    new_dst = (uk % n_new).astype(np.int32)
    counts = np.bincount(new_src, minlength=n_new)
    indptr_new = np.zeros(n_new + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr_new[1:])
    vsize_new = np.bincount(cmap, weights=vsize).astype(np.int64)
    return indptr_new, new_dst, w_new, vsize_new


def _match_level(indptr, indices, weights, rng, vsize=None, mass_cap=None) -> np.ndarray:
    n = indptr.size - 1
    if vsize is None:
        vsize = np.ones(n, dtype=np.int64)
    if mass_cap is None:
        mass_cap = np.int64(2 ** 62)
    order = rng.permutation(n).astype(np.int64)
    match = np.full(n, -1, dtype=np.int64)
    match_heavy_edge(indptr, indices, weights, vsize, np.int64(mass_cap), order, match)
    return match


def coarsen(
    graph: PreferenceGraph,
    seed: int,
    coarsen_stop: int = 64,
    min_shrink: float = 0.05,
) -> list[CoarseLevel]:
    """Coarsening ladder by heavy-edge matching.

    Unmatched vertices copy through; contracted edge weights sum parallel
    edges; supervertex sizes count the original vertices inside. Stops when
    the level is at or below coarsen_stop vertices or a matching shrinks the
    graph by less than min_shrink.
    """
    rng = np.random.default_rng(seed)
    indptr, indices = graph.indptr, graph.indices
    weights = _unit_weights(graph)
    vsize = np.ones(graph.n, dtype=np.int64)
    levels: list[CoarseLevel] = []
    while indptr.size - 1 > coarsen_stop:
        n = indptr.size - 1
        match = _match_level(indptr, indices, weights, rng)
        rep = np.minimum(np.arange(n, dtype=np.int64), match)
        _, cmap = np.unique(rep, return_inverse=True)
        n_new = int(cmap.max()) + 1 if n else 0
        if n_new > (1.0 - min_shrink) * n:
            break
        indptr, indices, weights, vsize = _contract(indptr, indices, weights, vsize, cmap, n_new)
        levels.append(
            CoarseLevel(
                graph=PreferenceGraph(n=n_new, indptr=indptr, indices=indices, weights=weights),
                vsize=vsize,
                mapping=cmap.astype(np.int64),
            )
        )
    return levels


def _enumerate_bisection(indptr, indices, weights, vsize, target_a) -> np.ndarray:
    """Exact optimum over all bipartitions: lexicographic (deviation, cut, mask)."""
    n = indptr.size - 1
    masks = np.arange(1 << n, dtype=np.uint32)
    bits = ((masks[:, None] >> np.arange(n, dtype=np.uint32)) & 1).astype(np.uint8)
    sizes_a = bits @ vsize
    dev = np.abs(sizes_a - target_a)
    cut = np.zeros(masks.size, dtype=np.float64)
    src = np.repeat(np.arange(n, dtype=np.int64), np.diff(indptr))
    for u, v, w in zip(src, indices, weights):
        if u < v:
            cut += w * (bits[:, u] != bits[:, v])
    best = np.lexsort((masks, cut, dev))[0]
    return np.where(bits[best] == 1, 0, 1).astype(np.uint8)


def _region_grow(indptr, indices, weights, vsize, capacities, rng) -> np.ndarray:
    """Greedy growth from random seeds under per-cluster capacity.

    Clusters claim, round-robin, their best-connected unassigned vertex that
    fits. Vertices no cluster can reach (isolated or capacity-blocked) are
    assigned, in index order, to whichever cluster is most below capacity.
    """
    n = indptr.size - 1
    C = len(capacities)
    capacities = np.asarray(capacities, dtype=np.int64)
    part = np.full(n, -1, dtype=np.int32)
    sizes = np.zeros(C, dtype=np.int64)
    conn = np.zeros((C, n), dtype=np.float64)

    def claim(v: int, c: int) -> None:
        part[v] = c
        sizes[c] += vsize[v]
        nbr = indices[indptr[v] : indptr[v + 1]]
        conn[c, nbr] += weights[indptr[v] : indptr[v + 1]]

    for c, v in enumerate(rng.permutation(n)[:C]):
        claim(int(v), c)

    unassigned = part == -1
    while True:
        progressed = False
        for c in range(C):
            if sizes[c] >= capacities[c]:
                continue
            cand = unassigned & (conn[c] > 0) & (sizes[c] + vsize <= capacities[c])
            if not cand.any():
                continue
            v = int(np.argmax(np.where(cand, conn[c], -np.inf)))
            claim(v, c)
            unassigned[v] = False
            progressed = True
        if not progressed:
            break
    for v in np.flatnonzero(unassigned):
        c = int(np.argmax(capacities - sizes))
        part[v] = c
        sizes[c] += vsize[v]
    return part


def initial_partition(
    graph: PreferenceGraph,
    capacities: list[int],
    config: PartitionConfig,
    seed: int,
    vsize: np.ndarray | None = None,
) -> np.ndarray:
    """Seed partition on a (coarse) graph, balanced against the capacities.

    Two clusters on a tiny graph are solved exactly by enumeration; otherwise
    clusters grow greedily from random seed vertices.
    """
    if vsize is None:
        vsize = np.ones(graph.n, dtype=np.int64)
    weights = _unit_weights(graph)
    if len(capacities) == 2 and graph.n <= config.exhaustive_threshold:
        return _enumerate_bisection(
            graph.indptr, graph.indices, weights, vsize, int(capacities[0])
        ).astype(np.int32)
    rng = np.random.default_rng(seed)
    return _region_grow(graph.indptr, graph.indices, weights, vsize, capacities, rng)


def bisection_cut(graph: PreferenceGraph, side: np.ndarray) -> float:
    """Weighted cut of a two-sided assignment."""
    w = _unit_weights(graph)
    src = np.repeat(np.arange(graph.n, dtype=np.int64), np.diff(graph.indptr))
    cross = side[src] != side[graph.indices]
    return float(w[cross].sum()) / 2.0


def refine(
    graph: PreferenceGraph,
    side: np.ndarray,
    target_first: int,
    config: PartitionConfig,
    vsize: np.ndarray | None = None,
) -> np.ndarray:
    """Boundary FM refinement of a bisection; cut never increases.

    Runs up to refine_passes sweeps with early exit on a no-improvement pass.
    The input balance is preserved: each pass only commits move prefixes whose
    deviation is no worse than at the start of the pass.
    """
    if vsize is None:
        vsize = np.ones(graph.n, dtype=np.int64)
    side = np.array(side, dtype=np.uint8)
    weights = _unit_weights(graph)
    prev_dev = abs(int(vsize[side == 0].sum()) - target_first)
    stall = np.int64(64 + graph.n // 16)
    for _ in range(config.refine_passes):
        gain, dev = fm_pass(
            graph.indptr, graph.indices, weights, vsize, side,
            np.int64(target_first), stall,
        )
        if gain <= 0.0 and dev >= prev_dev:
            break
        prev_dev = dev
    return side


def _bisect_arrays(indptr, indices, weights, vsize, target_a, seed, config) -> np.ndarray:
    """Multilevel bisection of a local CSR; returns a uint8 side array whose
    side-0 vertex mass is as close to target_a as the masses allow (exactly
    target_a when all masses are 1)."""
    rng = np.random.default_rng(seed)
    levels = [(indptr, indices, weights, vsize)]
    maps: list[np.ndarray] = []
    while levels[-1][0].size - 1 > config.coarsen_stop:
        lp, li, lw, lv = levels[-1]
        ln = lp.size - 1
        match = _match_level(lp, li, lw, rng)
        rep = np.minimum(np.arange(ln, dtype=np.int64), match)
        _, cmap = np.unique(rep, return_inverse=True)
        n_new = int(cmap.max()) + 1
        if n_new > 0.95 * ln:
            break
        levels.append(_contract(lp, li, lw, lv, cmap, n_new))
        maps.append(cmap)

    lp, li, lw, lv = levels[-1]
    ln = lp.size - 1
    if ln <= config.exhaustive_threshold:
        side = _enumerate_bisection(lp, li, lw, lv, target_a)
    elif ln > 8192:
        # coarsening stalled badly; a prefix split is good enough as the seed
        # partition and FM refinement does the real work
        side = np.ones(ln, dtype=np.uint8)
        side[np.cumsum(lv) <= target_a] = 0
    else:
        seeds = rng.permutation(ln)[:2]
        side = np.empty(ln, dtype=np.uint8)
        region_grow_two(
            lp, li, lw, lv, np.int64(target_a),
            np.int64(seeds[0]), np.int64(seeds[1]), side,
        )

    for li_idx in range(len(levels) - 1, -1, -1):
        lp, lidx, lw, lv = levels[li_idx]
        rebalance_side(lp, lidx, lw, lv, side, np.int64(target_a))
        prev_dev = abs(int(lv[side == 0].sum()) - target_a)
        stall = np.int64(64 + (lp.size - 1) // 16)
        for _ in range(config.refine_passes):
            gain, dev = fm_pass(lp, lidx, lw, lv, side, np.int64(target_a), stall)
            if gain <= 0.0 and dev >= prev_dev:
                break
            prev_dev = dev
        if li_idx > 0:
            side = side[maps[li_idx - 1]]
    return side


def _split_csr(indptr, indices, weights, vsize, side):
    """Split a local CSR (and vertex masses) into the two side subgraphs."""
    n = indptr.size - 1
    out = []
    deg = np.diff(indptr)
    row_of = np.repeat(np.arange(n, dtype=np.int64), deg)
    for s in (0, 1):
        sel = side == s
        new_id = np.cumsum(sel, dtype=np.int64) - 1
        keep = sel[row_of] & sel[indices]
        sub_indices = new_id[indices[keep]].astype(np.int32)
        sub_rows = new_id[row_of[keep]]
        n_s = int(sel.sum())
        counts = np.bincount(sub_rows, minlength=n_s)
        sub_indptr = np.zeros(n_s + 1, dtype=np.int64)
        np.cumsum(counts, out=sub_indptr[1:])
        out.append((sub_indptr, sub_indices, weights[keep], vsize[sel]))
    return out


def _kway_rebalance(indptr, indices, weights, assignment, targets) -> np.ndarray:
    """Restore exact cluster sizes after projecting a supervertex partition.

    Over-full clusters shed their weakest members (smallest connection loss,
    preferring a destination they connect to) into clusters below target.
    One sweep suffices: total surplus equals total deficit.
    """
    C = targets.size
    assignment = assignment.copy()
    sizes = np.bincount(assignment, minlength=C).astype(np.int64)
    deficit = targets - sizes
    if not np.any(deficit):
        return assignment
    under = {int(c) for c in np.flatnonzero(deficit > 0)}
    src_of = np.repeat(np.arange(assignment.size, dtype=np.int64), np.diff(indptr))
    for c in np.flatnonzero(deficit < 0):
        c = int(c)
        members = np.flatnonzero(assignment == c)
        shed = -int(deficit[c])
        # connection weight of each member to its own cluster and to every
        # under-target cluster it touches
        own = np.zeros(members.size)
        best_dest = np.full(members.size, -1, dtype=np.int64)
        best_w = np.zeros(members.size)
        pos = {int(v): r for r, v in enumerate(members)}
        for v in members:
            r = pos[int(v)]
            for e in range(indptr[v], indptr[v + 1]):
                u = int(indices[e])
                cu = int(assignment[u])
                w = weights[e]
                if cu == c:
                    own[r] += w
                elif cu in under and deficit[cu] > 0 and w > best_w[r]:
                    best_w[r] = w
                    best_dest[r] = cu
        order = np.lexsort((members, own - best_w))
        for r in order[:shed]:
            dest = int(best_dest[r])
            if dest < 0 or deficit[dest] <= 0:
                dest = int(np.argmax(deficit))
            assignment[members[r]] = dest
            deficit[dest] -= 1
            deficit[c] += 1
    return assignment


def partition(graph: PreferenceGraph, config: PartitionConfig) -> ClusterAssignment:
    """Partition into ceil(n/K) clusters of exactly K vertices (one remainder
    cluster of n mod K when K does not divide n), minimizing the edge cut."""
    n = graph.n
    if config.K > n:
        raise ValidationError(f"K={config.K} exceeds vertex count n={n}")
    C = math.ceil(n / config.K)
    sizes = np.full(C, config.K, dtype=np.int64)
    if n % config.K:
        sizes[C - 1] = n % config.K

    # Large graphs are coarsened once, globally, before the recursive
    # bisection: the depth-log work then runs on a graph proportional to the
    # cluster count instead of the full vertex count, keeping the whole stage
    # near-linear. The projected partition is rebalanced to exact sizes.
    gp, gi = graph.indptr, graph.indices
    gw = _unit_weights(graph)
    lv = np.ones(n, dtype=np.int64)
    pre_stop = max(config.coarsen_stop, 2 * C, 4096)
    pre_maps: list[np.ndarray] = []
    rng = np.random.default_rng(derive_seed(config.seed, "precoarsen"))
    lp, li, lw = gp, gi, gw
    # Mass-capped matching: a supervertex never exceeds half a cluster, so
    # every cluster keeps at least two atoms of placement freedom.
    while n > PRE_COARSEN_THRESHOLD and lp.size - 1 > pre_stop:
        ln = lp.size - 1
        match = _match_level(lp, li, lw, rng, vsize=lv, mass_cap=max(1, config.K // 2))
        rep = np.minimum(np.arange(ln, dtype=np.int64), match)
        _, cmap = np.unique(rep, return_inverse=True)
        n_new = int(cmap.max()) + 1
        if n_new > 0.95 * ln:
            break
        lp, li, lw, lv = _contract(lp, li, lw, lv, cmap, n_new)
        pre_maps.append(cmap)

    n_work = lp.size - 1
    assignment = np.empty(n_work, dtype=np.int32)
    stack = [(np.arange(n_work, dtype=np.int64), 0, C, (lp, li, lw, lv))]
    while stack:
        ids, lo, hi, (sp, si, sw, sv) = stack.pop()
        if hi - lo == 1:
            assignment[ids] = lo
            continue
        c1 = (hi - lo + 1) // 2
        target_a = int(sizes[lo : lo + c1].sum())
        side = _bisect_arrays(
            sp, si, sw, sv, target_a, derive_seed(config.seed, lo, hi), config
        )
        if not pre_maps and int((side == 0).sum()) != target_a:
            raise AssertionError("bisection failed to reach exact balance")
        (ap, ai, aw, av), (bp, bi, bw, bv) = _split_csr(sp, si, sw, sv, side)
        stack.append((ids[side == 0], lo, lo + c1, (ap, ai, aw, av)))
        stack.append((ids[side == 1], lo + c1, hi, (bp, bi, bw, bv)))

    # Project back through the global hierarchy with K-way move refinement at
    # every level, then restore exact cluster sizes on the original vertices.
    hierarchy = [(gp, gi, gw, np.ones(n, dtype=np.int64))]
    for cmap in pre_maps[:-1]:
        prev = hierarchy[-1]
        hierarchy.append(_contract(*prev, cmap, int(cmap.max()) + 1))
    for level_idx in range(len(pre_maps) - 1, -1, -1):
        assignment = assignment[pre_maps[level_idx]]
        hp, hi_, hw, hv = hierarchy[level_idx]
        maxdeg = int(np.diff(hp).max()) if hp.size > 1 else 1
        scratch_c = np.empty(max(maxdeg, 1), dtype=np.int64)
        scratch_w = np.empty(max(maxdeg, 1), dtype=np.float64)
        tol = np.int64(max(1, int(hv.max())))
        for _ in range(config.refine_passes):
            gain = kway_move_pass(
                hp, hi_, hw, hv, assignment, sizes, tol, scratch_c, scratch_w
            )
            if gain <= 0.0:
                break
    if pre_maps:
        assignment = _kway_rebalance(gp, gi, gw, assignment, sizes)

    src = np.repeat(np.arange(n, dtype=np.int64), np.diff(graph.indptr))
    cross = assignment[src] != assignment[graph.indices]
    cut = int(cross.sum()) // 2
    return ClusterAssignment(
        n=n,
        K=config.K,
        C=C,
        seed=config.seed,
        assignment=assignment,
        cut=cut,
        retained=graph.edge_count - cut,
    )


def save_assignment(assign: ClusterAssignment, path: str | Path) -> int:
    header = {
        "format_version": FORMAT_VERSION,
        "n": assign.n,
        "K": assign.K,
        "C": assign.C,
        "cut": assign.cut,
        "retained": assign.retained,
        "seed": assign.seed,
    }
    w = BinWriter(header)
    w.add_array(assign.assignment, "<u4")
    return w.write(path)


def load_assignment(path: str | Path) -> ClusterAssignment:
    r = BinReader(path)
    if r.field("format_version") != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format_version {r.header['format_version']}")
    n = int(r.field("n"))
    arr = r.read_array(n, "<u4", "cluster ids").astype(np.int32)
    r.done()
    return ClusterAssignment(
        n=n,
        K=int(r.field("K")),
        C=int(r.field("C")),
        seed=int(r.field("seed")),
        assignment=arr,
        cut=int(r.field("cut")),
        retained=int(r.field("retained")),
    )
