"""Hot loops of the multilevel partitioner.

Greedy matching, balance restoration, and the Fiduccia-Mattheyses pass are
inherently sequential, so they run as numba kernels over plain CSR arrays.
The functions are valid Python and fall back to interpreted execution when
numba is unavailable. All tie-breaking is by ascending vertex index, which
keeps every kernel deterministic.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover
    njit = None


def _jit(fn):
    return njit(cache=True)(fn) if njit is not None else fn


# Max-heaps ordered by (gain desc, vertex asc), stored as parallel arrays.


@_jit
def _heap_push(hg, hv, ln, g, v):
    i = ln
    hg[i] = g
    hv[i] = v
    while i > 0:
        par = (i - 1) // 2
        if hg[par] < hg[i] or (hg[par] == hg[i] and hv[par] > hv[i]):
            hg[par], hg[i] = hg[i], hg[par]
            hv[par], hv[i] = hv[i], hv[par]
            i = par
        else:
            break
    return ln + 1


@_jit
def _heap_pop(hg, hv, ln):
    ln -= 1
    hg[0] = hg[ln]
    hv[0] = hv[ln]
    i = 0
    while True:
        left = 2 * i + 1
        right = left + 1
        best = i
        if left < ln and (hg[left] > hg[best] or (hg[left] == hg[best] and hv[left] < hv[best])):
            best = left
        if right < ln and (hg[right] > hg[best] or (hg[right] == hg[best] and hv[right] < hv[best])):
            best = right
        if best == i:
            break
        hg[best], hg[i] = hg[i], hg[best]
        hv[best], hv[i] = hv[i], hv[best]
        i = best
    return ln


@_jit
def match_heavy_edge(indptr, indices, weights, vsize, mass_cap, order, match):
    """Greedy heavy-edge matching in the given visit order.

    Each unmatched vertex pairs with its max-weight unmatched neighbor whose
    combined mass stays within mass_cap, ties by ascending index (neighbor
    lists are sorted, strict > keeps the first). Vertices left over match
    themselves and copy through to the next level.
    """
    for k in range(order.size):
        v = order[k]
        if match[v] >= 0:
            continue
        best = -1
        best_w = 0.0
        for e in range(indptr[v], indptr[v + 1]):
            u = indices[e]
            if match[u] >= 0 or u == v:
                continue
            if vsize[v] + vsize[u] > mass_cap:
                continue
            if weights[e] > best_w:
                best_w = weights[e]
                best = u
        if best >= 0:
            match[v] = best
            match[best] = v
        else:
            match[v] = v


@_jit
def region_grow_two(indptr, indices, weights, vsize, target_a, seed_a, seed_b, side):
    """Two-way greedy region growing from two seed vertices.

    Sides alternately claim their best-connected unassigned vertex that fits
    the remaining capacity (ties by ascending index); vertices neither side
    can reach are filled in index order into whichever side is most below
    capacity. Writes the side array in place.
    """
    n = indptr.size - 1
    total = 0
    for v in range(n):
        total += vsize[v]
        side[v] = 2
    caps_a = target_a
    caps_b = total - target_a
    conn_a = np.zeros(n, dtype=np.float64)
    conn_b = np.zeros(n, dtype=np.float64)
    sizes = np.zeros(2, dtype=np.int64)

    for s in range(2):
        v = seed_a if s == 0 else seed_b
        if side[v] != 2:
            continue
        side[v] = s
        sizes[s] += vsize[v]
        for e in range(indptr[v], indptr[v + 1]):
            u = indices[e]
            if s == 0:
                conn_a[u] += weights[e]
            else:
                conn_b[u] += weights[e]

    while True:
        progressed = False
        for s in range(2):
            cap = caps_a if s == 0 else caps_b
            if sizes[s] >= cap:
                continue
            best = -1
            best_w = 0.0
            conn = conn_a if s == 0 else conn_b
            for v in range(n):
                if side[v] != 2 or conn[v] <= 0.0:
                    continue
                if sizes[s] + vsize[v] > cap:
                    continue
                if conn[v] > best_w:
                    best_w = conn[v]
                    best = v
            if best < 0:
                continue
            side[best] = s
            sizes[s] += vsize[best]
            for e in range(indptr[best], indptr[best + 1]):
                u = indices[e]
                if s == 0:
                    conn_a[u] += weights[e]
                else:
                    conn_b[u] += weights[e]
            progressed = True
        if not progressed:
            break

    for v in range(n):
        if side[v] == 2:
            deficit_a = caps_a - sizes[0]
            deficit_b = caps_b - sizes[1]
            s = 0 if deficit_a >= deficit_b else 1
            side[v] = s
            sizes[s] += vsize[v]


@_jit
def kway_move_pass(indptr, indices, weights, vsize, assignment, targets, tol, scratch_c, scratch_w):
    """One sequential pass of K-way local moves.

    Each vertex may hop to the neighboring cluster it is most connected to
    when that strictly reduces the cut and both cluster sizes stay within
    tol of their targets. Ties prefer the lower cluster id; the visit order
    is ascending vertex index. Returns the total gain applied.
    """
    n = assignment.size
    C = targets.size
    sizes = np.zeros(C, dtype=np.int64)
    for v in range(n):
        sizes[assignment[v]] += vsize[v]
    improved = 0.0
    for v in range(n):
        cv = assignment[v]
        w_own = 0.0
        cnt = 0
        for e in range(indptr[v], indptr[v + 1]):
            cu = assignment[indices[e]]
            w = weights[e]
            if cu == cv:
                w_own += w
                continue
            found = False
            for t in range(cnt):
                if scratch_c[t] == cu:
                    scratch_w[t] += w
                    found = True
                    break
            if not found:
                scratch_c[cnt] = cu
                scratch_w[cnt] = w
                cnt += 1
        best_c = -1
        best_w = 0.0
        for t in range(cnt):
            if scratch_w[t] > best_w or (scratch_w[t] == best_w and scratch_c[t] < best_c):
                best_w = scratch_w[t]
                best_c = scratch_c[t]
        if best_c < 0 or best_w <= w_own:
            continue
        if sizes[best_c] + vsize[v] > targets[best_c] + tol:
            continue
        if sizes[cv] - vsize[v] < targets[cv] - tol:
            continue
        sizes[cv] -= vsize[v]
        sizes[best_c] += vsize[v]
        assignment[v] = best_c
        improved += best_w - w_own
    return improved


@_jit
def _side_gains(indptr, indices, weights, side, gain):
    """gain[v] = weight to the other side minus weight to the own side."""
    n = side.size
    for v in range(n):
        g = 0.0
        for e in range(indptr[v], indptr[v + 1]):
            if side[indices[e]] == side[v]:
                g -= weights[e]
            else:
                g += weights[e]
        gain[v] = g


@_jit
def rebalance_side(indptr, indices, weights, vsize, side, target_a):
    """Move min-damage vertices off the overfull side until |dev| stops shrinking.

    Returns the achieved absolute deviation. With unit vertex sizes this
    always reaches 0; with supervertices it is best effort and finer levels
    finish the job.
    """
    n = side.size
    size_a = 0
    for v in range(n):
        if side[v] == 0:
            size_a += vsize[v]
    dev_a = size_a - target_a
    if dev_a == 0:
        return 0

    gain = np.empty(n, dtype=np.float64)
    _side_gains(indptr, indices, weights, side, gain)
    s = 0 if dev_a > 0 else 1
    cap = n + indices.size + 4
    hg = np.empty(cap, dtype=np.float64)
    hv = np.empty(cap, dtype=np.int64)
    ln = 0
    for v in range(n):
        if side[v] == s:
            ln = _heap_push(hg, hv, ln, gain[v], v)

    while ln > 0:
        dev = dev_a if dev_a > 0 else -dev_a
        if dev == 0:
            break
        g = hg[0]
        v = hv[0]
        ln = _heap_pop(hg, hv, ln)
        if side[v] != s or g != gain[v]:
            continue
        if vsize[v] >= 2 * dev:
            continue
        side[v] = 1 - s
        dev_a += -vsize[v] if s == 0 else vsize[v]
        for e in range(indptr[v], indptr[v + 1]):
            u = indices[e]
            if side[u] == s:
                gain[u] += 2.0 * weights[e]
                ln = _heap_push(hg, hv, ln, gain[u], u)
            else:
                gain[u] -= 2.0 * weights[e]
        gain[v] = -gain[v]
    return dev_a if dev_a > 0 else -dev_a


@_jit
def fm_pass(indptr, indices, weights, vsize, side, target_a, stall_limit):
    """One Fiduccia-Mattheyses pass with best-prefix rollback.

    Tentatively moves boundary vertices (locking each once), tracking the
    best prefix whose balance deviation is no worse than the starting one;
    everything past it is rolled back. The accepted prefix therefore only
    improves the cut, or keeps it while improving balance. A pass aborts
    after stall_limit consecutive moves without a new best prefix, which
    bounds the work on graphs where hill climbing has plateaued. Returns
    (cut gain applied, achieved deviation).
    """
    n = side.size
    size_a = 0
    max_vs = 1
    for v in range(n):
        if side[v] == 0:
            size_a += vsize[v]
        if vsize[v] > max_vs:
            max_vs = vsize[v]
    dev0 = size_a - target_a
    if dev0 < 0:
        dev0 = -dev0
    allow = dev0 if dev0 > max_vs else max_vs

    gain = np.empty(n, dtype=np.float64)
    _side_gains(indptr, indices, weights, side, gain)

    cap = n + indices.size + 4
    hg0 = np.empty(cap, dtype=np.float64)
    hv0 = np.empty(cap, dtype=np.int64)
    hg1 = np.empty(cap, dtype=np.float64)
    hv1 = np.empty(cap, dtype=np.int64)
    ln0 = 0
    ln1 = 0
    for v in range(n):
        boundary = False
        for e in range(indptr[v], indptr[v + 1]):
            if side[indices[e]] != side[v]:
                boundary = True
                break
        if boundary:
            if side[v] == 0:
                ln0 = _heap_push(hg0, hv0, ln0, gain[v], v)
            else:
                ln1 = _heap_push(hg1, hv1, ln1, gain[v], v)

    locked = np.zeros(n, dtype=np.uint8)
    moves = np.empty(n, dtype=np.int64)
    nmoves = 0
    cum = 0.0
    best_cum = 0.0
    best_nmoves = 0
    best_dev = dev0
    dev_a = size_a - target_a

    while nmoves < n and nmoves - best_nmoves < stall_limit:
        # Pick the side to move from: the overfull one, else the better top.
        pick = -1
        if dev_a > 0:
            sides0 = 0
            sides1 = -1
        elif dev_a < 0:
            sides0 = 1
            sides1 = -1
        else:
            sides0 = 0
            sides1 = 1

        best_v = -1
        best_g = 0.0
        best_side = -1
        for trial in range(2):
            s = sides0 if trial == 0 else sides1
            if s < 0:
                continue
            while True:
                ln = ln0 if s == 0 else ln1
                if ln == 0:
                    break
                if s == 0:
                    g = hg0[0]
                    v = hv0[0]
                else:
                    g = hg1[0]
                    v = hv1[0]
                if locked[v] or side[v] != s or g != gain[v]:
                    if s == 0:
                        ln0 = _heap_pop(hg0, hv0, ln0)
                    else:
                        ln1 = _heap_pop(hg1, hv1, ln1)
                    continue
                # Feasibility: the move must keep |dev| within the slack or
                # strictly reduce it.
                nd = dev_a - vsize[v] if s == 0 else dev_a + vsize[v]
                if nd < 0:
                    nd = -nd
                od = dev_a if dev_a > 0 else -dev_a
                if nd <= allow or nd < od:
                    if best_v < 0 or g > best_g or (g == best_g and v < best_v):
                        best_v = v
                        best_g = g
                        best_side = s
                    break
                # Infeasible top: stop scanning this side (rare; sizes close
                # to the slack only occur on coarse levels).
                break
        pick = best_v
        if pick < 0:
            break

        s = best_side
        if s == 0:
            ln0 = _heap_pop(hg0, hv0, ln0)
        else:
            ln1 = _heap_pop(hg1, hv1, ln1)
        side[pick] = 1 - s
        locked[pick] = 1
        cum += gain[pick]
        dev_a += -vsize[pick] if s == 0 else vsize[pick]
        size_a += -vsize[pick] if s == 0 else vsize[pick]
        moves[nmoves] = pick
        nmoves += 1

        for e in range(indptr[pick], indptr[pick + 1]):
            u = indices[e]
            if locked[u]:
                continue
            if side[u] == s:
                gain[u] += 2.0 * weights[e]
            else:
                gain[u] -= 2.0 * weights[e]
            if side[u] == 0:
                ln0 = _heap_push(hg0, hv0, ln0, gain[u], u)
            else:
                ln1 = _heap_push(hg1, hv1, ln1, gain[u], u)
        gain[pick] = -gain[pick]

        ad = dev_a if dev_a > 0 else -dev_a
        if ad <= dev0 and (cum > best_cum or (cum == best_cum and ad < best_dev)):
            best_cum = cum
            best_nmoves = nmoves
            best_dev = ad

    for i in range(nmoves - 1, best_nmoves - 1, -1):
        v = moves[i]
        side[v] = 1 - side[v]
    return best_cum, best_dev
