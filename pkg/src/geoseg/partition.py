"""Piecewise-constant graph partition under a Potts (cut-count) penalty.

Minimizes  sum_i ||g_comp(i) - f_i||^2 + lam * sum_(i,j) w_ij [comp(i) != comp(j)]
with an l0 cut-pursuit working-set scheme; small problems can be solved
exactly by enumeration.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import List, Optional, Union

import numba
import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .cloud import AdjacencyGraph, PointCloud, build_adjacency
from .features import compute_geometric_features
from .flow import max_flow_min_cut, solve_flow  # noqa: F401  (re-exported)

SQRT3 = math.sqrt(3.0)
BRUTE_FORCE_MAX_N = 10
# components up to this size get an exact farthest-pair seed
EXACT_SEED_MAX = 512
# components up to this size also try extra seed pairs (cheap on small graphs)
SMALL_COMPONENT = 64
THRESHOLD_SEEDS = 6


@dataclass(frozen=True)
class PartitionProblem:
    graph: AdjacencyGraph
    features: np.ndarray
    lam: float

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        if f.ndim == 1:
            f = f[:, None]
        object.__setattr__(self, "features", f)
        if len(f) != self.graph.n:
            raise ValueError(f"{len(f)} feature rows for a graph of {self.graph.n} vertices")
        if not np.all(np.isfinite(f)):
            raise ValueError("features must be finite")
        if not self.lam >= 0:
            raise ValueError(f"lambda must be nonnegative, got {self.lam}")

    @property
    def n(self) -> int:
        return self.graph.n


@dataclass
class PartitionResult:
    component: np.ndarray  # n dense ids in [0, m)
    values: np.ndarray  # m x c
    energy: float
    trace: List[float] = field(default_factory=list)

    @property
    def num_components(self) -> int:
        return len(self.values)


def dense_relabel(keys: np.ndarray) -> np.ndarray:
    """Map arbitrary ids to 0..m-1 in order of first occurrence."""
    keys = np.asarray(keys)
    _, first, inv = np.unique(keys, return_index=True, return_inverse=True)
    rank = np.empty(len(first), np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(len(first))
    return rank[inv.reshape(-1)]


def component_means(features: np.ndarray, component: np.ndarray, m: Optional[int] = None):
    m = int(component.max()) + 1 if m is None else m
    counts = np.bincount(component, minlength=m).astype(np.float64)
    sums = np.stack(
        [np.bincount(component, features[:, col], minlength=m) for col in range(features.shape[1])],
        axis=1,
    )
    return sums / np.maximum(counts, 1.0)[:, None]


def partition_energy(problem: PartitionProblem, component, values) -> float:
    """Fidelity plus lambda-weighted count of cut edges."""
    component = np.asarray(component, dtype=np.int64)
    values = np.asarray(values, dtype=np.float64)
    f = problem.features
    if values.ndim == 1:
        values = values[:, None]
    if component.shape != (problem.n,):
        raise ValueError(f"component must have length {problem.n}")
    if values.shape[1] != f.shape[1]:
        raise ValueError(f"values have {values.shape[1]} columns, features {f.shape[1]}")
    if component.min() < 0 or component.max() >= len(values):
        raise ValueError("component id without a value row")
    fid = float(np.sum((values[component] - f) ** 2))
    e = problem.graph.edges
    if len(e) == 0:
        return fid
    cut = component[e[:, 0]] != component[e[:, 1]]
    return fid + problem.lam * float(np.sum(problem.graph.weights[cut]))


def _result(problem: PartitionProblem, component: np.ndarray, trace=None) -> PartitionResult:
    component = dense_relabel(component)
    values = component_means(problem.features, component)
    energy = partition_energy(problem, component, values)
    return PartitionResult(component, values, energy, list(trace or [energy]))


def _graph_components(n: int, edges: np.ndarray) -> np.ndarray:
    if len(edges) == 0:
        return np.arange(n)
    adj = coo_matrix((np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(n, n))
    _, labels = connected_components(adj, directed=False)
    return labels


@numba.njit(cache=True)
def _two_means(feats, order, starts, comps, exact_max, sweeps):
    c = feats.shape[1]
    K = len(comps)
    c0 = np.zeros((K, c))
    c1 = np.zeros((K, c))
    ext = np.zeros((K, 2, c))
    avg = np.zeros((K, c))
    ok = np.zeros(K, np.bool_)
    for kk in range(K):
        j = comps[kk]
        a = starts[j]
        b = starts[j + 1]
        size = b - a
        if size < 2:
            continue
        ia = a
        ib = a
        best = 0.0
        if size <= exact_max:
            for x in range(a, b):
                fx = feats[order[x]]
                for y in range(x + 1, b):
                    fy = feats[order[y]]
                    d = 0.0
                    for q in range(c):
                        d += (fx[q] - fy[q]) ** 2
                    if d > best:
                        best = d
                        ia = x
                        ib = y
        else:
            mean = np.zeros(c)
            for x in range(a, b):
                mean += feats[order[x]]
            mean /= size
            far = -1.0
            for x in range(a, b):
                d = 0.0
                for q in range(c):
                    d += (feats[order[x], q] - mean[q]) ** 2
                if d > far:
                    far = d
                    ia = x
            for x in range(a, b):
                d = 0.0
                for q in range(c):
                    d += (feats[order[x], q] - feats[order[ia], q]) ** 2
                if d > best:
                    best = d
                    ib = x
        if best <= 0.0:
            continue
        ext[kk, 0] = feats[order[min(ia, ib)]]
        ext[kk, 1] = feats[order[max(ia, ib)]]
        for x in range(a, b):
            avg[kk] += feats[order[x]]
        avg[kk] /= size
        cen0 = feats[order[min(ia, ib)]].copy()
        cen1 = feats[order[max(ia, ib)]].copy()
        for _ in range(sweeps):
            s0 = np.zeros(c)
            s1 = np.zeros(c)
            n0 = 0
            n1 = 0
            for x in range(a, b):
                fx = feats[order[x]]
                d0 = 0.0
                d1 = 0.0
                for q in range(c):
                    d0 += (fx[q] - cen0[q]) ** 2
                    d1 += (fx[q] - cen1[q]) ** 2
                if d1 < d0:
                    s1 += fx
                    n1 += 1
                else:
                    s0 += fx
                    n0 += 1
            if n0 > 0:
                cen0 = s0 / n0
            if n1 > 0:
                cen1 = s1 / n1
        differ = False
        for q in range(c):
            if cen0[q] != cen1[q]:
                differ = True
        c0[kk] = cen0
        c1[kk] = cen1
        ok[kk] = differ
    return c0, c1, ext, avg, ok


def _group(comp, members, m, edges, pair_w):
    """Points of the components ``members`` with their internal edges, renumbered locally.

    Returns (global point ids, row of each point in ``members``, local edges, weights).
    """
    row = np.full(m, -1, np.int64)
    row[members] = np.arange(len(members))
    pt_row = row[comp]
    pts = np.flatnonzero(pt_row >= 0)
    local = np.full(len(comp), -1, np.int64)
    local[pts] = np.arange(len(pts))
    e0, e1 = edges[:, 0], edges[:, 1]
    inner = (comp[e0] == comp[e1]) & (pt_row[e0] >= 0)
    le = np.stack([local[e0[inner]], local[e1[inner]]], axis=1)
    return pts, pt_row[pts], le, pair_w[inner]


def _proposal(fp, base_cost, rows, k, le, lw, c0, c1):
    """Min-cut binary labeling of a group, its connected pieces, and the energy
    change per component (``base_cost`` is each point's current fidelity)."""
    npts = len(fp)
    d0 = np.sum((fp - c0[rows]) ** 2, axis=1)
    d1 = np.sum((fp - c1[rows]) ** 2, axis=1)
    lo = np.minimum(d0, d1)
    src, snk = npts, npts + 1
    ids = np.arange(npts)
    tails = np.concatenate([np.full(npts, src), ids, le[:, 0]])
    heads = np.concatenate([ids, np.full(npts, snk), le[:, 1]])
    caps = np.concatenate([d1 - lo, d0 - lo, lw])
    rcaps = np.concatenate([np.zeros(2 * npts), lw])
    _, source_side = solve_flow(npts + 2, src, snk, tails, heads, caps, rcaps)
    label = ~source_side[:npts]
    same = label[le[:, 0]] == label[le[:, 1]]
    piece = _graph_components(npts, le[same])
    means = component_means(fp, piece)
    dfid = np.sum((fp - means[piece]) ** 2, axis=1) - base_cost
    delta = np.bincount(rows, dfid, minlength=k)
    delta += np.bincount(rows[le[~same, 0]], lw[~same], minlength=k)
    return label, piece, delta


def _recenter(fp, label, rows, k, c0, c1):
    """Replace each centroid pair by the means of the two label groups (in place)."""
    for side, cen in ((False, c0), (True, c1)):
        msk = label == side
        cnt = np.bincount(rows[msk], minlength=k)
        tot = np.stack([np.bincount(rows[msk], fp[msk, q], minlength=k)
                        for q in range(fp.shape[1])], axis=1)
        has = cnt > 0
        cen[has] = tot[has] / cnt[has, None]


def _threshold_seeds(fp, rows, k, ext, count):
    """Seed pairs from splitting each component at quantiles of its projection
    on the farthest-pair axis; seeds are the means below and above the cut."""
    axis = ext[:, 1] - ext[:, 0]
    proj = np.sum((fp - ext[rows, 0]) * axis[rows], axis=1)
    order = np.lexsort((proj, rows))
    sizes = np.bincount(rows, minlength=k)
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    cs = np.vstack([np.zeros((1, fp.shape[1])), np.cumsum(fp[order], axis=0)])
    total = cs[starts + sizes] - cs[starts]
    seen = set()
    seeds = []
    for j in range(1, count + 1):
        pos = np.clip(np.rint(j * sizes / (count + 1)), 1, np.maximum(sizes - 1, 1)).astype(np.int64)
        key = pos.tobytes()
        if key in seen:
            continue
        seen.add(key)
        below = cs[starts + pos] - cs[starts]
        seeds.append((below / pos[:, None], (total - below) / np.maximum(sizes - pos, 1)[:, None]))
    return seeds


def _merge_pass(f, comp, edges, pair_w, tol):
    """Greedily fuse adjacent components while a fusion lowers the energy.

    Returns (new dense ids, bool array over new ids marking fused components).
    """
    m = int(comp.max()) + 1
    ce0, ce1 = comp[edges[:, 0]], comp[edges[:, 1]]
    cut = ce0 != ce1
    if not cut.any():
        return comp, np.zeros(m, bool)
    pairs = np.sort(np.stack([ce0[cut], ce1[cut]], axis=1), axis=1)
    uniq, inv = np.unique(pairs, axis=0, return_inverse=True)
    wsum = np.bincount(inv.reshape(-1), pair_w[cut])
    counts = np.bincount(comp, minlength=m).astype(np.float64)
    sums = np.stack([np.bincount(comp, f[:, q], minlength=m) for q in range(f.shape[1])], axis=1)

    def gain(a, b, w):
        na, nb = counts[a], counts[b]
        d = sums[a] / na - sums[b] / nb
        return na * nb / (na + nb) * float(d @ d) - w

    adj = [dict() for _ in range(m)]
    heap = []
    for (a, b), w in zip(uniq.tolist(), wsum.tolist()):
        adj[a][b] = w
        adj[b][a] = w
        g = gain(a, b, w)
        if g < -tol:
            heap.append((g, a, b))
    if not heap:
        return comp, np.zeros(m, bool)
    heapq.heapify(heap)
    parent = np.arange(m)
    alive = np.ones(m, bool)
    fused = np.zeros(m, bool)
    while heap:
        g, a, b = heapq.heappop(heap)
        if not (alive[a] and alive[b]) or b not in adj[a]:
            continue
        if abs(gain(a, b, adj[a][b]) - g) > 1e-12 * max(1.0, abs(g)):
            continue  # stale entry
        # fuse b into a
        alive[b] = False
        parent[b] = a
        fused[a] = True
        counts[a] += counts[b]
        sums[a] += sums[b]
        del adj[a][b]
        for c, w in adj[b].items():
            if c == a:
                continue
            del adj[c][b]
            adj[a][c] = adj[a].get(c, 0.0) + w
            adj[c][a] = adj[a][c]
        adj[b] = {}
        for c, w in adj[a].items():
            gc = gain(a, c, w)
            if gc < -tol:
                heapq.heappush(heap, (gc, min(a, c), max(a, c)))
    root = parent.copy()
    while True:
        nxt = root[root]
        if np.array_equal(nxt, root):
            break
        root = nxt
    new_comp = dense_relabel(root[comp])
    new_fused = np.zeros(int(new_comp.max()) + 1, bool)
    new_fused[new_comp] = fused[root[comp]]
    return new_comp, new_fused


@numba.njit(cache=True)
def _vertex_moves(feats, indptr, indices, wts, comp, counts, sums, next_id, max_passes, tol):
    """Move single vertices to an adjacent component, or detach them as a new
    singleton, while that lowers the energy.

    ``counts``/``sums`` (with spare rows from ``next_id`` on) are updated in
    place; returns the number of moves.
    """
    n, c = feats.shape
    moves = 0
    gain_w = np.zeros(len(counts))
    for _ in range(max_passes):
        moved = 0
        for i in range(n):
            a = comp[i]
            w_own = 0.0
            for p in range(indptr[i], indptr[i + 1]):
                b = comp[indices[p]]
                if b == a:
                    w_own += wts[p]
                else:
                    gain_w[b] += wts[p]
            na = counts[a]
            rem = 0.0
            if na > 1:
                for q in range(c):
                    d = feats[i, q] - sums[a, q] / na
                    rem += d * d
                rem *= na / (na - 1.0)
            best = -tol
            target = -1
            if na > 1 and w_own - rem < best:
                best = w_own - rem
                target = next_id
            for p in range(indptr[i], indptr[i + 1]):
                b = comp[indices[p]]
                if b == a or gain_w[b] == 0.0:
                    continue
                nb = counts[b]
                add = 0.0
                for q in range(c):
                    d = feats[i, q] - sums[b, q] / nb
                    add += d * d
                add *= nb / (nb + 1.0)
                delta = add - rem + w_own - gain_w[b]
                if delta < best:
                    best = delta
                    target = b
            for p in range(indptr[i], indptr[i + 1]):
                gain_w[comp[indices[p]]] = 0.0
            if target >= 0:
                counts[a] -= 1
                counts[target] += 1
                for q in range(c):
                    sums[a, q] -= feats[i, q]
                    sums[target, q] += feats[i, q]
                comp[i] = target
                if target == next_id:
                    next_id += 1
                moved += 1
        moves += moved
        if moved == 0:
            break
    return moves


def _refine(f, comp, graph_csr, tol, max_passes=5):
    """Vertex-move refinement followed by a split into connected pieces."""
    indptr, indices, wts, edges = graph_csr
    m = int(comp.max()) + 1
    n = len(f)
    comp = comp.copy()
    counts = np.bincount(comp, minlength=m + n).astype(np.float64)
    sums = np.stack([np.bincount(comp, f[:, q], minlength=m + n) for q in range(f.shape[1])], axis=1)
    moves = _vertex_moves(f, indptr, indices, wts, comp, counts, sums, m, max_passes, tol)
    if moves == 0:
        return None
    # moved vertices can disconnect their old component
    same = comp[edges[:, 0]] == comp[edges[:, 1]]
    return dense_relabel(_graph_components(len(f), edges[same]))


def _carry_active(new, old, old_active):
    """Components whose member set is unchanged keep their flag; others are re-opened."""
    pairs = np.unique(np.stack([new, old], axis=1), axis=0)
    per_new = np.bincount(pairs[:, 0])
    per_old = np.bincount(pairs[:, 1])
    same = (per_new[pairs[:, 0]] == 1) & (per_old[pairs[:, 1]] == 1)
    active = np.ones(len(per_new), bool)
    active[pairs[same, 0]] = old_active[pairs[same, 1]]
    return active


def _csr(n, edges, pair_w):
    both = np.concatenate([edges, edges[:, ::-1]])
    w = np.concatenate([pair_w, pair_w])
    order = np.lexsort((both[:, 1], both[:, 0]))
    both, w = both[order], w[order]
    indptr = np.zeros(n + 1, np.int64)
    np.cumsum(np.bincount(both[:, 0], minlength=n), out=indptr[1:])
    return indptr, both[:, 1].copy(), w.copy(), edges


def cut_pursuit(
    problem: PartitionProblem,
    max_iter: int = 10,
    kmeans_sweeps: int = 5,
    alt_rounds: int = 3,
    merge: bool = True,
    refine: bool = True,
    extra_seeds: bool = True,
) -> PartitionResult:
    """Approximate minimizer by repeated binary graph cuts.

    Each round proposes a two-way split of every unsaturated component:
    2-means centroids seed a min-cut labeling with unary ||f - c||^2 and
    pairwise lam * w; centroids are re-estimated from the labeling and the cut
    repeated ``alt_rounds`` times, keeping the best proposal. A proposal is
    broken into connected pieces and kept only if it lowers the energy.
    Adjacent components are then fused, and single vertices moved across
    component borders, while either lowers the energy.
    ``result.trace`` holds the energy after each round, strictly decreasing.
    """
    n = problem.n
    f = problem.features
    lam = float(problem.lam)
    edges = problem.graph.edges
    if lam == 0.0:
        return _result(problem, np.arange(n))
    if len(edges) == 0:
        edges = np.zeros((0, 2), np.int64)

    comp = dense_relabel(_graph_components(n, edges))
    values = component_means(f, comp)
    energy = partition_energy(problem, comp, values)
    trace = [energy]
    active = np.ones(len(values), bool)
    pair_w = lam * problem.graph.weights
    csr = _csr(n, edges, pair_w) if refine else None

    for _ in range(max_iter):
        m = len(values)
        tol = 1e-12 * max(1.0, abs(energy))
        todo = np.flatnonzero(active)
        if len(todo) == 0:
            break
        order = np.argsort(comp, kind="stable")
        starts = np.zeros(m + 1, np.int64)
        np.cumsum(np.bincount(comp, minlength=m), out=starts[1:])
        c0, c1, ext, avg, ok = _two_means(f, order, starts, todo, EXACT_SEED_MAX, kmeans_sweeps)
        active[todo[~ok]] = False
        todo, c0, c1, ext, avg = todo[ok], c0[ok], c1[ok], ext[ok], avg[ok]
        if len(todo) == 0:
            break

        best_delta = np.zeros(m)
        best_key = comp.copy()
        tag = 0
        sizes = starts[1:] - starts[:-1]
        groups = [(todo, [(c0, c1)])]
        if extra_seeds:
            small = sizes[todo] <= SMALL_COMPONENT
            if small.any():
                members = todo[small]
                pts, rows, _, _ = _group(comp, members, m, edges, pair_w)
                sx = ext[small]
                seeds = [(avg[small].copy(), sx[:, 0].copy()), (avg[small].copy(), sx[:, 1].copy())]
                seeds += _threshold_seeds(f[pts], rows, len(members), sx, THRESHOLD_SEEDS)
                groups.append((members, seeds))
        for members, seeds in groups:
            k = len(members)
            pts, rows, le, lw = _group(comp, members, m, edges, pair_w)
            fp = f[pts]
            base_cost = np.sum((fp - values[comp[pts]]) ** 2, axis=1)
            for s0, s1 in seeds:
                prev = None
                for r in range(alt_rounds):
                    label, piece, delta = _proposal(fp, base_cost, rows, k, le, lw, s0, s1)
                    if prev is not None and np.array_equal(label, prev):
                        break
                    prev = label
                    tag += 1
                    better = delta < best_delta[members]
                    best_delta[members[better]] = delta[better]
                    sel = better[rows]
                    best_key[pts[sel]] = tag * n + piece[sel]
                    if r + 1 < alt_rounds:
                        _recenter(fp, label, rows, k, s0, s1)

        accept = np.zeros(m, bool)
        accept[todo] = best_delta[todo] < -tol
        active[todo[~accept[todo]]] = False
        new_comp = dense_relabel(np.where(accept[comp], best_key, comp + (tag + 1) * n))
        new_active = np.zeros(int(new_comp.max()) + 1, bool)
        new_active[new_comp] = np.where(accept[comp], True, active[comp])
        if merge:
            merged, fused = _merge_pass(f, new_comp, edges, pair_w, tol)
            if fused.any():
                act = np.zeros(len(fused), bool)
                act[merged] = new_active[new_comp]
                new_active = act | fused
                new_comp = merged
        if refine:
            refined = _refine(f, new_comp, csr, tol)
            if refined is not None:
                new_active = _carry_active(refined, new_comp, new_active)
                new_comp = refined
        if not accept.any() and np.array_equal(new_comp, comp):
            break
        comp, active = new_comp, new_active
        values = component_means(f, comp)
        new_energy = partition_energy(problem, comp, values)
        if not new_energy < energy:
            break
        energy = new_energy
        trace.append(energy)

    return PartitionResult(comp, values, energy, trace)


# ---------------------------------------------------------------------------
# exhaustive oracle


def _restricted_growth(n: int):
    """All set partitions of range(n) as restricted growth strings."""
    a = [0] * n
    def rec(i, mx):
        if i == n:
            yield a
            return
        for v in range(mx + 2):
            a[i] = v
            yield from rec(i + 1, max(mx, v))
    if n == 0:
        return
    yield from rec(1, 0)


def brute_force_partition(problem: PartitionProblem) -> PartitionResult:
    """Exact minimum over all partitions into graph-connected blocks (n <= 10)."""
    n = problem.n
    if n > BRUTE_FORCE_MAX_N:
        raise ValueError(f"brute force refused for n={n} > {BRUTE_FORCE_MAX_N}")
    f = problem.features
    adj = [0] * n
    for (i, j) in problem.graph.edges:
        adj[i] |= 1 << int(j)
        adj[j] |= 1 << int(i)

    def connected(mask):
        start = mask & -mask
        seen = start
        frontier = start
        while frontier:
            nxt = 0
            x = frontier
            while x:
                low = x & -x
                nxt |= adj[low.bit_length() - 1]
                x ^= low
            frontier = nxt & mask & ~seen
            seen |= frontier
        return seen == mask

    best_e, best = math.inf, None
    for rgs in _restricted_growth(n):
        masks = {}
        for i, b in enumerate(rgs):
            masks[b] = masks.get(b, 0) | (1 << i)
        if not all(connected(mk) for mk in masks.values()):
            continue
        comp = np.array(rgs, dtype=np.int64)
        values = component_means(f, comp, len(masks))
        e = partition_energy(problem, comp, values)
        if e < best_e - 1e-12:
            best_e, best = e, comp.copy()
    return _result(problem, best)


# ---------------------------------------------------------------------------
# diameter cap


def diameter_split(coords: np.ndarray, component: np.ndarray, max_dia: float):
    """Voxel-split every component whose bbox diagonal exceeds ``max_dia``.

    Cells have edge ``max_dia / sqrt(3)`` and are anchored at the component's
    bbox minimum; the top face folds into the last cell. Returns (dense group
    id per point in first-occurrence order, bool array of split components).
    """
    if not max_dia > 0:
        raise ValueError(f"max_dia must be positive, got {max_dia}")
    coords = np.asarray(coords, dtype=np.float64)
    comp = np.asarray(component, dtype=np.int64)
    m = int(comp.max()) + 1
    lo = np.full((m, 3), np.inf)
    hi = np.full((m, 3), -np.inf)
    np.minimum.at(lo, comp, coords)
    np.maximum.at(hi, comp, coords)
    big = np.linalg.norm(hi - lo, axis=1) > max_dia
    if not big.any():
        return dense_relabel(comp), big
    cell = max_dia / SQRT3
    keys = np.zeros((len(coords), 3), np.int64)
    sel = big[comp]
    ncell = np.maximum(1, np.ceil((hi - lo) / cell - 1e-9)).astype(np.int64)
    raw = np.floor((coords[sel] - lo[comp[sel]]) / cell + 1e-9).astype(np.int64)
    keys[sel] = np.minimum(raw, ncell[comp[sel]] - 1)
    # encode (component, cell) as one integer per point
    span = keys.max(axis=0) + 1
    code = ((comp * span[0] + keys[:, 0]) * span[1] + keys[:, 1]) * span[2] + keys[:, 2]
    return dense_relabel(code), big


def enforce_diameter_cap(
    result: PartitionResult,
    cloud: Union[PointCloud, np.ndarray],
    max_dia: float,
    problem: Optional[PartitionProblem] = None,
) -> PartitionResult:
    """Voxel-split every component whose bbox diagonal exceeds ``max_dia``
    (see ``diameter_split``).

    Without ``problem`` the split pieces inherit the parent value (the member
    mean of the assigned values) and the energy is not recomputed.
    """
    coords = cloud.coords if isinstance(cloud, PointCloud) else np.asarray(cloud, float)
    comp = result.component
    new_comp, big = diameter_split(coords, comp, max_dia)
    if not big.any():
        return result
    if problem is not None:
        values = component_means(problem.features, new_comp)
        energy = partition_energy(problem, new_comp, values)
    else:
        values = component_means(result.values[comp], new_comp)
        energy = float("nan")
    return PartitionResult(new_comp, values, energy, list(result.trace))


def partition_cloud(cloud: PointCloud, lam: float = 3.0, k_adj: int = 10, k_geo: int = 10,
                    max_dia: Optional[float] = None, max_iter: int = 10):
    """Features, adjacency graph and cut pursuit in one call.

    Returns (problem, result).
    """
    feats = compute_geometric_features(cloud, k_geo).features
    graph = build_adjacency(cloud, k_adj)
    problem = PartitionProblem(graph, feats, lam)
    result = cut_pursuit(problem, max_iter=max_iter)
    if max_dia is not None:
        result = enforce_diameter_cap(result, cloud, max_dia, problem)
    return problem, result
