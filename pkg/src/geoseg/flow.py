"""Max-flow / min-cut on sparse directed graphs (Dinic, compiled with numba)."""

from __future__ import annotations

from typing import Sequence, Tuple

import numba
import numpy as np


@numba.njit(cache=True)
def _dinic(n, s, t, head, to, cap, rev, eps):
    level = np.empty(n, np.int64)
    it = np.empty(n, np.int64)
    queue = np.empty(n, np.int64)
    path = np.empty(n, np.int64)
    nodes = np.empty(n + 1, np.int64)
    flow = 0.0
    while True:
        for i in range(n):
            level[i] = -1
        level[s] = 0
        qh = 0
        qt = 1
        queue[0] = s
        while qh < qt:
            u = queue[qh]
            qh += 1
            for a in range(head[u], head[u + 1]):
                v = to[a]
                if level[v] < 0 and cap[a] > eps:
                    level[v] = level[u] + 1
                    queue[qt] = v
                    qt += 1
        if level[t] < 0:
            break
        for i in range(n):
            it[i] = head[i]
        depth = 0
        nodes[0] = s
        u = s
        while True:
            if u == t:
                f = cap[path[0]]
                for d in range(1, depth):
                    if cap[path[d]] < f:
                        f = cap[path[d]]
                first = -1
                for d in range(depth):
                    a = path[d]
                    cap[a] -= f
                    cap[rev[a]] += f
                    if first < 0 and cap[a] <= eps:
                        first = d
                flow += f
                depth = first
                u = nodes[depth]
                continue
            advanced = False
            while it[u] < head[u + 1]:
                a = it[u]
                v = to[a]
                if cap[a] > eps and level[v] == level[u] + 1:
                    path[depth] = a
                    depth += 1
                    nodes[depth] = v
                    u = v
                    advanced = True
                    break
                it[u] += 1
            if not advanced:
                if u == s:
                    break
                level[u] = -1
                depth -= 1
                u = nodes[depth]
                it[u] += 1
    return flow


@numba.njit(cache=True)
def _reaches_sink(n, t, head, to, cap, rev, eps):
    """Nodes with a residual path to t (reverse BFS along arcs with spare capacity)."""
    mark = np.zeros(n, np.bool_)
    queue = np.empty(n, np.int64)
    mark[t] = True
    queue[0] = t
    qh = 0
    qt = 1
    while qh < qt:
        v = queue[qh]
        qh += 1
        # arc u->v is the reverse of v->u stored at rev[a]
        for a in range(head[v], head[v + 1]):
            u = to[a]
            if not mark[u] and cap[rev[a]] > eps:
                mark[u] = True
                queue[qt] = u
                qt += 1
    return mark


@numba.njit(cache=True)
def _to_csr(n, tails, heads, caps, rcaps):
    """Arc pairs (tail->head, head->tail) laid out in CSR with reverse pointers."""
    m = len(tails)
    head = np.zeros(n + 1, np.int64)
    for k in range(m):
        head[tails[k] + 1] += 1
        head[heads[k] + 1] += 1
    for i in range(n):
        head[i + 1] += head[i]
    fill = head[:-1].copy()
    to = np.empty(2 * m, np.int64)
    cap = np.empty(2 * m, np.float64)
    rev = np.empty(2 * m, np.int64)
    for k in range(m):
        u = tails[k]
        v = heads[k]
        a = fill[u]
        fill[u] += 1
        b = fill[v]
        fill[v] += 1
        to[a] = v
        cap[a] = caps[k]
        to[b] = u
        cap[b] = rcaps[k]
        rev[a] = b
        rev[b] = a
    return head, to, cap, rev


_TERMINAL = -2
_ORPHAN = -3
_FREE, _S, _T = 0, 1, 2


@numba.njit(cache=True)
def _origin_dist(u, parent, to, ts, dist, time):
    """Distance from u to its terminal along parent arcs, or -1 if the chain
    hits an orphan. Marks the walked path with the current timestamp."""
    d = 0
    j = u
    while True:
        if ts[j] == time:
            d += dist[j]
            break
        a = parent[j]
        d += 1
        if a == _TERMINAL:
            ts[j] = time
            dist[j] = 1
            break
        if a == _ORPHAN or a < 0:
            return -1
        j = to[a]
    total = d
    j = u
    while ts[j] != time:
        ts[j] = time
        dist[j] = d
        d -= 1
        j = to[parent[j]]
    return total


@numba.njit(cache=True)
def _bk(n, tr, head, to, cap, rev, eps):
    """Boykov-Kolmogorov augmenting-path max flow.

    ``tr[v] > 0`` is residual source->v capacity, ``tr[v] < 0`` residual
    v->sink capacity. Capacities are modified in place; returns the flow pushed.
    """
    tree = np.zeros(n, np.int8)
    parent = np.full(n, -1, np.int64)
    ts = np.zeros(n, np.int64)
    dist = np.zeros(n, np.int64)
    qsize = n + 1
    queue = np.empty(qsize, np.int64)
    inq = np.zeros(n, np.bool_)
    qh = 0
    qt = 0
    orphans = np.empty(n, np.int64)
    for v in range(n):
        if tr[v] > eps:
            tree[v] = _S
        elif tr[v] < -eps:
            tree[v] = _T
        else:
            continue
        parent[v] = _TERMINAL
        dist[v] = 1
        queue[qt] = v
        qt = (qt + 1) % qsize
        inq[v] = True
    flow = 0.0
    time = 0
    cur = -1
    while True:
        if cur < 0:
            while qh != qt:
                v = queue[qh]
                qh = (qh + 1) % qsize
                inq[v] = False
                if tree[v] != _FREE:
                    cur = v
                    break
            if cur < 0:
                break
        v = cur
        found = -1
        if tree[v] == _S:
            for a in range(head[v], head[v + 1]):
                if cap[a] > eps:
                    u = to[a]
                    if tree[u] == _FREE:
                        tree[u] = _S
                        parent[u] = rev[a]
                        ts[u] = ts[v]
                        dist[u] = dist[v] + 1
                        if not inq[u]:
                            queue[qt] = u
                            qt = (qt + 1) % qsize
                            inq[u] = True
                    elif tree[u] == _T:
                        found = a
                        break
                    elif ts[u] <= ts[v] and dist[u] > dist[v]:
                        parent[u] = rev[a]
                        ts[u] = ts[v]
                        dist[u] = dist[v] + 1
        elif tree[v] == _T:
            for a in range(head[v], head[v + 1]):
                if cap[rev[a]] > eps:
                    u = to[a]
                    if tree[u] == _FREE:
                        tree[u] = _T
                        parent[u] = rev[a]
                        ts[u] = ts[v]
                        dist[u] = dist[v] + 1
                        if not inq[u]:
                            queue[qt] = u
                            qt = (qt + 1) % qsize
                            inq[u] = True
                    elif tree[u] == _S:
                        found = rev[a]
                        break
                    elif ts[u] <= ts[v] and dist[u] > dist[v]:
                        parent[u] = rev[a]
                        ts[u] = ts[v]
                        dist[u] = dist[v] + 1
        if found < 0:
            cur = -1
            continue

        # augment along S-root ... x -> y ... T-root
        time += 1
        x = to[rev[found]]
        y = to[found]
        b = cap[found]
        j = x
        while parent[j] != _TERMINAL:
            pa = parent[j]
            if cap[rev[pa]] < b:
                b = cap[rev[pa]]
            j = to[pa]
        if tr[j] < b:
            b = tr[j]
        j = y
        while parent[j] != _TERMINAL:
            pa = parent[j]
            if cap[pa] < b:
                b = cap[pa]
            j = to[pa]
        if -tr[j] < b:
            b = -tr[j]
        cap[found] -= b
        cap[rev[found]] += b
        no = 0
        j = x
        while parent[j] != _TERMINAL:
            pa = parent[j]
            cap[rev[pa]] -= b
            cap[pa] += b
            nxt = to[pa]
            if cap[rev[pa]] <= eps:
                parent[j] = _ORPHAN
                orphans[no] = j
                no += 1
            j = nxt
        tr[j] -= b
        if tr[j] <= eps:
            parent[j] = _ORPHAN
            orphans[no] = j
            no += 1
        j = y
        while parent[j] != _TERMINAL:
            pa = parent[j]
            cap[pa] -= b
            cap[rev[pa]] += b
            nxt = to[pa]
            if cap[pa] <= eps:
                parent[j] = _ORPHAN
                orphans[no] = j
                no += 1
            j = nxt
        tr[j] += b
        if tr[j] >= -eps:
            parent[j] = _ORPHAN
            orphans[no] = j
            no += 1
        flow += b

        # adoption (orphans used as a stack)
        while no > 0:
            no -= 1
            x = orphans[no]
            side = tree[x]
            best = -1
            dmin = 1 << 62
            for a in range(head[x], head[x + 1]):
                u = to[a]
                if tree[u] != side:
                    continue
                ok = cap[rev[a]] > eps if side == _S else cap[a] > eps
                if not ok:
                    continue
                d = _origin_dist(u, parent, to, ts, dist, time)
                if d >= 0 and d < dmin:
                    dmin = d
                    best = a
            if best >= 0:
                parent[x] = best
                ts[x] = time
                dist[x] = dmin + 1
                continue
            for a in range(head[x], head[x + 1]):
                u = to[a]
                if tree[u] != side:
                    continue
                ok = cap[rev[a]] > eps if side == _S else cap[a] > eps
                if ok and not inq[u]:
                    queue[qt] = u
                    qt = (qt + 1) % qsize
                    inq[u] = True
                pu = parent[u]
                if pu >= 0 and to[pu] == x:
                    parent[u] = _ORPHAN
                    orphans[no] = u
                    no += 1
            tree[x] = _FREE
            parent[x] = -1
        if tree[v] == _FREE:
            cur = -1
    return flow


@numba.njit(cache=True)
def _reaches_sink_tr(n, tr, head, to, cap, rev, eps):
    """Nodes with a residual path to the sink, terminal capacities given by ``tr``."""
    mark = np.zeros(n, np.bool_)
    queue = np.empty(n, np.int64)
    qt = 0
    for v in range(n):
        if tr[v] < -eps:
            mark[v] = True
            queue[qt] = v
            qt += 1
    qh = 0
    while qh < qt:
        v = queue[qh]
        qh += 1
        for a in range(head[v], head[v + 1]):
            u = to[a]
            if not mark[u] and cap[rev[a]] > eps:
                mark[u] = True
                queue[qt] = u
                qt += 1
    return mark


def solve_flow(n, source, sink, tails, heads, caps, rcaps=None, method="bk"):
    """Max flow over arc pairs; returns (value, bool mask of the source side).

    Arc k goes tails[k] -> heads[k] with capacity caps[k] and its partner the
    other way with rcaps[k] (default 0).
    """
    tails = np.asarray(tails, np.int64)
    heads = np.asarray(heads, np.int64)
    caps = np.asarray(caps, np.float64)
    rcaps = np.zeros_like(caps) if rcaps is None else np.asarray(rcaps, np.float64)
    if len(tails) == 0:
        side = np.ones(n, bool)
        side[sink] = False
        return 0.0, side
    scale = max(float(caps.max()), float(rcaps.max()), 1.0)
    eps = 1e-12 * scale
    if method == "dinic":
        head, to, cap, rev = _to_csr(n, tails, heads, caps, rcaps)
        value = _dinic(n, source, sink, head, to, cap, rev, eps)
        return float(value), ~_reaches_sink(n, sink, head, to, cap, rev, eps)
    if method != "bk":
        raise ValueError(f"unknown max-flow method {method!r}")
    # fold terminal arcs into per-node residual capacities
    tr = np.zeros(n)
    value = 0.0
    direct = (tails == source) & (heads == sink)
    value += float(caps[direct].sum())
    direct_r = (tails == sink) & (heads == source)
    value += float(rcaps[direct_r].sum())
    out_s = (tails == source) & ~direct
    np.add.at(tr, heads[out_s], caps[out_s])
    in_s = (heads == source) & ~direct_r
    np.add.at(tr, tails[in_s], rcaps[in_s])
    to_t = (heads == sink) & ~direct
    np.add.at(tr, tails[to_t], -caps[to_t])
    from_t = (tails == sink) & ~direct_r
    np.add.at(tr, heads[from_t], -rcaps[from_t])
    pos = np.zeros(n)
    neg = np.zeros(n)
    np.add.at(pos, heads[out_s], caps[out_s])
    np.add.at(pos, tails[in_s], rcaps[in_s])
    np.add.at(neg, tails[to_t], caps[to_t])
    np.add.at(neg, heads[from_t], rcaps[from_t])
    value += float(np.minimum(pos, neg).sum())
    inner = ~(out_s | in_s | to_t | from_t | direct | direct_r)
    inner &= (tails != source) & (tails != sink) & (heads != source) & (heads != sink)
    inner &= tails != heads
    head, to, cap, rev = _to_csr(n, tails[inner], heads[inner], caps[inner], rcaps[inner])
    tr[source] = 0.0
    tr[sink] = 0.0
    value += _bk(n, tr, head, to, cap, rev, eps)
    side = ~_reaches_sink_tr(n, tr, head, to, cap, rev, eps)
    side[source] = True
    side[sink] = False
    return float(value), side


def max_flow_min_cut(
    nodes: int, arcs: Sequence[Tuple[int, int, float]], source: int, sink: int
) -> Tuple[float, np.ndarray]:
    """Maximum s-t flow and a minimum cut.

    Returns the flow value and a boolean array, True for nodes on the source
    side. The sink side is the set of nodes that can still reach the sink in
    the residual graph.
    """
    if source == sink:
        raise ValueError("source and sink must differ")
    if not (0 <= source < nodes and 0 <= sink < nodes):
        raise ValueError("terminal out of range")
    arcs = np.asarray(arcs, dtype=np.float64).reshape(-1, 3)
    if len(arcs) and (not np.all(np.isfinite(arcs[:, 2])) or arcs[:, 2].min() < 0):
        raise ValueError("capacities must be finite and nonnegative")
    return solve_flow(
        nodes, source, sink, arcs[:, 0].astype(np.int64), arcs[:, 1].astype(np.int64), arcs[:, 2]
    )
