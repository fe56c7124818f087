"""Slow, obviously-correct reference implementations used by the tests.

Nothing here imports the package's algorithms; each function recomputes its
answer from first principles with plain loops.
"""

from collections import defaultdict, deque
import math

import numpy as np


def brute_knn(coords, query, k):
    d = np.sqrt(((np.asarray(coords) - np.asarray(query)) ** 2).sum(axis=1))
    order = sorted(range(len(d)), key=lambda i: (d[i], i))[:k]
    return np.array(order), d[order]


def quadratic_fps(coords, count, seed=0):
    coords = np.asarray(coords, dtype=float)
    chosen = [seed]
    while len(chosen) < count:
        best, best_d = None, -1.0
        for i in range(len(coords)):
            if i in chosen:
                continue
            d = min(float(((coords[i] - coords[j]) ** 2).sum()) for j in chosen)
            if d > best_d:  # strict: ties keep the lowest index
                best, best_d = i, d
        chosen.append(best)
    return np.array(chosen)


def edmonds_karp(n, arcs, s, t):
    cap = defaultdict(float)
    adj = defaultdict(set)
    for u, v, c in arcs:
        cap[(u, v)] += c
        adj[u].add(v)
        adj[v].add(u)
    flow = 0.0
    while True:
        parent = {s: None}
        q = deque([s])
        while q and t not in parent:
            u = q.popleft()
            for v in adj[u]:
                if v not in parent and cap[(u, v)] > 1e-12:
                    parent[v] = u
                    q.append(v)
        if t not in parent:
            return flow
        path, v = [], t
        while parent[v] is not None:
            path.append((parent[v], v))
            v = parent[v]
        push = min(cap[e] for e in path)
        for u, v in path:
            cap[(u, v)] -= push
            cap[(v, u)] += push
        flow += push


def naive_energy(features, edges, weights, lam, component, values):
    f = np.asarray(features, dtype=float).reshape(len(component), -1)
    g = np.asarray(values, dtype=float).reshape(-1, f.shape[1])
    total = 0.0
    for i in range(len(component)):
        for q in range(f.shape[1]):
            total += (g[component[i], q] - f[i, q]) ** 2
    for (i, j), w in zip(edges, weights):
        if component[i] != component[j]:
            total += lam * w
    return total


def chain_partitions(n):
    """All partitions of a path graph 0-1-...-(n-1) into contiguous runs."""
    for mask in range(2 ** (n - 1)):
        comp, cur = [0], 0
        for b in range(n - 1):
            if mask >> b & 1:
                cur += 1
            comp.append(cur)
        yield comp


def connected(members, edges):
    members = set(members)
    if not members:
        return False
    adj = defaultdict(list)
    for i, j in edges:
        if i in members and j in members:
            adj[i].append(j)
            adj[j].append(i)
    start = next(iter(members))
    seen, stack = {start}, [start]
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return seen == members


def count_labels(labels, component, num_classes):
    counts = defaultdict(lambda: [0] * num_classes)
    for lab, c in zip(labels, component):
        counts[int(c)][int(lab)] += 1
    m = max(counts) + 1
    out = np.zeros((m, num_classes))
    for c, row in counts.items():
        out[c] = np.array(row) / sum(row)
    return out


def confusion_metrics(pred, true, num_classes):
    conf = [[0] * num_classes for _ in range(num_classes)]
    for p, t in zip(pred, true):
        conf[t][p] += 1
    ious, recalls = [], []
    for c in range(num_classes):
        tp = conf[c][c]
        fp = sum(conf[r][c] for r in range(num_classes)) - tp
        fn = sum(conf[c]) - tp
        if tp + fp + fn:
            ious.append(tp / (tp + fp + fn))
        if tp + fn:
            recalls.append(tp / (tp + fn))
    oa = sum(conf[c][c] for c in range(num_classes)) / len(true)
    return sum(ious) / len(ious), sum(recalls) / len(recalls), oa


# --- dense layers evaluated element by element -------------------------------


def lin(layer, x):
    W, b = layer.weight.data, layer.bias.data
    return [sum(x[a] * W[a, o] for a in range(len(x))) + b[o] for o in range(W.shape[1])]


def mlp(m, x):
    h = [max(v, 0.0) for v in lin(m.fc1, x)]
    return lin(m.fc2, h)


def attention_loop(query_rows, key_rows, value_rows, idx, rel, pos_mlp, weight_mlp):
    """Vector attention with per-channel softmax over the neighbour axis."""
    n, k = idx.shape
    c = len(query_rows[0])
    out = np.zeros((n, c))
    for i in range(n):
        deltas = [mlp(pos_mlp, rel[i, j]) for j in range(k)]
        logits = [mlp(weight_mlp, [key_rows[idx[i, j]][ch] - query_rows[i][ch] + deltas[j][ch]
                                   for ch in range(c)]) for j in range(k)]
        for ch in range(c):
            top = max(logits[j][ch] for j in range(k))
            e = [math.exp(logits[j][ch] - top) for j in range(k)]
            z = sum(e)
            out[i, ch] = sum(e[j] / z * (value_rows[idx[i, j]][ch] + deltas[j][ch])
                             for j in range(k))
    return out


def superpoint_loop(feats, coords, comp, t1, t2, desc):
    m = max(comp) + 1
    fo, co = [], []
    for j in range(m):
        members = [i for i in range(len(comp)) if comp[i] == j]
        hidden = [[max(v, 0.0) for v in lin(t1, feats[i])] for i in members]
        pooled = [max(h[q] for h in hidden) for q in range(len(hidden[0]))]
        fo.append(lin(t2, pooled + list(desc[j])))
        co.append([sum(coords[i][q] for i in members) / len(members) for q in range(3)])
    return np.array(fo), np.array(co)


def gd_count(coords, part, a):
    """Number of nonempty (partition, cell) pairs; cells anchored at each
    partition's bbox minimum, top face folded into the last cell."""
    cell = a / math.sqrt(3)
    total = 0
    for p in set(part.tolist()):
        pts = coords[part == p]
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        if math.dist(lo, hi) <= a:
            total += 1
            continue
        last = [max(1, math.ceil((hi[q] - lo[q]) / cell - 1e-9)) - 1 for q in range(3)]
        keys = set()
        for x in pts:
            keys.add(tuple(min(int(math.floor((x[q] - lo[q]) / cell + 1e-9)), last[q])
                           for q in range(3)))
        total += len(keys)
    return total
