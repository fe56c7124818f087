"""Geometry-informed aggregation: local vector attention over k-NN points plus
attention from each point to its nearest superpoints, merged by an affine map.

Both branches use vector (per-channel) attention weights normalised across
the neighbour axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cloud import knn_table
from .tensor import (MLP, Linear, Module, Tensor, as_tensor, gather, reshape, softmax, tsum)


@dataclass(frozen=True)
class NeighborContext:
    local_idx: np.ndarray  # n x k_local, row i starts with i
    global_idx: np.ndarray  # n x k_global superpoint ids (k_global may be 0)

    @property
    def k_local(self):
        return self.local_idx.shape[1]

    @property
    def k_global(self):
        return self.global_idx.shape[1]


def build_context(coords, k_local: int, sp_coords=None, k_global: int = 0) -> NeighborContext:
    n = len(coords)
    if k_local < 1:
        raise ValueError("k_local must be at least 1")
    local, _ = knn_table(coords, k_local)
    # self first even when duplicate points tie at distance 0
    rows = np.arange(n)
    has_self = (local == rows[:, None]).any(axis=1)
    local[~has_self, -1] = rows[~has_self]
    pos = np.argmax(local == rows[:, None], axis=1)
    local[rows, pos] = local[:, 0]
    local[:, 0] = rows
    if k_global > 0:
        if sp_coords is None or len(sp_coords) == 0:
            raise ValueError("k_global > 0 needs at least one superpoint")
        glob, _ = knn_table(sp_coords, k_global, queries=coords)
    else:
        glob = np.zeros((n, 0), np.int64)
    return NeighborContext(local, glob)


class GiaParams(Module):
    """Separate encoders for the local and the superpoint branch."""

    def __init__(self, rng, c: int, dtype=np.float64):
        self.phi = Linear(rng, c, c, dtype=dtype)
        self.psi = Linear(rng, c, c, dtype=dtype)
        self.alpha = Linear(rng, c, c, dtype=dtype)
        self.theta = MLP(rng, 3, c, c, dtype=dtype)
        self.omega = MLP(rng, c, c, c, dtype=dtype)
        self.phi_sp = Linear(rng, c, c, dtype=dtype)
        self.key_sp = Linear(rng, c, c, dtype=dtype)
        self.value_sp = Linear(rng, c, c, dtype=dtype)
        self.theta_sp = MLP(rng, 3, c, c, dtype=dtype)
        self.omega_sp = MLP(rng, c, c, c, dtype=dtype)
        self.xi = Linear(rng, c, c, dtype=dtype)
        self.c = c


def _attend(query: Tensor, keys: Tensor, values: Tensor, idx, rel, pos_mlp, weight_mlp,
            return_weights=False):
    n, k = idx.shape
    c = query.shape[1]
    delta = pos_mlp(Tensor(rel.astype(query.data.dtype)))  # n x k x c
    logits = weight_mlp(gather(keys, idx) - reshape(query, (n, 1, c)) + delta)
    attn = softmax(logits, axis=1)
    out = tsum(attn * (gather(values, idx) + delta), axis=1)
    return (out, attn.data) if return_weights else out


def local_vector_attention(feats, coords, ctx: NeighborContext, params: GiaParams,
                           return_weights=False):
    feats = as_tensor(feats)
    coords = np.asarray(coords, dtype=np.float64)
    if ctx.k_local < 1:
        raise RuntimeError("empty neighbour row")
    rel = coords[:, None, :] - coords[ctx.local_idx]
    return _attend(params.psi(feats), params.phi(feats), params.alpha(feats), ctx.local_idx, rel,
                   params.theta, params.omega, return_weights)


def partition_attention(feats, coords, sp, ctx: NeighborContext, params: GiaParams,
                        return_weights=False):
    """Query from each point, keys and values from its k_global nearest superpoints.

    ``sp`` needs ``.coords`` (m x 3) and ``.features`` (m x c).
    """
    feats = as_tensor(feats)
    n = feats.shape[0]
    if ctx.k_global == 0:
        out = Tensor(np.zeros((n, params.c), dtype=feats.data.dtype))
        return (out, np.zeros((n, 0, params.c))) if return_weights else out
    if sp is None or len(sp.coords) == 0:
        raise ValueError("k_global > 0 with no superpoints")
    coords = np.asarray(coords, dtype=np.float64)
    sp_feats = as_tensor(sp.features)
    rel = coords[:, None, :] - np.asarray(sp.coords)[ctx.global_idx]
    return _attend(params.phi_sp(feats), params.key_sp(sp_feats), params.value_sp(sp_feats),
                   ctx.global_idx, rel, params.theta_sp, params.omega_sp, return_weights)


def geometry_informed_aggregation(feats, coords, sp, ctx: NeighborContext, params: GiaParams):
    local = local_vector_attention(feats, coords, ctx, params)
    glob = partition_attention(feats, coords, sp, ctx, params)
    return params.xi(local + glob)


class VectorAttention(Module):
    """Plain vector self-attention over a neighbour table (used among superpoints)."""

    def __init__(self, rng, c: int, dtype=np.float64):
        self.phi = Linear(rng, c, c, dtype=dtype)
        self.psi = Linear(rng, c, c, dtype=dtype)
        self.alpha = Linear(rng, c, c, dtype=dtype)
        self.theta = MLP(rng, 3, c, c, dtype=dtype)
        self.omega = MLP(rng, c, c, c, dtype=dtype)

    def __call__(self, feats, coords, idx, return_weights=False):
        feats = as_tensor(feats)
        coords = np.asarray(coords, dtype=np.float64)
        rel = coords[:, None, :] - coords[idx]
        return _attend(self.psi(feats), self.phi(feats), self.alpha(feats), idx, rel,
                       self.theta, self.omega, return_weights)
