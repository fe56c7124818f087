"""One superpoint per geometric partition, plus soft label targets."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .cloud import PointCloud, ValidationError
from .partition import PartitionResult
from .tensor import Linear, Module, Tensor, as_tensor, concat, relu, segment_max

GLOBAL_DESC_DIM = 2  # (bbox diagonal, member fraction)


def _ids(partition) -> np.ndarray:
    comp = partition.component if isinstance(partition, PartitionResult) else partition
    comp = np.asarray(comp, dtype=np.int64)
    if comp.ndim != 1 or len(comp) == 0:
        raise ValueError("partition must assign every point a component")
    if comp.min() < 0:
        raise ValueError("negative component id")
    return comp


def _coords(cloud) -> np.ndarray:
    return cloud.coords if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)


@dataclass
class SuperpointSet:
    coords: np.ndarray  # m x 3, member mean
    features: Tensor  # m x c
    global_desc: np.ndarray  # m x g
    source: np.ndarray  # point -> superpoint

    def __len__(self):
        return len(self.coords)


@dataclass
class SoftLabelSet:
    w: np.ndarray  # m x L

    def __len__(self):
        return len(self.w)


def partition_diameter(partition, cloud) -> np.ndarray:
    """Bounding-box diagonal of each component."""
    comp = _ids(partition)
    coords = _coords(cloud)
    m = int(comp.max()) + 1
    lo = np.full((m, 3), np.inf)
    hi = np.full((m, 3), -np.inf)
    np.minimum.at(lo, comp, coords)
    np.maximum.at(hi, comp, coords)
    if not np.all(np.isfinite(lo)):
        raise ValueError("partition has an empty component")
    return np.linalg.norm(hi - lo, axis=1)


def global_descriptor(partition, cloud) -> np.ndarray:
    comp = _ids(partition)
    frac = np.bincount(comp) / len(comp)
    return np.stack([partition_diameter(comp, cloud), frac], axis=1)


def soft_pseudo_labels(labels, partition, num_classes: int) -> SoftLabelSet:
    """Per-component label histogram, normalised to sum to one."""
    comp = _ids(partition)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != comp.shape:
        raise ValidationError(f"{len(labels)} labels for {len(comp)} points")
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ValidationError(f"labels must lie in [0, {num_classes})")
    m = int(comp.max()) + 1
    counts = np.zeros((m, num_classes))
    np.add.at(counts, (comp, labels), 1.0)
    sizes = counts.sum(axis=1, keepdims=True)
    if np.any(sizes == 0):
        raise ValueError("partition has an empty component")
    return SoftLabelSet(counts / sizes)


class SuperpointEmbedding(Module):
    """T1 (affine + ReLU) on member features, max-pool, append the global
    descriptor, then T2 (affine)."""

    def __init__(self, rng, c_in: int, c_hidden: int, c_out: int, g: int = GLOBAL_DESC_DIM,
                 dtype=np.float64):
        self.t1 = Linear(rng, c_in, c_hidden, dtype=dtype)
        self.t2 = Linear(rng, c_hidden + g, c_out, dtype=dtype)

    def __call__(self, feats, coords, partition, global_desc=None) -> SuperpointSet:
        return embed_superpoints(feats, coords, partition, self.t1, self.t2, global_desc)


def embed_superpoints(feats, coords, partition, t1: Linear, t2: Linear,
                      global_desc: Optional[np.ndarray] = None) -> SuperpointSet:
    feats = as_tensor(feats)
    comp = _ids(partition)
    coords = _coords(coords)
    if len(comp) != feats.shape[0] or len(comp) != len(coords):
        raise ValueError("features, coordinates and partition disagree on the point count")
    m = int(comp.max()) + 1
    counts = np.bincount(comp, minlength=m)
    if np.any(counts == 0):
        raise RuntimeError("empty partition")
    if global_desc is None:
        global_desc = global_descriptor(comp, coords)
    pooled = segment_max(relu(t1(feats)), comp, m)
    fused = t2(concat([pooled, Tensor(global_desc.astype(pooled.data.dtype))], axis=1))
    return SuperpointSet(pool_mean(coords, comp, m), fused, global_desc, comp)


def pool_mean(coords: np.ndarray, groups: np.ndarray, m: int) -> np.ndarray:
    """Group means of coordinates, clipped into each group's bounding box so
    rounding can never push a mean outside it."""
    counts = np.bincount(groups, minlength=m)
    sums = np.stack([np.bincount(groups, coords[:, q], minlength=m) for q in range(coords.shape[1])],
                    axis=1)
    lo = np.full((m, coords.shape[1]), np.inf)
    hi = np.full((m, coords.shape[1]), -np.inf)
    np.minimum.at(lo, groups, coords)
    np.maximum.at(hi, groups, coords)
    return np.clip(sums / counts[:, None], lo, hi)
