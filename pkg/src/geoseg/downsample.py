"""Partition-guided downsampling and the voxel / FPS baselines.

Each output point fuses a group of input points: features by columnwise max
after a learned map, coordinates by averaging.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np

from .cloud import bbox_diagonal, fps_sample, knn_table, voxel_keys
from .partition import dense_relabel, diameter_split
from .superpoint import pool_mean
from .tensor import Tensor, as_tensor, gather, max_axis, segment_max


@dataclass
class DownsampleMap:
    group: np.ndarray  # input point -> output point
    coords: np.ndarray  # n2 x 3
    partition: Optional[np.ndarray] = None  # inherited partition id per output point

    def __len__(self):
        return len(self.coords)

    def parents(self) -> List[np.ndarray]:
        """Source indices of each output point."""
        order = np.argsort(self.group, kind="stable")
        bounds = np.cumsum(np.bincount(self.group, minlength=len(self.coords)))[:-1]
        return np.split(order, bounds)


def _fuse(feats, coords, group, m, D):
    feats = as_tensor(feats)
    mapped = D(feats) if D is not None else feats
    return segment_max(mapped, group, m), pool_mean(coords, group, m)


def geometric_groups(coords, partition, a: float) -> np.ndarray:
    """Group id per point: whole partitions if small enough, else grid cells."""
    group, _ = diameter_split(coords, partition, a)
    return group


def geometric_downsample(feats, coords, partition, a: float, D: Optional[Callable] = None):
    """Returns (coarse features, coarse coords, DownsampleMap)."""
    coords = np.asarray(coords, dtype=np.float64)
    partition = np.asarray(partition, dtype=np.int64)
    group = geometric_groups(coords, partition, a)
    m = int(group.max()) + 1
    out_f, out_p = _fuse(feats, coords, group, m, D)
    parent_part = np.zeros(m, np.int64)
    parent_part[group] = partition
    return out_f, out_p, DownsampleMap(group, out_p, parent_part)


def voxel_downsample(feats, coords, cell: float, D: Optional[Callable] = None):
    """Scene-global grid anchored at the bbox minimum; partitions ignored."""
    coords = np.asarray(coords, dtype=np.float64)
    keys = voxel_keys(coords, cell, coords.min(axis=0))
    span = keys.max(axis=0) + 1
    group = dense_relabel((keys[:, 0] * span[1] + keys[:, 1]) * span[2] + keys[:, 2])
    m = int(group.max()) + 1
    out_f, out_p = _fuse(feats, coords, group, m, D)
    return out_f, out_p, DownsampleMap(group, out_p)


def fps_downsample(feats, coords, count: int, k: int, D: Optional[Callable] = None):
    """FPS baseline: sampled points pool their k nearest inputs.

    Returns (coarse features, coarse coords, sampled indices, neighbour table).
    """
    coords = np.asarray(coords, dtype=np.float64)
    idx = fps_sample(coords, count)
    nbr, _ = knn_table(coords, k, queries=coords[idx])
    feats = as_tensor(feats)
    mapped = D(feats) if D is not None else feats
    return max_axis(gather(mapped, nbr)), coords[idx], idx, nbr


def match_fps_count(coords, partition, target: int, tol: float = 0.1, iters: int = 40) -> float:
    """Bisect the size cap so geometric downsampling yields ~``target`` points."""
    coords = np.asarray(coords, dtype=np.float64)
    lo, hi = 1e-4, max(bbox_diagonal(coords), 1e-3) * 2.0
    best_a, best_err = hi, np.inf
    for _ in range(iters):
        a = np.sqrt(lo * hi)
        count = int(geometric_groups(coords, partition, a).max()) + 1
        err = abs(count - target) / target
        if err < best_err:
            best_a, best_err = a, err
        if err <= tol / 4:
            break
        if count > target:
            lo = a
        else:
            hi = a
    return best_a
