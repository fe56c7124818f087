"""Point cloud container, neighbour search, adjacency graphs, voxel keys and I/O."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
from scipy.spatial import cKDTree

PathLike = Union[str, Path]

# boundary snapping, in cell units
_KEY_TOL = 1e-9
EDGE_EPS = 1e-9


class PointCloudError(ValueError):
    """Base class for invalid point cloud input."""


class ParseError(PointCloudError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(PointCloudError):
    pass


@dataclass
class PointCloud:
    """Coordinates (meters) with optional colors in [0, 1] and integer labels."""

    coords: np.ndarray
    colors: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None
    num_classes: Optional[int] = None

    def __post_init__(self):
        self.coords = np.ascontiguousarray(self.coords, dtype=np.float64)
        if self.coords.ndim != 2 or self.coords.shape[1] != 3:
            raise ValidationError(f"coords must be n x 3, got {self.coords.shape}")
        if len(self.coords) < 1:
            raise ValidationError("a point cloud needs at least one point")
        if not np.all(np.isfinite(self.coords)):
            raise ValidationError("non-finite coordinate")
        n = len(self.coords)
        if self.colors is not None:
            self.colors = np.ascontiguousarray(self.colors, dtype=np.float64)
            if self.colors.shape != (n, 3):
                raise ValidationError(f"colors must be {n} x 3, got {self.colors.shape}")
            if not np.all(np.isfinite(self.colors)):
                raise ValidationError("non-finite color")
            if self.colors.min() < 0 or self.colors.max() > 1:
                raise ValidationError("colors must lie in [0, 1]")
        if self.labels is not None:
            self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
            if self.labels.shape != (n,):
                raise ValidationError(f"labels must have length {n}")
            if self.labels.min() < 0:
                raise ValidationError("negative label")
            if self.num_classes is not None and self.labels.max() >= self.num_classes:
                raise ValidationError(
                    f"label {self.labels.max()} outside [0, {self.num_classes})"
                )

    def __len__(self) -> int:
        return len(self.coords)

    @property
    def n(self) -> int:
        return len(self.coords)

    def subset(self, idx: np.ndarray) -> "PointCloud":
        return PointCloud(
            self.coords[idx],
            None if self.colors is None else self.colors[idx],
            None if self.labels is None else self.labels[idx],
            self.num_classes,
        )


class KnnIndex:
    """Immutable k-d tree over a set of coordinates.

    Results are ordered by (distance, index) so that equal distances resolve
    to the lowest stored index.
    """

    def __init__(self, coords: np.ndarray):
        coords = np.ascontiguousarray(coords, dtype=np.float64)
        if coords.ndim != 2 or len(coords) < 1:
            raise ValueError("KnnIndex needs at least one point")
        self.coords = coords
        self.coords.setflags(write=False)
        self._tree = cKDTree(coords)

    def __len__(self) -> int:
        return len(self.coords)

    def query(self, points: np.ndarray, k: int) -> Tuple[np.ndarray, np.ndarray]:
        """Batched query; returns (m x kk indices, m x kk distances), kk = min(k, n)."""
        if k < 1:
            raise ValueError(f"k must be positive, got {k}")
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        n = len(self.coords)
        kk = min(k, n)
        # over-fetch by one so that ties at the boundary can be reordered
        fetch = min(kk + 1, n)
        dist, idx = self._tree.query(points, k=fetch)
        dist = np.asarray(dist).reshape(len(points), fetch)
        idx = np.asarray(idx).reshape(len(points), fetch)
        if fetch > 1:
            tied = np.any((dist[:, 1:] == dist[:, :-1]) & (idx[:, 1:] < idx[:, :-1]), axis=1)
            if tied.any():
                sub_d, sub_i = dist[tied], idx[tied]
                order = np.lexsort((sub_i, sub_d), axis=-1)
                idx[tied] = np.take_along_axis(sub_i, order, axis=1)
                dist[tied] = np.take_along_axis(sub_d, order, axis=1)
        return idx[:, :kk].astype(np.int64), dist[:, :kk]


def knn(index: KnnIndex, query: np.ndarray, k: int) -> Tuple[np.ndarray, np.ndarray]:
    """k nearest stored points to a single 3-vector."""
    idx, dist = index.query(np.asarray(query, dtype=np.float64).reshape(1, 3), k)
    return idx[0], dist[0]


def knn_table(coords: np.ndarray, k: int, queries: Optional[np.ndarray] = None):
    """Neighbour table of ``queries`` (default: the points themselves) into ``coords``."""
    index = KnnIndex(coords)
    return index.query(coords if queries is None else queries, k)


@dataclass(frozen=True)
class AdjacencyGraph:
    """Undirected weighted graph stored once per edge with i < j."""

    n: int
    edges: np.ndarray  # e x 2, int64, i < j
    weights: np.ndarray  # e, positive
    lengths: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.edges.setflags(write=False)
        self.weights.setflags(write=False)

    @property
    def num_edges(self) -> int:
        return len(self.edges)


def graph_from_edges(n: int, edges, weights=None) -> AdjacencyGraph:
    """Build a deduplicated graph from an arbitrary undirected edge list."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if weights is None:
        weights = np.ones(len(edges))
    weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    if len(weights) != len(edges):
        raise ValueError("one weight per edge required")
    if len(edges) and (edges.min() < 0 or edges.max() >= n):
        raise ValueError("edge endpoint out of range")
    keep = edges[:, 0] != edges[:, 1]
    edges, weights = edges[keep], weights[keep]
    edges = np.sort(edges, axis=1)
    edges, first = np.unique(edges, axis=0, return_index=True)
    weights = weights[first]
    if len(weights) and (not np.all(np.isfinite(weights)) or weights.min() <= 0):
        raise ValueError("edge weights must be finite and positive")
    return AdjacencyGraph(n, edges, weights)


def build_adjacency(cloud: Union[PointCloud, np.ndarray], k_adj: int = 10) -> AdjacencyGraph:
    """Symmetrized k-NN graph with weights mean_length / max(length, EDGE_EPS)."""
    coords = cloud.coords if isinstance(cloud, PointCloud) else np.asarray(cloud, float)
    n = len(coords)
    if n < 2:
        raise ValueError("adjacency needs at least two points")
    if k_adj < 1 or k_adj >= n:
        raise ValueError(f"k_adj must be in [1, n), got {k_adj} for n={n}")
    idx, _ = knn_table(coords, k_adj + 1)
    rows = np.arange(n)[:, None]
    # drop self; with duplicate points self may not come first
    is_self = idx == rows
    has_self = is_self.any(axis=1)
    drop = np.where(has_self, np.argmax(is_self, axis=1), k_adj)
    keep = np.ones_like(idx, dtype=bool)
    keep[np.arange(n), drop] = False
    nbr = idx[keep].reshape(n, k_adj)
    src = np.repeat(np.arange(n), k_adj)
    dst = nbr.reshape(-1)
    lo, hi = np.minimum(src, dst), np.maximum(src, dst)
    code = np.unique(lo * n + hi)
    pairs = np.stack([code // n, code % n], axis=1)
    lengths = np.linalg.norm(coords[pairs[:, 0]] - coords[pairs[:, 1]], axis=1)
    mean_len = lengths.mean()
    if mean_len > 0:
        weights = mean_len / np.maximum(lengths, EDGE_EPS)
    else:
        weights = np.ones_like(lengths)
    return AdjacencyGraph(n, pairs, weights, lengths)


def fps_sample(cloud: Union[PointCloud, np.ndarray], count: int, seed_index: int = 0) -> np.ndarray:
    """Greedy farthest point sampling; ties go to the lowest index."""
    coords = cloud.coords if isinstance(cloud, PointCloud) else np.asarray(cloud, float)
    n = len(coords)
    if count < 1 or count > n:
        raise ValueError(f"count must be in [1, {n}], got {count}")
    if not 0 <= seed_index < n:
        raise ValueError(f"seed_index {seed_index} out of range")
    out = np.empty(count, dtype=np.int64)
    out[0] = seed_index
    mind = np.sum((coords - coords[seed_index]) ** 2, axis=1)
    mind[seed_index] = -1.0
    for t in range(1, count):
        j = int(np.argmax(mind))
        out[t] = j
        d = np.sum((coords - coords[j]) ** 2, axis=1)
        np.minimum(mind, d, out=mind)
        mind[out[: t + 1]] = -1.0
    return out


def voxel_keys(coords: np.ndarray, cell: float, origin=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Integer cell triples floor((p - origin) / cell), boundary points go up."""
    if not cell > 0:
        raise ValueError(f"cell must be positive, got {cell}")
    q = (np.asarray(coords, dtype=np.float64) - np.asarray(origin, dtype=np.float64)) / cell
    return np.floor(q + _KEY_TOL).astype(np.int64)


def grid_split(coords: np.ndarray, cell: float) -> np.ndarray:
    """Dense cell ids of a grid anchored at the bbox minimum.

    The top face of the bounding box is folded into the last cell so an
    extent of exactly ``j * cell`` yields ``j`` cells per axis.
    """
    coords = np.asarray(coords, dtype=np.float64)
    lo = coords.min(axis=0)
    keys = voxel_keys(coords, cell, lo)
    extent = coords.max(axis=0) - lo
    ncell = np.maximum(1, np.ceil(extent / cell - _KEY_TOL)).astype(np.int64)
    keys = np.minimum(keys, ncell - 1)
    _, dense = np.unique(keys, axis=0, return_inverse=True)
    return dense.reshape(-1)


def bbox_diagonal(coords: np.ndarray) -> float:
    coords = np.asarray(coords)
    return float(np.linalg.norm(coords.max(axis=0) - coords.min(axis=0)))


# ---------------------------------------------------------------------------
# I/O

_ASCII_LAYOUTS = {3: "xyz", 4: "xyzl", 6: "xyzrgb", 7: "xyzrgbl"}
_FORMAT_FIELDS = {
    "ascii-xyz": 3,
    "ascii-xyzl": 4,
    "ascii-xyzrgb": 6,
    "ascii-xyzrgbl": 7,
}


def _read_ascii(path: Path, nfields: Optional[int]) -> PointCloud:
    rows = []
    lines = []
    with open(path, "r") as fh:
        for lineno, raw in enumerate(fh, start=1):
            text = raw.split("#", 1)[0].strip()
            if not text:
                continue
            parts = text.split()
            if nfields is None:
                if len(parts) not in _ASCII_LAYOUTS:
                    raise ParseError(f"cannot infer layout from {len(parts)} fields", lineno)
                nfields = len(parts)
            if len(parts) != nfields:
                raise ParseError(f"expected {nfields} fields, found {len(parts)}", lineno)
            try:
                rows.append([float(p) for p in parts])
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from None
            lines.append(lineno)
    if not rows:
        raise ParseError("no points in file")
    data = np.asarray(rows, dtype=np.float64)
    bad = ~np.all(np.isfinite(data), axis=1)
    if bad.any():
        raise ValidationError(f"line {lines[int(np.argmax(bad))]}: non-finite value")
    layout = _ASCII_LAYOUTS[nfields]
    coords = data[:, :3]
    colors = labels = None
    if "rgb" in layout:
        colors = data[:, 3:6]
        if colors.max() > 1.0:
            colors = colors / 255.0
    if layout.endswith("l"):
        lab = data[:, -1]
        if np.any(lab != np.round(lab)) or lab.min() < 0:
            row = int(np.argmax((lab != np.round(lab)) | (lab < 0)))
            raise ValidationError(f"line {lines[row]}: label must be a nonnegative integer")
        labels = lab.astype(np.int64)
    return PointCloud(coords, colors, labels)


def _write_ascii(path: Path, cloud: PointCloud) -> None:
    cols = [cloud.coords]
    fmt = ["%.9g"] * 3
    if cloud.colors is not None:
        cols.append(cloud.colors)
        fmt += ["%.6g"] * 3
    if cloud.labels is not None:
        cols.append(cloud.labels[:, None].astype(np.float64))
        fmt.append("%d")
    np.savetxt(path, np.hstack(cols), fmt=" ".join(fmt))


def _read_ply(path: Path) -> PointCloud:
    with open(path, "rb") as fh:
        header = []
        while True:
            line = fh.readline()
            if not line:
                raise ParseError("unterminated PLY header")
            text = line.decode("ascii", errors="replace").strip()
            header.append(text)
            if text == "end_header":
                break
        body = fh.read()
    if header[0] != "ply":
        raise ParseError("missing 'ply' magic", 1)
    count = None
    props = []
    in_vertex = False
    for lineno, text in enumerate(header, start=1):
        tok = text.split()
        if not tok:
            continue
        if tok[0] == "format" and tok[1] != "binary_little_endian":
            raise ParseError(f"unsupported PLY format {tok[1]}", lineno)
        if tok[0] == "element":
            in_vertex = tok[1] == "vertex"
            if in_vertex:
                count = int(tok[2])
            elif count is not None:
                raise ParseError("only a single vertex element is supported", lineno)
        elif tok[0] == "property" and in_vertex:
            props.append((tok[2], tok[1]))
    if count is None:
        raise ParseError("no vertex element")
    ply_types = {"float": "<f4", "float32": "<f4", "uchar": "u1", "uint8": "u1",
                 "int": "<i4", "int32": "<i4", "double": "<f8"}
    try:
        dtype = np.dtype([(name, ply_types[t]) for name, t in props])
    except KeyError as exc:
        raise ParseError(f"unsupported property type {exc}") from None
    if len(body) < count * dtype.itemsize:
        raise ParseError(f"vertex data truncated: {count} elements declared")
    arr = np.frombuffer(body, dtype=dtype, count=count)
    names = arr.dtype.names
    for axis in "xyz":
        if axis not in names:
            raise ParseError(f"missing property {axis}")
    coords = np.stack([arr["x"], arr["y"], arr["z"]], axis=1).astype(np.float64)
    if not np.all(np.isfinite(coords)):
        raise ValidationError("non-finite coordinate")
    colors = None
    if all(c in names for c in ("red", "green", "blue")):
        colors = np.stack([arr["red"], arr["green"], arr["blue"]], axis=1) / 255.0
    labels = arr["label"].astype(np.int64) if "label" in names else None
    return PointCloud(coords, colors, labels)


def _write_ply(path: Path, cloud: PointCloud) -> None:
    fields = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {cloud.n}",
              "property float x", "property float y", "property float z"]
    if cloud.colors is not None:
        fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
        header += ["property uchar red", "property uchar green", "property uchar blue"]
    if cloud.labels is not None:
        fields.append(("label", "<i4"))
        header.append("property int label")
    header.append("end_header")
    arr = np.empty(cloud.n, dtype=np.dtype(fields))
    arr["x"], arr["y"], arr["z"] = cloud.coords.T
    if cloud.colors is not None:
        rgb = np.clip(np.round(cloud.colors * 255.0), 0, 255).astype(np.uint8)
        arr["red"], arr["green"], arr["blue"] = rgb.T
    if cloud.labels is not None:
        arr["label"] = cloud.labels
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(arr.tobytes())


def _resolve_format(path: Path, fmt: Optional[str]) -> str:
    if fmt is None:
        return "ply-subset" if path.suffix.lower() == ".ply" else "ascii"
    return fmt


def load_point_cloud(path: PathLike, fmt: Optional[str] = None) -> PointCloud:
    """Read an ASCII ``x y z [r g b] [label]`` file or the binary PLY subset.

    ``fmt`` is one of ``ascii`` (layout inferred from the first line),
    ``ascii-xyz``, ``ascii-xyzl``, ``ascii-xyzrgb``, ``ascii-xyzrgbl`` or
    ``ply-subset``; by default it follows the file extension.
    """
    path = Path(path)
    fmt = _resolve_format(path, fmt)
    if fmt == "ply-subset":
        return _read_ply(path)
    if fmt == "ascii":
        return _read_ascii(path, None)
    if fmt in _FORMAT_FIELDS:
        return _read_ascii(path, _FORMAT_FIELDS[fmt])
    raise ValueError(f"unknown point cloud format {fmt!r}")


def save_point_cloud(path: PathLike, cloud: PointCloud, fmt: Optional[str] = None) -> None:
    path = Path(path)
    fmt = _resolve_format(path, fmt)
    if fmt == "ply-subset":
        _write_ply(path, cloud)
    elif fmt.startswith("ascii"):
        _write_ascii(path, cloud)
    else:
        raise ValueError(f"unknown point cloud format {fmt!r}")
