"""A small eager reverse-mode autodiff engine over numpy arrays.

Every op records its parents and a closure mapping the output gradient to
parent gradients. ``Tensor.backward`` walks the record in reverse topological
order. The op set is deliberately closed: only what the segmentation network
uses is provided.
"""

from __future__ import annotations

import contextlib
import json
import struct
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
from scipy import sparse

_GRAD_ENABLED = True


class ShapeError(ValueError):
    def __init__(self, op: str, message: str):
        super().__init__(f"{op}: {message}")
        self.op = op


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording (inference only)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.op = "leaf"
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``.grad`` of every reachable leaf."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError(f"backward needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order = _topo_order(self)
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def _topo_order(root: Tensor) -> List[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward, op) -> Tensor:
    out = Tensor(data)
    out.op = op
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, f"shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    """Hadamard product."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
                 "mul")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0).astype(x.data.dtype), (x,),
                 lambda g: (g * mask,), "relu")


# ---------------------------------------------------------------------------
# linear algebra and shape plumbing


def affine(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """x @ W + b over the last axis of x (any leading shape)."""
    if weight.ndim != 2:
        raise ShapeError("affine", f"weight must be 2-D, got {weight.shape}")
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError("affine", f"input width {x.shape[-1]} != weight rows {weight.shape[0]}")
    if bias is not None and bias.shape != (weight.shape[1],):
        raise ShapeError("affine", f"bias shape {bias.shape} != ({weight.shape[1]},)")
    out = x.data @ weight.data
    if bias is not None:
        out = out + bias.data
    lead = x.shape[:-1]

    def back(g):
        g2 = g.reshape(-1, g.shape[-1])
        x2 = x.data.reshape(-1, x.shape[-1])
        gx = (g @ weight.data.T) if x.requires_grad else None
        gw = x2.T @ g2 if weight.requires_grad else None
        gb = g2.sum(axis=0) if bias is not None and bias.requires_grad else None
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    out = _make(out, parents, back, "affine")
    assert out.shape == lead + (weight.shape[1],)
    return out


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat", "nothing to concatenate")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError("concat", str(exc)) from None
    ax = axis % out.ndim
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _make(out, tensors, back, "concat")


def reshape(x: Tensor, shape) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError("reshape", str(exc)) from None
    return _make(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def gather(x: Tensor, index) -> Tensor:
    """Rows of x picked by an integer array of any shape.

    Output shape is index.shape + x.shape[1:]; the gradient scatter-adds back
    into the source rows.
    """
    index = np.asarray(index, dtype=np.int64)
    n = x.shape[0]
    if index.size and (index.min() < 0 or index.max() >= n):
        raise ShapeError("gather", f"index out of range for {n} rows")
    out = x.data[index]

    def back(g):
        flat = index.reshape(-1)
        g2 = g.reshape(len(flat), -1)
        scatter = sparse.csr_matrix(
            (np.ones(len(flat), dtype=g.dtype), (flat, np.arange(len(flat)))),
            shape=(n, len(flat)),
        )
        return (np.asarray(scatter @ g2).reshape(x.shape),)

    return _make(out, (x,), back, "gather")


# ---------------------------------------------------------------------------
# reductions


def _segment_layout(op, segments, n, num_segments):
    segments = np.asarray(segments, dtype=np.int64)
    if segments.shape != (n,):
        raise ShapeError(op, f"segment ids must have shape ({n},), got {segments.shape}")
    if num_segments is None:
        num_segments = int(segments.max()) + 1 if n else 0
    if n and (segments.min() < 0 or segments.max() >= num_segments):
        raise ShapeError(op, "segment id out of range")
    counts = np.bincount(segments, minlength=num_segments)
    return segments, num_segments, counts


def segment_max(x: Tensor, segments, num_segments: Optional[int] = None) -> Tensor:
    """Columnwise max of the rows in each segment.

    The gradient goes to the arg-max row of each (segment, column); ties go
    to the lowest row index.
    """
    n = x.shape[0]
    segments, m, counts = _segment_layout("segment_max", segments, n, num_segments)
    if np.any(counts == 0):
        raise ShapeError("segment_max", "empty segment")
    order = np.argsort(segments, kind="stable")
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    xs = x.data[order]
    out = np.maximum.reduceat(xs, starts, axis=0)
    # rows are in increasing original order within a segment, so the minimum
    # original index among the maximizers is the lowest-index tie winner
    hit = xs == out[segments[order]]
    cand = np.where(hit, order.reshape((-1,) + (1,) * (x.ndim - 1)), n)
    arg = np.minimum.reduceat(cand, starts, axis=0)

    def back(g):
        gx = np.zeros_like(x.data)
        cols = np.broadcast_to(np.arange(int(np.prod(x.shape[1:]))), (m, int(np.prod(x.shape[1:]))))
        flat = gx.reshape(n, -1)
        np.add.at(flat, (arg.reshape(m, -1), cols), g.reshape(m, -1))
        return (gx,)

    return _make(out, (x,), back, "segment_max")


def segment_mean(x: Tensor, segments, num_segments: Optional[int] = None) -> Tensor:
    n = x.shape[0]
    segments, m, counts = _segment_layout("segment_mean", segments, n, num_segments)
    if np.any(counts == 0):
        raise ShapeError("segment_mean", "empty segment")
    pool = sparse.csr_matrix(
        (1.0 / counts[segments], (segments, np.arange(n))), shape=(m, n)
    )
    x2 = x.data.reshape(n, -1)
    out = np.asarray(pool @ x2).reshape((m,) + x.shape[1:]).astype(x.data.dtype)

    def back(g):
        return (np.asarray(pool.T @ g.reshape(m, -1)).reshape(x.shape).astype(x.data.dtype),)

    return _make(out, (x,), back, "segment_mean")


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(np.asarray(out), (x,), back, "sum")


def tmean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(tsum(x, axis, keepdims), 1.0 / float(count))


def max_axis(x: Tensor, axis: int = 1) -> Tensor:
    """Max over one axis of a 3-D tensor (n x k x c), via segment_max."""
    if x.ndim != 3 or axis != 1:
        raise ShapeError("max_axis", "only axis 1 of a 3-D tensor is supported")
    n, k, c = x.shape
    flat = reshape(x, (n * k, c))
    return segment_max(flat, np.repeat(np.arange(n), k), n)


# ---------------------------------------------------------------------------
# normalisation and losses


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (s * (g - np.sum(g * s, axis=axis, keepdims=True)),)

    return _make(s, (x,), back, "softmax")


def log_softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def cross_entropy(logits: Tensor, target) -> Tensor:
    """Mean over rows of -sum_l w_l log softmax(u)_l.

    ``target`` is either an n x L distribution or a vector of n class ids.
    """
    target = np.asarray(target)
    if logits.ndim != 2:
        raise ShapeError("cross_entropy", f"logits must be 2-D, got {logits.shape}")
    n, L = logits.shape
    if target.ndim == 1:
        if target.shape != (n,):
            raise ShapeError("cross_entropy", f"{len(target)} labels for {n} rows")
        if n and (target.min() < 0 or target.max() >= L):
            raise ShapeError("cross_entropy", "label outside [0, L)")
        w = np.zeros((n, L), dtype=logits.data.dtype)
        w[np.arange(n), target.astype(np.int64)] = 1.0
    else:
        if target.shape != (n, L):
            raise ShapeError("cross_entropy", f"target shape {target.shape} != {logits.shape}")
        w = target.astype(logits.data.dtype)
    if n == 0:
        raise ShapeError("cross_entropy", "no rows")
    ls = log_softmax(logits.data)
    loss = -np.sum(w * ls) / n
    p = np.exp(ls)

    def back(g):
        return (g * (p * w.sum(axis=1, keepdims=True) - w) / n,)

    return _make(np.asarray(loss, dtype=logits.data.dtype), (logits,), back, "cross_entropy")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis to zero mean / unit variance, then scale and shift."""
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError("layer_norm", f"gain/shift must have shape ({c},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xh = xc * inv
    out = xh * gamma.data + beta.data

    def back(g):
        gh = g * gamma.data
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                    - xh * (gh * xh).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xh).sum(axis=lead), g.sum(axis=lead)

    return _make(out, (x, gamma, beta), back, "layer_norm")


# ---------------------------------------------------------------------------
# parameters and modules


class Parameter(Tensor):
    """Trainable leaf with AdamW state."""

    __slots__ = ("name", "m", "v", "step")

    def __init__(self, data, name: str = ""):
        super().__init__(np.array(data, copy=True), requires_grad=True)
        self.name = name
        self.m = np.zeros_like(self.data)
        self.v = np.zeros_like(self.data)
        self.step = 0

    def zero_grad(self):
        self.grad = None


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, dtype=np.float64) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype)


class Module:
    """Attribute-based parameter container (parameters listed in definition order)."""

    def named_parameters(self, prefix: str = ""):
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Parameter):
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{name}.{i}", item

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


class Linear(Module):
    def __init__(self, rng, c_in: int, c_out: int, bias: bool = True, dtype=np.float64):
        self.weight = Parameter(glorot(rng, c_in, c_out, dtype))
        self.bias = Parameter(np.zeros(c_out, dtype)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return affine(x, self.weight, self.bias)


class MLP(Module):
    """affine, ReLU, affine."""

    def __init__(self, rng, c_in: int, c_hidden: int, c_out: int, dtype=np.float64):
        self.fc1 = Linear(rng, c_in, c_hidden, dtype=dtype)
        self.fc2 = Linear(rng, c_hidden, c_out, dtype=dtype)

    def __call__(self, x):
        return self.fc2(relu(self.fc1(x)))


class LayerNorm(Module):
    def __init__(self, c: int, dtype=np.float64):
        self.gain = Parameter(np.ones(c, dtype))
        self.shift = Parameter(np.zeros(c, dtype))

    def __call__(self, x):
        return layer_norm(x, self.gain, self.shift)


def adamw_step(params: Iterable[Parameter], grads=None, lr: float = 0.004,
               weight_decay: float = 0.02, beta1: float = 0.9, beta2: float = 0.999,
               eps: float = 1e-8):
    """One AdamW update in place. Weight decay is applied to the weights
    directly, not folded into the gradient."""
    if not lr > 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    params = list(params)
    grads = [p.grad for p in params] if grads is None else list(grads)
    if len(grads) != len(params):
        raise ValueError("one gradient per parameter required")
    for p, g in zip(params, grads):
        if g is None:
            g = np.zeros_like(p.data)
        p.step += 1
        if weight_decay:
            p.data -= lr * weight_decay * p.data
        p.m = beta1 * p.m + (1 - beta1) * g
        p.v = beta2 * p.v + (1 - beta2) * g * g
        mh = p.m / (1 - beta1 ** p.step)
        vh = p.v / (1 - beta2 ** p.step)
        p.data -= lr * mh / (np.sqrt(vh) + eps)


# ---------------------------------------------------------------------------
# checkpoint file

CHECKPOINT_MAGIC = b"GSPK"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, arrays: Dict[str, np.ndarray], meta: Optional[dict] = None):
    """Named little-endian float64 arrays followed by a JSON metadata block."""
    buf = bytearray(CHECKPOINT_MAGIC)
    buf += struct.pack("<II", CHECKPOINT_VERSION, len(arrays))
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        buf += struct.pack("<H", len(raw)) + raw
        buf += struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
        buf += arr.tobytes()
    blob = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    buf += struct.pack("<Q", len(blob)) + blob
    Path(path).write_bytes(bytes(buf))


def load_checkpoint(path):
    """Returns (dict of arrays, metadata dict)."""
    data = Path(path).read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, count = struct.unpack_from("<II", data, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = 12
    arrays = {}
    try:
        for _ in range(count):
            (ln,) = struct.unpack_from("<H", data, off)
            off += 2
            name = data[off:off + ln].decode("utf-8")
            off += ln
            (ndim,) = struct.unpack_from("<B", data, off)
            off += 1
            shape = struct.unpack_from(f"<{ndim}Q", data, off)
            off += 8 * ndim
            size = int(np.prod(shape)) if ndim else 1
            arrays[name] = np.frombuffer(data, "<f8", size, off).reshape(shape).astype(np.float64)
            off += 8 * size
        (ln,) = struct.unpack_from("<Q", data, off)
        meta = json.loads(data[off + 8:off + 8 + ln].decode("utf-8"))
    except (struct.error, ValueError) as exc:
        raise ValueError(f"{path}: truncated or corrupt checkpoint ({exc})") from None
    return arrays, meta
