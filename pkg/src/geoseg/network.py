"""Two-branch encoder/decoder for point cloud segmentation.

The local branch runs geometry-informed aggregation blocks over the points
and shrinks the cloud stage by stage. The global branch runs self-attention
among superpoints (one per geometric partition) and halves their number
each stage; stage-matched superpoints feed the partition-attention half of
every local block. A mirrored decoder upsamples by 3-NN interpolation.

All geometry that does not depend on learned weights (partition, neighbour
tables, downsampling groups, interpolation weights) is computed once per
scene in a ``ScenePlan``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .cloud import PointCloud, build_adjacency, fps_sample, knn_table
from .downsample import geometric_groups
from .features import compute_geometric_features
from .gia import GiaParams, NeighborContext, VectorAttention, build_context, geometry_informed_aggregation
from .partition import PartitionProblem, cut_pursuit, enforce_diameter_cap
from .superpoint import SuperpointEmbedding, global_descriptor, pool_mean, soft_pseudo_labels
from .tensor import (LayerNorm, Linear, Module, Tensor, add, cross_entropy, gather, make_rng,
                     max_axis, mul, relu, segment_max, tsum)

INPUT_CHANNELS = 8  # rgb, 4 geometric features, height above the scene floor


@dataclass
class NetworkConfig:
    stage_dims: List[int] = field(default_factory=lambda: [32, 64, 128, 256, 512])
    depths: List[int] = field(default_factory=lambda: [1, 2, 2, 6, 2])
    k_local: int = 16
    k_global: int = 8
    gd_caps: List[float] = field(default_factory=lambda: [0.10, 0.20, 0.40, 0.80])
    sp_dia_cap: float = 1.0
    lam: float = 3.0
    beta: float = 0.1
    lr: float = 0.004
    weight_decay: float = 0.02
    epochs: int = 100
    batch: int = 1
    seed: int = 0
    num_classes: int = 13
    sampler: str = "gd"  # "gd" or "fps"
    fps_ratio: float = 0.25
    k_sp: int = 8
    k_adj: int = 10
    k_geo: int = 10
    dtype: str = "float64"

    def __post_init__(self):
        self.validate()

    def validate(self):
        S = len(self.stage_dims)
        if S < 1 or len(self.depths) != S or len(self.gd_caps) != S - 1:
            raise ValueError("need len(stage_dims) == len(depths) == len(gd_caps) + 1")
        if min(self.stage_dims) <= 0 or min(self.depths) < 0:
            raise ValueError("stage dims must be positive and depths nonnegative")
        if any(c <= 0 for c in self.gd_caps) or self.sp_dia_cap <= 0:
            raise ValueError("size caps must be positive")
        if self.k_local < 1 or self.k_global < 0 or self.k_sp < 1:
            raise ValueError("neighbour counts out of range")
        if self.beta < 0 or self.lam < 0:
            raise ValueError("beta and lambda must be nonnegative")
        if self.sampler not in ("gd", "fps"):
            raise ValueError(f"unknown sampler {self.sampler!r}")
        if not 0 < self.fps_ratio <= 1:
            raise ValueError("fps_ratio must lie in (0, 1]")
        if self.num_classes < 1 or self.epochs < 0 or self.batch < 1:
            raise ValueError("num_classes, epochs and batch must be positive")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    @property
    def num_stages(self):
        return len(self.stage_dims)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **kw) -> "NetworkConfig":
        return dataclasses.replace(self, **kw)


PRESETS: Dict[str, dict] = {
    "s3dis": dict(lam=3.0, num_classes=13, gd_caps=[0.10, 0.20, 0.40, 0.80]),
    "scannet": dict(lam=2.0, num_classes=20, gd_caps=[0.25, 0.50, 0.75, 1.00]),
    # sized for synthetic rooms at ~12 points per square meter
    "toy": dict(stage_dims=[16, 32, 64], depths=[1, 1, 1], k_local=8, k_global=4,
                gd_caps=[1.0, 2.0], lam=0.05, epochs=200, num_classes=6, sp_dia_cap=1.0,
                dtype="float32"),
}


def preset(name: str, **overrides) -> NetworkConfig:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    d = NetworkConfig().to_dict()
    d.update(PRESETS[name])
    d.update(overrides)
    return NetworkConfig.from_dict(d)


# ---------------------------------------------------------------------------
# per-scene geometry


def interpolation_weights(fine: np.ndarray, coarse: np.ndarray, k: int = 3):
    """Inverse-distance weights of the k nearest coarse points (rows sum to 1).

    A fine point that coincides with a coarse point copies it exactly.
    """
    k = min(k, len(coarse))
    idx, dist = knn_table(coarse, k, queries=fine)
    zero = dist <= 1e-12
    w = 1.0 / np.maximum(dist, 1e-12)
    # a coincident point takes all the weight (the first one if several)
    hit = zero.any(axis=1)
    first = np.argmax(zero[hit], axis=1)
    w[hit] = 0.0
    w[np.flatnonzero(hit), first] = 1.0
    return idx, w / w.sum(axis=1, keepdims=True)


def input_features(cloud: PointCloud, geo: np.ndarray) -> np.ndarray:
    colors = cloud.colors if cloud.colors is not None else np.full((cloud.n, 3), 0.5)
    height = cloud.coords[:, 2:3] - cloud.coords[:, 2].min()
    return np.hstack([colors, geo, height])


@dataclass
class ScenePlan:
    coords: List[np.ndarray]  # per stage
    partition: List[np.ndarray]  # per stage, inherited ids
    ctx: List[NeighborContext]
    trans: List[dict]  # stage s -> s+1
    interp: List[tuple]  # decoder: stage s+1 -> s, (idx, weights)
    sp_coords: List[np.ndarray]
    sp_idx: List[np.ndarray]
    sp_keep: List[np.ndarray]
    feats: np.ndarray  # n x INPUT_CHANNELS
    component: np.ndarray  # point -> superpoint (stage 0)
    sp_desc: np.ndarray
    labels: Optional[np.ndarray] = None
    soft: Optional[np.ndarray] = None

    @property
    def n(self):
        return len(self.coords[0])

    @property
    def sp_counts(self):
        return [len(c) for c in self.sp_coords]


def superpoint_schedule(m: int, stages: int) -> List[int]:
    out = [m]
    for _ in range(stages - 1):
        out.append(math.ceil(out[-1] / 2))
    return out


def partition_scene(cloud: PointCloud, cfg: NetworkConfig):
    """(geometric features, component ids) for a cloud under the config."""
    geo = compute_geometric_features(cloud, cfg.k_geo).features
    graph = build_adjacency(cloud, min(cfg.k_adj, cloud.n - 1))
    problem = PartitionProblem(graph, geo, cfg.lam)
    result = enforce_diameter_cap(cut_pursuit(problem), cloud, cfg.sp_dia_cap, problem)
    return geo, result.component


def build_plan(cloud: PointCloud, cfg: NetworkConfig, component: Optional[np.ndarray] = None,
               geo: Optional[np.ndarray] = None) -> ScenePlan:
    if cloud.n < 2:
        raise ValueError("a scene needs at least two points")
    if component is None or geo is None:
        g2, c2 = partition_scene(cloud, cfg)
        geo = g2 if geo is None else geo
        component = c2 if component is None else component
    component = np.asarray(component, dtype=np.int64)
    S = cfg.num_stages
    coords = [cloud.coords]
    parts = [component]
    trans = []
    for s in range(S - 1):
        P, part = coords[-1], parts[-1]
        if cfg.sampler == "gd":
            group = geometric_groups(P, part, cfg.gd_caps[s])
            m = int(group.max()) + 1
            newP = pool_mean(P, group, m)
            newpart = np.zeros(m, np.int64)
            newpart[group] = part
            trans.append(dict(kind="gd", group=group, m=m))
        else:
            count = max(1, math.ceil(len(P) * cfg.fps_ratio))
            idx = fps_sample(P, count)
            nbr, _ = knn_table(P, min(cfg.k_local, len(P)), queries=P[idx])
            newP, newpart = P[idx], part[idx]
            trans.append(dict(kind="fps", idx=idx, nbr=nbr))
        coords.append(newP)
        parts.append(newpart)

    m0 = int(component.max()) + 1
    sp_coords = [pool_mean(cloud.coords, component, m0)]
    sp_keep = []
    for s in range(S - 1):
        cur = sp_coords[-1]
        keep = fps_sample(cur, math.ceil(len(cur) / 2))
        sp_keep.append(keep)
        sp_coords.append(cur[keep])
    sp_idx = [knn_table(c, min(cfg.k_sp, len(c)))[0] for c in sp_coords]
    ctx = []
    for s in range(S):
        kg = min(cfg.k_global, len(sp_coords[s]))
        ctx.append(build_context(coords[s], min(cfg.k_local, len(coords[s])), sp_coords[s], kg))
    interp = [interpolation_weights(coords[s], coords[s + 1]) for s in range(S - 1)]
    soft = None
    if cloud.labels is not None:
        if cloud.labels.max() >= cfg.num_classes:
            raise ValueError(f"label {cloud.labels.max()} outside [0, {cfg.num_classes})")
        soft = soft_pseudo_labels(cloud.labels, component, cfg.num_classes).w
    return ScenePlan(coords, parts, ctx, trans, interp, sp_coords, sp_idx, sp_keep,
                     input_features(cloud, geo), component, global_descriptor(component, cloud.coords),
                     cloud.labels, soft)


# ---------------------------------------------------------------------------
# model


@dataclass
class StageSuperpoints:
    coords: np.ndarray
    features: Tensor


@dataclass
class StageState:
    feats: List[Tensor]
    sp: List[StageSuperpoints]


class GiaBlock(Module):
    def __init__(self, rng, c, dtype):
        self.gia = GiaParams(rng, c, dtype)
        self.norm = LayerNorm(c, dtype)

    def __call__(self, f, coords, sp, ctx):
        return relu(f + self.norm(geometry_informed_aggregation(f, coords, sp, ctx, self.gia)))


class Transition(Module):
    """Map to the next width, then pool each group (max)."""

    def __init__(self, rng, c_in, c_out, dtype):
        self.fc = Linear(rng, c_in, c_out, dtype=dtype)
        self.norm = LayerNorm(c_out, dtype)

    def __call__(self, f, trans):
        mapped = relu(self.norm(self.fc(f)))
        if trans["kind"] == "gd":
            return segment_max(mapped, trans["group"], trans["m"])
        return max_axis(gather(mapped, trans["nbr"]))


class GlobalStage(Module):
    def __init__(self, rng, c_in, c_out, dtype):
        self.attn = VectorAttention(rng, c_in, dtype)
        self.norm = LayerNorm(c_in, dtype)
        self.proj = Linear(rng, c_in, c_out, dtype=dtype)

    def __call__(self, x, coords, idx):
        h = relu(x + self.norm(self.attn(x, coords, idx)))
        return self.proj(h)


class DecoderStage(Module):
    def __init__(self, rng, c_coarse, c_fine, dtype):
        self.up = Linear(rng, c_coarse, c_fine, dtype=dtype)
        self.fc = Linear(rng, c_fine, c_fine, dtype=dtype)
        self.norm = LayerNorm(c_fine, dtype)

    def __call__(self, coarse, fine, interp):
        idx, w = interp
        return relu(self.norm(self.fc(interpolate(self.up(coarse), idx, w) + fine)))


def interpolate(feats: Tensor, idx: np.ndarray, w: np.ndarray) -> Tensor:
    n, k = idx.shape
    wt = Tensor(w.reshape(n, k, 1).astype(feats.data.dtype))
    return tsum(mul(gather(feats, idx), wt), axis=1)


class SegmentationNet(Module):
    def __init__(self, cfg: NetworkConfig, c_in: int = INPUT_CHANNELS):
        self.cfg = cfg
        dt = np.dtype(cfg.dtype)
        rng = make_rng(cfg.seed)
        d = cfg.stage_dims
        S = cfg.num_stages
        self.stem = Linear(rng, c_in, d[0], dtype=dt)
        self.stem_norm = LayerNorm(d[0], dt)
        self.embed = SuperpointEmbedding(rng, c_in, d[0], d[0], dtype=dt)
        self.global_stages = [GlobalStage(rng, d[max(s - 1, 0)], d[s], dt) for s in range(S)]
        self.blocks = [[GiaBlock(rng, d[s], dt) for _ in range(cfg.depths[s])] for s in range(S)]
        self.transitions = [Transition(rng, d[s], d[s + 1], dt) for s in range(S - 1)]
        self.decoders = [DecoderStage(rng, d[s + 1], d[s], dt) for s in range(S - 1)]
        self.head = Linear(rng, d[0], cfg.num_classes, dtype=dt)
        self.sp_head = Linear(rng, d[0], cfg.num_classes, dtype=dt)

    def named_parameters(self, prefix: str = ""):
        yield from self.stem.named_parameters("stem.")
        yield from self.stem_norm.named_parameters("stem_norm.")
        yield from self.embed.named_parameters("embed.")
        for s, g in enumerate(self.global_stages):
            yield from g.named_parameters(f"global.{s}.")
        for s, blocks in enumerate(self.blocks):
            for b, blk in enumerate(blocks):
                yield from blk.named_parameters(f"block.{s}.{b}.")
        for s, t in enumerate(self.transitions):
            yield from t.named_parameters(f"down.{s}.")
        for s, dec in enumerate(self.decoders):
            yield from dec.named_parameters(f"up.{s}.")
        yield from self.head.named_parameters("head.")
        yield from self.sp_head.named_parameters("sp_head.")

    # -- branches ---------------------------------------------------------

    def uses_global(self) -> bool:
        return self.cfg.k_global > 0 or self.cfg.beta > 0

    def global_branch_forward(self, plan: ScenePlan, x0: Tensor) -> List[StageSuperpoints]:
        """Superpoint features for every stage (counts halve, rounding up)."""
        sp = self.embed(x0, plan.coords[0], plan.component, plan.sp_desc)
        x = sp.features
        out = []
        for s, stage in enumerate(self.global_stages):
            if s > 0:
                x = gather(x, plan.sp_keep[s - 1])
            g = stage(x, plan.sp_coords[s], plan.sp_idx[s])
            out.append(StageSuperpoints(plan.sp_coords[s], g))
            x = g
        return out

    def encoder_forward(self, plan: ScenePlan, x0: Tensor, sps) -> StageState:
        f = relu(self.stem_norm(self.stem(x0)))
        feats = []
        for s in range(self.cfg.num_stages):
            sp = sps[s] if sps is not None else None
            for blk in self.blocks[s]:
                f = blk(f, plan.coords[s], sp, plan.ctx[s])
            feats.append(f)
            if s < self.cfg.num_stages - 1:
                f = self.transitions[s](f, plan.trans[s])
        return StageState(feats, sps or [])

    def decoder_forward(self, plan: ScenePlan, state: StageState):
        f = state.feats[-1]
        for s in range(self.cfg.num_stages - 2, -1, -1):
            f = self.decoders[s](f, state.feats[s], plan.interp[s])
        logits = self.head(f)
        sp_logits = self.sp_head(state.sp[0].features) if state.sp else None
        return logits, sp_logits

    def forward(self, plan: ScenePlan):
        x0 = Tensor(plan.feats.astype(self.cfg.dtype))
        sps = self.global_branch_forward(plan, x0) if self.uses_global() else None
        state = self.encoder_forward(plan, x0, sps)
        return self.decoder_forward(plan, state)

    __call__ = forward

    # -- weights ----------------------------------------------------------

    def state_arrays(self, with_optimizer: bool = False) -> Dict[str, np.ndarray]:
        out = {}
        for name, p in self.named_parameters():
            out[name] = p.data
            if with_optimizer:
                out[name + "#m"] = p.m
                out[name + "#v"] = p.v
        return out

    def load_arrays(self, arrays: Dict[str, np.ndarray], steps: Optional[Dict[str, int]] = None):
        for name, p in self.named_parameters():
            if name not in arrays:
                raise ValueError(f"checkpoint lacks parameter {name}")
            if arrays[name].shape != p.shape:
                raise ValueError(f"{name}: shape {arrays[name].shape} != {p.shape}")
            p.data = arrays[name].astype(p.data.dtype)
            if name + "#m" in arrays:
                p.m = arrays[name + "#m"].astype(p.data.dtype)
                p.v = arrays[name + "#v"].astype(p.data.dtype)
            if steps is not None:
                p.step = int(steps.get(name, 0))


def total_loss(point_logits: Tensor, labels, sp_logits: Optional[Tensor], soft, beta: float) -> Tensor:
    """Mean point cross-entropy plus beta times the superpoint cross-entropy
    against soft label distributions."""
    if beta < 0:
        raise ValueError(f"beta must be nonnegative, got {beta}")
    loss = cross_entropy(point_logits, labels)
    if beta > 0:
        if sp_logits is None or soft is None:
            raise ValueError("beta > 0 needs superpoint logits and soft labels")
        loss = add(loss, mul(cross_entropy(sp_logits, soft), beta))
    return loss
