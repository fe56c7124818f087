"""Training loop, checkpoints and segmentation metrics."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np

from .cloud import PointCloud
from .network import NetworkConfig, ScenePlan, SegmentationNet, build_plan, total_loss
from .tensor import adamw_step, load_checkpoint, make_rng, mul, no_grad, save_checkpoint

log = logging.getLogger(__name__)


@dataclass
class Metrics:
    miou: float
    macc: float
    oa: float
    iou: np.ndarray  # per class, NaN where the class is absent from both

    def as_row(self):
        return {"mIoU": self.miou, "mAcc": self.macc, "OA": self.oa}


def confusion_matrix(pred, true, num_classes: int) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.int64)
    true = np.asarray(true, dtype=np.int64)
    if pred.shape != true.shape:
        raise ValueError(f"{len(pred)} predictions for {len(true)} labels")
    if len(true) and (min(pred.min(), true.min()) < 0 or max(pred.max(), true.max()) >= num_classes):
        raise ValueError(f"classes must lie in [0, {num_classes})")
    return np.bincount(true * num_classes + pred, minlength=num_classes ** 2).reshape(
        num_classes, num_classes)


def metrics_from_confusion(conf: np.ndarray) -> Metrics:
    conf = np.asarray(conf, dtype=np.float64)
    tp = np.diag(conf)
    fp = conf.sum(axis=0) - tp
    fn = conf.sum(axis=1) - tp
    denom = tp + fp + fn
    iou = np.where(denom > 0, tp / np.where(denom > 0, denom, 1), np.nan)
    support = tp + fn
    recall = np.where(support > 0, tp / np.where(support > 0, support, 1), np.nan)
    total = conf.sum()
    oa = float(tp.sum() / total) if total else float("nan")
    miou = float(np.nanmean(iou)) if np.any(denom > 0) else float("nan")
    macc = float(np.nanmean(recall)) if np.any(support > 0) else float("nan")
    return Metrics(miou, macc, oa, iou)


def evaluate_metrics(pred, true, num_classes: int) -> Metrics:
    """mIoU over classes that occur in prediction or truth, mean recall over
    classes present in the truth, and overall accuracy."""
    return metrics_from_confusion(confusion_matrix(pred, true, num_classes))


def predict(net: SegmentationNet, plan: ScenePlan) -> np.ndarray:
    with no_grad():
        logits, _ = net(plan)
    return np.argmax(logits.data, axis=1)


def evaluate_plans(net: SegmentationNet, plans: Sequence[ScenePlan]) -> Metrics:
    L = net.cfg.num_classes
    conf = np.zeros((L, L), np.int64)
    for plan in plans:
        conf += confusion_matrix(predict(net, plan), plan.labels, L)
    return metrics_from_confusion(conf)


# ---------------------------------------------------------------------------
# checkpoints


def save_model(path, net: SegmentationNet, epoch: int, rng=None, extra: Optional[dict] = None,
               with_optimizer: bool = True):
    meta = {
        "config": net.cfg.to_dict(),
        "epoch": epoch,
        "steps": {name: p.step for name, p in net.named_parameters()},
        "rng": rng.bit_generator.state if rng is not None else None,
    }
    meta.update(extra or {})
    save_checkpoint(path, net.state_arrays(with_optimizer), meta)


def load_model(path):
    """Returns (net, metadata)."""
    arrays, meta = load_checkpoint(path)
    net = SegmentationNet(NetworkConfig.from_dict(meta["config"]))
    net.load_arrays(arrays, meta.get("steps"))
    return net, meta


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    net: SegmentationNet
    history: List[dict] = field(default_factory=list)
    best: Optional[dict] = None
    best_arrays: Optional[dict] = None
    seconds: float = 0.0


def _as_plans(scenes, cfg):
    out = []
    for s in scenes:
        if isinstance(s, ScenePlan):
            out.append(s)
        elif isinstance(s, PointCloud):
            if s.labels is None:
                raise ValueError("training scenes need labels")
            out.append(build_plan(s, cfg))
        else:
            raise TypeError(f"expected PointCloud or ScenePlan, got {type(s).__name__}")
    return out


def train(train_scenes: Sequence[Union[PointCloud, ScenePlan]], cfg: NetworkConfig,
          val_scenes: Sequence[Union[PointCloud, ScenePlan]] = (), out_dir=None,
          resume=None, epochs: Optional[int] = None, on_epoch=None) -> TrainResult:
    """AdamW training; one optimizer step per ``cfg.batch`` scenes.

    Validation metrics (on the training scenes when no validation set is
    given) are logged after every epoch. With ``out_dir`` the latest state
    goes to ``last.ckpt``, the best-mIoU weights to ``best.ckpt`` and the
    log to ``metrics.csv``. ``resume`` continues from a ``last.ckpt``.
    """
    if len(train_scenes) == 0:
        raise ValueError("empty training set")
    plans = _as_plans(train_scenes, cfg)
    val = _as_plans(val_scenes, cfg) if len(val_scenes) else plans
    epochs = cfg.epochs if epochs is None else epochs
    net = SegmentationNet(cfg)
    rng = make_rng(cfg.seed + 1)
    start, history, best, best_arrays = 0, [], None, None
    if resume is not None:
        arrays, meta = load_checkpoint(resume)
        net.load_arrays(arrays, meta.get("steps"))
        rng.bit_generator.state = meta["rng"]
        start = int(meta["epoch"]) + 1
        history = list(meta.get("history", []))
        best = meta.get("best")
        best_arrays = None
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    params = net.parameters()
    t0 = time.perf_counter()
    for epoch in range(start, epochs):
        order = rng.permutation(len(plans))
        losses = []
        for b in range(0, len(order), cfg.batch):
            chunk = order[b:b + cfg.batch]
            net.zero_grad()
            step_loss = 0.0
            for i in chunk:
                plan = plans[int(i)]
                logits, sp_logits = net(plan)
                loss = total_loss(logits, plan.labels, sp_logits, plan.soft, cfg.beta)
                mul(loss, 1.0 / len(chunk)).backward()
                step_loss += float(loss.data) / len(chunk)
            adamw_step(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
            losses.append(step_loss)
        m = evaluate_plans(net, val)
        row = {"epoch": epoch, "loss": float(np.mean(losses)), **m.as_row()}
        history.append(row)
        log.info("epoch %d loss %.4f mIoU %.4f OA %.4f", epoch, row["loss"], m.miou, m.oa)
        if best is None or m.miou > best["mIoU"]:
            best = row
            best_arrays = {k: v.copy() for k, v in net.state_arrays().items()}
            if out is not None:
                save_model(out / "best.ckpt", net, epoch, None, {"best": best}, with_optimizer=False)
        if out is not None:
            save_model(out / "last.ckpt", net, epoch, rng, {"history": history, "best": best})
            write_metrics_csv(out / "metrics.csv", history)
        if on_epoch is not None:
            on_epoch(row)
    return TrainResult(net, history, best, best_arrays, time.perf_counter() - t0)


def write_metrics_csv(path, history):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["epoch", "loss", "mIoU", "mAcc", "OA"])
        w.writeheader()
        for row in history:
            w.writerow({k: row[k] for k in w.fieldnames})
