import math

import numpy as np
import pytest

from geoseg.cloud import PointCloud
from geoseg.network import NetworkConfig, SegmentationNet, build_plan, total_loss
from geoseg.train import (confusion_matrix, evaluate_metrics, load_model, predict, save_model,
                          train)
from oracles import confusion_metrics


def cfg(**kw):
    base = dict(stage_dims=[8, 12], depths=[1, 1], k_local=4, k_global=2, gd_caps=[0.5],
                lam=0.05, num_classes=3, k_sp=3, k_adj=6, k_geo=6, sp_dia_cap=0.6, lr=0.01)
    base.update(kw)
    return NetworkConfig(**base)


def scene(seed, n=60):
    rng = np.random.default_rng(seed)
    coords = rng.random((n, 3)) * [1.5, 1.0, 0.6]
    labels = (coords[:, 2] > 0.3).astype(np.int64) + (coords[:, 0] > 1.0)
    colors = np.eye(3)[labels] * 0.6 + rng.random((n, 3)) * 0.2
    return PointCloud(coords, colors, labels)


# ---------------------------------------------------------------- metrics


def test_metrics_perfect():
    m = evaluate_metrics([0, 1, 2, 2], [0, 1, 2, 2], 3)
    assert (m.miou, m.macc, m.oa) == (1.0, 1.0, 1.0)


def test_metrics_worked_example():
    # class 0: tp 1, fn 1; class 1: tp 1, fp 1
    m = evaluate_metrics([0, 1, 1], [0, 0, 1], 2)
    assert m.miou == pytest.approx(0.5)
    assert m.macc == pytest.approx(0.75)
    assert m.oa == pytest.approx(2 / 3)


def test_absent_class_is_skipped():
    m = evaluate_metrics([0, 0], [0, 0], 4)
    assert m.miou == 1.0 and np.isnan(m.iou[3])


def test_metrics_match_counting_oracle():
    rng = np.random.default_rng(0)
    for _ in range(100):
        L = int(rng.integers(2, 7))
        n = int(rng.integers(1, 80))
        pred, true = rng.integers(0, L, n), rng.integers(0, L, n)
        m = evaluate_metrics(pred, true, L)
        want = confusion_metrics(pred.tolist(), true.tolist(), L)
        assert (m.miou, m.macc, m.oa) == pytest.approx(want, abs=1e-12)


def test_metrics_reject_bad_input():
    with pytest.raises(ValueError):
        confusion_matrix([0, 1], [0], 2)
    with pytest.raises(ValueError):
        confusion_matrix([0, 3], [0, 1], 2)


# ---------------------------------------------------------------- training


def test_empty_training_set():
    with pytest.raises(ValueError):
        train([], cfg())


def test_unlabeled_scene_rejected():
    c = scene(0)
    with pytest.raises(ValueError):
        train([PointCloud(c.coords, c.colors)], cfg(), epochs=1)


def test_zero_beta_loss_equals_point_loss():
    c = cfg(beta=0.0)
    plan = build_plan(scene(1), c)
    net = SegmentationNet(c)

    def grads(with_sp):
        net.zero_grad()
        logits, sp_logits = net(plan)
        if with_sp:
            loss = total_loss(logits, plan.labels, sp_logits, plan.soft, 0.0)
        else:
            loss = total_loss(logits, plan.labels, None, None, 0.0)
        loss.backward()
        return float(loss.data), [None if p.grad is None else p.grad.copy()
                                  for p in net.parameters()]

    (la, ga), (lb, gb) = grads(True), grads(False)
    assert la == lb
    assert all((a is None and b is None) or np.array_equal(a, b) for a, b in zip(ga, gb))


def test_overfits_a_tiny_scene():
    c = cfg(beta=0.1)
    plan = build_plan(scene(2), c)
    result = train([plan], c, epochs=50)
    assert result.history[-1]["loss"] < 0.5 * result.history[0]["loss"]
    assert result.best["OA"] >= 0.9


def test_resume_reproduces_the_trajectory(tmp_path):
    c = cfg(seed=4)
    plans = [build_plan(scene(s), c) for s in (3, 4)]
    full = train(plans, c, epochs=4)
    train(plans, c, epochs=2, out_dir=tmp_path)
    resumed = train(plans, c, epochs=4, resume=tmp_path / "last.ckpt")
    assert [r["loss"] for r in resumed.history] == [r["loss"] for r in full.history]
    fa, fb = full.net.state_arrays(), resumed.net.state_arrays()
    assert all(np.array_equal(fa[k], fb[k]) for k in fa)


def test_checkpoint_reload_is_bit_identical(tmp_path):
    c = cfg(seed=5)
    plan = build_plan(scene(5), c)
    net = train([plan], c, epochs=2).net
    save_model(tmp_path / "m.ckpt", net, epoch=1)
    back, meta = load_model(tmp_path / "m.ckpt")
    assert meta["epoch"] == 1
    assert np.array_equal(net(plan)[0].data, back(plan)[0].data)
    assert np.array_equal(predict(net, plan), predict(back, plan))


def test_writes_artifacts(tmp_path):
    c = cfg()
    result = train([scene(6)], c, [scene(7)], epochs=2, out_dir=tmp_path)
    assert (tmp_path / "best.ckpt").exists() and (tmp_path / "last.ckpt").exists()
    lines = (tmp_path / "metrics.csv").read_text().splitlines()
    assert lines[0] == "epoch,loss,mIoU,mAcc,OA" and len(lines) == 3
    assert all(math.isfinite(r["mIoU"]) for r in result.history)
