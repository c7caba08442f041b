from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import builders
from oracles import brute_force_assignment
from scenefuse.config import CLASS_SIZES, MetricConfig, classes_compatible
from scenefuse.geometry import BevBox, bev_iou
from scenefuse.metrics import (
    ConsistencyReport,
    SceneCounts,
    acr_counts,
    compute_crr,
    compute_err,
    compute_he_ep_er_ef1,
    compute_mdcr,
    oracle_match,
    prf,
    rates_from_counts,
    scene_counts,
)

CFG = MetricConfig()


def _twin(gt, cls=None, dx=0.0, heading=None, sources=("lidar", "bevfusion")):
    return builders.entity(cls or gt.class_name, gt.position_bev[0] + dx, gt.position_bev[1],
                           gt.heading if heading is None else heading, sources=sources, size=gt.size)


def _gt_row(n, spacing=12.0, cls="car"):
    return [builders.gt_entity(f"g{i}", cls, 10.0 + spacing * i, 0.0) for i in range(n)]


def test_oracle_match_exact_and_empty():
    gt = _gt_row(3)
    m = oracle_match([_twin(g) for g in gt], gt)
    assert len(m.pairs) == 3 and m.unmatched_gt == () and m.unmatched_outputs == ()
    m = oracle_match([], gt)
    assert m.pairs == () and m.unmatched_gt == (0, 1, 2)
    with pytest.raises(ValueError):
        oracle_match([], gt, 1.0)


def test_oracle_match_respects_class_compatibility():
    gt = _gt_row(1)
    assert oracle_match([_twin(gt[0], "van")], gt).pairs == ((0, 0),)
    assert oracle_match([_twin(gt[0], "pedestrian")], gt).pairs == ()


def test_oracle_match_equals_exhaustive_search():
    rng = np.random.default_rng(17)
    for _ in range(40):
        n_gt, n_out = int(rng.integers(1, 6)), int(rng.integers(1, 6))
        gt = [builders.gt_entity(f"g{j}", str(rng.choice(["car", "van", "pedestrian"])), rng.uniform(0, 8),
                                 rng.uniform(0, 8), rng.uniform(-3, 3)) for j in range(n_gt)]
        outs = [builders.entity(str(rng.choice(["car", "van", "pedestrian"])), rng.uniform(0, 8), rng.uniform(0, 8),
                                rng.uniform(-3, 3)) for _ in range(n_out)]
        cost = np.full((n_out, n_gt), math.inf)
        for i, e in enumerate(outs):
            for j, g in enumerate(gt):
                iou = bev_iou(BevBox(e.position_bev, e.size[:2], e.heading), BevBox(g.position_bev, g.size[:2], g.heading))
                if iou >= 0.5 and classes_compatible(e.class_name, g.class_name):
                    cost[i, j] = 1.0 - iou
        count, best = brute_force_assignment(cost)
        m = oracle_match(outs, gt)
        assert len(m.pairs) == count
        assert math.fsum(1.0 - x for x in m.ious) == pytest.approx(best, abs=1e-12)


def test_err_hand_counts():
    gt = _gt_row(8)
    outs = [_twin(g) for g in gt] + [_twin(gt[0], dx=0.1), _twin(gt[0], dx=-0.1)]
    assert compute_err(outs, gt) == 20.0
    assert compute_err([_twin(g) for g in gt], gt) == 0.0
    assert compute_err([], gt) == 0.0


def test_acr_hand_counts():
    gt = _gt_row(2)
    agree = [_twin(g) for g in gt]
    assert acr_counts(agree, gt, CFG) == (6, 6)
    # a second report of object 0 from the camera with a different heading: 1 of 6 checks fails
    split = [_twin(gt[0], sources=("lidar",)), _twin(gt[0], heading=0.5, sources=("camera",)), _twin(gt[1])]
    assert acr_counts(split, gt, CFG) == (5, 6)
    single = [_twin(g, sources=("lidar",)) for g in gt]
    assert acr_counts(single, gt, CFG) == (0, 0)
    assert rates_from_counts(2, 2, 2, 0, 0, 0, 0, 0, 0, 0, 0, 1)["ACR"] is None


def test_he_ep_er_ef1():
    gt = _gt_row(10)
    he, ep, er, ef1 = compute_he_ep_er_ef1([_twin(g) for g in gt], gt)
    assert (he, ep, er, ef1) == (0.0, 100.0, 100.0, 100.0)
    outs = [_twin(g) for g in gt[:8]] + [builders.entity("car", -30.0, 20.0), builders.entity("car", -30.0, -20.0)]
    assert compute_he_ep_er_ef1(outs, gt) == (2.0, 80.0, 80.0, pytest.approx(80.0))
    assert compute_he_ep_er_ef1([], gt) == (0.0, 0.0, 0.0, 0.0)


@given(st.integers(0, 50), st.integers(0, 50), st.integers(0, 50))
def test_prf_bounds(matched, extra_out, extra_gt):
    ep, er, ef1 = prf(matched, matched + extra_out, matched + extra_gt)
    for v in (ep, er, ef1):
        assert v is None or 0.0 <= v <= 100.0
    if ef1 is not None:
        assert ef1 <= max(ep, er) + 1e-9


def _conflict_scene(scene_id, n_objects, fixed):
    """Objects that LiDAR calls ``car`` and BEVFusion calls ``van``; the first ``fixed`` outputs are correct."""
    gt = _gt_row(n_objects)
    lid = [builders.detection(i, "car", g.position_bev[0], 0.0) for i, g in enumerate(gt)]
    bev = [builders.detection(i, "van", g.position_bev[0], 0.0) for i, g in enumerate(gt)]
    facts = builders.facts(scene_id, {"lidar": lid, "bevfusion": bev})
    outs = [_twin(g, "car" if i < fixed else "van") for i, g in enumerate(gt)]
    return builders.summary(scene_id, outs), builders.gt_scene(scene_id, gt), facts


def test_crr_micro_average_differs_from_macro():
    report = ConsistencyReport("x")
    for sid, n, fixed in (("a", 2, 2), ("b", 1, 0)):
        s, g, f = _conflict_scene(sid, n, fixed)
        report.scenes.append(scene_counts(s, g, f, None, CFG))
    assert [(c.conflicts, c.conflicts_fixed) for c in report.scenes] == [(2, 2), (1, 0)]
    assert report.micro()["CRR"] == pytest.approx(200.0 / 3.0, abs=1e-12)
    macro = np.mean([c.rates()["CRR"] for c in report.scenes])
    assert macro == 50.0
    assert compute_crr([(2, 2), (1, 0)]) == pytest.approx(66.6666666667)
    assert compute_crr([(3, 3)]) == 100.0 and compute_crr([(0, 0)]) is None


def test_conflict_is_not_fixed_when_the_object_is_reported_twice():
    s, g, f = _conflict_scene("a", 1, 1)
    dup = builders.summary("a", list(s.entities) + [_twin(g.entities[0], dx=0.2)])
    assert scene_counts(dup, g, f, None, CFG).conflicts_fixed == 0


def test_mdcr_hand_counts():
    gt = _gt_row(4)
    lid = [builders.detection(i, "car", g.position_bev[0], 0.0) for i, g in enumerate(gt)]
    facts = builders.facts("m", {"lidar": lid, "bevfusion": []})
    summary = builders.summary("m", [_twin(g) for g in gt[:3]])
    c = scene_counts(summary, builders.gt_scene("m", gt), facts, None, CFG)
    assert (c.misses, c.misses_compensated) == (4, 3)
    assert c.rates()["MDCR"] == 75.0
    perfect = builders.facts("m", {"lidar": lid, "bevfusion": lid})
    assert scene_counts(summary, builders.gt_scene("m", gt), perfect, None, CFG).rates()["MDCR"] is None
    assert compute_mdcr([(4, 3)]) == 75.0 and compute_mdcr([(4, 4)]) == 100.0


def test_micro_average_equals_pooled_counts(ablation):
    _, ica, _ = ablation
    t = ica.totals()
    m = ica.micro()
    assert m["ERR"] == pytest.approx(100.0 * t["duplicates"] / t["outputs"])
    assert m["CRR"] == pytest.approx(100.0 * t["conflicts_fixed"] / t["conflicts"])
    assert m["HE"] == pytest.approx((t["outputs"] - t["matched"]) / len(ica.scenes))


def test_metric_bounds_on_simulated_runs(ablation):
    _, ica, naive = ablation
    for report in (ica, naive):
        for sc in report.scenes:
            r = sc.rates()
            for k in ("ERR", "ACR", "CRR", "MDCR", "EP", "ER", "EF1"):
                assert r[k] is None or 0.0 <= r[k] <= 100.0
            if r["EF1"] is not None:
                assert r["EF1"] <= max(r["EP"], r["ER"]) + 1e-9


def test_scene_id_mismatch_is_rejected():
    s, g, _ = _conflict_scene("a", 1, 1)
    with pytest.raises(ValueError):
        scene_counts(s, builders.gt_scene("b", g.entities), None, None, CFG)


def test_scene_counts_serializes():
    d = SceneCounts("s", outputs=2, gt=2, matched=2).to_dict()
    assert d["metrics"]["EP"] == 100.0 and d["scene_id"] == "s"
