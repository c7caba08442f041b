from __future__ import annotations

import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import builders
from oracles import random_spd
from scenefuse.association import Observation, Seed
from scenefuse.config import CLASS_VOCABULARY, FusionConfig
from scenefuse.errors import ParameterError
from scenefuse.fusion import (
    ReliabilityLedger,
    WeightInputs,
    ambiguity_flags,
    build_scene_summary,
    chi2_quantile,
    compute_weights,
    consistency_factor,
    covariance_intersection,
    frame_score,
    fuse_categorical,
    fuse_continuous,
    fuse_seed,
)
from scenefuse.serialize import serialize

CFG = FusionConfig()
unit = st.floats(0.0, 1.0)
weight_inputs = st.builds(WeightInputs, unit, unit, unit, unit, unit)


def test_weights_symmetric_and_zero_factor():
    w, fb = compute_weights([WeightInputs(1, 1, 1, 1, 1)] * 4)
    assert np.allclose(w, 0.25) and not fb
    w, _ = compute_weights([WeightInputs(1, 1, 1, 1, 0.0), WeightInputs(1, 1, 1, 1, 1), WeightInputs(1, 1, 1, 1, 1)])
    assert w[0] == 0.0 and np.allclose(w[1:], 0.5)


def test_weights_hand_computed():
    inputs = [WeightInputs(0.9, 0.8, 0.5), WeightInputs(0.5, 1.0, 0.4, 0.5), WeightInputs(0.2, 0.5, 1.0, 1.0, 0.5)]
    raw = np.array([0.36, 0.1, 0.05])
    w, _ = compute_weights(inputs)
    assert np.allclose(w, raw / raw.sum(), atol=1e-15)


@given(st.lists(weight_inputs, min_size=1, max_size=6))
def test_weights_sum_to_one(inputs):
    w, fallback = compute_weights(inputs)
    assert abs(w.sum() - 1.0) <= 1e-9
    assert np.all(w >= 0)
    if fallback:
        assert all(x.raw == 0 for x in inputs)


def test_weight_factor_outside_unit_interval_rejected():
    with pytest.raises(ParameterError):
        WeightInputs(1.2, 1, 1)


def test_all_zero_weights_fall_back_to_most_confident():
    w, fb = compute_weights([WeightInputs(0, 1, 0.3), WeightInputs(0, 1, 0.9)])
    assert fb and list(w) == [0.0, 1.0]


def test_consistency_factor():
    assert consistency_factor([1, 2], [1, 2], np.eye(2)) == 1.0
    assert consistency_factor([1, 0], [0, 0], np.eye(2)) == pytest.approx(math.exp(-1), abs=1e-6)
    vals = [consistency_factor([r, 0], [0, 0], np.eye(2)) for r in (0.5, 1, 2, 4, 8)]
    assert all(a > b for a, b in zip(vals, vals[1:])) and vals[-1] < 1e-20


def test_reliability_update():
    led = ReliabilityLedger(beta=0.9, initial=1.0)
    assert led.update("lidar", 1.0) == 1.0
    assert led.update("lidar", 0.0) == pytest.approx(0.9)
    led = ReliabilityLedger(beta=0.9, initial=1.0)
    for _ in range(22):
        r = led.update("radar", 0.0)
    assert r < 0.1
    assert r == pytest.approx(0.9 ** 22)
    with pytest.raises(ParameterError):
        led.update("radar", 0.3)


@given(st.floats(0, 1), st.floats(0, 1), st.lists(st.sampled_from([0.0, 0.5, 1.0]), max_size=30))
def test_reliability_stays_in_unit_interval(beta, r0, scores):
    led = ReliabilityLedger(beta, r0)
    for s in scores:
        assert 0.0 <= led.update("lidar", s) <= 1.0


def test_ledger_state_round_trip(tmp_path):
    led = ReliabilityLedger(0.9, 0.8)
    led.update("lidar", 0.5, 100)
    led.save(tmp_path / "l.json")
    back = ReliabilityLedger.load(tmp_path / "l.json")
    assert back.get("lidar") == led.get("lidar") and back.last_update_us == {"lidar": 100}
    assert ReliabilityLedger.load(tmp_path / "missing.json").get("lidar") == 0.8


def test_frame_score_thresholds():
    assert frame_score(chi2_quantile(0.95, 2), 2, CFG) == 1.0
    assert frame_score(chi2_quantile(0.95, 2) + 0.01, 2, CFG) == 0.5
    assert frame_score(chi2_quantile(0.99, 2) + 0.01, 2, CFG) == 0.0


def test_fuse_continuous_hand_cases():
    x, cov, fb = fuse_continuous([[0.0], [2.0]], [np.eye(1), np.eye(1)], [0.5, 0.5])
    assert not fb and x[0] == pytest.approx(1.0) and cov[0, 0] == pytest.approx(1.0)
    S = np.array([[2.0, 0.3], [0.3, 1.0]])
    x, cov, _ = fuse_continuous([[1.0, -2.0]], [S], [1.0])
    assert np.allclose(x, [1.0, -2.0], atol=1e-12) and np.allclose(cov, S, atol=1e-12)


@given(st.lists(st.floats(0.01, 1.0), min_size=1, max_size=5), st.integers(0, 10**6))
def test_fuse_continuous_consensus(weights, seed):
    rng = np.random.default_rng(seed)
    x0 = rng.uniform(-50, 50, 2)
    w = np.array(weights) / sum(weights)
    x, _, _ = fuse_continuous([x0] * len(w), [random_spd(rng, 2) for _ in w], w)
    assert np.allclose(x, x0, atol=1e-9)


def test_covariance_intersection_cases():
    S = np.array([[0.5, 0.1], [0.1, 0.3]])
    xa, xb = np.array([1.0, 2.0]), np.array([3.0, -2.0])
    x, cov = covariance_intersection(xa, S, xb, S, 0.5)
    assert np.allclose(cov, S, atol=1e-12) and np.allclose(x, (xa + xb) / 2, atol=1e-12)
    x, cov = covariance_intersection(xa, S, xb, 2 * S, 1 - 1e-9)
    assert np.allclose(x, xa, atol=1e-6) and np.allclose(cov, S, atol=1e-6)
    for bad in (0.0, 1.0, -0.1):
        with pytest.raises(ParameterError):
            covariance_intersection(xa, S, xb, S, bad)


def test_covariance_intersection_information_is_convex_combination():
    rng = np.random.default_rng(2)
    for _ in range(100):
        A, B = random_spd(rng, 2), random_spd(rng, 2)
        w = rng.uniform(0.01, 0.99)
        _, cov = covariance_intersection(rng.normal(size=2), A, rng.normal(size=2), B, w)
        target = w * np.linalg.inv(A) + (1 - w) * np.linalg.inv(B)
        assert np.allclose(np.linalg.inv(cov), target, atol=1e-9)


def test_fuse_categorical_cases():
    assert fuse_categorical([{"truck": 1.0}], [1.0])[:2] == ("truck", 1.0)
    cls, conf, table = fuse_categorical([{"van": 1.0}, {"car": 1.0}], [0.5, 0.5])
    assert cls == "car" and conf == 0.5 and table["van"] == 0.5
    cls, conf, table = fuse_categorical([{"car": 0.8, "van": 0.2}, {"van": 1.0}, {"car": 0.5, "truck": 0.5}],
                                        [0.5, 0.3, 0.2])
    assert cls == "car" and conf == pytest.approx(0.5)
    assert table["van"] == pytest.approx(0.4) and table["truck"] == pytest.approx(0.1)
    assert ambiguity_flags(conf, [], CFG) == {"class_ambiguous"}


@given(st.lists(st.floats(0.01, 1.0), min_size=2, max_size=4), st.floats(0.1, 10.0))
def test_fuse_categorical_ignores_weight_scale(weights, scale):
    probs = [{CLASS_VOCABULARY[i % 3]: 1.0} for i in range(len(weights))]
    w = np.array(weights) / sum(weights)
    a = fuse_categorical(probs, w)
    b = fuse_categorical(probs, w * scale)
    assert a[0] == b[0] and b[1] == pytest.approx(a[1] * scale)


def test_ambiguity_boundaries():
    assert ambiguity_flags(1.0, [0.0, 0.0], CFG) == set()
    assert ambiguity_flags(CFG.tau_cls - 0.01, [0.0], CFG) == {"class_ambiguous"}
    assert chi2_quantile(0.95, 2) == pytest.approx(5.991, abs=1e-3)
    assert ambiguity_flags(1.0, [6.5], CFG) == {"geometry_ambiguous"}
    assert ambiguity_flags(1.0, [5.9], CFG) == set()


def _seed(*members) -> Seed:
    return Seed([Observation(kind, det) for kind, det in members])


def test_disagreeing_classes_produce_one_resolved_entity():
    lid = builders.detection(1, "truck", 20.0, 0.0)
    bev = dataclasses.replace(builders.detection(2, "van", 20.05, 0.02), class_probs={"van": 1.0})
    out = fuse_seed(_seed(("lidar", lid), ("bevfusion", bev)), {}, CFG)
    e = out.entity
    assert e.conflict_resolved
    assert e.conflict_values == {"bevfusion": "van", "lidar": "truck"}
    assert e.lineage["class"]["values"] == {"bevfusion": "van", "lidar": "truck"}
    assert e.class_name in ("van", "truck")


def test_agreeing_sources_have_no_flags():
    lid = builders.detection(1, "car", 20.0, 0.0)
    out = fuse_seed(_seed(("lidar", lid), ("bevfusion", dataclasses.replace(lid, local_id=2))), {}, CFG)
    assert out.entity.ambiguity_flags == frozenset()
    assert not out.entity.conflict_resolved
    assert out.entity.position_bev == (20.0, 0.0)


def test_single_source_flag():
    out = fuse_seed(_seed(("lidar", builders.detection(1, "car", 5.0, 5.0))), {}, CFG)
    assert "single_source" in out.entity.ambiguity_flags


def test_empty_summary_lists_whole_vocabulary_absent():
    s = build_scene_summary([], "s", 0, 0.0)
    assert s.entities == () and s.entity_types_absent == CLASS_VOCABULARY


def test_summary_is_independent_of_input_order(default_scenes):
    rng = np.random.default_rng(4)
    for _, summary in default_scenes[:30]:
        ents = list(summary.entities)
        rng.shuffle(ents)
        again = build_scene_summary(ents, summary.scene_id, summary.timestamp_us, summary.ego_speed)
        assert serialize(again) == serialize(summary)


def test_summary_numbering_is_canonical(default_scenes):
    for _, summary in default_scenes[:30]:
        assert summary.entity_ids == tuple(f"ID_{i}" for i in range(1, len(summary.entities) + 1))
        xs = [e.position_bev[0] for e in summary.entities]
        assert xs == sorted(xs)
