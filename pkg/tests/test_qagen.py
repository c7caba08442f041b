from __future__ import annotations

import dataclasses
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

import builders
from scenefuse.config import QaConfig
from scenefuse.qagen import (
    EGO,
    FAMILIES,
    SceneObject,
    candidates,
    collision_risk,
    count_matching,
    decision_label,
    ego_object,
    generate_qa,
    reference_answer,
    relation_holds,
    scene_objects,
    time_to_collision,
)

CFG = QaConfig()
coord = st.floats(-60, 60, allow_nan=False)
objects = st.builds(lambda x, y, h: SceneObject("o", "car", (x, y), (0.0, 0.0), h), coord, coord,
                    st.floats(-math.pi, math.pi))


def _obj(oid, cls, x, y, v=(0.0, 0.0), heading=0.0):
    return SceneObject(oid, cls, (x, y), v, heading)


@given(objects, objects)
def test_relations_are_mutually_exclusive(a, b):
    held = {r: relation_holds(a, b, r, CFG) for r in ("front", "behind", "left", "right")}
    assert not (held["front"] and held["behind"])
    assert not (held["left"] and held["right"])
    assert not ((held["front"] or held["behind"]) and (held["left"] or held["right"]))


@given(objects, objects)
def test_relations_agree_with_reference(a, b):
    for rel in ("front", "behind", "left", "right", "near"):
        expect = reference_answer("relation", {"subject": "s", "object": "t", "rel": rel},
                                  [dataclasses.replace(a, object_id="s"), dataclasses.replace(b, object_id="t")],
                                  0.0, CFG)
        assert ("Yes" if relation_holds(a, b, rel, CFG) else "No") == expect


def test_relation_hand_cases():
    ego = ego_object(0.0)
    assert relation_holds(ego, _obj("a", "car", 10, 0), "front")
    assert relation_holds(ego, _obj("a", "car", -10, 1.9), "behind")
    assert relation_holds(ego, _obj("a", "car", 3, 2.5), "left")
    assert relation_holds(ego, _obj("a", "car", 3, -2.5), "right")
    # relations are read in the subject's frame: a truck facing +y sees a point at +y as ahead of it
    truck = _obj("t", "truck", 0, 0, heading=math.pi / 2)
    assert relation_holds(truck, _obj("a", "car", 0, 10), "front")
    assert relation_holds(truck, _obj("a", "car", 10, 0), "right")
    with pytest.raises(ValueError):
        relation_holds(ego, truck, "above")


def test_near_is_monotone_in_threshold():
    ego = ego_object(0.0)
    for d in (1.0, 9.9, 10.0, 10.1, 25.0):
        o = _obj("a", "car", d, 0)
        thresholds = [QaConfig(near_m=r) for r in (5.0, 10.0, 20.0, 30.0)]
        held = [relation_holds(ego, o, "near", c) for c in thresholds]
        assert held == sorted(held)


def test_counting_excludes_subject_and_other_classes():
    ego = ego_object(0.0)
    objs = [_obj("a", "car", 10, 0), _obj("b", "car", 20, 1), _obj("c", "truck", 30, 0), _obj("d", "car", -5, 0)]
    assert count_matching(objs, ego, "front", "car") == 2
    assert count_matching(objs, objs[0], "front", "car") == 1
    assert count_matching(objs, ego, "behind", "car") == 1


def test_ttc_hand_cases():
    ego = ego_object(10.0)
    assert time_to_collision(ego, _obj("a", "car", 20, 0)) == pytest.approx(2.0)
    assert time_to_collision(ego, _obj("a", "car", 20, 0, v=(10.0, 0.0))) == math.inf
    assert time_to_collision(ego, _obj("a", "car", -20, 0)) == math.inf
    assert time_to_collision(ego, _obj("a", "car", 20, 0, v=None)) == math.inf
    assert collision_risk(ego, _obj("a", "car", 20, 0), CFG.horizon_s, CFG.tau_ttc) == ("Yes", pytest.approx(2.0))
    assert collision_risk(ego, _obj("a", "car", 40, 0), CFG.horizon_s, CFG.tau_ttc)[0] == "No"


@pytest.mark.parametrize("objs, speed, letter, rule", [
    ([], 10.0, "A", "clear"),
    ([_obj("a", "car", 10, 0)], 10.0, "C", "critical_ttc"),
    ([_obj("a", "car", 25, 0)], 10.0, "B", "ttc_below_threshold"),
    ([_obj("a", "car", 6, 0, v=(1.0, 0.0))], 1.5, "B", "slow_lead_vehicle"),
    ([_obj("a", "car", 25, 0)], 0.0, "D", "blocked_lane_left_clear"),
    ([_obj("a", "car", 25, 0), _obj("b", "car", 10, 4)], 0.0, "E", "blocked_lane_right_clear"),
    ([_obj("a", "car", 25, 0), _obj("b", "car", 10, 4), _obj("c", "car", 10, -4)], 0.0, "B",
     "blocked_lane_no_clear_side"),
    ([_obj("a", "car", 40, 0)], 0.0, "A", "clear"),
])
def test_decision_ladder(objs, speed, letter, rule):
    got, info = decision_label(objs, speed, CFG)
    assert (got, info["rule"]) == (letter, rule)
    assert reference_answer("decision", {}, objs, speed, CFG) == letter


def test_risky_scene_never_gets_keep_lane(default_scenes):
    for sc, summary in default_scenes:
        for scene in (sc.ground_truth, summary):
            objs, speed, _ = scene_objects(scene)
            ego = ego_object(speed)
            if any(time_to_collision(ego, o) < CFG.tau_ttc for o in objs):
                assert decision_label(objs, speed, CFG)[0] != "A"


def test_candidates_only_reference_unique_classes():
    objs = [_obj("a", "car", 10, 0), _obj("b", "car", 20, 0), _obj("c", "truck", 30, 0)]
    rel = candidates("relation", objs, 0.0)
    assert {p["object"] for p in rel} == {"c"}
    assert {p["subject"] for p in rel} == {EGO}
    assert candidates("risk", objs, 0.0) == [{"object": "c"}]
    assert candidates("decision", objs, 0.0) == [{}]
    with pytest.raises(ValueError):
        candidates("trivia", objs, 0.0)


def test_generate_qa_is_deterministic_and_checked(default_scenes):
    sc, summary = default_scenes[0]
    a = [p.to_dict() for p in generate_qa(sc.ground_truth, n=20, seed=3)]
    b = [p.to_dict() for p in generate_qa(sc.ground_truth, n=20, seed=3)]
    assert a == b and len(a) == 20
    assert {p["family"] for p in a} == set(FAMILIES)
    for p in generate_qa(summary, n=12, seed=1):
        assert p.provenance["mode"] == "scene_summary"
        assert all(i.startswith("ID_") for i in p.provenance["entity_ids"])


def test_generate_qa_rejects_unknown_family():
    with pytest.raises(ValueError):
        generate_qa(builders.gt_scene("s", []), families=("trivia",))


def test_empty_scene_still_answers_counting_and_decision():
    pairs = generate_qa(builders.gt_scene("s", []), n=4, seed=0)
    assert {p.family for p in pairs} == {"counting", "decision"}
    assert all(p.answer in ("0", "A") for p in pairs)
