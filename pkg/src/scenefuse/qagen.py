"""Templated question/answer generation over a BEV scene graph.

Frame: ego at the origin, x forward, y left. Relations are evaluated for an
``object`` expressed in the frame of a ``subject`` (rotated by the subject
heading), so the ego behaves as a subject with heading 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .config import CLASS_VOCABULARY, QaConfig
from .scene import GroundTruthScene, SceneSummary

RELATIONS = ("front", "behind", "left", "right", "near")
RELATION_PHRASES = {
    "front": "in front of",
    "behind": "behind",
    "left": "to the left of",
    "right": "to the right of",
    "near": "near",
}
FAMILIES = ("relation", "counting", "risk", "decision")
OPTIONS = {
    "A": "keep lane and maintain speed",
    "B": "slow down",
    "C": "stop / yield",
    "D": "change lane left",
    "E": "change lane right",
}
VEHICLE_CLASSES = ("car", "truck", "van", "bus", "motorcycle")
STATIONARY_SPEED = 0.5  # m/s; below this an in-lane object blocks the lane
EGO = "ego vehicle"


@dataclass(frozen=True)
class SceneObject:
    object_id: str
    class_name: str
    position: tuple[float, float]
    velocity: Optional[tuple[float, float]]
    heading: float = 0.0


@dataclass(frozen=True)
class QaPair:
    family: str
    question: str
    answer: str
    rationale: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"family": self.family, "question": self.question, "answer": self.answer,
                "rationale": dict(self.rationale), "provenance": dict(self.provenance)}


def ego_object(ego_speed: float) -> SceneObject:
    return SceneObject(EGO, EGO, (0.0, 0.0), (float(ego_speed), 0.0), 0.0)


def scene_objects(scene: Union[GroundTruthScene, SceneSummary]) -> tuple[list[SceneObject], float, str]:
    """(objects, ego speed, mode) for either a ground-truth scene or a fused summary."""
    if isinstance(scene, GroundTruthScene):
        objs = [SceneObject(g.gt_id, g.class_name, tuple(g.position_bev), tuple(g.velocity_bev), g.heading)
                for g in scene.entities]
        return objs, scene.ego_speed, "ground_truth"
    objs = [SceneObject(e.entity_id, e.class_name, tuple(e.position_bev),
                        tuple(e.velocity_bev) if e.velocity_bev is not None else None, e.heading)
            for e in scene.entities]
    return objs, scene.ego_speed, "scene_summary"


# ---------------------------------------------------------------- predicates

def relative_offset(subject: SceneObject, obj: SceneObject) -> tuple[float, float]:
    dx = obj.position[0] - subject.position[0]
    dy = obj.position[1] - subject.position[1]
    c, s = math.cos(subject.heading), math.sin(subject.heading)
    return c * dx + s * dy, -s * dx + c * dy


def relation_holds(subject: SceneObject, obj: SceneObject, rel: str, cfg: QaConfig = QaConfig()) -> bool:
    """Whether ``obj`` stands in relation ``rel`` to ``subject``."""
    dx, dy = relative_offset(subject, obj)
    if rel == "front":
        return dx > 0.0 and abs(dy) <= cfg.lateral_m
    if rel == "behind":
        return dx < 0.0 and abs(dy) <= cfg.lateral_m
    if rel == "left":
        return dy > cfg.lateral_m
    if rel == "right":
        return dy < -cfg.lateral_m
    if rel == "near":
        return math.hypot(dx, dy) <= cfg.near_m
    raise ValueError(f"unknown relation {rel!r}")


def count_matching(objects: Sequence[SceneObject], obj1: SceneObject, rel: str, obj2_class: str,
                   cfg: QaConfig = QaConfig()) -> int:
    return sum(1 for o in objects
               if o.class_name == obj2_class and o.object_id != obj1.object_id and relation_holds(obj1, o, rel, cfg))


def closing_speed(ego: SceneObject, target: SceneObject) -> Optional[float]:
    """Rate at which the ego-target distance shrinks; None without velocities."""
    if ego.velocity is None or target.velocity is None:
        return None
    px, py = target.position[0] - ego.position[0], target.position[1] - ego.position[1]
    vx, vy = target.velocity[0] - ego.velocity[0], target.velocity[1] - ego.velocity[1]
    d = math.hypot(px, py)
    if d == 0.0:
        return math.inf
    return -(px * vx + py * vy) / d


def time_to_collision(ego: SceneObject, target: SceneObject) -> float:
    cs = closing_speed(ego, target)
    if cs is None or cs <= 0.0:
        return math.inf
    d = math.hypot(target.position[0] - ego.position[0], target.position[1] - ego.position[1])
    return d / cs


def collision_risk(ego: SceneObject, target: SceneObject, horizon: float, tau_ttc: float) -> tuple[str, float]:
    ttc = time_to_collision(ego, target)
    return ("Yes" if ttc < tau_ttc and ttc <= horizon else "No"), ttc


def _in_ego_lane(o: SceneObject, cfg: QaConfig) -> bool:
    return abs(o.position[1]) <= cfg.lateral_m


def _lane_clear(objects: Sequence[SceneObject], side: float, cfg: QaConfig) -> bool:
    for o in objects:
        y = side * o.position[1]
        if cfg.lateral_m < y <= cfg.adjacent_lane_m and -cfg.adjacent_clear_m <= o.position[0] <= cfg.blocked_range_m:
            return False
    return True


def decision_label(objects: Sequence[SceneObject], ego_speed: float, cfg: QaConfig = QaConfig()) -> tuple[str, dict]:
    """Option letter from the rule ladder plus the rung that fired."""
    ego = ego_object(ego_speed)
    ttcs = [(time_to_collision(ego, o), o.object_id) for o in objects]
    critical = sorted((t, i) for t, i in ttcs if t < cfg.critical_ttc)
    if critical:
        return "C", {"rule": "critical_ttc", "entity_ids": [i for _, i in critical], "min_ttc": critical[0][0]}
    risky = sorted((t, i) for t, i in ttcs if t < cfg.tau_ttc and t <= cfg.horizon_s)
    if risky:
        return "B", {"rule": "ttc_below_threshold", "entity_ids": [i for _, i in risky], "min_ttc": risky[0][0]}
    leads = sorted((o.position[0], o.object_id) for o in objects
                   if o.class_name in VEHICLE_CLASSES and _in_ego_lane(o, cfg) and 0.0 < o.position[0] <= cfg.lead_gap_m
                   and o.velocity is not None and o.velocity[0] < ego_speed)
    if leads:
        return "B", {"rule": "slow_lead_vehicle", "entity_ids": [i for _, i in leads]}
    blockers = sorted((o.position[0], o.object_id) for o in objects
                      if _in_ego_lane(o, cfg) and 0.0 < o.position[0] <= cfg.blocked_range_m
                      and (o.velocity is None or math.hypot(*o.velocity) < STATIONARY_SPEED))
    if blockers:
        ids = [i for _, i in blockers]
        if _lane_clear(objects, 1.0, cfg):
            return "D", {"rule": "blocked_lane_left_clear", "entity_ids": ids}
        if _lane_clear(objects, -1.0, cfg):
            return "E", {"rule": "blocked_lane_right_clear", "entity_ids": ids}
        return "B", {"rule": "blocked_lane_no_clear_side", "entity_ids": ids}
    return "A", {"rule": "clear", "entity_ids": []}


# ---------------------------------------------------------------- independent re-evaluation

def _reference_relation(subject: SceneObject, obj: SceneObject, rel: str, cfg: QaConfig) -> bool:
    R = np.array([[math.cos(subject.heading), -math.sin(subject.heading)],
                  [math.sin(subject.heading), math.cos(subject.heading)]])
    local = R.T @ (np.asarray(obj.position, float) - np.asarray(subject.position, float))
    x, y = float(local[0]), float(local[1])
    table = {
        "front": x > 0.0 and -cfg.lateral_m <= y <= cfg.lateral_m,
        "behind": x < 0.0 and -cfg.lateral_m <= y <= cfg.lateral_m,
        "left": y > cfg.lateral_m,
        "right": y < -cfg.lateral_m,
        "near": float(np.linalg.norm(local)) <= cfg.near_m,
    }
    return table[rel]


def _reference_ttc(ego: SceneObject, target: SceneObject) -> float:
    if ego.velocity is None or target.velocity is None:
        return math.inf
    p = np.asarray(target.position, float) - np.asarray(ego.position, float)
    v = np.asarray(target.velocity, float) - np.asarray(ego.velocity, float)
    d = float(np.linalg.norm(p))
    if d == 0.0:
        return 0.0
    rate = -float(np.dot(p, v)) / d
    return d / rate if rate > 0.0 else math.inf


def reference_answer(family: str, params: dict, objects: Sequence[SceneObject], ego_speed: float,
                     cfg: QaConfig) -> str:
    """Brute-force answer recomputation used to cross-check every emitted pair."""
    by_id = {o.object_id: o for o in objects}
    ego = ego_object(ego_speed)
    by_id[EGO] = ego
    if family == "relation":
        return "Yes" if _reference_relation(by_id[params["subject"]], by_id[params["object"]], params["rel"], cfg) else "No"
    if family == "counting":
        subject = by_id[params["subject"]]
        n = 0
        for o in objects:
            if o.object_id == subject.object_id or o.class_name != params["class"]:
                continue
            n += _reference_relation(subject, o, params["rel"], cfg)
        return str(n)
    if family == "risk":
        ttc = _reference_ttc(ego, by_id[params["object"]])
        return "Yes" if ttc < cfg.tau_ttc and ttc <= cfg.horizon_s else "No"
    if family == "decision":
        ttcs = [_reference_ttc(ego, o) for o in objects]
        if any(t < cfg.critical_ttc for t in ttcs):
            return "C"
        if any(t < cfg.tau_ttc and t <= cfg.horizon_s for t in ttcs):
            return "B"
        for o in objects:
            x, y = o.position
            if (o.class_name in VEHICLE_CLASSES and -cfg.lateral_m <= y <= cfg.lateral_m and 0.0 < x <= cfg.lead_gap_m
                    and o.velocity is not None and o.velocity[0] < ego_speed):
                return "B"
        blocked = any(-cfg.lateral_m <= o.position[1] <= cfg.lateral_m and 0.0 < o.position[0] <= cfg.blocked_range_m
                      and (o.velocity is None or float(np.linalg.norm(o.velocity)) < STATIONARY_SPEED)
                      for o in objects)
        if not blocked:
            return "A"
        for letter, side in (("D", 1.0), ("E", -1.0)):
            occupied = [o for o in objects if cfg.lateral_m < side * o.position[1] <= cfg.adjacent_lane_m
                        and -cfg.adjacent_clear_m <= o.position[0] <= cfg.blocked_range_m]
            if not occupied:
                return letter
        return "B"
    raise ValueError(f"unknown family {family!r}")


# ---------------------------------------------------------------- generation

def _fmt(x: float) -> Optional[float]:
    return None if math.isinf(x) else float(f"{x:.9g}")


def _unique_by_class(objects: Sequence[SceneObject]) -> dict[str, SceneObject]:
    counts: dict[str, list[SceneObject]] = {}
    for o in objects:
        counts.setdefault(o.class_name, []).append(o)
    return {c: v[0] for c, v in counts.items() if len(v) == 1}


def _name(o: SceneObject) -> str:
    return o.class_name


def candidates(family: str, objects: Sequence[SceneObject], ego_speed: float,
               vocabulary: Sequence[str] = CLASS_VOCABULARY) -> list[dict]:
    """All template instances of ``family`` whose referents are unambiguous."""
    unique = _unique_by_class(objects)
    ego = ego_object(ego_speed)
    subjects = [ego] + [unique[c] for c in sorted(unique)]
    out: list[dict] = []
    if family == "relation":
        for s in subjects:
            for o in (unique[c] for c in sorted(unique)):
                if o.object_id == s.object_id:
                    continue
                for rel in RELATIONS:
                    out.append({"subject": s.object_id, "object": o.object_id, "rel": rel})
    elif family == "counting":
        for s in subjects:
            for cls in vocabulary:
                for rel in RELATIONS:
                    out.append({"subject": s.object_id, "class": cls, "rel": rel})
    elif family == "risk":
        for c in sorted(unique):
            if unique[c].velocity is not None:
                out.append({"object": unique[c].object_id})
    elif family == "decision":
        out.append({})
    else:
        raise ValueError(f"unknown family {family!r}")
    return out


def _plural(cls: str) -> str:
    return {"bus": "buses", "pedestrian": "pedestrians"}.get(cls, cls + "s")


def instantiate(family: str, params: dict, objects: Sequence[SceneObject], ego_speed: float,
                cfg: QaConfig, scene_id: str, mode: str) -> QaPair:
    by_id = {o.object_id: o for o in objects}
    ego = ego_object(ego_speed)
    by_id[EGO] = ego
    ids: list[str] = []
    rationale: dict = {}
    if family == "relation":
        s, o = by_id[params["subject"]], by_id[params["object"]]
        phrase = RELATION_PHRASES[params["rel"]]
        article = "an" if phrase[0] in "aeiou" else "a"
        q = (f"Is there {article} {phrase} relationship between the {_name(s)} "
             f"and the {_name(o)} in the current scene?")
        ans = "Yes" if relation_holds(s, o, params["rel"], cfg) else "No"
        dx, dy = relative_offset(s, o)
        rationale = {"dx": _fmt(dx), "dy": _fmt(dy), "distance": _fmt(math.hypot(dx, dy))}
        ids = [i for i in (s.object_id, o.object_id) if i != EGO]
    elif family == "counting":
        s = by_id[params["subject"]]
        q = (f"How many {_plural(params['class'])} are {RELATION_PHRASES[params['rel']]} the {_name(s)} "
             f"in the current scene?")
        ans = str(count_matching(objects, s, params["rel"], params["class"], cfg))
        ids = [s.object_id] if s.object_id != EGO else []
    elif family == "risk":
        o = by_id[params["object"]]
        q = (f"Is there a potential collision risk between the ego vehicle and the {_name(o)} "
             f"in the next {cfg.horizon_s:g} seconds?")
        ans, ttc = collision_risk(ego, o, cfg.horizon_s, cfg.tau_ttc)
        cs = closing_speed(ego, o)
        rationale = {"distance": _fmt(math.hypot(*o.position)), "closing_speed": _fmt(cs) if cs is not None else None,
                     "ttc": _fmt(ttc)}
        ids = [o.object_id]
    else:
        q = "Given the current scene, what is the safest immediate action for the ego vehicle?"
        ans, info = decision_label(objects, ego_speed, cfg)
        rationale = {"rule": info["rule"], "option": OPTIONS[ans]}
        if "min_ttc" in info:
            rationale["min_ttc"] = _fmt(info["min_ttc"])
        ids = list(info["entity_ids"])
    prov = {"scene_id": scene_id, "mode": mode, "entity_ids": ids, "params": dict(params)}
    return QaPair(family, q, ans, rationale, prov)


class QaMismatch(AssertionError):
    pass


def generate_qa(scene: Union[GroundTruthScene, SceneSummary], families: Sequence[str] = FAMILIES, n: int = 10,
                seed: int = 0, cfg: QaConfig = QaConfig(),
                vocabulary: Sequence[str] = CLASS_VOCABULARY) -> list[QaPair]:
    """``n`` pairs drawn round-robin over ``families``; each answer is double-checked before emission."""
    for f in families:
        if f not in FAMILIES:
            raise ValueError(f"unknown family {f!r}")
    objects, ego_speed, mode = scene_objects(scene)
    pools = {f: candidates(f, objects, ego_speed, vocabulary) for f in families}
    usable = [f for f in families if pools[f]]
    rng = np.random.default_rng([seed, 0x9A])
    out: list[QaPair] = []
    if not usable:
        return out
    for k in range(n):
        fam = usable[k % len(usable)]
        params = pools[fam][int(rng.integers(len(pools[fam])))]
        pair = instantiate(fam, params, objects, ego_speed, cfg, scene.scene_id, mode)
        check = reference_answer(fam, params, objects, ego_speed, cfg)
        if check != pair.answer:
            raise QaMismatch(f"{scene.scene_id}: {fam} {params} answered {pair.answer!r}, recheck gave {check!r}")
        out.append(pair)
    return out
