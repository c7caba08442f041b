"""Deterministic rule-based responder for every reasoning stage.

Responses are plain text in the same shape a chat model is asked for: JSON
for the intermediate representation, the risk list and the verdict; a JSON
decision followed by one justification claim per line for drafts.
"""
from __future__ import annotations

import json
import math
import re
from typing import Any, Optional, Sequence

from ..config import CLASS_VOCABULARY, QaConfig
from ..qagen import SceneObject, closing_speed, decision_label, ego_object, time_to_collision
from ..scene import Decision, SceneSummary, Verdict
from ..serialize import decision_to_dict, verdict_to_dict
from .grounding import extract_entity_ids

FAR_M = 30.0
AMBIGUOUS_CONFIDENCE_SCALE = 0.8
DEFAULT_CONFIDENCE = 0.9
PREMISE_TAG = "reject_premise_keep_lane_observe"
LETTER_ACTIONS = {"A": "keep_lane", "B": "slow_down", "C": "stop", "D": "change_lane_left", "E": "change_lane_right"}
CLASS_WORDS = {
    "car": ("car", "cars"),
    "truck": ("truck", "trucks", "lorry", "lorries"),
    "van": ("van", "vans"),
    "bus": ("bus", "buses"),
    "pedestrian": ("pedestrian", "pedestrians", "person", "people", "walker", "walkers"),
    "bicycle": ("bicycle", "bicycles", "bike", "bikes", "cyclist", "cyclists"),
    "motorcycle": ("motorcycle", "motorcycles", "motorbike", "motorbikes", "motorcyclist"),
    "barrier": ("barrier", "barriers"),
}
NUMERIC_CLAIM = re.compile(r"\b(distance|closing_speed|ttc)=([-+]?(?:[0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?|inf))")
TYPE_CLAIM = re.compile(r"\b([a-z]+) \((ID_[0-9]+)\)")


def _num(x: float) -> str:
    return "inf" if math.isinf(x) else f"{x:.9g}"


def _round3(x: float) -> float:
    return round(min(1.0, max(0.0, x)), 3)


# ---------------------------------------------------------------- parse

def _unknown(v: Any) -> Any:
    return "unknown" if v is None else v


def parse_scene(summary: SceneSummary) -> dict:
    """Mechanical map from the summary to the intermediate representation, with derived relations."""
    ents = []
    for e in summary.entities:
        ents.append({
            "id": e.entity_id,
            "type": e.class_name,
            "position_bev_m": list(e.position_bev),
            "velocity_bev_mps": _unknown(list(e.velocity_bev) if e.velocity_bev is not None else None),
            "size_m": list(e.size),
            "heading_rad": e.heading,
            "confidence": e.class_confidence,
            "sources": sorted(e.sources),
            "semantic_attributes": list(e.semantic_attributes),
            "flags": sorted(e.ambiguity_flags),
        })
    return {
        "ego_state": {"speed_mps": summary.ego_speed},
        "entity_types_present": list(summary.entity_types_present),
        "entity_types_absent": list(summary.entity_types_absent),
        "entities": ents,
        "relations": derive_relations(ents),
    }


def _obj(ent: dict) -> SceneObject:
    vel = ent.get("velocity_bev_mps")
    heading = ent.get("heading_rad")
    return SceneObject(ent["id"], ent["type"], tuple(ent["position_bev_m"]),
                       tuple(vel) if isinstance(vel, list) else None,
                       heading if isinstance(heading, (int, float)) else 0.0)


def derive_relations(ents: Sequence[dict], cfg: QaConfig = QaConfig()) -> list[dict]:
    """Pairwise relations in the ego frame: subject relative to object."""
    out = []
    for a in ents:
        for b in ents:
            if a["id"] == b["id"]:
                continue
            dx = a["position_bev_m"][0] - b["position_bev_m"][0]
            dy = a["position_bev_m"][1] - b["position_bev_m"][1]
            d = math.hypot(dx, dy)
            rels = []
            if abs(dy) <= cfg.lateral_m:
                rels.append("ahead_of" if dx > 0 else "behind_of" if dx < 0 else None)
            if dy > cfg.lateral_m:
                rels.append("left_of")
            if dy < -cfg.lateral_m:
                rels.append("right_of")
            rels.append("near" if d <= cfg.near_m else "far" if d > FAR_M else None)
            va, vb = a.get("velocity_bev_mps"), b.get("velocity_bev_mps")
            if isinstance(va, list) and isinstance(vb, list) and d > 0.0:
                rate = (dx * (va[0] - vb[0]) + dy * (va[1] - vb[1])) / d
                rels.append("approaching" if rate < 0 else "moving_away" if rate > 0 else None)
            for r in rels:
                if r is not None:
                    out.append({"subject": a["id"], "relation": r, "object": b["id"], "evidence": f"distance={_num(d)}m"})
    return out


def _ego(m: dict) -> SceneObject:
    return ego_object(float(m.get("ego_state", {}).get("speed_mps", 0.0)))


# ---------------------------------------------------------------- risk

def assess_risk(m: dict, cfg: QaConfig = QaConfig()) -> list[dict]:
    """TTC-driven risk items, sorted by (severity, urgency) descending."""
    ego = _ego(m)
    items = []
    for ent in m.get("entities", []):
        o = _obj(ent)
        ttc = time_to_collision(ego, o)
        if not (ttc < cfg.tau_ttc and ttc <= cfg.horizon_s):
            continue
        critical = ttc < cfg.critical_ttc
        conf = ent["confidence"] if isinstance(ent.get("confidence"), (int, float)) else 0.5
        if any(f in ("class_ambiguous", "geometry_ambiguous") for f in ent.get("flags", [])):
            conf *= AMBIGUOUS_CONFIDENCE_SCALE
        cs = closing_speed(ego, o)
        items.append({
            "risk_type": "pedestrian_crossing" if o.class_name == "pedestrian" else "collision",
            "involved_entity_ids": [o.object_id],
            "severity": 5 if critical else 4,
            "urgency": 5 if critical else 4,
            "confidence": _round3(conf),
            "evidence": f"{o.object_id} distance={_num(math.hypot(*o.position))} closing_speed={_num(cs)} ttc={_num(ttc)}",
        })
    objs = [_obj(e) for e in m.get("entities", [])]
    letter, info = decision_label(objs, ego.velocity[0], cfg)
    if info["rule"] == "slow_lead_vehicle":
        items.append({"risk_type": "rear_end", "involved_entity_ids": info["entity_ids"][:1], "severity": 3,
                      "urgency": 3, "confidence": 0.7, "evidence": f"{info['entity_ids'][0]} slower lead in ego lane"})
    elif info["rule"].startswith("blocked_lane"):
        items.append({"risk_type": "collision", "involved_entity_ids": info["entity_ids"][:1], "severity": 2,
                      "urgency": 2, "confidence": 0.7, "evidence": f"{info['entity_ids'][0]} stationary in ego lane"})
    items.sort(key=lambda r: (-r["severity"], -r["urgency"]))
    return items


# ---------------------------------------------------------------- reason

def premise_classes(query: str, vocabulary: Sequence[str] = CLASS_VOCABULARY) -> list[str]:
    words = set(re.findall(r"[a-z]+", (query or "").lower()))
    return [c for c in vocabulary if any(w in words for w in CLASS_WORDS.get(c, (c,)))]


def _claim_line(ego: SceneObject, o: SceneObject) -> str:
    d = math.hypot(o.position[0] - ego.position[0], o.position[1] - ego.position[1])
    line = f"The {o.class_name} ({o.object_id}) is at distance={_num(d)} m"
    cs = closing_speed(ego, o)
    ttc = time_to_collision(ego, o)
    if cs is not None and not math.isinf(ttc):
        line += f" with closing_speed={_num(cs)} m/s and ttc={_num(ttc)} s"
    return line + "."


def draft_decision(query: str, m: dict, l_risk: Sequence[dict], cfg: QaConfig = QaConfig()) -> tuple[Decision, str]:
    """Rule decision from the intermediate representation; auxiliary text is never consulted."""
    ego = _ego(m)
    ents = {e["id"]: e for e in m.get("entities", [])}
    objs = [_obj(e) for e in m.get("entities", [])]
    letter, info = decision_label(objs, ego.velocity[0], cfg)
    action = LETTER_ACTIONS[letter]
    targets = [i for i in info["entity_ids"] if i in ents]
    constraints: list[str] = []
    lines: list[str] = []
    absent = [c for c in premise_classes(query) if c in m.get("entity_types_absent", [])]
    if absent:
        constraints += [PREMISE_TAG, "entity_types_absent: " + ", ".join(absent)]
        lines.append(f"The query presupposes {', '.join(absent)}, which the scene summary lists under "
                     f"entity_types_absent; the premise is rejected.")
    if not ents:
        constraints.append("no entities in the scene summary")
    if targets:
        confs = [ents[i]["confidence"] if isinstance(ents[i].get("confidence"), (int, float)) else 0.5 for i in targets]
        conf = sum(confs) / len(confs)
        if any(f in ("class_ambiguous", "geometry_ambiguous") for i in targets for f in ents[i].get("flags", [])):
            conf *= AMBIGUOUS_CONFIDENCE_SCALE
    else:
        conf = DEFAULT_CONFIDENCE
    for i in targets:
        lines.append(_claim_line(ego, _obj(ents[i])))
    if l_risk:
        top = l_risk[0]
        summary = f"Top risk {top['risk_type']} involving {', '.join(top['involved_entity_ids'])}."
    else:
        summary = "No time-to-collision risk below threshold."
    lines.append(f"Recommended action: {action} ({info['rule']}).")
    d = Decision(recommended_action=action, confidence=_round3(conf), target_entity_ids=tuple(targets),
                 risk_summary=summary, constraints=tuple(constraints))
    return d, "\n".join(lines)


def format_draft(d: Decision, n: str) -> str:
    return json.dumps(decision_to_dict(d), sort_keys=True) + "\n\n" + n


# ---------------------------------------------------------------- verify

def _entity_object(summary: SceneSummary, eid: str) -> Optional[SceneObject]:
    e = summary.entity(eid)
    if e is None:
        return None
    return SceneObject(e.entity_id, e.class_name, tuple(e.position_bev),
                       tuple(e.velocity_bev) if e.velocity_bev is not None else None, e.heading)


def _numeric_ok(claimed: float, actual: float, rel_tol: float) -> bool:
    if math.isinf(claimed) or math.isinf(actual):
        return claimed == actual
    return abs(claimed - actual) <= rel_tol * max(1.0, abs(actual))


def verify_draft(summary: SceneSummary, d: Decision, n: str, rel_tol: float = 1e-6) -> Verdict:
    """Consistent iff every cited id exists and every numeric and type claim matches the summary."""
    claims: list[tuple[str, str]] = []
    known = set(summary.entity_ids)
    for i in d.target_entity_ids:
        if i not in known:
            claims.append((f"target_entity_ids: {i}", f"{i} is absent from the scene summary"))
    ego = ego_object(summary.ego_speed)
    for line in (n or "").splitlines():
        line = line.strip()
        if not line:
            continue
        ids = extract_entity_ids(line)
        missing = [i for i in ids if i not in known]
        if missing:
            claims.append((line, f"cites ids absent from the scene summary: {', '.join(missing)}"))
            continue
        numeric = NUMERIC_CLAIM.findall(line)
        if numeric and not ids:
            claims.append((line, "numeric claim without an entity citation"))
            continue
        for word, eid in TYPE_CLAIM.findall(line):
            e = summary.entity(eid)
            if word in CLASS_WORDS and e is not None and e.class_name != word:
                claims.append((line, f"{eid} is a {e.class_name}, not a {word}"))
                break
        else:
            if numeric:
                o = _entity_object(summary, ids[0])
                actual = {"distance": math.hypot(*o.position), "ttc": time_to_collision(ego, o)}
                cs = closing_speed(ego, o)
                actual["closing_speed"] = cs if cs is not None else math.nan
                for key, val in numeric:
                    if not _numeric_ok(float(val), actual[key], rel_tol):
                        claims.append((line, f"{key} does not match the scene summary"))
                        break
    if claims:
        return Verdict("Major", tuple(claims), "remove or correct the listed claims")
    return Verdict("Consistent", (), "all claims grounded")


def format_verdict(v: Verdict) -> str:
    """Verifier output in the PASS/FAIL vocabulary."""
    d = verdict_to_dict(v)
    d["verdict"] = "PASS" if v.verdict == "Consistent" else "FAIL"
    return json.dumps(d, sort_keys=True)


# ---------------------------------------------------------------- revise

def revise_draft(query: str, m: dict, l_risk: Sequence[dict], d: Decision, n: str, v: Verdict,
                 cfg: QaConfig = QaConfig()) -> tuple[Decision, str]:
    """Drop flagged lines and ungrounded ids; re-derive the action only when a dropped id backed it."""
    known = {e["id"] for e in m.get("entities", [])}
    flagged = {c for c, _ in v.claims}
    lines = [ln for ln in (n or "").splitlines()
             if ln.strip() and ln.strip() not in flagged and all(i in known for i in extract_entity_ids(ln))]
    targets = [i for i in d.target_entity_ids if i in known and f"target_entity_ids: {i}" not in flagged]
    valid_action = d.recommended_action in LETTER_ACTIONS.values()
    if valid_action and len(targets) == len(d.target_entity_ids):
        return d, "\n".join(lines)
    fresh, fresh_n = draft_decision(query, m, l_risk, cfg)
    # a placeholder draft (unusable backend output) carries no confidence of its own
    base = min(d.confidence, fresh.confidence) if valid_action else fresh.confidence
    reason = "revised_after_unsupported_target" if valid_action else "revised_after_invalid_action"
    revised = Decision(recommended_action=fresh.recommended_action,
                       confidence=_round3(base * AMBIGUOUS_CONFIDENCE_SCALE),
                       target_entity_ids=fresh.target_entity_ids, risk_summary=fresh.risk_summary,
                       constraints=fresh.constraints + (reason,), flags=d.flags)
    return revised, fresh_n
