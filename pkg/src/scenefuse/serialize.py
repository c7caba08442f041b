"""Canonical JSON encoding of the domain types and JSONL stream helpers.

Floats are written with 9 significant digits and keys are sorted, so the
same value always produces the same bytes. Calibration is the exception:
its rotation matrices are written at full precision because the
orthonormality check would not survive rounding.
"""
from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Any, Callable, Iterable, Iterator, Optional, Type, TypeVar

from .config import CLASS_VOCABULARY
from .errors import SchemaError
from .scene import (
    AgentFactSet,
    Calibration,
    CameraModel,
    Decision,
    Detection2D,
    Detection3D,
    FusedEntity,
    GroundTruthScene,
    GtEntity,
    RadarReturn,
    SceneFacts,
    SceneSummary,
    SensorPose,
    Verdict,
    validate,
)

T = TypeVar("T")


# ---------------------------------------------------------------- emitter

def _float_text(x: float, full: bool) -> str:
    if not math.isfinite(x):
        raise SchemaError("<value>", "non-finite floats cannot be serialised")
    if full:
        return repr(x + 0.0)
    s = format(x + 0.0, ".9g")
    if "." not in s and "e" not in s and "n" not in s:
        s += ".0"
    return s


def _emit(obj: Any, out: list[str], full: bool) -> None:
    if obj is None:
        out.append("null")
    elif obj is True:
        out.append("true")
    elif obj is False:
        out.append("false")
    elif isinstance(obj, int):
        out.append(str(int(obj)))
    elif isinstance(obj, float):
        out.append(_float_text(obj, full))
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, dict):
        out.append("{")
        for i, key in enumerate(sorted(obj)):
            if i:
                out.append(",")
            out.append(json.dumps(str(key)))
            out.append(":")
            _emit(obj[key], out, full)
        out.append("}")
    elif isinstance(obj, (list, tuple)):
        out.append("[")
        for i, v in enumerate(obj):
            if i:
                out.append(",")
            _emit(v, out, full)
        out.append("]")
    elif isinstance(obj, (set, frozenset)):
        _emit(sorted(obj), out, full)
    elif hasattr(obj, "item"):  # numpy scalar
        _emit(obj.item(), out, full)
    else:
        raise TypeError(f"cannot encode {type(obj).__name__}")


def canonical_dumps(obj: Any, full_precision: bool = False) -> str:
    """Deterministic compact JSON text for a JSON-like tree."""
    out: list[str] = []
    _emit(obj, out, full_precision)
    return "".join(out)


# ---------------------------------------------------------------- parse helpers

def _get(d: Any, key: str, path: str, optional: bool = False) -> Any:
    if not isinstance(d, dict):
        raise SchemaError(path or "<root>", "expected an object")
    if key not in d:
        if optional:
            return None
        raise SchemaError(f"{path}.{key}" if path else key, "required field missing")
    return d[key]


def _num(v: Any, path: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SchemaError(path, "expected a number")
    return float(v)


def _int(v: Any, path: str) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise SchemaError(path, "expected an integer")
    return v


def _str(v: Any, path: str) -> str:
    if not isinstance(v, str):
        raise SchemaError(path, "expected a string")
    return v


def _list(v: Any, path: str) -> list:
    if not isinstance(v, list):
        raise SchemaError(path, "expected an array")
    return v


def _vec(v: Any, path: str, n: Optional[int] = None) -> tuple[float, ...]:
    items = _list(v, path)
    if n is not None and len(items) != n:
        raise SchemaError(path, f"expected {n} numbers")
    return tuple(_num(x, f"{path}[{i}]") for i, x in enumerate(items))


def _matrix(v: Any, path: str) -> Optional[tuple[tuple[float, ...], ...]]:
    if v is None:
        return None
    return tuple(_vec(row, f"{path}[{i}]") for i, row in enumerate(_list(v, path)))


def _probs(v: Any, path: str) -> dict[str, float]:
    if not isinstance(v, dict):
        raise SchemaError(path, "expected an object")
    return {k: _num(p, f"{path}.{k}") for k, p in v.items()}


def _strs(v: Any, path: str) -> tuple[str, ...]:
    return tuple(_str(x, f"{path}[{i}]") for i, x in enumerate(_list(v, path)))


def _opt(d: dict, key: str, default: Any) -> Any:
    v = d.get(key, default)
    return default if v is None else v


# ---------------------------------------------------------------- per type

def detection3d_to_dict(d: Detection3D) -> dict:
    out: dict[str, Any] = {
        "local_id": d.local_id,
        "center_ego": list(d.center_ego),
        "size": list(d.size),
        "heading": d.heading,
        "class_probs": dict(d.class_probs),
        "confidence": d.confidence,
        "velocity_bev": list(d.velocity_bev) if d.velocity_bev is not None else None,
        "flags": list(d.flags),
    }
    cov: dict[str, Any] = {}
    if d.position_cov is not None:
        cov["position"] = [list(r) for r in d.position_cov]
    if d.velocity_cov is not None:
        cov["velocity"] = [list(r) for r in d.velocity_cov]
    out["covariance"] = cov or None
    return out


def detection3d_from_dict(d: Any, path: str) -> Detection3D:
    cov = _get(d, "covariance", path, optional=True) or {}
    if not isinstance(cov, dict):
        raise SchemaError(f"{path}.covariance", "expected an object")
    vel = d.get("velocity_bev")
    return Detection3D(
        local_id=_int(_get(d, "local_id", path), f"{path}.local_id"),
        center_ego=_vec(_get(d, "center_ego", path), f"{path}.center_ego", 3),
        size=_vec(_get(d, "size", path), f"{path}.size", 3),
        heading=_num(_get(d, "heading", path), f"{path}.heading"),
        class_probs=_probs(_get(d, "class_probs", path), f"{path}.class_probs"),
        confidence=_num(_get(d, "confidence", path), f"{path}.confidence"),
        velocity_bev=_vec(vel, f"{path}.velocity_bev", 2) if vel is not None else None,
        position_cov=_matrix(cov.get("position"), f"{path}.covariance.position"),
        velocity_cov=_matrix(cov.get("velocity"), f"{path}.covariance.velocity"),
        flags=_strs(_opt(d, "flags", []), f"{path}.flags"),
    )


def detection2d_to_dict(d: Detection2D) -> dict:
    return {
        "local_id": d.local_id,
        "camera_id": d.camera_id,
        "bbox": list(d.bbox),
        "class_probs": dict(d.class_probs),
        "confidence": d.confidence,
        "semantic_attributes": list(d.semantic_attributes),
    }


def detection2d_from_dict(d: Any, path: str) -> Detection2D:
    return Detection2D(
        local_id=_int(_get(d, "local_id", path), f"{path}.local_id"),
        camera_id=_str(_get(d, "camera_id", path), f"{path}.camera_id"),
        bbox=_vec(_get(d, "bbox", path), f"{path}.bbox", 4),
        class_probs=_probs(_get(d, "class_probs", path), f"{path}.class_probs"),
        confidence=_num(_get(d, "confidence", path), f"{path}.confidence"),
        semantic_attributes=_strs(_opt(d, "semantic_attributes", []), f"{path}.semantic_attributes"),
    )


def radar_return_to_dict(r: RadarReturn) -> dict:
    return {"range_m": r.range_m, "azimuth": r.azimuth, "radial_velocity": r.radial_velocity, "rcs": r.rcs}


def radar_return_from_dict(d: Any, path: str) -> RadarReturn:
    rcs = d.get("rcs") if isinstance(d, dict) else None
    return RadarReturn(
        range_m=_num(_get(d, "range_m", path), f"{path}.range_m"),
        azimuth=_num(_get(d, "azimuth", path), f"{path}.azimuth"),
        radial_velocity=_num(_get(d, "radial_velocity", path), f"{path}.radial_velocity"),
        rcs=_num(rcs, f"{path}.rcs") if rcs is not None else None,
    )


def fact_set_to_dict(fs: AgentFactSet) -> dict:
    return {
        "agent_kind": fs.agent_kind,
        "scene_id": fs.scene_id,
        "timestamp_us": fs.timestamp_us,
        "detections_3d": [detection3d_to_dict(d) for d in fs.detections_3d],
        "detections_2d": [detection2d_to_dict(d) for d in fs.detections_2d],
        "synopsis": fs.synopsis,
        "source_lineage": sorted(fs.source_lineage),
    }


def fact_set_from_dict(d: Any, path: str = "") -> AgentFactSet:
    p = path
    syn = d.get("synopsis") if isinstance(d, dict) else None
    return AgentFactSet(
        agent_kind=_str(_get(d, "agent_kind", p), f"{p}.agent_kind"),
        scene_id=_str(_get(d, "scene_id", p), f"{p}.scene_id"),
        timestamp_us=_int(_get(d, "timestamp_us", p), f"{p}.timestamp_us"),
        detections_3d=tuple(detection3d_from_dict(x, f"{p}.detections_3d[{i}]")
                            for i, x in enumerate(_list(_opt(d, "detections_3d", []), f"{p}.detections_3d"))),
        detections_2d=tuple(detection2d_from_dict(x, f"{p}.detections_2d[{i}]")
                            for i, x in enumerate(_list(_opt(d, "detections_2d", []), f"{p}.detections_2d"))),
        synopsis=_str(syn, f"{p}.synopsis") if syn is not None else None,
        source_lineage=frozenset(_strs(_opt(d, "source_lineage", []), f"{p}.source_lineage")),
    )


def scene_facts_to_dict(sf: SceneFacts) -> dict:
    return {
        "scene_id": sf.scene_id,
        "timestamp_us": sf.timestamp_us,
        "ego_speed": sf.ego_speed,
        "fact_sets": [fact_set_to_dict(fs) for fs in sf.fact_sets],
    }


def scene_facts_from_dict(d: Any, path: str = "") -> SceneFacts:
    return SceneFacts(
        scene_id=_str(_get(d, "scene_id", path), "scene_id"),
        timestamp_us=_int(_get(d, "timestamp_us", path), "timestamp_us"),
        ego_speed=_num(_opt(d, "ego_speed", 0.0), "ego_speed"),
        fact_sets=tuple(fact_set_from_dict(x, f"fact_sets[{i}]")
                        for i, x in enumerate(_list(_get(d, "fact_sets", path), "fact_sets"))),
    )


def entity_to_dict(e: FusedEntity) -> dict:
    return {
        "entity_id": e.entity_id,
        "class": e.class_name,
        "class_confidence": e.class_confidence,
        "position_bev": list(e.position_bev),
        "position_cov": [list(r) for r in e.position_cov],
        "velocity_bev": list(e.velocity_bev) if e.velocity_bev is not None else None,
        "velocity_cov": [list(r) for r in e.velocity_cov] if e.velocity_cov is not None else None,
        "size": list(e.size),
        "heading": e.heading,
        "sources": sorted(e.sources),
        "lineage": e.lineage,
        "ambiguity_flags": sorted(e.ambiguity_flags),
        "semantic_attributes": list(e.semantic_attributes),
        "conflict_resolved": e.conflict_resolved,
        "conflict_values": dict(e.conflict_values),
    }


def entity_from_dict(d: Any, path: str = "entity") -> FusedEntity:
    vel = d.get("velocity_bev") if isinstance(d, dict) else None
    lineage = _get(d, "lineage", path)
    if not isinstance(lineage, dict):
        raise SchemaError(f"{path}.lineage", "expected an object")
    cv = _opt(d, "conflict_values", {})
    if not isinstance(cv, dict):
        raise SchemaError(f"{path}.conflict_values", "expected an object")
    cr = _opt(d, "conflict_resolved", False)
    if not isinstance(cr, bool):
        raise SchemaError(f"{path}.conflict_resolved", "expected a boolean")
    return FusedEntity(
        entity_id=_str(_get(d, "entity_id", path), f"{path}.entity_id"),
        class_name=_str(_get(d, "class", path), f"{path}.class"),
        class_confidence=_num(_get(d, "class_confidence", path), f"{path}.class_confidence"),
        position_bev=_vec(_get(d, "position_bev", path), f"{path}.position_bev", 2),
        position_cov=_matrix(_get(d, "position_cov", path), f"{path}.position_cov"),
        velocity_bev=_vec(vel, f"{path}.velocity_bev", 2) if vel is not None else None,
        velocity_cov=_matrix(d.get("velocity_cov"), f"{path}.velocity_cov"),
        size=_vec(_get(d, "size", path), f"{path}.size", 3),
        heading=_num(_get(d, "heading", path), f"{path}.heading"),
        sources=frozenset(_strs(_get(d, "sources", path), f"{path}.sources")),
        lineage=lineage,
        ambiguity_flags=frozenset(_strs(_opt(d, "ambiguity_flags", []), f"{path}.ambiguity_flags")),
        semantic_attributes=_strs(_opt(d, "semantic_attributes", []), f"{path}.semantic_attributes"),
        conflict_resolved=cr,
        conflict_values={str(k): _str(v, f"{path}.conflict_values.{k}") for k, v in cv.items()},
    )


def summary_to_dict(s: SceneSummary) -> dict:
    return {
        "scene_id": s.scene_id,
        "timestamp_us": s.timestamp_us,
        "ego_state": {"position_bev": [0.0, 0.0], "speed": s.ego_speed},
        "entities": [entity_to_dict(e) for e in s.entities],
        "entity_types_present": list(s.entity_types_present),
        "entity_types_absent": list(s.entity_types_absent),
    }


def summary_from_dict(d: Any, path: str = "") -> SceneSummary:
    ego = _opt(d, "ego_state", {})
    if not isinstance(ego, dict):
        raise SchemaError("ego_state", "expected an object")
    return SceneSummary(
        scene_id=_str(_get(d, "scene_id", path), "scene_id"),
        timestamp_us=_int(_get(d, "timestamp_us", path), "timestamp_us"),
        entities=tuple(entity_from_dict(x, f"entities[{i}]")
                       for i, x in enumerate(_list(_get(d, "entities", path), "entities"))),
        ego_speed=_num(_opt(ego, "speed", 0.0), "ego_state.speed"),
        entity_types_present=_strs(_get(d, "entity_types_present", path), "entity_types_present"),
        entity_types_absent=_strs(_get(d, "entity_types_absent", path), "entity_types_absent"),
    )


def gt_to_dict(g: GroundTruthScene) -> dict:
    return {
        "scene_id": g.scene_id,
        "timestamp_us": g.timestamp_us,
        "rng_seed": g.rng_seed,
        "ego_speed": g.ego_speed,
        "ego_trajectory": [list(p) for p in g.ego_trajectory],
        "extent": list(g.extent),
        "entities": [
            {
                "gt_id": e.gt_id,
                "class": e.class_name,
                "position_bev": list(e.position_bev),
                "z": e.z,
                "velocity_bev": list(e.velocity_bev),
                "size": list(e.size),
                "heading": e.heading,
                "color": e.color,
            }
            for e in g.entities
        ],
    }


def gt_from_dict(d: Any, path: str = "") -> GroundTruthScene:
    ents = []
    for i, x in enumerate(_list(_get(d, "entities", path), "entities")):
        p = f"entities[{i}]"
        color = x.get("color") if isinstance(x, dict) else None
        ents.append(GtEntity(
            gt_id=_str(_get(x, "gt_id", p), f"{p}.gt_id"),
            class_name=_str(_get(x, "class", p), f"{p}.class"),
            position_bev=_vec(_get(x, "position_bev", p), f"{p}.position_bev", 2),
            velocity_bev=_vec(_get(x, "velocity_bev", p), f"{p}.velocity_bev", 2),
            size=_vec(_get(x, "size", p), f"{p}.size", 3),
            heading=_num(_get(x, "heading", p), f"{p}.heading"),
            z=_num(_opt(x, "z", 0.0), f"{p}.z"),
            color=_str(color, f"{p}.color") if color is not None else None,
        ))
    return GroundTruthScene(
        scene_id=_str(_get(d, "scene_id", path), "scene_id"),
        timestamp_us=_int(_get(d, "timestamp_us", path), "timestamp_us"),
        rng_seed=_int(_get(d, "rng_seed", path), "rng_seed"),
        entities=tuple(ents),
        ego_speed=_num(_opt(d, "ego_speed", 0.0), "ego_speed"),
        ego_trajectory=tuple(_vec(p, f"ego_trajectory[{i}]", 3)
                             for i, p in enumerate(_list(_opt(d, "ego_trajectory", []), "ego_trajectory"))),
        extent=_vec(_get(d, "extent", path), "extent", 4),
    )


def decision_to_dict(d: Decision) -> dict:
    return {
        "recommended_action": d.recommended_action,
        "confidence": d.confidence,
        "target_entity_ids": list(d.target_entity_ids),
        "supporting_entity_ids": list(d.target_entity_ids),
        "risk_summary": d.risk_summary,
        "constraints": list(d.constraints),
        "flags": list(d.flags),
    }


def decision_from_dict(d: Any, path: str = "") -> Decision:
    ids = d.get("target_entity_ids") if isinstance(d, dict) else None
    if ids is None and isinstance(d, dict):
        ids = d.get("supporting_entity_ids")
    return Decision(
        recommended_action=_str(_get(d, "recommended_action", path), "recommended_action"),
        confidence=_num(_get(d, "confidence", path), "confidence"),
        target_entity_ids=_strs(ids if ids is not None else [], "target_entity_ids"),
        risk_summary=_str(_opt(d, "risk_summary", ""), "risk_summary"),
        constraints=_strs(_opt(d, "constraints", []), "constraints"),
        flags=_strs(_opt(d, "flags", []), "flags"),
    )


def verdict_to_dict(v: Verdict) -> dict:
    return {
        "verdict": v.verdict,
        "unsupported_or_conflicting_claims": [{"claim": c, "reason": r} for c, r in v.claims],
        "comment": v.comment,
    }


def verdict_from_dict(d: Any, path: str = "") -> Verdict:
    claims = []
    for i, c in enumerate(_list(_opt(d, "unsupported_or_conflicting_claims", []), "unsupported_or_conflicting_claims")):
        p = f"unsupported_or_conflicting_claims[{i}]"
        claims.append((_str(_get(c, "claim", p), f"{p}.claim"), _str(_opt(c, "reason", ""), f"{p}.reason")))
    return Verdict(
        verdict=_str(_get(d, "verdict", path), "verdict"),
        claims=tuple(claims),
        comment=_str(_opt(d, "comment", ""), "comment"),
    )


def _pose_to_dict(p: SensorPose) -> dict:
    return {"rotation_matrix": [list(r) for r in p.rotation], "translation": list(p.translation)}


def _pose_from_dict(d: Any, path: str) -> SensorPose:
    return SensorPose(
        rotation=_matrix(_get(d, "rotation_matrix", path), f"{path}.rotation_matrix"),
        translation=_vec(_get(d, "translation", path), f"{path}.translation", 3),
    )


def calibration_to_dict(c: Calibration) -> dict:
    return {
        "poses": {k: _pose_to_dict(p) for k, p in c.poses.items()},
        "cameras": {
            k: {"camera_id": cam.camera_id, "pose": _pose_to_dict(cam.pose), "fx": cam.fx, "fy": cam.fy,
                "cx": cam.cx, "cy": cam.cy, "width": cam.width, "height": cam.height}
            for k, cam in c.cameras.items()
        },
    }


def calibration_from_dict(d: Any, path: str = "") -> Calibration:
    poses = _opt(d, "poses", {})
    cams = _opt(d, "cameras", {})
    if not isinstance(poses, dict) or not isinstance(cams, dict):
        raise SchemaError("calibration", "poses and cameras must be objects")
    cameras = {}
    for k, c in cams.items():
        p = f"cameras.{k}"
        cameras[k] = CameraModel(
            camera_id=_str(_get(c, "camera_id", p), f"{p}.camera_id"),
            pose=_pose_from_dict(_get(c, "pose", p), f"{p}.pose"),
            fx=_num(_get(c, "fx", p), f"{p}.fx"),
            fy=_num(_get(c, "fy", p), f"{p}.fy"),
            cx=_num(_get(c, "cx", p), f"{p}.cx"),
            cy=_num(_get(c, "cy", p), f"{p}.cy"),
            width=_int(_get(c, "width", p), f"{p}.width"),
            height=_int(_get(c, "height", p), f"{p}.height"),
        )
    return Calibration(poses={k: _pose_from_dict(v, f"poses.{k}") for k, v in poses.items()}, cameras=cameras)


_CODECS: dict[type, tuple[Callable[[Any], dict], Callable[..., Any]]] = {
    Detection3D: (detection3d_to_dict, lambda d: detection3d_from_dict(d, "detection")),
    Detection2D: (detection2d_to_dict, lambda d: detection2d_from_dict(d, "detection")),
    RadarReturn: (radar_return_to_dict, lambda d: radar_return_from_dict(d, "radar_return")),
    AgentFactSet: (fact_set_to_dict, fact_set_from_dict),
    SceneFacts: (scene_facts_to_dict, scene_facts_from_dict),
    FusedEntity: (entity_to_dict, entity_from_dict),
    SceneSummary: (summary_to_dict, summary_from_dict),
    GroundTruthScene: (gt_to_dict, gt_from_dict),
    Decision: (decision_to_dict, decision_from_dict),
    Verdict: (verdict_to_dict, verdict_from_dict),
    Calibration: (calibration_to_dict, calibration_from_dict),
}


def to_dict(value: Any) -> dict:
    try:
        enc, _ = _CODECS[type(value)]
    except KeyError:
        raise TypeError(f"no codec for {type(value).__name__}") from None
    return enc(value)


def from_dict(cls: Type[T], data: Any, check: bool = True,
              vocabulary: tuple[str, ...] = CLASS_VOCABULARY) -> T:
    """Build ``cls`` from parsed JSON and (by default) run its validator."""
    _, dec = _CODECS[cls]
    try:
        value = dec(data)
    except (TypeError, AttributeError, ValueError) as exc:
        if isinstance(exc, SchemaError):
            raise
        raise SchemaError("<root>", f"malformed value: {exc}") from exc
    if check and cls is not RadarReturn:
        validate(value, vocabulary)
    elif check:
        validate(value)
    return value


def dumps(value: Any) -> str:
    """Canonical text for a domain value."""
    return canonical_dumps(to_dict(value), full_precision=isinstance(value, Calibration))


def serialize(value: Any) -> bytes:
    return dumps(value).encode("utf-8")


def deserialize(cls: Type[T], data: bytes | str, check: bool = True) -> T:
    text = data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data
    try:
        parsed = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError("<root>", f"invalid JSON: {exc.msg} at column {exc.colno}") from exc
    return from_dict(cls, parsed, check=check)


# ---------------------------------------------------------------- JSONL

def write_jsonl(path: str | Path, values: Iterable[Any]) -> None:
    """Write one canonical object per line; dicts are written as-is."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for v in values:
            fh.write(canonical_dumps(v) if isinstance(v, dict) else dumps(v))
            fh.write("\n")


def iter_jsonl(path: str | Path, cls: Optional[Type[T]] = None, check: bool = True) -> Iterator[Any]:
    """Yield parsed lines; schema errors carry ``file:line``."""
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            where = f"{path}:{lineno}"
            try:
                parsed = json.loads(line)
                yield parsed if cls is None else from_dict(cls, parsed, check=check)
            except json.JSONDecodeError as exc:
                raise SchemaError("<root>", f"invalid JSON: {exc.msg}", where) from exc
            except SchemaError as exc:
                raise SchemaError(exc.path, exc.rule, where) from exc


def read_jsonl(path: str | Path, cls: Optional[Type[T]] = None, check: bool = True) -> list[Any]:
    return list(iter_jsonl(path, cls, check))
