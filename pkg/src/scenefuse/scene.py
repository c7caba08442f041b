"""Shared domain types.

All values are frozen dataclasses. Floats are canonicalised to 9 significant
digits at construction so that a JSON round trip reproduces the value
exactly; headings are wrapped to (-pi, pi]. ``validate`` checks every
invariant and raises :class:`~scenefuse.errors.SchemaError` naming the
offending field.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Optional

import numpy as np

from .config import AGENT_KINDS, CLASS_VOCABULARY
from .errors import SchemaError

ENTITY_ID_RE = re.compile(r"^ID_([1-9][0-9]*)$")

AMBIGUITY_FLAGS = ("class_ambiguous", "geometry_ambiguous", "single_source", "velocity_skipped")
ACTIONS = ("keep_lane", "slow_down", "stop", "yield", "change_lane_left", "change_lane_right", "follow", "unknown")
VERDICTS = ("Consistent", "Minor", "Major")

_set = object.__setattr__


def r9(x: float) -> float:
    """Round to 9 significant digits; -0.0 becomes 0.0."""
    return float(format(float(x), ".9g")) + 0.0


def wrap_angle(theta: float) -> float:
    """Wrap to (-pi, pi]."""
    w = math.remainder(float(theta), 2.0 * math.pi)
    if w <= -math.pi:
        w += 2.0 * math.pi
    return w


def _vec(values: Iterable[float]) -> tuple[float, ...]:
    return tuple(r9(v) for v in values)


def _mat(rows: Optional[Iterable[Iterable[float]]]) -> Optional[tuple[tuple[float, ...], ...]]:
    if rows is None:
        return None
    return tuple(_vec(row) for row in np.asarray(rows, dtype=float).tolist())


def _probs(p: Mapping[str, float]) -> dict[str, float]:
    return {str(k): r9(v) for k, v in sorted(p.items())}


def canon(obj: Any) -> Any:
    """Canonicalise a JSON-like structure (used for lineage payloads)."""
    if isinstance(obj, bool) or obj is None or isinstance(obj, str):
        return obj
    if isinstance(obj, int):
        return obj
    if isinstance(obj, float):
        return r9(obj)
    if isinstance(obj, np.floating):
        return r9(float(obj))
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, Mapping):
        return {str(k): canon(v) for k, v in sorted(obj.items())}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [canon(v) for v in (obj.tolist() if isinstance(obj, np.ndarray) else obj)]
    if isinstance(obj, (set, frozenset)):
        return sorted(canon(v) for v in obj)
    raise TypeError(f"cannot canonicalise {type(obj).__name__}")


def argmax_class(class_probs: Mapping[str, float], vocabulary: tuple[str, ...] = CLASS_VOCABULARY) -> str:
    """Most probable class; ties go to the earlier vocabulary entry."""
    best = None
    best_p = -1.0
    for c in vocabulary:
        p = class_probs.get(c, 0.0)
        if p > best_p:
            best, best_p = c, p
    return best if best is not None else vocabulary[0]


# ---------------------------------------------------------------- calibration

@dataclass(frozen=True)
class SensorPose:
    """Rigid sensor->ego pose."""

    rotation: tuple[tuple[float, ...], ...]
    translation: tuple[float, float, float]

    def __post_init__(self) -> None:
        _set(self, "rotation", tuple(tuple(float(v) for v in row) for row in self.rotation))
        _set(self, "translation", tuple(float(v) for v in self.translation))

    @property
    def R(self) -> np.ndarray:
        return np.array(self.rotation, dtype=float)

    @property
    def t(self) -> np.ndarray:
        return np.array(self.translation, dtype=float)

    def inverse(self) -> "SensorPose":
        R = self.R
        return SensorPose(R.T.tolist(), (-R.T @ self.t).tolist())

    @classmethod
    def identity(cls) -> "SensorPose":
        return cls(np.eye(3).tolist(), (0.0, 0.0, 0.0))


@dataclass(frozen=True)
class CameraModel:
    camera_id: str
    pose: SensorPose
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class Calibration:
    poses: dict[str, SensorPose] = field(default_factory=dict)
    cameras: dict[str, CameraModel] = field(default_factory=dict)

    def pose(self, sensor: str) -> SensorPose:
        if sensor in self.poses:
            return self.poses[sensor]
        return SensorPose.identity()


# ---------------------------------------------------------------- agent outputs

@dataclass(frozen=True)
class Detection3D:
    local_id: int
    center_ego: tuple[float, float, float]
    size: tuple[float, float, float]
    heading: float
    class_probs: dict[str, float]
    confidence: float
    velocity_bev: Optional[tuple[float, float]] = None
    position_cov: Optional[tuple[tuple[float, ...], ...]] = None
    velocity_cov: Optional[tuple[tuple[float, ...], ...]] = None
    flags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        _set(self, "local_id", int(self.local_id))
        _set(self, "center_ego", _vec(self.center_ego))
        _set(self, "size", _vec(self.size))
        _set(self, "heading", r9(wrap_angle(self.heading)))
        _set(self, "class_probs", _probs(self.class_probs))
        _set(self, "confidence", r9(self.confidence))
        if self.velocity_bev is not None:
            _set(self, "velocity_bev", _vec(self.velocity_bev))
        _set(self, "position_cov", _mat(self.position_cov))
        _set(self, "velocity_cov", _mat(self.velocity_cov))
        _set(self, "flags", tuple(sorted(set(self.flags))))

    @property
    def bev(self) -> np.ndarray:
        return np.array(self.center_ego[:2], dtype=float)

    @property
    def bev_cov(self) -> Optional[np.ndarray]:
        if self.position_cov is None:
            return None
        return np.array(self.position_cov, dtype=float)[:2, :2]

    def label(self, vocabulary: tuple[str, ...] = CLASS_VOCABULARY) -> str:
        return argmax_class(self.class_probs, vocabulary)


@dataclass(frozen=True)
class Detection2D:
    local_id: int
    camera_id: str
    bbox: tuple[float, float, float, float]
    class_probs: dict[str, float]
    confidence: float
    semantic_attributes: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        _set(self, "local_id", int(self.local_id))
        _set(self, "bbox", _vec(self.bbox))
        _set(self, "class_probs", _probs(self.class_probs))
        _set(self, "confidence", r9(self.confidence))
        _set(self, "semantic_attributes", tuple(self.semantic_attributes))

    def label(self, vocabulary: tuple[str, ...] = CLASS_VOCABULARY) -> str:
        return argmax_class(self.class_probs, vocabulary)


@dataclass(frozen=True)
class RadarReturn:
    range_m: float
    azimuth: float
    radial_velocity: float
    rcs: Optional[float] = None

    def __post_init__(self) -> None:
        _set(self, "range_m", r9(self.range_m))
        _set(self, "azimuth", r9(self.azimuth))
        _set(self, "radial_velocity", r9(self.radial_velocity))
        if self.rcs is not None:
            _set(self, "rcs", r9(self.rcs))


@dataclass(frozen=True)
class AgentFactSet:
    agent_kind: str
    scene_id: str
    timestamp_us: int
    detections_3d: tuple[Detection3D, ...] = ()
    detections_2d: tuple[Detection2D, ...] = ()
    synopsis: Optional[str] = None
    source_lineage: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        _set(self, "timestamp_us", int(self.timestamp_us))
        _set(self, "detections_3d", tuple(self.detections_3d))
        _set(self, "detections_2d", tuple(self.detections_2d))
        _set(self, "source_lineage", frozenset(self.source_lineage))


@dataclass(frozen=True)
class SceneFacts:
    """One line of a fact-set stream: every agent's output for one timestamp."""

    scene_id: str
    timestamp_us: int
    ego_speed: float
    fact_sets: tuple[AgentFactSet, ...] = ()

    def __post_init__(self) -> None:
        _set(self, "timestamp_us", int(self.timestamp_us))
        _set(self, "ego_speed", r9(self.ego_speed))
        _set(self, "fact_sets", tuple(self.fact_sets))

    def by_kind(self) -> dict[str, AgentFactSet]:
        return {fs.agent_kind: fs for fs in self.fact_sets}


# ---------------------------------------------------------------- fused output

@dataclass(frozen=True)
class FusedEntity:
    entity_id: str
    class_name: str
    class_confidence: float
    position_bev: tuple[float, float]
    position_cov: tuple[tuple[float, ...], ...]
    size: tuple[float, float, float]
    heading: float
    sources: frozenset[str]
    lineage: dict[str, Any]
    velocity_bev: Optional[tuple[float, float]] = None
    velocity_cov: Optional[tuple[tuple[float, ...], ...]] = None
    ambiguity_flags: frozenset[str] = frozenset()
    semantic_attributes: tuple[str, ...] = ()
    conflict_resolved: bool = False
    conflict_values: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        _set(self, "class_confidence", r9(self.class_confidence))
        _set(self, "position_bev", _vec(self.position_bev))
        _set(self, "position_cov", _mat(self.position_cov))
        _set(self, "size", _vec(self.size))
        _set(self, "heading", r9(wrap_angle(self.heading)))
        _set(self, "sources", frozenset(self.sources))
        _set(self, "lineage", canon(self.lineage))
        if self.velocity_bev is not None:
            _set(self, "velocity_bev", _vec(self.velocity_bev))
        _set(self, "velocity_cov", _mat(self.velocity_cov))
        _set(self, "ambiguity_flags", frozenset(self.ambiguity_flags))
        _set(self, "semantic_attributes", tuple(self.semantic_attributes))
        _set(self, "conflict_values", {str(k): str(v) for k, v in sorted(self.conflict_values.items())})

    @property
    def number(self) -> int:
        m = ENTITY_ID_RE.match(self.entity_id)
        return int(m.group(1)) if m else -1


@dataclass(frozen=True)
class SceneSummary:
    scene_id: str
    timestamp_us: int
    entities: tuple[FusedEntity, ...] = ()
    ego_speed: float = 0.0
    entity_types_present: tuple[str, ...] = ()
    entity_types_absent: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        _set(self, "timestamp_us", int(self.timestamp_us))
        _set(self, "entities", tuple(self.entities))
        _set(self, "ego_speed", r9(self.ego_speed))
        _set(self, "entity_types_present", tuple(self.entity_types_present))
        _set(self, "entity_types_absent", tuple(self.entity_types_absent))

    def entity(self, entity_id: str) -> Optional[FusedEntity]:
        for e in self.entities:
            if e.entity_id == entity_id:
                return e
        return None

    @property
    def entity_ids(self) -> tuple[str, ...]:
        return tuple(e.entity_id for e in self.entities)


def type_presence(classes: Iterable[str], vocabulary: tuple[str, ...] = CLASS_VOCABULARY) -> tuple[tuple[str, ...], tuple[str, ...]]:
    seen = set(classes)
    present = tuple(c for c in vocabulary if c in seen)
    absent = tuple(c for c in vocabulary if c not in seen)
    return present, absent


# ---------------------------------------------------------------- ground truth

@dataclass(frozen=True)
class GtEntity:
    gt_id: str
    class_name: str
    position_bev: tuple[float, float]
    velocity_bev: tuple[float, float]
    size: tuple[float, float, float]
    heading: float
    z: float = 0.0
    color: Optional[str] = None

    def __post_init__(self) -> None:
        _set(self, "position_bev", _vec(self.position_bev))
        _set(self, "velocity_bev", _vec(self.velocity_bev))
        _set(self, "size", _vec(self.size))
        _set(self, "heading", r9(wrap_angle(self.heading)))
        _set(self, "z", r9(self.z))


@dataclass(frozen=True)
class GroundTruthScene:
    scene_id: str
    timestamp_us: int
    rng_seed: int
    entities: tuple[GtEntity, ...] = ()
    ego_speed: float = 0.0
    ego_trajectory: tuple[tuple[float, float, float], ...] = ()  # (t_s, x, y)
    extent: tuple[float, float, float, float] = (-40.0, 60.0, -30.0, 30.0)

    def __post_init__(self) -> None:
        _set(self, "timestamp_us", int(self.timestamp_us))
        _set(self, "rng_seed", int(self.rng_seed))
        _set(self, "entities", tuple(self.entities))
        _set(self, "ego_speed", r9(self.ego_speed))
        _set(self, "ego_trajectory", tuple(_vec(p) for p in self.ego_trajectory))
        _set(self, "extent", _vec(self.extent))


# ---------------------------------------------------------------- reasoning outputs

@dataclass(frozen=True)
class Decision:
    recommended_action: str
    confidence: float
    target_entity_ids: tuple[str, ...] = ()
    risk_summary: str = ""
    constraints: tuple[str, ...] = ()
    flags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        _set(self, "confidence", r9(self.confidence))
        _set(self, "target_entity_ids", tuple(self.target_entity_ids))
        _set(self, "constraints", tuple(self.constraints))
        _set(self, "flags", tuple(self.flags))


@dataclass(frozen=True)
class Verdict:
    verdict: str
    claims: tuple[tuple[str, str], ...] = ()
    comment: str = ""

    def __post_init__(self) -> None:
        _set(self, "claims", tuple((str(c), str(r)) for c, r in self.claims))


# ---------------------------------------------------------------- validation

def _fail(path: str, rule: str) -> None:
    raise SchemaError(path, rule)


def _finite(values: Iterable[float], path: str) -> None:
    for v in values:
        if not math.isfinite(v):
            _fail(path, "must be finite")


def _check_psd(m: Optional[tuple], path: str, dims: tuple[int, ...]) -> None:
    if m is None:
        return
    a = np.array(m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] not in dims:
        _fail(path, f"must be a square matrix of size {dims}")
    if not np.all(np.isfinite(a)):
        _fail(path, "must be finite")
    if not np.allclose(a, a.T, atol=1e-9):
        _fail(path, "must be symmetric")
    if np.linalg.eigvalsh(a).min() < -1e-9:
        _fail(path, "must be positive semi-definite")


def _check_probs(p: Mapping[str, float], path: str, vocabulary: tuple[str, ...]) -> None:
    for k, v in p.items():
        if k not in vocabulary:
            _fail(f"{path}.{k}", "class not in vocabulary")
        if not (0.0 <= v <= 1.0):
            _fail(f"{path}.{k}", "probability must be in [0, 1]")
    if abs(sum(p.values()) - 1.0) > 1e-6:
        _fail(path, "probabilities must sum to 1 +- 1e-6")


def _check_unit(x: float, path: str) -> None:
    if not (0.0 <= x <= 1.0):
        _fail(path, "must be in [0, 1]")


def _check_heading(h: float, path: str) -> None:
    if not (-math.pi < h <= math.pi):
        _fail(path, "heading must be in (-pi, pi]")


def validate_pose(p: SensorPose, path: str = "pose") -> None:
    R = p.R
    if R.shape != (3, 3) or len(p.translation) != 3:
        _fail(path, "rotation must be 3x3 and translation a 3-vector")
    if np.abs(R.T @ R - np.eye(3)).max() > 1e-9:
        _fail(f"{path}.rotation", "must be orthonormal")
    if abs(np.linalg.det(R) - 1.0) > 1e-9:
        _fail(f"{path}.rotation", "determinant must be +1")


def validate_camera(c: CameraModel, path: str = "camera") -> None:
    validate_pose(c.pose, f"{path}.pose")
    if not (c.fx > 0 and c.fy > 0):
        _fail(path, "fx, fy must be > 0")
    if not (0 <= c.cx < c.width and 0 <= c.cy < c.height):
        _fail(path, "principal point must lie inside the image")


def validate_calibration(cal: Calibration, path: str = "calibration") -> None:
    for name, pose in cal.poses.items():
        validate_pose(pose, f"{path}.poses.{name}")
    for name, cam in cal.cameras.items():
        if cam.camera_id != name:
            _fail(f"{path}.cameras.{name}", "camera_id must match its key")
        validate_camera(cam, f"{path}.cameras.{name}")


def validate_detection3d(d: Detection3D, path: str, vocabulary: tuple[str, ...]) -> None:
    _finite(d.center_ego, f"{path}.center_ego")
    if len(d.center_ego) != 3 or len(d.size) != 3:
        _fail(path, "center_ego and size must be 3-vectors")
    _finite(d.size, f"{path}.size")
    if min(d.size) < 0:
        _fail(f"{path}.size", "must be >= 0")
    _check_heading(d.heading, f"{path}.heading")
    _check_probs(d.class_probs, f"{path}.class_probs", vocabulary)
    _check_unit(d.confidence, f"{path}.confidence")
    if d.velocity_bev is not None:
        if len(d.velocity_bev) != 2:
            _fail(f"{path}.velocity_bev", "must be a 2-vector")
        _finite(d.velocity_bev, f"{path}.velocity_bev")
    _check_psd(d.position_cov, f"{path}.covariance.position", (2, 3))
    _check_psd(d.velocity_cov, f"{path}.covariance.velocity", (2,))


def validate_detection2d(d: Detection2D, path: str, vocabulary: tuple[str, ...],
                         camera: Optional[CameraModel] = None) -> None:
    u0, v0, u1, v1 = d.bbox
    _finite(d.bbox, f"{path}.bbox")
    if not (u0 < u1 and v0 < v1):
        _fail(f"{path}.bbox", "need u_min < u_max and v_min < v_max")
    if camera is not None and not (u0 >= 0 and v0 >= 0 and u1 <= camera.width and v1 <= camera.height):
        _fail(f"{path}.bbox", "must lie within the image")
    _check_probs(d.class_probs, f"{path}.class_probs", vocabulary)
    _check_unit(d.confidence, f"{path}.confidence")


def validate_radar_return(r: RadarReturn, path: str = "radar_return") -> None:
    _finite((r.range_m, r.azimuth, r.radial_velocity), path)
    if r.range_m < 0:
        _fail(f"{path}.range_m", "must be >= 0")


def validate_fact_set(fs: AgentFactSet, path: str, vocabulary: tuple[str, ...],
                      calibration: Optional[Calibration] = None) -> None:
    if fs.agent_kind not in AGENT_KINDS:
        _fail(f"{path}.agent_kind", f"must be one of {AGENT_KINDS}")
    if fs.agent_kind == "camera" and fs.detections_3d:
        _fail(path, "camera agents carry only detections_2d")
    if fs.agent_kind != "camera" and fs.detections_2d:
        _fail(path, "non-camera agents carry only detections_3d")
    ids = [d.local_id for d in fs.detections_3d] + [d.local_id for d in fs.detections_2d]
    if len(ids) != len(set(ids)):
        _fail(path, "local_id values must be unique within a fact set")
    for i, d in enumerate(fs.detections_3d):
        validate_detection3d(d, f"{path}.detections_3d[{i}]", vocabulary)
    for i, d in enumerate(fs.detections_2d):
        cam = calibration.cameras.get(d.camera_id) if calibration is not None else None
        validate_detection2d(d, f"{path}.detections_2d[{i}]", vocabulary, cam)


def validate_scene_facts(sf: SceneFacts, vocabulary: tuple[str, ...] = CLASS_VOCABULARY,
                         calibration: Optional[Calibration] = None) -> None:
    kinds = [fs.agent_kind for fs in sf.fact_sets]
    if len(kinds) != len(set(kinds)):
        _fail("fact_sets", "at most one fact set per agent_kind per scene")
    for i, fs in enumerate(sf.fact_sets):
        if fs.scene_id != sf.scene_id:
            _fail(f"fact_sets[{i}].scene_id", "must match the enclosing scene")
        validate_fact_set(fs, f"fact_sets[{i}]", vocabulary, calibration)


def validate_entity(e: FusedEntity, path: str, vocabulary: tuple[str, ...]) -> None:
    if not ENTITY_ID_RE.match(e.entity_id):
        _fail(f"{path}.entity_id", "must be ID_<n> with n a positive integer")
    if e.class_name not in vocabulary:
        _fail(f"{path}.class", "class not in vocabulary")
    _check_unit(e.class_confidence, f"{path}.class_confidence")
    _finite(e.position_bev, f"{path}.position_bev")
    _check_psd(e.position_cov, f"{path}.position_cov", (2,))
    if e.velocity_bev is not None:
        _finite(e.velocity_bev, f"{path}.velocity_bev")
    _check_psd(e.velocity_cov, f"{path}.velocity_cov", (2,))
    _check_heading(e.heading, f"{path}.heading")
    for s in e.sources:
        if s not in AGENT_KINDS:
            _fail(f"{path}.sources", f"unknown agent kind {s!r}")
    if not e.sources:
        _fail(f"{path}.sources", "must be non-empty")
    for f in e.ambiguity_flags:
        if f not in AMBIGUITY_FLAGS:
            _fail(f"{path}.ambiguity_flags", f"unknown flag {f!r}")
    populated = ["position", "size", "heading", "class"] + (["velocity"] if e.velocity_bev is not None else [])
    for attr in populated:
        rec = e.lineage.get(attr)
        if not rec or not rec.get("rule"):
            _fail(f"{path}.lineage.{attr}", "lineage must be recorded for every populated attribute")
    if e.conflict_resolved and len(set(e.conflict_values.values())) < 2:
        _fail(f"{path}.conflict_values", "conflict_resolved requires the disagreeing values")


def validate_summary(s: SceneSummary, vocabulary: tuple[str, ...] = CLASS_VOCABULARY) -> None:
    ids = [e.entity_id for e in s.entities]
    if len(ids) != len(set(ids)):
        _fail("entities", "entity_id values must be unique")
    for i, e in enumerate(s.entities):
        validate_entity(e, f"entities[{i}]", vocabulary)
    present, absent = set(s.entity_types_present), set(s.entity_types_absent)
    if present & absent:
        _fail("entity_types_present", "present and absent sets must be disjoint")
    if present | absent != set(vocabulary):
        _fail("entity_types_absent", "present and absent must cover the vocabulary")
    if present != {e.class_name for e in s.entities}:
        _fail("entity_types_present", "must equal the set of entity classes")


def validate_gt(g: GroundTruthScene, vocabulary: tuple[str, ...] = CLASS_VOCABULARY) -> None:
    ids = [e.gt_id for e in g.entities]
    if len(ids) != len(set(ids)):
        _fail("entities", "gt_id values must be unique")
    x0, x1, y0, y1 = g.extent
    for i, e in enumerate(g.entities):
        if e.class_name not in vocabulary:
            _fail(f"entities[{i}].class", "class not in vocabulary")
        x, y = e.position_bev
        if not (x0 <= x <= x1 and y0 <= y <= y1):
            _fail(f"entities[{i}].position_bev", "must lie within the scene extent")
        if min(e.size) <= 0:
            _fail(f"entities[{i}].size", "must be > 0")
        _check_heading(e.heading, f"entities[{i}].heading")


def validate_decision(d: Decision, summary: Optional[SceneSummary] = None) -> None:
    if d.recommended_action not in ACTIONS:
        _fail("recommended_action", f"must be one of {ACTIONS}")
    _check_unit(d.confidence, "confidence")
    if summary is not None:
        known = set(summary.entity_ids)
        for i, eid in enumerate(d.target_entity_ids):
            if eid not in known:
                _fail(f"target_entity_ids[{i}]", f"{eid} is not an entity of the summary")


def validate_verdict(v: Verdict) -> None:
    if v.verdict not in VERDICTS:
        _fail("verdict", f"must be one of {VERDICTS}")
    if v.verdict == "Consistent" and v.claims:
        _fail("unsupported_or_conflicting_claims", "must be empty for a Consistent verdict")


def validate(obj: Any, vocabulary: tuple[str, ...] = CLASS_VOCABULARY) -> None:
    """Check every invariant of a domain value; raises SchemaError."""
    if isinstance(obj, SceneSummary):
        validate_summary(obj, vocabulary)
    elif isinstance(obj, FusedEntity):
        validate_entity(obj, "entity", vocabulary)
    elif isinstance(obj, SceneFacts):
        validate_scene_facts(obj, vocabulary)
    elif isinstance(obj, AgentFactSet):
        validate_fact_set(obj, "fact_set", vocabulary)
    elif isinstance(obj, Detection3D):
        validate_detection3d(obj, "detection", vocabulary)
    elif isinstance(obj, Detection2D):
        validate_detection2d(obj, "detection", vocabulary)
    elif isinstance(obj, RadarReturn):
        validate_radar_return(obj)
    elif isinstance(obj, GroundTruthScene):
        validate_gt(obj, vocabulary)
    elif isinstance(obj, Calibration):
        validate_calibration(obj)
    elif isinstance(obj, SensorPose):
        validate_pose(obj)
    elif isinstance(obj, CameraModel):
        validate_camera(obj)
    elif isinstance(obj, Decision):
        validate_decision(obj)
    elif isinstance(obj, Verdict):
        validate_verdict(obj)
    else:
        raise TypeError(f"no validator for {type(obj).__name__}")
