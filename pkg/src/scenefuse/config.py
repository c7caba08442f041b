"""Run configuration: every threshold, prior and simulator knob in one place.

Configuration files are TOML. Unknown keys are rejected and every value is
range-checked when the file is loaded; see ``docs/config.md`` for the schema.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from .errors import ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

AGENT_KINDS = ("bevfusion", "lidar", "radar", "camera")

CLASS_VOCABULARY = ("car", "truck", "van", "bus", "pedestrian", "bicycle", "motorcycle", "barrier")

# symmetric; every class has at least one partner so conflict injection is
# possible for every class
CONFUSABLE_CLASSES = {
    "car": ("van", "truck"),
    "truck": ("van", "bus", "car"),
    "van": ("car", "truck"),
    "bus": ("truck",),
    "pedestrian": ("bicycle", "barrier"),
    "bicycle": ("motorcycle", "pedestrian"),
    "motorcycle": ("bicycle",),
    "barrier": ("pedestrian",),
}

# base modalities each agent derives from; overlapping lineage => correlated errors
DEFAULT_LINEAGE = {
    "bevfusion": ("camera", "lidar"),
    "lidar": ("lidar",),
    "radar": ("radar",),
    "camera": ("camera",),
}

FUSED_ATTRIBUTES = ("position", "velocity", "size", "heading", "class")

# per-agent, per-attribute modality prior; a zero prior means the agent carries no evidence for the attribute
DEFAULT_MODALITY_PRIORS = {
    "lidar": {"position": 0.9, "velocity": 0.6, "size": 0.9, "heading": 0.9, "class": 0.6},
    "bevfusion": {"position": 0.8, "velocity": 0.5, "size": 0.8, "heading": 0.8, "class": 0.8},
    "radar": {"position": 0.4, "velocity": 0.9, "size": 0.0, "heading": 0.0, "class": 0.0},
    "camera": {"position": 0.0, "velocity": 0.0, "size": 0.0, "heading": 0.0, "class": 0.9},
}

CLASS_SIZES = {  # (length, width, height) in metres
    "car": (4.6, 1.9, 1.6),
    "truck": (8.0, 2.6, 3.2),
    "van": (5.2, 2.0, 2.1),
    "bus": (11.5, 2.9, 3.3),
    "pedestrian": (0.7, 0.7, 1.75),
    "bicycle": (1.8, 0.6, 1.3),
    "motorcycle": (2.1, 0.8, 1.4),
    "barrier": (2.0, 0.5, 1.0),
}

CLASS_SPEED_CAPS = {  # m/s
    "car": 15.0,
    "truck": 12.0,
    "van": 14.0,
    "bus": 10.0,
    "pedestrian": 1.8,
    "bicycle": 6.0,
    "motorcycle": 15.0,
    "barrier": 0.0,
}

COLORS = ("white", "black", "silver", "red", "blue", "grey")


def classes_compatible(a: str, b: str) -> bool:
    return a == b or b in CONFUSABLE_CLASSES.get(a, ())


@dataclass(frozen=True)
class AgentNoise:
    position_sigma: float = 0.05
    heading_sigma: float = 0.02
    size_sigma: float = 0.05
    velocity_sigma: float = 0.2
    miss_prob: float = 0.05
    # expected number of spurious detections per scene (Poisson mean)
    fp_rate: float = 0.05
    # probability that a detection reports a uniformly drawn confusable class
    confusion_prob: float = 0.0


def _default_agents() -> dict[str, AgentNoise]:
    return {
        "lidar": AgentNoise(position_sigma=0.05, heading_sigma=0.02, size_sigma=0.05, velocity_sigma=0.3),
        "bevfusion": AgentNoise(position_sigma=0.04, heading_sigma=0.02, size_sigma=0.05, velocity_sigma=0.0),
        "radar": AgentNoise(position_sigma=0.30, heading_sigma=0.0, size_sigma=0.0, velocity_sigma=0.10),
        "camera": AgentNoise(position_sigma=2.0, heading_sigma=0.0, size_sigma=0.0, velocity_sigma=0.0),
    }


@dataclass(frozen=True)
class SimConfig:
    entity_count_min: int = 3
    entity_count_max: int = 12
    extent: tuple[float, float, float, float] = (-40.0, 60.0, -30.0, 30.0)  # x_min, x_max, y_min, y_max
    min_gap: float = 1.5  # clearance between circumscribed footprints, m
    max_placement_tries: int = 200
    ego_speed_max: float = 12.0
    agents: dict[str, AgentNoise] = field(default_factory=_default_agents)
    conflict_prob: float = 0.1
    class_confidence: float = 0.9
    radar_returns_min: int = 2
    radar_returns_max: int = 5
    radar_range_max: float = 90.0
    radar_clutter_rate: float = 2.0  # isolated clutter returns per scene (Poisson mean)
    radar_dbscan_eps: float = 1.5
    radar_dbscan_min_pts: int = 2
    camera_max_range: float = 60.0
    lidar_range_max: float = 90.0
    timestamp_step_us: int = 500_000

    @classmethod
    def noiseless(cls, **overrides: Any) -> "SimConfig":
        quiet = AgentNoise(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
        agents = {k: quiet for k in AGENT_KINDS}
        base = dict(agents=agents, conflict_prob=0.0, radar_clutter_rate=0.0)
        base.update(overrides)
        return cls(**base)


@dataclass(frozen=True)
class AssociationConfig:
    gating_radius: float = 3.0
    gate_euclidean: float = 2.0
    gate_mahalanobis: float = 9.21  # chi-square(2) at 0.99
    lambda_cls: float = 5.0
    lambda_size: float = 1.0
    camera_iou_threshold: float = 0.3
    velocity_gate: float = 3.0
    radar_confidence_floor: float = 0.5


@dataclass(frozen=True)
class FusionConfig:
    beta: float = 0.9
    tau_cls: float = 0.6
    gate_quantile: float = 0.95
    suspicious_quantile: float = 0.99
    ci_omega: float = 0.5
    ci_biased_omega: float = 0.7
    ci_residual_ratio: float = 2.0
    initial_reliability: float = 0.8
    default_position_cov: dict[str, float] = field(
        default_factory=lambda: {"lidar": 0.04, "bevfusion": 0.09, "radar": 0.25}
    )
    default_velocity_cov: dict[str, float] = field(
        default_factory=lambda: {"lidar": 0.25, "bevfusion": 0.25, "radar": 0.25}
    )
    heading_variance: float = 0.01  # rad^2, used by the heading residual gate
    modality_priors: dict[str, dict[str, float]] = field(
        default_factory=lambda: {k: dict(v) for k, v in DEFAULT_MODALITY_PRIORS.items()}
    )


@dataclass(frozen=True)
class SsreConfig:
    k_max: int = 3
    gamma: float = 0.5
    backend: str = "oracle"
    model: str = "default"
    timeout_s: float = 30.0
    temperature_parse: float = 0.0
    temperature: float = 0.2
    numeric_rel_tol: float = 1e-6
    tau_ttc: float = 3.0
    horizon_s: float = 5.0


@dataclass(frozen=True)
class MetricConfig:
    iou_threshold: float = 0.5
    heading_tol_deg: float = 15.0
    position_tol: float = 0.5


@dataclass(frozen=True)
class QaConfig:
    tau_ttc: float = 3.0
    horizon_s: float = 5.0
    lateral_m: float = 2.0
    near_m: float = 10.0
    critical_ttc: float = 1.5
    lead_gap_m: float = 8.0
    blocked_range_m: float = 30.0
    adjacent_lane_m: float = 6.0
    adjacent_clear_m: float = 15.0


@dataclass(frozen=True)
class GeometryConfig:
    z_min: float = 1e-3
    eps_los: float = 1e-6


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    run_id: str = "run"
    output_dir: str = "runs/default"
    jobs: int = 1
    vocabulary: tuple[str, ...] = CLASS_VOCABULARY
    sim: SimConfig = field(default_factory=SimConfig)
    association: AssociationConfig = field(default_factory=AssociationConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    ssre: SsreConfig = field(default_factory=SsreConfig)
    metrics: MetricConfig = field(default_factory=MetricConfig)
    qa: QaConfig = field(default_factory=QaConfig)
    geometry: GeometryConfig = field(default_factory=GeometryConfig)

    def fingerprint(self) -> str:
        blob = json.dumps(config_to_dict(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


# ---------------------------------------------------------------- validation

_PROB_FIELDS = {"miss_prob", "confusion_prob", "conflict_prob", "class_confidence", "tau_cls",
                "gate_quantile", "suspicious_quantile", "beta", "initial_reliability",
                "gamma", "iou_threshold", "camera_iou_threshold"}


def _check(cond: bool, path: str, msg: str) -> None:
    if not cond:
        raise ConfigError(f"{path}: {msg}")


def validate_config(cfg: RunConfig) -> RunConfig:
    s = cfg.sim
    _check(0 <= s.entity_count_min <= s.entity_count_max, "sim.entity_count", "need 0 <= min <= max")
    x0, x1, y0, y1 = s.extent
    _check(x0 < x1 and y0 < y1, "sim.extent", "need x_min < x_max and y_min < y_max")
    _check(s.min_gap >= 0, "sim.min_gap", "must be >= 0")
    _check(1 <= s.radar_returns_min <= s.radar_returns_max, "sim.radar_returns", "need 1 <= min <= max")
    _check(s.radar_dbscan_eps > 0 and s.radar_dbscan_min_pts >= 1, "sim.radar_dbscan", "eps > 0, min_pts >= 1")
    _check(0 <= s.conflict_prob <= 1, "sim.conflict_prob", "must be in [0, 1]")
    _check(0 < s.class_confidence <= 1, "sim.class_confidence", "must be in (0, 1]")
    _check(s.radar_clutter_rate >= 0, "sim.radar_clutter_rate", "must be >= 0")
    for kind in AGENT_KINDS:
        _check(kind in s.agents, f"sim.agents.{kind}", "missing")
    for kind, noise in s.agents.items():
        _check(kind in AGENT_KINDS, f"sim.agents.{kind}", "unknown agent kind")
        for f in fields(noise):
            val = getattr(noise, f.name)
            _check(val >= 0 and math.isfinite(val), f"sim.agents.{kind}.{f.name}", "must be finite and >= 0")
            if f.name in _PROB_FIELDS:
                _check(val <= 1, f"sim.agents.{kind}.{f.name}", "must be in [0, 1]")
    a = cfg.association
    for f in fields(a):
        _check(getattr(a, f.name) > 0, f"association.{f.name}", "must be > 0")
    _check(a.camera_iou_threshold <= 1, "association.camera_iou_threshold", "must be <= 1")
    fu = cfg.fusion
    _check(0 <= fu.beta <= 1, "fusion.beta", "must be in [0, 1]")
    _check(0 < fu.tau_cls <= 1, "fusion.tau_cls", "must be in (0, 1]")
    _check(0 < fu.gate_quantile < fu.suspicious_quantile < 1, "fusion.quantiles", "need 0 < gate < suspicious < 1")
    _check(0 < fu.ci_omega < 1 and 0 < fu.ci_biased_omega < 1, "fusion.ci_omega", "must be in (0, 1)")
    _check(0 <= fu.initial_reliability <= 1, "fusion.initial_reliability", "must be in [0, 1]")
    _check(fu.heading_variance > 0, "fusion.heading_variance", "must be > 0")
    for kind, priors in fu.modality_priors.items():
        _check(kind in AGENT_KINDS, f"fusion.modality_priors.{kind}", "unknown agent kind")
        for attr, val in priors.items():
            _check(attr in FUSED_ATTRIBUTES, f"fusion.modality_priors.{kind}.{attr}", "unknown attribute")
            _check(0 <= val <= 1, f"fusion.modality_priors.{kind}.{attr}", "must be in [0, 1]")
    ss = cfg.ssre
    _check(ss.k_max >= 1, "ssre.k_max", "must be >= 1")
    _check(0 < ss.gamma <= 1, "ssre.gamma", "must be in (0, 1]")
    _check(ss.backend in ("oracle", "http", "replay"), "ssre.backend", "one of oracle, http, replay")
    _check(ss.timeout_s > 0, "ssre.timeout_s", "must be > 0")
    m = cfg.metrics
    _check(0 < m.iou_threshold < 1, "metrics.iou_threshold", "must be in (0, 1)")
    _check(m.heading_tol_deg > 0 and m.position_tol > 0, "metrics", "tolerances must be > 0")
    q = cfg.qa
    for f in fields(q):
        _check(getattr(q, f.name) > 0, f"qa.{f.name}", "must be > 0")
    _check(cfg.jobs >= 1, "jobs", "must be >= 1")
    _check(set(cfg.vocabulary) == set(CLASS_VOCABULARY), "vocabulary", "the class vocabulary is fixed")
    return cfg


# ---------------------------------------------------------------- (de)serialisation

def config_to_dict(obj: Any) -> Any:
    if dataclasses.is_dataclass(obj):
        return {f.name: config_to_dict(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, dict):
        return {k: config_to_dict(v) for k, v in obj.items()}
    if isinstance(obj, tuple):
        return [config_to_dict(v) for v in obj]
    return obj


def _build(cls: type, data: dict[str, Any], path: str) -> Any:
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a table")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown keys {unknown}")
    defaults = cls()
    kwargs: dict[str, Any] = {}
    for name, value in data.items():
        here = f"{path}.{name}" if path else name
        current = getattr(defaults, name)
        if dataclasses.is_dataclass(current):
            kwargs[name] = _build(type(current), value, here)
        elif name == "agents":
            if not isinstance(value, dict):
                raise ConfigError(f"{here}: expected a table")
            merged = dict(current)
            for kind, table in value.items():
                base = config_to_dict(merged.get(kind, AgentNoise()))
                if not isinstance(table, dict):
                    raise ConfigError(f"{here}.{kind}: expected a table")
                bad = sorted(set(table) - set(base))
                if bad:
                    raise ConfigError(f"{here}.{kind}: unknown keys {bad}")
                base.update(table)
                merged[kind] = AgentNoise(**{k: float(v) for k, v in base.items()})
            kwargs[name] = merged
        elif isinstance(current, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{here}: expected a table")
            merged = {k: (dict(v) if isinstance(v, dict) else v) for k, v in current.items()}
            for k, v in value.items():
                if isinstance(v, dict) and isinstance(merged.get(k), dict):
                    merged[k].update(v)
                else:
                    merged[k] = v
            kwargs[name] = merged
        elif isinstance(current, tuple):
            kwargs[name] = tuple(value)
        elif isinstance(current, bool):
            kwargs[name] = bool(value)
        elif isinstance(current, int):
            if not isinstance(value, int):
                raise ConfigError(f"{here}: expected an integer")
            kwargs[name] = value
        elif isinstance(current, float):
            if not isinstance(value, (int, float)):
                raise ConfigError(f"{here}: expected a number")
            kwargs[name] = float(value)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def config_from_dict(data: dict[str, Any]) -> RunConfig:
    return validate_config(_build(RunConfig, data, ""))


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return validate_config(RunConfig())
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(data)


def replace(cfg: Any, **changes: Any) -> Any:
    return dataclasses.replace(cfg, **changes)
