"""Attribute-level evidence fusion and scene summary emission.

Each source's weight for an attribute is the product of a modality prior,
the agent's running reliability, the detection confidence, an uncertainty
factor and a residual consistency factor. Continuous attributes are fused
in information form, correlated sources (overlapping lineage) are first
combined by covariance intersection, and classes are fused by weighted
voting.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

import numpy as np
from scipy.stats import chi2

from .association import Seed
from .config import CLASS_VOCABULARY, DEFAULT_LINEAGE, FusionConfig
from .errors import ParameterError
from .scene import FusedEntity, SceneSummary, argmax_class, type_presence, wrap_angle

REG = 1e-9
MIN_EIGEN = 1e-12


@lru_cache(maxsize=None)
def chi2_quantile(q: float, dof: int) -> float:
    return float(chi2.ppf(q, dof))


def regularize(cov: np.ndarray) -> np.ndarray:
    """Add ``1e-9 I`` when the matrix is not safely invertible."""
    cov = np.asarray(cov, dtype=float)
    if np.linalg.eigvalsh(cov).min() <= MIN_EIGEN:
        return cov + REG * np.eye(cov.shape[0])
    return cov


# ---------------------------------------------------------------- weights

@dataclass(frozen=True)
class WeightInputs:
    prior: float
    reliability: float
    confidence: float
    uncertainty: float = 1.0
    consistency: float = 1.0

    def __post_init__(self) -> None:
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if not (0.0 <= v <= 1.0):
                raise ParameterError(f"weight factor {f.name}={v} outside [0, 1]")

    @property
    def raw(self) -> float:
        return self.prior * self.reliability * self.confidence * self.uncertainty * self.consistency


def uncertainty_factor(cov: Optional[np.ndarray]) -> float:
    if cov is None:
        return 1.0
    return 1.0 / (1.0 + float(np.trace(np.atleast_2d(cov))))


def residual_statistic(x: Sequence[float], mean: Sequence[float], cov: np.ndarray) -> float:
    r = np.atleast_1d(np.asarray(x, dtype=float) - np.asarray(mean, dtype=float))
    return float(r @ np.linalg.solve(regularize(np.atleast_2d(cov)), r))


def consistency_factor(x: Sequence[float], mean: Sequence[float], cov: np.ndarray) -> float:
    return math.exp(-residual_statistic(x, mean, cov))


def compute_weights(inputs: Sequence[WeightInputs]) -> tuple[np.ndarray, bool]:
    """Normalised weights and whether the all-zero fallback fired.

    When every raw weight is zero the whole mass goes to the most confident
    source (earliest on ties).
    """
    raw = np.array([w.raw for w in inputs], dtype=float)
    if len(raw) == 0:
        return raw, False
    total = math.fsum(raw.tolist())
    if total > 0.0:
        return raw / total, False
    out = np.zeros(len(raw))
    out[int(np.argmax([w.confidence for w in inputs]))] = 1.0
    return out, True


# ---------------------------------------------------------------- reliability

class ReliabilityLedger:
    """Per-agent reliability, updated once per scene in timestamp order."""

    def __init__(self, beta: float = 0.9, initial: float = 0.8, state: Optional[Mapping[str, Any]] = None):
        if not (0.0 <= beta <= 1.0):
            raise ParameterError("beta must be in [0, 1]")
        self.beta = beta
        self.initial = initial
        self.r: dict[str, float] = {}
        self.last_update_us: dict[str, int] = {}
        if state:
            for kind, rec in state.get("agents", {}).items():
                self.r[kind] = float(rec["r"])
                if rec.get("last_update_us") is not None:
                    self.last_update_us[kind] = int(rec["last_update_us"])

    def get(self, agent: str) -> float:
        return self.r.get(agent, self.initial)

    def update(self, agent: str, score: float, timestamp_us: Optional[int] = None) -> float:
        if score not in (0.0, 0.5, 1.0):
            raise ParameterError(f"frame score must be 1, 0.5 or 0, got {score}")
        r = self.beta * self.get(agent) + (1.0 - self.beta) * score
        self.r[agent] = min(1.0, max(0.0, r))
        if timestamp_us is not None:
            self.last_update_us[agent] = int(timestamp_us)
        return self.r[agent]

    def snapshot(self) -> dict[str, float]:
        return dict(self.r)

    def to_dict(self) -> dict:
        agents = {k: {"r": self.r[k], "last_update_us": self.last_update_us.get(k)} for k in sorted(self.r)}
        return {"beta": self.beta, "initial": self.initial, "agents": agents}

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path, beta: float = 0.9, initial: float = 0.8) -> "ReliabilityLedger":
        p = Path(path)
        if not p.exists():
            return cls(beta, initial)
        return cls(beta, initial, json.loads(p.read_text()))


def frame_score(statistic: float, dof: int, cfg: FusionConfig) -> float:
    """Pass / suspicious / veto score from a gate statistic."""
    if statistic <= chi2_quantile(cfg.gate_quantile, dof):
        return 1.0
    if statistic <= chi2_quantile(cfg.suspicious_quantile, dof):
        return 0.5
    return 0.0


# ---------------------------------------------------------------- fusion rules

def fuse_continuous(xs: Sequence[Sequence[float]], covs: Sequence[np.ndarray],
                    weights: Sequence[float]) -> tuple[np.ndarray, np.ndarray, bool]:
    """Weighted information-form fusion; returns (mean, covariance, fallback_used)."""
    X = [np.atleast_1d(np.asarray(x, dtype=float)) for x in xs]
    infos = [np.linalg.inv(regularize(np.atleast_2d(c))) for c in covs]
    info_sum = sum(w * I for w, I in zip(weights, infos))
    vec_sum = sum(w * (I @ x) for w, I, x in zip(weights, infos, X))
    if np.linalg.eigvalsh(info_sum).min() <= MIN_EIGEN:
        k = int(np.argmax(weights))
        return X[k], np.atleast_2d(np.asarray(covs[k], dtype=float)), True
    cov = np.linalg.inv(info_sum)
    cov = 0.5 * (cov + cov.T)
    return cov @ vec_sum, cov, False


def covariance_intersection(xa: Sequence[float], cov_a: np.ndarray, xb: Sequence[float], cov_b: np.ndarray,
                            omega: float) -> tuple[np.ndarray, np.ndarray]:
    if not (0.0 < omega < 1.0):
        raise ParameterError(f"omega must be in (0, 1), got {omega}")
    ia = np.linalg.inv(regularize(np.atleast_2d(cov_a)))
    ib = np.linalg.inv(regularize(np.atleast_2d(cov_b)))
    info = omega * ia + (1.0 - omega) * ib
    cov = np.linalg.inv(info)
    cov = 0.5 * (cov + cov.T)
    x = cov @ (omega * ia @ np.asarray(xa, dtype=float) + (1.0 - omega) * ib @ np.asarray(xb, dtype=float))
    return x, cov


def ci_omega(residual_a: float, residual_b: float, cfg: FusionConfig) -> float:
    """Balanced by default; biased toward the source with the clearly smaller residual."""
    lo, hi = min(residual_a, residual_b), max(residual_a, residual_b)
    if hi > cfg.ci_residual_ratio * lo and hi > 0:
        return cfg.ci_biased_omega if residual_a < residual_b else 1.0 - cfg.ci_biased_omega
    return cfg.ci_omega


def fuse_categorical(class_probs: Sequence[Mapping[str, float]], weights: Sequence[float],
                     vocabulary: tuple[str, ...] = CLASS_VOCABULARY) -> tuple[str, float, dict[str, float]]:
    """Weighted vote; ties go to the earlier vocabulary class."""
    conf = {c: math.fsum(w * p.get(c, 0.0) for w, p in zip(weights, class_probs)) for c in vocabulary}
    best = argmax_class(conf, vocabulary)
    return best, conf[best], conf


def fuse_heading(headings: Sequence[float], weights: Sequence[float]) -> tuple[float, bool]:
    """Weighted unit-vector mean; falls back to the heaviest source when the vectors cancel."""
    c = math.fsum(w * math.cos(h) for w, h in zip(weights, headings))
    s = math.fsum(w * math.sin(h) for w, h in zip(weights, headings))
    if math.hypot(c, s) < 1e-9:
        return wrap_angle(headings[int(np.argmax(weights))]), True
    return wrap_angle(math.atan2(s, c)), False


def circular_mean(headings: Sequence[float]) -> float:
    return math.atan2(sum(math.sin(h) for h in headings), sum(math.cos(h) for h in headings))


def ambiguity_flags(class_confidence: float, position_residuals: Sequence[float], cfg: FusionConfig,
                    dof: int = 2) -> set[str]:
    flags = set()
    if class_confidence < cfg.tau_cls:
        flags.add("class_ambiguous")
    limit = chi2_quantile(cfg.gate_quantile, dof)
    if any(r > limit for r in position_residuals):
        flags.add("geometry_ambiguous")
    return flags


# ---------------------------------------------------------------- per seed

@dataclass
class Source:
    """One agent's evidence for one attribute of a seed."""

    kind: str
    value: Any
    cov: Optional[np.ndarray]
    confidence: float
    detection_flags: tuple[str, ...] = ()


@dataclass
class FusionOutcome:
    entity: FusedEntity
    # agent -> position gate statistics observed in this seed
    gate_stats: dict[str, list[float]] = field(default_factory=dict)
    weights: dict[str, dict[str, float]] = field(default_factory=dict)


def correlated(kind_a: str, kind_b: str, lineage: Mapping[str, Sequence[str]]) -> bool:
    return kind_a != kind_b and bool(set(lineage.get(kind_a, (kind_a,))) & set(lineage.get(kind_b, (kind_b,))))


def _default_cov(kind: str, table: Mapping[str, float], dim: int) -> np.ndarray:
    return table.get(kind, 1.0) * np.eye(dim)


def _fuse_vector(attr: str, sources: list[Source], ledger: Mapping[str, float], cfg: FusionConfig,
                 lineage: Mapping[str, Sequence[str]], initial: float) -> dict[str, Any]:
    """Position or velocity: consistency-weighted, CI for correlated pairs, then information fusion."""
    xs = [np.asarray(s.value, dtype=float) for s in sources]
    covs = [s.cov for s in sources]
    mean = np.mean(xs, axis=0)
    mean_cov = np.mean(covs, axis=0)
    stats = [residual_statistic(x, mean, mean_cov) for x in xs]
    inputs = [
        WeightInputs(
            prior=cfg.modality_priors.get(s.kind, {}).get(attr, 0.0),
            reliability=ledger.get(s.kind, initial),
            confidence=s.confidence,
            uncertainty=uncertainty_factor(s.cov),
            consistency=math.exp(-st),
        )
        for s, st in zip(sources, stats)
    ]
    raw = [w.raw for w in inputs]
    weights, fallback = compute_weights(inputs)
    rule = "information_fusion"
    groups: list[tuple[list[int], np.ndarray, np.ndarray, float]] = []
    used: set[int] = set()
    ci_pairs = []
    if not fallback:
        for i in range(len(sources)):
            for j in range(i + 1, len(sources)):
                if i in used or j in used or raw[i] <= 0 or raw[j] <= 0:
                    continue
                if correlated(sources[i].kind, sources[j].kind, lineage):
                    omega = ci_omega(stats[i], stats[j], cfg)
                    x, c = covariance_intersection(xs[i], covs[i], xs[j], covs[j], omega)
                    groups.append(([i, j], x, c, raw[i] + raw[j]))
                    used |= {i, j}
                    ci_pairs.append({"pair": [sources[i].kind, sources[j].kind], "omega": omega})
    for i in range(len(sources)):
        if i not in used:
            groups.append(([i], xs[i], covs[i], raw[i] if not fallback else float(weights[i])))
    gw = np.array([g[3] for g in groups], dtype=float)
    gw = gw / gw.sum()
    if len(sources) == 1:
        rule = "single_source"
    if ci_pairs:
        rule = "covariance_intersection+information_fusion"
    x_hat, cov_hat, singular = fuse_continuous([g[1] for g in groups], [g[2] for g in groups], gw)
    if fallback:
        rule = "fallback_max_confidence"
    elif singular:
        rule = "fallback_max_weight"
    record = {
        "sources": sorted({s.kind for s in sources}),
        "weights": {s.kind: float(w) for s, w in zip(sources, weights)},
        "values": {s.kind: [float(v) for v in np.atleast_1d(s.value)] for s in sources},
        "rule": rule,
    }
    if ci_pairs:
        record["covariance_intersection"] = ci_pairs
    return {"value": x_hat, "cov": cov_hat, "record": record, "stats": stats, "fallback": fallback or singular}


def _fuse_size(sources: list[Source], ledger: Mapping[str, float], cfg: FusionConfig, initial: float) -> dict[str, Any]:
    xs = [np.asarray(s.value, dtype=float) for s in sources]
    mean = np.mean(xs, axis=0)
    eye = np.eye(3)
    inputs = [
        WeightInputs(
            prior=cfg.modality_priors.get(s.kind, {}).get("size", 0.0),
            reliability=ledger.get(s.kind, initial),
            confidence=s.confidence,
            uncertainty=uncertainty_factor(eye),
            consistency=math.exp(-float((x - mean) @ (x - mean))),
        )
        for s, x in zip(sources, xs)
    ]
    weights, fallback = compute_weights(inputs)
    x_hat, _, _ = fuse_continuous(xs, [eye] * len(xs), weights)
    rule = "fallback_max_confidence" if fallback else ("single_source" if len(xs) == 1 else "information_fusion")
    record = {
        "sources": sorted({s.kind for s in sources}),
        "weights": {s.kind: float(w) for s, w in zip(sources, weights)},
        "values": {s.kind: [float(v) for v in s.value] for s in sources},
        "rule": rule,
    }
    return {"value": x_hat, "record": record, "fallback": fallback}


def _fuse_heading_attr(sources: list[Source], ledger: Mapping[str, float], cfg: FusionConfig,
                       initial: float) -> dict[str, Any]:
    hs = [float(s.value) for s in sources]
    centre = circular_mean(hs)
    inputs = [
        WeightInputs(
            prior=cfg.modality_priors.get(s.kind, {}).get("heading", 0.0),
            reliability=ledger.get(s.kind, initial),
            confidence=s.confidence,
            uncertainty=uncertainty_factor(np.array([[cfg.heading_variance]])),
            consistency=math.exp(-wrap_angle(h - centre) ** 2 / cfg.heading_variance),
        )
        for s, h in zip(sources, hs)
    ]
    weights, fallback = compute_weights(inputs)
    h_hat, cancelled = fuse_heading(hs, weights)
    if fallback or cancelled:
        rule = "fallback_max_confidence"
    else:
        rule = "single_source" if len(hs) == 1 else "weighted_unit_vector"
    record = {
        "sources": sorted({s.kind for s in sources}),
        "weights": {s.kind: float(w) for s, w in zip(sources, weights)},
        "values": {s.kind: h for s, h in zip(sources, hs)},
        "rule": rule,
    }
    return {"value": h_hat, "record": record, "fallback": fallback or cancelled}


def _fuse_class(sources: list[Source], ledger: Mapping[str, float], cfg: FusionConfig, initial: float,
                vocabulary: tuple[str, ...]) -> dict[str, Any]:
    inputs = [
        WeightInputs(
            prior=cfg.modality_priors.get(s.kind, {}).get("class", 0.0),
            reliability=ledger.get(s.kind, initial),
            confidence=s.confidence,
        )
        for s in sources
    ]
    weights, fallback = compute_weights(inputs)
    cls, conf, table = fuse_categorical([s.value for s in sources], weights, vocabulary)
    labels = {s.kind: argmax_class(s.value, vocabulary) for s in sources}
    evidence = {s.kind: labels[s.kind] for s, w in zip(sources, inputs) if w.prior > 0}
    if fallback:
        rule = "fallback_max_confidence"
    else:
        rule = "single_source" if len(evidence) <= 1 else "weighted_vote"
    record = {
        "sources": sorted({s.kind for s in sources}),
        "weights": {s.kind: float(w) for s, w in zip(sources, weights)},
        "values": labels,
        "confidence": {c: v for c, v in table.items() if v > 0},
        "rule": rule,
    }
    return {"value": cls, "confidence": conf, "record": record, "fallback": fallback, "evidence": evidence}


def _mean_probs(probs: Sequence[Mapping[str, float]], vocabulary: tuple[str, ...]) -> dict[str, float]:
    out = {c: math.fsum(p.get(c, 0.0) for p in probs) / len(probs) for c in vocabulary}
    return {c: v for c, v in out.items() if v > 0}


def fuse_seed(seed: Seed, ledger: Mapping[str, float], cfg: FusionConfig,
              vocabulary: tuple[str, ...] = CLASS_VOCABULARY,
              lineage: Mapping[str, Sequence[str]] = DEFAULT_LINEAGE) -> FusionOutcome:
    """Fuse every attribute of one seed into an (unnumbered) entity."""
    init = cfg.initial_reliability
    pos_src, vel_src, size_src, head_src, cls_src = [], [], [], [], []
    det_flags: set[str] = set()
    for m in seed.members:
        d = m.detection
        det_flags.update(d.flags)
        cov = d.bev_cov if d.bev_cov is not None else _default_cov(m.agent_kind, cfg.default_position_cov, 2)
        pos_src.append(Source(m.agent_kind, d.bev, cov, d.confidence))
        if d.velocity_bev is not None:
            vcov = (np.asarray(d.velocity_cov, dtype=float) if d.velocity_cov is not None
                    else _default_cov(m.agent_kind, cfg.default_velocity_cov, 2))
            vel_src.append(Source(m.agent_kind, d.velocity_bev, vcov, d.confidence))
        size_src.append(Source(m.agent_kind, d.size, None, d.confidence))
        head_src.append(Source(m.agent_kind, d.heading, None, d.confidence))
        cls_src.append(Source(m.agent_kind, d.class_probs, None, d.confidence))
    semantic: set[str] = set()
    if seed.camera:
        probs = [c.detection.class_probs for c in seed.camera]
        conf = max(c.detection.confidence for c in seed.camera)
        cls_src.append(Source("camera", _mean_probs(probs, vocabulary), None, conf))
        for c in seed.camera:
            semantic.update(c.detection.semantic_attributes)

    flags: set[str] = set()
    pos = _fuse_vector("position", pos_src, ledger, cfg, lineage, init)
    size = _fuse_size(size_src, ledger, cfg, init)
    head = _fuse_heading_attr(head_src, ledger, cfg, init)
    cls = _fuse_class(cls_src, ledger, cfg, init, vocabulary)
    vel = _fuse_vector("velocity", vel_src, ledger, cfg, lineage, init) if vel_src else None

    cov_hat = pos["cov"]
    residuals = [residual_statistic(s.value, pos["value"], cov_hat) for s in pos_src]
    flags |= ambiguity_flags(cls["confidence"], residuals, cfg)
    if pos["fallback"] or size["fallback"] or head["fallback"]:
        flags.add("geometry_ambiguous")
    if cls["fallback"]:
        flags.add("class_ambiguous")
    if len(seed.kinds) == 1:
        flags.add("single_source")
    if "velocity_skipped" in det_flags:
        flags.add("velocity_skipped")

    evidence = cls["evidence"]
    conflict = len(set(evidence.values())) > 1
    lineage_rec = {"position": pos["record"], "size": size["record"], "heading": head["record"], "class": cls["record"]}
    if vel is not None:
        lineage_rec["velocity"] = vel["record"]

    entity = FusedEntity(
        entity_id="ID_0",
        class_name=cls["value"],
        class_confidence=min(1.0, max(0.0, cls["confidence"])),
        position_bev=tuple(pos["value"].tolist()),
        position_cov=cov_hat.tolist(),
        velocity_bev=tuple(vel["value"].tolist()) if vel is not None else None,
        velocity_cov=vel["cov"].tolist() if vel is not None else None,
        size=tuple(size["value"].tolist()),
        heading=head["value"],
        sources=frozenset(seed.kinds),
        lineage=lineage_rec,
        ambiguity_flags=frozenset(flags),
        semantic_attributes=tuple(sorted(semantic)),
        conflict_resolved=conflict,
        conflict_values=evidence if conflict else {},
    )
    gate_stats: dict[str, list[float]] = {}
    for s, st in zip(pos_src, pos["stats"]):
        gate_stats.setdefault(s.kind, []).append(st)
    weights = {a: rec["weights"] for a, rec in lineage_rec.items()}
    return FusionOutcome(entity=entity, gate_stats=gate_stats, weights=weights)


def update_ledger(ledger: ReliabilityLedger, outcomes: Sequence[FusionOutcome], cfg: FusionConfig,
                  timestamp_us: int) -> dict[str, float]:
    """Apply one frame of scores: each agent's median position gate statistic, mapped through the gates."""
    pooled: dict[str, list[float]] = {}
    for o in outcomes:
        for kind, stats in o.gate_stats.items():
            pooled.setdefault(kind, []).extend(stats)
    scores = {}
    for kind in sorted(pooled):
        s = frame_score(float(np.median(pooled[kind])), 2, cfg)
        ledger.update(kind, s, timestamp_us)
        scores[kind] = s
    return scores


def _entity_order_key(e: FusedEntity) -> tuple:
    return (e.position_bev[0], e.position_bev[1], e.class_name, json.dumps(e.lineage, sort_keys=True))


def build_scene_summary(entities: Sequence[FusedEntity], scene_id: str, timestamp_us: int, ego_speed: float,
                        vocabulary: tuple[str, ...] = CLASS_VOCABULARY) -> SceneSummary:
    """Number entities ID_1.. in canonical (x, y, class) order and derive type presence."""
    ordered = sorted(entities, key=_entity_order_key)
    numbered = tuple(dataclasses.replace(e, entity_id=f"ID_{i}") for i, e in enumerate(ordered, 1))
    present, absent = type_presence((e.class_name for e in numbered), vocabulary)
    return SceneSummary(scene_id=scene_id, timestamp_us=timestamp_us, entities=numbered, ego_speed=ego_speed,
                        entity_types_present=present, entity_types_absent=absent)
