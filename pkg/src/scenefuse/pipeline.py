"""Per-scene coordination: association, fusion and summary emission."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .association import associate_hierarchical
from .config import DEFAULT_LINEAGE, RunConfig
from .fusion import ReliabilityLedger, build_scene_summary, fuse_seed, update_ledger
from .scene import Calibration, FusedEntity, SceneFacts, SceneSummary, validate_scene_facts


@dataclass
class IcaResult:
    summary: SceneSummary
    trace: dict = field(default_factory=dict)


def _lineage_table(facts: SceneFacts) -> dict[str, tuple[str, ...]]:
    table = dict(DEFAULT_LINEAGE)
    for fs in facts.fact_sets:
        if fs.source_lineage:
            table[fs.agent_kind] = tuple(sorted(fs.source_lineage))
    return table


def run_ica(facts: SceneFacts, calibration: Optional[Calibration], cfg: RunConfig,
            ledger: Optional[ReliabilityLedger] = None) -> IcaResult:
    """Normalize, associate, fuse and summarise one scene; updates ``ledger`` afterwards."""
    vocab = cfg.vocabulary
    validate_scene_facts(facts, vocab, calibration)
    if ledger is None:
        ledger = ReliabilityLedger(cfg.fusion.beta, cfg.fusion.initial_reliability)
    assoc = associate_hierarchical(facts.fact_sets, calibration, cfg.association, vocab, cfg.geometry.z_min)
    reliability = {k: ledger.get(k) for k in ("bevfusion", "lidar", "radar", "camera")}
    lineage = _lineage_table(facts)
    outcomes = [fuse_seed(s, reliability, cfg.fusion, vocab, lineage) for s in assoc.seeds]
    summary = build_scene_summary([o.entity for o in outcomes], facts.scene_id, facts.timestamp_us,
                                  facts.ego_speed, vocab)
    scores = update_ledger(ledger, outcomes, cfg.fusion, facts.timestamp_us)
    by_key = {}
    for o in outcomes:
        by_key[(o.entity.position_bev, o.entity.class_name, tuple(sorted(o.entity.sources)))] = o
    entities = []
    for e in summary.entities:
        o = by_key.get((e.position_bev, e.class_name, tuple(sorted(e.sources))))
        entities.append({
            "entity_id": e.entity_id,
            "weights": o.weights if o is not None else {},
            "rules": {a: rec["rule"] for a, rec in e.lineage.items()},
        })
    trace = {
        "scene_id": facts.scene_id,
        "timestamp_us": facts.timestamp_us,
        "association": assoc.log,
        "entities": entities,
        "image_only_observations": len(assoc.image_only),
        "discarded_radar": len(assoc.discarded_radar),
        "reliability_before": reliability,
        "frame_scores": scores,
    }
    return IcaResult(summary, trace)


def _naive_entity(kind: str, d, cfg: RunConfig) -> FusedEntity:
    cov = d.bev_cov if d.bev_cov is not None else cfg.fusion.default_position_cov.get(kind, 1.0) * np.eye(2)
    label = d.label(cfg.vocabulary)
    rec = {"sources": [kind], "rule": "naive_union"}
    lineage = {"position": rec, "size": rec, "heading": rec, "class": rec}
    if d.velocity_bev is not None:
        lineage["velocity"] = rec
    return FusedEntity(
        entity_id="ID_0",
        class_name=label,
        class_confidence=d.class_probs.get(label, 0.0),
        position_bev=tuple(d.bev.tolist()),
        position_cov=np.asarray(cov).tolist(),
        velocity_bev=d.velocity_bev,
        velocity_cov=d.velocity_cov,
        size=d.size,
        heading=d.heading,
        sources=frozenset({kind}),
        lineage=lineage,
        ambiguity_flags=frozenset({"single_source"}),
    )


def run_naive_union(facts: SceneFacts, cfg: RunConfig) -> SceneSummary:
    """Every 3D detection exported as its own entity: the no-coordination baseline."""
    ents = [_naive_entity(fs.agent_kind, d, cfg) for fs in facts.fact_sets for d in fs.detections_3d]
    return build_scene_summary(ents, facts.scene_id, facts.timestamp_us, facts.ego_speed, cfg.vocabulary)
