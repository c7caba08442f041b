"""Consistency and hallucination metrics against simulator ground truth.

All rates are percentages. A rate whose denominator is zero is reported as
``None`` (not applicable) and is excluded from aggregation rather than
counted as 0 or 100.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional, Sequence

import numpy as np

from . import kernels
from .association import FORBIDDEN, solve_assignment
from .config import MetricConfig, classes_compatible
from .errors import GeometryError
from .geometry import aabb_iou, project_box_footprint
from .scene import (
    AgentFactSet,
    Calibration,
    Detection3D,
    FusedEntity,
    GroundTruthScene,
    GtEntity,
    SceneFacts,
    SceneSummary,
    argmax_class,
    wrap_angle,
)

ACR_ATTRIBUTES = ("class", "position", "heading")
CLASS_BEARING = ("lidar", "bevfusion", "camera")


def _box(position: Sequence[float], size: Sequence[float], heading: float) -> tuple[float, float, float, float, float]:
    return (float(position[0]), float(position[1]), float(size[0]), float(size[1]), float(heading))


def entity_box(e: FusedEntity) -> tuple:
    return _box(e.position_bev, e.size, e.heading)


def gt_box(g: GtEntity) -> tuple:
    return _box(g.position_bev, g.size, g.heading)


def detection_box(d: Detection3D) -> tuple:
    return _box(d.center_ego[:2], d.size, d.heading)


def compatible_iou(boxes: Sequence[tuple], classes: Sequence[str], gt: Sequence[GtEntity]) -> np.ndarray:
    """IoU matrix with class-incompatible pairs zeroed."""
    if not boxes or not gt:
        return np.zeros((len(boxes), len(gt)))
    iou = kernels.rect_iou_matrix(list(boxes), [gt_box(g) for g in gt])
    for i, c in enumerate(classes):
        for j, g in enumerate(gt):
            if not classes_compatible(c, g.class_name):
                iou[i, j] = 0.0
    return iou


# ---------------------------------------------------------------- matcher

@dataclass(frozen=True)
class OracleMatch:
    pairs: tuple[tuple[int, int], ...]
    unmatched_outputs: tuple[int, ...]
    unmatched_gt: tuple[int, ...]
    tau: float
    ious: tuple[float, ...] = ()

    def gt_of(self) -> dict[int, int]:
        return dict(self.pairs)


def match_boxes(boxes: Sequence[tuple], classes: Sequence[str], gt: Sequence[GtEntity], tau: float) -> OracleMatch:
    """One-to-one class-compatible BEV IoU matching at threshold ``tau``."""
    if not (0.0 < tau < 1.0):
        raise ValueError("tau must be in (0, 1)")
    iou = compatible_iou(boxes, classes, gt)
    cost = np.where(iou >= tau, 1.0 - iou, FORBIDDEN)
    a = solve_assignment(cost)
    return OracleMatch(a.pairs, a.unmatched_left, a.unmatched_right, tau,
                       tuple(float(iou[i, j]) for i, j in a.pairs))


def oracle_match(outputs: Sequence[FusedEntity], gt: Sequence[GtEntity], tau: float = 0.5) -> OracleMatch:
    return match_boxes([entity_box(e) for e in outputs], [e.class_name for e in outputs], gt, tau)


def best_gt(outputs: Sequence[FusedEntity], gt: Sequence[GtEntity], tau: float) -> list[Optional[int]]:
    """For each output, the gt index of its best class-compatible IoU if that IoU reaches ``tau``."""
    iou = compatible_iou([entity_box(e) for e in outputs], [e.class_name for e in outputs], gt)
    out: list[Optional[int]] = []
    for i in range(len(outputs)):
        if iou.shape[1] == 0:
            out.append(None)
            continue
        j = int(np.argmax(iou[i]))
        out.append(j if iou[i, j] >= tau else None)
    return out


# ---------------------------------------------------------------- ERR / ACR

def err_counts(outputs: Sequence[FusedEntity], gt: Sequence[GtEntity], tau: float) -> tuple[int, int]:
    """(duplicate reports, total reports)."""
    owners = best_gt(outputs, gt, tau)
    per_gt: dict[int, int] = {}
    for j in owners:
        if j is not None:
            per_gt[j] = per_gt.get(j, 0) + 1
    return sum(max(0, m - 1) for m in per_gt.values()), len(outputs)


def compute_err(outputs: Sequence[FusedEntity], gt: Sequence[GtEntity], tau: float = 0.5) -> float:
    dup, total = err_counts(outputs, gt, tau)
    return 100.0 * dup / max(1, total)


def _attribute_value(e: FusedEntity, attr: str) -> Any:
    if attr == "class":
        return e.class_name
    if attr == "position":
        return e.position_bev
    return e.heading


def values_agree(attr: str, values: Sequence[Any], cfg: MetricConfig) -> bool:
    for i in range(len(values)):
        for j in range(i + 1, len(values)):
            a, b = values[i], values[j]
            if attr == "class" and a != b:
                return False
            if attr == "position" and math.hypot(a[0] - b[0], a[1] - b[1]) > cfg.position_tol:
                return False
            if attr == "heading" and abs(wrap_angle(a - b)) > math.radians(cfg.heading_tol_deg):
                return False
    return True


def _inside(point: Sequence[float], g: GtEntity, margin: float) -> bool:
    dx, dy = point[0] - g.position_bev[0], point[1] - g.position_bev[1]
    c, s = math.cos(g.heading), math.sin(g.heading)
    along, across = c * dx + s * dy, -s * dx + c * dy
    return abs(along) <= 0.5 * g.size[0] + margin and abs(across) <= 0.5 * g.size[1] + margin


def report_owners(outputs: Sequence[FusedEntity], gt: Sequence[GtEntity], margin: float) -> list[Optional[int]]:
    """Class-agnostic grouping: the object whose footprint (grown by ``margin``) holds the report centre.

    When several footprints qualify the nearest centre wins.
    """
    out: list[Optional[int]] = []
    for e in outputs:
        hits = [j for j, g in enumerate(gt) if _inside(e.position_bev, g, margin)]
        if not hits:
            out.append(None)
            continue
        out.append(min(hits, key=lambda j: (math.hypot(e.position_bev[0] - gt[j].position_bev[0],
                                                       e.position_bev[1] - gt[j].position_bev[1]), j)))
    return out


def acr_counts(outputs: Sequence[FusedEntity], gt: Sequence[GtEntity], cfg: MetricConfig) -> tuple[int, int]:
    """(agreeing checks, total checks) over exported values, grouped per ground-truth object.

    Every report is credited to each of its sources with the values it
    exports; a check exists when at least two sources are credited for the
    object, and it passes when all credited values agree.
    """
    owners = report_owners(outputs, gt, cfg.position_tol)
    groups: dict[int, list[FusedEntity]] = {}
    for e, j in zip(outputs, owners):
        if j is not None:
            groups.setdefault(j, []).append(e)
    agree = total = 0
    for j in sorted(groups):
        for attr in ACR_ATTRIBUTES:
            credits = [(s, _attribute_value(e, attr)) for e in groups[j] for s in sorted(e.sources)]
            if len({s for s, _ in credits}) < 2:
                continue
            total += 1
            agree += values_agree(attr, [v for _, v in credits], cfg)
    return agree, total


def acr_from_lineage(entities: Sequence[FusedEntity], cfg: MetricConfig) -> tuple[int, int]:
    """(agreeing, total) over the pre-fusion per-source values recorded in lineage."""
    agree = total = 0
    for e in entities:
        if len(e.sources) < 2:
            continue
        for attr in ACR_ATTRIBUTES:
            vals = list(e.lineage.get(attr, {}).get("values", {}).values())
            if len(vals) < 2:
                continue
            if attr == "position":
                vals = [tuple(v) for v in vals]
            total += 1
            agree += values_agree(attr, vals, cfg)
    return agree, total


def pct(num: float, den: float) -> Optional[float]:
    return None if den == 0 else 100.0 * num / den


# ---------------------------------------------------------------- CRR / MDCR

def _camera_classes(fs: Optional[AgentFactSet], gt: Sequence[GtEntity], calib: Optional[Calibration],
                    tau: float) -> dict[int, list[str]]:
    """gt index -> classes reported by camera boxes matched to its projected footprint."""
    out: dict[int, list[str]] = {}
    if fs is None or calib is None or not gt:
        return out
    by_cam: dict[str, list] = {}
    for d in fs.detections_2d:
        by_cam.setdefault(d.camera_id, []).append(d)
    for cam_id in sorted(by_cam):
        cam = calib.cameras.get(cam_id)
        if cam is None:
            continue
        dets = by_cam[cam_id]
        cost = np.full((len(dets), len(gt)), FORBIDDEN)
        for j, g in enumerate(gt):
            try:
                fp = project_box_footprint((g.position_bev[0], g.position_bev[1], g.z), g.size, g.heading, cam)
            except GeometryError:
                continue
            for i, d in enumerate(dets):
                iou = aabb_iou(d.bbox, fp)
                if iou >= tau and classes_compatible(d.label(), g.class_name):
                    cost[i, j] = 1.0 - iou
        for i, j in solve_assignment(cost).pairs:
            out.setdefault(j, []).append(dets[i].label())
    return out


def find_conflicts(facts: SceneFacts, gt: GroundTruthScene, calib: Optional[Calibration],
                   cfg: MetricConfig) -> list[int]:
    """Ground-truth indices whose matched source observations disagree on class or heading."""
    ents = list(gt.entities)
    tol = math.radians(cfg.heading_tol_deg)
    reports: dict[int, list[tuple[str, str, Optional[float]]]] = {}
    kinds = facts.by_kind()
    for kind in ("lidar", "bevfusion"):
        fs = kinds.get(kind)
        if fs is None:
            continue
        dets = list(fs.detections_3d)
        m = match_boxes([detection_box(d) for d in dets], [d.label() for d in dets], ents, cfg.iou_threshold)
        for i, j in m.pairs:
            reports.setdefault(j, []).append((kind, dets[i].label(), dets[i].heading))
    for j, labels in _camera_classes(kinds.get("camera"), ents, calib, cfg.iou_threshold).items():
        # several cameras may see one object; they form one source
        reports.setdefault(j, []).append(("camera", max(set(labels), key=labels.count), None))
    conflicts = []
    for j in sorted(reports):
        rs = reports[j]
        if len({k for k, _, _ in rs}) < 2:
            continue
        classes = {c for _, c, _ in rs}
        heads = [h for _, _, h in rs if h is not None]
        heading_conflict = any(abs(wrap_angle(a - b)) > tol for a in heads for b in heads)
        if len(classes) > 1 or heading_conflict:
            conflicts.append(j)
    return conflicts


def conflict_fixed(j: int, outputs: Sequence[FusedEntity], owners: Sequence[Optional[int]], gt: GroundTruthScene,
                   cfg: MetricConfig) -> bool:
    mine = [e for e, o in zip(outputs, owners) if o == j]
    if len(mine) != 1:
        return False
    g = gt.entities[j]
    e = mine[0]
    return e.class_name == g.class_name and abs(wrap_angle(e.heading - g.heading)) <= math.radians(cfg.heading_tol_deg)


def bevfusion_misses(facts: SceneFacts, gt: GroundTruthScene, tau: float) -> list[int]:
    fs = facts.by_kind().get("bevfusion")
    if fs is None:
        return []
    dets = list(fs.detections_3d)
    m = match_boxes([detection_box(d) for d in dets], [d.label() for d in dets], list(gt.entities), tau)
    return list(m.unmatched_gt)


# ---------------------------------------------------------------- report

@dataclass
class SceneCounts:
    scene_id: str
    outputs: int = 0
    gt: int = 0
    matched: int = 0
    duplicates: int = 0
    acr_agree: int = 0
    acr_total: int = 0
    conflicts: int = 0
    conflicts_fixed: int = 0
    misses: int = 0
    misses_compensated: int = 0

    @property
    def hallucinated(self) -> int:
        return self.outputs - self.matched

    def rates(self) -> dict[str, Optional[float]]:
        return rates_from_counts(self.outputs, self.gt, self.matched, self.duplicates, self.acr_agree, self.acr_total,
                                 self.conflicts, self.conflicts_fixed, self.misses, self.misses_compensated,
                                 self.hallucinated, 1)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("scene_id", "outputs", "gt", "matched", "duplicates", "acr_agree",
                                            "acr_total", "conflicts", "conflicts_fixed", "misses",
                                            "misses_compensated")}
        d["metrics"] = self.rates()
        return d


def prf(matched: int, n_out: int, n_gt: int) -> tuple[Optional[float], Optional[float], Optional[float]]:
    ep = 100.0 * matched / n_out if n_out else (0.0 if n_gt else None)
    er = 100.0 * matched / n_gt if n_gt else None
    if ep is None or er is None:
        ef1 = None
    else:
        ef1 = 0.0 if ep + er == 0 else 2.0 * ep * er / (ep + er)
    return ep, er, ef1


def rates_from_counts(outputs: int, gt: int, matched: int, duplicates: int, acr_agree: int, acr_total: int,
                      conflicts: int, fixed: int, misses: int, compensated: int, hallucinated: int,
                      scenes: int) -> dict[str, Optional[float]]:
    ep, er, ef1 = prf(matched, outputs, gt)
    return {
        "ERR": 100.0 * duplicates / max(1, outputs),
        "ACR": pct(acr_agree, acr_total),
        "CRR": pct(fixed, conflicts),
        "MDCR": pct(compensated, misses),
        "HE": hallucinated / scenes if scenes else None,
        "EP": ep,
        "ER": er,
        "EF1": ef1,
    }


def scene_counts(summary: SceneSummary, gt: GroundTruthScene, facts: Optional[SceneFacts],
                 calib: Optional[Calibration], cfg: MetricConfig) -> SceneCounts:
    if summary.scene_id != gt.scene_id:
        raise ValueError(f"scene id mismatch: {summary.scene_id} vs {gt.scene_id}")
    outs = list(summary.entities)
    ents = list(gt.entities)
    m = oracle_match(outs, ents, cfg.iou_threshold)
    dup, _ = err_counts(outs, ents, cfg.iou_threshold)
    agree, total = acr_counts(outs, ents, cfg)
    c = SceneCounts(summary.scene_id, len(outs), len(ents), len(m.pairs), dup, agree, total)
    if facts is not None:
        owners = report_owners(outs, ents, cfg.position_tol)
        conflicts = find_conflicts(facts, gt, calib, cfg)
        c.conflicts = len(conflicts)
        c.conflicts_fixed = sum(conflict_fixed(j, outs, owners, gt, cfg) for j in conflicts)
        misses = bevfusion_misses(facts, gt, cfg.iou_threshold)
        recovered = set(m.unmatched_gt)
        c.misses = len(misses)
        c.misses_compensated = sum(1 for j in misses if j not in recovered)
    return c


@dataclass
class ConsistencyReport:
    label: str
    scenes: list[SceneCounts] = field(default_factory=list)

    def totals(self) -> dict[str, int]:
        keys = ("outputs", "gt", "matched", "duplicates", "acr_agree", "acr_total", "conflicts", "conflicts_fixed",
                "misses", "misses_compensated")
        return {k: sum(getattr(s, k) for s in self.scenes) for k in keys}

    def micro(self) -> dict[str, Optional[float]]:
        t = self.totals()
        return rates_from_counts(t["outputs"], t["gt"], t["matched"], t["duplicates"], t["acr_agree"], t["acr_total"],
                                 t["conflicts"], t["conflicts_fixed"], t["misses"], t["misses_compensated"],
                                 t["outputs"] - t["matched"], len(self.scenes))

    def to_dict(self) -> dict:
        return {"label": self.label, "scene_count": len(self.scenes), "totals": self.totals(),
                "metrics": self.micro(), "per_scene": [s.to_dict() for s in self.scenes]}


def compute_crr(per_scene: Sequence[tuple[int, int]]) -> Optional[float]:
    """Micro-averaged rate from (conflicts, fixed) pairs."""
    return pct(sum(f for _, f in per_scene), sum(c for c, _ in per_scene))


def compute_mdcr(per_scene: Sequence[tuple[int, int]]) -> Optional[float]:
    """Micro-averaged rate from (misses, compensated) pairs."""
    return pct(sum(f for _, f in per_scene), sum(c for c, _ in per_scene))


def compute_he_ep_er_ef1(outputs: Sequence[FusedEntity], gt: Sequence[GtEntity],
                         tau: float = 0.5) -> tuple[float, Optional[float], Optional[float], Optional[float]]:
    m = oracle_match(outputs, gt, tau)
    ep, er, ef1 = prf(len(m.pairs), len(outputs), len(gt))
    return float(len(outputs) - len(m.pairs)), ep, er, ef1


METRIC_ORDER = ("ERR", "ACR", "CRR", "MDCR", "HE", "EP", "ER", "EF1")


def _fmt(v: Optional[float], key: str) -> str:
    if v is None:
        return "n/a"
    return f"{v:.2f}" if key == "HE" else f"{v:.1f}"


def format_table(reports: Sequence[ConsistencyReport]) -> str:
    """Aligned text table: one row per configuration, one column per metric."""
    header = ["Method"] + [f"{k}{'' if k == 'HE' else ' (%)'}" for k in METRIC_ORDER]
    rows = [[r.label] + [_fmt(r.micro()[k], k) for k in METRIC_ORDER] for r in reports]
    widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)]
    lines = ["  ".join(h.ljust(w) if i == 0 else h.rjust(w) for i, (h, w) in enumerate(zip(header, widths)))]
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(x.ljust(w) if i == 0 else x.rjust(w) for i, (x, w) in enumerate(zip(row, widths))))
    return "\n".join(lines) + "\n"
