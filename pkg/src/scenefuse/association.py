"""Hierarchical entity association.

Stage 1 pairs LiDAR and BEVFusion detections into geometry seeds, stage 2
attaches radar clusters to seeds under a Doppler consistency gate, and
stage 3 attaches camera boxes to the projected seed footprints. Every
assignment goes through :func:`solve_assignment`.
"""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

import numpy as np

from . import kernels
from .config import CLASS_VOCABULARY, AssociationConfig, classes_compatible
from .errors import ConfigError, GeometryError
from .geometry import aabb_iou, project_box_footprint
from .scene import AgentFactSet, Calibration, Detection2D, Detection3D, argmax_class

FORBIDDEN = math.inf
MIN_EIGEN = 1e-12


# ---------------------------------------------------------------- gating

class GridIndex:
    """Uniform BEV hash grid with cell size equal to the query radius."""

    def __init__(self, points: np.ndarray, cell: float):
        if cell <= 0:
            raise ValueError("cell size must be > 0")
        self.points = np.asarray(points, dtype=float).reshape(-1, 2)
        self.cell = float(cell)
        self.cells: dict[tuple[int, int], list[int]] = defaultdict(list)
        for i, (x, y) in enumerate(self.points):
            self.cells[self._key(x, y)].append(i)

    def _key(self, x: float, y: float) -> tuple[int, int]:
        return (math.floor(x / self.cell), math.floor(y / self.cell))

    def query(self, p: Sequence[float], radius: Optional[float] = None) -> list[int]:
        """Indices within ``radius`` of ``p`` (inclusive), ascending."""
        r = self.cell if radius is None else radius
        reach = max(1, math.ceil(r / self.cell))
        kx, ky = self._key(p[0], p[1])
        out = []
        for dx in range(-reach, reach + 1):
            for dy in range(-reach, reach + 1):
                for j in self.cells.get((kx + dx, ky + dy), ()):
                    q = self.points[j]
                    if math.hypot(q[0] - p[0], q[1] - p[1]) <= r:
                        out.append(j)
        return sorted(out)


def neighborhood(query: int, points: Sequence[Sequence[float]], radius: float,
                 index: Optional[GridIndex] = None) -> set[int]:
    """All other items within ``radius`` of item ``query``."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    grid = index if index is not None else GridIndex(pts, radius)
    return {j for j in grid.query(pts[query], radius) if j != query}


# ---------------------------------------------------------------- costs

def pair_distance(a: Detection3D, b: Detection3D) -> tuple[float, str]:
    """BEV distance and the metric used.

    Squared Mahalanobis under the summed position covariances when both are
    present and the sum is well conditioned; plain Euclidean otherwise.
    """
    delta = a.bev - b.bev
    ca, cb = a.bev_cov, b.bev_cov
    if ca is not None and cb is not None:
        s = ca + cb
        if np.linalg.eigvalsh(s).min() > MIN_EIGEN:
            return float(delta @ np.linalg.solve(s, delta)), "mahalanobis"
        return float(np.hypot(*delta)), "euclidean_fallback"
    return float(np.hypot(*delta)), "euclidean"


def distance_gate(metric: str, cfg: AssociationConfig) -> float:
    return cfg.gate_mahalanobis if metric == "mahalanobis" else cfg.gate_euclidean


def composite_cost(a: Detection3D, b: Detection3D, cfg: AssociationConfig,
                   vocabulary: tuple[str, ...] = CLASS_VOCABULARY) -> float:
    """Gated distance plus class-mismatch and size-disagreement penalties."""
    d, metric = pair_distance(a, b)
    if d > distance_gate(metric, cfg):
        return FORBIDDEN
    mismatch = 1.0 if a.label(vocabulary) != b.label(vocabulary) else 0.0
    dsize = float(np.linalg.norm(np.subtract(a.size, b.size)))
    return d + cfg.lambda_cls * mismatch + cfg.lambda_size * dsize


# ---------------------------------------------------------------- assignment

@dataclass(frozen=True)
class Assignment:
    pairs: tuple[tuple[int, int], ...] = ()
    unmatched_left: tuple[int, ...] = ()
    unmatched_right: tuple[int, ...] = ()
    total_cost: float = 0.0

    def as_dict(self) -> dict[int, int]:
        return dict(self.pairs)


def solve_assignment(cost: Any) -> Assignment:
    """Optimal one-to-one matching that ignores forbidden (non-finite) entries.

    The matrix is padded to a square with a sentinel larger than twice the
    sum of all finite magnitudes, so the solver first maximises the number
    of allowed pairs and then minimises their total cost.
    """
    C = np.asarray(cost, dtype=float)
    if C.ndim != 2:
        C = C.reshape(0, 0)
    m, n = C.shape
    if m == 0 or n == 0:
        return Assignment((), tuple(range(m)), tuple(range(n)), 0.0)
    allowed = np.isfinite(C)
    big = 2.0 * math.fsum(np.abs(C[allowed]).tolist()) + 1.0
    size = max(m, n)
    square = np.full((size, size), big)
    square[:m, :n] = np.where(allowed, C, big)
    assign = kernels.hungarian(square)
    pairs = tuple((i, j) for i, j in enumerate(assign[:m]) if j < n and allowed[i, j])
    left = {i for i, _ in pairs}
    right = {j for _, j in pairs}
    return Assignment(
        pairs=pairs,
        unmatched_left=tuple(i for i in range(m) if i not in left),
        unmatched_right=tuple(j for j in range(n) if j not in right),
        total_cost=math.fsum(C[i, j] for i, j in pairs),
    )


# ---------------------------------------------------------------- seeds

@dataclass
class Observation:
    """One agent's detection attached to a seed."""

    agent_kind: str
    detection: Detection3D


@dataclass
class CameraEvidence:
    camera_id: str
    detection: Detection2D
    iou: float


@dataclass
class Seed:
    members: list[Observation]
    camera: list[CameraEvidence] = field(default_factory=list)

    @property
    def kinds(self) -> tuple[str, ...]:
        kinds = [m.agent_kind for m in self.members]
        if self.camera:
            kinds.append("camera")
        return tuple(sorted(set(kinds)))

    def geometry_members(self) -> list[Observation]:
        """Members carrying box geometry (everything but radar when possible)."""
        boxed = [m for m in self.members if m.agent_kind != "radar"]
        return boxed or list(self.members)

    def position(self) -> np.ndarray:
        return np.mean([m.detection.bev for m in self.members], axis=0)

    def position_cov(self) -> Optional[np.ndarray]:
        covs = [m.detection.bev_cov for m in self.members]
        if any(c is None for c in covs):
            return None
        return np.mean(covs, axis=0)

    def velocity(self) -> Optional[np.ndarray]:
        vs = [m.detection.velocity_bev for m in self.members if m.agent_kind != "radar" and m.detection.velocity_bev is not None]
        return np.mean(vs, axis=0) if vs else None

    def class_evidence(self, vocabulary: tuple[str, ...] = CLASS_VOCABULARY) -> Optional[str]:
        """Argmax of the summed class probabilities of class-bearing members."""
        acc: dict[str, float] = {}
        for m in self.members:
            if m.agent_kind == "radar":
                continue
            for c, p in m.detection.class_probs.items():
                acc[c] = acc.get(c, 0.0) + p
        if not acc:
            return None
        return argmax_class(acc, vocabulary)

    def box(self) -> tuple[np.ndarray, tuple[float, float, float], float]:
        """Representative 3D box (center, size, heading) used for camera projection."""
        geo = self.geometry_members()
        center = np.mean([m.detection.center_ego for m in geo], axis=0)
        size = tuple(np.mean([m.detection.size for m in geo], axis=0).tolist())
        c = np.mean([math.cos(m.detection.heading) for m in geo])
        s = np.mean([math.sin(m.detection.heading) for m in geo])
        return center, size, math.atan2(s, c)

    def sort_key(self, vocabulary: tuple[str, ...] = CLASS_VOCABULARY) -> tuple:
        p = self.position()
        cls = self.class_evidence(vocabulary) or ""
        return (round(float(p[0]), 6), round(float(p[1]), 6), cls,
                tuple(sorted((m.agent_kind, m.detection.local_id) for m in self.members)))


@dataclass
class AssociationResult:
    seeds: list[Seed]
    image_only: list[CameraEvidence] = field(default_factory=list)
    discarded_radar: list[Detection3D] = field(default_factory=list)
    log: list[dict] = field(default_factory=list)


def _cost_matrix(left: Sequence[Detection3D], right: Sequence[Detection3D], cfg: AssociationConfig,
                 vocabulary: tuple[str, ...], distance_only: bool = False) -> np.ndarray:
    C = np.full((len(left), len(right)), FORBIDDEN)
    if not left or not right:
        return C
    grid = GridIndex(np.array([d.bev for d in right]), cfg.gating_radius)
    for i, a in enumerate(left):
        for j in grid.query(a.bev, cfg.gating_radius):
            if distance_only:
                d, metric = pair_distance(a, right[j])
                C[i, j] = d if d <= distance_gate(metric, cfg) else FORBIDDEN
            else:
                C[i, j] = composite_cost(a, right[j], cfg, vocabulary)
    return C


def _seed_detection(seed: Seed) -> Detection3D:
    """Seed summarised as a detection, for distance-only matching against radar."""
    cov = seed.position_cov()
    p = seed.position()
    return Detection3D(local_id=0, center_ego=(float(p[0]), float(p[1]), 0.0), size=(0.0, 0.0, 0.0), heading=0.0,
                       class_probs={}, confidence=1.0, position_cov=cov.tolist() if cov is not None else None)


def velocity_consistent(radar: Detection3D, seed: Seed, radar_origin: np.ndarray, gate: float) -> bool:
    """Compare the radar radial velocity with the seed velocity projected on the line of sight."""
    seed_v = seed.velocity()
    if radar.velocity_bev is None or seed_v is None:
        return True
    los = radar.bev - radar_origin[:2]
    n = float(np.hypot(*los))
    if n < 1e-9:
        return True
    u = los / n
    projected = float(seed_v @ u) * u
    return float(np.linalg.norm(np.asarray(radar.velocity_bev) - projected)) <= gate


def associate_hierarchical(facts: Sequence[AgentFactSet], calibration: Optional[Calibration],
                           cfg: AssociationConfig, vocabulary: tuple[str, ...] = CLASS_VOCABULARY,
                           z_min: float = 1e-3) -> AssociationResult:
    """Group every 3D detection of one scene into seeds and attach camera evidence."""
    by_kind: dict[str, AgentFactSet] = {}
    for fs in facts:
        if fs.agent_kind in by_kind:
            raise ConfigError(f"more than one {fs.agent_kind} fact set in scene {fs.scene_id}")
        by_kind[fs.agent_kind] = fs
    cam_fs = by_kind.get("camera")
    if cam_fs is not None and cam_fs.detections_2d:
        if calibration is None:
            raise ConfigError("camera detections present but no calibration supplied")
        missing = sorted({d.camera_id for d in cam_fs.detections_2d} - set(calibration.cameras))
        if missing:
            raise ConfigError(f"no calibration for camera(s) {missing}")

    log: list[dict] = []
    lidar = list(by_kind["lidar"].detections_3d) if "lidar" in by_kind else []
    bev = list(by_kind["bevfusion"].detections_3d) if "bevfusion" in by_kind else []

    # stage 1: geometry seeds
    C = _cost_matrix(lidar, bev, cfg, vocabulary)
    a1 = solve_assignment(C)
    seeds: list[Seed] = []
    for i, j in a1.pairs:
        seeds.append(Seed([Observation("lidar", lidar[i]), Observation("bevfusion", bev[j])]))
    for i in a1.unmatched_left:
        seeds.append(Seed([Observation("lidar", lidar[i])]))
    for j in a1.unmatched_right:
        seeds.append(Seed([Observation("bevfusion", bev[j])]))
    log.append({"stage": 1, "left": "lidar", "right": "bevfusion",
                "pairs": [[lidar[i].local_id, bev[j].local_id] for i, j in a1.pairs],
                "total_cost": a1.total_cost})

    # stage 2: radar attachment with a Doppler gate
    radar = list(by_kind["radar"].detections_3d) if "radar" in by_kind else []
    discarded: list[Detection3D] = []
    if radar:
        origin = calibration.pose("radar").t if calibration is not None else np.zeros(3)
        targets = [_seed_detection(s) for s in seeds]
        C2 = _cost_matrix(radar, targets, cfg, vocabulary, distance_only=True)
        a2 = solve_assignment(C2)
        attached, rejected = [], []
        n_geometry = len(seeds)
        for i, j in a2.pairs:
            if velocity_consistent(radar[i], seeds[j], origin, cfg.velocity_gate):
                seeds[j].members.append(Observation("radar", radar[i]))
                attached.append([radar[i].local_id, j])
            else:
                rejected.append(radar[i].local_id)
        unmatched = [i for i in a2.unmatched_left] + [i for i, _ in a2.pairs if radar[i].local_id in rejected]
        for i in sorted(unmatched):
            if radar[i].confidence >= cfg.radar_confidence_floor:
                seeds.append(Seed([Observation("radar", radar[i])]))
            else:
                discarded.append(radar[i])
        log.append({"stage": 2, "seeds": n_geometry, "attached": attached, "velocity_rejected": rejected,
                    "discarded": [d.local_id for d in discarded]})

    seeds.sort(key=lambda s: s.sort_key(vocabulary))

    # stage 3: camera boxes against projected footprints
    image_only: list[CameraEvidence] = []
    if cam_fs is not None and cam_fs.detections_2d:
        by_cam: dict[str, list[Detection2D]] = defaultdict(list)
        for d in cam_fs.detections_2d:
            by_cam[d.camera_id].append(d)
        for cam_id in sorted(by_cam):
            dets = by_cam[cam_id]
            cam = calibration.cameras[cam_id]
            footprints: list[Optional[tuple]] = []
            for s in seeds:
                center, size, heading = s.box()
                try:
                    footprints.append(project_box_footprint(center, size, heading, cam, z_min))
                except GeometryError:
                    footprints.append(None)
            C3 = np.full((len(dets), len(seeds)), FORBIDDEN)
            ious = np.zeros_like(C3)
            for i, d in enumerate(dets):
                label = d.label(vocabulary)
                for j, fp in enumerate(footprints):
                    if fp is None:
                        continue
                    iou = aabb_iou(d.bbox, fp)
                    ious[i, j] = iou
                    if iou < cfg.camera_iou_threshold:
                        continue
                    seed_cls = seeds[j].class_evidence(vocabulary)
                    if seed_cls is not None and not classes_compatible(label, seed_cls):
                        continue
                    C3[i, j] = 1.0 - iou
            a3 = solve_assignment(C3)
            for i, j in a3.pairs:
                seeds[j].camera.append(CameraEvidence(cam_id, dets[i], float(ious[i, j])))
            for i in a3.unmatched_left:
                image_only.append(CameraEvidence(cam_id, dets[i], 0.0))
            log.append({"stage": 3, "camera": cam_id,
                        "pairs": [[dets[i].local_id, j] for i, j in a3.pairs],
                        "image_only": [dets[i].local_id for i in a3.unmatched_left]})

    return AssociationResult(seeds=seeds, image_only=image_only, discarded_radar=discarded, log=log)
