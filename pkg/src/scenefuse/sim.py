"""Seeded synthetic world and per-agent observation models.

Every random draw comes from a generator seeded by ``(scene_seed, stream)``
so a scene and all of its agent outputs are fixed by one integer. The
correspondence labels returned next to each fact set are oracle-only data
for tests and metrics; the fusion pipeline never reads them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .association import GridIndex
from .config import (
    CLASS_SIZES,
    CLASS_SPEED_CAPS,
    CLASS_VOCABULARY,
    COLORS,
    CONFUSABLE_CLASSES,
    DEFAULT_LINEAGE,
    SimConfig,
)
from .errors import GenerationError, GeometryError
from .geometry import project_box_footprint, radar_to_ego, rot_z
from .scene import (
    AgentFactSet,
    Calibration,
    CameraModel,
    Detection2D,
    Detection3D,
    GroundTruthScene,
    GtEntity,
    RadarReturn,
    SceneFacts,
    SensorPose,
)

VEHICLES = ("car", "truck", "van", "bus", "motorcycle")
CLASS_BEARING = ("lidar", "bevfusion", "camera")
EGO_CLEARANCE = 2.5
# share of the BEVFusion position error inherited from the LiDAR stream
LINEAGE_CORRELATION = 0.5
RADAR_PERPENDICULAR_VAR = 100.0
# keeps the rotated, 9-digit-rounded covariance positive definite
RADAR_LOS_VAR_FLOOR = 1e-4

_STREAMS = {"world": 0, "lidar": 1, "bevfusion": 2, "radar": 3, "camera": 4, "shared": 5, "conflict": 6}


def scene_seed(run_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(run_seed), int(index)]).generate_state(1)[0])


def _rng(seed: int, stream: str) -> np.random.Generator:
    return np.random.default_rng([int(seed), _STREAMS[stream]])


# ---------------------------------------------------------------- calibration

CAMERA_YAWS_DEG = {
    "CAM_FRONT": 0.0,
    "CAM_FRONT_LEFT": 55.0,
    "CAM_BACK_LEFT": 110.0,
    "CAM_BACK": 180.0,
    "CAM_BACK_RIGHT": -110.0,
    "CAM_FRONT_RIGHT": -55.0,
}
# camera axes (x right, y down, z forward) expressed in the ego frame for a forward-looking camera
_CAM_BASE = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])


def camera_pose(yaw: float, translation: Sequence[float]) -> SensorPose:
    return SensorPose((rot_z(yaw) @ _CAM_BASE).tolist(), tuple(translation))


def default_calibration(width: int = 1600, height: int = 900, focal: float = 1266.0) -> Calibration:
    """Surround rig: LiDAR at the ego origin, a front radar and six cameras."""
    cams = {}
    for name, deg in CAMERA_YAWS_DEG.items():
        yaw = math.radians(deg)
        t = (1.5 * math.cos(yaw), 0.9 * math.sin(yaw), 1.6)
        cams[name] = CameraModel(name, camera_pose(yaw, t), focal, focal, width / 2.0, height / 2.0, width, height)
    poses = {
        "lidar": SensorPose(np.eye(3).tolist(), (0.0, 0.0, 0.0)),
        "radar": SensorPose(np.eye(3).tolist(), (3.7, 0.0, 0.5)),
    }
    return Calibration(poses=poses, cameras=cams)


# ---------------------------------------------------------------- world

def _footprint_radius(e: GtEntity) -> float:
    return 0.5 * math.hypot(e.size[0], e.size[1])


def generate_scene(cfg: SimConfig, seed: int, scene_id: str = "scene-0", timestamp_us: int = 0) -> GroundTruthScene:
    """Random non-overlapping entities with class-consistent size and speed."""
    rng = _rng(seed, "world")
    n = int(rng.integers(cfg.entity_count_min, cfg.entity_count_max + 1))
    x0, x1, y0, y1 = cfg.extent
    ego_speed = float(rng.uniform(0.0, cfg.ego_speed_max))
    placed: list[GtEntity] = []
    for k in range(n):
        cls = CLASS_VOCABULARY[int(rng.integers(len(CLASS_VOCABULARY)))]
        base = np.array(CLASS_SIZES[cls])
        size = tuple((base * rng.uniform(0.95, 1.05, 3)).tolist())
        if cls in VEHICLES or cls == "bicycle":
            heading = float(rng.choice([0.0, math.pi]) + rng.normal(0.0, 0.1))
        elif cls == "barrier":
            heading = float(rng.choice([0.0, math.pi / 2]))
        else:
            heading = float(rng.uniform(-math.pi, math.pi))
        speed = float(rng.uniform(0.0, CLASS_SPEED_CAPS[cls]))
        velocity = (speed * math.cos(heading), speed * math.sin(heading))
        color = str(rng.choice(COLORS)) if cls in VEHICLES else None
        radius = 0.5 * math.hypot(size[0], size[1])
        for _ in range(cfg.max_placement_tries):
            x = float(rng.uniform(x0, x1))
            y = float(rng.uniform(y0, y1))
            if math.hypot(x, y) < radius + EGO_CLEARANCE + cfg.min_gap:
                continue
            if all(math.hypot(x - o.position_bev[0], y - o.position_bev[1]) >= radius + _footprint_radius(o) + cfg.min_gap
                   for o in placed):
                break
        else:
            raise GenerationError(f"could not place entity {k} of {n} after {cfg.max_placement_tries} tries")
        placed.append(GtEntity(gt_id=f"gt_{k}", class_name=cls, position_bev=(x, y), velocity_bev=velocity,
                               size=size, heading=heading, z=size[2] / 2.0, color=color))
    traj = tuple((0.5 * i, ego_speed * 0.5 * i, 0.0) for i in range(7))
    return GroundTruthScene(scene_id=scene_id, timestamp_us=timestamp_us, rng_seed=seed, entities=tuple(placed),
                            ego_speed=ego_speed, ego_trajectory=traj, extent=cfg.extent)


# ---------------------------------------------------------------- labels

@dataclass
class ObservationLabels:
    """Oracle-only bookkeeping for one agent: local_id -> gt_id (None for false positives)."""

    agent_kind: str
    correspondences: dict[int, Optional[str]] = field(default_factory=dict)
    missed: list[str] = field(default_factory=list)
    conflicts: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "agent_kind": self.agent_kind,
            "correspondences": {str(k): v for k, v in sorted(self.correspondences.items())},
            "missed": sorted(self.missed),
            "conflicts": sorted(self.conflicts),
        }


def conflict_plan(scene: GroundTruthScene, cfg: SimConfig, seed: int) -> dict[str, tuple[str, str]]:
    """gt_id -> (agent that misreports the class, the confusable class it reports)."""
    rng = _rng(seed, "conflict")
    plan = {}
    for e in scene.entities:
        hit = rng.random() < cfg.conflict_prob
        agent = CLASS_BEARING[int(rng.integers(len(CLASS_BEARING)))]
        options = CONFUSABLE_CLASSES[e.class_name]
        wrong = options[int(rng.integers(len(options)))]
        if hit:
            plan[e.gt_id] = (agent, wrong)
    return plan


def class_probs_for(label: str, confidence: float) -> dict[str, float]:
    others = [c for c in CLASS_VOCABULARY if c != label]
    rest = (1.0 - confidence) / len(others)
    probs = {c: rest for c in others}
    probs[label] = confidence
    return probs


def _reported_class(e: GtEntity, kind: str, plan: dict, noise_confusion: float, rng: np.random.Generator,
                    labels: ObservationLabels) -> str:
    confused = rng.random() < noise_confusion
    pick = rng.integers(len(CONFUSABLE_CLASSES[e.class_name]))
    if e.gt_id in plan and plan[e.gt_id][0] == kind:
        labels.conflicts.append(e.gt_id)
        return plan[e.gt_id][1]
    if confused:
        return CONFUSABLE_CLASSES[e.class_name][int(pick)]
    return e.class_name


# ---------------------------------------------------------------- 3D agents

def _observe_boxes(scene: GroundTruthScene, kind: str, cfg: SimConfig, seed: int) -> tuple[AgentFactSet, ObservationLabels]:
    noise = cfg.agents[kind]
    rng = _rng(seed, kind)
    shared = _rng(seed, "shared")
    plan = conflict_plan(scene, cfg, seed)
    labels = ObservationLabels(kind)
    dets: list[Detection3D] = []
    pos_var = noise.position_sigma ** 2
    vel_var = noise.velocity_sigma ** 2
    with_velocity = kind == "lidar"
    for e in scene.entities:
        z_shared = shared.normal(size=3)
        z_own = rng.normal(size=3)
        if kind == "bevfusion":
            rho = LINEAGE_CORRELATION
            err = noise.position_sigma * (rho * z_shared + math.sqrt(1.0 - rho * rho) * z_own)
        else:
            err = noise.position_sigma * z_shared
        size_err = rng.normal(0.0, noise.size_sigma, 3) if noise.size_sigma > 0 else np.zeros(3)
        head_err = rng.normal(0.0, noise.heading_sigma) if noise.heading_sigma > 0 else 0.0
        vel_err = rng.normal(0.0, noise.velocity_sigma, 2) if noise.velocity_sigma > 0 else np.zeros(2)
        conf = float(rng.uniform(0.7, 0.95))
        missed = rng.random() < noise.miss_prob
        cls = _reported_class(e, kind, plan, noise.confusion_prob, rng, labels)
        if missed:
            labels.missed.append(e.gt_id)
            if e.gt_id in labels.conflicts:
                labels.conflicts.remove(e.gt_id)
            continue
        lid = len(dets)
        center = np.array([e.position_bev[0], e.position_bev[1], e.z]) + err
        size = np.maximum(np.array(e.size) + size_err, 0.05)
        dets.append(Detection3D(
            local_id=lid,
            center_ego=tuple(center.tolist()),
            size=tuple(size.tolist()),
            heading=e.heading + head_err,
            class_probs=class_probs_for(cls, cfg.class_confidence),
            confidence=conf,
            velocity_bev=tuple((np.array(e.velocity_bev) + vel_err).tolist()) if with_velocity else None,
            position_cov=(pos_var * np.eye(3)).tolist(),
            velocity_cov=(vel_var * np.eye(2)).tolist() if with_velocity else None,
        ))
        labels.correspondences[lid] = e.gt_id
    for _ in range(int(rng.poisson(noise.fp_rate))):
        x0, x1, y0, y1 = scene.extent
        cls = CLASS_VOCABULARY[int(rng.integers(len(CLASS_VOCABULARY)))]
        lid = len(dets)
        dets.append(Detection3D(
            local_id=lid,
            center_ego=(float(rng.uniform(x0, x1)), float(rng.uniform(y0, y1)), CLASS_SIZES[cls][2] / 2.0),
            size=CLASS_SIZES[cls],
            heading=float(rng.uniform(-math.pi, math.pi)),
            class_probs=class_probs_for(cls, cfg.class_confidence),
            confidence=float(rng.uniform(0.3, 0.6)),
            velocity_bev=(0.0, 0.0) if with_velocity else None,
            position_cov=(pos_var * np.eye(3)).tolist(),
            velocity_cov=(vel_var * np.eye(2)).tolist() if with_velocity else None,
        ))
        labels.correspondences[lid] = None
    fs = AgentFactSet(agent_kind=kind, scene_id=scene.scene_id, timestamp_us=scene.timestamp_us,
                      detections_3d=tuple(dets), source_lineage=frozenset(DEFAULT_LINEAGE[kind]))
    return fs, labels


# ---------------------------------------------------------------- radar

def dbscan_labels(points: np.ndarray, eps: float, min_pts: int) -> np.ndarray:
    """Cluster labels (noise = -1) for BEV points, expanding clusters in index order."""
    if eps <= 0 or min_pts < 1:
        raise ValueError("need eps > 0 and min_pts >= 1")
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    n = len(pts)
    labels = np.full(n, -2, dtype=int)  # -2 unvisited
    if n == 0:
        return labels
    grid = GridIndex(pts, eps)
    neighbours = [grid.query(pts[i], eps) for i in range(n)]
    cluster = -1
    for i in range(n):
        if labels[i] != -2:
            continue
        if len(neighbours[i]) < min_pts:
            labels[i] = -1
            continue
        cluster += 1
        labels[i] = cluster
        queue = [j for j in neighbours[i] if j != i]
        k = 0
        while k < len(queue):
            j = queue[k]
            k += 1
            if labels[j] == -1:
                labels[j] = cluster
            if labels[j] != -2:
                continue
            labels[j] = cluster
            if len(neighbours[j]) >= min_pts:
                queue.extend(neighbours[j])
    return labels


def dbscan_cluster(returns: Sequence[RadarReturn], pose: SensorPose, eps: float = 1.5, min_pts: int = 2,
                   position_sigma: float = 0.3, velocity_sigma: float = 0.1,
                   eps_los: float = 1e-6) -> list[Detection3D]:
    """Cluster radar returns in the ego BEV plane; one detection per cluster, noise dropped."""
    if not returns:
        return []
    converted = [radar_to_ego(r, pose, eps_los) for r in returns]
    pts = np.array([p[:2] for p, _ in converted])
    labels = dbscan_labels(pts, eps, min_pts)
    dets = []
    for c in range(int(labels.max()) + 1 if len(labels) else 0):
        idx = np.flatnonzero(labels == c)
        members = pts[idx]
        centroid = members.mean(axis=0)
        z = float(np.mean([converted[i][0][2] for i in idx]))
        vels = [converted[i][1] for i in idx if converted[i][1] is not None]
        flags = ("velocity_skipped",) if len(vels) < len(idx) else ()
        velocity = tuple(np.mean(vels, axis=0).tolist()) if vels else None
        vcov = None
        if velocity is not None:
            los = centroid - pose.t[:2]
            ang = math.atan2(los[1], los[0])
            R = rot_z(ang)[:2, :2]
            vcov = (R @ np.diag([max(velocity_sigma ** 2, RADAR_LOS_VAR_FLOOR), RADAR_PERPENDICULAR_VAR]) @ R.T).tolist()
        extent = np.maximum(members.max(axis=0) - members.min(axis=0), 0.5)
        n = len(idx)
        dets.append(Detection3D(
            local_id=c,
            center_ego=(float(centroid[0]), float(centroid[1]), z),
            size=(float(extent[0]), float(extent[1]), 0.5),
            heading=0.0,
            class_probs={k: 1.0 / len(CLASS_VOCABULARY) for k in CLASS_VOCABULARY},
            confidence=n / (n + 1.0),
            velocity_bev=velocity,
            position_cov=(position_sigma ** 2 * np.eye(2)).tolist(),
            velocity_cov=vcov,
            flags=flags,
        ))
    return dets


def radar_returns(scene: GroundTruthScene, cfg: SimConfig, pose: SensorPose,
                  seed: int) -> tuple[list[RadarReturn], list[Optional[str]], list[str]]:
    """Polar returns (per object plus clutter), the gt_id behind each return, and missed gt_ids."""
    noise = cfg.agents["radar"]
    rng = _rng(seed, "radar")
    out: list[RadarReturn] = []
    owners: list[Optional[str]] = []
    missed = []
    R = pose.R
    for e in scene.entities:
        n = int(rng.integers(cfg.radar_returns_min, cfg.radar_returns_max + 1))
        scatter = rng.normal(0.0, noise.position_sigma, (n, 2)) if noise.position_sigma > 0 else np.zeros((n, 2))
        dop = rng.normal(0.0, noise.velocity_sigma, n) if noise.velocity_sigma > 0 else np.zeros(n)
        if rng.random() < noise.miss_prob:
            missed.append(e.gt_id)
            continue
        for k in range(n):
            p_ego = np.array([e.position_bev[0] + scatter[k, 0], e.position_bev[1] + scatter[k, 1], pose.t[2]])
            p_rad = R.T @ (p_ego - pose.t)
            rng_m = float(math.hypot(p_rad[0], p_rad[1]))
            if rng_m > cfg.radar_range_max:
                continue
            az = math.atan2(p_rad[1], p_rad[0])
            los = (R @ np.array([math.cos(az), math.sin(az), 0.0]))[:2]
            v_rad = float(np.dot(e.velocity_bev, los)) + float(dop[k])
            out.append(RadarReturn(rng_m, az, v_rad, rcs=10.0))
            owners.append(e.gt_id)
    x0, x1, y0, y1 = scene.extent
    for _ in range(int(rng.poisson(cfg.radar_clutter_rate))):
        p_ego = np.array([rng.uniform(x0, x1), rng.uniform(y0, y1), pose.t[2]])
        p_rad = R.T @ (p_ego - pose.t)
        out.append(RadarReturn(float(math.hypot(p_rad[0], p_rad[1])), math.atan2(p_rad[1], p_rad[0]),
                               float(rng.normal(0.0, 1.0)), rcs=-5.0))
        owners.append(None)
    return out, owners, missed


def _observe_radar(scene: GroundTruthScene, cfg: SimConfig, calib: Calibration,
                   seed: int) -> tuple[AgentFactSet, ObservationLabels]:
    pose = calib.pose("radar")
    noise = cfg.agents["radar"]
    rets, owners, missed = radar_returns(scene, cfg, pose, seed)
    dets = dbscan_cluster(rets, pose, cfg.radar_dbscan_eps, cfg.radar_dbscan_min_pts,
                          position_sigma=noise.position_sigma, velocity_sigma=noise.velocity_sigma)
    labels = ObservationLabels("radar", missed=missed)
    if dets:
        pts = np.array([radar_to_ego(r, pose)[0][:2] for r in rets])
        cluster_of = dbscan_labels(pts, cfg.radar_dbscan_eps, cfg.radar_dbscan_min_pts)
        for d in dets:
            owned = [owners[i] for i in np.flatnonzero(cluster_of == d.local_id) if owners[i] is not None]
            labels.correspondences[d.local_id] = max(set(owned), key=owned.count) if owned else None
    fs = AgentFactSet(agent_kind="radar", scene_id=scene.scene_id, timestamp_us=scene.timestamp_us,
                      detections_3d=tuple(dets), source_lineage=frozenset(DEFAULT_LINEAGE["radar"]))
    return fs, labels


# ---------------------------------------------------------------- camera

def _camera_synopsis(classes: Sequence[str]) -> str:
    if not classes:
        return "Camera views show no salient road users."
    counts = {c: classes.count(c) for c in CLASS_VOCABULARY if c in classes}
    parts = [f"{n} {c}{'s' if n > 1 else ''}" for c, n in counts.items()]
    return "Camera views show " + ", ".join(parts) + "."


def _observe_camera(scene: GroundTruthScene, cfg: SimConfig, calib: Calibration,
                    seed: int) -> tuple[AgentFactSet, ObservationLabels]:
    noise = cfg.agents["camera"]
    rng = _rng(seed, "camera")
    plan = conflict_plan(scene, cfg, seed)
    labels = ObservationLabels("camera")
    dets: list[Detection2D] = []
    seen: list[str] = []
    for e in scene.entities:
        missed = rng.random() < noise.miss_prob
        conf = float(rng.uniform(0.7, 0.95))
        cls = _reported_class(e, "camera", plan, noise.confusion_prob, rng, labels)
        center = (e.position_bev[0], e.position_bev[1], e.z)
        visible = []
        if math.hypot(*e.position_bev) <= cfg.camera_max_range and not missed:
            for cam_id in sorted(calib.cameras):
                cam = calib.cameras[cam_id]
                p_cam = cam.pose.R.T @ (np.array(center) - cam.pose.t)
                if p_cam[2] <= 1.0:
                    continue
                try:
                    box = project_box_footprint(center, e.size, e.heading, cam)
                except GeometryError:
                    continue
                visible.append((cam_id, box))
        jitter = rng.normal(0.0, noise.position_sigma, (max(1, len(visible)), 4)) if noise.position_sigma > 0 \
            else np.zeros((max(1, len(visible)), 4))
        if missed or not visible:
            if e.gt_id in labels.conflicts:
                labels.conflicts.remove(e.gt_id)
            if missed:
                labels.missed.append(e.gt_id)
            continue
        seen.append(e.class_name)
        for k, (cam_id, box) in enumerate(visible):
            cam = calib.cameras[cam_id]
            u0, v0, u1, v1 = (np.array(box) + jitter[k]).tolist()
            u0, u1 = sorted((min(max(u0, 0.0), cam.width), min(max(u1, 0.0), cam.width)))
            v0, v1 = sorted((min(max(v0, 0.0), cam.height), min(max(v1, 0.0), cam.height)))
            if u1 - u0 < 1.0 or v1 - v0 < 1.0:
                continue
            lid = len(dets)
            attrs = (f"color:{e.color}",) if e.color else ()
            dets.append(Detection2D(lid, cam_id, (u0, v0, u1, v1), class_probs_for(cls, cfg.class_confidence), conf, attrs))
            labels.correspondences[lid] = e.gt_id
    for _ in range(int(rng.poisson(noise.fp_rate))):
        cam_id = sorted(calib.cameras)[int(rng.integers(len(calib.cameras)))]
        cam = calib.cameras[cam_id]
        u0 = float(rng.uniform(0, cam.width - 60))
        v0 = float(rng.uniform(0, cam.height - 60))
        cls = CLASS_VOCABULARY[int(rng.integers(len(CLASS_VOCABULARY)))]
        lid = len(dets)
        dets.append(Detection2D(lid, cam_id, (u0, v0, u0 + 50.0, v0 + 50.0), class_probs_for(cls, cfg.class_confidence),
                                float(rng.uniform(0.3, 0.6))))
        labels.correspondences[lid] = None
    fs = AgentFactSet(agent_kind="camera", scene_id=scene.scene_id, timestamp_us=scene.timestamp_us,
                      detections_2d=tuple(dets), synopsis=_camera_synopsis(seen),
                      source_lineage=frozenset(DEFAULT_LINEAGE["camera"]))
    return fs, labels


def observe(scene: GroundTruthScene, agent_kind: str, cfg: SimConfig, calib: Calibration,
            seed: int) -> tuple[AgentFactSet, ObservationLabels]:
    """One agent's fact set for the scene plus its oracle correspondence labels."""
    if agent_kind in ("lidar", "bevfusion"):
        return _observe_boxes(scene, agent_kind, cfg, seed)
    if agent_kind == "radar":
        return _observe_radar(scene, cfg, calib, seed)
    if agent_kind == "camera":
        return _observe_camera(scene, cfg, calib, seed)
    raise ValueError(f"unknown agent kind {agent_kind!r}")


@dataclass
class SimulatedScene:
    ground_truth: GroundTruthScene
    facts: SceneFacts
    labels: dict[str, ObservationLabels]

    def labels_dict(self) -> dict:
        return {"scene_id": self.ground_truth.scene_id, "oracle_only": True,
                "agents": {k: v.to_dict() for k, v in sorted(self.labels.items())}}


def simulate_scene(cfg: SimConfig, seed: int, scene_id: str, timestamp_us: int,
                   calib: Calibration, agents: Sequence[str] = ("bevfusion", "lidar", "radar", "camera")) -> SimulatedScene:
    gt = generate_scene(cfg, seed, scene_id, timestamp_us)
    fact_sets, labels = [], {}
    for kind in agents:
        fs, lab = observe(gt, kind, cfg, calib, seed)
        fact_sets.append(fs)
        labels[kind] = lab
    facts = SceneFacts(scene_id=scene_id, timestamp_us=timestamp_us, ego_speed=gt.ego_speed, fact_sets=tuple(fact_sets))
    return SimulatedScene(gt, facts, labels)
