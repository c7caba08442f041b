"""Frame changes, pinhole projection, radar line-of-sight velocity and BEV IoU."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .errors import BehindCamera, NotVisible, ParameterError
from .scene import CameraModel, RadarReturn, SensorPose

Z_MIN = 1e-3
EPS_LOS = 1e-6


def rot_z(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def pose_from_yaw(yaw: float, translation: Sequence[float] = (0.0, 0.0, 0.0)) -> SensorPose:
    return SensorPose(rot_z(yaw).tolist(), tuple(translation))


def rigid_transform(p: Sequence[float], pose: SensorPose) -> np.ndarray:
    """Map a sensor-frame point into the ego frame: ``R p + t``."""
    return pose.R @ np.asarray(p, dtype=float) + pose.t


def inverse_transform(p: Sequence[float], pose: SensorPose) -> np.ndarray:
    """Ego frame back to sensor frame."""
    return pose.R.T @ (np.asarray(p, dtype=float) - pose.t)


def ego_to_camera(p_ego: Sequence[float], camera: CameraModel) -> np.ndarray:
    return inverse_transform(p_ego, camera.pose)


def project_camera_point(p_cam: Sequence[float], camera: CameraModel, z_min: float = Z_MIN) -> np.ndarray:
    p = np.asarray(p_cam, dtype=float)
    if p[2] <= z_min:
        raise BehindCamera(f"depth {p[2]:.6g} m is not in front of camera {camera.camera_id}")
    h = camera.K @ p
    return h[:2] / h[2]


def project_point(p_ego: Sequence[float], camera: CameraModel, z_min: float = Z_MIN) -> np.ndarray:
    """Ego-frame point to pixel coordinates; raises BehindCamera when depth <= z_min."""
    return project_camera_point(ego_to_camera(p_ego, camera), camera, z_min)


def box_corners(center: Sequence[float], size: Sequence[float], heading: float) -> np.ndarray:
    """The 8 corners (8x3) of a yawed 3D box in the frame of ``center``."""
    length, width, height = size
    signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=float)
    local = signs * (0.5 * np.array([length, width, height], dtype=float))
    return local @ rot_z(heading).T + np.asarray(center, dtype=float)


def project_box_footprint(center: Sequence[float], size: Sequence[float], heading: float,
                          camera: CameraModel, z_min: float = Z_MIN) -> tuple[float, float, float, float]:
    """Axis-aligned image rectangle around the projected corners, clamped to the image.

    Corners behind the camera are ignored; raises NotVisible when no corner is
    in front or the clamped rectangle is empty.
    """
    pts = np.array([inverse_transform(c, camera.pose) for c in box_corners(center, size, heading)])
    front = pts[pts[:, 2] > z_min]
    if len(front) == 0:
        raise NotVisible(f"box behind camera {camera.camera_id}")
    h = front @ camera.K.T
    uv = h[:, :2] / h[:, 2:3]
    u0 = min(max(uv[:, 0].min(), 0.0), camera.width)
    u1 = min(max(uv[:, 0].max(), 0.0), camera.width)
    v0 = min(max(uv[:, 1].min(), 0.0), camera.height)
    v1 = min(max(uv[:, 1].max(), 0.0), camera.height)
    if not (u0 < u1 and v0 < v1):
        raise NotVisible(f"box outside the image of camera {camera.camera_id}")
    return (float(u0), float(v0), float(u1), float(v1))


def radar_to_ego(ret: RadarReturn, pose: SensorPose,
                 eps_los: float = EPS_LOS) -> tuple[np.ndarray, Optional[np.ndarray]]:
    """Polar radar return to an ego-frame position and a BEV velocity along the line of sight.

    The velocity is ``None`` when the horizontal line of sight is shorter than
    ``eps_los``; callers flag that as ``velocity_skipped``.
    """
    if ret.range_m < 0:
        raise ParameterError("radar range must be >= 0")
    p_rad = np.array([ret.range_m * math.cos(ret.azimuth), ret.range_m * math.sin(ret.azimuth), 0.0])
    p_ego = rigid_transform(p_rad, pose)
    los = (p_ego - pose.t)[:2]
    n = float(np.hypot(los[0], los[1]))
    if n < eps_los:
        return p_ego, None
    return p_ego, ret.radial_velocity * los / n


@dataclass(frozen=True)
class BevBox:
    center: tuple[float, float]
    extent: tuple[float, float]  # length along heading, width
    yaw: float

    def __post_init__(self) -> None:
        if not (self.extent[0] > 0 and self.extent[1] > 0):
            raise ParameterError("BevBox extents must be > 0")

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (float(self.center[0]), float(self.center[1]), float(self.extent[0]), float(self.extent[1]),
                float(self.yaw))

    def corners(self) -> np.ndarray:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        hl, hw = 0.5 * self.extent[0], 0.5 * self.extent[1]
        local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
        return local @ np.array([[c, s], [-s, c]]) + np.asarray(self.center, dtype=float)


def bev_iou(a: BevBox, b: BevBox) -> float:
    """Exact IoU of two rotated rectangles (convex clipping)."""
    return kernels.rect_iou(a.as_tuple(), b.as_tuple())


def bev_iou_matrix(a: Sequence[BevBox], b: Sequence[BevBox]) -> np.ndarray:
    return kernels.rect_iou_matrix([x.as_tuple() for x in a], [x.as_tuple() for x in b])


def aabb_iou(a: Sequence[float], b: Sequence[float]) -> float:
    """IoU of two image-plane (u0, v0, u1, v1) rectangles."""
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0
