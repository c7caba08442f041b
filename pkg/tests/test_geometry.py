from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import raster_iou
from scenefuse.errors import BehindCamera, NotVisible, ParameterError
from scenefuse.geometry import (
    BevBox,
    box_corners,
    aabb_iou,
    bev_iou,
    bev_iou_matrix,
    inverse_transform,
    pose_from_yaw,
    project_box_footprint,
    project_camera_point,
    project_point,
    radar_to_ego,
    rigid_transform,
)
from scenefuse.scene import CameraModel, RadarReturn, SensorPose

coord = st.floats(-100, 100)
point = st.tuples(coord, coord, coord)
angle = st.floats(-math.pi, math.pi)
bev = st.builds(lambda x, y, l, w, t: BevBox((x, y), (l, w), t), st.floats(-5, 5), st.floats(-5, 5),
                st.floats(0.3, 6), st.floats(0.3, 6), angle)


def _random_pose(rng: np.random.Generator) -> SensorPose:
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return SensorPose(q.tolist(), rng.uniform(-3, 3, 3).tolist())


@given(point, angle, point)
def test_rigid_round_trip(p, yaw, t):
    pose = pose_from_yaw(yaw, t)
    back = inverse_transform(rigid_transform(p, pose), pose)
    assert np.allclose(back, p, atol=1e-9, rtol=0)


def test_rigid_transform_preserves_distances():
    rng = np.random.default_rng(11)
    for _ in range(100):
        pose = _random_pose(rng)
        a, b = rng.uniform(-50, 50, (2, 3))
        d0 = np.linalg.norm(a - b)
        d1 = np.linalg.norm(rigid_transform(a, pose) - rigid_transform(b, pose))
        assert abs(d0 - d1) <= 1e-9


def test_inverse_pose_composes_to_identity():
    rng = np.random.default_rng(12)
    pose = _random_pose(rng)
    inv = pose.inverse()
    p = rng.uniform(-10, 10, 3)
    assert np.allclose(rigid_transform(rigid_transform(p, pose), inv), p, atol=1e-12)


@given(st.floats(-20, 20), st.floats(-20, 20), st.floats(0.5, 80), st.floats(0.01, 100))
def test_projection_is_invariant_to_ray_scale(x, y, z, lam):
    cam = _camera()
    uv = project_camera_point((x, y, z), cam)
    uv2 = project_camera_point((lam * x, lam * y, lam * z), cam)
    assert np.allclose(uv, uv2, atol=1e-9 * max(1.0, float(np.abs(uv).max())), rtol=0)


def _camera():
    from scenefuse.sim import default_calibration
    return default_calibration().cameras["CAM_FRONT"]


def test_projection_of_optical_axis_hits_principal_point():
    cam = _camera()
    assert np.allclose(project_camera_point((0.0, 0.0, 10.0), cam), (cam.cx, cam.cy))
    # CAM_FRONT looks along ego +x
    uv = project_point((20.0, cam.pose.t[1], cam.pose.t[2]), cam)
    assert np.allclose(uv, (cam.cx, cam.cy), atol=1e-9)


def test_points_behind_camera_are_rejected():
    cam = _camera()
    with pytest.raises(BehindCamera):
        project_camera_point((1.0, 1.0, 0.0), cam)
    with pytest.raises(BehindCamera):
        project_point((-20.0, 0.0, 1.0), cam)
    with pytest.raises(NotVisible):
        project_box_footprint((-20.0, 0.0, 0.8), (4.5, 1.9, 1.6), 0.0, cam)


def test_box_footprint_is_inside_the_image():
    cam = _camera()
    u0, v0, u1, v1 = project_box_footprint((15.0, 1.0, 0.8), (4.5, 1.9, 1.6), 0.2, cam)
    assert 0 <= u0 < u1 <= cam.width and 0 <= v0 < v1 <= cam.height


@given(st.floats(0.5, 80), angle, st.floats(-30, 30), angle, point)
def test_radar_velocity_magnitude_equals_radial_speed(rng_m, az, v_r, yaw, t):
    pose = pose_from_yaw(yaw, t)
    ret = RadarReturn(rng_m, az, v_r)
    p, v = radar_to_ego(ret, pose)
    assert v is not None
    assert abs(np.hypot(*v) - abs(ret.radial_velocity)) <= 1e-9 * max(1.0, abs(v_r))
    assert np.allclose(np.linalg.norm((p - pose.t)[:2]), ret.range_m, atol=1e-9)


def test_radar_zero_range_skips_velocity():
    _, v = radar_to_ego(RadarReturn(0.0, 0.3, 5.0), SensorPose.identity())
    assert v is None
    with pytest.raises(ParameterError):
        radar_to_ego(RadarReturn(-1.0, 0.0, 0.0), SensorPose.identity())


@given(bev, bev)
def test_bev_iou_bounded_and_symmetric(a, b):
    x = bev_iou(a, b)
    assert 0.0 <= x <= 1.0
    assert x == pytest.approx(bev_iou(b, a), abs=1e-12)


@given(bev)
def test_bev_iou_self_is_one(a):
    assert bev_iou(a, a) == pytest.approx(1.0, abs=1e-9)


def test_bev_iou_matches_raster_oracle():
    rng = np.random.default_rng(21)
    for _ in range(15):
        a = BevBox(tuple(rng.uniform(-0.5, 0.5, 2)), tuple(rng.uniform(0.4, 1.6, 2)), rng.uniform(-3, 3))
        b = BevBox(tuple(rng.uniform(-0.5, 0.5, 2)), tuple(rng.uniform(0.4, 1.6, 2)), rng.uniform(-3, 3))
        assert abs(bev_iou(a, b) - raster_iou(a.as_tuple(), b.as_tuple())) <= 1e-3


def test_bev_iou_matrix_shape_and_values():
    boxes = [BevBox((0, 0), (2, 2), 0), BevBox((1, 0), (2, 2), 0)]
    M = bev_iou_matrix(boxes, boxes)
    assert M.shape == (2, 2)
    assert M[0, 1] == pytest.approx(2.0 / 6.0, abs=1e-12)


def test_bev_box_rejects_degenerate_extent():
    with pytest.raises(ParameterError):
        BevBox((0, 0), (0.0, 1.0), 0.0)


def test_aabb_iou():
    assert aabb_iou((0, 0, 2, 2), (1, 1, 3, 3)) == pytest.approx(1 / 7)
    assert aabb_iou((0, 0, 1, 1), (2, 2, 3, 3)) == 0.0


def test_quarter_turn_and_pinhole_hand_values():
    assert np.allclose(rigid_transform((1, 0, 0), pose_from_yaw(math.pi / 2)), (0, 1, 0), atol=1e-12)
    cam = CameraModel("C", SensorPose.identity(), 100.0, 100.0, 50.0, 50.0, 200, 200)
    assert np.allclose(project_camera_point((1.0, 0.0, 2.0), cam), (100.0, 50.0))
    unit = CameraModel("U", SensorPose.identity(), 1.0, 1.0, 0.0, 0.0, 10, 10)
    assert np.allclose(project_camera_point((0.0, 0.0, 1.0), unit), (0.0, 0.0))


def test_radar_on_axis_and_lateral_cases():
    p, v = radar_to_ego(RadarReturn(10.0, 0.0, 2.0), SensorPose.identity())
    assert np.allclose(p, (10, 0, 0)) and np.allclose(v, (2, 0))
    p, _ = radar_to_ego(RadarReturn(5.0, math.pi / 2, 0.0), SensorPose.identity())
    # the azimuth is stored rounded to 9 decimals
    assert np.allclose(p, (0, 5, 0), atol=1e-7)


def test_box_footprint_equals_corner_enumeration():
    cam = _camera()
    rng = np.random.default_rng(4)
    for _ in range(30):
        center = (rng.uniform(8, 40), rng.uniform(-4, 4), rng.uniform(0.5, 1.5))
        size = tuple(rng.uniform(0.5, 5, 3))
        heading = rng.uniform(-3, 3)
        uv = np.array([project_point(c, cam) for c in box_corners(center, size, heading)])
        expect = (max(uv[:, 0].min(), 0), max(uv[:, 1].min(), 0),
                  min(uv[:, 0].max(), cam.width), min(uv[:, 1].max(), cam.height))
        assert np.allclose(project_box_footprint(center, size, heading, cam), expect, atol=1e-9)


def test_offset_squares_iou_is_one_third():
    a, b = BevBox((0, 0), (2, 2), 0), BevBox((1, 0), (2, 2), 0)
    assert bev_iou(a, b) == pytest.approx(1 / 3, abs=1e-12)
    assert abs(raster_iou(a.as_tuple(), b.as_tuple()) - 1 / 3) <= 1e-3
