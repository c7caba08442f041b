"""Slow, obviously-correct reference computations used by the tests."""
from __future__ import annotations

import itertools
import math

import numpy as np


def brute_force_assignment(cost: np.ndarray) -> tuple[int, float]:
    """(most allowed pairs, least total cost among those) over every one-to-one matching."""
    C = np.asarray(cost, dtype=float)
    m, n = C.shape
    best = (0, 0.0)
    if m == 0 or n == 0:
        return best
    size = max(m, n)
    for perm in itertools.permutations(range(size)):
        pairs = [(i, j) for i, j in enumerate(perm) if i < m and j < n and math.isfinite(C[i, j])]
        key = (len(pairs), math.fsum(C[i, j] for i, j in pairs))
        if key[0] > best[0] or (key[0] == best[0] and key[1] < best[1]):
            best = key
    return best


def _inside_rect(px: np.ndarray, py: np.ndarray, box) -> np.ndarray:
    cx, cy, length, width, yaw = box
    c, s = math.cos(yaw), math.sin(yaw)
    u = c * (px - cx) + s * (py - cy)
    v = -s * (px - cx) + c * (py - cy)
    return (np.abs(u) <= 0.5 * length) & (np.abs(v) <= 0.5 * width)


def _aabb(box) -> tuple[float, float, float, float]:
    cx, cy, length, width, yaw = box
    hx = 0.5 * (abs(length * math.cos(yaw)) + abs(width * math.sin(yaw)))
    hy = 0.5 * (abs(length * math.sin(yaw)) + abs(width * math.cos(yaw)))
    return cx - hx, cx + hx, cy - hy, cy + hy


def raster_iou(a, b, cell: float = 1e-3) -> float:
    """IoU with the intersection area counted on a ``cell``-sized grid of sample points."""
    ax0, ax1, ay0, ay1 = _aabb(a)
    bx0, bx1, by0, by1 = _aabb(b)
    x0, x1, y0, y1 = max(ax0, bx0), min(ax1, bx1), max(ay0, by0), min(ay1, by1)
    inter = 0.0
    if x0 < x1 and y0 < y1:
        xs = np.arange(x0 + 0.5 * cell, x1, cell)
        for ys in np.array_split(np.arange(y0 + 0.5 * cell, y1, cell), 8):
            px, py = np.meshgrid(xs, ys)
            inter += float(np.count_nonzero(_inside_rect(px, py, a) & _inside_rect(px, py, b)))
        inter *= cell * cell
    union = a[2] * a[3] + b[2] * b[3] - inter
    return inter / union


def random_spd(rng: np.random.Generator, dim: int, lo: float = 0.05, hi: float = 4.0) -> np.ndarray:
    """Symmetric positive definite matrix with eigenvalues in [lo, hi]."""
    q, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
    return q @ np.diag(rng.uniform(lo, hi, size=dim)) @ q.T


def naive_dbscan(points: np.ndarray, eps: float, min_pts: int) -> tuple[list[set[int]], set[int], set[int]]:
    """(clusters of core points, border points, noise points) by exhaustive neighbourhood expansion."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    n = len(pts)
    nbr = [[j for j in range(n) if math.dist(pts[i], pts[j]) <= eps] for i in range(n)]
    core = {i for i in range(n) if len(nbr[i]) >= min_pts}
    clusters, seen = [], set()
    for i in sorted(core):
        if i in seen:
            continue
        group, stack = set(), [i]
        while stack:
            k = stack.pop()
            if k in group:
                continue
            group.add(k)
            stack.extend(j for j in nbr[k] if j in core and j not in group)
        seen |= group
        clusters.append(group)
    border = {i for i in range(n) if i not in core and any(j in core for j in nbr[i])}
    noise = set(range(n)) - core - border
    return clusters, border, noise
