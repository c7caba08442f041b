"""Pure-Python versions of the hot kernels.

These mirror ``_kernels.pyx`` line for line and are used when the compiled
extension is missing or when ``SCENEFUSE_PURE_PYTHON=1`` is set.
"""
from __future__ import annotations

import math

INF = math.inf


def hungarian(cost):
    """Minimum-cost perfect matching of a rows<=cols matrix.

    Shortest-augmenting-path Hungarian method with row/column potentials,
    O(n^2 m). ``cost`` is a sequence of row sequences with finite entries.
    Returns ``assign`` where ``assign[i]`` is the column matched to row ``i``.
    Ties are resolved toward the lowest column index.
    """
    n = len(cost)
    if n == 0:
        return []
    m = len(cost[0])
    if n > m:
        raise ValueError("hungarian expects rows <= cols")
    u = [0.0] * (n + 1)
    v = [0.0] * (m + 1)
    p = [0] * (m + 1)
    way = [0] * (m + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [INF] * (m + 1)
        used = [False] * (m + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            row = cost[i0 - 1]
            ui0 = u[i0]
            delta = INF
            j1 = 0
            for j in range(1, m + 1):
                if not used[j]:
                    cur = row[j - 1] - ui0 - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    assign = [-1] * n
    for j in range(1, m + 1):
        if p[j]:
            assign[p[j] - 1] = j - 1
    return assign


def rect_corners(cx, cy, length, width, yaw):
    """Counter-clockwise corners of a yawed rectangle."""
    c = math.cos(yaw)
    s = math.sin(yaw)
    hl = 0.5 * length
    hw = 0.5 * width
    out = []
    for dx, dy in ((hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)):
        out.append((cx + c * dx - s * dy, cy + s * dx + c * dy))
    return out


def polygon_area(poly):
    n = len(poly)
    if n < 3:
        return 0.0
    acc = 0.0
    for k in range(n):
        x1, y1 = poly[k]
        x2, y2 = poly[(k + 1) % n]
        acc += x1 * y2 - x2 * y1
    return 0.5 * acc


def clip_convex(subject, clipper):
    """Sutherland-Hodgman: ``subject`` clipped by convex CCW ``clipper``."""
    output = list(subject)
    nc = len(clipper)
    for k in range(nc):
        if not output:
            break
        ax, ay = clipper[k]
        bx, by = clipper[(k + 1) % nc]
        ex = bx - ax
        ey = by - ay
        inp = output
        output = []
        ni = len(inp)
        for q in range(ni):
            px, py = inp[q]
            sx, sy = inp[q - 1]
            dp = ex * (py - ay) - ey * (px - ax)
            ds = ex * (sy - ay) - ey * (sx - ax)
            if dp >= 0.0:
                if ds < 0.0:
                    t = ds / (ds - dp)
                    output.append((sx + t * (px - sx), sy + t * (py - sy)))
                output.append((px, py))
            elif ds >= 0.0:
                t = ds / (ds - dp)
                output.append((sx + t * (px - sx), sy + t * (py - sy)))
    return output


def rect_iou(a, b):
    """IoU of two yawed rectangles given as (cx, cy, length, width, yaw)."""
    pa = rect_corners(*a)
    pb = rect_corners(*b)
    area_a = a[2] * a[3]
    area_b = b[2] * b[3]
    inter = clip_convex(pa, pb)
    ia = abs(polygon_area(inter))
    union = area_a + area_b - ia
    if union <= 0.0:
        return 0.0
    iou = ia / union
    if iou > 1.0:
        return 1.0
    if iou < 0.0:
        return 0.0
    return iou


def rect_iou_matrix(boxes_a, boxes_b):
    """Pairwise IoU; boxes are sequences of (cx, cy, length, width, yaw)."""
    out = []
    for a in boxes_a:
        ra = math.hypot(a[2], a[3]) * 0.5
        row = []
        for b in boxes_b:
            rb = math.hypot(b[2], b[3]) * 0.5
            if math.hypot(a[0] - b[0], a[1] - b[1]) > ra + rb:
                row.append(0.0)
            else:
                row.append(rect_iou(a, b))
        out.append(row)
    return out
