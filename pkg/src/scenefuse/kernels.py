"""Kernel dispatch: compiled extension when importable, pure Python otherwise.

Set ``SCENEFUSE_PURE_PYTHON=1`` before import to force the fallback.
"""
from __future__ import annotations

import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if not os.environ.get("SCENEFUSE_PURE_PYTHON"):
    try:
        from . import _kernels as _compiled  # type: ignore[attr-defined]
    except ImportError:
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"


def hungarian(cost) -> list[int]:
    """Row -> column assignment for a finite rows<=cols cost matrix."""
    arr = np.asarray(cost, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] == 0:
        return []
    if _impl is _kernels_py:
        return _kernels_py.hungarian(arr.tolist())
    return _impl.hungarian(arr)


def rect_iou(a, b) -> float:
    return float(_impl.rect_iou(tuple(map(float, a)), tuple(map(float, b))))


def rect_iou_matrix(boxes_a, boxes_b) -> np.ndarray:
    A = np.asarray(boxes_a, dtype=np.float64).reshape(-1, 5)
    B = np.asarray(boxes_b, dtype=np.float64).reshape(-1, 5)
    if _impl is _kernels_py:
        return np.array(_kernels_py.rect_iou_matrix(A.tolist(), B.tolist()), dtype=np.float64).reshape(len(A), len(B))
    return _impl.rect_iou_matrix(A, B)
