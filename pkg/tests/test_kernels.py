from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from scenefuse import _kernels_py, kernels

BACKENDS = [pytest.param(_kernels_py, id="python")]
try:
    from scenefuse import _kernels as _compiled
except ImportError:  # pragma: no cover
    pass
else:
    BACKENDS.append(pytest.param(_compiled, id="compiled"))

box = st.tuples(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.2, 6), st.floats(0.2, 6), st.floats(-4, 4))


def _hungarian(impl, cost: np.ndarray) -> list[int]:
    if impl is _kernels_py:
        return impl.hungarian(cost.tolist())
    return impl.hungarian(np.ascontiguousarray(cost, dtype=np.float64))


def _rect_iou(impl, a, b) -> float:
    return float(impl.rect_iou(tuple(map(float, a)), tuple(map(float, b))))


@pytest.mark.parametrize("impl", BACKENDS)
def test_hungarian_is_a_permutation_with_minimal_cost(impl):
    rng = np.random.default_rng(3)
    for _ in range(50):
        n = int(rng.integers(1, 7))
        cost = rng.uniform(0, 10, size=(n, n))
        assign = _hungarian(impl, cost)
        assert sorted(assign) == list(range(n))
        from itertools import permutations
        best = min(sum(cost[i, p[i]] for i in range(n)) for p in permutations(range(n)))
        assert sum(cost[i, assign[i]] for i in range(n)) == pytest.approx(best, abs=1e-12)


@pytest.mark.parametrize("impl", BACKENDS)
def test_hungarian_rectangular_rows_get_distinct_columns(impl):
    cost = np.array([[4.0, 1.0, 3.0, 9.0], [2.0, 0.0, 5.0, 9.0]])
    assign = _hungarian(impl, cost)
    assert len(set(assign)) == 2 and all(0 <= j < 4 for j in assign)
    assert cost[0, assign[0]] + cost[1, assign[1]] == 3.0


@pytest.mark.parametrize("impl", BACKENDS)
def test_rect_iou_identical_disjoint_and_nested(impl):
    a = (0.0, 0.0, 4.0, 2.0, 0.3)
    assert _rect_iou(impl, a, a) == pytest.approx(1.0, abs=1e-12)
    assert _rect_iou(impl, a, (50.0, 0.0, 4.0, 2.0, 0.3)) == 0.0
    # axis-aligned 2x2 inside 4x4: IoU = 4 / 16
    assert _rect_iou(impl, (0, 0, 4, 4, 0), (0, 0, 2, 2, 0)) == pytest.approx(0.25, abs=1e-12)


@given(box, box)
def test_compiled_and_python_rect_iou_agree(a, b):
    ref = _rect_iou(_kernels_py, a, b)
    assert 0.0 <= ref <= 1.0 + 1e-12
    assert kernels.rect_iou(a, b) == pytest.approx(ref, abs=1e-9)
    assert kernels.rect_iou(b, a) == pytest.approx(ref, abs=1e-9)


def test_rect_iou_matrix_matches_pairwise():
    rng = np.random.default_rng(5)
    A = np.column_stack([rng.uniform(-3, 3, (6, 2)), rng.uniform(0.5, 4, (6, 2)), rng.uniform(-3, 3, 6)])
    B = np.column_stack([rng.uniform(-3, 3, (4, 2)), rng.uniform(0.5, 4, (4, 2)), rng.uniform(-3, 3, 4)])
    M = kernels.rect_iou_matrix(A, B)
    assert M.shape == (6, 4)
    for i in range(6):
        for j in range(4):
            assert M[i, j] == pytest.approx(kernels.rect_iou(A[i], B[j]), abs=1e-12)


def test_empty_inputs():
    assert kernels.hungarian(np.zeros((0, 0))) == []
    assert kernels.rect_iou_matrix(np.zeros((0, 5)), np.zeros((2, 5))).shape == (0, 2)
