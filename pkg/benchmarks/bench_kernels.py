"""Compiled vs pure-Python kernels: Hungarian assignment and rotated-box IoU.

Run: python benchmarks/bench_kernels.py [--repeat N]
Checks that both implementations agree before timing them.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from scenefuse import _kernels_py

try:
    from scenefuse import _kernels as _compiled
except ImportError:
    _compiled = None


def _boxes(rng: np.random.Generator, n: int) -> np.ndarray:
    return np.column_stack([rng.uniform(-20, 20, n), rng.uniform(-20, 20, n), rng.uniform(0.5, 10, n),
                            rng.uniform(0.5, 3, n), rng.uniform(-np.pi, np.pi, n)])


def _time(fn, repeat: int) -> float:
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _compiled is None:
        print("compiled extension not built; run `pip install --no-build-isolation -e .` first")
        return
    rng = np.random.default_rng(0)
    rows = []
    for n in (10, 50, 150):
        cost = rng.uniform(0, 1, (n, n))
        assert _compiled.hungarian(cost) == _kernels_py.hungarian(cost.tolist())
        t_c = _time(lambda: _compiled.hungarian(cost), args.repeat)
        t_p = _time(lambda: _kernels_py.hungarian(cost.tolist()), args.repeat)
        rows.append((f"hungarian {n}x{n}", t_c, t_p))
    for n in (10, 50, 100):
        a, b = _boxes(rng, n), _boxes(rng, n)
        ref = np.array(_kernels_py.rect_iou_matrix(a.tolist(), b.tolist()))
        assert np.allclose(_compiled.rect_iou_matrix(a, b), ref, atol=1e-12)
        t_c = _time(lambda: _compiled.rect_iou_matrix(a, b), args.repeat)
        t_p = _time(lambda: _kernels_py.rect_iou_matrix(a.tolist(), b.tolist()), args.repeat)
        rows.append((f"rect_iou_matrix {n}x{n}", t_c, t_p))
    print(f"{'kernel':<24}{'cython (ms)':>14}{'python (ms)':>14}{'speedup':>10}")
    for name, t_c, t_p in rows:
        print(f"{name:<24}{t_c * 1e3:>14.3f}{t_p * 1e3:>14.3f}{t_p / t_c:>9.1f}x")


if __name__ == "__main__":
    main()
