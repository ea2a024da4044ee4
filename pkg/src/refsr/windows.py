"""Low-level windowing and correlation kernels.

Everything here is deliberately free of BLAS calls: the reductions run
through non-optimized einsum so that a given call with a given shape is
bit-reproducible regardless of thread count or library build flags.  Both
the hierarchical matcher and the exhaustive oracle score candidates through
these same elementary functions; what they do *around* the scores (tiling,
streaming, selection) is implemented independently on each side.
"""

from __future__ import annotations

import math

import numpy as np


def unfold(fm: np.ndarray, k: int, dtype=np.float64) -> np.ndarray:
    """Centered k x k windows at every position of a (C, H, W) map.

    Positions outside the map contribute zeros.  Returns (H*W, C*k*k) in
    row-major position order; each row is the window flattened in
    (channel, row, col) order.
    """
    c, h, w = fm.shape
    half = k // 2
    padded = np.pad(fm, ((0, 0), (half, half), (half, half)))
    view = np.lib.stride_tricks.sliding_window_view(padded, (k, k), axis=(1, 2))
    # view: (C, H, W, k, k) -> (H, W, C, k, k) -> (H*W, C*k*k)
    cols = view.transpose(1, 2, 0, 3, 4).reshape(h * w, c * k * k)
    return np.ascontiguousarray(cols, dtype=dtype)


def valid_patch_grid(h: int, w: int, k: int, stride: int = 1) -> np.ndarray:
    """Top-left corners (n, 2) of all k x k windows fully inside an h x w map.

    Row-major enumeration; this ordering is the tie-break order for
    candidate patches.
    """
    rows = np.arange(0, h - k + 1, stride, dtype=np.int64)
    cols = np.arange(0, w - k + 1, stride, dtype=np.int64)
    grid = np.stack(np.meshgrid(rows, cols, indexing="ij"), axis=-1)
    return grid.reshape(-1, 2)


def extract_patches(fm: np.ndarray, k: int, stride: int = 1,
                    dtype=np.float64) -> tuple[np.ndarray, np.ndarray]:
    """All fully-inside k x k patches of a (C, H, W) map.

    Returns (tops, mat): tops is (n, 2) top-left corners, mat is
    (n, C*k*k) with the same flattening order as unfold.
    """
    c, h, w = fm.shape
    tops = valid_patch_grid(h, w, k, stride)
    view = np.lib.stride_tricks.sliding_window_view(fm, (k, k), axis=(1, 2))
    mat = view.transpose(1, 2, 0, 3, 4)[tops[:, 0], tops[:, 1]]
    return tops, np.ascontiguousarray(mat.reshape(len(tops), c * k * k), dtype=dtype)


def correlate_one(wins: np.ndarray, patch: np.ndarray) -> np.ndarray:
    """Dot product of one flattened patch against every window row.

    wins is (P, D) float64, patch is (D,) float64.  The contraction order
    is fixed, so identical inputs give identical bits wherever this is
    called from.
    """
    return np.einsum("pd,d->p", wins, patch, optimize=False)


def correlate_paired(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise dot product of two (P, D) float64 matrices."""
    return np.einsum("pd,pd->p", a, b, optimize=False)


def vector_norm(v: np.ndarray) -> float:
    """Euclidean norm of a flattened patch, fixed contraction order."""
    return math.sqrt(float(np.einsum("d,d->", v, v, optimize=False)))


def row_norms(a: np.ndarray) -> np.ndarray:
    """Euclidean norm of every row of a (P, D) matrix."""
    return np.sqrt(correlate_paired(a, a))
