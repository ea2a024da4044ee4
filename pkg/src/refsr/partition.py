"""Spatial tiling and channel splitting for part-based matching.

Spatial parts form a sqrt(n) x sqrt(n) grid whose interior tiles overlap
by patch_size - 1 rows/columns, so every patch of the full map lives
wholly inside at least one part and part-based search loses no candidate.
Channel subvectors are contiguous equal blocks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DivisibilityError, SizeError


@dataclass(frozen=True)
class PartitionSpec:
    """Partition counts for one matching run.

    n_m: number of references; n_i / n_r: spatial parts of the input /
    each reference (perfect squares); n_c: channel subvectors, 0 means
    derive from the stage channels; n_l: hierarchy depth, fixed at 3.
    """

    n_m: int = 1
    n_i: int = 1
    n_r: int = 1
    n_c: int = 0
    n_l: int = 3

    def __post_init__(self) -> None:
        if self.n_m < 1:
            raise ValueError(f"n_m must be >= 1, got {self.n_m}")
        for name in ("n_i", "n_r"):
            val = getattr(self, name)
            if val < 1 or math.isqrt(val) ** 2 != val:
                raise ValueError(f"{name} must be a positive perfect square, got {val}")
        if self.n_c < 0:
            raise ValueError(f"n_c must be >= 0, got {self.n_c}")
        if self.n_l != 3:
            raise ValueError(f"hierarchy depth is fixed at 3, got {self.n_l}")


@dataclass
class Part:
    """One spatial tile of a feature map."""

    index: int
    origin: tuple[int, int]
    feature: np.ndarray


def auto_nc(stage_channels: tuple[int, int, int]) -> int:
    """Derived subvector count: c3 / (mean of stage channels over 4).

    The raw ratio 4*c3/(c1+c2+c3) is rounded to the nearest divisor of
    c3, ties toward the smaller divisor.  (64, 128, 256) gives 2.
    """
    c1, c2, c3 = stage_channels
    raw = 4.0 * c3 / float(c1 + c2 + c3)
    divisors = [d for d in range(1, c3 + 1) if c3 % d == 0]
    return min(divisors, key=lambda d: (abs(d - raw), d))


def axis_layout(length: int, g: int, overlap: int) -> list[tuple[int, int]]:
    """(origin, size) of g overlapping segments covering [0, length)."""
    total = length + (g - 1) * overlap
    base, rem = divmod(total, g)
    sizes = [base + 1 if i < rem else base for i in range(g)]
    origins = [0]
    for s in sizes[:-1]:
        origins.append(origins[-1] + s - overlap)
    return list(zip(origins, sizes))


def grid_layout(h: int, w: int, n_parts: int,
                patch_size: int) -> list[tuple[int, int, int, int]]:
    """(row0, col0, height, width) for each part, row-major part order."""
    g = math.isqrt(n_parts)
    if g * g != n_parts:
        raise ValueError(f"n_parts must be a perfect square, got {n_parts}")
    overlap = patch_size - 1
    rows = axis_layout(h, g, overlap)
    cols = axis_layout(w, g, overlap)
    if min(s for _, s in rows) < patch_size or min(s for _, s in cols) < patch_size:
        raise SizeError(
            f"map {h}x{w} too small for {n_parts} parts with patch {patch_size}")
    return [(r0, c0, rh, cw) for r0, rh in rows for c0, cw in cols]


def owned_spans(layout: list[tuple[int, int]]) -> list[tuple[int, int]]:
    """Disjoint ownership ranges per segment, overlaps split at midpoints.

    Used when results from overlapping input parts are stitched back
    together: every position belongs to exactly one part.
    """
    spans = []
    for i, (origin, size) in enumerate(layout):
        if i == 0:
            start = origin
        else:
            prev_end = layout[i - 1][0] + layout[i - 1][1]
            start = origin + (prev_end - origin) // 2
        if i + 1 < len(layout):
            next_origin = layout[i + 1][0]
            stop = next_origin + (origin + size - next_origin) // 2
        else:
            stop = origin + size
        spans.append((start, stop))
    return spans


def split_spatial(fm: np.ndarray, n_parts: int, patch_size: int) -> list[Part]:
    """Cut a (C, H, W) map into overlapping square-grid parts (copies)."""
    _, h, w = fm.shape
    parts = []
    for idx, (r0, c0, ph, pw) in enumerate(grid_layout(h, w, n_parts, patch_size)):
        block = np.ascontiguousarray(fm[:, r0:r0 + ph, c0:c0 + pw])
        parts.append(Part(idx, (r0, c0), block))
    return parts


def split_channels(fm: np.ndarray, n_c: int) -> list[np.ndarray]:
    """Split channels into n_c contiguous equal blocks (views, no copy)."""
    c = fm.shape[0]
    if n_c < 1:
        raise DivisibilityError(f"n_c must be >= 1, got {n_c}")
    if c % n_c != 0:
        raise DivisibilityError(f"{n_c} subvectors do not divide {c} channels")
    step = c // n_c
    return [fm[i * step:(i + 1) * step] for i in range(n_c)]
