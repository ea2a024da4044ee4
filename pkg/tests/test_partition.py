"""Partition geometry: grids, overlap coverage, channel splits."""

import numpy as np
import pytest

from refsr import DivisibilityError, PartitionSpec, SizeError, auto_nc
from refsr.partition import (
    axis_layout,
    grid_layout,
    owned_spans,
    split_channels,
    split_spatial,
)


def test_spec_validation():
    PartitionSpec(n_m=2, n_i=4, n_r=9, n_c=3)
    with pytest.raises(ValueError):
        PartitionSpec(n_r=3)
    with pytest.raises(ValueError):
        PartitionSpec(n_i=2)
    with pytest.raises(ValueError):
        PartitionSpec(n_l=2)
    with pytest.raises(ValueError):
        PartitionSpec(n_m=0)


def test_auto_nc_goldens():
    # 4*256/448 = 2.2857 -> nearest divisor of 256 is 2
    assert auto_nc((64, 128, 256)) == 2
    # 4*3/6 = 2 is equidistant from divisors 1 and 3 -> smaller wins
    assert auto_nc((1, 2, 3)) == 1
    # 4*64/128 = 2 exactly
    assert auto_nc((32, 32, 64)) == 2
    # 4*8/24 = 1.333 -> divisor 1
    assert auto_nc((8, 8, 8)) == 1
    result = auto_nc((48, 96, 192))
    assert 192 % result == 0


def test_axis_layout_distributes_remainder():
    assert axis_layout(16, 2, 2) == [(0, 9), (7, 9)]
    assert axis_layout(16, 4, 2) == [(0, 6), (4, 6), (8, 5), (11, 5)]
    # segments always end exactly at length
    for length, g, ov in [(16, 4, 2), (17, 3, 4), (9, 2, 0)]:
        layout = axis_layout(length, g, ov)
        assert layout[0][0] == 0
        assert layout[-1][0] + layout[-1][1] == length
        for (o1, s1), (o2, _) in zip(layout, layout[1:]):
            assert o1 + s1 - o2 == ov


def test_grid_layout_golden_8x8():
    parts = grid_layout(8, 8, 4, 3)
    assert parts == [(0, 0, 5, 5), (0, 3, 5, 5), (3, 0, 5, 5), (3, 3, 5, 5)]


def test_grid_layout_too_small():
    with pytest.raises(SizeError):
        grid_layout(2, 2, 4, 3)


def test_every_patch_covered_by_some_part(rng):
    """With overlap patch_size-1, every valid patch of the full map lies
    wholly inside at least one part."""
    for _ in range(30):
        h = int(rng.integers(6, 25))
        w = int(rng.integers(6, 25))
        ps = int(rng.choice([1, 3, 5]))
        n = int(rng.choice([1, 4, 9]))
        try:
            parts = grid_layout(h, w, n, ps)
        except SizeError:
            continue
        for top_r in range(h - ps + 1):
            for top_c in range(w - ps + 1):
                inside = any(
                    r0 <= top_r and top_r + ps <= r0 + rh
                    and c0 <= top_c and top_c + ps <= c0 + cw
                    for r0, c0, rh, cw in parts)
                assert inside, (h, w, ps, n, top_r, top_c)


def test_owned_spans_partition_axis():
    layout = [(0, 5), (3, 5)]
    assert owned_spans(layout) == [(0, 4), (4, 8)]
    layout = axis_layout(16, 4, 2)
    spans = owned_spans(layout)
    assert spans[0][0] == 0
    assert spans[-1][1] == 16
    for (a0, a1), (b0, b1) in zip(spans, spans[1:]):
        assert a1 == b0
        assert a0 < a1


def test_split_spatial_reproduces_slices(rng):
    fm = rng.standard_normal((3, 10, 12)).astype(np.float32)
    parts = split_spatial(fm, 4, 3)
    assert len(parts) == 4
    layout = grid_layout(10, 12, 4, 3)
    for part, (r0, c0, rh, cw) in zip(parts, layout):
        assert part.origin == (r0, c0)
        assert part.feature.flags["C_CONTIGUOUS"]
        assert (part.feature == fm[:, r0:r0 + rh, c0:c0 + cw]).all()


def test_split_channels_views():
    fm = np.arange(24, dtype=np.float32).reshape(6, 2, 2)
    subs = split_channels(fm, 3)
    assert len(subs) == 3
    assert (subs[1] == fm[2:4]).all()
    assert np.shares_memory(subs[0], fm)
    with pytest.raises(DivisibilityError):
        split_channels(fm, 4)
    with pytest.raises(DivisibilityError):
        split_channels(fm, 0)
