"""Shared generators for the test suite.

Everything here is deterministic given an explicit seed; tests freeze
their seeds so reruns are bit-for-bit repeatable.
"""

import numpy as np
import pytest


def feature_map(rng, channels, h, w):
    """Non-degenerate float32 features: strictly positive, norms above
    any exclusion threshold, no exact ties in practice."""
    return rng.uniform(0.05, 1.0, size=(channels, h, w)).astype(np.float32)


def natural_image(seed, size=160):
    """Deterministic textured RGB test image.

    Mixes oriented sinusoids, blocky band-limited noise and a periodic
    edge pattern per channel, then normalizes to the full 8-bit range.
    The point is structure at several scales so patch matching has
    something real to find.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    img = np.zeros((size, size, 3))
    for ch in range(3):
        plane = np.zeros((size, size))
        for _ in range(6):
            fx, fy = rng.uniform(0.02, 0.25, 2)
            amp = rng.uniform(10.0, 40.0)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            plane += amp * np.sin(2.0 * np.pi * (fx * xx + fy * yy) + phase)
        blocks = rng.normal(0.0, 1.0, (size // 4, size // 4))
        plane += 18.0 * np.kron(blocks, np.ones((4, 4)))
        plane += 30.0 * ((xx + 2.0 * yy) % 47 < 9)
        img[..., ch] = plane
    img -= img.min()
    img *= 255.0 / max(img.max(), 1e-9)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
