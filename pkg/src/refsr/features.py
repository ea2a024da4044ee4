"""Three-stage convolutional feature pyramid.

The extractor is a fixed (untrained) stand-in for a deep perceptual
network: three stages of 2-D convolution (zero padding, stride 1, no bias
unless external weights supply one) followed by ReLU, with 2x2 average
pooling between stages.  Scale q therefore has spatial size
(H / 2**(q-1), W / 2**(q-1)); inputs are padded up to multiples of 4
(edge replication) before the first stage.

Weights come from one of three deterministic sources:

* ``seeded``   - pseudo-random filters from a seeded generator,
* ``gabor``    - a zero-mean Gabor bank for stage 1 (later stages fall
                 back to a fixed-seed random bank),
* ``external`` - ``stage{1,2,3}.tens`` tensor files on disk, with
                 optional ``stage{q}_bias.tens`` vectors.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, SizeError, ShapeError
from .imageio import load_tensor
from .memledger import MemoryLedger
from .windows import unfold

_SOURCES = ("seeded", "gabor", "external")

# Seed for the non-Gabor stages of the "gabor" source; fixed so the bank
# is the same in every process.
_GABOR_TAIL_SEED = 797


@dataclass(frozen=True)
class ExtractorConfig:
    stage_channels: tuple[int, int, int] = (64, 128, 256)
    kernel_size: int = 3
    weight_source: str = "seeded"
    seed: int = 0
    weights_dir: str | None = None

    def __post_init__(self) -> None:
        if len(self.stage_channels) != 3:
            raise ValueError(f"exactly 3 stages required, got {self.stage_channels}")
        if any(c < 1 for c in self.stage_channels):
            raise ValueError(f"stage channels must be positive: {self.stage_channels}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd and >= 1, got {self.kernel_size}")
        if self.weight_source not in _SOURCES:
            raise ValueError(f"unknown weight source {self.weight_source!r}")
        if self.weight_source == "external" and not self.weights_dir:
            raise ValueError("external weights need weights_dir")


@dataclass
class FeaturePyramid:
    """Per-scale float32 feature maps, coarsest last."""

    scales: tuple[np.ndarray, np.ndarray, np.ndarray]

    def __post_init__(self) -> None:
        if len(self.scales) != 3:
            raise ShapeError(f"pyramid needs 3 scales, got {len(self.scales)}")
        for q, fm in enumerate(self.scales):
            if fm.ndim != 3:
                raise ShapeError(f"scale {q + 1} is not (C, H, W): {fm.shape}")
        h, w = self.scales[0].shape[1:]
        for q, fm in enumerate(self.scales):
            want = (h >> q, w >> q)
            if fm.shape[1:] != want:
                raise ShapeError(
                    f"scale {q + 1} spatial dims {fm.shape[1:]} != {want}")

    @property
    def matching(self) -> np.ndarray:
        """The coarsest-scale map; all patch matching runs here."""
        return self.scales[2]

    def nbytes(self) -> int:
        return sum(int(fm.nbytes) for fm in self.scales)


def _gabor_kernel(k: int, theta: float, wavelength: float, phase: float) -> np.ndarray:
    half = k // 2
    ys, xs = np.mgrid[-half:half + 1, -half:half + 1].astype(np.float64)
    xr = xs * math.cos(theta) + ys * math.sin(theta)
    yr = -xs * math.sin(theta) + ys * math.cos(theta)
    sigma = 0.56 * wavelength
    g = np.exp(-(xr ** 2 + 0.75 * yr ** 2) / (2.0 * sigma ** 2))
    g *= np.cos(2.0 * math.pi * xr / wavelength + phase)
    return g - g.mean()


def _seeded_stage(rng: np.random.Generator, out_ch: int, in_ch: int, k: int) -> np.ndarray:
    scale = math.sqrt(2.0 / (in_ch * k * k))
    return (rng.standard_normal((out_ch, in_ch, k, k)) * scale).astype(np.float32)


def _gabor_stage1(out_ch: int, in_ch: int, k: int) -> np.ndarray:
    w = np.empty((out_ch, in_ch, k, k), dtype=np.float32)
    for i in range(out_ch):
        theta = math.pi * (i % 8) / 8.0
        wavelength = 2.0 + 1.5 * ((i // 8) % 4)
        phase = 0.0 if (i // 32) % 2 == 0 else math.pi / 2.0
        g = (_gabor_kernel(k, theta, wavelength, phase) / in_ch).astype(np.float32)
        w[i] = g[np.newaxis, :, :]
    return w


def _load_external(cfg: ExtractorConfig) -> tuple[list[np.ndarray], list[np.ndarray | None]]:
    weights: list[np.ndarray] = []
    biases: list[np.ndarray | None] = []
    in_ch = 3
    for q, out_ch in enumerate(cfg.stage_channels, start=1):
        path = os.path.join(cfg.weights_dir, f"stage{q}.tens")
        w = load_tensor(path)
        want = (out_ch, in_ch, cfg.kernel_size, cfg.kernel_size)
        if w.shape != want:
            raise FormatError(f"{path}: dims {w.shape} do not match {want}")
        weights.append(w)
        bias_path = os.path.join(cfg.weights_dir, f"stage{q}_bias.tens")
        if os.path.exists(bias_path):
            b = load_tensor(bias_path)
            if b.shape != (out_ch,):
                raise FormatError(f"{bias_path}: dims {b.shape} do not match ({out_ch},)")
            biases.append(b)
        else:
            biases.append(None)
        in_ch = out_ch
    return weights, biases


@dataclass
class Extractor:
    cfg: ExtractorConfig
    weights: list[np.ndarray] = field(repr=False)
    biases: list[np.ndarray | None] = field(repr=False)

    def extract(self, image: np.ndarray, ledger: MemoryLedger | None = None) -> FeaturePyramid:
        """Run the three stages over an (H, W, 3) uint8 image.

        Pure function of (weights, image): identical inputs give
        bit-identical pyramids.
        """
        arr = np.asarray(image)
        if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint8:
            raise FormatError(f"expected (H, W, 3) uint8 image, got {arr.dtype} {arr.shape}")
        h, w = arr.shape[:2]
        if h < 4 or w < 4:
            raise SizeError(f"image {h}x{w} too small, need at least 4x4")

        x = (arr.astype(np.float32) / np.float32(255.0)).transpose(2, 0, 1)
        pad_h = (-h) % 4
        pad_w = (-w) % 4
        if pad_h or pad_w:
            x = np.pad(x, ((0, 0), (0, pad_h), (0, pad_w)), mode="edge")

        scales: list[np.ndarray] = []
        for q in range(3):
            x = _conv2d(x, self.weights[q], self.biases[q])
            np.maximum(x, 0.0, out=x)
            scales.append(x)
            if q < 2:
                x = _avg_pool2(x)
        pyr = FeaturePyramid(tuple(scales))
        if ledger is not None:
            for fm in pyr.scales:
                ledger.register("pyramid", int(fm.nbytes))
        return pyr


def _conv2d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None) -> np.ndarray:
    """Same-size convolution, zero padded, stride 1, fixed summation order."""
    out_ch = weight.shape[0]
    k = weight.shape[2]
    _, h, w = x.shape
    cols = unfold(x, k, dtype=np.float32)              # (H*W, Cin*k*k)
    wmat = weight.reshape(out_ch, -1)                  # (Cout, Cin*k*k)
    out = np.einsum("pd,od->op", cols, wmat, optimize=False)
    out = out.reshape(out_ch, h, w)
    if bias is not None:
        out += bias[:, None, None]
    return out


def _avg_pool2(x: np.ndarray) -> np.ndarray:
    """2x2 average pooling with stride 2, explicit addition order."""
    c, h, w = x.shape
    v = x.reshape(c, h // 2, 2, w // 2, 2)
    return (v[:, :, 0, :, 0] + v[:, :, 0, :, 1]
            + v[:, :, 1, :, 0] + v[:, :, 1, :, 1]) * np.float32(0.25)


def pyramid_from_matching(fm: np.ndarray) -> FeaturePyramid:
    """Wrap a coarsest-scale map in a pyramid whose finer scales are zero.

    Handy for feature-level trials that only exercise the matcher: the
    matcher reads scale 3 exclusively, so the zero fillers never
    influence results, they just satisfy the pyramid shape contract.
    """
    fm = np.asarray(fm, dtype=np.float32)
    if fm.ndim != 3:
        raise ShapeError(f"matching map is not (C, H, W): {fm.shape}")
    c, h, w = fm.shape
    return FeaturePyramid((
        np.zeros((c, 4 * h, 4 * w), dtype=np.float32),
        np.zeros((c, 2 * h, 2 * w), dtype=np.float32),
        fm,
    ))


def build_extractor(cfg: ExtractorConfig) -> Extractor:
    """Materialize filter banks for the configured weight source."""
    k = cfg.kernel_size
    if cfg.weight_source == "external":
        weights, biases = _load_external(cfg)
        return Extractor(cfg, weights, biases)
    if cfg.weight_source == "seeded":
        rng = np.random.default_rng(cfg.seed)
        chain = [3, *cfg.stage_channels]
        weights = [_seeded_stage(rng, chain[q + 1], chain[q], k) for q in range(3)]
        return Extractor(cfg, weights, [None, None, None])
    # gabor: analytic stage 1, fixed-seed tail so the bank is stable
    rng = np.random.default_rng(_GABOR_TAIL_SEED)
    c1, c2, c3 = cfg.stage_channels
    weights = [
        _gabor_stage1(c1, 3, k),
        _seeded_stage(rng, c2, c1, k),
        _seeded_stage(rng, c3, c2, k),
    ]
    return Extractor(cfg, weights, [None, None, None])
