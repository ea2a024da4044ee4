"""Texture transfer: field propagation, multi-scale swaps, and synthesis.

Matching runs once at the coarsest feature scale; its field is carried to
the finer scales by pure coordinate scaling (positions and patch centers
multiplied by 2**(3-q), winner identities untouched).  The synthesizer is
deliberately non-neural: it pastes high-resolution reference patches at
the matched locations, overlap-averages them into a texture layer, and
blends that layer over a bicubic x4 base using the match confidence map.
There is no trained generator anywhere in this pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, SizeError
from .features import FeaturePyramid
from .imageio import resample_bilinear, resize_bicubic
from .matching import MatchField

UPSCALE = 4
# matching scale -> output pixels: x4 for the two poolings, x4 for upscaling
FIELD_TO_OUT = UPSCALE * 4


@dataclass(frozen=True)
class SynthesisConfig:
    """Paste-and-blend controls.

    paste_patch: side of the pasted HR patch in output pixels; 0 means
    4 x the matcher's patch size.  tau tempers the per-pixel blend
    (alpha = normalized_weight ** (1/tau)).  base_mix forces a constant
    alpha when set; None derives alpha per pixel from the weight map.
    """

    upscale: int = UPSCALE
    paste_patch: int = 0
    tau: float = 1.0
    base_mix: float | None = None

    def __post_init__(self) -> None:
        if self.upscale != UPSCALE:
            raise ValueError(f"upscale factor is fixed at {UPSCALE}")
        if self.paste_patch < 0:
            raise ValueError(f"paste_patch must be >= 0, got {self.paste_patch}")
        if not self.tau > 0.0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if self.base_mix is not None and not 0.0 <= self.base_mix <= 1.0:
            raise ValueError(f"base_mix must lie in [0, 1], got {self.base_mix}")


@dataclass
class MultiScaleSwap:
    """Swapped feature maps and resampled weights for scales 1..3."""

    maps: tuple[np.ndarray, np.ndarray, np.ndarray]
    weights: tuple[np.ndarray, np.ndarray, np.ndarray]


def propagate_field(field: MatchField, scale_q: int) -> MatchField:
    """Carry the matching-scale field to scale q by coordinate scaling.

    Each matching position becomes an s x s block (s = 2**(3-q)); patch
    centers scale by s with the within-block offset added, so re-fetching
    at scale q lands on the corresponding finer-scale texel.  Winner
    identities and scores are unchanged.
    """
    if scale_q not in (1, 2, 3):
        raise ValueError(f"scale_q must be 1, 2 or 3, got {scale_q}")
    s = 2 ** (3 - scale_q)
    if s == 1:
        return MatchField(field.m.copy(), field.r.copy(), field.patch_row.copy(),
                          field.patch_col.copy(), field.sub.copy(), field.score.copy())
    h, w = field.m.shape

    def up_ident(arr: np.ndarray) -> np.ndarray:
        return np.repeat(np.repeat(arr, s, axis=0), s, axis=1)

    off_r = np.tile(np.arange(s, dtype=np.int64), h)[:, None]
    off_c = np.tile(np.arange(s, dtype=np.int64), w)[None, :]
    return MatchField(
        m=up_ident(field.m),
        r=up_ident(field.r),
        patch_row=up_ident(field.patch_row) * s + off_r,
        patch_col=up_ident(field.patch_col) * s + off_c,
        sub=up_ident(field.sub),
        score=up_ident(field.score),
    )


def assemble_swaps(field: MatchField, input_pyr: FeaturePyramid,
                   refs: list[FeaturePyramid], weights: np.ndarray,
                   patch_size: int = 1) -> MultiScaleSwap:
    """Build swapped feature maps at every scale from the matching field.

    At scale q each matched patch covers an (s*patch_size)^2 block taken
    from the reference's scale-q map; overlapping blocks are averaged.
    Weight maps are bilinear resamples of the matching-scale W.
    """
    h3, w3 = field.m.shape
    if input_pyr.matching.shape[1:] != (h3, w3):
        raise ShapeError(
            f"field {field.m.shape} does not match input scale 3 {input_pyr.matching.shape[1:]}")
    half = patch_size // 2
    maps = []
    wmaps = []
    for q in (1, 2, 3):
        s = 2 ** (3 - q)
        side = s * patch_size
        c_q = refs[0].scales[q - 1].shape[0]
        h_q, w_q = input_pyr.scales[q - 1].shape[1:]
        accum = np.zeros((c_q, h_q, w_q), dtype=np.float64)
        count = np.zeros((h_q, w_q), dtype=np.int64)
        for y in range(h3):
            for x in range(w3):
                m = int(field.m[y, x])
                ref_q = refs[m].scales[q - 1]
                dr = s * (y - half)
                dc = s * (x - half)
                sr = s * (int(field.patch_row[y, x]) - half)
                sc = s * (int(field.patch_col[y, x]) - half)
                lo_r = max(0, -dr, -sr)
                lo_c = max(0, -dc, -sc)
                hi_r = min(side, h_q - dr, ref_q.shape[1] - sr)
                hi_c = min(side, w_q - dc, ref_q.shape[2] - sc)
                if hi_r <= lo_r or hi_c <= lo_c:
                    continue
                accum[:, dr + lo_r:dr + hi_r, dc + lo_c:dc + hi_c] += \
                    ref_q[:, sr + lo_r:sr + hi_r, sc + lo_c:sc + hi_c]
                count[dr + lo_r:dr + hi_r, dc + lo_c:dc + hi_c] += 1
        filled = np.maximum(count, 1)
        maps.append((accum / filled).astype(np.float32))
        wmaps.append(resample_bilinear(weights, h_q, w_q).astype(np.float32))
    return MultiScaleSwap(maps=tuple(maps), weights=tuple(wmaps))


def _alpha_map(weights: np.ndarray, tau: float) -> np.ndarray:
    """Min-max normalize the confidence map, then temper by tau.

    An all-equal map carries no ranking information and collapses to a
    neutral 0.5 everywhere.
    """
    w = np.asarray(weights, dtype=np.float64)
    lo = float(w.min())
    hi = float(w.max())
    if hi <= lo:
        return np.full(w.shape, 0.5)
    norm = (w - lo) / (hi - lo)
    if tau != 1.0:
        norm = norm ** (1.0 / tau)
    return norm


def synthesize(lr: np.ndarray, refs: list[np.ndarray], field: MatchField,
               weights: np.ndarray, cfg: SynthesisConfig) -> np.ndarray:
    """Paste matched HR reference patches over a bicubic x4 base.

    Field coordinates are scaled by 16 (x4 pooling, x4 upscale) into the
    output and reference image frames; pastes are overlap-averaged into a
    texture layer, uncovered pixels fall back to the base, and the final
    image is alpha-blended per pixel and clamped to [0, 255].
    """
    if lr.ndim != 3 or lr.shape[2] != 3:
        raise ShapeError(f"expected (H, W, 3) image, got {lr.shape}")
    h, w = lr.shape[:2]
    out_h, out_w = UPSCALE * h, UPSCALE * w
    base = resize_bicubic(lr, out_w, out_h)
    if cfg.base_mix == 0.0:
        return base

    pp = cfg.paste_patch if cfg.paste_patch > 0 else 4 * 3
    for m, ref in enumerate(refs):
        if ref.shape[0] < pp or ref.shape[1] < pp:
            raise SizeError(f"reference {m} is {ref.shape[:2]}, smaller than paste patch {pp}")

    h3, w3 = field.m.shape
    accum = np.zeros((out_h, out_w, 3), dtype=np.float64)
    count = np.zeros((out_h, out_w), dtype=np.int64)
    s = FIELD_TO_OUT
    center = s // 2
    half_pp = pp // 2
    for y in range(h3):
        for x in range(w3):
            ref = refs[int(field.m[y, x])]
            dr = s * y + center - half_pp
            dc = s * x + center - half_pp
            sr = s * int(field.patch_row[y, x]) + center - half_pp
            sc = s * int(field.patch_col[y, x]) + center - half_pp
            lo_r = max(0, -dr, -sr)
            lo_c = max(0, -dc, -sc)
            hi_r = min(pp, out_h - dr, ref.shape[0] - sr)
            hi_c = min(pp, out_w - dc, ref.shape[1] - sc)
            if hi_r <= lo_r or hi_c <= lo_c:
                continue
            accum[dr + lo_r:dr + hi_r, dc + lo_c:dc + hi_c] += \
                ref[sr + lo_r:sr + hi_r, sc + lo_c:sc + hi_c]
            count[dr + lo_r:dr + hi_r, dc + lo_c:dc + hi_c] += 1

    base_f = base.astype(np.float64)
    covered = count > 0
    texture = base_f.copy()
    texture[covered] = accum[covered] / count[covered, None]

    if cfg.base_mix is not None:
        alpha = np.full((out_h, out_w), float(cfg.base_mix))
    else:
        alpha3 = _alpha_map(weights, cfg.tau)
        alpha = resample_bilinear(alpha3, s * h3, s * w3)[:out_h, :out_w]
    out = alpha[:, :, None] * texture + (1.0 - alpha[:, :, None]) * base_f
    return np.clip(np.rint(out), 0.0, 255.0).astype(np.uint8)
