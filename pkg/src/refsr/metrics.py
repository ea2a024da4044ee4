"""Fidelity metrics and texture losses.

PSNR and SSIM are computed on the luma channel only (BT.601 studio-range
Y), with the PSNR peak fixed at 255 regardless of the studio range.  The
texture loss compares Gram matrices of weighted feature maps; its
gradient differentiates the squared-Frobenius variant, while the metric
itself reports the plain norm.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ShapeError, SizeError
from .features import FeaturePyramid
from .imageio import rgb_to_y

_PSNR_PEAK = 255.0
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03
_SSIM_L = 255.0
_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5


def _as_plane(y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 3 and y.shape[0] == 1:
        y = y[0]
    if y.ndim != 2:
        raise ShapeError(f"expected a single-channel map, got shape {y.shape}")
    return y


def psnr(y_a: np.ndarray, y_b: np.ndarray) -> float:
    """20 log10(255) - 10 log10(MSE) over luma maps; inf when identical."""
    a = _as_plane(y_a)
    b = _as_plane(y_b)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 20.0 * math.log10(_PSNR_PEAK) - 10.0 * math.log10(mse)


def psnr_y(img_a: np.ndarray, img_b: np.ndarray) -> float:
    return psnr(rgb_to_y(img_a), rgb_to_y(img_b))


def _gaussian_window(n: int, sigma: float) -> np.ndarray:
    xs = np.arange(n, dtype=np.float64) - (n - 1) / 2.0
    g = np.exp(-(xs ** 2) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(plane: np.ndarray, win: np.ndarray) -> np.ndarray:
    """Separable valid-mode filtering with a 1-D window along both axes."""
    n = len(win)
    rows = np.lib.stride_tricks.sliding_window_view(plane, n, axis=1)
    tmp = np.einsum("ijk,k->ij", rows, win, optimize=False)
    cols = np.lib.stride_tricks.sliding_window_view(tmp, n, axis=0)
    return np.einsum("ijk,k->ij", cols, win, optimize=False)


def ssim(y_a: np.ndarray, y_b: np.ndarray) -> float:
    """Mean structural similarity over an 11x11 Gaussian window (sigma 1.5).

    Identical inputs give exactly 1.0: every local statistic coincides,
    so each window's ratio is computed as y/y.
    """
    a = _as_plane(y_a)
    b = _as_plane(y_b)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    if min(a.shape) < _SSIM_WINDOW:
        raise SizeError(f"map {a.shape} smaller than the {_SSIM_WINDOW}x{_SSIM_WINDOW} window")

    win = _gaussian_window(_SSIM_WINDOW, _SSIM_SIGMA)
    mu_a = _filter_valid(a, win)
    mu_b = _filter_valid(b, win)
    ex_aa = _filter_valid(a * a, win)
    ex_bb = _filter_valid(b * b, win)
    ex_ab = _filter_valid(a * b, win)
    var_a = ex_aa - mu_a * mu_a
    var_b = ex_bb - mu_b * mu_b
    cov = ex_ab - mu_a * mu_b

    c1 = (_SSIM_K1 * _SSIM_L) ** 2
    c2 = (_SSIM_K2 * _SSIM_L) ** 2
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim_y(img_a: np.ndarray, img_b: np.ndarray) -> float:
    return ssim(rgb_to_y(img_a), rgb_to_y(img_b))


def gram(fm: np.ndarray) -> np.ndarray:
    """G = F F^T / (C*H*W) in float64, exactly symmetric by mirroring."""
    fm = np.asarray(fm, dtype=np.float64)
    if fm.ndim != 3:
        raise ShapeError(f"expected (C, H, W), got {fm.shape}")
    c, h, w = fm.shape
    flat = fm.reshape(c, h * w)
    m = np.einsum("id,jd->ij", flat, flat, optimize=False) / float(c * h * w)
    return np.tril(m) + np.tril(m, -1).T


def _weighted(fm: np.ndarray, weights: np.ndarray) -> np.ndarray:
    fm = np.asarray(fm, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != fm.shape[1:]:
        raise ShapeError(f"weight map {weights.shape} does not match features {fm.shape}")
    return fm * weights[None, :, :]


def texture_loss(sr_feats, swapped, weights, squared: bool = False) -> float:
    """Sum over layers of the Frobenius distance between weighted Grams.

    With ``squared`` the squared norm is summed instead; that variant is
    what texture_loss_grad differentiates.
    """
    if not len(sr_feats) == len(swapped) == len(weights):
        raise ShapeError("layer lists must have equal length")
    total = 0.0
    for fm, om, wm in zip(sr_feats, swapped, weights):
        delta = gram(_weighted(fm, wm)) - gram(_weighted(om, wm))
        sq = float(np.sum(delta * delta))
        total += sq if squared else math.sqrt(sq)
    return total


def texture_loss_grad(sr_feats, swapped, weights) -> list[np.ndarray]:
    """Gradient of the squared-Frobenius texture loss w.r.t. each sr layer.

    d/dF ||G(F.W) - G(O.W)||_F^2 = 4/(C*H*W) * (dG @ (F.W)) . W
    where . is the spatial broadcast product with the weight map.
    """
    if not len(sr_feats) == len(swapped) == len(weights):
        raise ShapeError("layer lists must have equal length")
    grads = []
    for fm, om, wm in zip(sr_feats, swapped, weights):
        a = _weighted(fm, wm)
        delta = gram(a) - gram(_weighted(om, wm))
        c, h, w = a.shape
        prod = np.einsum("ij,jd->id", delta, a.reshape(c, h * w), optimize=False)
        grad = (4.0 / float(c * h * w)) * prod.reshape(c, h, w) * \
            np.asarray(wm, dtype=np.float64)[None, :, :]
        grads.append(grad)
    return grads


def l1_loss(img_a: np.ndarray, img_b: np.ndarray) -> float:
    """Mean absolute pixel difference between two images."""
    a = np.asarray(img_a, dtype=np.float64)
    b = np.asarray(img_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.mean(np.abs(a - b)))


def perceptual_loss(pyr_a: FeaturePyramid, pyr_b: FeaturePyramid) -> float:
    """Sum over scales of the mean squared feature difference."""
    total = 0.0
    for fa, fb in zip(pyr_a.scales, pyr_b.scales):
        if fa.shape != fb.shape:
            raise ShapeError(f"scale shape mismatch {fa.shape} vs {fb.shape}")
        diff = fa.astype(np.float64) - fb.astype(np.float64)
        total += float(np.mean(diff * diff))
    return total
