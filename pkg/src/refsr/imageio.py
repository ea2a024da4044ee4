"""Image and tensor I/O plus the resampling primitives used everywhere else.

Images are numpy arrays of shape (H, W, 3), dtype uint8, row-major RGB.
Feature maps and other dense tensors are float32 arrays; they travel between
processes in a small self-describing binary format (see save_tensor).
"""

from __future__ import annotations

import struct

import numpy as np
from PIL import Image as _PILImage, UnidentifiedImageError

from .errors import FormatError, SizeError

TENSOR_MAGIC = b"RSWTENS1"

# BT.601 studio-range luma coefficients; Y lands in [16, 235].
_Y_R = 65.481
_Y_G = 128.553
_Y_B = 24.966


# ---- PNG ----

def read_png(path: str) -> np.ndarray:
    """Decode an 8-bit RGB or RGBA PNG into an (H, W, 3) uint8 array.

    Alpha is discarded.  Anything that is not an 8-bit RGB/RGBA PNG
    raises FormatError; missing or unreadable files raise OSError.
    """
    try:
        with _PILImage.open(path) as im:
            if im.format != "PNG":
                raise FormatError(f"{path}: not a PNG file (format={im.format})")
            if im.mode not in ("RGB", "RGBA"):
                raise FormatError(f"{path}: unsupported PNG mode {im.mode}, need RGB or RGBA")
            im.load()
            arr = np.asarray(im, dtype=np.uint8)
    except UnidentifiedImageError as exc:
        raise FormatError(f"{path}: not a decodable image: {exc}") from exc
    except (SyntaxError, ValueError) as exc:
        # PIL signals truncated/corrupt streams with either of these.
        raise FormatError(f"{path}: corrupt PNG stream: {exc}") from exc
    if arr.ndim != 3:
        raise FormatError(f"{path}: decoded to unexpected shape {arr.shape}")
    if arr.shape[2] == 4:
        arr = arr[:, :, :3]
    return np.ascontiguousarray(arr)


def write_png(path: str, image: np.ndarray) -> None:
    """Encode an (H, W, 3) uint8 array as an RGB PNG; lossless round trip."""
    image = _require_image(image)
    _PILImage.fromarray(image, mode="RGB").save(path, format="PNG")


def _require_image(image: np.ndarray) -> np.ndarray:
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint8:
        raise FormatError(f"expected (H, W, 3) uint8 image, got {arr.dtype} {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise SizeError(f"empty image {arr.shape}")
    return arr


# ---- tensor files ----

def save_tensor(path: str, tensor: np.ndarray) -> None:
    """Write a little-endian binary tensor: magic, rank, dims, f32 payload.

    Layout: 8 magic bytes, rank as u32, then rank u32 dims, then the
    row-major float32 payload.  Rank must be 1..4.
    """
    arr = np.asarray(tensor)
    if not 1 <= arr.ndim <= 4:
        raise FormatError(f"tensor rank {arr.ndim} out of range 1..4")
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    with open(path, "wb") as fh:
        fh.write(TENSOR_MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.astype("<f4", copy=False).tobytes())


def load_tensor(path: str) -> np.ndarray:
    """Read a tensor written by save_tensor; FormatError on any layout defect."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < len(TENSOR_MAGIC) + 4:
        raise FormatError(f"{path}: truncated header")
    if data[: len(TENSOR_MAGIC)] != TENSOR_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:8]!r}")
    (rank,) = struct.unpack_from("<I", data, 8)
    if not 1 <= rank <= 4:
        raise FormatError(f"{path}: rank {rank} out of range 1..4")
    dims_end = 12 + 4 * rank
    if len(data) < dims_end:
        raise FormatError(f"{path}: truncated dims")
    dims = struct.unpack_from(f"<{rank}I", data, 12)
    if any(d == 0 for d in dims):
        raise FormatError(f"{path}: zero-sized dim in {dims}")
    count = int(np.prod(dims))
    expected = dims_end + 4 * count
    if len(data) != expected:
        raise FormatError(f"{path}: payload is {len(data) - dims_end} bytes, expected {4 * count}")
    flat = np.frombuffer(data, dtype="<f4", count=count, offset=dims_end)
    return flat.reshape(dims).astype(np.float32)


# ---- colour ----

def rgb_to_y(image: np.ndarray) -> np.ndarray:
    """BT.601 studio-range luma: Y = 16 + (65.481 R + 128.553 G + 24.966 B)/255.

    Returns a (1, H, W) float32 map with values in [16, 235].
    """
    image = _require_image(image)
    rgb = image.astype(np.float64)
    y = 16.0 + (_Y_R * rgb[:, :, 0] + _Y_G * rgb[:, :, 1] + _Y_B * rgb[:, :, 2]) / 255.0
    return y.astype(np.float32)[np.newaxis, :, :]


# ---- resampling ----

def _catmull_rom(x: np.ndarray) -> np.ndarray:
    """Cubic convolution kernel with a = -0.5 (Catmull-Rom)."""
    ax = np.abs(x)
    ax2 = ax * ax
    ax3 = ax2 * ax
    near = 1.5 * ax3 - 2.5 * ax2 + 1.0
    far = -0.5 * ax3 + 2.5 * ax2 - 4.0 * ax + 2.0
    out = np.where(ax <= 1.0, near, np.where(ax < 2.0, far, 0.0))
    return out


def _cubic_axis_weights(src: int, dst: int) -> tuple[np.ndarray, np.ndarray]:
    """4-tap sample indices (dst, 4) and kernel weights for one axis.

    Output pixel centers are aligned with input pixel centers
    (coordinate = (i + 0.5) * src/dst - 0.5); taps outside the image are
    clamped to the edge.
    """
    pos = (np.arange(dst, dtype=np.float64) + 0.5) * (src / dst) - 0.5
    base = np.floor(pos).astype(np.int64)
    frac = pos - base
    offsets = np.arange(-1, 3)
    idx = base[:, None] + offsets[None, :]
    weights = _catmull_rom(frac[:, None] - offsets[None, :].astype(np.float64))
    idx = np.clip(idx, 0, src - 1)
    return idx, weights


def _resample_axis_cubic(arr: np.ndarray, dst: int) -> np.ndarray:
    """Cubic resample along axis 0 of a float64 array."""
    idx, weights = _cubic_axis_weights(arr.shape[0], dst)
    gathered = arr[idx]  # (dst, 4, ...)
    w = weights.reshape(weights.shape + (1,) * (arr.ndim - 1))
    return (gathered * w).sum(axis=1)


def resize_bicubic(image: np.ndarray, new_w: int, new_h: int) -> np.ndarray:
    """Resize with the Catmull-Rom cubic kernel, channels independent.

    Sampling is edge-clamped, intermediate math is float64, and only the
    final result is rounded to the nearest 8-bit value (ties to even).
    """
    image = _require_image(image)
    if new_w < 1 or new_h < 1:
        raise SizeError(f"target size {new_w}x{new_h} must be at least 1x1")
    work = image.astype(np.float64)
    work = _resample_axis_cubic(work, new_h)
    work = _resample_axis_cubic(work.transpose(1, 0, 2), new_w).transpose(1, 0, 2)
    return np.clip(np.rint(work), 0.0, 255.0).astype(np.uint8)


def resample_bilinear(plane: np.ndarray, new_h: int, new_w: int) -> np.ndarray:
    """Bilinear resample of a 2-D float map, same center-aligned convention.

    Every output value is a convex combination of inputs, so the result
    never leaves [min(plane), max(plane)].
    """
    plane = np.asarray(plane, dtype=np.float64)
    if plane.ndim != 2:
        raise FormatError(f"expected 2-D map, got shape {plane.shape}")
    if new_h < 1 or new_w < 1:
        raise SizeError(f"target size {new_h}x{new_w} must be at least 1x1")

    def axis_terms(src: int, dst: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        pos = (np.arange(dst, dtype=np.float64) + 0.5) * (src / dst) - 0.5
        base = np.floor(pos).astype(np.int64)
        frac = pos - base
        lo = np.clip(base, 0, src - 1)
        hi = np.clip(base + 1, 0, src - 1)
        return lo, hi, frac

    r_lo, r_hi, r_t = axis_terms(plane.shape[0], new_h)
    c_lo, c_hi, c_t = axis_terms(plane.shape[1], new_w)
    top = plane[r_lo][:, c_lo] * (1.0 - c_t) + plane[r_lo][:, c_hi] * c_t
    bot = plane[r_hi][:, c_lo] * (1.0 - c_t) + plane[r_hi][:, c_hi] * c_t
    return top * (1.0 - r_t)[:, None] + bot * r_t[:, None]
