"""Image model and the preprocessing stages shared by every extractor.

Angles follow the pixel frame: x grows along columns, y grows down rows, and
an orientation ``a`` is the direction ``(cos a, sin a)`` in that frame. Ridges
are dark (low intensity) on bright valleys.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np
from scipy import ndimage

from .errors import ConstantImageWarning, ParseError

DEFAULT_DPI = 1200.0


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Grayscale raster, intensities in [0, 1], shape ``(height, width)``."""

    pixels: np.ndarray
    dpi: float = DEFAULT_DPI

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2:
            raise ValueError(f"expected a 2-D array, got shape {px.shape}")
        h, w = px.shape
        if w < 32 or h < 32:
            raise ValueError(f"image must be at least 32x32, got {w}x{h}")
        if not self.dpi > 0:
            raise ValueError(f"dpi must be positive, got {self.dpi}")
        if not np.all(np.isfinite(px)) or px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("intensities must lie in [0, 1]")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape

    def with_pixels(self, pixels: np.ndarray) -> GrayImage:
        return GrayImage(pixels, self.dpi)

    def __eq__(self, other):
        if not isinstance(other, GrayImage):
            return NotImplemented
        return self.dpi == other.dpi and np.array_equal(self.pixels, other.pixels)


@dataclass(eq=False)
class BlockMap:
    """Per-block orientation, coherence, ridge frequency and foreground mask."""

    block_size: int
    orientation: np.ndarray
    coherence: np.ndarray
    frequency: np.ndarray
    foreground: np.ndarray
    image_shape: tuple[int, int] = field(default=(0, 0))

    @property
    def rows(self) -> int:
        return self.orientation.shape[0]

    @property
    def cols(self) -> int:
        return self.orientation.shape[1]

    def pixel_foreground(self) -> np.ndarray:
        h, w = self.image_shape
        bs = self.block_size
        full = np.repeat(np.repeat(self.foreground, bs, axis=0), bs, axis=1)
        return full[:h, :w]

    def pixel_orientation(self) -> np.ndarray:
        """Orientation interpolated to pixel resolution (doubled-angle bilinear)."""
        c2 = np.cos(2 * self.orientation).astype(np.float32)
        s2 = np.sin(2 * self.orientation).astype(np.float32)
        return _upsample_angle(c2, s2, self.block_size, self.image_shape)

    def filled_frequency(self) -> np.ndarray:
        """Frequency with failed foreground blocks filled from their neighbours."""
        freq = self.frequency.copy()
        valid = freq > 0
        holes = self.foreground & ~valid
        if not holes.any():
            return freq
        fallback = float(np.median(freq[valid])) if valid.any() else 0.0
        for r, c in zip(*np.nonzero(holes)):
            win = freq[max(r - 1, 0):r + 2, max(c - 1, 0):c + 2]
            ok = win[win > 0]
            freq[r, c] = ok.mean() if ok.size else fallback
        return freq


def _upsample_angle(c2, s2, bs, shape):
    h, w = shape
    rows, cols = c2.shape
    size = (cols * bs, rows * bs)
    cu = cv2.resize(c2, size, interpolation=cv2.INTER_LINEAR)[:h, :w]
    su = cv2.resize(s2, size, interpolation=cv2.INTER_LINEAR)[:h, :w]
    return np.mod(0.5 * np.arctan2(su, cu), np.pi).astype(np.float64)


def default_block_size(dpi: float) -> int:
    return max(8, int(round(16 * dpi / 600)))


def normalize(img: GrayImage, target_mean: float = 0.5, target_var: float = 0.04,
              max_iter: int = 100) -> GrayImage:
    """Affinely map intensities to a target global mean and variance.

    Intensities that would leave [0, 1] are clamped and the map is re-solved on
    the result until the statistics settle, so a normalized image is a fixed
    point of this function.
    """
    px = img.pixels
    if px.var() == 0:
        warnings.warn("constant image cannot be normalized", ConstantImageWarning, stacklevel=2)
        return img.with_pixels(np.full(img.shape, float(np.clip(target_mean, 0, 1))))
    out = px.copy()
    sd = math.sqrt(target_var)
    for _ in range(max_iter):
        m, v = out.mean(), out.var()
        if abs(m - target_mean) < 1e-12 and abs(v - target_var) < 1e-12:
            break
        if v == 0:
            break
        out = np.clip(target_mean + (out - m) * (sd / math.sqrt(v)), 0.0, 1.0)
    return img.with_pixels(out)


def _block_sums(a: np.ndarray, bs: int, rows: int, cols: int) -> np.ndarray:
    h, w = a.shape
    padded = np.zeros((rows * bs, cols * bs), dtype=np.float64)
    padded[:h, :w] = a
    return padded.reshape(rows, bs, cols, bs).sum(axis=(1, 3))


def _ridge_period(px, cx, cy, normal_angle, bs, min_period, max_period):
    length = 2 * bs
    u = np.arange(length) - (length - 1) / 2
    v = np.arange(bs) - (bs - 1) / 2
    nx, ny = math.cos(normal_angle), math.sin(normal_angle)
    xs = cx + u[:, None] * nx - v[None, :] * ny
    ys = cy + u[:, None] * ny + v[None, :] * nx
    sig = ndimage.map_coordinates(px, [ys, xs], order=1, mode="reflect").mean(axis=1)
    sig = sig - sig.mean()
    energy = float(np.dot(sig, sig))
    if energy < 1e-12:
        return 0.0
    lo = max(2, int(math.floor(min_period)))
    hi = min(length - 8, int(math.ceil(max_period)) + 1)
    if hi <= lo + 1:
        return 0.0
    ac = np.array([np.dot(sig[:length - k], sig[k:]) / (length - k) for k in range(0, hi + 1)])
    ac = ac / ac[0]
    best = None
    for k in range(lo, hi):
        if ac[k] >= ac[k - 1] and ac[k] >= ac[k + 1] and ac[k] > 0.2:
            best = k
            break
    if best is None:
        return 0.0
    a, b, c = ac[best - 1], ac[best], ac[best + 1]
    denom = a - 2 * b + c
    offset = 0.5 * (a - c) / denom if denom < 0 else 0.0
    period = best + offset
    if not (min_period <= period <= max_period):
        return 0.0
    return period


def estimate_block_map(img: GrayImage, block_size: int | None = None) -> BlockMap:
    """Orientation, coherence, ridge frequency and segmentation per block."""
    bs = block_size or default_block_size(img.dpi)
    if bs < 8 or bs > min(img.width, img.height):
        raise ValueError(f"block_size {bs} out of range for {img.width}x{img.height}")
    px = img.pixels
    h, w = px.shape
    rows, cols = -(-h // bs), -(-w // bs)

    gx = cv2.Sobel(px, cv2.CV_64F, 1, 0, ksize=3, borderType=cv2.BORDER_REFLECT)
    gy = cv2.Sobel(px, cv2.CV_64F, 0, 1, ksize=3, borderType=cv2.BORDER_REFLECT)
    vx = _block_sums(gx * gx - gy * gy, bs, rows, cols)
    vy = _block_sums(2 * gx * gy, bs, rows, cols)
    mag = _block_sums(gx * gx + gy * gy, bs, rows, cols)

    counts = _block_sums(np.ones_like(px), bs, rows, cols)
    mean = _block_sums(px, bs, rows, cols) / counts
    var = np.maximum(_block_sums(px * px, bs, rows, cols) / counts - mean ** 2, 0.0)

    ref = float(np.percentile(var, 90))
    fg = (var > 1e-8) & (var >= 0.3 * ref)
    if fg.any():
        padded = np.pad(fg, 1, mode="edge")
        fg = ndimage.binary_closing(padded, structure=np.ones((3, 3), bool))[1:-1, 1:-1]
        fg &= var > 1e-8

    coherence = np.where(mag > 1e-12, np.hypot(vx, vy) / np.maximum(mag, 1e-12), 0.0)
    coherence = np.where(fg, np.clip(coherence, 0.0, 1.0), 0.0)

    # one 3x3 pass of doubled-angle vector averaging over foreground blocks
    wvx, wvy = np.where(fg, vx, 0.0), np.where(fg, vy, 0.0)
    kernel = np.ones((3, 3))
    svx = ndimage.convolve(wvx, kernel, mode="constant")
    svy = ndimage.convolve(wvy, kernel, mode="constant")
    svx, svy = np.where(fg, svx, vx), np.where(fg, svy, vy)
    orientation = np.mod(0.5 * np.arctan2(svy, svx) + np.pi / 2, np.pi)

    scale = img.dpi / 1200.0
    min_p, max_p = 4.0 * scale, 40.0 * scale
    frequency = np.zeros((rows, cols))
    for r in range(rows):
        for c in range(cols):
            if not fg[r, c]:
                continue
            cy = min(r * bs + bs / 2 - 0.5, h - 1)
            cx = min(c * bs + bs / 2 - 0.5, w - 1)
            period = _ridge_period(px, cx, cy, orientation[r, c] + np.pi / 2, bs, min_p, max_p)
            frequency[r, c] = 1.0 / period if period > 0 else 0.0

    return BlockMap(bs, orientation, coherence, frequency, fg, (h, w))


def gabor_kernel(period: float, angle: float, kx: float = 0.5, ky: float = 0.6) -> np.ndarray:
    """Even-symmetric, zero-mean Gabor kernel tuned to ridges flowing along ``angle``."""
    sx, sy = kx * period, ky * period
    half = int(math.ceil(3 * max(sx, sy)))
    yy, xx = np.mgrid[-half:half + 1, -half:half + 1].astype(np.float64)
    # across: coordinate along the ridge normal
    across = -xx * math.sin(angle) + yy * math.cos(angle)
    along = xx * math.cos(angle) + yy * math.sin(angle)
    env = np.exp(-0.5 * (across ** 2 / sx ** 2 + along ** 2 / sy ** 2))
    k = env * np.cos(2 * math.pi * across / period)
    k -= env * (k.sum() / env.sum())
    return k


def enhance(img: GrayImage, bmap: BlockMap, n_orient: int = 16) -> GrayImage:
    """Contextual Gabor filtering driven by the block orientation and frequency."""
    h, w = img.shape
    fg = bmap.pixel_foreground()
    if not fg.any():
        return img.with_pixels(np.full((h, w), 0.5))
    freq = bmap.filled_frequency()
    valid = freq[bmap.foreground]
    if not (valid > 0).any():
        freq = np.where(bmap.foreground, 1.0 / (10.0 * img.dpi / 1200.0), 0.0)
    period_blocks = np.where(freq > 0, 1.0 / np.maximum(freq, 1e-9), 0.0)
    bs = bmap.block_size
    period_px = np.repeat(np.repeat(period_blocks, bs, 0), bs, 1)[:h, :w]
    theta = bmap.pixel_orientation()

    o_idx = np.round(theta / (np.pi / n_orient)).astype(int) % n_orient
    # periods quantized on a ~6% geometric grid
    p_idx = np.round(np.log(np.maximum(period_px, 1.0)) / math.log(1.06)).astype(int)

    src = (img.pixels - img.pixels[fg].mean()).astype(np.float32)
    resp = np.zeros((h, w))
    for oi, pi in set(zip(o_idx[fg].tolist(), p_idx[fg].tolist())):
        sel = fg & (o_idx == oi) & (p_idx == pi)
        k = gabor_kernel(1.06 ** pi, oi * np.pi / n_orient).astype(np.float32)
        out = cv2.filter2D(src, cv2.CV_32F, k, borderType=cv2.BORDER_REFLECT)
        resp[sel] = out[sel]
    sd = resp[fg].std()
    enhanced = np.full((h, w), 0.5)
    if sd > 0:
        enhanced[fg] = 0.5 + 0.5 * np.tanh(resp[fg] / (1.5 * sd))
    return img.with_pixels(enhanced)


def binarize(img: GrayImage, bmap: BlockMap) -> GrayImage:
    """Ridge mask (1 = ridge) from an enhanced image."""
    fg = bmap.pixel_foreground()
    return img.with_pixels(((img.pixels < 0.5) & fg).astype(np.float64))


def read_pgm(path, dpi: float = DEFAULT_DPI) -> GrayImage:
    """Read an 8-bit binary portable graymap (``P5``)."""
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ParseError(f"{path}: truncated PGM header")
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise ParseError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise ParseError(f"{path}: bad PGM header") from exc
    if not 0 < maxval < 256:
        raise ParseError(f"{path}: only 8-bit PGM is supported (maxval {maxval})")
    pos += 1
    raster = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos) if len(data) - pos >= w * h else None
    if raster is None:
        raise ParseError(f"{path}: truncated PGM raster")
    try:
        return GrayImage(raster.reshape(h, w) / float(maxval), dpi)
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from exc


def write_pgm(path, img: GrayImage) -> None:
    raster = np.round(img.pixels * 255).astype(np.uint8)
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + raster.tobytes())
