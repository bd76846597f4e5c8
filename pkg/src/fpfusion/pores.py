"""Pore extraction (isotropic and adaptive filters) and bounding-box pore matching."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import cv2
import numpy as np
from scipy import ndimage

from .errors import NoCandidate, ParseError
from .imgproc import BlockMap, GrayImage, binarize, enhance, normalize
from .ridge_matcher import AlignmentParams, MatchScore, register, ridge_scores
from .ridges import RidgeFeature

ISOTROPIC, ADAPTIVE = "isotropic", "adaptive"
PORE_METHODS = (ISOTROPIC, ADAPTIVE)
BOX_HALVES = (6, 8, 10)

ISO_SIGMA = 2.5
ISO_THRESHOLD = 0.06
ADAPT_C = 0.25
ADAPT_K = 2.0
ADAPT_FLOOR = 0.06
NMS_RADIUS = 5.0
EDGE_MARGIN = 8.0
REFINE_RADIUS = 12
REFINE_ANGLES = (-2.0, -1.0, 0.0, 1.0, 2.0)


class Pore(NamedTuple):
    x: float
    y: float
    strength: float


@dataclass(eq=False)
class PoreSet:
    pores: list[Pore] = field(default_factory=list)
    method: str = ISOTROPIC
    image_size: tuple[int, int] = (0, 0)

    def __post_init__(self):
        if self.method not in PORE_METHODS:
            raise ValueError(f"unknown pore method {self.method!r}")

    def __len__(self):
        return len(self.pores)

    def __eq__(self, other):
        if not isinstance(other, PoreSet):
            return NotImplemented
        return (self.method == other.method and tuple(self.image_size) == tuple(other.image_size)
                and self.pores == other.pores)

    @property
    def xy(self) -> np.ndarray:
        return np.array([(p.x, p.y) for p in self.pores], dtype=np.float64).reshape(-1, 2)


def ridge_mask(img: GrayImage, bmap: BlockMap) -> np.ndarray:
    """Binarized ridge pixels of ``img`` under ``bmap``."""
    return binarize(enhance(normalize(img), bmap), bmap).pixels > 0.5


def _suppress(resp: np.ndarray, accept: np.ndarray, radius: float) -> list[Pore]:
    """Greedy non-maximum suppression over 3x3 local maxima where ``accept`` holds."""
    peaks = accept & (resp >= ndimage.maximum_filter(resp, size=3, mode="nearest"))
    ys, xs = np.nonzero(peaks)
    if len(ys) == 0:
        return []
    vals = resp[ys, xs]
    order = np.lexsort((xs, ys, -vals))
    kept: list[tuple[int, int, float]] = []
    grid: dict[tuple[int, int], list[int]] = {}
    cell = max(radius, 1.0)
    r2 = radius * radius
    for k in order:
        x, y = int(xs[k]), int(ys[k])
        gx, gy = int(x // cell), int(y // cell)
        clash = False
        for ox in (-1, 0, 1):
            for oy in (-1, 0, 1):
                for idx in grid.get((gx + ox, gy + oy), ()):
                    px, py, _ = kept[idx]
                    if (px - x) ** 2 + (py - y) ** 2 < r2:
                        clash = True
                        break
                if clash:
                    break
            if clash:
                break
        if clash:
            continue
        grid.setdefault((gx, gy), []).append(len(kept))
        kept.append((x, y, float(vals[k])))
    kept.sort(key=lambda p: (p[1], p[0]))
    return [Pore(float(x), float(y), s) for x, y, s in kept]


def _prepared(img: GrayImage, bmap: BlockMap, ridges: np.ndarray | None):
    """Normalized pixels and the ridge pixels far enough from any edge to host a pore."""
    fg = bmap.pixel_foreground()
    if not fg.any():
        return None, None
    norm = normalize(img)
    if ridges is None:
        ridges = binarize(enhance(norm, bmap), bmap).pixels > 0.5
    depth = ndimage.distance_transform_edt(np.pad(fg, 1))[1:-1, 1:-1]
    inner = depth > EDGE_MARGIN * img.dpi / 1200.0
    return norm.pixels, np.asarray(ridges, dtype=bool) & inner


def _line_kernel(sigma: float, angle: float) -> np.ndarray:
    half = int(math.ceil(3 * sigma))
    k = np.zeros((2 * half + 1, 2 * half + 1), dtype=np.float32)
    ca, sa = math.cos(angle), math.sin(angle)
    for t in np.arange(-half, half + 0.25, 0.5):
        x, y = half + t * ca, half + t * sa
        x0, y0 = int(math.floor(x)), int(math.floor(y))
        fx, fy = x - x0, y - y0
        g = math.exp(-0.5 * t * t / (sigma * sigma))
        for dx, dy, wt in ((0, 0, (1 - fx) * (1 - fy)), (1, 0, fx * (1 - fy)),
                           (0, 1, (1 - fx) * fy), (1, 1, fx * fy)):
            if x0 + dx < k.shape[1] and y0 + dy < k.shape[0]:
                k[y0 + dy, x0 + dx] += g * wt
    return k / k.sum()


def ridge_residual(px: np.ndarray, bmap: BlockMap, n_orient: int = 16) -> np.ndarray:
    """``px`` minus its smoothing along the local ridge flow.

    Ridges and valleys are nearly constant along the flow and cancel, while a
    pore, short along the flow, survives as a bright residual.
    """
    freq = bmap.filled_frequency()
    valid = freq[bmap.foreground & (freq > 0)]
    period = 1.0 / float(np.median(valid)) if valid.size else 10.0
    theta = bmap.pixel_orientation()
    o_idx = np.round(theta / (np.pi / n_orient)).astype(int) % n_orient
    src = px.astype(np.float32)
    smooth = np.zeros(px.shape)
    for oi in np.unique(o_idx):
        sel = o_idx == oi
        out = cv2.filter2D(src, cv2.CV_32F, _line_kernel(0.8 * period, oi * np.pi / n_orient),
                           borderType=cv2.BORDER_REFLECT)
        smooth[sel] = out[sel]
    return px - smooth


def extract_pores_isotropic(img: GrayImage, bmap: BlockMap, ridges: np.ndarray | None = None,
                            sigma: float | None = None, threshold: float = ISO_THRESHOLD,
                            nms_radius: float = NMS_RADIUS) -> PoreSet:
    """Bright blobs found with a Mexican-hat (negated LoG) filter, kept on ridge pixels.

    The filter runs on the ridge residual so the dark ridge around a pore does
    not cancel its response.
    """
    size = (img.width, img.height)
    px, mask = _prepared(img, bmap, ridges)
    if px is None or not mask.any():
        return PoreSet([], ISOTROPIC, size)
    s = sigma if sigma is not None else ISO_SIGMA * img.dpi / 1200.0
    resp = -s * s * ndimage.gaussian_laplace(ridge_residual(px, bmap), s, mode="reflect")
    return PoreSet(_suppress(resp, mask & (resp >= threshold), nms_radius), ISOTROPIC, size)


def pore_kernel(sigma: float, angle: float) -> np.ndarray:
    """Anisotropic pore model: Gaussian across the ridge times a cosine bump along it.

    ``angle`` is the ridge flow direction. The kernel is zero-mean and scaled so
    its positive lobe sums to one.
    """
    half = int(math.ceil(3 * sigma))
    yy, xx = np.mgrid[-half:half + 1, -half:half + 1].astype(np.float64)
    along = xx * math.cos(angle) + yy * math.sin(angle)
    across = -xx * math.sin(angle) + yy * math.cos(angle)
    inside = (np.abs(along) <= 3 * sigma) & (np.abs(across) <= 3 * sigma)
    k = np.where(inside, np.exp(-0.5 * across ** 2 / sigma ** 2) * np.cos(np.pi * along / (3 * sigma)), 0.0)
    k[inside] -= k[inside].mean()
    return k / k[k > 0].sum()


def extract_pores_adaptive(img: GrayImage, bmap: BlockMap, ridges: np.ndarray | None = None,
                           c: float = ADAPT_C, k: float = ADAPT_K, floor: float = ADAPT_FLOOR,
                           nms_radius: float = NMS_RADIUS, n_orient: int = 16) -> PoreSet:
    """Pores from a filter whose scale follows the local ridge period and whose axis follows the flow.

    Each block keeps maxima above ``mean + k * std`` of its own ridge-pixel
    responses, and never below the absolute ``floor``.
    """
    size = (img.width, img.height)
    px, mask = _prepared(img, bmap, ridges)
    if px is None or not mask.any():
        return PoreSet([], ADAPTIVE, size)
    h, w = px.shape
    bs = bmap.block_size
    freq = bmap.filled_frequency()
    valid = freq[bmap.foreground & (freq > 0)]
    default_period = 1.0 / np.median(valid) if valid.size else 10.0 * img.dpi / 1200.0
    period_blocks = np.where(freq > 0, 1.0 / np.maximum(freq, 1e-9), default_period)
    period = np.repeat(np.repeat(period_blocks, bs, 0), bs, 1)[:h, :w]
    theta = bmap.pixel_orientation()
    o_idx = np.round(theta / (np.pi / n_orient)).astype(int) % n_orient
    p_idx = np.round(np.log(np.maximum(c * period, 0.5)) / math.log(1.1)).astype(int)

    src = (px - px[mask].mean()).astype(np.float32)
    resp = np.zeros((h, w))
    for oi, pi in set(zip(o_idx[mask].tolist(), p_idx[mask].tolist())):
        sel = mask & (o_idx == oi) & (p_idx == pi)
        kern = pore_kernel(1.1 ** pi, oi * np.pi / n_orient).astype(np.float32)
        out = cv2.filter2D(src, cv2.CV_32F, kern, borderType=cv2.BORDER_REFLECT)
        resp[sel] = out[sel]

    thr = np.full((h, w), np.inf)
    for r in range(bmap.rows):
        for col in range(bmap.cols):
            sl = (slice(r * bs, min((r + 1) * bs, h)), slice(col * bs, min((col + 1) * bs, w)))
            vals = resp[sl][mask[sl]]
            if vals.size:
                thr[sl] = max(vals.mean() + k * vals.std(), floor)
    return PoreSet(_suppress(resp, mask & (resp >= thr), nms_radius), ADAPTIVE, size)


def extract_pores(img: GrayImage, bmap: BlockMap, method: str, ridges: np.ndarray | None = None) -> PoreSet:
    if method == ISOTROPIC:
        return extract_pores_isotropic(img, bmap, ridges)
    if method == ADAPTIVE:
        return extract_pores_adaptive(img, bmap, ridges)
    raise ValueError(f"unknown pore method {method!r}")


def match_pores(query: PoreSet | None, reference: PoreSet | None, align: AlignmentParams,
                box_half: float = 6) -> MatchScore:
    """Pair aligned query pores with reference pores inside a square of half-width ``box_half``.

    Pairing is one-to-one, nearest first by Chebyshev distance, so a larger
    box only ever adds pairs.
    """
    if query is None or reference is None or not query.pores or not reference.pores:
        return MatchScore(0.0, align, 0)
    q = align.apply(query.xy)
    r = reference.xy
    d = np.maximum(np.abs(q[:, None, 0] - r[None, :, 0]), np.abs(q[:, None, 1] - r[None, :, 1]))
    rows, cols = np.nonzero(d <= box_half)
    order = np.lexsort((cols, rows, d[rows, cols]))
    used_q, used_r, n = set(), set(), 0
    for idx in order:
        i, j = rows[idx], cols[idx]
        if i not in used_q and j not in used_r:
            used_q.add(i)
            used_r.add(j)
            n += 1
    return MatchScore(n / min(len(query), len(reference)), align, n)


def refine_alignment(query: PoreSet | None, reference: PoreSet | None, align: AlignmentParams,
                     box_half: float = 6, radius: int = REFINE_RADIUS,
                     angles=REFINE_ANGLES) -> AlignmentParams:
    """Nudge ``align`` so the most pore pairs fall inside the matching box.

    Ridge registration pins rotation well but leaves shifts along the ridges
    (and by whole ridge periods across them) nearly free. For each small
    rotation offset, pore-to-pore displacements are histogrammed on a 1 px
    grid and box-summed to propose a shift within ``radius``; the proposals
    are then ranked by their exact one-to-one match count. Ties keep the
    smaller rotation offset and the shift nearest zero, and the input
    alignment is kept unless a proposal beats it.
    """
    if query is None or reference is None or not query.pores or not reference.pores:
        return align
    b = int(math.ceil(box_half))
    lim = radius + b
    size = 2 * lim + 1
    rxy = reference.xy
    best = (match_pores(query, reference, align, box_half).matched_count, align)
    for da in sorted(angles, key=abs):
        a = AlignmentParams(align.dtheta + math.radians(da), align.dx, align.dy, align.scale, align.center)
        off = (rxy[None, :, :] - a.apply(query.xy)[:, None, :]).reshape(-1, 2)
        off = off[(np.abs(off) <= lim).all(axis=1)]
        if len(off) == 0:
            continue
        ix = np.round(off + lim).astype(np.int64)
        hist = np.zeros((size, size))
        np.add.at(hist, (ix[:, 1], ix[:, 0]), 1.0)
        counts = ndimage.uniform_filter(hist, size=2 * b + 1, mode="constant") * (2 * b + 1) ** 2
        counts = counts[b:size - b, b:size - b]
        top = counts.max()
        # every shift on the plateau of maxima holds the same pairs; take the one
        # nearest zero, then centre it on the median inlier displacement
        sy, sx = np.nonzero(counts >= top - 1e-6)
        k = int(np.argmin(np.hypot(sx - radius, sy - radius)))
        shift = np.array([sx[k] - radius, sy[k] - radius], dtype=np.float64)
        inl = off[(np.abs(off - shift) <= box_half).all(axis=1)]
        if len(inl):
            med = np.median(inl, axis=0)
            if (np.abs(off - med) <= box_half).all(axis=1).sum() >= len(inl):
                shift = med
        cand = AlignmentParams(a.dtheta, a.dx + shift[0], a.dy + shift[1], a.scale, a.center)
        n = match_pores(query, reference, cand, box_half).matched_count
        if n > best[0]:
            best = (n, cand)
    return best[1]


def best_alignment_pores(q_ridges: RidgeFeature | None, r_ridges: RidgeFeature | None,
                         q_pores: PoreSet | None, r_pores: PoreSet | None,
                         box_halves=BOX_HALVES, candidates=None,
                         ridge_evidence=None) -> dict[int, MatchScore]:
    """Pore scores under the registration candidate with the most ridge + pore evidence.

    ``ridge_evidence`` holds precomputed ridge scores, one per candidate. Each
    candidate is first refined on the pores themselves (see ``refine_alignment``).

    The candidate is chosen once, using the smallest box, and reused for every
    ``box_half`` so the scores stay monotone in the box size.
    """
    box_halves = sorted(box_halves)
    zero = {b: MatchScore(0.0, AlignmentParams(), 0) for b in box_halves}
    if q_ridges is None or r_ridges is None or not q_ridges.ridges or not r_ridges.ridges:
        return zero
    if candidates is None:
        try:
            candidates = register(q_ridges, r_ridges)
        except NoCandidate:
            return zero
    if not candidates:
        return zero
    if ridge_evidence is None:
        ridge_evidence = [s.value for s in ridge_scores(q_ridges, r_ridges, candidates)]
    best, best_ev = None, -1.0
    for align, rv in zip(candidates, ridge_evidence):
        align = refine_alignment(q_pores, r_pores, align, box_halves[0])
        ev = rv + match_pores(q_pores, r_pores, align, box_halves[0]).value
        if ev > best_ev:
            best, best_ev = align, ev
    return {b: match_pores(q_pores, r_pores, best, b) for b in box_halves}


def compare_pores(query_img: GrayImage, reference_img: GrayImage, method: str,
                  box_half: float = 6) -> MatchScore:
    """Full pipeline on two images: ridge registration then pore matching."""
    from .pipeline import extract_template

    methods = ["ridges", "pores_iso" if method == ISOTROPIC else "pores_adapt"]
    q = extract_template(query_img, methods)
    r = extract_template(reference_img, methods)
    return best_alignment_pores(q.ridges, r.ridges, q.pores.get(method), r.pores.get(method),
                                (box_half,))[box_half]


def dumps(ps: PoreSet) -> str:
    w, h = ps.image_size
    out = [f"PORES v1 {ps.method} {w} {h}"]
    out.extend(f"{p.x!r} {p.y!r} {p.strength!r}" for p in ps.pores)
    return "\n".join(out) + "\n"


def loads(text: str) -> PoreSet:
    rows = [r for r in text.splitlines() if r.strip()]
    if not rows:
        raise ParseError("empty pore file")
    head = rows[0].split()
    if len(head) != 5 or head[:2] != ["PORES", "v1"] or head[2] not in PORE_METHODS:
        raise ParseError(f"bad pore header: {rows[0]!r}")
    pores = []
    for lineno, row in enumerate(rows[1:], start=2):
        parts = row.split()
        if len(parts) != 3:
            raise ParseError(f"line {lineno}: expected 'x y strength'")
        try:
            pores.append(Pore(float(parts[0]), float(parts[1]), float(parts[2])))
        except ValueError as exc:
            raise ParseError(f"line {lineno}: {exc}") from exc
    try:
        size = (int(head[3]), int(head[4]))
    except ValueError as exc:
        raise ParseError(f"bad pore header: {rows[0]!r}") from exc
    return PoreSet(pores, head[2], size)


def save(path, ps: PoreSet) -> None:
    Path(path).write_text(dumps(ps), encoding="utf-8")


def load(path) -> PoreSet:
    return loads(Path(path).read_text(encoding="utf-8"))
