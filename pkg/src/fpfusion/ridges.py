"""Ridge template: thinned ridge polylines, their Hough lines and curvature classes."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .errors import EmptyTemplate, NoLine, ParseError
from .imgproc import BlockMap, GrayImage, binarize, enhance, estimate_block_map, normalize

STRAIGHT, CURVED, HIGHLY_CURVED = "straight", "curved", "highly_curved"
CURVATURE_CLASSES = (STRAIGHT, CURVED, HIGHLY_CURVED)

THETA_STEP = 1.0
RHO_STEP = 1.0
MAX_LINES = 8
MIN_RIDGE_LEN = 10

# neighbour offsets (dy, dx) in the cyclic order N, NE, E, SE, S, SW, W, NW
_RING = ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1))


def _neighbour_codes(img: np.ndarray) -> np.ndarray:
    p = np.pad(img.astype(np.uint8), 1)
    h, w = img.shape
    code = np.zeros((h, w), dtype=np.int32)
    for bit, (dy, dx) in enumerate(_RING):
        code |= p[1 + dy:1 + dy + h, 1 + dx:1 + dx + w].astype(np.int32) << bit
    return code


def _bits(code):
    return [(code >> i) & 1 for i in range(8)]


def _zs_tables():
    first = np.zeros(256, dtype=bool)
    second = np.zeros(256, dtype=bool)
    for code in range(256):
        p2, p3, p4, p5, p6, p7, p8, p9 = _bits(code)
        seq = [p2, p3, p4, p5, p6, p7, p8, p9, p2]
        b = sum(seq[:8])
        a = sum(1 for i in range(8) if seq[i] == 0 and seq[i + 1] == 1)
        base = 2 <= b <= 6 and a == 1
        first[code] = base and p2 * p4 * p6 == 0 and p4 * p6 * p8 == 0
        second[code] = base and p2 * p4 * p8 == 0 and p2 * p6 * p8 == 0
    return first, second


def _redundant_table():
    """Pixels with >= 2 neighbours that stay 8-connected among themselves without the centre."""
    table = np.zeros(256, dtype=bool)
    pos = [(dx, dy) for dy, dx in _RING]
    for code in range(256):
        on = [i for i, bit in enumerate(_bits(code)) if bit]
        if len(on) < 2:
            continue
        seen = {on[0]}
        stack = [on[0]]
        while stack:
            i = stack.pop()
            for j in on:
                if j not in seen and max(abs(pos[i][0] - pos[j][0]), abs(pos[i][1] - pos[j][1])) == 1:
                    seen.add(j)
                    stack.append(j)
        table[code] = len(seen) == len(on)
    return table


_ZS_FIRST, _ZS_SECOND = _zs_tables()
_REDUNDANT = _redundant_table()


def _zhang_suen(sk: np.ndarray) -> bool:
    changed = False
    while True:
        removed = False
        for table in (_ZS_FIRST, _ZS_SECOND):
            kill = sk & table[_neighbour_codes(sk)]
            if kill.any():
                sk[kill] = False
                removed = True
        if not removed:
            return changed
        changed = True


def _drop_redundant(sk: np.ndarray) -> bool:
    changed = False
    cand = np.argwhere(sk & _REDUNDANT[_neighbour_codes(sk)])
    h, w = sk.shape
    for y, x in cand:
        code = 0
        for bit, (dy, dx) in enumerate(_RING):
            yy, xx = y + dy, x + dx
            if 0 <= yy < h and 0 <= xx < w and sk[yy, xx]:
                code |= 1 << bit
        if _REDUNDANT[code]:
            sk[y, x] = False
            changed = True
    return changed


def thin(binary: GrayImage) -> GrayImage:
    """Zhang-Suen thinning followed by removal of staircase corner pixels.

    Both passes repeat until neither changes anything, which makes the result a
    fixed point of ``thin``.
    """
    sk = binary.pixels > 0.5
    while True:
        a = _zhang_suen(sk)
        b = _drop_redundant(sk)
        if not (a or b):
            break
    return binary.with_pixels(sk.astype(np.float64))


@dataclass(eq=False)
class Ridge:
    id: int
    points: np.ndarray  # (n, 2) int, columns x, y

    def __len__(self):
        return len(self.points)

    def __eq__(self, other):
        if not isinstance(other, Ridge):
            return NotImplemented
        return self.id == other.id and np.array_equal(self.points, other.points)


class HoughLine(NamedTuple):
    theta_deg: float
    rho: float
    votes: int

    @property
    def theta(self) -> float:
        return math.radians(self.theta_deg)


def trace_ridges(skeleton: GrayImage, min_ridge_len: int = MIN_RIDGE_LEN) -> list[Ridge]:
    """Split a skeleton into simple paths at branch pixels (>= 3 neighbours)."""
    sk = skeleton.pixels > 0.5
    kernel = np.ones((3, 3), dtype=np.int32)
    kernel[1, 1] = 0
    nbrs = ndimage.convolve(sk.astype(np.int32), kernel, mode="constant")
    body = sk & (nbrs < 3)
    labels, n = ndimage.label(body, structure=np.ones((3, 3), dtype=bool))
    if n == 0:
        return []
    h, w = sk.shape
    ridges = []
    objects = ndimage.find_objects(labels)
    for lab, sl in enumerate(objects, start=1):
        comp = labels[sl] == lab
        count = int(comp.sum())
        if count < min_ridge_len:
            continue
        ys, xs = np.nonzero(comp)
        ys = ys + sl[0].start
        xs = xs + sl[1].start
        members = set(zip(ys.tolist(), xs.tolist()))
        degree = {p: sum((p[0] + dy, p[1] + dx) in members for dy, dx in _RING) for p in members}
        ends = sorted(p for p, d in degree.items() if d <= 1)
        start = ends[0] if ends else min(members)
        path = [start]
        seen = {start}
        cur = start
        while True:
            nxt = None
            # 4-neighbours first keeps the walk on the thinnest route
            for dy, dx in (_RING[0], _RING[2], _RING[4], _RING[6], _RING[1], _RING[3], _RING[5], _RING[7]):
                q = (cur[0] + dy, cur[1] + dx)
                if q in members and q not in seen:
                    nxt = q
                    break
            if nxt is None:
                break
            path.append(nxt)
            seen.add(nxt)
            cur = nxt
        if len(path) >= min_ridge_len:
            pts = np.array([(x, y) for y, x in path], dtype=np.int64)
            ridges.append(Ridge(len(ridges), pts))
    return ridges


def _line_distance(points: np.ndarray, line: HoughLine) -> np.ndarray:
    t = line.theta
    return np.abs(points[:, 0] * math.cos(t) + points[:, 1] * math.sin(t) - line.rho)


def hough_lines(ridge: Ridge | np.ndarray, theta_step: float = THETA_STEP, rho_step: float = RHO_STEP,
                max_lines: int = MAX_LINES) -> list[HoughLine]:
    """Most significant straight lines through a ridge's pixels.

    Peaks are 3x3 local maxima of the (theta, rho) accumulator, taken in
    descending vote order and refined by a line fit to their points; a peak is
    kept only if it explains at least the vote threshold of ridge points not
    already within ``rho_step`` of a kept line.
    """
    pts = np.asarray(ridge.points if isinstance(ridge, Ridge) else ridge, dtype=np.float64)
    n = len(pts)
    threshold = max(5, int(math.ceil(0.1 * n)))
    if n < threshold:
        raise NoLine(f"ridge of {n} points cannot reach {threshold} votes")
    n_theta = int(round(180.0 / theta_step))
    thetas = np.radians(np.arange(n_theta) * theta_step)
    rho = pts[:, 0:1] * np.cos(thetas)[None, :] + pts[:, 1:2] * np.sin(thetas)[None, :]
    bins = np.round(rho / rho_step).astype(np.int64)
    half = int(np.abs(bins).max()) + 1
    n_rho = 2 * half + 1
    flat = (np.arange(n_theta)[None, :] * n_rho + bins + half).ravel()
    acc = np.bincount(flat, minlength=n_theta * n_rho).reshape(n_theta, n_rho)

    # theta wraps onto itself with rho negated
    padded = np.zeros((n_theta + 2, n_rho + 2), dtype=acc.dtype)
    padded[1:-1, 1:-1] = acc
    padded[0, 1:-1] = acc[-1, ::-1]
    padded[-1, 1:-1] = acc[0, ::-1]
    local_max = ndimage.maximum_filter(padded, size=3, mode="constant")[1:-1, 1:-1]
    peaks = np.argwhere((acc == local_max) & (acc >= threshold))
    if len(peaks) == 0:
        raise NoLine(f"no accumulator cell reached {threshold} votes")
    votes = acc[peaks[:, 0], peaks[:, 1]]
    order = np.lexsort((peaks[:, 1], peaks[:, 0], -votes))

    lines: list[HoughLine] = []
    covered = np.zeros(n, dtype=bool)
    for idx in order:
        k, r = peaks[idx]
        line = HoughLine(float(k * theta_step), float((r - half) * rho_step), int(votes[idx]))
        near = _line_distance(pts, line) <= rho_step
        line, near = _refine(pts, line, near, rho_step)
        if (near & ~covered).sum() < threshold:
            continue
        lines.append(line)
        covered |= near
        if len(lines) == max_lines:
            break
    if not lines:
        raise NoLine("all peaks were redundant")
    lines.sort(key=lambda ln: -ln.votes)
    return lines


def _refine(pts, line, near, rho_step):
    """Total-least-squares fit to the points near a peak cell.

    The fitted line replaces the cell centre when it keeps at least as many
    points within ``rho_step``; votes become that count.
    """
    if near.sum() < 2:
        return line, near
    sub = pts[near]
    c = sub.mean(axis=0)
    _, _, vt = np.linalg.svd(sub - c, full_matrices=False)
    nx, ny = vt[-1]
    theta = math.atan2(ny, nx) % math.pi
    deg = math.degrees(theta)
    if deg >= 180.0:
        deg, theta = 0.0, 0.0
    cand = HoughLine(deg, float(c[0] * math.cos(theta) + c[1] * math.sin(theta)), 0)
    cand_near = _line_distance(pts, cand) <= rho_step
    if cand_near.sum() < near.sum():
        return line._replace(votes=int(near.sum())), near
    return cand._replace(votes=int(cand_near.sum())), cand_near


def _covering_lines(lines, pts, band, fraction=0.8):
    """Greedy smallest set of lines covering ``fraction`` of the points.

    When the lines cannot reach that coverage, every line that adds coverage
    is returned.
    """
    masks = [_line_distance(pts, ln) <= band for ln in lines]
    covered = np.zeros(len(pts), dtype=bool)
    chosen = []
    need = fraction * len(pts)
    while covered.sum() < need:
        gains = [(m & ~covered).sum() if i not in chosen else -1 for i, m in enumerate(masks)]
        best = int(np.argmax(gains)) if gains else -1
        if best < 0 or gains[best] <= 0:
            break
        chosen.append(best)
        covered |= masks[best]
    return [lines[i] for i in chosen]


def angular_range(angles_deg, period=180.0) -> float:
    """Length of the shortest arc (modulo ``period``) containing every angle."""
    a = np.sort(np.mod(np.asarray(angles_deg, dtype=np.float64), period))
    if len(a) < 2:
        return 0.0
    gaps = np.diff(np.concatenate([a, [a[0] + period]]))
    return float(period - gaps.max())


def classify_curvature(lines: list[HoughLine], ridge: Ridge | np.ndarray, rho_step: float = RHO_STEP,
                       straight_max: float = 10.0, curved_max: float = 40.0) -> str:
    """Label a ridge by the angular spread of the lines that cover 80% of it.

    Coverage uses a band of ``rho_step`` around each line. Pixel jitter can
    keep short lines from reaching 80%, in which case all contributing lines
    are used.
    """
    pts = np.asarray(ridge.points if isinstance(ridge, Ridge) else ridge, dtype=np.float64)
    cover = _covering_lines(lines, pts, rho_step)
    spread = angular_range([ln.theta_deg for ln in cover])
    if spread < straight_max:
        return STRAIGHT
    if spread < curved_max:
        return CURVED
    return HIGHLY_CURVED


@dataclass(eq=False)
class RidgeFeature:
    ridges: list[Ridge]
    lines: list[list[HoughLine]]
    curvature_class: list[str]
    image_size: tuple[int, int]

    def __len__(self):
        return len(self.ridges)

    def __eq__(self, other):
        if not isinstance(other, RidgeFeature):
            return NotImplemented
        return (tuple(self.image_size) == tuple(other.image_size)
                and self.ridges == other.ridges
                and self.lines == other.lines
                and self.curvature_class == other.curvature_class)

    @cached_property
    def all_points(self) -> np.ndarray:
        if not self.ridges:
            return np.zeros((0, 2))
        return np.concatenate([r.points for r in self.ridges]).astype(np.float64)

    @cached_property
    def point_labels(self) -> np.ndarray:
        if not self.ridges:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate([np.full(len(r), i) for i, r in enumerate(self.ridges)])

    @cached_property
    def tree(self) -> cKDTree:
        return cKDTree(self.all_points)

    @cached_property
    def centroids(self) -> np.ndarray:
        return np.array([r.points.mean(axis=0) for r in self.ridges]).reshape(-1, 2)


def build_ridge_feature(ridges: list[Ridge], image_size, theta_step=THETA_STEP, rho_step=RHO_STEP,
                        max_lines=MAX_LINES) -> RidgeFeature:
    """Attach Hough lines and curvature classes; ridges without a line are dropped."""
    kept, lines, classes = [], [], []
    for ridge in ridges:
        try:
            found = hough_lines(ridge, theta_step, rho_step, max_lines)
        except NoLine:
            continue
        kept.append(Ridge(len(kept), ridge.points))
        lines.append(found)
        classes.append(classify_curvature(found, ridge, rho_step))
    return RidgeFeature(kept, lines, classes, tuple(image_size))


class Preprocessed(NamedTuple):
    normalized: GrayImage
    block_map: BlockMap
    enhanced: GrayImage
    binary: GrayImage
    skeleton: GrayImage


def preprocess(img: GrayImage, block_size: int | None = None) -> Preprocessed:
    norm = normalize(img)
    bmap = estimate_block_map(norm, block_size)
    enh = enhance(norm, bmap)
    binary = binarize(enh, bmap)
    return Preprocessed(norm, bmap, enh, binary, thin(binary))


def ridge_feature_from_skeleton(skeleton: GrayImage, min_ridge_len: int = MIN_RIDGE_LEN) -> RidgeFeature:
    feat = build_ridge_feature(trace_ridges(skeleton, min_ridge_len), (skeleton.width, skeleton.height))
    if not feat.ridges:
        raise EmptyTemplate("no ridge survived extraction")
    return feat


def extract_ridge_features(img: GrayImage) -> RidgeFeature:
    return ridge_feature_from_skeleton(preprocess(img).skeleton)


def dumps(feat: RidgeFeature) -> str:
    w, h = feat.image_size
    out = [f"RIDGEFEAT v1 {w} {h}"]
    for ridge, lines, cls in zip(feat.ridges, feat.lines, feat.curvature_class):
        out.append(f"R {ridge.id} {cls} {len(ridge)}")
        out.extend(f"{x} {y}" for x, y in ridge.points.tolist())
        out.extend(f"L {ln.theta_deg!r} {ln.rho!r} {ln.votes}" for ln in lines)
    return "\n".join(out) + "\n"


def loads(text: str) -> RidgeFeature:
    rows = text.splitlines()
    if not rows:
        raise ParseError("empty ridge feature file")
    head = rows[0].split()
    if len(head) != 4 or head[:2] != ["RIDGEFEAT", "v1"]:
        raise ParseError(f"bad ridge feature header: {rows[0]!r}")
    size = (int(head[2]), int(head[3]))
    ridges, lines, classes = [], [], []
    i = 1
    try:
        while i < len(rows):
            if not rows[i].strip():
                i += 1
                continue
            tag, rid, cls, npts = rows[i].split()
            if tag != "R" or cls not in CURVATURE_CLASSES:
                raise ParseError(f"line {i + 1}: expected a ridge record")
            npts = int(npts)
            pts = np.array([[int(v) for v in rows[i + 1 + k].split()] for k in range(npts)],
                           dtype=np.int64).reshape(-1, 2)
            i += 1 + npts
            found = []
            while i < len(rows) and rows[i].startswith("L "):
                _, t, r, v = rows[i].split()
                found.append(HoughLine(float(t), float(r), int(v)))
                i += 1
            ridges.append(Ridge(int(rid), pts))
            lines.append(found)
            classes.append(cls)
    except (ValueError, IndexError) as exc:
        raise ParseError(f"malformed ridge feature file near line {i + 1}") from exc
    return RidgeFeature(ridges, lines, classes, size)


def save(path, feat: RidgeFeature) -> None:
    Path(path).write_text(dumps(feat), encoding="utf-8")


def load(path) -> RidgeFeature:
    return loads(Path(path).read_text(encoding="utf-8"))
