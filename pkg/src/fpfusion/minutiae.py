"""Crossing-number minutiae and Hough-aligned point-pattern matching."""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from .errors import ParseError
from .imgproc import BlockMap, GrayImage
from .ridge_matcher import AlignmentParams, MatchScore
from .ridges import _RING, _neighbour_codes

ENDING, BIFURCATION = "ending", "bifurcation"
_KIND_CODE = {ENDING: "E", BIFURCATION: "B"}
_CODE_KIND = {v: k for k, v in _KIND_CODE.items()}

BORDER = 12
MIN_SEPARATION = 5.0
TRACE_LEN = 10
R0 = 10.0
A0 = 15.0


def _cn_table() -> np.ndarray:
    table = np.zeros(256, dtype=np.int8)
    for code in range(256):
        b = [(code >> i) & 1 for i in range(8)]
        table[code] = sum(abs(b[i] - b[(i + 1) % 8]) for i in range(8)) // 2
    return table


_CN = _cn_table()


class Minutia(NamedTuple):
    x: float
    y: float
    direction_deg: float
    kind: str

    @property
    def direction(self) -> float:
        return math.radians(self.direction_deg)


@dataclass(eq=False)
class MinutiaSet:
    minutiae: list[Minutia] = field(default_factory=list)
    image_size: tuple[int, int] = (0, 0)

    def __len__(self):
        return len(self.minutiae)

    def __eq__(self, other):
        if not isinstance(other, MinutiaSet):
            return NotImplemented
        return tuple(self.image_size) == tuple(other.image_size) and self.minutiae == other.minutiae

    def arrays(self):
        if not self.minutiae:
            return np.zeros((0, 2)), np.zeros(0), np.zeros(0, dtype=bool)
        xy = np.array([(m.x, m.y) for m in self.minutiae], dtype=np.float64)
        ang = np.radians([m.direction_deg for m in self.minutiae])
        bif = np.array([m.kind == BIFURCATION for m in self.minutiae])
        return xy, ang, bif


def crossing_numbers(skeleton: np.ndarray) -> np.ndarray:
    """Crossing number of every skeleton pixel (0 off the skeleton)."""
    sk = np.asarray(skeleton, dtype=bool)
    return np.where(sk, _CN[_neighbour_codes(sk)], 0)


def _geodesic(sk: np.ndarray, seeds, max_dist: int) -> dict:
    h, w = sk.shape
    dist = {s: 0 for s in seeds}
    queue = deque(seeds)
    while queue:
        p = queue.popleft()
        d = dist[p]
        if d >= max_dist:
            continue
        for dy, dx in _RING:
            q = (p[0] + dy, p[1] + dx)
            if 0 <= q[0] < h and 0 <= q[1] < w and sk[q] and q not in dist:
                dist[q] = d + 1
                queue.append(q)
    return dist


def _branch_directions(sk, seeds, centre, length=TRACE_LEN):
    """Directions from ``centre`` to the far ends of the skeleton branches leaving ``seeds``."""
    dist = _geodesic(sk, seeds, length)
    far = [p for p, d in dist.items() if d >= length // 2]
    if not far:
        far = [p for p, d in dist.items() if d > 0]
    if not far:
        return []
    far_set = set(far)
    branches, seen = [], set()
    for p in sorted(far):
        if p in seen:
            continue
        comp, stack = [], [p]
        seen.add(p)
        while stack:
            c = stack.pop()
            comp.append(c)
            for dy, dx in _RING:
                q = (c[0] + dy, c[1] + dx)
                if q in far_set and q not in seen:
                    seen.add(q)
                    stack.append(q)
        ys, xs = np.array(comp, dtype=np.float64).T
        branches.append((len(comp), math.atan2(ys.mean() - centre[1], xs.mean() - centre[0])))
    branches.sort(key=lambda b: -b[0])
    return [a for _, a in branches]


def _angle_diff(a, b):
    return (a - b + np.pi) % (2 * np.pi) - np.pi


def _bisector(a, b):
    return math.atan2(math.sin(a) + math.sin(b), math.cos(a) + math.cos(b))


def extract_minutiae(skeleton: GrayImage | np.ndarray, bmap: BlockMap | None = None,
                     border: int = BORDER, min_separation: float = MIN_SEPARATION) -> MinutiaSet:
    """Endings (CN = 1) and bifurcations (CN = 3) of a thinned skeleton.

    An ending points along its ridge, into the ridge body; a bifurcation
    points along the bisector of its two closest branches (across the valley
    they enclose). Minutiae within ``border`` px of the foreground edge (or the
    image edge when a block map is given) are dropped, then every minutia closer
    than ``min_separation`` to another one is removed together with it.
    """
    px = skeleton.pixels if isinstance(skeleton, GrayImage) else np.asarray(skeleton, dtype=np.float64)
    sk = px > 0.5
    h, w = sk.shape
    cn = crossing_numbers(sk)
    found = []

    for y, x in zip(*np.nonzero(cn == 1)):
        dirs = _branch_directions(sk, [(int(y), int(x))], (float(x), float(y)))
        if dirs:
            found.append((float(x), float(y), dirs[0], ENDING))

    labels, n = ndimage.label(cn == 3, structure=np.ones((3, 3), dtype=bool))
    for lab in range(1, n + 1):
        ys, xs = np.nonzero(labels == lab)
        k = int(np.argmin((ys - ys.mean()) ** 2 + (xs - xs.mean()) ** 2))
        cy, cx = int(ys[k]), int(xs[k])
        cluster = list(zip(ys.tolist(), xs.tolist()))
        dirs = _branch_directions(sk, cluster, (float(cx), float(cy)))
        if len(dirs) < 3:
            continue
        a = dirs[:3]
        pairs = [(abs(_angle_diff(a[i], a[j])), i, j) for i in range(3) for j in range(i + 1, 3)]
        _, i, j = min(pairs)
        found.append((float(cx), float(cy), _bisector(a[i], a[j]), BIFURCATION))

    if bmap is not None and found:
        fg = np.pad(bmap.pixel_foreground(), 1)
        depth = ndimage.distance_transform_edt(fg)[1:-1, 1:-1]
        found = [m for m in found if depth[int(m[1]), int(m[0])] > border]

    if len(found) > 1 and min_separation > 0:
        xy = np.array([(m[0], m[1]) for m in found])
        d = np.hypot(xy[:, None, 0] - xy[None, :, 0], xy[:, None, 1] - xy[None, :, 1])
        np.fill_diagonal(d, np.inf)
        keep = d.min(axis=1) >= min_separation
        found = [m for m, k in zip(found, keep) if k]

    found.sort(key=lambda m: (m[1], m[0], m[3]))
    out = [Minutia(x, y, float(np.degrees(a) % 360.0), kind) for x, y, a, kind in found]
    return MinutiaSet(out, (w, h))


def _pair_count(q_xy, q_ang, r_xy, r_ang, align: AlignmentParams, r0: float, a0: float) -> int:
    if len(q_xy) == 0 or len(r_xy) == 0:
        return 0
    t = align.apply(q_xy)
    d = np.hypot(t[:, None, 0] - r_xy[None, :, 0], t[:, None, 1] - r_xy[None, :, 1])
    da = np.abs(_angle_diff(q_ang[:, None] + align.dtheta, r_ang[None, :]))
    ok = (d <= r0) & (da <= a0)
    rows, cols = np.nonzero(ok)
    order = np.lexsort((cols, rows, d[rows, cols]))
    used_r, used_c, n = set(), set(), 0
    for k in order:
        i, j = rows[k], cols[k]
        if i not in used_r and j not in used_c:
            used_r.add(i)
            used_c.add(j)
            n += 1
    return n


def _one_way(query: MinutiaSet, reference: MinutiaSet, r0: float, a0: float,
             n_candidates: int = 5, bin_theta: float = 10.0, bin_shift: float = 8.0):
    q_xy, q_ang, q_bif = query.arrays()
    r_xy, r_ang, r_bif = reference.arrays()
    cx, cy = query.image_size[0] / 2, query.image_size[1] / 2
    qi, ri = np.nonzero(q_bif[:, None] == r_bif[None, :])
    if len(qi) == 0:
        return 0, AlignmentParams(center=(cx, cy))
    dth = _angle_diff(r_ang[ri], q_ang[qi])
    c, s = np.cos(dth), np.sin(dth)
    x, y = q_xy[qi, 0] - cx, q_xy[qi, 1] - cy
    tx = r_xy[ri, 0] - (c * x - s * y + cx)
    ty = r_xy[ri, 1] - (s * x + c * y + cy)
    cell = np.column_stack([np.floor(np.degrees(dth) / bin_theta), np.floor(tx / bin_shift),
                            np.floor(ty / bin_shift)]).astype(np.int64)
    cells, inverse, counts = np.unique(cell, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    order = np.lexsort((cells[:, 2], cells[:, 1], cells[:, 0], -counts))
    best = (0, AlignmentParams(center=(cx, cy)))
    for ci in order[:n_candidates]:
        # neighbourhood of the cell, angle taken circularly
        dc = np.abs(cells[inverse] - cells[ci])
        near = ((dc[:, 1] <= 1) & (dc[:, 2] <= 1)
                & (np.abs(_angle_diff(dth, dth[inverse == ci][0])) <= math.radians(bin_theta * 1.5)))
        ang = math.atan2(np.sin(dth[near]).mean(), np.cos(dth[near]).mean())
        c1, s1 = math.cos(ang), math.sin(ang)
        xn, yn = q_xy[qi[near], 0] - cx, q_xy[qi[near], 1] - cy
        dx = float(np.median(r_xy[ri[near], 0] - (c1 * xn - s1 * yn + cx)))
        dy = float(np.median(r_xy[ri[near], 1] - (s1 * xn + c1 * yn + cy)))
        align = AlignmentParams(ang, dx, dy, 1.0, (cx, cy))
        n = _pair_count(q_xy, q_ang, r_xy, r_ang, align, r0, a0)
        if n > best[0]:
            best = (n, align)
    return best


def compare_minutiae(query: MinutiaSet | None, reference: MinutiaSet | None,
                     r0: float = R0, a0_deg: float = A0) -> MatchScore:
    """Score ``2 n / (n_query + n_ref)`` after generalized-Hough alignment.

    Both directions are searched and the better one kept, so the score is
    symmetric. A single paired minutia counts only when one of the sets has
    just one minutia, since any lone pair can be aligned exactly.
    """
    if query is None or reference is None or not query.minutiae or not reference.minutiae:
        size = query.image_size if query is not None else (0, 0)
        return MatchScore(0.0, AlignmentParams.identity(size), 0)
    a0 = math.radians(a0_deg)
    n_fwd, align = _one_way(query, reference, r0, a0)
    n_bwd, _ = _one_way(reference, query, r0, a0)
    n = max(n_fwd, n_bwd)
    if n < min(2, len(query), len(reference)):
        n = 0
    value = 2.0 * n / (len(query) + len(reference))
    return MatchScore(min(value, 1.0), align, n)


def dumps(ms: MinutiaSet) -> str:
    w, h = ms.image_size
    out = [f"MINUTIAE v1 {w} {h}"]
    out.extend(f"{m.x!r} {m.y!r} {m.direction_deg!r} {_KIND_CODE[m.kind]}" for m in ms.minutiae)
    return "\n".join(out) + "\n"


def loads(text: str) -> MinutiaSet:
    rows = [r for r in text.splitlines() if r.strip()]
    if not rows:
        raise ParseError("empty minutiae file")
    head = rows[0].split()
    if len(head) != 4 or head[:2] != ["MINUTIAE", "v1"]:
        raise ParseError(f"bad minutiae header: {rows[0]!r}")
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        parts = row.split()
        if len(parts) != 4 or parts[3] not in _CODE_KIND:
            raise ParseError(f"line {lineno}: expected 'x y direction_deg kind'")
        try:
            out.append(Minutia(float(parts[0]), float(parts[1]), float(parts[2]), _CODE_KIND[parts[3]]))
        except ValueError as exc:
            raise ParseError(f"line {lineno}: {exc}") from exc
    try:
        size = (int(head[2]), int(head[3]))
    except ValueError as exc:
        raise ParseError(f"bad minutiae header: {rows[0]!r}") from exc
    return MinutiaSet(out, size)


def save(path, ms: MinutiaSet) -> None:
    Path(path).write_text(dumps(ms), encoding="utf-8")


def load(path) -> MinutiaSet:
    return loads(Path(path).read_text(encoding="utf-8"))
