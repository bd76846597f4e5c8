"""Registration from Hough-line pairs and alignment-matrix ridge scoring."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import NoCandidate
from .ridges import CURVATURE_CLASSES, Ridge, RidgeFeature, build_ridge_feature


@dataclass(frozen=True)
class AlignmentParams:
    """Similarity transform ``p' = scale * R(dtheta) (p - center) + center + (dx, dy)``.

    ``center`` is the query image centre, so a pure rotation of a fragment
    about its middle has zero translation.
    """

    dtheta: float = 0.0
    dx: float = 0.0
    dy: float = 0.0
    scale: float = 1.0
    center: tuple[float, float] = (0.0, 0.0)

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        c, s = math.cos(self.dtheta), math.sin(self.dtheta)
        cx, cy = self.center
        x, y = p[:, 0] - cx, p[:, 1] - cy
        return np.column_stack([self.scale * (c * x - s * y) + cx + self.dx,
                                self.scale * (s * x + c * y) + cy + self.dy])

    @property
    def dtheta_deg(self) -> float:
        return math.degrees(self.dtheta)

    @classmethod
    def identity(cls, image_size=(0, 0)) -> AlignmentParams:
        return cls(center=(image_size[0] / 2, image_size[1] / 2))


@dataclass(frozen=True)
class MatchScore:
    value: float
    aligned: AlignmentParams
    matched_count: int = 0


def _strong_lines(feat: RidgeFeature, top_k: int):
    rows = [(-ln.votes, i, ln.theta_deg, ln.votes)
            for i, lines in enumerate(feat.lines) for ln in lines]
    rows.sort()
    rows = rows[:top_k]
    idx = np.array([r[1] for r in rows], dtype=np.int64)
    theta = np.array([r[2] for r in rows], dtype=np.float64)
    votes = np.array([r[3] for r in rows], dtype=np.float64)
    return idx, theta, votes


def register(query: RidgeFeature, reference: RidgeFeature, top_k: int = 64,
             max_rotation: float = math.radians(60), n_candidates: int = 5,
             scales=(1.0,), bin_theta: float = 2.0, bin_shift: float = 4.0) -> list[AlignmentParams]:
    """Candidate alignments mapping ``query`` onto ``reference``, best first.

    Every pair of strong lines (one per template) proposes a rotation; the
    query ridge centroid, pushed through that rotation, proposes the shift.
    Hypotheses vote trilinearly into (rotation, dx, dy[, scale]) bins and the
    top cells are refined to the weighted mean of the hypotheses around them.
    """
    if not query.ridges or not reference.ridges:
        raise NoCandidate("template without ridges")
    qi, qt, qv = _strong_lines(query, top_k)
    ri, rt, rv = _strong_lines(reference, top_k)
    if len(qi) == 0 or len(ri) == 0:
        raise NoCandidate("template without Hough lines")

    dth = np.mod(rt[None, :] - qt[:, None], 180.0)
    dth = np.where(dth > 90.0, dth - 180.0, dth)
    weight = np.minimum(qv[:, None], rv[None, :])
    keep = np.abs(dth) <= math.degrees(max_rotation) + 1e-9
    pair_q, pair_r = np.nonzero(keep)
    if len(pair_q) == 0:
        raise NoCandidate("no line pair within the rotation range")
    dth = dth[keep]
    weight = weight[keep]
    cq = query.centroids[qi[pair_q]]
    cr = reference.centroids[ri[pair_r]]
    cx, cy = query.image_size[0] / 2, query.image_size[1] / 2

    hyps = []
    for s in scales:
        rad = np.radians(dth)
        c, sn = np.cos(rad), np.sin(rad)
        x, y = cq[:, 0] - cx, cq[:, 1] - cy
        tx = cr[:, 0] - (s * (c * x - sn * y) + cx)
        ty = cr[:, 1] - (s * (sn * x + c * y) + cy)
        hyps.append(np.column_stack([dth, tx, ty, np.full_like(dth, s), weight]))
    h = np.concatenate(hyps)
    scale_index = {s: k for k, s in enumerate(scales)}
    sidx = np.array([scale_index[s] for s in h[:, 3]]) if len(scales) > 1 else np.zeros(len(h), dtype=np.int64)

    u = np.column_stack([h[:, 0] / bin_theta, h[:, 1] / bin_shift, h[:, 2] / bin_shift])
    base = np.floor(u).astype(np.int64)
    frac = u - base
    keys, vals = [], []
    for corner in range(8):
        off = np.array([(corner >> 2) & 1, (corner >> 1) & 1, corner & 1])
        wgt = np.prod(np.where(off[None, :] == 1, frac, 1 - frac), axis=1) * h[:, 4]
        keys.append(np.column_stack([base + off[None, :], sidx]))
        vals.append(wgt)
    keys = np.concatenate(keys)
    vals = np.concatenate(vals)
    # pack the four cell indices into one integer so a 1-D unique suffices
    lo = keys.min(axis=0)
    span = keys.max(axis=0) - lo + 1
    packed = np.ravel_multi_index(tuple((keys - lo).T), tuple(span))
    ucode, inverse = np.unique(packed, return_inverse=True)
    cells = np.column_stack(np.unravel_index(ucode, tuple(span))) + lo
    score = np.bincount(inverse.ravel(), weights=vals)
    order = np.lexsort((cells[:, 3], cells[:, 2], cells[:, 1], cells[:, 0], -score))

    chosen = []
    for ci in order:
        cell = cells[ci]
        if any(c[3] == cell[3] and np.abs(c[:3] - cell[:3]).max() <= 1 for c in chosen):
            continue
        chosen.append(cell)
        if len(chosen) == n_candidates:
            break

    out = []
    for cell in chosen:
        near = (sidx == cell[3]) & (np.abs(u - cell[:3]).max(axis=1) <= 1.0)
        wk = h[near, 4] * np.prod(1.0 - np.abs(u[near] - cell[:3]), axis=1)
        if wk.sum() <= 0:
            wk = h[near, 4]
        dtheta = float(np.average(h[near, 0], weights=wk))
        out.append(AlignmentParams(math.radians(dtheta), float(np.average(h[near, 1], weights=wk)),
                                   float(np.average(h[near, 2], weights=wk)),
                                   float(scales[cell[3]]), (cx, cy)))
    return out


def alignment_matrix(query: RidgeFeature, reference: RidgeFeature, align: AlignmentParams,
                     tol: float = 3.0):
    """Return ``(fraction, mean_distance)`` M x N matrices for the aligned query."""
    m, n = len(query.ridges), len(reference.ridges)
    frac = np.zeros((m, n))
    dist = np.full((m, n), np.inf)
    if m == 0 or n == 0:
        return frac, dist
    pts = align.apply(query.all_points)
    pairs = cKDTree(pts).sparse_distance_matrix(reference.tree, tol, output_type="ndarray")
    if len(pairs) == 0:
        return frac, dist
    qidx = pairs["i"].astype(np.int64)
    rlab = reference.point_labels[pairs["j"]]
    d = pairs["v"]
    # nearest reference point per (query point, reference ridge)
    key = qidx * n + rlab
    order = np.lexsort((d, key))
    ks = key[order]
    first = np.ones(len(ks), dtype=bool)
    first[1:] = ks[1:] != ks[:-1]
    sel = order[first]
    qlab = query.point_labels[qidx[sel]]
    cell = qlab * n + rlab[sel]
    counts = np.bincount(cell, minlength=m * n).reshape(m, n)
    dsum = np.bincount(cell, weights=d[sel], minlength=m * n).reshape(m, n)
    lengths = np.array([len(r) for r in query.ridges], dtype=np.float64)
    frac = counts / lengths[:, None]
    with np.errstate(invalid="ignore", divide="ignore"):
        dist = np.where(counts > 0, dsum / np.maximum(counts, 1), np.inf)
    return frac, dist


def greedy_pairs(frac: np.ndarray, dist: np.ndarray, threshold: float = 0.5):
    """Pair rows to columns in descending match fraction (closer pairs first on ties)."""
    rows, cols = np.nonzero(frac >= threshold)
    if len(rows) == 0:
        return []
    order = np.lexsort((cols, rows, dist[rows, cols], -frac[rows, cols]))
    used_r, used_c, pairs = set(), set(), []
    for k in order:
        i, j = int(rows[k]), int(cols[k])
        if i in used_r or j in used_c:
            continue
        used_r.add(i)
        used_c.add(j)
        pairs.append((i, j))
    return pairs


def curvature_gate(query: RidgeFeature, reference: RidgeFeature, max_gap: int = 1) -> np.ndarray:
    """M x N mask of ridge pairs whose curvature classes are at most ``max_gap`` steps apart.

    Classes are ordered straight < curved < highly_curved. The default lets
    neighbouring classes pair, since a ridge near a class boundary can flip
    under rotation; straight never pairs with highly curved.
    """
    qc = np.array([CURVATURE_CLASSES.index(c) for c in query.curvature_class])
    rc = np.array([CURVATURE_CLASSES.index(c) for c in reference.curvature_class])
    return np.abs(qc[:, None] - rc[None, :]) <= max_gap


def match_ridges(query: RidgeFeature, reference: RidgeFeature, align: AlignmentParams,
                 tol: float = 3.0, gate_curvature: bool = False, max_gap: int = 1) -> MatchScore:
    m, n = len(query.ridges), len(reference.ridges)
    if m == 0 or n == 0:
        return MatchScore(0.0, align, 0)
    frac, dist = alignment_matrix(query, reference, align, tol)
    if gate_curvature:
        frac = np.where(curvature_gate(query, reference, max_gap), frac, 0.0)
    pairs = greedy_pairs(frac, dist)
    return MatchScore(len(pairs) / min(m, n), align, len(pairs))


def compare_ridge(query: RidgeFeature | None, reference: RidgeFeature | None, tol: float = 3.0,
                  candidates: list[AlignmentParams] | None = None) -> MatchScore:
    """Best curvature-gated ridge score over the registration candidates."""
    if query is None or reference is None or not query.ridges or not reference.ridges:
        size = query.image_size if query is not None else (0, 0)
        return MatchScore(0.0, AlignmentParams.identity(size), 0)
    if candidates is None:
        try:
            candidates = register(query, reference)
        except NoCandidate:
            return MatchScore(0.0, AlignmentParams.identity(query.image_size), 0)
    best = None
    for score in ridge_scores(query, reference, candidates, tol):
        if best is None or score.value > best.value:
            best = score
    return best


def ridge_scores(query: RidgeFeature, reference: RidgeFeature, candidates, tol: float = 3.0):
    """Curvature-gated ridge score of every candidate, in candidate order."""
    return [match_ridges(query, reference, a, tol, gate_curvature=True) for a in candidates]


def transform_feature(feat: RidgeFeature, align: AlignmentParams) -> RidgeFeature:
    """Move every ridge point by ``align`` (rounded to pixels) and recompute lines."""
    ridges = []
    for r in feat.ridges:
        pts = np.round(align.apply(r.points)).astype(np.int64)
        _, first = np.unique(pts, axis=0, return_index=True)
        ridges.append(Ridge(r.id, pts[np.sort(first)]))
    return build_ridge_feature(ridges, feat.image_size)
