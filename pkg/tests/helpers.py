import math

import numpy as np

from fpfusion.imgproc import GrayImage
from fpfusion.synth import crest_positions, plant_dots, sinusoid, varying_period_phase


def planted_fixed_period(rng, period=10.0, n=20, noise=0.03, dots=True, sigma=2.5, amplitude=0.5):
    """Straight ridges at a random angle with ``n`` bright dots planted on crests."""
    ang = rng.uniform(0, 180)
    px = sinusoid(period, ang, (320, 240))
    a = math.radians(ang)
    pts = []
    while len(pts) < n:
        x, y = rng.uniform(20, 300), rng.uniform(20, 220)
        d = -x * math.sin(a) + y * math.cos(a)
        e = round(d / period) * period - d
        x, y = x - e * math.sin(a), y + e * math.cos(a)
        if 15 < x < 305 and 15 < y < 225 and all(math.hypot(x - p[0], y - p[1]) >= 12 for p in pts):
            pts.append((x, y))
    if dots:
        px = plant_dots(px, pts, sigma, amplitude)
    px = np.clip(px + rng.normal(0, noise, px.shape), 0, 1)
    return GrayImage(px), np.array(pts)


def planted_varying_period(rng, p_left=7.0, p_right=12.0, n=20, noise=0.05, gains=(0.2, 0.4)):
    """Vertical ridges whose period grows left to right; dot size follows the local period."""
    phi, period = varying_period_phase((320, 240), p_left, p_right)
    px = 0.5 - 0.4 * np.cos(phi)
    crests = crest_positions(phi[0])
    pts, sig = [], []
    while len(pts) < n:
        x = crests[rng.integers(len(crests))]
        y = rng.uniform(15, 225)
        if 15 < x < 305 and all(math.hypot(x - p[0], y - p[1]) >= 12 for p in pts):
            pts.append((x, y))
            sig.append(0.25 * np.interp(x, np.arange(320), period))
    px = plant_dots(px, pts, np.array(sig), rng.uniform(gains[0], gains[1], len(pts)))
    px = np.clip(px + rng.normal(0, noise, px.shape), 0, 1)
    return GrayImage(px), np.array(pts)


def detection_stats(found: np.ndarray, truth: np.ndarray, tol: float = 2.0):
    """(recall, false alarms) matching detections to planted centers within ``tol`` px."""
    if len(truth) == 0:
        return 1.0, len(found)
    if len(found) == 0:
        return 0.0, 0
    d = np.hypot(found[:, None, 0] - truth[None, :, 0], found[:, None, 1] - truth[None, :, 1])
    return float((d.min(axis=0) <= tol).mean()), int((d.min(axis=1) > tol).sum())


def brute_force_eer(genuine, impostor):
    """EER by direct counting at every candidate threshold, interpolated at the crossing.

    Candidate thresholds are every observed score plus one above the maximum.
    FAR counts impostors with score >= t, FRR genuines with score < t.
    """
    g, imp = list(genuine), list(impostor)
    ts = sorted(set(g) | set(imp))
    ts.append(math.inf)
    rows = []
    for t in ts:
        far = sum(1 for s in imp if s >= t) / len(imp)
        frr = sum(1 for s in g if s < t) / len(g)
        rows.append((far, frr))
    for (f0, r0), (f1, r1) in zip(rows, rows[1:]):
        if f0 - r0 > 0 and f1 - r1 <= 0:
            lam = (f0 - r0) / ((f0 - r0) - (f1 - r1))
            return f0 + lam * (f1 - f0)
    raise AssertionError("no crossing")
