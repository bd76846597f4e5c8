"""Analytic ridge-pattern rendering used by the synthetic corpus and the tests.

A finger is a phase field ``phi(x, y)``; intensity is ``0.5 - a*cos(phi)`` so
ridge crests (``phi = 0 mod 2pi``) are dark. Minutiae come from spiral phase
singularities, pores are bright Gaussian dots sitting on crests.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


def sinusoid(period: float, angle_deg: float, size=(320, 240), amplitude=0.4, phase=0.0) -> np.ndarray:
    """Straight parallel ridges flowing along ``angle_deg``; returns a ``(h, w)`` array."""
    w, h = size
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    a = math.radians(angle_deg)
    d = -xx * math.sin(a) + yy * math.cos(a)
    return 0.5 - amplitude * np.cos(2 * math.pi * d / period + phase)


def plant_dots(pixels: np.ndarray, centers, sigma, amplitude=0.5) -> np.ndarray:
    """Add bright Gaussian dots; ``sigma`` and ``amplitude`` may be scalars or one value per dot."""
    out = pixels.copy()
    h, w = out.shape
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 2)
    sigmas = np.broadcast_to(np.asarray(sigma, dtype=np.float64), (len(centers),))
    amps = np.broadcast_to(np.asarray(amplitude, dtype=np.float64), (len(centers),))
    for (cx, cy), s, amp in zip(centers, sigmas, amps):
        r = int(math.ceil(4 * s))
        x0, x1 = max(int(cx) - r, 0), min(int(cx) + r + 2, w)
        y0, y1 = max(int(cy) - r, 0), min(int(cy) + r + 2, h)
        if x0 >= x1 or y0 >= y1:
            continue
        yy, xx = np.mgrid[y0:y1, x0:x1]
        out[y0:y1, x0:x1] += amp * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * s * s))
    return np.clip(out, 0.0, 1.0)


def varying_period_phase(size, p_left: float, p_right: float):
    """Phase of vertical ridges whose period grows linearly from left to right."""
    w, h = size
    x = np.arange(w, dtype=np.float64)
    period = p_left + (p_right - p_left) * x / (w - 1)
    # cumulative integral of 2*pi/period along x
    phi_x = np.concatenate([[0.0], np.cumsum(0.5 * (2 * np.pi / period[1:] + 2 * np.pi / period[:-1]))])
    return np.broadcast_to(phi_x, (h, w)).copy(), period


def crest_positions(phi_row: np.ndarray) -> np.ndarray:
    """x positions where a 1-D phase profile crosses a multiple of 2*pi."""
    k = np.arange(math.ceil(phi_row[0] / (2 * np.pi)), math.floor(phi_row[-1] / (2 * np.pi)) + 1)
    return np.interp(2 * np.pi * k, phi_row, np.arange(len(phi_row), dtype=np.float64))


def _wrap(a):
    return (a + np.pi) % (2 * np.pi) - np.pi


@dataclass
class MasterFinger:
    """Phase-field model of one finger, in master-plane coordinates.

    The base flow is concentric about ``center`` (a far center gives gently
    curved ridges, a near one gives a whorl), perturbed by one low-order
    harmonic. Each entry of ``singularities`` is ``(x, y, sign)``.
    """

    period: float
    center: tuple[float, float]
    harmonic: tuple[float, float, float, float] = (0.0, 0.0, 1.0, 0.0)
    singularities: list = field(default_factory=list)
    pores: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    def phase(self, x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        amp, beta, wavelength, offset = self.harmonic
        g = np.hypot(x - self.center[0], y - self.center[1])
        g = g + amp * np.sin(2 * np.pi * (x * math.cos(beta) + y * math.sin(beta)) / wavelength + offset)
        phi = 2 * np.pi * g / self.period
        for sx, sy, sign in self.singularities:
            phi = phi + sign * np.arctan2(y - sy, x - sx)
        return phi

    def phase_gradient(self, x, y, eps=0.5):
        gx = _wrap(self.phase(x + eps, y) - self.phase(x - eps, y)) / (2 * eps)
        gy = _wrap(self.phase(x, y + eps) - self.phase(x, y - eps)) / (2 * eps)
        return gx, gy

    def snap_to_crest(self, pts: np.ndarray, iterations=4) -> np.ndarray:
        """Newton-project points onto the nearest dark crest along the phase gradient."""
        p = np.array(pts, dtype=np.float64)
        for _ in range(iterations):
            gx, gy = self.phase_gradient(p[:, 0], p[:, 1])
            g2 = np.maximum(gx * gx + gy * gy, 1e-9)
            err = _wrap(self.phase(p[:, 0], p[:, 1]))
            p[:, 0] -= err * gx / g2
            p[:, 1] -= err * gy / g2
        return p

    def render(self, xs, ys, amplitude=0.4):
        return 0.5 - amplitude * np.cos(self.phase(xs, ys))


def random_master(rng: np.random.Generator, extent, period, n_minutiae=(1, 3),
                  pore_density=30.0, pore_spacing=None) -> MasterFinger:
    """Draw a finger model covering ``extent = (width, height)`` of the master plane."""
    w, h = extent
    cx, cy = w / 2, h / 2
    dist = rng.uniform(0.25, 2.5) * max(w, h)
    ang = rng.uniform(0, 2 * np.pi)
    center = (cx + dist * math.cos(ang), cy + dist * math.sin(ang))
    harmonic = (rng.uniform(1.0, 4.0) * period / 10, rng.uniform(0, np.pi),
                rng.uniform(0.8, 1.6) * max(w, h), rng.uniform(0, 2 * np.pi))
    n_sing = int(rng.integers(n_minutiae[0], n_minutiae[1] + 1))
    sing = []
    for _ in range(n_sing):
        sing.append((rng.uniform(0.25, 0.75) * w, rng.uniform(0.25, 0.75) * h, float(rng.choice([-1, 1]))))
    finger = MasterFinger(period, center, harmonic, sing)
    finger.pores = _plant_master_pores(rng, finger, extent, pore_density, pore_spacing)
    return finger


def _plant_master_pores(rng, finger, extent, density, spacing):
    w, h = extent
    ridge_len = w * h / finger.period
    n = int(round(density * ridge_len / 1000.0))
    if n <= 0:
        return np.zeros((0, 2))
    spacing = spacing if spacing is not None else 0.8 * finger.period
    cand = np.column_stack([rng.uniform(0, w, 4 * n), rng.uniform(0, h, 4 * n)])
    cand = finger.snap_to_crest(cand)
    resid = np.abs(_wrap(finger.phase(cand[:, 0], cand[:, 1])))
    ok = (resid < 0.15) & (cand[:, 0] >= 0) & (cand[:, 0] < w) & (cand[:, 1] >= 0) & (cand[:, 1] < h)
    for sx, sy, _ in finger.singularities:
        ok &= np.hypot(cand[:, 0] - sx, cand[:, 1] - sy) > finger.period
    kept = []
    for p in cand[ok]:
        if all((p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2 >= spacing ** 2 for q in kept):
            kept.append(p)
            if len(kept) == n:
                break
    return np.array(kept).reshape(-1, 2)
