"""Corpus indexing (``<finger>_<session>_<sample>.pgm`` layout) and synthetic fragments."""
from __future__ import annotations

import csv
import json
import math
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import CorpusShape, ParseError
from .imgproc import DEFAULT_DPI, GrayImage, read_pgm, write_pgm
from .synth import MasterFinger, random_master

_NAME = re.compile(r"^(?P<finger>[^_/\\]+)_(?P<session>[12])_(?P<sample>\d+)\.pgm$", re.IGNORECASE)


@dataclass(frozen=True)
class CorpusEntry:
    finger_id: str
    session: int
    sample: int
    image_path: Path

    @property
    def key(self) -> str:
        return f"{self.finger_id}_{self.session}_{self.sample}"


@dataclass
class CorpusIndex:
    entries: list[CorpusEntry]
    dpi: float = DEFAULT_DPI
    samples_per_session: int = 5

    def fingers(self) -> list[str]:
        return sorted({e.finger_id for e in self.entries}, key=_finger_sort_key)

    def get(self, finger_id: str, session: int, sample: int) -> CorpusEntry:
        return self._lookup[(finger_id, session, sample)]

    @property
    def _lookup(self):
        cache = self.__dict__.get("_cache")
        if cache is None:
            cache = {(e.finger_id, e.session, e.sample): e for e in self.entries}
            self.__dict__["_cache"] = cache
        return cache

    def load(self, entry: CorpusEntry) -> GrayImage:
        return read_pgm(entry.image_path, self.dpi)

    def validate_shape(self) -> None:
        if not self.entries:
            raise CorpusShape("corpus is empty")
        n = self.samples_per_session
        seen = set()
        for e in self.entries:
            k = (e.finger_id, e.session, e.sample)
            if k in seen:
                raise CorpusShape(f"duplicate entry for finger {e.finger_id} session {e.session} sample {e.sample}")
            seen.add(k)
        for f in self.fingers():
            missing = [(s, k) for s in (1, 2) for k in range(1, n + 1) if (f, s, k) not in seen]
            if missing:
                s, k = missing[0]
                raise CorpusShape(f"finger {f} lacks session {s} sample {k} "
                                  f"({len(missing)} of {2 * n} samples missing)")
        extra = [e for e in self.entries if e.sample > n]
        if extra:
            raise CorpusShape(f"finger {extra[0].finger_id} has more than {n} samples per session")


def _finger_sort_key(f: str):
    return (0, int(f), f) if f.isdigit() else (1, 0, f)


def index_corpus(root, samples_per_session: int = 5, dpi: float = DEFAULT_DPI,
                 manifest=None, check_images: bool = True) -> CorpusIndex:
    """Index a directory of PGM fragments and check the two-session layout.

    ``manifest`` (a CSV with columns ``finger_id,session,sample,path``) replaces
    the file-name convention; relative paths resolve against ``root``.
    """
    root = Path(root)
    entries = []
    if manifest is not None:
        with open(manifest, newline="") as fh:
            for row in csv.DictReader(fh):
                p = Path(row["path"])
                entries.append(CorpusEntry(row["finger_id"], int(row["session"]), int(row["sample"]),
                                           p if p.is_absolute() else root / p))
    else:
        if not root.is_dir():
            raise CorpusShape(f"{root} is not a directory")
        for p in sorted(root.rglob("*")):
            m = _NAME.match(p.name)
            if m and p.is_file():
                entries.append(CorpusEntry(m["finger"], int(m["session"]), int(m["sample"]), p))
    entries.sort(key=lambda e: (_finger_sort_key(e.finger_id), e.session, e.sample))
    index = CorpusIndex(entries, dpi, samples_per_session)
    index.validate_shape()
    if check_images:
        for e in entries:
            if not e.image_path.is_file():
                raise CorpusShape(f"finger {e.finger_id}: missing file {e.image_path}")
            index.load(e)
    return index


@dataclass(frozen=True)
class SynthSpec:
    n_fingers: int = 20
    samples_per_session: int = 5
    seed: int = 0
    image_size: tuple[int, int] = (320, 240)
    ridge_period: float = 10.0
    pore_density: float = 30.0
    jitter: float = 1.5
    rotation_range: float = 10.0
    max_shift: float = 20.0
    noise: float = 0.06
    distortion: float = 1.5
    crop_fraction: tuple[float, float] = (0.0, 0.3)
    n_minutiae: tuple[int, int] = (1, 3)
    dpi: float = DEFAULT_DPI

    def __post_init__(self):
        if self.n_fingers < 1 or self.samples_per_session < 1:
            raise ValueError("need at least one finger and one sample per session")
        if min(self.image_size) < 32:
            raise ValueError("image_size must be at least 32x32")
        if self.ridge_period <= 0 or self.pore_density < 0 or self.jitter < 0:
            raise ValueError("ridge_period must be positive; pore_density and jitter non-negative")


@dataclass
class Impression:
    image: GrayImage
    pores: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))


def master_extent(spec: SynthSpec) -> tuple[float, float]:
    w, h = spec.image_size
    margin = spec.max_shift + 0.5 * math.hypot(w, h) * math.sin(math.radians(spec.rotation_range)) + 8
    return w + 2 * margin, h + 2 * margin


def _displacement(rng, amplitude):
    """Smooth random displacement field (one low-frequency mode per axis)."""
    if amplitude <= 0:
        return lambda u, v: (0.0 * u, 0.0 * v)
    k = rng.uniform(0.004, 0.012, size=4)
    ph = rng.uniform(0, 2 * np.pi, size=4)

    def field_(u, v):
        return (amplitude * np.sin(k[0] * u + k[1] * v + ph[0]),
                amplitude * np.sin(k[2] * u - k[3] * v + ph[1]))
    return field_


def render_impression(finger: MasterFinger, spec: SynthSpec, rng: np.random.Generator) -> Impression:
    """One fragment: random rigid pose, smooth distortion, pressure, noise and a crop."""
    w, h = spec.image_size
    mw, mh = master_extent(spec)
    alpha = math.radians(rng.uniform(-spec.rotation_range, spec.rotation_range))
    shift = rng.uniform(-spec.max_shift, spec.max_shift, size=2)
    disp = _displacement(rng, spec.distortion)
    amplitude = rng.uniform(0.3, 0.42)
    bias = rng.uniform(-0.25, 0.25)

    ca, sa = math.cos(alpha), math.sin(alpha)
    vv, uu = np.mgrid[0:h, 0:w].astype(np.float64)
    du, dv = disp(uu, vv)
    x0, y0 = uu - w / 2 + du, vv - h / 2 + dv
    mx = ca * x0 - sa * y0 + mw / 2 + shift[0]
    my = sa * x0 + ca * y0 + mh / 2 + shift[1]
    # pressure: ridge width follows the bias of a soft-thresholded cosine
    wave = np.tanh(2.0 * (np.cos(finger.phase(mx, my)) + bias)) / math.tanh(2.0)
    px = 0.5 - amplitude * wave

    pores = np.zeros((0, 2))
    if len(finger.pores):
        rel = finger.pores - np.array([mw / 2 + shift[0], mh / 2 + shift[1]])
        u = ca * rel[:, 0] + sa * rel[:, 1] + w / 2
        v = -sa * rel[:, 0] + ca * rel[:, 1] + h / 2
        pdu, pdv = disp(u, v)
        u, v = u - pdu, v - pdv
        if spec.jitter > 0:
            r = spec.jitter * np.sqrt(rng.uniform(0, 1, len(u)))
            t = rng.uniform(0, 2 * np.pi, len(u))
            u, v = u + r * np.cos(t), v + r * np.sin(t)
        inside = (u >= -4) & (u < w + 4) & (v >= -4) & (v < h + 4)
        pores = np.column_stack([u, v])[inside]
        gains = rng.uniform(0.35, 0.6, len(pores))
        sigma = 0.25 * spec.ridge_period
        for (pu, pv), g in zip(pores, gains):
            r = int(math.ceil(4 * sigma))
            xa, xb = max(int(pu) - r, 0), min(int(pu) + r + 2, w)
            ya, yb = max(int(pv) - r, 0), min(int(pv) + r + 2, h)
            if xa >= xb or ya >= yb:
                continue
            gy, gx = np.mgrid[ya:yb, xa:xb]
            px[ya:yb, xa:xb] += g * np.exp(-((gx - pu) ** 2 + (gy - pv) ** 2) / (2 * sigma * sigma))

    lo, hi = spec.crop_fraction
    frac = rng.uniform(lo, hi) if hi > 0 else 0.0
    if frac > 0:
        # cut off a half-plane holding ``frac`` of the frame, with a soft edge
        ang = rng.uniform(0, 2 * np.pi)
        proj = (uu - w / 2) * math.cos(ang) + (vv - h / 2) * math.sin(ang)
        edge = np.quantile(proj, 1 - frac)
        keep = 1.0 / (1.0 + np.exp((proj - edge) / 3.0))
        px = keep * px + (1 - keep) * 0.85
        if len(pores):
            pp = (pores[:, 0] - w / 2) * math.cos(ang) + (pores[:, 1] - h / 2) * math.sin(ang)
            pores = pores[pp < edge - 6]
    if spec.noise > 0:
        px = px + rng.normal(0.0, spec.noise, size=px.shape)
    return Impression(GrayImage(np.clip(px, 0.0, 1.0), spec.dpi), pores)


def synthetic_fingers(spec: SynthSpec):
    """Yield ``(finger_id, master, rng)`` with one independent generator per finger."""
    extent = master_extent(spec)
    for f in range(spec.n_fingers):
        rng = np.random.default_rng([spec.seed, f])
        master = random_master(rng, extent, spec.ridge_period, spec.n_minutiae, spec.pore_density)
        yield f"{f + 1:03d}", master, rng


def generate_synthetic(spec: SynthSpec, out_path) -> CorpusIndex:
    """Render ``n_fingers x 2 sessions x samples_per_session`` PGM fragments into ``out_path``."""
    out = Path(out_path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        entries = []
        for fid, master, rng in synthetic_fingers(spec):
            for session in (1, 2):
                for sample in range(1, spec.samples_per_session + 1):
                    imp = render_impression(master, spec, rng)
                    path = out / f"{fid}_{session}_{sample}.pgm"
                    write_pgm(path, imp.image)
                    entries.append(CorpusEntry(fid, session, sample, path))
        spec_dict = asdict(spec)
        (out / "synth_spec.json").write_text(json.dumps(spec_dict, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write synthetic corpus to {out}: {exc}") from exc
    return CorpusIndex(entries, spec.dpi, spec.samples_per_session)


__all__ = ["CorpusEntry", "CorpusIndex", "SynthSpec", "index_corpus", "generate_synthetic",
           "render_impression", "synthetic_fingers", "ParseError"]
