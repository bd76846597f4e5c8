"""Weighted-sum score fusion, EER/ROC evaluation and the genuine/impostor protocol."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import CorpusShape, EmptySide, MissingScore

METHODS = ("minutiae", "ridges", "pores_iso", "pores_adapt")
GENUINE, IMPOSTOR = "genuine", "impostor"


@dataclass
class ComparisonRecord:
    probe_id: str
    gallery_id: str
    label: str
    scores: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.label not in (GENUINE, IMPOSTOR):
            raise ValueError(f"label must be genuine or impostor, got {self.label!r}")
        for m, s in self.scores.items():
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}")
            if not 0.0 <= s <= 1.0:
                raise ValueError(f"score for {m} out of [0, 1]: {s}")


@dataclass(frozen=True)
class FusionWeights:
    weights: dict[str, float]

    def __post_init__(self):
        if any(w < 0 for w in self.weights.values()):
            raise ValueError("fusion weights must be non-negative")
        if abs(sum(self.weights.values()) - 1.0) > 1e-9:
            raise ValueError(f"fusion weights must sum to 1, got {sum(self.weights.values())}")

    def vector(self, methods: Sequence[str]) -> np.ndarray:
        return np.array([self.weights.get(m, 0.0) for m in methods])


@dataclass
class EvalReport:
    eer: float
    threshold_at_eer: float
    roc: list[tuple[float, float, float]]
    n_genuine: int
    n_impostor: int

    def write_roc(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["threshold", "far", "frr"])
            for t, far, frr in self.roc:
                w.writerow([repr(float(t)), repr(float(far)), repr(float(frr))])


def fuse(record: ComparisonRecord, w: FusionWeights) -> float:
    total = 0.0
    for m, wm in w.weights.items():
        if m not in record.scores:
            raise MissingScore(f"record {record.probe_id}/{record.gallery_id} has no {m} score")
        total += wm * record.scores[m]
    return min(max(total, 0.0), 1.0)


def _rates(genuine: np.ndarray, impostor: np.ndarray):
    g = np.sort(genuine)
    i = np.sort(impostor)
    thresholds = np.unique(np.concatenate([g, i]))
    thresholds = np.append(thresholds, np.nextafter(thresholds[-1], np.inf))
    far = (len(i) - np.searchsorted(i, thresholds, side="left")) / len(i)
    frr = np.searchsorted(g, thresholds, side="left") / len(g)
    return thresholds, far, frr


def compute_eer(genuine: Iterable[float], impostor: Iterable[float]) -> EvalReport:
    """Equal error rate with linear interpolation at the FAR/FRR crossing.

    A score ``s`` is accepted at threshold ``t`` when ``s >= t``. Thresholds are
    the observed scores plus one just above the maximum, where FAR = 0 and
    FRR = 1.
    """
    g = np.asarray(list(genuine), dtype=np.float64)
    i = np.asarray(list(impostor), dtype=np.float64)
    if len(g) == 0 or len(i) == 0:
        raise EmptySide(f"need genuine and impostor scores (got {len(g)} and {len(i)})")
    thresholds, far, frr = _rates(g, i)
    d = far - frr
    k = int(np.argmax(d <= 0))
    lam = d[k - 1] / (d[k - 1] - d[k])
    eer = far[k - 1] + lam * (far[k] - far[k - 1])
    thr = thresholds[k - 1] + lam * (thresholds[k] - thresholds[k - 1])
    roc = list(zip(thresholds.tolist(), far.tolist(), frr.tolist()))
    return EvalReport(float(eer), float(thr), roc, len(g), len(i))


def _simplex(k: int, n: int):
    """All non-negative integer k-vectors summing to n, in ascending lexicographic order."""
    if k == 1:
        yield (n,)
        return
    for first in range(n + 1):
        for rest in _simplex(k - 1, n - first):
            yield (first,) + rest


def score_matrix(records: Sequence[ComparisonRecord], methods: Sequence[str]):
    s = np.empty((len(records), len(methods)))
    labels = np.empty(len(records), dtype=bool)
    for r, rec in enumerate(records):
        labels[r] = rec.label == GENUINE
        for c, m in enumerate(methods):
            if m not in rec.scores:
                raise MissingScore(f"record {rec.probe_id}/{rec.gallery_id} has no {m} score")
            s[r, c] = rec.scores[m]
    return s, labels


def grid_search_weights(records: Sequence[ComparisonRecord], methods: Iterable[str],
                        step: float = 0.05) -> tuple[FusionWeights, EvalReport]:
    """Exhaustive search of the weight simplex for the lowest fused EER.

    Methods are ordered by name; ties keep the lexicographically smallest
    weight vector.
    """
    methods = sorted(set(methods))
    if not methods:
        raise ValueError("no methods to fuse")
    n = int(round(1.0 / step))
    if n <= 0 or abs(n * step - 1.0) > 1e-9:
        raise ValueError(f"step {step} does not divide 1")
    s, labels = score_matrix(records, methods)
    best = None
    for combo in _simplex(len(methods), n):
        w = np.array(combo, dtype=np.float64) / n
        fused = s @ w
        rep = compute_eer(fused[labels], fused[~labels])
        if best is None or rep.eer < best[1].eer - 1e-12:
            best = (w, rep)
    w, rep = best
    return FusionWeights({m: float(x) for m, x in zip(methods, w)}), rep


def method_report(records: Sequence[ComparisonRecord], method: str) -> EvalReport:
    s, labels = score_matrix(records, [method])
    return compute_eer(s[labels, 0], s[~labels, 0])


def finger_of(sample_id: str) -> str:
    return sample_id.rsplit("_", 2)[0]


def holdout_split(records: Sequence[ComparisonRecord]):
    """Split records by finger into alternating halves; cross-half impostors are dropped."""
    fingers = sorted({finger_of(r.probe_id) for r in records} | {finger_of(r.gallery_id) for r in records})
    first = set(fingers[0::2])
    a, b = [], []
    for r in records:
        pf, gf = finger_of(r.probe_id), finger_of(r.gallery_id)
        if pf in first and gf in first:
            a.append(r)
        elif pf not in first and gf not in first:
            b.append(r)
    return a, b


def protocol_pairs(corpus) -> list[tuple[object, object, str]]:
    """Probe/gallery pairs of the two-session protocol.

    Genuine: every session-2 sample against every session-1 sample of the same
    finger. Impostor: the first session-2 sample of each finger against the
    first session-1 sample of every other finger.
    """
    corpus.validate_shape()
    n = corpus.samples_per_session
    fingers = corpus.fingers()
    pairs = []
    for f in fingers:
        for a in range(1, n + 1):
            for b in range(1, n + 1):
                pairs.append((corpus.get(f, 2, a), corpus.get(f, 1, b), GENUINE))
    for f in fingers:
        for g in fingers:
            if f != g:
                pairs.append((corpus.get(f, 2, 1), corpus.get(g, 1, 1), IMPOSTOR))
    return pairs


def run_protocol(corpus, methods: Iterable[str], box_half: int = 6, jobs: int = 1,
                 progress=None) -> list[ComparisonRecord]:
    """Score every protocol pair with the requested matchers."""
    from . import pipeline

    methods = [m for m in METHODS if m in set(methods)]
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise ValueError(f"unknown methods {sorted(unknown)}")
    pairs = protocol_pairs(corpus)
    if not pairs:
        raise CorpusShape("corpus produced no comparisons")
    needed = sorted({p.key: p for pair in pairs for p in pair[:2]}.values(), key=lambda e: e.key)
    templates = pipeline.extract_many(corpus, needed, methods, jobs=jobs)
    jobs_list = [(p.key, g.key) for p, g, _ in pairs]
    scores = pipeline.compare_many(templates, jobs_list, methods, box_half, jobs=jobs, progress=progress)
    return [ComparisonRecord(p.key, g.key, label, sc) for (p, g, label), sc in zip(pairs, scores)]


CSV_COLUMNS = ["probe_id", "gallery_id", "label"] + [f"score_{m}" for m in METHODS]


def write_records(path, records: Sequence[ComparisonRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow([r.probe_id, r.gallery_id, r.label]
                       + [repr(float(r.scores[m])) if m in r.scores else "" for m in METHODS])


def read_records(path) -> list[ComparisonRecord]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(CSV_COLUMNS[:3]) - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            scores = {m: float(row[f"score_{m}"]) for m in METHODS if row.get(f"score_{m}", "").strip()}
            out.append(ComparisonRecord(row["probe_id"], row["gallery_id"], row["label"], scores))
    return out


def methods_present(records: Sequence[ComparisonRecord]) -> list[str]:
    return [m for m in METHODS if records and all(m in r.scores for r in records)]


def pct(x: float) -> str:
    return f"{100 * x:.2f}%" if math.isfinite(x) else "n/a"
