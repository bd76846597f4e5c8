"""Per-image templates for all matchers and their pairwise comparison."""
from __future__ import annotations

import multiprocessing as mp
from dataclasses import dataclass, field

from .errors import EmptyTemplate, NoCandidate
from .imgproc import BlockMap, GrayImage
from .minutiae import MinutiaSet, compare_minutiae, extract_minutiae
from .pores import ADAPTIVE, BOX_HALVES, ISOTROPIC, PoreSet, best_alignment_pores, extract_pores
from .ridge_matcher import register, ridge_scores
from .ridges import RidgeFeature, preprocess, ridge_feature_from_skeleton

PORE_METHOD_OF = {"pores_iso": ISOTROPIC, "pores_adapt": ADAPTIVE}


@dataclass
class FingerTemplate:
    image_size: tuple[int, int]
    ridges: RidgeFeature | None = None
    minutiae: MinutiaSet | None = None
    pores: dict[str, PoreSet] = field(default_factory=dict)
    block_map: BlockMap | None = None


def extract_template(img: GrayImage, methods) -> FingerTemplate:
    """Run the shared preprocessing once and extract what ``methods`` need.

    Ridge features are always extracted when any pore method is requested,
    since pore matching is aligned by ridge registration.
    """
    methods = set(methods)
    pre = preprocess(img)
    tpl = FingerTemplate((img.width, img.height), block_map=pre.block_map)
    if methods & {"ridges", "pores_iso", "pores_adapt"}:
        try:
            tpl.ridges = ridge_feature_from_skeleton(pre.skeleton)
        except EmptyTemplate:
            tpl.ridges = None
    if "minutiae" in methods:
        tpl.minutiae = extract_minutiae(pre.skeleton, pre.block_map)
    ridge_px = pre.binary.pixels > 0.5
    for m, pm in PORE_METHOD_OF.items():
        if m in methods:
            tpl.pores[pm] = extract_pores(img, pre.block_map, pm, ridges=ridge_px)
    return tpl


def compare_templates(query: FingerTemplate, reference: FingerTemplate, methods,
                      box_half: int = 6, all_boxes: bool = False) -> dict:
    """Scores in [0, 1] keyed by method name.

    With ``all_boxes`` the pore methods also report ``<method>@<box_half>`` for
    every supported box size.
    """
    methods = set(methods)
    out: dict[str, float] = {}
    candidates = None
    if methods & {"ridges", "pores_iso", "pores_adapt"} and query.ridges is not None \
            and reference.ridges is not None:
        try:
            candidates = register(query.ridges, reference.ridges)
        except NoCandidate:
            candidates = []
    evidence = None
    if candidates:
        evidence = [s.value for s in ridge_scores(query.ridges, reference.ridges, candidates)]
    if "ridges" in methods:
        out["ridges"] = max(evidence) if evidence else 0.0
    if "minutiae" in methods:
        out["minutiae"] = compare_minutiae(query.minutiae, reference.minutiae).value
    boxes = sorted(set(BOX_HALVES) | {box_half}) if all_boxes else [box_half]
    for m, pm in PORE_METHOD_OF.items():
        if m not in methods:
            continue
        if not candidates:
            scores = {b: 0.0 for b in boxes}
        else:
            res = best_alignment_pores(query.ridges, reference.ridges, query.pores.get(pm),
                                       reference.pores.get(pm), boxes, candidates, evidence)
            scores = {b: s.value for b, s in res.items()}
        out[m] = scores[box_half]
        if all_boxes:
            for b in boxes:
                out[f"{m}@{b}"] = scores[b]
    return out


# Workers read the shared state through module globals inherited on fork.
_STATE: dict = {}


def _extract_entry(key):
    corpus, methods = _STATE["corpus"], _STATE["methods"]
    entry = _STATE["entries"][key]
    return key, extract_template(corpus.load(entry), methods)


def _compare_pair(pair):
    q, r = pair
    t = _STATE["templates"]
    return compare_templates(t[q], t[r], _STATE["methods"], _STATE["box_half"])


def _pool(jobs: int):
    try:
        ctx = mp.get_context("fork")
    except ValueError:
        ctx = mp.get_context()
    return ctx.Pool(jobs)


def extract_many(corpus, entries, methods, jobs: int = 1) -> dict[str, FingerTemplate]:
    _STATE.update(corpus=corpus, methods=list(methods), entries={e.key: e for e in entries})
    keys = [e.key for e in entries]
    try:
        if jobs > 1:
            with _pool(jobs) as pool:
                return dict(pool.map(_extract_entry, keys, chunksize=4))
        return dict(map(_extract_entry, keys))
    finally:
        _STATE.clear()


def compare_many(templates, pairs, methods, box_half: int = 6, jobs: int = 1, progress=None) -> list[dict]:
    _STATE.update(templates=templates, methods=list(methods), box_half=box_half)
    out = []
    try:
        if jobs > 1:
            with _pool(jobs) as pool:
                for k, res in enumerate(pool.imap(_compare_pair, pairs, chunksize=16)):
                    out.append(res)
                    if progress:
                        progress(k + 1, len(pairs))
        else:
            for k, pair in enumerate(pairs):
                out.append(_compare_pair(pair))
                if progress:
                    progress(k + 1, len(pairs))
    finally:
        _STATE.clear()
    return out
