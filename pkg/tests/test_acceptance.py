"""Acceptance gate: one test per criterion, each reported as a PASS/FAIL line in the summary."""
import math
import os
import tempfile
import time
from itertools import combinations
from pathlib import Path

import numpy as np
from hypothesis import given, settings, strategies as st

from fpfusion.corpus import (CorpusEntry, CorpusIndex, SynthSpec, generate_synthetic, index_corpus,
                             render_impression, synthetic_fingers)
from fpfusion.fusion import (GENUINE, IMPOSTOR, METHODS, compute_eer, grid_search_weights, method_report,
                             protocol_pairs, run_protocol)
from fpfusion.imgproc import GrayImage, estimate_block_map
from fpfusion.minutiae import Minutia, MinutiaSet, compare_minutiae
from fpfusion.minutiae import dumps as dump_minutiae
from fpfusion.minutiae import loads as load_minutiae
from fpfusion.pipeline import extract_template
from fpfusion.pores import (ADAPTIVE, ISOTROPIC, Pore, PoreSet, best_alignment_pores, extract_pores_adaptive,
                            extract_pores_isotropic)
from fpfusion.pores import dumps as dump_pores
from fpfusion.pores import loads as load_pores
from fpfusion.ridge_matcher import AlignmentParams, compare_ridge, register, transform_feature
from fpfusion.ridges import dumps as dump_ridges
from fpfusion.ridges import hough_lines, thin
from fpfusion.ridges import loads as load_ridges

from helpers import brute_force_eer, detection_stats, planted_fixed_period, planted_varying_period

RESULTS = []

REFERENCE = {
    ("minutiae",): 25.08, ("ridges",): 23.50, ("pores_iso",): 26.02, ("pores_adapt",): 23.22,
    ("minutiae", "ridges"): 22.01, ("pores_iso", "ridges"): 22.31, ("pores_adapt", "ridges"): 9.35,
    ("minutiae", "pores_iso"): 10.45, ("minutiae", "pores_adapt"): 9.08,
    ("minutiae", "pores_iso", "ridges"): 8.57, ("minutiae", "pores_adapt", "ridges"): 8.74,
}
TRIPLES = (("minutiae", "pores_iso", "ridges"), ("minutiae", "pores_adapt", "ridges"))


def record(number, name, ok, detail):
    RESULTS.append(f"CRITERION {number} {'PASS' if ok else 'FAIL'}: {name}: {detail}")
    assert ok, detail


def _fake_corpus(fingers, n=5):
    entries = [CorpusEntry(f"{f:03d}", s, k, Path(f"{f:03d}_{s}_{k}.pgm"))
               for f in range(1, fingers + 1) for s in (1, 2) for k in range(1, n + 1)]
    return CorpusIndex(entries, samples_per_session=n)


def _subset_eers(records, methods):
    out = {}
    for k in range(1, len(methods) + 1):
        for combo in combinations(sorted(methods), k):
            out[combo] = grid_search_weights(records, combo)[1].eer
    return out


def _ordering_ok(eers):
    """Pairwise fusion beats its better component; each triple beats its pairwise subsets."""
    bad = []
    for combo, e in eers.items():
        if len(combo) == 2 and e > min(eers[(m,)] for m in combo) + 1e-12:
            bad.append(combo)
        if len(combo) == 3 and any(e > eers[p] + 1e-12 for p in combinations(combo, 2)):
            bad.append(combo)
    return bad


def test_criterion_1_protocol_counts_and_real_data_ordering():
    pairs = protocol_pairs(_fake_corpus(148))
    n_gen = sum(p[2] == GENUINE for p in pairs)
    n_imp = sum(p[2] == IMPOSTOR for p in pairs)
    counts_ok = (n_gen, n_imp) == (3700, 21756)
    root = os.environ.get("POLYU_HRF_ROOT")
    if not root:
        record(1, "protocol counts", counts_ok,
               f"{n_gen} genuine / {n_imp} impostor for 148 fingers; real-data ordering SKIPPED "
               f"(set POLYU_HRF_ROOT to a PolyU HRF I tree)")
        return
    corpus = index_corpus(root)
    records = run_protocol(corpus, METHODS, jobs=os.cpu_count() or 1)
    real_gen = sum(r.label == GENUINE for r in records)
    eers = _subset_eers(records, METHODS)
    bad = _ordering_ok(eers)
    table = "; ".join(f"{'+'.join(c)} {100 * e:.2f}% (ref {REFERENCE[c]:.2f}%)"
                      for c, e in eers.items() if c in REFERENCE)
    ok = counts_ok and (real_gen, len(records) - real_gen) == (3700, 21756) and not bad
    record(1, "protocol counts and fusion ordering", ok,
           f"{real_gen}/{len(records) - real_gen} records; ordering violations {bad}; {table}")


def _synthetic_seed(seed):
    with tempfile.TemporaryDirectory() as d:
        t0 = time.time()
        corpus = generate_synthetic(SynthSpec(n_fingers=20, samples_per_session=5, seed=seed), d)
        records = run_protocol(corpus, METHODS, jobs=os.cpu_count() or 1)
        elapsed = time.time() - t0
    single = {m: method_report(records, m).eer for m in METHODS}
    triples = {c: grid_search_weights(records, c)[1].eer for c in TRIPLES}
    n_gen = sum(r.label == GENUINE for r in records)
    return single, triples, (n_gen, len(records) - n_gen), elapsed


def test_criterion_2_synthetic_fusion_dominance():
    rows, dominated, gaps, slow, counts = [], True, {c: 0 for c in TRIPLES}, [], set()
    for seed in range(5):
        single, triples, cnt, elapsed = _synthetic_seed(seed)
        counts.add(cnt)
        parts = []
        for c, e in triples.items():
            best_single = min(single[m] for m in c)
            dominated &= e <= best_single + 1e-12
            gap = 100 * (best_single - e)
            gaps[c] += gap >= 2.0
            parts.append(f"{c[1]} triple {100 * e:.2f}% (gap {gap:.2f} pp)")
        if elapsed >= 600:
            slow.append(seed)
        rows.append(f"seed {seed} [{elapsed:.0f}s]: " + ", ".join(f"{m} {100 * v:.2f}%" for m, v in single.items())
                    + "; " + ", ".join(parts))
    for r in rows:
        print(r)
    ok = counts == {(500, 380)} and dominated and all(n >= 3 for n in gaps.values()) and not slow
    record(2, "synthetic fusion dominance", ok,
           f"records {sorted(counts)}; dominance {'holds' if dominated else 'violated'}; seeds with gap >= 2 pp: "
           + ", ".join(f"{c[1]} triple {n}/5" for c, n in gaps.items())
           + f"; seeds over 600 s on {os.cpu_count()} CPU: {slow or 'none'} | " + " | ".join(rows))


def test_criterion_3_eer_oracle():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for k in range(1000):
        ng, ni = rng.integers(1, 201, size=2)
        if k % 2:
            g, i = rng.uniform(size=ng), rng.uniform(size=ni)
        else:
            # coarse scores to exercise ties
            g, i = np.round(rng.beta(3, 2, ng), 1), np.round(rng.beta(2, 3, ni), 1)
        worst = max(worst, abs(compute_eer(g, i).eer - brute_force_eer(g.tolist(), i.tolist())))
    perfect = compute_eer(np.ones(50), np.zeros(70)).eer
    same = rng.uniform(size=120)
    identical = compute_eer(same, same).eer
    ok = worst <= 1e-9 and perfect == 0.0 and abs(identical - 0.5) <= 1e-12
    record(3, "EER oracle", ok, f"max |diff| over 1000 pairs {worst:.2e}; perfect separation {perfect}; "
                                f"identical lists {identical}")


def _raster(x0, y0, x1, y1):
    n = int(max(abs(x1 - x0), abs(y1 - y0))) + 1
    t = np.linspace(0, 1, n)
    pts = np.round(np.column_stack([x0 + t * (x1 - x0), y0 + t * (y1 - y0)])).astype(np.int64)
    _, first = np.unique(pts, axis=0, return_index=True)
    return pts[np.sort(first)]


def _arc(cx, cy, r, a0, a1):
    t = np.linspace(a0, a1, int(abs(a1 - a0) * r * 2) + 2)
    pts = np.round(np.column_stack([cx + r * np.cos(t), cy + r * np.sin(t)])).astype(np.int64)
    _, first = np.unique(pts, axis=0, return_index=True)
    return pts[np.sort(first)]


def test_criterion_4_hough_soundness():
    rng = np.random.default_rng(7)
    unsound, missed, n_lines, worst_t, worst_r = 0, 0, 0, 0.0, 0.0
    for k in range(200):
        if k % 2 == 0:
            a = rng.uniform(0, math.pi)
            length = rng.uniform(20, 120)
            x0, y0 = rng.uniform(40, 200, size=2)
            pts = _raster(x0, y0, x0 + length * math.cos(a), y0 + length * math.sin(a))
            theta = (math.degrees(a) + 90) % 180
            mid = (x0 + 0.5 * length * math.cos(a), y0 + 0.5 * length * math.sin(a))
        else:
            r = rng.uniform(15, 80)
            a0 = rng.uniform(0, 2 * math.pi)
            pts = _arc(150, 150, r, a0, a0 + rng.uniform(0.3, 3.0))
            theta = None
        lines = hough_lines(pts)
        for ln in lines:
            d = np.abs(pts[:, 0] * math.cos(ln.theta) + pts[:, 1] * math.sin(ln.theta) - ln.rho)
            unsound += (d <= 1.0).sum() < 0.9 * ln.votes
        if theta is not None:
            n_lines += 1
            top = lines[0]
            dt = abs(top.theta_deg - theta)
            dt = min(dt, 180 - dt)
            # offset is measured where the segment lies; rho about the image
            # origin would multiply any tilt by the distance to the origin
            off = abs(mid[0] * math.cos(top.theta) + mid[1] * math.sin(top.theta) - top.rho)
            worst_t, worst_r = max(worst_t, dt), max(worst_r, off)
            missed += dt > 1.0 or off > 1.0
    ok = unsound == 0 and missed == 0
    record(4, "Hough soundness", ok, f"{unsound} unsound lines over 200 shapes; {missed}/{n_lines} lines missed; "
                                     f"worst error {worst_t:.3f} deg / {worst_r:.3f} px")


def test_criterion_5_planted_pores():
    iso_fixed, adapt_var, iso_var, fas = [], [], [], []
    for seed in range(20):
        img, truth = planted_fixed_period(np.random.default_rng(seed))
        r, fa = detection_stats(extract_pores_isotropic(img, estimate_block_map(img)).xy, truth)
        iso_fixed.append(r)
        fas.append(fa)
        img, truth = planted_varying_period(np.random.default_rng(1000 + seed))
        bmap = estimate_block_map(img)
        r, fa = detection_stats(extract_pores_adaptive(img, bmap).xy, truth)
        adapt_var.append(r)
        fas.append(fa)
        r, fa = detection_stats(extract_pores_isotropic(img, bmap).xy, truth)
        iso_var.append(r)
        fas.append(fa)
    ok = (min(iso_fixed) >= 0.9 and min(adapt_var) >= 0.85 and np.mean(adapt_var) >= np.mean(iso_var)
          and max(fas) <= 2)
    record(5, "planted pores", ok,
           f"isotropic fixed-period recall min {min(iso_fixed):.3f} mean {np.mean(iso_fixed):.3f}; "
           f"adaptive varying-period recall min {min(adapt_var):.3f} mean {np.mean(adapt_var):.3f} vs isotropic "
           f"{np.mean(iso_var):.3f}; max false alarms per image {max(fas)} (20 seeds)")


def test_criterion_6_registration():
    spec = SynthSpec(n_fingers=20, samples_per_session=1, seed=11)
    tpls = [extract_template(render_impression(m, spec, rng).image, ["ridges", "pores_iso"])
            for _, m, rng in synthetic_fingers(spec)]
    rng = np.random.default_rng(5)
    hits, monotone = 0, 0
    for k in range(100):
        t = tpls[k % len(tpls)]
        centre = (t.image_size[0] / 2, t.image_size[1] / 2)
        g = AlignmentParams(math.radians(rng.uniform(-30, 30)), rng.uniform(-40, 40), rng.uniform(-40, 40),
                            1.0, centre)
        moved = transform_feature(t.ridges, g)
        cands = register(t.ridges, moved)[:3]
        hits += any(abs(math.degrees(c.dtheta - g.dtheta)) <= 2 and abs(c.dx - g.dx) <= 3
                    and abs(c.dy - g.dy) <= 3 for c in cands)
        q = t.pores[ISOTROPIC]
        r = PoreSet([Pore(float(x), float(y), p.strength) for (x, y), p in zip(g.apply(q.xy), q.pores)],
                    ISOTROPIC, q.image_size)
        s = best_alignment_pores(t.ridges, moved, q, r, (6, 8, 10))
        monotone += s[6].value <= s[8].value <= s[10].value
    ok = hits >= 95 and monotone == 100
    record(6, "registration", ok, f"true transform in top-3 for {hits}/100 trials; "
                                  f"pore scores monotone in box_half for {monotone}/100")


def test_criterion_7_invariants():
    spec = SynthSpec(n_fingers=4, samples_per_session=1, seed=3)
    imgs = [render_impression(m, spec, rng).image for _, m, rng in synthetic_fingers(spec)]
    tpls = [extract_template(img, METHODS) for img in imgs]
    counts = {}

    def tick(name):
        counts[name] = counts.get(name, 0) + 1

    def min_set(rng, n):
        return MinutiaSet([Minutia(float(rng.uniform(0, 320)), float(rng.uniform(0, 240)),
                                   float(rng.uniform(0, 360)), str(rng.choice(["ending", "bifurcation"])))
                           for _ in range(n)], (320, 240))

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 3), st.integers(0, 3), st.floats(-30, 30), st.floats(-40, 40), st.floats(-40, 40))
    def score_bounds(i, j, deg, dx, dy):
        g = AlignmentParams(math.radians(deg), dx, dy, 1.0, (160, 120))
        moved = transform_feature(tpls[i].ridges, g)
        s = compare_ridge(moved, tpls[j].ridges).value
        assert 0.0 <= s <= 1.0
        pm = best_alignment_pores(moved, tpls[j].ridges, tpls[i].pores[ADAPTIVE], tpls[j].pores[ADAPTIVE])
        assert all(0.0 <= v.value <= 1.0 for v in pm.values())
        assert 0.0 <= compare_minutiae(tpls[i].minutiae, tpls[j].minutiae).value <= 1.0
        tick("score bounds")

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 20), st.integers(0, 3))
    def self_match(seed, n, i):
        ms = min_set(np.random.default_rng(seed), n)
        assert compare_minutiae(ms, ms).value == 1.0
        assert compare_ridge(tpls[i].ridges, tpls[i].ridges).value == 1.0
        tick("self-match")

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def eer_monotone(seed):
        rng = np.random.default_rng(seed)
        g, i = rng.uniform(size=rng.integers(1, 100)), rng.uniform(size=rng.integers(1, 100))
        base = compute_eer(g, i).eer
        for fn in (np.sqrt, lambda x: np.exp(3 * x), lambda x: 0.1 + 0.3 * x):
            assert abs(compute_eer(fn(g), fn(i)).eer - base) <= 1e-9
        tick("EER monotone invariance")

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0.3, 0.7))
    def thinning(seed, density):
        from scipy import ndimage
        m = ndimage.binary_opening(np.random.default_rng(seed).uniform(size=(40, 40)) < density)
        once = thin(GrayImage(m.astype(float)))
        assert np.array_equal(once.pixels, thin(once).pixels)
        tick("thinning idempotence")

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(0, 3))
    def round_trip(seed, i):
        rng = np.random.default_rng(seed)
        ms = min_set(rng, int(rng.integers(0, 20)))
        assert load_minutiae(dump_minutiae(ms)) == ms
        ps = PoreSet([Pore(*map(float, rng.uniform(0, 300, 3))) for _ in range(rng.integers(0, 30))],
                     ADAPTIVE, (320, 240))
        assert load_pores(dump_pores(ps)) == ps
        g = AlignmentParams(math.radians(rng.uniform(-30, 30)), rng.uniform(-40, 40), rng.uniform(-40, 40),
                            1.0, (160, 120))
        moved = transform_feature(tpls[i].ridges, g)
        assert load_ridges(dump_ridges(moved)) == moved
        tick("feature-file round-trip")

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**63 - 1), st.floats(0, 3), st.floats(0, 15))
    def determinism(seed, jitter, rot):
        s = SynthSpec(n_fingers=1, samples_per_session=1, seed=seed, image_size=(64, 48), jitter=jitter,
                      rotation_range=rot)

        def render():
            return [render_impression(m, s, r).image.pixels.tobytes() for _, m, r in synthetic_fingers(s)]
        assert render() == render()
        tick("synthetic determinism")

    failures = []
    for prop in (score_bounds, self_match, eer_monotone, thinning, round_trip, determinism):
        try:
            prop()
        except Exception as exc:  # report every property, then fail
            failures.append(f"{prop.__name__}: {type(exc).__name__}")
    ok = not failures and len(counts) == 6 and min(counts.values()) >= 100
    record(7, "invariant suite", ok, ", ".join(f"{k} {v} cases" for k, v in counts.items())
           + (f"; failures {failures}" if failures else ""))

