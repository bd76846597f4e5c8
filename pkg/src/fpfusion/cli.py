"""Command-line interface: ``python -m fpfusion <command> ...``.

Exit status is 0 on success, 1 on a usage error and 2 on a data error.
"""
from __future__ import annotations

import argparse
import itertools
import logging
import sys
import warnings
from pathlib import Path

from . import minutiae as minutiae_io
from . import pores as pores_io
from . import ridges as ridges_io
from .corpus import SynthSpec, generate_synthetic, index_corpus
from .errors import FingerprintError
from .fusion import (METHODS, compute_eer, grid_search_weights, holdout_split, method_report,
                     methods_present, pct, read_records, run_protocol, score_matrix, write_records)
from .imgproc import DEFAULT_DPI, read_pgm
from .pipeline import PORE_METHOD_OF, compare_templates, extract_template
from .ridge_matcher import AlignmentParams, compare_ridge

log = logging.getLogger("fpfusion")

CLI_NAMES = {"minutiae": "minutiae", "ridges": "ridges", "pores-iso": "pores_iso", "pores-adapt": "pores_adapt"}
FILE_SUFFIX = {"minutiae": "minutiae", "ridges": "ridges", "pores_iso": "pores-iso", "pores_adapt": "pores-adapt"}
# reference EERs on PolyU HRF I, printed next to measured values
REFERENCE_EER = {
    ("minutiae",): 25.08, ("ridges",): 23.50, ("pores_iso",): 26.02, ("pores_adapt",): 23.22,
    ("minutiae", "ridges"): 22.01, ("pores_iso", "ridges"): 22.31, ("pores_adapt", "ridges"): 9.35,
    ("minutiae", "pores_iso"): 10.45, ("minutiae", "pores_adapt"): 9.08,
    ("minutiae", "pores_iso", "ridges"): 8.57, ("minutiae", "pores_adapt", "ridges"): 8.74,
}


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _methods(text: str) -> list[str]:
    out = []
    for name in text.split(","):
        name = name.strip()
        if name not in CLI_NAMES:
            raise argparse.ArgumentTypeError(f"unknown method {name!r} (choose from {', '.join(CLI_NAMES)})")
        out.append(CLI_NAMES[name])
    return [m for m in METHODS if m in out]


def _size(text: str) -> tuple[int, int]:
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like 320x240, got {text!r}")
    return w, h


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--dpi", type=float, default=argparse.SUPPRESS, help="scan resolution (default 1200)")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed (default 0)")
    common.add_argument("--jobs", type=int, default=argparse.SUPPRESS, help="worker processes (default 1)")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    p = _Parser(prog="fpfusion", description="Fingerprint fragment matching with minutiae, ridges and pores.",
                parents=[common])
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    e = sub.add_parser("extract", parents=[common], help="write feature files for one image")
    e.add_argument("image", type=Path)
    e.add_argument("--method", action="append", choices=sorted(CLI_NAMES),
                   help="feature type (repeatable; default all)")
    e.add_argument("--out-dir", type=Path, default=None, help="output directory (default: next to the image)")

    m = sub.add_parser("match", parents=[common], help="score two images or two feature files")
    m.add_argument("a", type=Path)
    m.add_argument("b", type=Path)
    m.add_argument("--methods", type=_methods, default=list(METHODS))
    m.add_argument("--box-half", type=int, choices=(6, 8, 10), default=6)
    m.add_argument("--align-ridges", nargs=2, type=Path, metavar=("RIDGES_A", "RIDGES_B"),
                   help="ridge feature files used to align two pore files")

    v = sub.add_parser("evaluate", parents=[common], help="run the genuine/impostor protocol on a corpus")
    v.add_argument("corpus", type=Path)
    v.add_argument("--methods", type=_methods, default=list(METHODS))
    v.add_argument("--box-half", type=int, choices=(6, 8, 10), default=6)
    v.add_argument("--out", type=Path, default=Path("records.csv"), help="records CSV (default records.csv)")
    v.add_argument("--roc-dir", type=Path, default=None, help="write one threshold,far,frr file per method")
    v.add_argument("--samples-per-session", type=int, default=5)
    v.add_argument("--manifest", type=Path, default=None, help="CSV finger_id,session,sample,path")

    f = sub.add_parser("fuse-search", parents=[common], help="grid-search fusion weights on a records CSV")
    f.add_argument("records", type=Path)
    f.add_argument("--methods", type=_methods, default=None, help="default: every method in the file")
    f.add_argument("--step", type=float, default=0.05)
    f.add_argument("--holdout", action="store_true", help="choose weights on half the fingers, report the other half")
    f.add_argument("--all-subsets", action="store_true", help="report every non-empty combination of the methods")
    f.add_argument("--roc", type=Path, default=None, help="write the fused ROC data here")

    s = sub.add_parser("synth", parents=[common], help="render a synthetic fragment corpus")
    s.add_argument("out", type=Path)
    s.add_argument("--fingers", type=int, default=20)
    s.add_argument("--samples", type=int, default=5, help="samples per session")
    s.add_argument("--size", type=_size, default=(320, 240))
    s.add_argument("--ridge-period", type=float, default=10.0)
    s.add_argument("--pore-density", type=float, default=30.0, help="pores per 1000 ridge pixels")
    s.add_argument("--jitter", type=float, default=1.5)
    s.add_argument("--rotation", type=float, default=10.0, help="rotation range in degrees")
    s.add_argument("--noise", type=float, default=0.06)
    return p


def _load_image(path: Path, dpi: float):
    if not path.is_file():
        raise DataError(f"{path}: no such file")
    return read_pgm(path, dpi)


def cmd_extract(args) -> int:
    methods = [CLI_NAMES[m] for m in args.method] if args.method else list(METHODS)
    img = _load_image(args.image, args.dpi)
    tpl = extract_template(img, methods)
    out_dir = args.out_dir or args.image.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = args.image.stem
    for m in methods:
        path = out_dir / f"{stem}.{FILE_SUFFIX[m]}.txt"
        if m == "ridges":
            if tpl.ridges is None:
                raise DataError(f"{args.image}: no ridge survived extraction")
            ridges_io.save(path, tpl.ridges)
        elif m == "minutiae":
            minutiae_io.save(path, tpl.minutiae)
        else:
            pores_io.save(path, tpl.pores[PORE_METHOD_OF[m]])
        print(path)
    return 0


def _feature_kind(path: Path) -> str | None:
    try:
        with open(path, "rb") as fh:
            head = fh.read(16)
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from exc
    for tag, kind in ((b"RIDGEFEAT", "ridges"), (b"MINUTIAE", "minutiae"), (b"PORES", "pores")):
        if head.startswith(tag):
            return kind
    return None


def cmd_match(args) -> int:
    ka, kb = _feature_kind(args.a), _feature_kind(args.b)
    if ka is None and kb is None:
        ta = extract_template(_load_image(args.a, args.dpi), args.methods)
        tb = extract_template(_load_image(args.b, args.dpi), args.methods)
        scores = compare_templates(ta, tb, args.methods, args.box_half)
        for m in args.methods:
            print(f"{m} {scores[m]:.6f}")
        return 0
    if ka != kb:
        raise UsageError("match: give two images or two feature files of the same kind")
    if ka == "ridges":
        print(f"ridges {compare_ridge(ridges_io.load(args.a), ridges_io.load(args.b)).value:.6f}")
    elif ka == "minutiae":
        from .minutiae import compare_minutiae
        print(f"minutiae {compare_minutiae(minutiae_io.load(args.a), minutiae_io.load(args.b)).value:.6f}")
    else:
        pa, pb = pores_io.load(args.a), pores_io.load(args.b)
        name = "pores_iso" if pa.method == pores_io.ISOTROPIC else "pores_adapt"
        if args.align_ridges:
            ra, rb = (ridges_io.load(p) for p in args.align_ridges)
            res = pores_io.best_alignment_pores(ra, rb, pa, pb, (args.box_half,))
            value = res[args.box_half].value
        else:
            value = pores_io.match_pores(pa, pb, AlignmentParams.identity(pa.image_size), args.box_half).value
        print(f"{name} {value:.6f}")
    return 0


def cmd_evaluate(args) -> int:
    corpus = index_corpus(args.corpus, args.samples_per_session, args.dpi, args.manifest)

    def progress(k, n):
        if k == n or k % 200 == 0:
            log.info("compared %d/%d pairs", k, n)

    records = run_protocol(corpus, args.methods, args.box_half, args.jobs, progress)
    write_records(args.out, records)
    n_gen = sum(r.label == "genuine" for r in records)
    print(f"records: {args.out} ({n_gen} genuine, {len(records) - n_gen} impostor)")
    if args.roc_dir:
        args.roc_dir.mkdir(parents=True, exist_ok=True)
    for m in args.methods:
        rep = method_report(records, m)
        print(f"{m:12s} EER {pct(rep.eer):>8s}  threshold {rep.threshold_at_eer:.4f}")
        if args.roc_dir:
            rep.write_roc(args.roc_dir / f"roc_{m}.csv")
    return 0


def _combos(methods, all_subsets):
    if not all_subsets:
        return [tuple(methods)]
    return [c for k in range(1, len(methods) + 1) for c in itertools.combinations(methods, k)]


def cmd_fuse_search(args) -> int:
    records = read_records(args.records)
    if not records:
        raise DataError(f"{args.records}: no records")
    present = methods_present(records)
    methods = args.methods if args.methods is not None else present
    missing = [m for m in methods if m not in present]
    if missing:
        raise DataError(f"{args.records}: no complete column for {', '.join(missing)}")
    if not methods:
        raise DataError(f"{args.records}: no score columns")
    select, report_on = (holdout_split(records) if args.holdout else (records, records))
    if args.holdout:
        print(f"holdout: {len(select)} records select weights, {len(report_on)} report EER")
    last = None
    for combo in _combos(methods, args.all_subsets):
        w, rep = grid_search_weights(select, combo, args.step)
        if args.holdout:
            s, lab = score_matrix(report_on, sorted(combo))
            fused = s @ w.vector(sorted(combo))
            rep = compute_eer(fused[lab], fused[~lab])
        ref = REFERENCE_EER.get(tuple(sorted(combo)))
        ref_txt = f"  (reference {ref:.2f}%)" if ref is not None else ""
        weights = " ".join(f"{m}={w.weights[m]:.2f}" for m in sorted(combo))
        print(f"{'+'.join(sorted(combo)):32s} EER {pct(rep.eer):>8s}{ref_txt}  weights {weights}")
        last = rep
    if args.roc and last is not None:
        last.write_roc(args.roc)
    return 0


def cmd_synth(args) -> int:
    spec = SynthSpec(n_fingers=args.fingers, samples_per_session=args.samples, seed=args.seed,
                     image_size=args.size, ridge_period=args.ridge_period, pore_density=args.pore_density,
                     jitter=args.jitter, rotation_range=args.rotation, noise=args.noise, dpi=args.dpi)
    corpus = generate_synthetic(spec, args.out)
    print(f"wrote {len(corpus.entries)} images to {args.out}")
    return 0


COMMANDS = {"extract": cmd_extract, "match": cmd_match, "evaluate": cmd_evaluate,
            "fuse-search": cmd_fuse_search, "synth": cmd_synth}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        for name, default in (("dpi", DEFAULT_DPI), ("seed", 0), ("jobs", 1), ("verbose", False)):
            if not hasattr(args, name):
                setattr(args, name, default)
        if args.command is None:
            raise UsageError("fpfusion: a command is required (extract, match, evaluate, fuse-search, synth)")
        if args.jobs < 1 or args.dpi <= 0:
            raise UsageError("fpfusion: --jobs must be >= 1 and --dpi positive")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s")
        with warnings.catch_warnings():
            if not args.verbose:
                warnings.simplefilter("ignore")
            return COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (DataError, FingerprintError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
