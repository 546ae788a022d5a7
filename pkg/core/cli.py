"""
Command-line front end.

    segment  INPUT            segment a PNG/TIFF or every row of a CSV manifest
    eval     PRED GT          per-image AJI/Dice and means, CSV on stdout
    ablate   MANIFEST [GT]    mean AJI after each pipeline stage, CSV on stdout
    synth    OUT              write a planted-nuclei suite with truth and manifests

Exit codes: 0 success, 1 some images failed, 2 usage or contract error.
"""
import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor

from config import (
    APP_NAME, APP_VERSION, ENV_PREFIX, EXIT_OK, EXIT_PARTIAL, EXIT_USAGE, STAGE_SUFFIXES,
)
from core import pipeline
from core.errors import ConfigError, NucsegError
from core.exporter import STAGE_REPORTS, write_ablation_table, write_eval_table
from core.imageio import (
    load_ground_truth, load_labelmap, load_rgb, read_manifest, write_labelmap, write_overlay,
)
from core.logger import image_scope, log, set_console_level
from core.metrics import aji, dice, mean_scores
from core.settings import load_config
from core.synthetic import write_suite


class UsageError(NucsegError):
    """Bad invocation: unreadable manifest, row mismatch, missing ground truth."""


def _result(name, success=False, error=""):
    return {"name": name, "success": success, "error": error}


def _report_failures(results):
    failed = [r for r in results if not r["success"]]
    for r in failed:
        print(f"{r['name']}: {r['error']}", file=sys.stderr)
    return failed


def _stem(path):
    return os.path.splitext(os.path.basename(path))[0]


def _pool_size(requested, jobs):
    return max(1, min(requested, jobs))


def _load_manifest(path):
    try:
        rows = read_manifest(path)
    except (OSError, ValueError) as e:
        raise UsageError(f"cannot read manifest {path}: {e}") from e
    if not rows:
        raise UsageError(f"{path}: manifest has no rows")
    return rows


def _gt_paths(rows, gt_manifest):
    """Ground truth per row: from a separate manifest, else the annotation column."""
    if gt_manifest:
        gt_rows = _load_manifest(gt_manifest)
        if len(gt_rows) != len(rows):
            raise UsageError(
                f"manifests differ in length: {len(rows)} vs {len(gt_rows)} rows"
            )
        return [annotation or image for image, annotation in gt_rows]
    missing = [image for image, annotation in rows if not annotation]
    if missing:
        raise UsageError(f"no ground truth for {len(missing)} row(s), first: {missing[0]}")
    return [annotation for _, annotation in rows]


# ─── segment ──────────────────────────────────────────────

def _segment_one(path, cfg, out_dir, stages, overlay, workers):
    name = os.path.basename(path)
    with image_scope(name):
        try:
            img = load_rgb(path)
            outputs = pipeline.run(img, cfg, workers=workers)
            stem = os.path.join(out_dir, _stem(path))
            maps = outputs.stages if stages else (outputs.final,)
            suffixes = STAGE_SUFFIXES if stages else STAGE_SUFFIXES[-1:]
            for labels, suffix in zip(maps, suffixes):
                write_labelmap(labels, f"{stem}{suffix}.png")
            if overlay:
                write_overlay(img, outputs.final, f"{stem}_overlay.png")
            if stages:
                for suffix, export in STAGE_REPORTS.items():
                    export(outputs, f"{stem}{suffix}")
            log.info(f"segment: {name} done")
            return _result(name, success=True)
        except Exception as e:
            log.error(f"segment: {name} failed: {e}", exc_info=not isinstance(e, NucsegError))
            return _result(name, error=str(e))


def cmd_segment(args, cfg):
    if args.input.lower().endswith(".csv"):
        paths = [image for image, _ in _load_manifest(args.input)]
    else:
        paths = [args.input]

    os.makedirs(args.out, exist_ok=True)
    pool = _pool_size(cfg.workers, len(paths))
    inner = cfg.workers if pool == 1 else 1
    log.info(f"segment: {len(paths)} image(s) -> {args.out}")
    with ThreadPoolExecutor(max_workers=pool) as executor:
        results = list(executor.map(
            lambda p: _segment_one(p, cfg, args.out, args.stages, args.overlay, inner), paths,
        ))

    failed = _report_failures(results)
    return EXIT_PARTIAL if failed else EXIT_OK


# ─── eval ─────────────────────────────────────────────────

def _score_one(pred_path, gt_path):
    name = os.path.basename(pred_path)
    try:
        pred = load_labelmap(pred_path)
        gt = load_ground_truth(gt_path, pred.shape)
        return {**_result(name, success=True), "image": name,
                "aji": aji(gt, pred).aji, "dice": dice(gt, pred)}
    except Exception as e:
        log.error(f"eval: {name} failed: {e}")
        return _result(name, error=str(e))


def cmd_eval(args, cfg):
    preds = [image for image, _ in _load_manifest(args.pred)]
    gts = _gt_paths([(p, None) for p in preds], args.gt)
    with ThreadPoolExecutor(max_workers=_pool_size(cfg.workers, len(preds))) as executor:
        results = list(executor.map(_score_one, preds, gts))

    failed = _report_failures(results)
    scored = [r for r in results if r["success"]]
    means = mean_scores([{"aji": r["aji"], "dice": r["dice"]} for r in scored])
    write_eval_table(scored, means, sys.stdout)
    return EXIT_PARTIAL if failed else EXIT_OK


# ─── ablate ───────────────────────────────────────────────

def _ablate_one(path, gt_path, cfg, workers):
    name = os.path.basename(path)
    with image_scope(name):
        try:
            outputs = pipeline.run(load_rgb(path), cfg, workers=workers)
            gt = load_ground_truth(gt_path, outputs.final.shape)
            scores = [aji(gt, labels).aji for labels in outputs.stages]
            log.info(f"ablate: {name} " + " ".join(f"{s:.4f}" for s in scores))
            return {**_result(name, success=True), "scores": scores}
        except Exception as e:
            log.error(f"ablate: {name} failed: {e}", exc_info=not isinstance(e, NucsegError))
            return _result(name, error=str(e))


def cmd_ablate(args, cfg):
    rows = _load_manifest(args.manifest)
    gts = _gt_paths(rows, args.gt)
    images = [image for image, _ in rows]
    pool = _pool_size(cfg.workers, len(images))
    inner = cfg.workers if pool == 1 else 1
    with ThreadPoolExecutor(max_workers=pool) as executor:
        results = list(executor.map(lambda p, g: _ablate_one(p, g, cfg, inner), images, gts))

    failed = _report_failures(results)
    scored = [r["scores"] for r in results if r["success"]]
    if not scored:
        return EXIT_PARTIAL
    means = [sum(col) / len(col) for col in zip(*scored)]
    write_ablation_table(means, sys.stdout)
    return EXIT_PARTIAL if failed else EXIT_OK


# ─── synth ────────────────────────────────────────────────

def cmd_synth(args, cfg):
    images_csv, truth_csv = write_suite(args.out, n_images=args.count, seed=args.seed)
    print(images_csv)
    print(truth_csv)
    return EXIT_OK


# ─── Entry ────────────────────────────────────────────────

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nucseg",
        description=f"{APP_NAME} {APP_VERSION}",
        epilog=f"Every configuration key can be overridden with {ENV_PREFIX}<KEY>.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--workers", type=int, help="worker threads (overrides config)")
    common.add_argument("-v", "--verbose", action="store_true", help="debug output on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    seg = sub.add_parser("segment", parents=[common],
                         help="segment an image or a manifest of images")
    seg.add_argument("input", help="image file or CSV manifest")
    seg.add_argument("--out", default="out", help="output directory")
    seg.add_argument("--stages", action="store_true",
                     help="also write stage-1 label maps and diagnostics CSVs")
    seg.add_argument("--overlay", action=argparse.BooleanOptionalAction, default=True,
                     help="write a boundary overlay PNG")
    seg.set_defaults(handler=cmd_segment)

    ev = sub.add_parser("eval", parents=[common], help="score predictions against ground truth")
    ev.add_argument("pred", help="manifest of predicted label maps")
    ev.add_argument("gt", help="manifest of ground truth (label PNG or ImageScope XML)")
    ev.set_defaults(handler=cmd_eval)

    ab = sub.add_parser("ablate", parents=[common], help="mean AJI after each pipeline stage")
    ab.add_argument("manifest", help="image manifest")
    ab.add_argument("gt", nargs="?", help="ground-truth manifest (default: annotation column)")
    ab.set_defaults(handler=cmd_ablate)

    sy = sub.add_parser("synth", parents=[common], help="write a synthetic planted-nuclei suite")
    sy.add_argument("out", help="output directory")
    sy.add_argument("--count", type=int, default=20)
    sy.add_argument("--seed", type=int, default=0)
    sy.set_defaults(handler=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    if args.verbose:
        set_console_level(logging.DEBUG)

    try:
        cfg = load_config(args.config)
        if args.workers is not None:
            cfg = cfg.replace(workers=args.workers)
    except (ConfigError, OSError) as e:
        print(f"configuration: {e}", file=sys.stderr)
        return EXIT_USAGE

    try:
        return args.handler(args, cfg)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return EXIT_USAGE
