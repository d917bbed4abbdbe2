"""``lichenmon`` command line.

Exit status: 0 on success, 1 on domain errors (validation, integrity,
geometry), 2 on usage or file-system errors. All randomness comes from
``--seed``; artifacts carry no wall-clock timestamps, so repeated runs with
identical arguments write identical bytes.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

from .errors import IncompatibleResultsError, LichenmonError
from . import __version__

log = logging.getLogger("lichenmon")

DIVISOR_FLAG = {"paper": "paper_9", "coco": "n_thresholds"}
SCENARIO_FLAG = {"cross": "cross_species", "random": "random_finetune", "selective": "selective_finetune"}


class UsageError(Exception):
    """Bad invocation or unreadable/unwritable path (exit 2)."""


# helpers ----------------------------------------------------------------

def _input(path):
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"input file not found: {p}")
    return p


def _out_dir(path):
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {p}: {exc.strerror}") from None
    return p


def _dump_json(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _load_json(path):
    from .dataset import load_json
    return load_json(_input(path))


def _load_dataset(path):
    from .dataset import parse_coco
    return parse_coco(_load_json(path))


# subcommands ------------------------------------------------------------

def cmd_convert(a):
    from .dataset import export_coco, parse_via, read_manifest, resolve_timestamps

    doc = _load_json(a.via)
    rows = read_manifest(_input(a.manifest))
    images, report = resolve_timestamps(rows, a.filename_pattern)
    ds, via_report = parse_via(doc, a.attribute, images)
    report = list(report) + list(via_report)
    out = _out_dir(a.out)
    _dump_json(export_coco(ds), out / "dataset.coco.json")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["source", "index", "kind", "message"])
    for e in report:
        w.writerow([e.source, "" if e.index is None else e.index, e.kind, e.message])
    (out / "convert_report.csv").write_text(buf.getvalue())
    print(f"{len(ds.images)} images, {len(ds.annotations)} annotations, {len(report)} report entries")
    return 0


def cmd_filter(a):
    from .dataset import read_manifest
    from .quality import Thresholds, filter_manifest, load_luminance, quality_scores, write_report_csv

    manifest = _input(a.manifest)
    rows = read_manifest(manifest)
    if a.image_dir:
        img_dir = Path(a.image_dir)
    else:
        img_dir = manifest.parent / "images" if (manifest.parent / "images").is_dir() else manifest.parent
    scored = []
    for r in rows:
        scored.append((r["file_name"], quality_scores(load_luminance(_input(img_dir / r["file_name"])))))
    th = Thresholds(a.min_blur, a.min_darkness, a.max_snow)
    reports, kept, dropped = filter_manifest(scored, th)
    out = _out_dir(a.out)
    write_report_csv(reports, out / "quality_report.csv")
    keep = set(kept)
    with open(manifest, newline="") as fh:
        fields = csv.DictReader(fh).fieldnames
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    w.writerows(r for r in rows if r["file_name"] in keep)
    (out / "kept_manifest.csv").write_text(buf.getvalue())
    print(f"kept {len(kept)}, dropped {len(dropped)}")
    for r in reports:
        if not r.kept:
            print(f"  drop {r.file_name}: {r.reason}")
    return 0


def cmd_split(a):
    from .splits import cross_species_folds, random_finetune_split, selective_finetune_split, write_fold

    ds = _load_dataset(a.gt)
    scenario = SCENARIO_FLAG[a.scenario]
    if scenario == "cross_species":
        folds = cross_species_folds(ds, a.species or None, a.train_fraction, seed=a.seed)
    else:
        if not a.species or len(a.species) != 1:
            raise UsageError(f"--scenario {a.scenario} needs exactly one --species")
        if scenario == "random_finetune":
            folds = [random_finetune_split(ds, a.species[0], a.n_train, a.n_val, seed=a.seed)]
        else:
            folds = [selective_finetune_split(ds, a.species[0], a.pool_train_fraction, a.day_pick,
                                              seed=a.seed, n_train=a.n_train if a.n_train_set else None,
                                              utc_offset_hours=a.utc_offset)]
    out = _out_dir(a.out)
    for f in folds:
        write_fold(f, out, ds if a.export_coco else None)
        print(f"{f.name}: train {len(f.train)}, val {len(f.val)}, test {len(f.test)}")
    return 0


def cmd_eval(a):
    from .dataset import parse_predictions
    from .evaluation import EvalParams, evaluate
    from .splits import FoldSpec

    gt = _load_dataset(a.gt)
    pred = _load_json(a.pred)
    if isinstance(pred, dict) and "annotations" in pred:
        # a COCO dataset used as predictions: every annotation at score 1
        pred = [{**x, "score": 1.0} for x in pred["annotations"]]
    dets = parse_predictions(pred, gt)
    extra = {}
    if a.fold:
        fold = FoldSpec.from_dict(_load_json(a.fold))
        gt = gt.subset(getattr(fold, a.part))
        extra["fold"] = {"name": fold.name, "scenario": fold.scenario, "seed": fold.seed, "part": a.part}
    keep = {im.image_id for im in gt.images}
    dets = [d for d in dets if d.image_id in keep]
    params = EvalParams(recall_points=a.recall_points, divisor=DIVISOR_FLAG[a.divisor], mode=a.mode,
                        max_detections=a.max_dets)
    result = evaluate(gt, dets, params)
    out = _out_dir(a.out)
    _dump_json(result.to_report(extra), out / "eval.json")
    if a.pr_csv:
        (out / "pr_curves.csv").write_text(result.pr_csv())
    print(f"{a.mode}: mAP {result.map:.4f}  mAP50 {result.map50:.4f}  mAP75 {result.map75:.4f}")
    return 0


def cmd_recalibrate(a):
    from .scoring import recalibrate_predictions

    src = _input(a.pred)
    doc = _load_json(src)
    if not isinstance(doc, list):
        raise UsageError(f"{src}: expected a JSON array of results")
    out_entries, summary = recalibrate_predictions(doc)
    out = _out_dir(a.out)
    name = src.name[:-5] if src.name.endswith(".json") else src.name
    (out / f"{name}.recalibrated.json").write_text(json.dumps(out_entries, sort_keys=True) + "\n")
    _dump_json(summary, out / "recalibrate_summary.json")
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_track(a):
    from .dataset import parse_predictions, read_manifest
    from .monitor import (
        biomass_series, change_report, change_report_csv, series_csv, series_json, track_dataset)

    ds = _load_dataset(a.gt)
    if a.manifest:
        names = {r["file_name"] for r in read_manifest(_input(a.manifest))}
        ds = ds.subset(im.image_id for im in ds.images if im.file_name in names)
    dets = parse_predictions(_load_json(a.pred), ds) if a.pred else None
    tracks = track_dataset(ds, a.link_iou, a.max_gap, dets, a.min_score)
    series = [biomass_series(t, a.px_to_cm2, a.smooth_window) for t in tracks]
    out = _out_dir(a.out)
    (out / "tracks.json").write_text(series_json(series, tracks))
    (out / "series.csv").write_text(series_csv(series))
    rows = change_report(series, a.period) if series else []
    (out / "change.csv").write_text(change_report_csv(rows))
    print(f"{len(tracks)} tracks over {len(ds.images)} frames")
    for r in rows:
        g = "" if r.growth_per_frame is None else f", growth/frame {r.growth_per_frame:.4f}"
        print(f"  track {r.track_id} [{r.period}]: {r.first_area} -> {r.last_area} px{g}")
    return 0


REPORT_METRICS = ("mAP", "mAP50", "mAP75")
MODE_LABEL = {"box": "bbox", "mask": "segm"}


def build_report(reports):
    """Average eval reports per scenario; rows carry bbox and segm columns."""
    if not reports:
        raise IncompatibleResultsError("report needs at least one eval result")
    ref = {k: v for k, v in reports[0]["params"].items() if k != "mode"}
    differing = set()
    for r in reports[1:]:
        p = {k: v for k, v in r["params"].items() if k != "mode"}
        differing |= {k for k in set(ref) | set(p) if ref.get(k) != p.get(k)}
    if differing:
        raise IncompatibleResultsError(
            f"eval results use different parameters: {', '.join(sorted(differing))}", sorted(differing))
    groups = {}
    for r in reports:
        scen = r.get("fold", {}).get("scenario", "unspecified")
        groups.setdefault(scen, {}).setdefault(r["mode"], []).append(r)
    rows = []
    for scen in sorted(groups):
        row = {"scenario": scen}
        for mode in ("box", "mask"):
            rs = groups[scen].get(mode, [])
            row[f"{MODE_LABEL[mode]}_n"] = len(rs)
            for m in REPORT_METRICS:
                row[f"{MODE_LABEL[mode]}_{m}"] = sum(x[m] for x in rs) / len(rs) if rs else None
        rows.append(row)
    return rows


def report_tables(rows):
    cols = ["scenario"] + [f"{lab}_{m}" for lab in ("bbox", "segm") for m in REPORT_METRICS] + ["bbox_n", "segm_n"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow(["" if r[c] is None else (repr(r[c]) if isinstance(r[c], float) else r[c]) for c in cols])

    def cell(v):
        return "-" if v is None else (f"{v:.3f}" if isinstance(v, float) else str(v))

    table = [cols] + [[cell(r[c]) for c in cols] for r in rows]
    widths = [max(len(line[i]) for line in table) for i in range(len(cols))]
    text = "\n".join("  ".join(v.ljust(widths[i]) for i, v in enumerate(line)).rstrip() for line in table) + "\n"
    return buf.getvalue(), text


def cmd_report(a):
    reports = [_load_json(p) for p in a.inputs]
    rows = build_report(reports)
    csv_text, text = report_tables(rows)
    out = _out_dir(a.out)
    (out / "report.csv").write_text(csv_text)
    (out / "report.txt").write_text(text)
    print(text, end="")
    return 0


def cmd_synth(a):
    from .synth import SynthConfig, generate_sequence, write_sequence

    cfg = SynthConfig.load(_input(a.config)) if a.config else SynthConfig()
    if a.seed is not None:
        cfg = SynthConfig.from_dict({**cfg.to_dict(), "seed": a.seed})
    result = generate_sequence(cfg)
    write_sequence(result, _out_dir(a.out))
    print(f"{len(result.images)} frames, {len(result.dataset.annotations)} annotations -> {a.out}")
    return 0


# parser -----------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="lichenmon", description="Lichen time-lapse monitoring toolkit.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_, description=help_)
        sp.set_defaults(func=fn)
        sp.add_argument("--out", required=True, help="output directory")
        if name != "synth":
            sp.add_argument("--config", help="JSON file of option defaults (keys are option names)")
        return sp

    c = add("convert", cmd_convert, "convert a VIA project to a COCO dataset")
    c.add_argument("--via", required=True)
    c.add_argument("--manifest", required=True)
    c.add_argument("--attribute", default="species", help="region attribute naming the species")
    c.add_argument("--filename-pattern", default=None)

    f = add("filter", cmd_filter, "score frame quality and drop blurry, dark or snowy frames")
    f.add_argument("--manifest", required=True)
    f.add_argument("--image-dir")
    f.add_argument("--min-blur", type=float, default=100.0)
    f.add_argument("--min-darkness", type=float, default=30.0)
    f.add_argument("--max-snow", type=float, default=0.5)

    s = add("split", cmd_split, "generate train/val/test folds")
    s.add_argument("--gt", required=True)
    s.add_argument("--scenario", choices=sorted(SCENARIO_FLAG), required=True)
    s.add_argument("--species", nargs="+", help="held-out (cross) or target species codes")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--train-fraction", type=float, default=0.85)
    s.add_argument("--n-train", type=int, default=None)
    s.add_argument("--n-val", type=int, default=10)
    s.add_argument("--pool-train-fraction", type=float, default=0.75)
    s.add_argument("--day-pick", choices=["nearest_local_noon", "first_of_day"], default="nearest_local_noon")
    s.add_argument("--utc-offset", type=float, default=0.0, help="camera local time offset in hours")
    s.add_argument("--export-coco", action="store_true", help="also write one COCO file per part")

    e = add("eval", cmd_eval, "evaluate predictions against ground truth")
    e.add_argument("--gt", required=True)
    e.add_argument("--pred", required=True)
    e.add_argument("--mode", choices=["box", "mask"], default="mask")
    e.add_argument("--divisor", choices=sorted(DIVISOR_FLAG), default="coco")
    e.add_argument("--recall-points", choices=["paper", "coco"], default="coco")
    e.add_argument("--max-dets", type=int, default=100)
    e.add_argument("--fold", help="FoldSpec JSON; restricts ground truth to one part")
    e.add_argument("--part", choices=["train", "val", "test"], default="test")
    e.add_argument("--pr-csv", action="store_true")

    r = add("recalibrate", cmd_recalibrate, "multiply result scores by predicted mask IoU")
    r.add_argument("--pred", required=True)

    t = add("track", cmd_track, "link instances over time and report area change")
    t.add_argument("--gt", required=True, help="COCO dataset (its annotations are tracked unless --pred)")
    t.add_argument("--pred")
    t.add_argument("--manifest", help="only frames listed here (e.g. the kept manifest from filter)")
    t.add_argument("--min-score", type=float, default=0.0)
    t.add_argument("--link-iou", type=float, default=0.5)
    t.add_argument("--max-gap", type=int, default=3)
    t.add_argument("--px-to-cm2", type=float, default=None)
    t.add_argument("--smooth-window", type=int, default=None)
    t.add_argument("--period", choices=["whole", "month"], default="whole")

    rp = add("report", cmd_report, "average eval reports per scenario")
    rp.add_argument("inputs", nargs="+", help="eval.json files")

    y = add("synth", cmd_synth, "generate a synthetic time-lapse with ground truth")
    y.add_argument("--config", help="SynthConfig JSON")
    y.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    return p


def _config_path(argv):
    for k, tok in enumerate(argv):
        if tok == "--config" and k + 1 < len(argv):
            return argv[k + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def _apply_config(parser, argv):
    """Install defaults from ``--config`` before parsing; explicit flags still win."""
    command = next((t for t in argv if not t.startswith("-")), None)
    choices = parser._subparsers._group_actions[0].choices
    path = _config_path(argv)
    if command not in choices or command == "synth" or path is None:
        return
    cfg = _load_json(path)
    if not isinstance(cfg, dict):
        raise UsageError(f"{path}: config must be a JSON object")
    sub = choices[command]
    dests = {a.dest for a in sub._actions} - {"help", "config", "func"}
    cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
    unknown = sorted(set(cfg) - dests)
    if unknown:
        raise UsageError(f"{path}: unknown options {unknown}")
    for act in sub._actions:
        if act.dest in cfg:
            act.required = False
    sub.set_defaults(**cfg)


def run(argv=None):
    level = os.environ.get("LICHENMON_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
        if getattr(args, "command", None) == "split":
            args.n_train_set = args.n_train is not None
            if args.n_train is None:
                args.n_train = 40
        log.info("running %s", args.command)
        return args.func(args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"lichenmon: error: {exc}", file=sys.stderr)
        return 2
    except LichenmonError as exc:
        print(f"lichenmon: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"lichenmon: error: {exc.filename or ''}: {exc.strerror or exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(run())
