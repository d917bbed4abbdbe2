"""Acceptance criteria 1-9, one pass/fail line each.

Every test prints ``ACCEPTANCE <n> PASS|FAIL <summary> (<seconds> s, limit <s>)``
and then asserts the same condition, so the line and the test outcome agree.
"""
import csv
import hashlib
import json
import time

import numpy as np
import pytest

from lichenmon.augment import HFlip, Rotate, VFlip, augment
from lichenmon.cli import run
from lichenmon.dataset import Category, Dataset, Detection, ImageRecord, InstanceAnnotation, export_coco
from lichenmon.evaluation import EvalParams, detections_from_dataset, evaluate
from lichenmon.mask import BitMask, Box, Polygon, bbox_of, iou, rle_decode, rle_encode
from lichenmon.scoring import LossComponents, recalibrate_score, total_loss
from lichenmon.splits import (
    cross_species_folds, image_species, random_finetune_split, selective_finetune_split)

import oracles
from helpers import random_eval_instance, random_lattice_polygon, species_dataset

FIELD_COUNTS = {"PP": 401, "EP": 406, "LP": 400}
CAPTURE_DAYS = {"PP": 97, "EP": 193, "LP": 46}


@pytest.fixture
def verdict(capsys):
    def emit(n, ok, summary, seconds, limit):
        ok = bool(ok) and seconds < limit
        with capsys.disabled():
            print(f"\nACCEPTANCE {n} {'PASS' if ok else 'FAIL'} {summary} ({seconds:.2f} s, limit {limit} s)")
        assert ok, summary
    return emit


def _breakdown(ds, ids):
    sp = image_species(ds)
    out = {}
    for i in ids:
        out[sp[i]] = out.get(sp[i], 0) + 1
    return out


def test_criterion_1_cross_species_counts(verdict):
    ds = species_dataset(FIELD_COUNTS)
    t0 = time.perf_counter()
    folds = {f.name: f for f in cross_species_folds(ds, ["LP", "EP", "PP"], 0.85, seed=0)}
    got = {held: (_breakdown(ds, f.train), _breakdown(ds, f.val), _breakdown(ds, f.test))
           for held, f in ((n[-2:], f) for n, f in folds.items())}
    dt = time.perf_counter() - t0
    expect = {
        "LP": ({"PP": 341, "EP": 345}, {"PP": 60, "EP": 61}, {"LP": 400}),
        "EP": ({"PP": 341, "LP": 340}, {"PP": 60, "LP": 60}, {"EP": 406}),
        "PP": ({"EP": 345, "LP": 340}, {"EP": 61, "LP": 60}, {"PP": 401}),
    }
    totals = {k: tuple(sum(part.values()) for part in v) for k, v in got.items()}
    verdict(1, got == expect, f"cross-species folds {totals}", dt, 1)


def test_criterion_2_random_finetune_counts(verdict):
    ds = species_dataset(FIELD_COUNTS)
    t0 = time.perf_counter()
    got = {}
    for code in ("LP", "EP", "PP"):
        f = random_finetune_split(ds, code, 40, 10, seed=0)
        got[code] = (len(f.train), len(f.val), len(f.test))
    dt = time.perf_counter() - t0
    ok = got == {"LP": (40, 10, 350), "EP": (40, 10, 356), "PP": (40, 10, 351)}
    verdict(2, ok, f"random fine-tune folds {got}", dt, 1)


def test_criterion_3_selective_finetune_counts(verdict):
    ds = species_dataset(FIELD_COUNTS, days=CAPTURE_DAYS)
    t0 = time.perf_counter()
    lp = selective_finetune_split(ds, "LP", seed=0)
    pp = selective_finetune_split(ds, "PP", seed=0)
    ep = selective_finetune_split(ds, "EP", seed=0, n_train=146)
    dt = time.perf_counter() - t0
    got = {f.name: (len(f.train), len(f.val), len(f.test)) for f in (lp, pp, ep)}
    ok = (got[lp.name] == (34, 12, 354) and got[pp.name] == (73, 24, 304)
          and len(ep.train) + len(ep.val) == 193 and len(ep.test) == 213 and len(ep.train) == 146)
    verdict(3, ok, f"selective folds {got} (EP with explicit n_train=146)", dt, 1)


def test_criterion_4_metric_engine(verdict):
    cats = (Category(1, "Lobaria pulmonaria", "LP"),)
    images = [ImageRecord(1, "a.png", 32, 32)]

    def sq(x, y, w, h):
        return Polygon(((x, y), (x + w, y), (x + w, y + h), (x, y + h)))

    t0 = time.perf_counter()
    anns = [InstanceAnnotation(k + 1, 1, 1, sq(7 * k, 3 * k, 6, 5), Box(7 * k, 3 * k, 6, 5)) for k in range(4)]
    gt = Dataset(images, cats, anns)
    echo_ok = True
    for mode in ("mask", "box"):
        for div in ("n_thresholds", "paper_9"):
            r = evaluate(gt, detections_from_dataset(gt), EvalParams(mode=mode, divisor=div))
            echo_ok &= (r.map, r.map50, r.map75) == (1.0, 1.0, 1.0)
    one = Dataset(images, cats, [InstanceAnnotation(1, 1, 1, sq(0, 0, 10, 10), Box(0, 0, 10, 10))])
    det = [Detection(1, 1, 0.9, sq(0, 0, 10, 6), Box(0, 0, 10, 6))]
    a = evaluate(one, det, EvalParams(divisor="n_thresholds"))
    b = evaluate(one, det, EvalParams(divisor="paper_9"))
    dt = time.perf_counter() - t0
    single_ok = (a.map50 == 1.0 and a.map75 == 0.0 and a.map == 0.3
                 and b.map50 == 1.0 and b.map75 == 0.0 and abs(b.map - 0.333) <= 0.001)
    verdict(4, echo_ok and single_ok,
            f"echo=1.0 in both modes and divisors: {echo_ok}; IoU 0.60 case mAP {a.map} / {b.map:.4f}", dt, 1)


def test_criterion_5_oracle_equivalence(verdict):
    params = [EvalParams(), EvalParams(recall_points="paper", divisor="paper_9")]
    t0 = time.perf_counter()
    mismatches, compared, worst = 0, 0, 0.0
    for seed in range(200):
        rng = np.random.default_rng(10_000 + seed)
        gt, dets, o_gts, o_dets = random_eval_instance(rng, n_images=3, size=32)
        for p in params:
            r = evaluate(gt, dets, p)
            expect, m = oracles.brute_force_eval(o_gts, o_dets, p.iou_thresholds, p.recall_values, p.divisor)
            for (cat, t), (tp, fp, fn, ap) in expect.items():
                c = r.per_category[f"S{cat - 1}"]
                compared += 1
                if c.counts[t] != (tp, fp, fn):
                    mismatches += 1
                if c.n_gt:
                    worst = max(worst, abs(c.ap[t] - ap))
            worst = max(worst, abs(r.map - m))
    dt = time.perf_counter() - t0
    ok = mismatches == 0 and worst <= 1e-12
    verdict(5, ok, f"200 instances, {compared} (category, threshold) cells, count mismatches {mismatches}, "
                   f"max AP diff {worst:.1e}", dt, 30)


def test_criterion_6_geometry(verdict):
    rng = np.random.default_rng(6)
    h, w = 32, 32
    t0 = time.perf_counter()
    iou_bad = 0
    for _ in range(200):
        a = random_lattice_polygon(rng)
        b = random_lattice_polygon(rng)
        pa, pb = oracles.raster_pixels(a, h, w), oracles.raster_pixels(b, h, w)
        union = len(pa | pb)
        expect = len(pa & pb) / union if union else 0.0
        if iou(Polygon(tuple(a)), Polygon(tuple(b)), height=h, width=w) != expect:
            iou_bad += 1
    rle_bad = 0
    for _ in range(500):
        hh, ww = (int(v) for v in rng.integers(1, 40, 2))
        bits = rng.uniform(size=(hh, ww)) < rng.uniform()
        m = BitMask(bits)
        r = rle_encode(m)
        if r.counts != tuple(oracles.runs_column_major(bits.tolist())) or rle_decode(r) != m:
            rle_bad += 1
    aug_bad = 0
    transforms = [HFlip(), VFlip(), Rotate(90), Rotate(180), Rotate(270)]
    for k in range(200):
        pts = random_lattice_polygon(rng, lo=-2.0, hi=30.0)
        p = Polygon(tuple(pts))
        ah, aw = 29, 35
        before = len(oracles.raster_pixels(pts, ah, aw))
        ann = InstanceAnnotation(1, 1, 1, p, bbox_of(p, ah, aw))
        res = augment(aw, ah, [ann], transforms[k % len(transforms)])
        after = sum(len(oracles.raster_pixels(x.mask.points, res.height, res.width)) for x in res.annotations)
        if after != before:
            aug_bad += 1
    dt = time.perf_counter() - t0
    verdict(6, iou_bad == rle_bad == aug_bad == 0,
            f"IoU mismatches {iou_bad}/200, RLE round-trip failures {rle_bad}/500, "
            f"flip/rot90 area changes {aug_bad}/200", dt, 30)


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_criterion_7_end_to_end(tmp_path, verdict):
    cfg = tmp_path / "synth.json"
    cfg.write_text(json.dumps({"seed": 21, "n_lichens": 3, "frames": 10, "growth_factor": 1.05,
                               "species": ["LP", "PP", "EP"],
                               "degradations": [{"frame": 4, "kind": "blur", "value": 2.0},
                                                {"frame": 7, "kind": "darken", "value": 0.15}]}))
    s, f, t, e = (tmp_path / d for d in ("synth", "filter", "track", "eval"))
    t0 = time.perf_counter()
    codes = [run(["synth", "--config", str(cfg), "--out", str(s)]),
             run(["filter", "--manifest", str(s / "manifest.csv"), "--out", str(f)]),
             run(["track", "--gt", str(s / "annotations.coco.json"), "--manifest", str(f / "kept_manifest.csv"),
                  "--out", str(t)])]
    maps = []
    for mode in ("mask", "box"):
        codes.append(run(["eval", "--gt", str(s / "annotations.coco.json"), "--pred", str(s / "annotations.coco.json"),
                          "--mode", mode, "--out", str(e / mode)]))
        rep = json.loads((e / mode / "eval.json").read_text())
        maps += [rep["mAP"], rep["mAP50"], rep["mAP75"]]
    dt = time.perf_counter() - t0

    manifest = [r["file_name"] for r in _rows(s / "manifest.csv")]
    quality = _rows(f / "quality_report.csv")
    dropped = sorted(r["file_name"] for r in quality if r["verdict"] == "drop")
    n_tracks = len(json.loads((t / "tracks.json").read_text())["tracks"])
    growth = [float(r["growth_per_frame"]) for r in _rows(t / "change.csv")]
    growth_ok = len(growth) == 3 and all(abs(g - 1.05) <= 0.02 * 1.05 for g in growth)
    ok = (codes == [0] * 5 and dropped == sorted([manifest[4], manifest[7]]) and n_tracks == 3
          and growth_ok and maps == [1.0] * 6)
    verdict(7, ok, f"dropped {len(dropped)} degraded frames, {n_tracks} tracks, growth/frame "
                   f"{[round(g, 4) for g in growth]}, self-eval {sorted(set(maps))}", dt, 120)


def _digest(d):
    h = hashlib.sha256()
    for p in sorted(d.rglob("*")):
        if p.is_file():
            h.update(p.relative_to(d).as_posix().encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_criterion_8_determinism(tmp_path, verdict):
    ds = species_dataset({"PP": 80, "EP": 70, "LP": 60}, days={"PP": 12, "EP": 10, "LP": 9})
    gt = tmp_path / "gt.json"
    gt.write_text(json.dumps(export_coco(ds)))
    synth_cfg = tmp_path / "synth.json"
    synth_cfg.write_text(json.dumps({"seed": 3, "frames": 4, "width": 128, "height": 96, "radius_range": [8, 12],
                                     "degradations": [{"frame": 1, "kind": "snow", "value": 0.6}]}))
    assert run(["synth", "--config", str(synth_cfg), "--out", str(tmp_path / "seq")]) == 0
    seq = tmp_path / "seq"
    coco = str(seq / "annotations.coco.json")
    preds = tmp_path / "pred.json"
    preds.write_text(json.dumps([{**a, "score": 0.5, "maskiou": 0.9} for a in json.loads(gt.read_text())["annotations"]]))
    evals = tmp_path / "evals"
    for mode in ("box", "mask"):
        assert run(["eval", "--gt", coco, "--pred", coco, "--mode", mode, "--out", str(evals / mode)]) == 0
    commands = [
        ["synth", "--config", str(synth_cfg), "--seed", "9"],
        ["split", "--gt", str(gt), "--scenario", "cross", "--seed", "7", "--export-coco"],
        ["split", "--gt", str(gt), "--scenario", "random", "--species", "PP", "--seed", "7"],
        ["split", "--gt", str(gt), "--scenario", "selective", "--species", "EP", "--seed", "7"],
        ["filter", "--manifest", str(seq / "manifest.csv")],
        ["eval", "--gt", str(gt), "--pred", str(preds), "--pr-csv"],
        ["recalibrate", "--pred", str(preds)],
        ["track", "--gt", coco, "--smooth-window", "3"],
        ["report", str(evals / "box" / "eval.json"), str(evals / "mask" / "eval.json")],
    ]
    t0 = time.perf_counter()
    differing = []
    for k, cmd in enumerate(commands):
        a, b = tmp_path / f"run{k}a", tmp_path / f"run{k}b"
        if run(cmd + ["--out", str(a)]) != 0 or run(cmd + ["--out", str(b)]) != 0 or _digest(a) != _digest(b):
            differing.append(cmd[0])
    dt = time.perf_counter() - t0
    verdict(8, not differing, f"{len(commands)} seeded invocations run twice, differing: {differing or 'none'}",
            dt, 120)


def test_criterion_9_scoring_math(verdict):
    t0 = time.perf_counter()
    loss_rows = [((1, 1, 1, 1, 1), 4.0), ((0, 0, 0, 7.5, 0), 0.0), ((0.3, 0.2, 0.4, 0.5, 2), 1.9)]
    loss_ok = all(total_loss(LossComponents(*args)) == want for args, want in loss_rows)
    rng = np.random.default_rng(9)
    recal_rows = [((0.9, 0.8), 0.72), ((0.0, 0.55), 0.0)]
    recal_rows += [((s, 1.0), s) for s in rng.uniform(size=20).tolist()]
    recal_ok = all(recalibrate_score(*args) == want for args, want in recal_rows)
    rank_bad = 0
    for _ in range(100):
        n = int(rng.integers(2, 40))
        scores = (rng.permutation(1000)[:n] / 1000 + 0.0005).tolist()
        m = float(rng.uniform(0.05, 1.0))
        before = sorted(range(n), key=lambda i: -scores[i])
        new = [recalibrate_score(s, m) for s in scores]
        after = sorted(range(n), key=lambda i: -new[i])
        if before != after:
            rank_bad += 1
    dt = time.perf_counter() - t0
    verdict(9, loss_ok and recal_ok and rank_bad == 0,
            f"loss table {loss_ok}, recalibration table {recal_ok}, rank changes {rank_bad}/100", dt, 5)
