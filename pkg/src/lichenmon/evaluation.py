"""Average-precision evaluation of box or mask predictions.

Matching is greedy: detections are taken in descending score order and each
claims the still-unmatched ground truth of the same image and category with
the highest IoU, provided that IoU is at least the threshold. Ties in IoU go
to the ground truth with the smaller annotation id.

AP at one IoU threshold averages, over a fixed set of recall points, the
interpolated precision ``max{p(r') : r' >= r}`` (0 when no point on the
curve reaches recall ``r``). Two recall-point sets are provided: ``"paper"``
(0.50, 0.55, ..., 0.95) and ``"coco"`` (0.00, 0.01, ..., 1.00).

mAP sums the category-averaged AP over the IoU thresholds and divides by
either the number of thresholds (``"n_thresholds"``) or by 9
(``"paper_9"``). The latter exceeds 1 for near-perfect predictions with the
default ten thresholds; the reported value is capped at 1 and the raw sum
quotient is kept in ``EvalResult.map_uncapped``.

Detection order is canonical, so results do not depend on the order of the
input array: detections are sorted by ``(image_id, -score)`` and then by
content (category, box, mask runs).
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dataset import Dataset, Detection
from .errors import ValidationError
from .mask import iou_matrix, to_rle

DEFAULT_THRESHOLDS = tuple(k / 100 for k in range(50, 100, 5))
RECALL_POINT_SETS = {
    "paper": tuple(k / 100 for k in range(50, 100, 5)),
    "coco": tuple(k / 100 for k in range(0, 101)),
}
DIVISORS = ("n_thresholds", "paper_9")
MODES = ("mask", "box")


@dataclass(frozen=True)
class EvalParams:
    iou_thresholds: tuple = DEFAULT_THRESHOLDS
    recall_points: object = "coco"
    divisor: str = "n_thresholds"
    mode: str = "mask"
    max_detections: int = 100

    def __post_init__(self):
        th = tuple(float(t) for t in self.iou_thresholds)
        object.__setattr__(self, "iou_thresholds", th)
        if not th or any(not 0 < t <= 1 for t in th) or any(b <= a for a, b in zip(th, th[1:])):
            raise ValidationError("IoU thresholds must be strictly increasing in (0, 1]")
        rp = self.recall_values
        if not rp or any(not 0 <= r <= 1 for r in rp) or any(b <= a for a, b in zip(rp, rp[1:])):
            raise ValidationError("recall points must be strictly increasing in [0, 1]")
        if self.divisor not in DIVISORS:
            raise ValidationError(f"divisor must be one of {DIVISORS}")
        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}")
        if self.max_detections < 1:
            raise ValidationError("max_detections must be positive")

    @property
    def recall_values(self):
        if isinstance(self.recall_points, str):
            try:
                return RECALL_POINT_SETS[self.recall_points]
            except KeyError:
                raise ValidationError(f"unknown recall point set {self.recall_points!r}") from None
        return tuple(float(r) for r in self.recall_points)

    def to_dict(self):
        return {
            "iou_thresholds": list(self.iou_thresholds),
            "recall_points": self.recall_points if isinstance(self.recall_points, str)
            else list(self.recall_values),
            "divisor": self.divisor,
            "mode": self.mode,
            "max_detections": self.max_detections,
        }


@dataclass(frozen=True)
class Match:
    det_index: int
    gt_index: Optional[int]
    iou: float


def match_detections(iou, threshold, order=None):
    """Greedy matching on a precomputed ``(n_det, n_gt)`` IoU matrix.

    ``order`` lists detection row indices from highest to lowest score; by
    default rows are already in that order. Columns are ground truths in
    tie-break order. Returns one :class:`Match` per detection, in ``order``.
    """
    iou = np.asarray(iou, dtype=np.float64)
    n_det = iou.shape[0]
    n_gt = iou.shape[1] if iou.ndim == 2 else 0
    order = range(n_det) if order is None else order
    taken = np.zeros(n_gt, dtype=bool)
    out = []
    for d in order:
        best, best_iou = None, -1.0
        for g in range(n_gt):
            if not taken[g] and iou[d, g] >= threshold and iou[d, g] > best_iou:
                best, best_iou = g, iou[d, g]
        if best is None:
            out.append(Match(d, None, 0.0))
        else:
            taken[best] = True
            out.append(Match(d, best, float(best_iou)))
    return out


def pr_curve(flags, n_gt):
    """Precision/recall after each detection prefix.

    ``flags`` are true-positive booleans in global descending-score order.
    """
    if n_gt == 0:
        return []
    curve, tp, fp = [], 0, 0
    for f in flags:
        if f:
            tp += 1
        else:
            fp += 1
        curve.append((tp / n_gt, tp / (tp + fp)))
    return curve


def ap_at_iou(curve, recall_points):
    if not curve:
        return 0.0
    recalls = np.array([r for r, _ in curve])
    prec = np.array([p for _, p in curve])
    # running max from the right gives max precision over recall >= curve point
    tail = np.maximum.accumulate(prec[::-1])[::-1]
    total = 0.0
    for r in recall_points:
        idx = np.searchsorted(recalls, r, side="left")
        # recall is non-decreasing along the curve
        if idx < len(recalls):
            total += tail[idx]
    return float(total / len(recall_points))


@dataclass
class CategoryResult:
    category_id: int
    code: str
    n_gt: int
    ap: dict = field(default_factory=dict)        # threshold -> AP
    pr: dict = field(default_factory=dict)        # threshold -> [(recall, precision)]
    counts: dict = field(default_factory=dict)    # threshold -> (tp, fp, fn)


@dataclass
class EvalResult:
    params: EvalParams
    per_category: dict
    map: float
    map50: Optional[float]
    map75: Optional[float]
    map_uncapped: float
    matches: dict = field(default_factory=dict, repr=False)

    def counts(self):
        """Totals over categories: threshold -> (tp, fp, fn)."""
        out = {}
        for t in self.params.iou_thresholds:
            tp = sum(c.counts[t][0] for c in self.per_category.values())
            fp = sum(c.counts[t][1] for c in self.per_category.values())
            fn = sum(c.counts[t][2] for c in self.per_category.values())
            out[t] = (tp, fp, fn)
        return out

    def to_report(self, extra=None):
        def key(t):
            return f"AP@{t:.2f}"

        per_cat = {}
        for code, c in self.per_category.items():
            entry = {key(t): c.ap[t] for t in self.params.iou_thresholds} if c.n_gt else {}
            entry["n_gt"] = c.n_gt
            entry["counts"] = {f"{t:.2f}": {"tp": c.counts[t][0], "fp": c.counts[t][1], "fn": c.counts[t][2]}
                               for t in self.params.iou_thresholds}
            per_cat[code] = entry
        report = {
            "mode": self.params.mode,
            "params": self.params.to_dict(),
            "per_category": per_cat,
            "mAP": self.map,
            "mAP50": self.map50,
            "mAP75": self.map75,
            "mAP_uncapped": self.map_uncapped,
            "counts": {f"{t:.2f}": dict(zip(("tp", "fp", "fn"), v)) for t, v in self.counts().items()},
        }
        if extra:
            report.update(extra)
        return report

    def pr_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["category", "iou_threshold", "rank", "recall", "precision"])
        for code, c in self.per_category.items():
            for t in self.params.iou_thresholds:
                for k, (r, p) in enumerate(c.pr.get(t, []), 1):
                    w.writerow([code, f"{t:.2f}", k, repr(r), repr(p)])
        return buf.getvalue()


def _content_key(det: Detection, rle_counts):
    box = tuple(det.box.to_list()) if det.box is not None else ()
    return (det.category_id, box, rle_counts)


def evaluate(gt: Dataset, detections, params: EvalParams = EvalParams()) -> EvalResult:
    images = gt.image_index()
    cat_by_id = {c.category_id: c for c in gt.categories}
    mode = params.mode

    def operand(geom_or_box, box, im, what):
        if mode == "box":
            if box is None:
                raise ValidationError(f"{what} has no box")
            return box
        if geom_or_box is None:
            raise ValidationError(f"{what} has no mask; mask-mode evaluation needs segmentations")
        return to_rle(geom_or_box, im.height, im.width)

    # canonical detection order
    prepared = []
    for i, d in enumerate(detections):
        if d.image_id not in images:
            raise ValidationError(f"detection {i}: unknown image_id {d.image_id}")
        if d.category_id not in cat_by_id:
            raise ValidationError(f"detection {i}: unknown category_id {d.category_id}")
        im = images[d.image_id]
        op = operand(d.mask, d.box, im, f"detection {i}")
        rle_key = () if mode == "box" else op.counts
        prepared.append(((d.image_id, -d.score, _content_key(d, rle_key)), d, op))
    prepared.sort(key=lambda x: x[0])

    per_image = {}
    for _, d, op in prepared:
        lst = per_image.setdefault(d.image_id, [])
        if len(lst) < params.max_detections:
            lst.append((d, op))

    gts = {}
    for a in sorted(gt.annotations, key=lambda a: a.ann_id):
        im = images[a.image_id]
        gts.setdefault((a.image_id, a.category_id), []).append(
            (a, operand(a.mask, a.box, im, f"annotation {a.ann_id}")))

    dets_by_key = {}
    for image_id, lst in per_image.items():
        for rank, (d, op) in enumerate(lst):
            dets_by_key.setdefault((image_id, d.category_id), []).append((rank, d, op))

    thresholds = params.iou_thresholds
    # (category, threshold) -> list of (sort key, tp flag)
    flags = {}
    matches = {}
    for key in sorted(set(dets_by_key) | set(gts)):
        image_id, cat_id = key
        dl = dets_by_key.get(key, [])
        gl = gts.get(key, [])
        im = images[image_id]
        if dl and gl:
            mat = iou_matrix([op for _, _, op in dl], [op for _, op in gl], mode=mode,
                             height=im.height, width=im.width)
        else:
            mat = np.zeros((len(dl), len(gl)))
        for t in thresholds:
            ms = match_detections(mat, t)
            matches[(image_id, cat_id, t)] = [
                Match(m.det_index, None if m.gt_index is None else gl[m.gt_index][0].ann_id, m.iou)
                for m in ms]
            bucket = flags.setdefault((cat_id, t), [])
            for m in ms:
                rank, d, _ = dl[m.det_index]
                bucket.append(((-d.score, image_id, rank), m.gt_index is not None))

    n_gt = {c: 0 for c in cat_by_id}
    for a in gt.annotations:
        n_gt[a.category_id] += 1

    per_category = {}
    for cat in gt.categories:
        cr = CategoryResult(cat.category_id, cat.code, n_gt[cat.category_id])
        for t in thresholds:
            fl = [f for _, f in sorted(flags.get((cat.category_id, t), []), key=lambda x: x[0])]
            curve = pr_curve(fl, cr.n_gt)
            cr.pr[t] = curve
            cr.ap[t] = ap_at_iou(curve, params.recall_values)
            tp = sum(fl)
            cr.counts[t] = (tp, len(fl) - tp, cr.n_gt - tp)
        per_category[cat.code] = cr

    scored = [c for c in per_category.values() if c.n_gt > 0]

    def mean_ap(t):
        if not scored:
            return 0.0
        return float(sum(c.ap[t] for c in scored) / len(scored))

    total = sum(mean_ap(t) for t in thresholds)
    div = len(thresholds) if params.divisor == "n_thresholds" else 9
    raw = total / div
    return EvalResult(
        params=params,
        per_category=per_category,
        map=min(raw, 1.0),
        map50=mean_ap(0.5) if 0.5 in thresholds else None,
        map75=mean_ap(0.75) if 0.75 in thresholds else None,
        map_uncapped=raw,
        matches=matches,
    )


def detections_from_dataset(gt: Dataset, score=1.0):
    """Echo ground truth as detections (useful as a sanity check)."""
    return [Detection(a.image_id, a.category_id, score, a.mask, a.box) for a in gt.annotations]
