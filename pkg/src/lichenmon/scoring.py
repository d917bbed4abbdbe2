"""Mask-scoring arithmetic: IoU targets, score recalibration, loss sums.

The network that predicts mask quality lives elsewhere; these functions only
do the math on the numbers it produces.
"""
from __future__ import annotations

import math
from decimal import Decimal, localcontext
from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatchError, ValidationError
from .mask import BitMask

__all__ = ["SoftMask", "LossComponents", "maskiou_target", "recalibrate_score",
           "maskiou_regression_loss", "total_loss", "recalibrate_predictions"]


class SoftMask:
    """Per-pixel foreground probabilities."""

    __slots__ = ("probabilities",)

    def __init__(self, probabilities):
        p = np.array(probabilities, dtype=np.float64, copy=True)
        if p.ndim != 2:
            raise ValidationError(f"soft mask must be 2D, got shape {p.shape}")
        if not np.all((p >= 0.0) & (p <= 1.0)):
            raise ValidationError("soft mask probabilities must lie in [0, 1]")
        p.setflags(write=False)
        object.__setattr__(self, "probabilities", p)

    def __setattr__(self, name, value):
        raise AttributeError("SoftMask is immutable")

    @property
    def shape(self):
        return self.probabilities.shape

    def binarize(self, threshold=0.5) -> BitMask:
        return BitMask(self.probabilities >= threshold)


@dataclass(frozen=True)
class LossComponents:
    l_cls: float
    l_bbox: float
    l_mask: float
    l_maskiou: float
    weight: float  # scalar weight on the mask-IoU term

    def __post_init__(self):
        for name in ("l_cls", "l_bbox", "l_mask", "l_maskiou", "weight"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v >= 0):
                raise ValidationError(f"{name} must be finite and non-negative, got {v!r}")


def maskiou_target(pred: SoftMask, gt: BitMask, binarize_at=0.5) -> float:
    """IoU of the binarized prediction against the ground-truth mask."""
    if pred.shape != gt.shape:
        raise ShapeMismatchError(f"prediction {pred.shape} vs ground truth {gt.shape}")
    b = pred.probabilities >= binarize_at
    inter = int(np.count_nonzero(b & gt.bits))
    union = int(np.count_nonzero(b | gt.bits))
    return inter / union if union else 0.0


def _unit(name, v):
    if not (isinstance(v, (int, float)) and 0.0 <= v <= 1.0):
        raise ValidationError(f"{name} must be in [0, 1], got {v!r}")


def recalibrate_score(cls_score, predicted_maskiou) -> float:
    """``cls_score * predicted_maskiou``.

    Scores arrive as decimal text in result files, so the product is taken
    on the shortest decimal form of each input and rounded once to a float:
    (0.9, 0.8) gives 0.72 rather than 0.7200000000000001. Rounding once is
    monotone, so rankings under a common factor are preserved.
    """
    _unit("cls_score", cls_score)
    _unit("predicted_maskiou", predicted_maskiou)
    with localcontext() as ctx:
        ctx.prec = 60
        return float(Decimal(repr(float(cls_score))) * Decimal(repr(float(predicted_maskiou))))


def maskiou_regression_loss(predicted_iou, target_iou) -> float:
    """Halved squared error."""
    d = predicted_iou - target_iou
    return d * d / 2.0


def total_loss(c: LossComponents) -> float:
    return c.l_cls + c.l_bbox + c.l_mask + c.weight * c.l_maskiou


def recalibrate_predictions(entries):
    """Rewrite COCO result entries, multiplying ``score`` by ``maskiou``.

    Entries without a ``maskiou`` field pass through unchanged. Returns the
    new list and a summary with ``rescored`` and ``passed_through`` counts.
    """
    out, rescored, passed = [], 0, 0
    for i, e in enumerate(entries):
        e = dict(e)
        miou = e.get("maskiou")
        if miou is None:
            passed += 1
        else:
            try:
                e["score"] = recalibrate_score(float(e["score"]), float(miou))
            except (KeyError, TypeError, ValueError, ValidationError) as exc:
                raise ValidationError(f"prediction {i}: {exc}") from None
            rescored += 1
        out.append(e)
    return out, {"total": len(out), "rescored": rescored, "passed_through": passed}
