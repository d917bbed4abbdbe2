"""Frame quality scores and threshold filtering.

Three scores are computed on the 8-bit luminance grid:

blur
    population variance of the 4-neighbour Laplacian over the valid region
    (low means blurry);
darkness
    mean luminance in [0, 255] (low means dark);
snow
    fraction of pixels at or above :data:`SNOW_LEVEL` (high means occluded).
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import kernels
from .errors import QualityError

SNOW_LEVEL = 230


@dataclass(frozen=True)
class Thresholds:
    min_blur: float = 100.0
    min_darkness: float = 30.0
    max_snow: float = 0.5


@dataclass(frozen=True)
class QualityScores:
    blur: float
    darkness: float
    snow: float


@dataclass(frozen=True)
class QualityReport:
    file_name: str
    scores: QualityScores
    verdict: str  # "keep" or "drop"
    reason: Optional[str] = None

    @property
    def kept(self):
        return self.verdict == "keep"


def luminance(rgb) -> np.ndarray:
    """Rec.601 luma rounded half-up, computed in integers."""
    a = np.asarray(rgb)
    if a.ndim == 2:
        return a.astype(np.uint8)
    if a.ndim != 3 or a.shape[2] < 3:
        raise QualityError(f"expected HxW or HxWx3 image, got shape {a.shape}")
    r, g, b = (a[..., k].astype(np.int64) for k in range(3))
    return ((299 * r + 587 * g + 114 * b + 500) // 1000).astype(np.uint8)


def quality_scores(gray) -> QualityScores:
    g = np.asarray(gray)
    if g.ndim != 2 or g.shape[0] < 3 or g.shape[1] < 3:
        raise QualityError(f"luminance grid must be at least 3x3, got shape {g.shape}")
    g = g.astype(np.uint8, copy=False)
    blur = float(kernels.laplacian_variance(g))
    darkness = int(g.sum(dtype=np.int64)) / g.size
    snow = int(np.count_nonzero(g >= SNOW_LEVEL)) / g.size
    return QualityScores(blur, darkness, snow)


def verdict(scores: QualityScores, th: Thresholds):
    """``(verdict, reason)``; reasons are checked in the order blurry, dark, snow."""
    if scores.blur < th.min_blur:
        return "drop", "blurry"
    if scores.darkness < th.min_darkness:
        return "drop", "dark"
    if scores.snow > th.max_snow:
        return "drop", "snow"
    return "keep", None


def filter_manifest(scored, thresholds: Thresholds = Thresholds()):
    """Apply thresholds to ``(file_name, QualityScores)`` pairs.

    Returns ``(reports, kept_names, dropped_names)`` in input order.
    """
    reports, kept, dropped = [], [], []
    for name, s in scored:
        v, reason = verdict(s, thresholds)
        reports.append(QualityReport(name, s, v, reason))
        (kept if v == "keep" else dropped).append(name)
    return reports, kept, dropped


def load_luminance(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        if im.mode in ("L", "I;16", "I", "F"):
            return np.asarray(im.convert("L"))
        return luminance(np.asarray(im.convert("RGB")))


def score_files(paths):
    return [(Path(p).name, quality_scores(load_luminance(p))) for p in paths]


def write_report_csv(reports, path=None):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["file_name", "blur", "darkness", "snow", "verdict", "reason"])
    for r in reports:
        w.writerow([r.file_name, repr(r.scores.blur), repr(r.scores.darkness), repr(r.scores.snow),
                    r.verdict, r.reason or ""])
    if path is not None:
        Path(path).write_text(buf.getvalue())
    return buf.getvalue()
