"""Link instances across a fixed-camera sequence and turn tracks into area series.

Linking is greedy: at every frame the candidate (open track, instance) pairs
with matching category and mask IoU >= ``link_iou`` are taken in order of
descending IoU, ties broken by smaller instance id and then smaller track id.
A track that goes unmatched for more than ``max_gap`` consecutive frames is
closed. Unmatched instances open new tracks, numbered in instance-id order so
that the partition does not depend on the order instances are listed in.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from typing import Optional

import numpy as np

from .dataset import Dataset, format_timestamp
from .errors import OrderingError, ParameterError, ValidationError
from .mask import iou_matrix, to_rle


@dataclass(frozen=True)
class Instance:
    ref_id: int          # annotation id, or detection index
    category_id: int
    mask: object


@dataclass(frozen=True)
class Frame:
    image_id: int
    captured_at: datetime
    camera_id: str
    height: int
    width: int
    instances: tuple = ()


@dataclass(frozen=True)
class Member:
    image_id: int
    captured_at: datetime
    ref_id: int
    area_px: int


@dataclass
class Track:
    track_id: int
    category_id: int
    camera_id: str
    members: list = field(default_factory=list)
    gap_count: int = 0

    def __len__(self):
        return len(self.members)


@dataclass(frozen=True)
class SeriesPoint:
    captured_at: datetime
    area_px: int
    area_cm2: Optional[float] = None


@dataclass(frozen=True)
class BiomassSeries:
    track_id: int
    category_id: int
    points: tuple
    smoothed: Optional[tuple] = None

    @property
    def areas(self):
        return [p.area_px for p in self.points]


@dataclass(frozen=True)
class ChangeRow:
    track_id: int
    period: str
    first_area: float
    last_area: float
    abs_change: float
    rel_change: Optional[float]
    n_obs: int
    growth_per_frame: Optional[float]


def frames_from_dataset(dataset: Dataset, camera_id=None, detections=None, min_score=0.0):
    """Build time-ordered frames for one camera.

    Instances come from the dataset's annotations, or from ``detections``
    (ref_id = position in that list) when given.
    """
    cams = sorted({im.camera_id for im in dataset.images})
    if camera_id is None:
        if len(cams) > 1:
            raise ValidationError(f"dataset spans several cameras {cams}; choose one")
        camera_id = cams[0] if cams else ""
    images = [im for im in dataset.images if im.camera_id == camera_id]
    missing = [im.image_id for im in images if im.captured_at is None]
    if missing:
        raise ValidationError(f"images without capture time: {missing}")
    per_image = {im.image_id: [] for im in images}
    if detections is None:
        for a in dataset.annotations:
            if a.image_id in per_image:
                per_image[a.image_id].append(Instance(a.ann_id, a.category_id, a.mask))
    else:
        for k, d in enumerate(detections):
            if d.image_id in per_image and d.score >= min_score:
                if d.mask is None:
                    raise ValidationError(f"detection {k} has no mask")
                per_image[d.image_id].append(Instance(k, d.category_id, d.mask))
    images.sort(key=lambda im: (im.captured_at, im.image_id))
    return [Frame(im.image_id, im.captured_at, im.camera_id, im.height, im.width,
                  tuple(per_image[im.image_id])) for im in images]


def link_instances(frames, link_iou=0.5, max_gap=3):
    if not 0.0 < link_iou <= 1.0:
        raise ParameterError(f"link_iou must be in (0, 1], got {link_iou}")
    if max_gap < 0:
        raise ParameterError(f"max_gap must be >= 0, got {max_gap}")
    frames = list(frames)
    for a, b in zip(frames, frames[1:]):
        if not a.captured_at < b.captured_at:
            raise OrderingError(
                f"frames not strictly increasing in time: image {a.image_id} at "
                f"{format_timestamp(a.captured_at)} then image {b.image_id} at {format_timestamp(b.captured_at)}")
    cams = {f.camera_id for f in frames}
    if len(cams) > 1:
        raise ValidationError(f"frames come from several cameras: {sorted(cams)}")

    tracks = []
    open_ = []      # [track, last rle, consecutive misses]
    for fr in frames:
        insts = sorted(fr.instances, key=lambda i: i.ref_id)
        rles = [to_rle(i.mask, fr.height, fr.width) for i in insts]
        pairs = []
        if open_ and insts:
            mat = iou_matrix([o[1] for o in open_], rles, height=fr.height, width=fr.width)
            for ti, o in enumerate(open_):
                for ii, inst in enumerate(insts):
                    if o[0].category_id == inst.category_id and mat[ti, ii] >= link_iou:
                        pairs.append((-mat[ti, ii], inst.ref_id, o[0].track_id, ti, ii))
        pairs.sort()
        used_t, used_i = set(), set()
        for _, _, _, ti, ii in pairs:
            if ti in used_t or ii in used_i:
                continue
            used_t.add(ti)
            used_i.add(ii)
            o = open_[ti]
            o[0].members.append(Member(fr.image_id, fr.captured_at, insts[ii].ref_id, rles[ii].area))
            o[1] = rles[ii]
            o[2] = 0
        still = []
        for ti, o in enumerate(open_):
            if ti not in used_t:
                o[2] += 1
            if o[2] <= max_gap:
                still.append(o)
        open_ = still
        for ii, inst in enumerate(insts):
            if ii in used_i:
                continue
            t = Track(len(tracks) + 1, inst.category_id, fr.camera_id,
                      [Member(fr.image_id, fr.captured_at, inst.ref_id, rles[ii].area)])
            tracks.append(t)
            open_.append([t, rles[ii], 0])
    pos = {fr.image_id: k for k, fr in enumerate(frames)}
    for t in tracks:
        span = pos[t.members[-1].image_id] - pos[t.members[0].image_id] + 1
        t.gap_count = span - len(t.members)
    return tracks


def track_dataset(dataset: Dataset, link_iou=0.5, max_gap=3, detections=None, min_score=0.0):
    """Link every camera separately; track ids are renumbered globally."""
    out = []
    for cam in sorted({im.camera_id for im in dataset.images}):
        frames = frames_from_dataset(dataset, cam, detections, min_score)
        for t in link_instances(frames, link_iou, max_gap):
            t.track_id = len(out) + 1
            out.append(t)
    return out


def rolling_median(values, window):
    if window < 1 or window % 2 == 0:
        raise ParameterError(f"smoothing window must be a positive odd integer, got {window}")
    v = np.asarray(values, dtype=np.float64)
    h = window // 2
    return tuple(float(np.median(v[max(0, i - h): i + h + 1])) for i in range(len(v)))


def biomass_series(track: Track, px_to_cm2=None, smooth_window=None) -> BiomassSeries:
    if not track.members:
        raise ValidationError(f"track {track.track_id} is empty")
    if px_to_cm2 is not None and px_to_cm2 <= 0:
        raise ParameterError("px_to_cm2 must be positive")
    pts = tuple(SeriesPoint(m.captured_at, m.area_px,
                            None if px_to_cm2 is None else m.area_px * px_to_cm2)
                for m in track.members)
    sm = None if smooth_window is None else rolling_median([p.area_px for p in pts], smooth_window)
    return BiomassSeries(track.track_id, track.category_id, pts, sm)


def infer_cadence(series_list):
    """Smallest positive spacing between consecutive observations of any series."""
    best = None
    for s in series_list:
        for a, b in zip(s.points, s.points[1:]):
            d = b.captured_at - a.captured_at
            if d > timedelta(0) and (best is None or d < best):
                best = d
    return best


def _row(track_id, period, pts, cadence):
    first, last = pts[0].area_px, pts[-1].area_px
    rel = (last - first) / first if first else None
    growth = None
    if len(pts) > 1 and first > 0 and last > 0 and cadence:
        steps = round((pts[-1].captured_at - pts[0].captured_at) / cadence)
        if steps > 0:
            growth = (last / first) ** (1.0 / steps)
    return ChangeRow(track_id, period, first, last, last - first, rel, len(pts), growth)


def change_report(series_list, period="whole", cadence: Optional[timedelta] = None):
    """First/last area, change and per-frame geometric growth per track and period.

    ``period`` is ``"whole"`` or ``"month"`` (calendar month of the UTC
    timestamp; months without observations produce no row). The frame cadence
    defaults to the smallest spacing seen in any series, so frames missing
    from a series count as elapsed steps.
    """
    series_list = list(series_list)
    if not series_list:
        raise ValidationError("change report needs at least one series")
    if period not in ("whole", "month"):
        raise ParameterError(f"period must be 'whole' or 'month', got {period!r}")
    cadence = cadence or infer_cadence(series_list)
    rows = []
    for s in series_list:
        if period == "whole":
            rows.append(_row(s.track_id, "whole", s.points, cadence))
            continue
        groups = {}
        for p in s.points:
            groups.setdefault(p.captured_at.strftime("%Y-%m"), []).append(p)
        for key in sorted(groups):
            rows.append(_row(s.track_id, key, groups[key], cadence))
    return rows


def _fmt(v):
    return "" if v is None else repr(v)


def series_csv(series_list):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["track_id", "timestamp", "area_px", "area_cm2", "smoothed"])
    for s in series_list:
        for k, p in enumerate(s.points):
            w.writerow([s.track_id, format_timestamp(p.captured_at), p.area_px, _fmt(p.area_cm2),
                        _fmt(s.smoothed[k] if s.smoothed else None)])
    return buf.getvalue()


def series_json(series_list, tracks=None):
    by_id = {t.track_id: t for t in tracks or ()}
    out = []
    for s in series_list:
        entry = {"track_id": s.track_id, "category_id": s.category_id, "points": [
            {"timestamp": format_timestamp(p.captured_at), "area_px": p.area_px, "area_cm2": p.area_cm2,
             "smoothed": s.smoothed[k] if s.smoothed else None}
            for k, p in enumerate(s.points)]}
        t = by_id.get(s.track_id)
        if t is not None:
            entry["camera_id"] = t.camera_id
            entry["gap_count"] = t.gap_count
            entry["members"] = [{"image_id": m.image_id, "ref_id": m.ref_id} for m in t.members]
        out.append(entry)
    return json.dumps({"tracks": out}, indent=2, sort_keys=True) + "\n"


def change_report_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["track_id", "period", "first_area", "last_area", "abs_change", "rel_change",
                "n_obs", "growth_per_frame"])
    for r in rows:
        w.writerow([r.track_id, r.period, r.first_area, r.last_area, r.abs_change, _fmt(r.rel_change),
                    r.n_obs, _fmt(r.growth_per_frame)])
    return buf.getvalue()
