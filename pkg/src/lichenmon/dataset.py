"""Dataset model and the file formats around it.

Reads VIA 2.x projects, COCO datasets and COCO results files, and the image
manifest CSV that carries image size, camera and capture time.
"""
from __future__ import annotations

import csv
import io
import json
import math
import re
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

from .errors import GeometryError, IntegrityError, ParseError, ValidationError
from .mask import (
    Box, MaskGeometry, Polygon, Rle, area, bbox_of, geometry_from_coco, geometry_to_coco)

__all__ = [
    "ImageRecord", "Category", "InstanceAnnotation", "Detection", "Dataset", "ReportEntry",
    "DEFAULT_CATEGORIES", "DEFAULT_FILENAME_PATTERN",
    "parse_via", "export_coco", "parse_coco", "parse_predictions", "export_predictions",
    "read_manifest", "write_manifest", "resolve_timestamps", "load_json",
    "format_timestamp", "parse_timestamp",
]


@dataclass(frozen=True)
class ImageRecord:
    image_id: int
    file_name: str
    width: int
    height: int
    camera_id: str = ""
    captured_at: Optional[datetime] = None

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValidationError(
                f"image {self.image_id} ({self.file_name}) has invalid size {self.width}x{self.height}")


@dataclass(frozen=True)
class Category:
    category_id: int
    name: str
    code: str


@dataclass(frozen=True)
class InstanceAnnotation:
    ann_id: int
    image_id: int
    category_id: int
    mask: MaskGeometry
    box: Box


@dataclass(frozen=True)
class Detection:
    image_id: int
    category_id: int
    score: float
    mask: Optional[MaskGeometry] = None
    box: Optional[Box] = None
    predicted_maskiou: Optional[float] = None

    def __post_init__(self):
        if not (0.0 <= self.score <= 1.0):
            raise ValidationError(f"detection score {self.score} outside [0, 1]")
        if self.predicted_maskiou is not None and not (0.0 <= self.predicted_maskiou <= 1.0):
            raise ValidationError(f"predicted maskiou {self.predicted_maskiou} outside [0, 1]")


DEFAULT_CATEGORIES = (
    Category(1, "Pectenia plumbea", "PP"),
    Category(2, "Erioderma pedicellatum", "EP"),
    Category(3, "Lobaria pulmonaria", "LP"),
)


@dataclass(frozen=True)
class Dataset:
    images: tuple = ()
    categories: tuple = ()
    annotations: tuple = ()

    def __post_init__(self):
        for name in ("images", "categories", "annotations"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        self._check_integrity()

    def _check_integrity(self):
        image_ids = [im.image_id for im in self.images]
        if len(set(image_ids)) != len(image_ids):
            seen = set()
            dup = sorted({i for i in image_ids if i in seen or seen.add(i)})
            raise IntegrityError(f"duplicate image ids {dup}", dup)
        keys = [(im.camera_id, im.captured_at, im.file_name) for im in self.images]
        if len(set(keys)) != len(keys):
            raise IntegrityError("duplicate (camera_id, captured_at, file_name) among images")
        cat_ids = [c.category_id for c in self.categories]
        codes = [c.code for c in self.categories]
        if len(set(cat_ids)) != len(cat_ids) or len(set(codes)) != len(codes):
            raise IntegrityError("category ids and codes must be unique")
        ann_ids = [a.ann_id for a in self.annotations]
        if len(set(ann_ids)) != len(ann_ids):
            raise IntegrityError("duplicate annotation ids")
        img_set, cat_set = set(image_ids), set(cat_ids)
        bad = [a.ann_id for a in self.annotations
               if a.image_id not in img_set or a.category_id not in cat_set]
        if bad:
            raise IntegrityError(f"annotations with dangling image/category references: {bad}", bad)

    # lookups

    def image(self, image_id) -> ImageRecord:
        for im in self.images:
            if im.image_id == image_id:
                return im
        raise KeyError(image_id)

    def image_index(self):
        return {im.image_id: im for im in self.images}

    def category_by_code(self, code) -> Category:
        for c in self.categories:
            if c.code == code or c.name == code:
                return c
        raise KeyError(code)

    def annotations_by_image(self):
        out = {im.image_id: [] for im in self.images}
        for a in self.annotations:
            out[a.image_id].append(a)
        return out

    def subset(self, image_ids) -> "Dataset":
        keep = set(image_ids)
        return Dataset(
            tuple(im for im in self.images if im.image_id in keep),
            self.categories,
            tuple(a for a in self.annotations if a.image_id in keep),
        )


@dataclass(frozen=True)
class ReportEntry:
    """One skipped or rejected input item."""

    source: str
    index: Optional[int]
    kind: str
    message: str

    def as_dict(self):
        return {"source": self.source, "index": self.index, "kind": self.kind, "message": self.message}


def load_json(path):
    path = Path(path)
    try:
        with path.open() as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}", path) from None


# timestamps -------------------------------------------------------------

DEFAULT_FILENAME_PATTERN = (
    r"(?P<year>\d{4})(?P<month>\d{2})(?P<day>\d{2})[_\-T]?(?P<hour>\d{2})(?P<minute>\d{2})(?P<second>\d{2})?"
)


def parse_timestamp(text) -> datetime:
    """ISO-8601 to an aware UTC datetime; naive values are taken as UTC."""
    s = text.strip()
    if s.endswith("Z") or s.endswith("z"):
        s = s[:-1] + "+00:00"
    dt = datetime.fromisoformat(s)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def format_timestamp(dt: Optional[datetime]):
    if dt is None:
        return None
    return dt.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _timestamp_from_name(file_name, pattern):
    m = re.search(pattern, Path(file_name).name)
    if not m:
        return None
    g = m.groupdict()
    return datetime(int(g["year"]), int(g["month"]), int(g["day"]),
                    int(g.get("hour") or 0), int(g.get("minute") or 0), int(g.get("second") or 0),
                    tzinfo=timezone.utc)


def resolve_timestamps(rows, filename_pattern=None):
    """Turn manifest rows into :class:`ImageRecord` objects.

    ``rows`` are mappings with keys ``file_name, width, height, camera_id`` and
    optionally ``captured_at`` and ``image_id``. A row whose ``captured_at`` is
    empty falls back to ``filename_pattern`` (a regex with named groups
    ``year, month, day`` and optionally ``hour, minute, second``).

    Returns ``(records, report)``; rows that yield no timestamp are excluded
    and listed in the report.
    """
    records, report = [], []
    for idx, row in enumerate(rows):
        name = row.get("file_name", "")
        try:
            image_id = int(row["image_id"]) if row.get("image_id") not in (None, "") else idx + 1
            width, height = int(row["width"]), int(row["height"])
        except (KeyError, ValueError) as exc:
            report.append(ReportEntry(name, idx, "bad-row", f"missing or invalid field: {exc}"))
            continue
        ts = None
        raw = (row.get("captured_at") or "").strip()
        if raw:
            try:
                ts = parse_timestamp(raw)
            except ValueError:
                report.append(ReportEntry(name, idx, "bad-timestamp", f"unparseable timestamp {raw!r}"))
                continue
        elif filename_pattern:
            try:
                ts = _timestamp_from_name(name, filename_pattern)
            except ValueError as exc:
                report.append(ReportEntry(name, idx, "bad-timestamp", str(exc)))
                continue
        if ts is None:
            report.append(ReportEntry(name, idx, "no-timestamp",
                                      "no manifest timestamp and file name did not match the pattern"))
            continue
        try:
            records.append(ImageRecord(image_id, name, width, height, row.get("camera_id", "") or "", ts))
        except ValidationError as exc:
            report.append(ReportEntry(name, idx, "bad-row", str(exc)))
    return records, report


MANIFEST_FIELDS = ["file_name", "width", "height", "camera_id", "captured_at"]


def read_manifest(source):
    """Rows of a manifest CSV as dicts. ``source`` is a path or CSV text."""
    if isinstance(source, (str, Path)) and Path(source).exists():
        text = Path(source).read_text()
    else:
        text = str(source)
    reader = csv.DictReader(io.StringIO(text))
    missing = {"file_name", "width", "height"} - set(reader.fieldnames or [])
    if missing:
        raise ParseError(f"manifest lacks columns {sorted(missing)}", str(source)[:80])
    return list(reader)


def write_manifest(images, path=None, with_ids=False):
    buf = io.StringIO()
    fields = (["image_id"] if with_ids else []) + MANIFEST_FIELDS
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for im in images:
        row = {"file_name": im.file_name, "width": im.width, "height": im.height,
               "camera_id": im.camera_id, "captured_at": format_timestamp(im.captured_at) or ""}
        if with_ids:
            row["image_id"] = im.image_id
        w.writerow(row)
    if path is not None:
        Path(path).write_text(buf.getvalue())
    return buf.getvalue()


# VIA --------------------------------------------------------------------

def _via_entries(document):
    if not isinstance(document, dict):
        raise ParseError("VIA document must be a JSON object")
    if "_via_img_metadata" in document:
        entries = document["_via_img_metadata"]
    else:
        entries = document
    if not isinstance(entries, dict):
        raise ParseError("VIA image metadata must be an object")
    for key, entry in entries.items():
        if not isinstance(entry, dict) or "filename" not in entry:
            raise ParseError(f"entry {key!r} is not a VIA image record")
        yield key, entry


def _category_value(region_attributes, attr):
    value = region_attributes.get(attr)
    if isinstance(value, dict):  # checkbox attributes
        chosen = [k for k, v in value.items() if v]
        value = chosen[0] if len(chosen) == 1 else None
    if isinstance(value, str):
        value = value.strip()
    return value or None


def parse_via(document, category_attribute, images, categories=DEFAULT_CATEGORIES):
    """Convert a VIA 2.x project to a :class:`Dataset`.

    ``images`` are the manifest's :class:`ImageRecord` objects; they are the
    authority for image size. Each polygon region becomes one annotation.
    Regions that cannot be converted are skipped and listed in the returned
    report.

    Returns ``(dataset, report)``.
    """
    by_name = {im.file_name: im for im in images}
    by_base = {Path(im.file_name).name: im for im in images}
    cats = list(categories)
    lookup = {}
    for c in cats:
        lookup[c.code] = c
        lookup[c.name] = c
    next_cat = max((c.category_id for c in cats), default=0) + 1

    anns, report = [], []
    ann_id = 1
    for key, entry in _via_entries(document):
        fname = entry["filename"]
        im = by_name.get(fname) or by_base.get(Path(fname).name)
        if im is None:
            report.append(ReportEntry(fname, None, "unknown-image", "image not listed in the manifest"))
            continue
        regions = entry.get("regions") or []
        if isinstance(regions, dict):  # VIA 1.x stored regions keyed by index
            regions = [regions[k] for k in sorted(regions, key=lambda k: int(k))]
        for ri, region in enumerate(regions):
            shape = region.get("shape_attributes") or {}
            kind = shape.get("name")
            if kind not in ("polygon", "polyline"):
                report.append(ReportEntry(fname, ri, "unsupported-shape", f"shape {kind!r} is not a polygon"))
                continue
            value = _category_value(region.get("region_attributes") or {}, category_attribute)
            if value is None:
                report.append(ReportEntry(fname, ri, "missing-category",
                                          f"region has no {category_attribute!r} attribute"))
                continue
            cat = lookup.get(value)
            if cat is None:
                cat = Category(next_cat, value, value)
                next_cat += 1
                cats.append(cat)
                lookup[value] = cat
            try:
                xs, ys = shape["all_points_x"], shape["all_points_y"]
                if len(xs) != len(ys):
                    raise GeometryError("x and y point lists differ in length")
                poly = Polygon(tuple(zip(xs, ys)))
            except (KeyError, TypeError, GeometryError) as exc:
                report.append(ReportEntry(fname, ri, "invalid-geometry", str(exc)))
                continue
            box = bbox_of(poly, im.height, im.width)
            anns.append(InstanceAnnotation(ann_id, im.image_id, cat.category_id, poly, box))
            ann_id += 1
    return Dataset(tuple(images), tuple(cats), tuple(anns)), report


# COCO -------------------------------------------------------------------

def export_coco(dataset: Dataset):
    images = []
    for im in dataset.images:
        d = {"id": im.image_id, "file_name": im.file_name, "width": im.width, "height": im.height}
        if im.camera_id:
            d["camera_id"] = im.camera_id
        if im.captured_at is not None:
            d["captured_at"] = format_timestamp(im.captured_at)
        images.append(d)
    index = dataset.image_index()
    anns = []
    for a in dataset.annotations:
        im = index[a.image_id]
        anns.append({
            "id": a.ann_id,
            "image_id": a.image_id,
            "category_id": a.category_id,
            "segmentation": geometry_to_coco(a.mask),
            "bbox": a.box.to_list(),
            "area": area(a.mask, im.height, im.width),
            "iscrowd": 0,
        })
    cats = [{"id": c.category_id, "name": c.name, "supercategory": "lichen", "code": c.code}
            for c in dataset.categories]
    return {"images": images, "annotations": anns, "categories": cats}


def parse_coco(document, check_boxes=True) -> Dataset:
    """Build a :class:`Dataset` from a COCO-style document.

    Raises :class:`IntegrityError` listing annotation ids whose image or
    category is missing, or whose box is more than a pixel away from the
    mask's tight box.
    """
    if not isinstance(document, dict):
        raise ParseError("COCO document must be a JSON object")
    try:
        images = []
        for d in document.get("images", []):
            ts = d.get("captured_at") or d.get("date_captured")
            images.append(ImageRecord(int(d["id"]), d["file_name"], int(d["width"]), int(d["height"]),
                                      d.get("camera_id", "") or "",
                                      parse_timestamp(ts) if ts else None))
        cats = [Category(int(d["id"]), d["name"], d.get("code") or d["name"])
                for d in document.get("categories", [])]
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed images/categories entry: {exc}") from None

    index = {im.image_id: im for im in images}
    cat_ids = {c.category_id for c in cats}
    anns, dangling, bad_boxes = [], [], []
    for i, d in enumerate(document.get("annotations", [])):
        try:
            ann_id, image_id, cat_id = int(d["id"]), int(d["image_id"]), int(d["category_id"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"annotation {i}: {exc}") from None
        im = index.get(image_id)
        if im is None or cat_id not in cat_ids:
            dangling.append(ann_id)
            continue
        try:
            mask = geometry_from_coco(d["segmentation"], im.height, im.width)
            box = Box.from_list(d["bbox"]) if d.get("bbox") is not None else bbox_of(mask, im.height, im.width)
        except (KeyError, GeometryError) as exc:
            raise ParseError(f"annotation {ann_id}: {exc}") from None
        if check_boxes and not _box_close(box, bbox_of(mask, im.height, im.width)):
            bad_boxes.append(ann_id)
        anns.append(InstanceAnnotation(ann_id, image_id, cat_id, mask, box))
    if dangling:
        raise IntegrityError(f"annotations reference missing images or categories: {dangling}", dangling)
    if bad_boxes:
        raise IntegrityError(f"annotation boxes disagree with their masks: {bad_boxes}", bad_boxes)
    return Dataset(tuple(images), tuple(cats), tuple(anns))


def _box_close(a: Box, b: Box, tol=1.0 + 1e-9):
    if b.w == 0 and b.h == 0:
        return True  # mask covers no pixel center; any small box is acceptable
    return (abs(a.x - b.x) <= tol and abs(a.y - b.y) <= tol
            and abs(a.x2 - b.x2) <= tol and abs(a.y2 - b.y2) <= tol)


# predictions ------------------------------------------------------------

def parse_predictions(document, dataset: Optional[Dataset] = None):
    """Validate a COCO results array and return detections.

    Output is sorted stably by ``(image_id, -score)``.
    """
    if not isinstance(document, list):
        raise ParseError("predictions document must be a JSON array")
    index = dataset.image_index() if dataset is not None else None
    cat_ids = {c.category_id for c in dataset.categories} if dataset is not None else None
    dets = []
    for i, d in enumerate(document):
        if not isinstance(d, dict):
            raise ValidationError(f"prediction {i}: not an object")
        try:
            image_id, cat_id = int(d["image_id"]), int(d["category_id"])
            score = float(d["score"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"prediction {i}: missing or invalid field {exc}") from None
        if not (math.isfinite(score) and 0.0 <= score <= 1.0):
            raise ValidationError(f"prediction {i}: score {score} outside [0, 1]")
        if index is not None and image_id not in index:
            raise ValidationError(f"prediction {i}: unknown image_id {image_id}")
        if cat_ids is not None and cat_id not in cat_ids:
            raise ValidationError(f"prediction {i}: unknown category_id {cat_id}")
        miou = d.get("maskiou", d.get("predicted_maskiou"))
        if miou is not None:
            miou = float(miou)
            if not (0.0 <= miou <= 1.0):
                raise ValidationError(f"prediction {i}: maskiou {miou} outside [0, 1]")
        mask = box = None
        try:
            if d.get("segmentation") is not None:
                if index is not None:
                    im = index[image_id]
                    mask = geometry_from_coco(d["segmentation"], im.height, im.width)
                elif isinstance(d["segmentation"], dict):
                    mask = Rle.from_coco(d["segmentation"])
                else:
                    raise ValidationError(f"prediction {i}: polygon segmentation needs a dataset for image size")
            if d.get("bbox") is not None:
                box = Box.from_list(d["bbox"])
        except GeometryError as exc:
            raise ValidationError(f"prediction {i}: {exc}") from None
        if mask is None and box is None:
            raise ValidationError(f"prediction {i}: needs a segmentation or a bbox")
        if box is None:
            box = bbox_of(mask, im.height, im.width) if isinstance(mask, Polygon) else bbox_of(mask)
        dets.append(Detection(image_id, cat_id, score, mask, box, miou))
    # stable: equal keys keep input order
    return sorted(dets, key=lambda x: (x.image_id, -x.score))


def export_predictions(detections):
    out = []
    for d in detections:
        e = {"image_id": d.image_id, "category_id": d.category_id, "score": d.score}
        if d.mask is not None:
            e["segmentation"] = geometry_to_coco(d.mask)
        if d.box is not None:
            e["bbox"] = d.box.to_list()
        if d.predicted_maskiou is not None:
            e["maskiou"] = d.predicted_maskiou
        out.append(e)
    return out
