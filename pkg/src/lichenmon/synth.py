"""Seeded synthetic time-lapse of growing lichens with exact ground truth.

Each lichen is a star-convex polygon (a circle with seeded radial jitter)
whose shape stays fixed while its linear scale grows by ``sqrt(growth)`` per
frame, so its area grows by ``growth``. Placement is rejection-sampled
against the final-frame extent, so no two lichens ever overlap. Degradations
are applied to the rendered pixels only; annotations and the truth ledger
describe the clean geometry.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from .dataset import (
    DEFAULT_CATEGORIES, Dataset, ImageRecord, InstanceAnnotation, export_coco, parse_timestamp,
    write_manifest)
from .errors import ParameterError, PlacementError
from .mask import Polygon, bbox_of, rasterize

DEGRADATIONS = ("none", "blur", "darken", "snow")
MAX_PLACEMENT_ATTEMPTS = 1000
SPECIES_COLORS = {"PP": (70, 96, 120), "EP": (120, 130, 90), "LP": (96, 150, 70)}


@dataclass(frozen=True)
class Degradation:
    frame: int
    kind: str            # blur | darken | snow | none
    value: float = 0.0   # sigma, brightness scale, or snow coverage

    def __post_init__(self):
        if self.kind not in DEGRADATIONS:
            raise ParameterError(f"unknown degradation {self.kind!r}")
        if self.kind == "blur" and self.value <= 0:
            raise ParameterError("blur sigma must be positive")
        if self.kind == "darken" and not 0 <= self.value <= 1:
            raise ParameterError("darken scale must lie in [0, 1]")
        if self.kind == "snow" and not 0 <= self.value <= 1:
            raise ParameterError("snow coverage must lie in [0, 1]")


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    width: int = 256
    height: int = 192
    n_lichens: int = 3
    frames: int = 10
    growth_factor: float = 1.05
    degradations: tuple = ()
    species: tuple = ("LP",)
    camera_id: str = "CAM1"
    start: str = "2021-06-01T08:00:00Z"
    cadence_minutes: int = 120
    radius_range: tuple = (12.0, 22.0)
    n_vertices: int = 24
    roughness: float = 0.2

    def __post_init__(self):
        degs = tuple(d if isinstance(d, Degradation) else Degradation(**d) for d in self.degradations)
        object.__setattr__(self, "degradations", degs)
        object.__setattr__(self, "species", tuple(self.species))
        object.__setattr__(self, "radius_range", tuple(float(r) for r in self.radius_range))
        if not self.growth_factor > 0:
            raise ParameterError("growth_factor must be positive")
        if self.n_lichens < 0 or self.frames < 1:
            raise ParameterError("n_lichens must be >= 0 and frames >= 1")
        if self.width < 8 or self.height < 8:
            raise ParameterError("image must be at least 8x8")
        if not 0 <= self.roughness < 1:
            raise ParameterError("roughness must lie in [0, 1)")
        if self.n_vertices < 3:
            raise ParameterError("n_vertices must be >= 3")
        lo, hi = self.radius_range
        if not 0 < lo <= hi:
            raise ParameterError("radius_range must satisfy 0 < lo <= hi")
        if self.cadence_minutes <= 0:
            raise ParameterError("cadence_minutes must be positive")
        codes = {c.code for c in DEFAULT_CATEGORIES}
        bad = [s for s in self.species if s not in codes]
        if not self.species or bad:
            raise ParameterError(f"species must be drawn from {sorted(codes)}, got {list(self.species)}")
        seen = set()
        for d in degs:
            if not 0 <= d.frame < self.frames:
                raise ParameterError(f"degradation frame {d.frame} outside 0..{self.frames - 1}")
            if d.frame in seen:
                raise ParameterError(f"frame {d.frame} has more than one degradation")
            seen.add(d.frame)

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ParameterError(f"unknown synth config keys {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self):
        d = asdict(self)
        d["degradations"] = [asdict(x) for x in self.degradations]
        d["species"] = list(self.species)
        d["radius_range"] = list(self.radius_range)
        return d


@dataclass
class SynthResult:
    config: SynthConfig
    dataset: Dataset
    images: list                       # HxWx3 uint8 arrays, one per frame
    ledger: list = field(default_factory=list)   # (frame, instance, true_area_px)


def _lattice(v):
    # 1/64 px is exact in binary, so JSON round-trips the same vertices
    return round(v * 64) / 64


def _shape(rng, cfg):
    k = cfg.n_vertices
    base = rng.uniform(*cfg.radius_range)
    radii = base * (1.0 + cfg.roughness * rng.uniform(-1.0, 1.0, k))
    angles = 2 * math.pi * np.arange(k) / k
    return radii, angles


def _place(rng, cfg, shapes):
    final_scale = math.sqrt(cfg.growth_factor ** max(cfg.frames - 1, 0))
    top_scale = max(1.0, final_scale)
    centers = []
    for i, (radii, _) in enumerate(shapes):
        reach = float(radii.max()) * top_scale + 1.0
        for _ in range(MAX_PLACEMENT_ATTEMPTS):
            lo_x, hi_x = reach, cfg.width - reach
            lo_y, hi_y = reach, cfg.height - reach
            if lo_x >= hi_x or lo_y >= hi_y:
                break
            c = (float(rng.uniform(lo_x, hi_x)), float(rng.uniform(lo_y, hi_y)))
            ok = all(math.hypot(c[0] - o[0], c[1] - o[1]) > reach + r for o, r in centers)
            if ok:
                centers.append((c, reach))
                break
        else:
            raise PlacementError(
                f"could not place lichen {i + 1} of {cfg.n_lichens} without overlap in "
                f"{MAX_PLACEMENT_ATTEMPTS} attempts")
        if len(centers) != i + 1:
            raise PlacementError(f"lichen {i + 1} does not fit in a {cfg.width}x{cfg.height} image")
    return [c for c, _ in centers]


def _polygon(center, radii, angles, scale):
    cx, cy = center
    pts = tuple((_lattice(cx + scale * r * math.cos(a)), _lattice(cy + scale * r * math.sin(a)))
                for r, a in zip(radii, angles))
    return Polygon(pts)


def _background(rng, h, w):
    # static bark-like texture: smooth vertical streaks plus fine grain
    cols = np.cumsum(rng.normal(0, 6, w))
    cols = cols - cols.mean()
    streak = np.clip(110 + cols, 70, 160)[None, :].repeat(h, axis=0)
    grain = rng.integers(-35, 36, size=(h, w))
    base = np.clip(streak + grain, 20, 215)
    tint = np.array([1.0, 0.92, 0.8])
    return np.clip(np.rint(base[:, :, None] * tint), 0, 255).astype(np.uint8)


def _gaussian_blur(img, sigma):
    radius = max(1, int(math.ceil(3 * sigma)))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2 * sigma * sigma))
    k /= k.sum()
    a = img.astype(np.float64)
    pad = np.pad(a, ((radius, radius), (0, 0), (0, 0)), mode="reflect")
    a = sum(k[i] * pad[i:i + img.shape[0]] for i in range(len(k)))
    pad = np.pad(a, ((0, 0), (radius, radius), (0, 0)), mode="reflect")
    a = sum(k[i] * pad[:, i:i + img.shape[1]] for i in range(len(k)))
    return np.clip(np.rint(a), 0, 255).astype(np.uint8)


def _degrade(img, deg, rng):
    if deg is None or deg.kind == "none":
        return img
    if deg.kind == "blur":
        return _gaussian_blur(img, deg.value)
    if deg.kind == "darken":
        return np.clip(np.rint(img.astype(np.float64) * deg.value), 0, 255).astype(np.uint8)
    # snow: a seeded subset of pixels turns near-white
    h, w = img.shape[:2]
    n = int(round(deg.value * h * w))
    out = img.copy()
    idx = rng.permutation(h * w)[:n]
    out.reshape(-1, 3)[idx] = rng.integers(236, 256, size=(n, 1))
    return out


def frame_times(cfg: SynthConfig):
    t0 = parse_timestamp(cfg.start)
    return [t0 + timedelta(minutes=cfg.cadence_minutes * f) for f in range(cfg.frames)]


def frame_name(camera_id, t: datetime):
    return f"{camera_id}_{t:%Y%m%d_%H%M}.png"


def generate_sequence(cfg: SynthConfig) -> SynthResult:
    ss = np.random.SeedSequence(cfg.seed)
    layout_seed, texture_seed, degrade_seed = ss.spawn(3)
    rng = np.random.default_rng(layout_seed)
    shapes = [_shape(rng, cfg) for _ in range(cfg.n_lichens)]
    centers = _place(rng, cfg, shapes)
    species = [cfg.species[i % len(cfg.species)] for i in range(cfg.n_lichens)]
    cat_of = {c.code: c.category_id for c in DEFAULT_CATEGORIES}

    trng = np.random.default_rng(texture_seed)
    background = _background(trng, cfg.height, cfg.width)
    grains = [trng.integers(-25, 26, size=(cfg.height, cfg.width)) for _ in range(cfg.n_lichens)]
    drng = np.random.default_rng(degrade_seed)
    deg_by_frame = {d.frame: d for d in cfg.degradations}

    images, records, anns, ledger = [], [], [], []
    for f, t in enumerate(frame_times(cfg)):
        scale = math.sqrt(cfg.growth_factor ** f)
        img = background.copy()
        image_id = f + 1
        for i, ((radii, angles), c) in enumerate(zip(shapes, centers)):
            poly = _polygon(c, radii, angles, scale)
            bits = rasterize(poly, cfg.height, cfg.width).bits
            color = np.array(SPECIES_COLORS[species[i]], dtype=np.int64)
            fill = np.clip(color[None, None, :] + grains[i][:, :, None], 0, 220).astype(np.uint8)
            img[bits] = fill[bits]
            ann_id = len(anns) + 1
            anns.append(InstanceAnnotation(ann_id, image_id, cat_of[species[i]], poly,
                                           bbox_of(poly, cfg.height, cfg.width)))
            ledger.append((f, i + 1, int(bits.sum())))
        images.append(_degrade(img, deg_by_frame.get(f), drng))
        records.append(ImageRecord(image_id, frame_name(cfg.camera_id, t), cfg.width, cfg.height,
                                   cfg.camera_id, t))
    ds = Dataset(records, DEFAULT_CATEGORIES, anns)
    return SynthResult(cfg, ds, images, ledger)


def ledger_csv(ledger):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["frame", "instance", "true_area_px"])
    w.writerows(ledger)
    return buf.getvalue()


def write_sequence(result: SynthResult, out_dir):
    """Write images/, annotations.coco.json, manifest.csv, ledger.csv and config.json."""
    from PIL import Image

    out = Path(out_dir)
    img_dir = out / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    for rec, img in zip(result.dataset.images, result.images):
        Image.fromarray(img).save(img_dir / rec.file_name, format="PNG", optimize=False)
    (out / "annotations.coco.json").write_text(
        json.dumps(export_coco(result.dataset), indent=1, sort_keys=True) + "\n")
    write_manifest(result.dataset.images, out / "manifest.csv")
    (out / "ledger.csv").write_text(ledger_csv(result.ledger))
    (out / "config.json").write_text(json.dumps(result.config.to_dict(), indent=2, sort_keys=True) + "\n")
    return out
