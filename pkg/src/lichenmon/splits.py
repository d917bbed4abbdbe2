"""Train/val/test split protocols for the three experiment scenarios.

cross_species
    hold out every image of one species for testing and split the remaining
    species, each on its own, into train and val;
random_finetune
    draw a small random train/val sample from one species, test on the rest;
selective_finetune
    keep one image per camera per calendar day of one species as the
    fine-tuning pool, split the pool into train/val, test on the rest.

Shuffling uses numpy's PCG64 generator seeded from
``SeedSequence([seed, crc32(species_code)])``, so a species' shuffle does not
depend on which other species are present. Fractional sizes are rounded half
to even on the exact decimal value of ``n * fraction``.
"""
from __future__ import annotations

import json
import zlib
from dataclasses import dataclass
from datetime import timedelta
from fractions import Fraction
from pathlib import Path

import numpy as np

from .dataset import Dataset, export_coco
from .errors import SplitError

SCENARIOS = ("cross_species", "random_finetune", "selective_finetune")
DAY_PICKS = ("nearest_local_noon", "first_of_day")


@dataclass(frozen=True)
class FoldSpec:
    name: str
    scenario: str
    seed: int
    train: tuple
    val: tuple
    test: tuple

    def __post_init__(self):
        for part in ("train", "val", "test"):
            object.__setattr__(self, part, tuple(int(i) for i in getattr(self, part)))
        if self.scenario not in SCENARIOS:
            raise SplitError(f"unknown scenario {self.scenario!r}")
        tr, va, te = set(self.train), set(self.val), set(self.test)
        if tr & va or tr & te or va & te:
            raise SplitError(f"fold {self.name}: train/val/test overlap")
        if not te:
            raise SplitError(f"fold {self.name}: empty test set")

    def to_dict(self):
        return {"name": self.name, "scenario": self.scenario, "seed": self.seed,
                "train": list(self.train), "val": list(self.val), "test": list(self.test)}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d):
        return cls(d["name"], d["scenario"], int(d["seed"]), d["train"], d["val"], d["test"])


def round_half_even(n, fraction):
    return round(n * Fraction(str(fraction)))


def _rng(seed, code):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), zlib.crc32(code.encode())])))


def image_species(dataset: Dataset):
    """Map image id to species code, derived from the image's annotations.

    Every image must carry annotations of exactly one category.
    """
    code_of = {c.category_id: c.code for c in dataset.categories}
    cats = {im.image_id: set() for im in dataset.images}
    for a in dataset.annotations:
        cats[a.image_id].add(a.category_id)
    bad = sorted(i for i, c in cats.items() if len(c) != 1)
    if bad:
        raise SplitError(f"images without exactly one species: {bad[:20]}{'...' if len(bad) > 20 else ''}")
    return {i: code_of[next(iter(c))] for i, c in cats.items()}


def _by_species(dataset, species_of):
    species_of = species_of if species_of is not None else image_species(dataset)
    groups = {}
    for im in dataset.images:
        code = species_of.get(im.image_id)
        if code is not None:
            groups.setdefault(code, []).append(im.image_id)
    return {k: sorted(v) for k, v in groups.items()}


def _ordered_codes(dataset, groups):
    known = [c.code for c in dataset.categories if c.code in groups]
    return known + sorted(set(groups) - set(known))


def cross_species_folds(dataset: Dataset, holdout_each=None, train_fraction=0.85, seed=0,
                        species_of=None):
    """One fold per held-out species.

    The held-out species is the whole test set; every other species is
    shuffled on its own and split into ``round(n * train_fraction)`` train
    images and the remainder for validation.
    """
    groups = _by_species(dataset, species_of)
    holdouts = list(holdout_each) if holdout_each is not None else _ordered_codes(dataset, groups)
    for code in set(holdouts) | set(groups):
        if not groups.get(code):
            raise SplitError(f"species {code!r} has no images")
    folds = []
    for held in holdouts:
        others = [c for c in _ordered_codes(dataset, groups) if c != held]
        if not others:
            raise SplitError(f"holding out {held!r} leaves no species to train on")
        train, val = [], []
        for code in others:
            ids = groups[code]
            perm = _rng(seed, code).permutation(ids)
            k = round_half_even(len(ids), train_fraction)
            train += perm[:k].tolist()
            val += perm[k:].tolist()
        folds.append(FoldSpec(f"cross-holdout-{held}", "cross_species", seed,
                              sorted(train), sorted(val), groups[held]))
    return folds


def random_finetune_split(dataset: Dataset, species, n_train=40, n_val=10, seed=0, species_of=None):
    groups = _by_species(dataset, species_of)
    ids = groups.get(species, [])
    need = n_train + n_val + 1
    if len(ids) < need:
        raise SplitError(f"species {species!r} has {len(ids)} images; at least {need} are required")
    perm = _rng(seed, species).permutation(ids).tolist()
    return FoldSpec(f"random-{species}", "random_finetune", seed,
                    sorted(perm[:n_train]), sorted(perm[n_train:n_train + n_val]),
                    sorted(perm[n_train + n_val:]))


def daily_pool(images, day_pick="nearest_local_noon", utc_offset_hours=0.0):
    """One image per (camera, local calendar day)."""
    if day_pick not in DAY_PICKS:
        raise SplitError(f"day_pick must be one of {DAY_PICKS}, got {day_pick!r}")
    missing = sorted(im.image_id for im in images if im.captured_at is None)
    if missing:
        raise SplitError(f"images without timestamps: {missing}")
    offset = timedelta(hours=utc_offset_hours)
    best = {}
    for im in images:
        local = im.captured_at + offset
        key = (im.camera_id, local.date())
        secs = local.hour * 3600 + local.minute * 60 + local.second + local.microsecond / 1e6
        primary = abs(secs - 12 * 3600) if day_pick == "nearest_local_noon" else secs
        rank = (primary, secs, im.file_name, im.image_id)
        if key not in best or rank < best[key][0]:
            best[key] = (rank, im.image_id)
    return sorted(v[1] for v in best.values())


def selective_finetune_split(dataset: Dataset, species, pool_train_fraction=0.75,
                             day_pick="nearest_local_noon", seed=0, n_train=None,
                             utc_offset_hours=0.0, species_of=None):
    """Fine-tune on one image per capture day.

    ``n_train`` overrides the fraction when the train count is known.
    Other images taken on pool days stay in the test set.
    """
    groups = _by_species(dataset, species_of)
    ids = set(groups.get(species, []))
    if not ids:
        raise SplitError(f"species {species!r} has no images")
    images = [im for im in dataset.images if im.image_id in ids]
    pool = daily_pool(images, day_pick, utc_offset_hours)
    perm = _rng(seed, species).permutation(pool).tolist()
    k = round_half_even(len(pool), pool_train_fraction) if n_train is None else int(n_train)
    if not 0 <= k <= len(pool):
        raise SplitError(f"n_train={k} does not fit a pool of {len(pool)} images")
    test = sorted(ids - set(pool))
    return FoldSpec(f"selective-{species}", "selective_finetune", seed,
                    sorted(perm[:k]), sorted(perm[k:]), test)


def fold_datasets(dataset: Dataset, fold: FoldSpec):
    """The train/val/test subsets as three datasets."""
    return {part: dataset.subset(getattr(fold, part)) for part in ("train", "val", "test")}


def write_fold(fold: FoldSpec, out_dir, dataset: Dataset = None):
    """Write ``<name>.json`` and, given the dataset, one COCO file per part."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / f"{fold.name}.json"]
    paths[0].write_text(fold.to_json())
    if dataset is not None:
        for part, ds in fold_datasets(dataset, fold).items():
            p = out / f"{fold.name}.{part}.coco.json"
            p.write_text(json.dumps(export_coco(ds)) + "\n")
            paths.append(p)
    return paths
