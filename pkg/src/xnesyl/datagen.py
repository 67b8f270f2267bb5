"""Synthetic, knowledge-graph-consistent scene datasets.

Each scene instance stands in for an annotated image: a ground-truth
object class plus a handful of labeled regions, where every region
carries a feature vector drawn from an isotropic unit-variance Gaussian
centered at its part's mean. Part means are placed pairwise at least
`separation` apart, so detector difficulty is a knob rather than an
accident of the data.

Label noise flips a region's part to one that is *atypical* of the
instance's object class, which is exactly the kind of systematic
misattribution the alignment machinery is meant to detect and correct.

Dataset file format (JSON Lines, UTF-8), one instance per line::

    {"id": "...", "object_class": "...",
     "regions": [{"part_class": "...", "features": [f, ...]}, ...]}
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .kg import KnowledgeGraph

__all__ = [
    "Region",
    "SceneInstance",
    "GeneratorConfig",
    "generate_dataset",
    "part_means",
    "write_dataset",
    "read_dataset",
    "split_dataset",
]


@dataclass(frozen=True, eq=False)
class Region:
    """One labeled region of a scene: a part label plus its feature vector."""

    gt_part_class: str
    features: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "features", np.asarray(self.features, dtype=np.float64)
        )
        if self.features.ndim != 1:
            raise ValidationError("region features must be a flat vector")
        if not np.all(np.isfinite(self.features)):
            raise ValidationError(
                f"region with part {self.gt_part_class!r} has non-finite features"
            )

    def __eq__(self, other):
        if not isinstance(other, Region):
            return NotImplemented
        return self.gt_part_class == other.gt_part_class and np.array_equal(
            self.features, other.features
        )


@dataclass(frozen=True)
class SceneInstance:
    """A synthetic scene: ground-truth object class plus labeled regions."""

    id: str
    gt_object_class: str
    regions: tuple[Region, ...]

    def __post_init__(self):
        object.__setattr__(self, "regions", tuple(self.regions))
        if not self.regions:
            raise ValidationError(f"instance {self.id!r} has no regions")


@dataclass(frozen=True)
class GeneratorConfig:
    seed: int
    feature_dim: int = 8
    regions_per_instance: tuple[int, int] = (2, 6)
    noise_rate: float = 0.0
    separation: float = 6.0

    def __post_init__(self):
        if self.feature_dim < 2:
            raise ValidationError("feature_dim must be >= 2")
        lo, hi = self.regions_per_instance
        if lo < 1 or hi < lo:
            raise ValidationError(
                f"regions_per_instance range {self.regions_per_instance} is invalid"
            )
        if not 0.0 <= self.noise_rate <= 1.0:
            raise ValidationError("noise_rate must lie in [0, 1]")
        if self.separation <= 0.0:
            raise ValidationError("separation must be positive")


def part_means(kg: KnowledgeGraph, cfg: GeneratorConfig) -> np.ndarray:
    """Deterministic (n, d) matrix of part-conditional feature means.

    Means are drawn from a seeded Gaussian and accepted greedily only if
    at least `separation` away from every mean placed so far; the
    proposal radius grows if placement stalls so termination is
    guaranteed.
    """
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xA11]))
    n, d = kg.num_parts, cfg.feature_dim
    means = np.zeros((n, d))
    radius = cfg.separation
    placed = 0
    while placed < n:
        for _ in range(200):
            candidate = rng.normal(0.0, radius, size=d)
            if placed == 0 or np.min(
                np.linalg.norm(means[:placed] - candidate, axis=1)
            ) >= cfg.separation:
                means[placed] = candidate
                placed += 1
                break
        else:
            radius *= 1.5
    return means


def generate_dataset(
    kg: KnowledgeGraph, cfg: GeneratorConfig, count: int
) -> list[SceneInstance]:
    """Generate `count` instances, deterministic given (kg, cfg, count).

    Per instance: the object class is uniform, the region count uniform
    over the configured range, and each region's part is typical of the
    class with probability 1 - noise_rate (uniform among typical parts)
    or atypical otherwise (uniform among atypical parts). When the class
    has class-unique parts, one clean region is redrawn to carry one if
    none did, so every instance with a clean region keeps at least one
    unambiguous class marker.
    """
    if count < 1:
        raise ValidationError("count must be >= 1")
    for obj in kg.object_classes:
        if not kg.typical_parts(obj) and cfg.noise_rate < 1.0:
            raise ValidationError(
                f"object class {obj!r} has no typical parts; cannot generate clean regions"
            )
    means = part_means(kg, cfg)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xD47]))
    lo, hi = cfg.regions_per_instance
    instances: list[SceneInstance] = []
    for i in range(count):
        obj = kg.object_classes[rng.integers(0, kg.num_object_classes)]
        typical = kg.typical_parts(obj)
        atypical = kg.atypical_parts(obj)
        unique = set(kg.unique_parts(obj))
        n_regions = int(rng.integers(lo, hi + 1))
        parts: list[str] = []
        clean: list[bool] = []
        for _ in range(n_regions):
            if atypical and rng.random() < cfg.noise_rate:
                parts.append(atypical[rng.integers(0, len(atypical))])
                clean.append(False)
            else:
                parts.append(typical[rng.integers(0, len(typical))])
                clean.append(True)
        if unique and not any(p in unique for p in parts):
            clean_slots = [r for r, ok in enumerate(clean) if ok]
            if clean_slots:
                ordered_unique = [p for p in typical if p in unique]
                parts[clean_slots[0]] = ordered_unique[
                    rng.integers(0, len(ordered_unique))
                ]
        regions = tuple(
            Region(p, means[kg.part_index(p)] + rng.standard_normal(cfg.feature_dim))
            for p in parts
        )
        instances.append(SceneInstance(f"inst-{i:06d}", obj, regions))
    return instances


def write_dataset(instances: list[SceneInstance], path: str | Path) -> None:
    lines = []
    for inst in instances:
        doc = {
            "id": inst.id,
            "object_class": inst.gt_object_class,
            "regions": [
                {"part_class": r.gt_part_class, "features": r.features.tolist()}
                for r in inst.regions
            ],
        }
        lines.append(json.dumps(doc, ensure_ascii=False))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_dataset(path: str | Path, kg: KnowledgeGraph | None = None) -> list[SceneInstance]:
    """Read a JSONL dataset; validates labels against `kg` when supplied."""
    p = Path(path)
    if not p.exists():
        raise ValidationError(f"dataset file not found: {p}")
    instances: list[SceneInstance] = []
    with p.open(encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{p}:{lineno}: malformed JSON line: {exc}") from exc
            try:
                regions = tuple(
                    Region(r["part_class"], r["features"]) for r in doc["regions"]
                )
                inst = SceneInstance(doc["id"], doc["object_class"], regions)
            except (KeyError, TypeError) as exc:
                raise ValidationError(f"{p}:{lineno}: missing or malformed field: {exc}") from exc
            if kg is not None:
                if inst.gt_object_class not in kg.object_classes:
                    raise ValidationError(
                        f"{p}:{lineno}: unknown object class {inst.gt_object_class!r}"
                    )
                for r in inst.regions:
                    if r.gt_part_class not in kg.part_classes:
                        raise ValidationError(
                            f"{p}:{lineno}: unknown part class {r.gt_part_class!r}"
                        )
            instances.append(inst)
    return instances


def _id_rank(instance_id: str) -> int:
    # Platform-stable hash; Python's builtin hash() is salted per process.
    return int.from_bytes(hashlib.sha256(instance_id.encode("utf-8")).digest()[:8], "big")


def split_dataset(
    instances: list[SceneInstance],
) -> tuple[list[SceneInstance], list[SceneInstance], list[SceneInstance]]:
    """Deterministic 60/20/20 train/val/test split by hash rank of instance id.

    Ranking (rather than thresholding) the hashes yields exact split
    sizes while staying a pure function of the instance ids.
    """
    ranked = sorted(instances, key=lambda inst: (_id_rank(inst.id), inst.id))
    n = len(ranked)
    n_train = round(n * 0.6)
    n_val = round(n * 0.2)
    train = ranked[:n_train]
    val = ranked[n_train : n_train + n_val]
    test = ranked[n_train + n_val :]
    return train, val, test
