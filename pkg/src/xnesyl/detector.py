"""Stage one of the part-based classifier: a per-region part detector.

Localization is out of scope; regions come pre-cut, so the detector is a
softmax linear model over region features whose per-region cross-entropy
is exactly the loss term the alignment-driven weighting multiplies.

Two aggregation rules turn a scene's detections into the tabular
descriptor consumed by the object classifier: `aggregate_frcnn` keeps
only each region's maximal part probability, `aggregate_retina` keeps
the whole probability vector. Both sum over regions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datagen import SceneInstance
from .errors import ValidationError
from .kg import KnowledgeGraph

__all__ = [
    "PartDetector",
    "DetectionSet",
    "FeatureVector",
    "detect",
    "aggregate_frcnn",
    "aggregate_retina",
    "aggregate",
    "weighted_roi_loss",
    "train_detector_epoch",
    "save_detector",
    "load_detector",
]


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


@dataclass
class PartDetector:
    """Softmax linear model mapping region features (dim d) to n part probabilities."""

    part_classes: tuple[str, ...]
    weights: np.ndarray  # (n, d)
    bias: np.ndarray  # (n,)
    learning_rate: float = 0.5
    epochs: int = 10

    @classmethod
    def create(
        cls,
        kg: KnowledgeGraph,
        feature_dim: int,
        learning_rate: float = 0.5,
        epochs: int = 10,
    ) -> "PartDetector":
        # Zero init is exact and deterministic; the objective is convex.
        n = kg.num_parts
        return cls(
            part_classes=kg.part_classes,
            weights=np.zeros((n, feature_dim)),
            bias=np.zeros(n),
            learning_rate=learning_rate,
            epochs=epochs,
        )

    @property
    def feature_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def num_parts(self) -> int:
        return self.weights.shape[0]

    def probabilities(self, features: np.ndarray) -> np.ndarray:
        """(M, d) feature rows to (M, n) part probability rows."""
        features = np.asarray(features, dtype=np.float64)
        if features.ndim == 1:
            features = features[None, :]
        if features.shape[1] != self.feature_dim:
            raise ValidationError(
                f"features have dim {features.shape[1]}, detector expects {self.feature_dim}"
            )
        return softmax(features @ self.weights.T + self.bias)

    def copy(self) -> "PartDetector":
        return PartDetector(
            self.part_classes,
            self.weights.copy(),
            self.bias.copy(),
            self.learning_rate,
            self.epochs,
        )


@dataclass(frozen=True)
class DetectionSet:
    """Ordered per-region part probability vectors for one scene instance."""

    probabilities: np.ndarray  # (M, n)

    def __post_init__(self):
        probs = np.asarray(self.probabilities, dtype=np.float64)
        if probs.ndim != 2:
            raise ValidationError("detections must form an (M, n) array")
        if probs.shape[0] and (
            np.any(probs < 0)
            or not np.allclose(probs.sum(axis=1), 1.0, rtol=0.0, atol=1e-9)
        ):
            raise ValidationError("each detection row must be a probability vector")
        object.__setattr__(self, "probabilities", probs)

    @property
    def num_regions(self) -> int:
        return self.probabilities.shape[0]

    def predicted_parts(self) -> np.ndarray:
        """Argmax part index per region."""
        return np.argmax(self.probabilities, axis=1)


@dataclass(frozen=True)
class FeatureVector:
    """Aggregated per-part confidence descriptor of one instance.

    `no_detections` flags the degenerate all-zero vector produced for an
    empty detection set; downstream classification still runs on it.
    """

    values: np.ndarray
    no_detections: bool = False

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))


def detect(det: PartDetector, inst: SceneInstance) -> DetectionSet:
    """One probability vector per region, in region order."""
    features = np.stack([r.features for r in inst.regions])
    return DetectionSet(det.probabilities(features))


def aggregate_frcnn(ds: DetectionSet) -> FeatureVector:
    """Sum of per-region vectors with non-maximal probabilities zeroed."""
    p = ds.probabilities
    if p.shape[0] == 0:
        return FeatureVector(np.zeros(p.shape[1]), no_detections=True)
    kept = np.zeros_like(p)
    rows = np.arange(p.shape[0])
    best = np.argmax(p, axis=1)
    kept[rows, best] = p[rows, best]
    return FeatureVector(kept.sum(axis=0))


def aggregate_retina(ds: DetectionSet) -> FeatureVector:
    """Sum of the full per-region probability vectors; total mass equals M."""
    p = ds.probabilities
    if p.shape[0] == 0:
        return FeatureVector(np.zeros(p.shape[1]), no_detections=True)
    return FeatureVector(p.sum(axis=0))


def aggregate(ds: DetectionSet, mode: str) -> FeatureVector:
    """Dispatch on aggregation mode ("frcnn" or "retina")."""
    if mode == "frcnn":
        return aggregate_frcnn(ds)
    if mode == "retina":
        return aggregate_retina(ds)
    raise ValidationError(f"unknown aggregation mode {mode!r}; expected 'frcnn' or 'retina'")


def _instance_arrays(det: PartDetector, inst: SceneInstance) -> tuple[np.ndarray, np.ndarray]:
    features = np.stack([r.features for r in inst.regions])
    part_index = {p: j for j, p in enumerate(det.part_classes)}
    try:
        labels = np.array([part_index[r.gt_part_class] for r in inst.regions])
    except KeyError as exc:
        raise ValidationError(
            f"instance {inst.id!r} has part label unknown to the detector: {exc}"
        ) from exc
    return features, labels


def weighted_roi_loss(
    det: PartDetector, inst: SceneInstance, weights: np.ndarray | None = None
) -> tuple[float, tuple[np.ndarray, np.ndarray]]:
    """Weighted cross-entropy over the instance's regions, with exact gradient.

    loss = sum_r weight_r * CE(p_r, gt_part_r). Returns (loss, (dW, db)).
    Unit weights reproduce the unweighted loss bit for bit.
    """
    features, labels = _instance_arrays(det, inst)
    m = features.shape[0]
    if weights is None:
        weights = np.ones(m)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (m,):
        raise ValidationError(
            f"{m} regions but {weights.shape[0] if weights.ndim == 1 else '?'} weights"
        )
    if np.any(weights < 0):
        raise ValidationError("region weights must be non-negative")
    logits = features @ det.weights.T + det.bias
    logp = log_softmax(logits)
    loss = float(-(weights * logp[np.arange(m), labels]).sum())
    dlogits = softmax(logits)
    dlogits[np.arange(m), labels] -= 1.0
    dlogits *= weights[:, None]
    grad_w = dlogits.T @ features
    grad_b = dlogits.sum(axis=0)
    return loss, (grad_w, grad_b)


def train_detector_epoch(
    det: PartDetector,
    dataset: list[SceneInstance],
    region_weights: dict[str, np.ndarray] | None = None,
    batch_size: int = 32,
    rng: np.random.Generator | None = None,
) -> tuple[PartDetector, float]:
    """One full pass of mini-batch gradient descent over the dataset.

    `region_weights` maps instance id to per-region loss multipliers
    (missing ids default to all-ones). Batch order is the dataset order,
    shuffled first when an rng is given; with a fixed rng state the pass
    is fully deterministic. Returns the updated detector and the mean
    per-region loss observed during the pass.
    """
    if not dataset:
        raise ValidationError("cannot train on an empty dataset")
    region_weights = region_weights or {}
    order = np.arange(len(dataset))
    if rng is not None:
        rng.shuffle(order)
    updated = det.copy()
    total_loss = 0.0
    total_regions = 0
    for start in range(0, len(order), batch_size):
        batch = [dataset[i] for i in order[start : start + batch_size]]
        grad_w = np.zeros_like(updated.weights)
        grad_b = np.zeros_like(updated.bias)
        batch_regions = 0
        for inst in batch:
            w = region_weights.get(inst.id)
            loss, (gw, gb) = weighted_roi_loss(updated, inst, w)
            grad_w += gw
            grad_b += gb
            total_loss += loss
            batch_regions += len(inst.regions)
        scale = updated.learning_rate / batch_regions
        updated.weights -= scale * grad_w
        updated.bias -= scale * grad_b
        total_regions += batch_regions
    return updated, total_loss / total_regions


def save_detector(det: PartDetector, path: str | Path) -> None:
    doc = {
        "kind": "part_detector",
        "part_classes": list(det.part_classes),
        "feature_dim": det.feature_dim,
        "weights": det.weights.tolist(),
        "bias": det.bias.tolist(),
        "learning_rate": det.learning_rate,
        "epochs": det.epochs,
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def load_detector(path: str | Path) -> PartDetector:
    p = Path(path)
    if not p.exists():
        raise ValidationError(f"detector checkpoint not found: {p}")
    doc = json.loads(p.read_text(encoding="utf-8"))
    if doc.get("kind") != "part_detector":
        raise ValidationError(f"{p} is not a part detector checkpoint")
    det = PartDetector(
        part_classes=tuple(doc["part_classes"]),
        weights=np.array(doc["weights"], dtype=np.float64),
        bias=np.array(doc["bias"], dtype=np.float64),
        learning_rate=float(doc["learning_rate"]),
        epochs=int(doc["epochs"]),
    )
    if det.weights.shape != (len(det.part_classes), doc["feature_dim"]):
        raise ValidationError(f"{p}: weight shape inconsistent with recorded dimensions")
    return det
