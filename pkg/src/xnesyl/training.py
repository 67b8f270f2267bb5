"""Orchestration of the two training regimes and full evaluation.

Standard procedure: train the detector for all its epochs with unit
region weights, then train the object classifier once on the aggregated
descriptors.

Alignment-weighted procedure: after each detector epoch, train a fresh
classifier, compute attributions for every training instance, score
their misattribution against the knowledge graph, and turn that into
per-region loss multipliers for the *next* detector epoch (the first
epoch always runs unweighted; attributions require a trained
classifier). The classifier from the final epoch is the one kept.

Every random stream is derived from (config seed, role, epoch), so a run
is a pure function of (kg, dataset, config), and the weighted procedure
with all multipliers at 1 reproduces the standard procedure bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import alignment
from .alignment import WeightScheme, mean_shap_ged, region_weights
from .classifier import MLPClassifier, accuracy, train_classifier
from .datagen import SceneInstance
from .detector import PartDetector, aggregate, detect, train_detector_epoch
from .errors import ValidationError
from .kg import KnowledgeGraph, attribution_matrix
from .shapley import BackgroundSet, kernel_shap_matrix

__all__ = [
    "TrainConfig",
    "RunArtifacts",
    "train_standard",
    "train_shap_backprop",
    "evaluate",
    "config_echo",
    "config_from_echo",
    "metrics_report",
]

# role tags for seed derivation; values are arbitrary but frozen
_TAG_BATCH = 1
_TAG_CLF = 2
_TAG_BG = 3
_TAG_SHAP_TRAIN = 4
_TAG_SHAP_EVAL = 5


def _derived_int(seed: int, *parts: int) -> int:
    return int(np.random.SeedSequence([seed, *parts]).generate_state(1)[0])


def _derived_rng(seed: int, *parts: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *parts]))


@dataclass(frozen=True)
class TrainConfig:
    seed: int
    epochs_det: int = 10
    epochs_clf: int = 60
    lr_det: float = 0.5
    lr_clf: float = 0.05
    scheme: WeightScheme | None = None
    s: float = alignment.DETECTION_THRESHOLD
    v_threshold: float = alignment.FEATURE_THRESHOLD
    background_size: int = 100
    shap_mode: str = "kernel"
    shap_samples: int = 512
    aggregation: str = "frcnn"
    batch_size: int = 32
    hidden_units: int = 11

    def __post_init__(self):
        if self.epochs_det < 1 or self.epochs_clf < 1:
            raise ValidationError("epoch counts must be >= 1")
        if self.lr_det <= 0 or self.lr_clf <= 0:
            raise ValidationError("learning rates must be positive")
        if self.shap_mode not in ("exact", "kernel"):
            raise ValidationError(f"unknown shap mode {self.shap_mode!r}")
        if self.aggregation not in ("frcnn", "retina"):
            raise ValidationError(f"unknown aggregation mode {self.aggregation!r}")
        if self.background_size < 1:
            raise ValidationError("background_size must be >= 1")


@dataclass
class RunArtifacts:
    detector: PartDetector
    classifier: MLPClassifier
    metrics: dict
    per_epoch: list[dict]
    config: TrainConfig
    background: BackgroundSet
    ged_per_instance: dict[str, int] = field(default_factory=dict)


def _descriptors(
    det: PartDetector, instances: list[SceneInstance], kg: KnowledgeGraph, mode: str
) -> tuple[np.ndarray, np.ndarray, list]:
    """Aggregated descriptors, object labels, and raw detections per instance."""
    detections = [detect(det, inst) for inst in instances]
    x = np.stack([aggregate(ds, mode).values for ds in detections])
    y = np.array([kg.object_index(inst.gt_object_class) for inst in instances])
    return x, y, detections


def _train_classifier_at(
    kg: KnowledgeGraph, x: np.ndarray, y: np.ndarray, cfg: TrainConfig, epoch: int
) -> MLPClassifier:
    clf_seed = _derived_int(cfg.seed, _TAG_CLF, epoch)
    clf = MLPClassifier.create(kg, hidden=cfg.hidden_units, seed=clf_seed)
    return train_classifier(
        clf, x, y, cfg.epochs_clf, cfg.lr_clf, seed=clf_seed, batch_size=cfg.batch_size
    )


def _background_at(x_train: np.ndarray, cfg: TrainConfig, epoch: int) -> BackgroundSet:
    return BackgroundSet.sample(
        x_train, cfg.background_size, _derived_int(cfg.seed, _TAG_BG, epoch)
    )


def train_standard(
    kg: KnowledgeGraph,
    splits: tuple[list[SceneInstance], list[SceneInstance], list[SceneInstance]],
    cfg: TrainConfig,
) -> RunArtifacts:
    """Sequential pipeline: full detector training, then the classifier."""
    if cfg.scheme is not None:
        raise ValidationError(
            "standard procedure takes no weighting scheme; use train_shap_backprop"
        )
    train_split, _, test_split = splits
    if not train_split:
        raise ValidationError("training split is empty")
    det = PartDetector.create(
        kg, train_split[0].regions[0].features.shape[0], cfg.lr_det, cfg.epochs_det
    )
    per_epoch: list[dict] = []
    for epoch in range(1, cfg.epochs_det + 1):
        det, det_loss = train_detector_epoch(
            det,
            train_split,
            None,
            batch_size=cfg.batch_size,
            rng=_derived_rng(cfg.seed, _TAG_BATCH, epoch),
        )
        per_epoch.append(
            {"epoch": epoch, "det_loss": det_loss, "alpha_mean": 1.0, "alpha_max": 1.0}
        )
    x_train, y_train, _ = _descriptors(det, train_split, kg, cfg.aggregation)
    clf = _train_classifier_at(kg, x_train, y_train, cfg, cfg.epochs_det)
    background = _background_at(x_train, cfg, cfg.epochs_det)
    artifacts = RunArtifacts(det, clf, {}, per_epoch, cfg, background)
    artifacts.metrics = evaluate(artifacts, test_split, kg)
    return artifacts


def train_shap_backprop(
    kg: KnowledgeGraph,
    splits: tuple[list[SceneInstance], list[SceneInstance], list[SceneInstance]],
    cfg: TrainConfig,
) -> RunArtifacts:
    """Interleaved pipeline with misattribution-weighted detector epochs.

    Weights computed after epoch e apply at epoch e+1; epoch 1 runs with
    unit weights because no classifier exists yet.
    """
    if cfg.scheme is None:
        raise ValidationError("train_shap_backprop requires a weighting scheme")
    train_split, _, test_split = splits
    if not train_split:
        raise ValidationError("training split is empty")
    kg_matrix = attribution_matrix(kg)
    det = PartDetector.create(
        kg, train_split[0].regions[0].features.shape[0], cfg.lr_det, cfg.epochs_det
    )
    weights: dict[str, np.ndarray] = {}
    per_epoch: list[dict] = []
    clf: MLPClassifier | None = None
    background: BackgroundSet | None = None
    for epoch in range(1, cfg.epochs_det + 1):
        det, det_loss = train_detector_epoch(
            det,
            train_split,
            weights or None,
            batch_size=cfg.batch_size,
            rng=_derived_rng(cfg.seed, _TAG_BATCH, epoch),
        )
        x_train, y_train, detections = _descriptors(det, train_split, kg, cfg.aggregation)
        clf = _train_classifier_at(kg, x_train, y_train, cfg, epoch)
        background = _background_at(x_train, cfg, epoch)
        weights = {}
        for index, inst in enumerate(train_split):
            # Weighting needs only coarse misattribution magnitudes but runs
            # over the whole training split every epoch, so it always takes
            # the sampled kernel route; cfg.shap_mode governs the metric.
            shap_values = kernel_shap_matrix(
                clf.predict_proba,
                x_train[index],
                background,
                cfg.shap_samples,
                seed=_derived_int(cfg.seed, _TAG_SHAP_TRAIN, epoch, index),
            )
            k = kg.object_index(inst.gt_object_class)
            weights[inst.id] = region_weights(
                shap_values[k],
                kg_matrix[k],
                x_train[index],
                detections[index].predicted_parts(),
                cfg.scheme,
                cfg.v_threshold,
            )
        all_alphas = np.concatenate(list(weights.values()))
        per_epoch.append(
            {
                "epoch": epoch,
                "det_loss": det_loss,
                "alpha_mean": float(all_alphas.mean()),
                "alpha_max": float(all_alphas.max()),
            }
        )
    assert clf is not None and background is not None
    artifacts = RunArtifacts(det, clf, {}, per_epoch, cfg, background)
    artifacts.metrics = evaluate(artifacts, test_split, kg)
    return artifacts


def part_macro_accuracy(
    det: PartDetector, instances: list[SceneInstance], kg: KnowledgeGraph
) -> float:
    """Mean over part classes (with test support) of per-class region accuracy."""
    correct = np.zeros(kg.num_parts)
    totals = np.zeros(kg.num_parts)
    for inst in instances:
        predicted = detect(det, inst).predicted_parts()
        for region, pred in zip(inst.regions, predicted):
            j = kg.part_index(region.gt_part_class)
            totals[j] += 1
            correct[j] += float(pred == j)
    supported = totals > 0
    if not np.any(supported):
        raise ValidationError("no regions in the split")
    return float(np.mean(correct[supported] / totals[supported]))


def evaluate(
    artifacts: RunArtifacts, test_split: list[SceneInstance], kg: KnowledgeGraph
) -> dict:
    """Test-split metrics: part accuracy, object accuracy, mean graph distance."""
    if not test_split:
        raise ValidationError("test split is empty")
    cfg = artifacts.config
    x_test, y_test, _ = _descriptors(artifacts.detector, test_split, kg, cfg.aggregation)
    ged_mean, ged_per_instance = mean_shap_ged(
        artifacts.detector,
        artifacts.classifier,
        test_split,
        kg,
        artifacts.background,
        aggregation=cfg.aggregation,
        s=cfg.s,
        mode=cfg.shap_mode,
        num_coalition_samples=cfg.shap_samples,
        seed=_derived_int(cfg.seed, _TAG_SHAP_EVAL),
    )
    artifacts.ged_per_instance = ged_per_instance
    return {
        "part_macro_accuracy": part_macro_accuracy(artifacts.detector, test_split, kg),
        "accuracy": accuracy(artifacts.classifier, x_test, y_test),
        "mean_shap_ged": ged_mean,
    }


def config_echo(cfg: TrainConfig) -> dict:
    return {
        "seed": cfg.seed,
        "mode": "standard" if cfg.scheme is None else "shap-backprop",
        "scheme": None if cfg.scheme is None else cfg.scheme.kind,
        "h": 1.0 if cfg.scheme is None else cfg.scheme.h,
        "epochs_det": cfg.epochs_det,
        "epochs_clf": cfg.epochs_clf,
        "lr_det": cfg.lr_det,
        "lr_clf": cfg.lr_clf,
        "s": cfg.s,
        "v_threshold": cfg.v_threshold,
        "background_size": cfg.background_size,
        "shap_mode": cfg.shap_mode,
        "shap_samples": cfg.shap_samples,
        "aggregation": cfg.aggregation,
        "batch_size": cfg.batch_size,
        "hidden_units": cfg.hidden_units,
    }


def config_from_echo(echo: dict) -> TrainConfig:
    scheme = None
    if echo.get("scheme"):
        scheme = WeightScheme(echo["scheme"], float(echo.get("h", 1.0)))
    return TrainConfig(
        seed=int(echo["seed"]),
        epochs_det=int(echo["epochs_det"]),
        epochs_clf=int(echo["epochs_clf"]),
        lr_det=float(echo["lr_det"]),
        lr_clf=float(echo["lr_clf"]),
        scheme=scheme,
        s=float(echo["s"]),
        v_threshold=float(echo["v_threshold"]),
        background_size=int(echo["background_size"]),
        shap_mode=echo["shap_mode"],
        shap_samples=int(echo["shap_samples"]),
        aggregation=echo["aggregation"],
        batch_size=int(echo["batch_size"]),
        hidden_units=int(echo["hidden_units"]),
    )


def metrics_report(artifacts: RunArtifacts) -> dict:
    return {
        "config": config_echo(artifacts.config),
        "metrics": artifacts.metrics,
        "per_epoch": artifacts.per_epoch,
    }


def rebuild_background(
    kg: KnowledgeGraph,
    det: PartDetector,
    train_split: list[SceneInstance],
    cfg: TrainConfig,
) -> BackgroundSet:
    """Reconstruct the evaluation background from a loaded checkpoint.

    Matches the background a fresh run with this config would use, so an
    external re-evaluation reproduces the training-time metrics exactly.
    """
    x_train, _, _ = _descriptors(det, train_split, kg, cfg.aggregation)
    return _background_at(x_train, cfg, cfg.epochs_det)
