"""Stage two: a small MLP mapping part descriptors to object-class probabilities.

One hidden rectifier layer (11 units by default), softmax output,
trained by mini-batch SGD with momentum on cross-entropy. Gradients are
exact and finite-difference checked in the test suite; the whole model
stays in plain numpy so every number is auditable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .detector import FeatureVector, log_softmax, softmax
from .errors import NumericalError, ValidationError
from .kg import KnowledgeGraph

__all__ = [
    "MLPClassifier",
    "forward",
    "loss_and_grad",
    "train_classifier",
    "accuracy",
    "save_classifier",
    "load_classifier",
]

HIDDEN_UNITS = 11


@dataclass
class MLPClassifier:
    object_classes: tuple[str, ...]
    w1: np.ndarray  # (hidden, n)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (m, hidden)
    b2: np.ndarray  # (m,)

    @classmethod
    def create(
        cls, kg: KnowledgeGraph, hidden: int = HIDDEN_UNITS, seed: int = 0
    ) -> "MLPClassifier":
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC1F]))
        n, m = kg.num_parts, kg.num_object_classes
        return cls(
            object_classes=kg.object_classes,
            w1=rng.normal(0.0, 1.0 / np.sqrt(n), size=(hidden, n)),
            b1=np.zeros(hidden),
            w2=rng.normal(0.0, 1.0 / np.sqrt(hidden), size=(m, hidden)),
            b2=np.zeros(m),
        )

    @property
    def input_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def num_classes(self) -> int:
        return self.w2.shape[0]

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        """(B, n) descriptor rows to (B, m) class probability rows."""
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.shape[1] != self.input_dim:
            raise ValidationError(
                f"descriptor has dim {x.shape[1]}, classifier expects {self.input_dim}"
            )
        hidden = np.maximum(x @ self.w1.T + self.b1, 0.0)
        probs = softmax(hidden @ self.w2.T + self.b2)
        return probs[0] if squeeze else probs

    def parameters(self) -> list[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2]

    def copy(self) -> "MLPClassifier":
        return MLPClassifier(
            self.object_classes,
            self.w1.copy(),
            self.b1.copy(),
            self.w2.copy(),
            self.b2.copy(),
        )


def forward(clf: MLPClassifier, v: FeatureVector | np.ndarray) -> np.ndarray:
    """Class probability vector for one descriptor."""
    values = v.values if isinstance(v, FeatureVector) else v
    return clf.predict_proba(np.asarray(values))


def loss_and_grad(
    clf: MLPClassifier, x: np.ndarray, labels: np.ndarray
) -> tuple[float, list[np.ndarray]]:
    """Mean cross-entropy over the batch and exact gradients, in parameter order."""
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels)
    batch = x.shape[0]
    z1 = x @ clf.w1.T + clf.b1
    hidden = np.maximum(z1, 0.0)
    z2 = hidden @ clf.w2.T + clf.b2
    logp = log_softmax(z2)
    loss = float(-logp[np.arange(batch), labels].mean())
    dz2 = softmax(z2)
    dz2[np.arange(batch), labels] -= 1.0
    dz2 /= batch
    grad_w2 = dz2.T @ hidden
    grad_b2 = dz2.sum(axis=0)
    dhidden = dz2 @ clf.w2
    dz1 = dhidden * (z1 > 0.0)
    grad_w1 = dz1.T @ x
    grad_b1 = dz1.sum(axis=0)
    return loss, [grad_w1, grad_b1, grad_w2, grad_b2]


def train_classifier(
    clf: MLPClassifier,
    descriptors: np.ndarray,
    labels: np.ndarray,
    epochs: int,
    learning_rate: float,
    seed: int,
    batch_size: int = 32,
    momentum: float = 0.9,
) -> MLPClassifier:
    """Mini-batch SGD with momentum; deterministic given the seed.

    Raises NumericalError naming the epoch if the loss goes non-finite.
    """
    descriptors = np.asarray(descriptors, dtype=np.float64)
    labels = np.asarray(labels)
    if descriptors.shape[0] == 0:
        raise ValidationError("cannot train the classifier on an empty set")
    if descriptors.shape[0] != labels.shape[0]:
        raise ValidationError("descriptor and label counts differ")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5D6]))
    model = clf.copy()
    velocity = [np.zeros_like(p) for p in model.parameters()]
    count = descriptors.shape[0]
    for epoch in range(1, epochs + 1):
        order = rng.permutation(count)
        epoch_loss = 0.0
        for start in range(0, count, batch_size):
            idx = order[start : start + batch_size]
            loss, grads = loss_and_grad(model, descriptors[idx], labels[idx])
            epoch_loss += loss * len(idx)
            params = model.parameters()
            for p, vel, g in zip(params, velocity, grads):
                vel *= momentum
                vel -= learning_rate * g
                p += vel
        if not np.isfinite(epoch_loss):
            raise NumericalError(f"classifier loss became non-finite at epoch {epoch}")
    return model


def accuracy(clf: MLPClassifier, descriptors: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of argmax-correct predictions."""
    descriptors = np.asarray(descriptors, dtype=np.float64)
    labels = np.asarray(labels)
    if descriptors.shape[0] == 0:
        raise ValidationError("accuracy of an empty set is undefined")
    predictions = np.argmax(clf.predict_proba(descriptors), axis=1)
    return float(np.mean(predictions == labels))


def save_classifier(clf: MLPClassifier, path: str | Path) -> None:
    doc = {
        "kind": "mlp_classifier",
        "object_classes": list(clf.object_classes),
        "input_dim": clf.input_dim,
        "hidden_units": clf.w1.shape[0],
        "w1": clf.w1.tolist(),
        "b1": clf.b1.tolist(),
        "w2": clf.w2.tolist(),
        "b2": clf.b2.tolist(),
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def load_classifier(path: str | Path) -> MLPClassifier:
    p = Path(path)
    if not p.exists():
        raise ValidationError(f"classifier checkpoint not found: {p}")
    doc = json.loads(p.read_text(encoding="utf-8"))
    if doc.get("kind") != "mlp_classifier":
        raise ValidationError(f"{p} is not a classifier checkpoint")
    clf = MLPClassifier(
        object_classes=tuple(doc["object_classes"]),
        w1=np.array(doc["w1"], dtype=np.float64),
        b1=np.array(doc["b1"], dtype=np.float64),
        w2=np.array(doc["w2"], dtype=np.float64),
        b2=np.array(doc["b2"], dtype=np.float64),
    )
    if clf.w1.shape != (doc["hidden_units"], doc["input_dim"]):
        raise ValidationError(f"{p}: weight shape inconsistent with recorded dimensions")
    return clf
