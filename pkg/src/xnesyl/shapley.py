"""Shapley feature attribution of a descriptor-level model.

Attributions explain one model output (one object class) for one
descriptor x against a background of reference descriptors. A feature
"missing" from a coalition is replaced by its background value, and the
coalition's worth is the background-averaged model output, so the
attributions sum to f_k(x) minus the mean background output (the
efficiency identity asserted throughout the tests).

Two routes are provided and deliberately kept independent of each other:

* `exact_shapley` enumerates all 2^n coalitions (guarded to n <= 16) and
  applies the classical permutation-weight formula. It is the oracle.
* `kernel_shap` solves the weighted least-squares system with the
  Shapley kernel weight (n-1) / (C(n,|z|) |z| (n-|z|)), with the empty
  and full coalitions pinned to the exact model values. Sampled when the
  coalition space is large; when every proper coalition is enumerated it
  reproduces the exact values.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import NumericalError, ValidationError
from .kg import KnowledgeGraph

__all__ = [
    "BackgroundSet",
    "Model",
    "exact_shapley",
    "exact_shap_matrix",
    "kernel_shap",
    "kernel_shap_matrix",
    "shap_matrix",
    "ShapSummary",
    "shap_summary",
    "write_summary_csv",
]

# A model is a batched callable: (B, n) descriptor rows -> (B, m) outputs.
Model = Callable[[np.ndarray], np.ndarray]

EXACT_MAX_FEATURES = 16
_CHUNK_ROWS = 1 << 22  # cap on composite rows evaluated per model call


@dataclass(frozen=True)
class BackgroundSet:
    """Reference descriptors defining the missing-feature distribution."""

    vectors: np.ndarray  # (B, n)

    def __post_init__(self):
        object.__setattr__(self, "vectors", np.asarray(self.vectors, dtype=np.float64))
        if self.vectors.ndim != 2 or self.vectors.shape[0] == 0:
            raise ValidationError("background set must be a non-empty (B, n) array")

    @property
    def size(self) -> int:
        return self.vectors.shape[0]

    @property
    def num_features(self) -> int:
        return self.vectors.shape[1]

    @property
    def mean(self) -> np.ndarray:
        return self.vectors.mean(axis=0)

    @classmethod
    def sample(cls, descriptors: np.ndarray, size: int, seed: int) -> "BackgroundSet":
        """Draw up to `size` rows without replacement, deterministic per seed."""
        descriptors = np.asarray(descriptors, dtype=np.float64)
        if descriptors.ndim != 2 or descriptors.shape[0] == 0:
            raise ValidationError("need a non-empty (N, n) descriptor array to sample from")
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xB6]))
        count = min(size, descriptors.shape[0])
        idx = rng.choice(descriptors.shape[0], size=count, replace=False)
        return cls(descriptors[np.sort(idx)])


def _coalition_values(
    model: Model, x: np.ndarray, bg: BackgroundSet, masks: np.ndarray
) -> np.ndarray:
    """Background-averaged model outputs for each coalition mask.

    masks: (K, n) boolean, True = feature takes its value from x.
    Returns (K, m).
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    b = bg.vectors
    k_total = masks.shape[0]
    chunk = max(1, _CHUNK_ROWS // max(1, bg.size * n))
    out_chunks = []
    for start in range(0, k_total, chunk):
        part = masks[start : start + chunk]
        composite = np.where(part[:, None, :], x[None, None, :], b[None, :, :])
        flat = composite.reshape(-1, n)
        outputs = np.asarray(model(flat), dtype=np.float64)
        outputs = outputs.reshape(part.shape[0], bg.size, -1).mean(axis=1)
        out_chunks.append(outputs)
    return np.concatenate(out_chunks, axis=0)


def _all_masks(n: int) -> np.ndarray:
    ints = np.arange(1 << n, dtype=np.uint32)
    return ((ints[:, None] >> np.arange(n)) & 1).astype(bool)


def _exact_from_values(values: np.ndarray, n: int) -> np.ndarray:
    """Shapley combination over a full (2^n, m) coalition-value table."""
    popcount = _all_masks(n).sum(axis=1)
    # weight of a coalition of size t when adding one more feature
    weights = np.array(
        [math.factorial(t) * math.factorial(n - t - 1) / math.factorial(n) for t in range(n)]
    )
    ints = np.arange(1 << n, dtype=np.int64)
    shap = np.zeros((n, values.shape[1]))
    for j in range(n):
        without = ints[(ints >> j) & 1 == 0]
        w = weights[popcount[without]]
        shap[j] = w @ (values[without + (1 << j)] - values[without])
    return shap.T  # (m, n)


def _check_exact_inputs(x: np.ndarray, bg: BackgroundSet) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValidationError("descriptor must be a flat vector")
    if bg.num_features != x.shape[0]:
        raise ValidationError(
            f"background has {bg.num_features} features, descriptor has {x.shape[0]}"
        )
    if x.shape[0] > EXACT_MAX_FEATURES:
        raise ValidationError(
            f"exact enumeration refuses n={x.shape[0]} > {EXACT_MAX_FEATURES} features; "
            "use kernel_shap instead"
        )
    return x


def exact_shap_matrix(model: Model, x: np.ndarray, bg: BackgroundSet) -> np.ndarray:
    """Exact attributions for every model output at once; (m, n)."""
    x = _check_exact_inputs(x, bg)
    n = x.shape[0]
    values = _coalition_values(model, x, bg, _all_masks(n))
    return _exact_from_values(values, n)


def exact_shapley(model: Model, x: np.ndarray, bg: BackgroundSet, class_index: int) -> np.ndarray:
    """Exact Shapley attributions of output `class_index`; length n."""
    return exact_shap_matrix(model, x, bg)[class_index]


def _kernel_weight(n: int, size: int) -> float:
    return (n - 1) / (math.comb(n, size) * size * (n - size))


def _sample_masks(
    n: int, num_samples: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Sampled proper-coalition masks with accumulated frequency weights."""
    sizes = np.arange(1, n)
    size_mass = (n - 1) / (sizes * (n - sizes))  # kernel mass of each size stratum
    size_prob = size_mass / size_mass.sum()
    counts: dict[int, int] = {}
    draws = rng.choice(sizes, size=num_samples, p=size_prob)
    for s in draws:
        members = rng.choice(n, size=int(s), replace=False)
        key = int(np.sum(1 << members.astype(np.int64)))
        counts[key] = counts.get(key, 0) + 1
    keys = np.array(sorted(counts), dtype=np.int64)
    masks = ((keys[:, None] >> np.arange(n)) & 1).astype(bool)
    weights = np.array([counts[int(k)] for k in keys], dtype=np.float64)
    return masks, weights


def _enumerate_proper_masks(n: int) -> tuple[np.ndarray, np.ndarray]:
    ints = np.arange(1, (1 << n) - 1, dtype=np.int64)
    masks = ((ints[:, None] >> np.arange(n)) & 1).astype(bool)
    sizes = masks.sum(axis=1)
    weights = np.array([_kernel_weight(n, int(s)) for s in sizes])
    return masks, weights


def _kernel_solve(
    masks: np.ndarray, weights: np.ndarray, values: np.ndarray, v0: np.ndarray, v1: np.ndarray
) -> np.ndarray:
    """Constrained WLS with the efficiency constraint eliminated; (m, n).

    The last feature's coefficient is substituted out so the recovered
    attributions satisfy sum_j phi_j = v1 - v0 exactly.
    """
    n = masks.shape[1]
    z = masks.astype(np.float64)
    span = v1 - v0  # (m,)
    targets = values - v0[None, :] - z[:, -1:] * span[None, :]
    design = z[:, :-1] - z[:, -1:]
    sw = np.sqrt(weights)[:, None]
    a = sw * design
    b = sw * targets
    rank = np.linalg.matrix_rank(a)
    if rank < n - 1:
        cond = np.linalg.cond(a)
        raise NumericalError(
            f"kernel regression system is singular (rank {rank} < {n - 1}, "
            f"condition number {cond:.3e}); draw more coalition samples"
        )
    coef, *_ = np.linalg.lstsq(a, b, rcond=None)  # (n-1, m)
    phi = np.empty((values.shape[1], n))
    phi[:, :-1] = coef.T
    phi[:, -1] = span - coef.sum(axis=0)
    return phi


def kernel_shap_matrix(
    model: Model,
    x: np.ndarray,
    bg: BackgroundSet,
    num_coalition_samples: int,
    seed: int,
) -> np.ndarray:
    """Kernel estimates for every model output at once; (m, n)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValidationError("descriptor must be a flat vector")
    n = x.shape[0]
    if bg.num_features != n:
        raise ValidationError(
            f"background has {bg.num_features} features, descriptor has {n}"
        )
    if num_coalition_samples < 2 * n:
        raise ValidationError(
            f"need at least 2n = {2 * n} coalition samples, got {num_coalition_samples}"
        )
    v0 = np.asarray(model(bg.vectors), dtype=np.float64).mean(axis=0)
    v1 = np.asarray(model(x[None, :]), dtype=np.float64)[0]
    if n == 1:
        # Efficiency pins the single attribution; there are no proper coalitions.
        return (v1 - v0)[:, None]
    total_proper = (1 << n) - 2 if n <= 30 else None
    if total_proper is not None and num_coalition_samples >= total_proper:
        masks, weights = _enumerate_proper_masks(n)
    else:
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5A]))
        masks, weights = _sample_masks(n, num_coalition_samples, rng)
    values = _coalition_values(model, x, bg, masks)
    return _kernel_solve(masks, weights, values, v0, v1)


def kernel_shap(
    model: Model,
    x: np.ndarray,
    bg: BackgroundSet,
    class_index: int,
    num_coalition_samples: int,
    seed: int,
) -> np.ndarray:
    """Kernel-estimated attributions of output `class_index`; length n."""
    return kernel_shap_matrix(model, x, bg, num_coalition_samples, seed)[class_index]


def shap_matrix(
    model: Model,
    x: np.ndarray,
    bg: BackgroundSet,
    mode: str,
    num_coalition_samples: int,
    seed: int,
) -> np.ndarray:
    """Dispatch on mode ("exact" or "kernel"); returns (m, n)."""
    if mode == "exact":
        return exact_shap_matrix(model, x, bg)
    if mode == "kernel":
        return kernel_shap_matrix(model, x, bg, num_coalition_samples, seed)
    raise ValidationError(f"unknown shap mode {mode!r}; expected 'exact' or 'kernel'")


@dataclass(frozen=True)
class ShapSummary:
    """Per-part attribution distribution for one object class over a dataset."""

    class_label: str
    parts: tuple[str, ...]
    pairs: dict[str, list[tuple[float, float]]]  # part -> [(shap, feature)]
    mean_abs: dict[str, float]
    ranking: tuple[str, ...]  # parts by decreasing mean |shap|


def shap_summary(
    shap_values: np.ndarray,
    descriptors: np.ndarray,
    kg: KnowledgeGraph,
    class_label: str,
) -> ShapSummary:
    """Summarize attributions toward one class across instances.

    shap_values: (N, m, n); descriptors: (N, n). Parts the model never
    moves on get mean |shap| 0 and rank last.
    """
    shap_values = np.asarray(shap_values, dtype=np.float64)
    descriptors = np.asarray(descriptors, dtype=np.float64)
    if shap_values.ndim != 3 or shap_values.shape[0] == 0:
        raise ValidationError("shap_values must be a non-empty (N, m, n) array")
    if descriptors.shape != (shap_values.shape[0], shap_values.shape[2]):
        raise ValidationError("descriptors must align with shap_values instances")
    k = kg.object_index(class_label)
    rows = shap_values[:, k, :]
    pairs = {
        part: [(float(rows[i, j]), float(descriptors[i, j])) for i in range(rows.shape[0])]
        for j, part in enumerate(kg.part_classes)
    }
    mean_abs = {
        part: float(np.mean(np.abs(rows[:, j]))) for j, part in enumerate(kg.part_classes)
    }
    ranking = tuple(
        sorted(kg.part_classes, key=lambda part: (-mean_abs[part], kg.part_index(part)))
    )
    return ShapSummary(class_label, kg.part_classes, pairs, mean_abs, ranking)


def write_summary_csv(summaries: list[ShapSummary], path: str | Path) -> None:
    """Emit (part, feature_value, shap_value, class) rows for external plotting."""
    with Path(path).open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["part", "feature_value", "shap_value", "class"])
        for summary in summaries:
            for part in summary.parts:
                for shap_value, feature_value in summary.pairs[part]:
                    writer.writerow(
                        [part, repr(feature_value), repr(shap_value), summary.class_label]
                    )
