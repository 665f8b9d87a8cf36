"""Deterministic generator for the synthetic surjective two-modality dataset.

Each sample pairs a continuous point x1 (2-D) with a binary label x2. One
label value covers many points, so the label-to-point direction is
one-to-many. Per-class maximum-likelihood fits live here too because the
bound certifier is built on them.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from mmvlab.distributions import CategoricalParams, DiagGaussianParams

VARIANCE_FLOOR = 1e-8
PROB_FLOOR = 1e-12

DATASET_HEADER = ["x1_a", "x1_b", "x2"]


@dataclass(frozen=True)
class DataGenConfig:
    n_per_class: int = 1000
    shape_kind: str = "gaussians"
    class0_center: tuple[float, float] = (-2.0, 0.0)
    class1_center: tuple[float, float] = (2.0, 0.0)
    noise_scales_class0: tuple[float, float] = (0.3, 1.2)
    noise_scales_class1: tuple[float, float] = (0.3, 1.2)
    seed: int = 0

    def __post_init__(self):
        if self.n_per_class < 1:
            raise ValueError("n_per_class must be >= 1")
        if self.shape_kind not in ("gaussians", "arcs"):
            raise ValueError(f"unknown shape_kind {self.shape_kind!r}")
        if min(*self.noise_scales_class0, *self.noise_scales_class1) < 0:
            raise ValueError("noise_scales must be non-negative")


@dataclass(frozen=True)
class MultimodalDataset:
    """Paired samples: x1 is (N, 2), x2 is (N,) labels in {0, 1}."""

    x1: np.ndarray
    x2: np.ndarray
    class_index_sets: tuple[np.ndarray, ...] = field(default=())

    def __post_init__(self):
        x1 = np.asarray(self.x1, dtype=np.float64)
        x2 = np.asarray(self.x2, dtype=np.int64)
        if x1.ndim != 2 or x1.shape[0] != x2.shape[0]:
            raise ValueError(f"inconsistent shapes x1 {x1.shape}, x2 {x2.shape}")
        if not np.all(np.isfinite(x1)):
            raise ValueError("x1 contains non-finite values")
        sets = tuple(np.flatnonzero(x2 == c) for c in range(int(x2.max()) + 1))
        object.__setattr__(self, "x1", x1)
        object.__setattr__(self, "x2", x2)
        object.__setattr__(self, "class_index_sets", sets)

    @property
    def n(self) -> int:
        return self.x1.shape[0]

    @property
    def n_classes(self) -> int:
        return len(self.class_index_sets)

    def class_slice(self, c: int) -> np.ndarray:
        return self.x1[self.class_index_sets[c]]


def generate(cfg: DataGenConfig) -> MultimodalDataset:
    """Draw the dataset; class-0 rows precede class-1 rows, seed-deterministic."""
    rng = np.random.default_rng(cfg.seed)
    blocks = []
    for center, scales in ((cfg.class0_center, cfg.noise_scales_class0),
                           (cfg.class1_center, cfg.noise_scales_class1)):
        noise = rng.standard_normal((cfg.n_per_class, 2)) * np.asarray(scales)
        if cfg.shape_kind == "gaussians":
            pts = np.asarray(center) + noise
        else:
            theta = rng.uniform(0.0, np.pi, size=cfg.n_per_class)
            arc = 2.0 * np.column_stack([np.cos(theta), np.sin(theta)])
            pts = np.asarray(center) + arc + noise
        blocks.append(pts)
    x1 = np.vstack(blocks)
    x2 = np.repeat([0, 1], cfg.n_per_class)
    return MultimodalDataset(x1=x1, x2=x2)


def subset(ds: MultimodalDataset, indices) -> MultimodalDataset:
    return MultimodalDataset(x1=ds.x1[indices], x2=ds.x2[indices])


# ---------------------------------------------------------------------------
# maximum-likelihood fits


@dataclass(frozen=True)
class MleSolution:
    family: str
    params: DiagGaussianParams | CategoricalParams
    loglik: float
    floored: bool


def gaussian_diag_mle(points: np.ndarray) -> tuple[np.ndarray, np.ndarray, bool]:
    """Sample mean and 1/N (biased) per-dim variance, variance-floored."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] < 1:
        raise ValueError("gaussian_diag_mle expects a non-empty (N, D) array")
    mean = points.mean(axis=0)
    var = np.mean((points - mean) ** 2, axis=0)
    floored = bool(np.any(var < VARIANCE_FLOOR))
    return mean, np.maximum(var, VARIANCE_FLOOR), floored


def categorical_mle(labels, n_categories: int) -> tuple[np.ndarray, bool]:
    """Empirical class frequencies; zero counts floored then renormalized."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size < 1:
        raise ValueError("categorical_mle expects at least one label")
    counts = np.bincount(labels, minlength=n_categories).astype(np.float64)
    probs = counts / counts.sum()
    floored = bool(np.any(probs < PROB_FLOOR))
    probs = np.maximum(probs, PROB_FLOOR)
    return probs / probs.sum(), floored


def class_mle(ds: MultimodalDataset, c: int, family: str = "gaussian_diag"
              ) -> MleSolution:
    """MLE of the given family on the rows of class c, plus its log-likelihood."""
    idx = ds.class_index_sets[c]
    if idx.size == 0:
        raise ValueError(f"class {c} is empty")
    if family == "gaussian_diag":
        mean, var, floored = gaussian_diag_mle(ds.x1[idx])
        params = DiagGaussianParams(mean=mean, log_std=0.5 * np.log(var))
        diffs = ds.x1[idx] - mean
        ll = float(np.sum(-0.5 * diffs**2 / var - 0.5 * np.log(var)
                          - 0.5 * np.log(2.0 * np.pi)))
        return MleSolution("gaussian_diag", params, ll, floored)
    if family == "categorical":
        probs, floored = categorical_mle(ds.x2[idx], ds.n_classes)
        params = CategoricalParams(logits=np.log(probs))
        ll = float(np.sum(np.log(probs)[ds.x2[idx]]))
        return MleSolution("categorical", params, ll, floored)
    raise ValueError(f"unknown family {family!r}")


# ---------------------------------------------------------------------------
# CSV persistence (17 significant digits round-trips float64 exactly)


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def save_csv(ds: MultimodalDataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(DATASET_HEADER)
        for (a, b), lab in zip(ds.x1, ds.x2):
            w.writerow([_fmt(a), _fmt(b), int(lab)])


def load_csv(path) -> MultimodalDataset:
    with open(path, newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        header = next(r)
        if header != DATASET_HEADER:
            raise ValueError(f"bad dataset header {header!r}")
        rows = [(float(a), float(b), int(lab)) for a, b, lab in r]
    if not rows:
        raise ValueError("dataset file has no rows")
    x1 = np.array([[a, b] for a, b, _ in rows])
    x2 = np.array([lab for _, _, lab in rows])
    return MultimodalDataset(x1=x1, x2=x2)
