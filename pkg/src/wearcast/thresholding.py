"""Threshold selection for defect binarization.

Three strategies share one decision type: a fixed class value, Otsu's
between-class-variance maximizer as a baseline, and a lightweight
nearest-centroid classifier over histogram features that picks one of the
six fixed threshold classes.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .raster import GrayImage, read_pgm

THRESHOLD_VALUES: tuple[int, ...] = (35, 40, 45, 52, 62, 72)

MODEL_FORMAT = "wearcast-threshold-classifier"
MODEL_VERSION = 1


class TrainingError(ValueError):
    """Raised when the classifier training set is unusable."""


@dataclass(frozen=True)
class ThresholdClass:
    """One of the six fixed threshold values, indexed in ascending order."""

    value: int
    class_index: int

    def __post_init__(self):
        if self.value not in THRESHOLD_VALUES:
            raise ValueError(f"{self.value} is not one of {THRESHOLD_VALUES}")
        if THRESHOLD_VALUES[self.class_index] != self.value:
            raise ValueError(f"class_index {self.class_index} does not map to value {self.value}")

    @classmethod
    def from_value(cls, value: int) -> "ThresholdClass":
        if value not in THRESHOLD_VALUES:
            raise ValueError(f"{value} is not one of {THRESHOLD_VALUES}")
        return cls(value, THRESHOLD_VALUES.index(value))

    @classmethod
    def from_index(cls, class_index: int) -> "ThresholdClass":
        if not 0 <= class_index < len(THRESHOLD_VALUES):
            raise ValueError(f"class_index must lie in [0, {len(THRESHOLD_VALUES) - 1}]")
        return cls(THRESHOLD_VALUES[class_index], class_index)


@dataclass(frozen=True)
class ThresholdDecision:
    """A chosen binarization threshold plus its provenance."""

    threshold: int
    method: str
    confidence: float = 1.0
    degenerate: bool = False

    def __post_init__(self):
        if self.method not in ("fixed", "otsu", "classifier"):
            raise ValueError(f"unknown method {self.method!r}")
        if not 0 <= self.threshold <= 255:
            raise ValueError("threshold must lie in [0, 255]")
        if self.method in ("fixed", "classifier") and self.threshold not in THRESHOLD_VALUES:
            raise ValueError(f"{self.method} threshold must be one of {THRESHOLD_VALUES}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must lie in [0, 1]")


def fixed_decision(value: int) -> ThresholdDecision:
    return ThresholdDecision(threshold=value, method="fixed")


@dataclass(frozen=True)
class HistogramFeatures:
    """Intensity statistics used as classifier input."""

    histogram: np.ndarray  # 256 bins, normalized to sum 1
    mean: float
    std: float
    median: float

    def as_vector(self) -> np.ndarray:
        # Scalar stats are scaled to [0, 1] so no single component dominates
        # the Euclidean distance against the unit-sum histogram.
        return np.concatenate(
            [self.histogram, [self.mean / 255.0, self.std / 255.0, self.median / 255.0]]
        )


FEATURE_LENGTH = 259


def compute_features(img: GrayImage) -> HistogramFeatures:
    flat = img.pixels.ravel()
    hist = np.bincount(flat, minlength=256).astype(np.float64)
    hist /= flat.size
    return HistogramFeatures(
        histogram=hist,
        mean=float(flat.mean()),
        std=float(flat.std()),
        median=float(np.median(flat)),
    )


def otsu_threshold(img: GrayImage) -> int:
    """Threshold maximizing between-class variance of the two-class split.

    The split at t puts intensities <= t in the background class, matching
    :func:`wearcast.raster.threshold`. Scores are compared in exact integer
    arithmetic, so ties resolve deterministically to the smallest t. A
    constant image has no valid split and returns its single intensity.
    """
    flat = img.pixels.ravel()
    lo, hi = int(flat.min()), int(flat.max())
    if lo == hi:
        return lo
    hist = [int(c) for c in np.bincount(flat, minlength=256)]
    total_n = len(flat)
    total_s = sum(i * h for i, h in enumerate(hist))

    # between-class variance at t is ((s0*n1 - s1*n0)^2) / (n0*n1) up to the
    # constant factor N^2; compared as exact fractions via cross-multiplication
    best_t = 0
    best_num, best_den = -1, 1
    n0 = 0
    s0 = 0
    for t in range(256):
        n0 += hist[t]
        s0 += t * hist[t]
        n1 = total_n - n0
        if n0 == 0 or n1 == 0:
            continue
        s1 = total_s - s0
        num = (s0 * n1 - s1 * n0) ** 2
        den = n0 * n1
        if num * best_den > best_num * den:
            best_num, best_den = num, den
            best_t = t
    return best_t


def otsu_decision(img: GrayImage) -> ThresholdDecision:
    flat = img.pixels.ravel()
    degenerate = int(flat.min()) == int(flat.max())
    return ThresholdDecision(
        threshold=otsu_threshold(img), method="otsu", confidence=1.0, degenerate=degenerate
    )


@dataclass(frozen=True)
class ClassifierModel:
    """Per-class feature centroids; immutable once trained."""

    centroids: np.ndarray  # shape (6, FEATURE_LENGTH)
    sample_counts: tuple[int, ...]

    def __post_init__(self):
        if self.centroids.shape != (len(THRESHOLD_VALUES), FEATURE_LENGTH):
            raise ValueError(f"centroids must have shape (6, {FEATURE_LENGTH})")
        if len(self.sample_counts) != len(THRESHOLD_VALUES) or any(
            c < 1 for c in self.sample_counts
        ):
            raise ValueError("every class needs at least one training sample")

    def to_doc(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "feature_length": FEATURE_LENGTH,
            "classes": [
                {
                    "value": value,
                    "class_index": idx,
                    "sample_count": self.sample_counts[idx],
                    "centroid": [float(v) for v in self.centroids[idx]],
                }
                for idx, value in enumerate(THRESHOLD_VALUES)
            ],
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "ClassifierModel":
        if doc.get("format") != MODEL_FORMAT:
            raise ValueError("not a threshold classifier document")
        if doc.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model version {doc.get('version')}")
        classes = sorted(doc["classes"], key=lambda c: c["class_index"])
        values = tuple(c["value"] for c in classes)
        if values != THRESHOLD_VALUES:
            raise ValueError(f"model classes {values} do not match {THRESHOLD_VALUES}")
        centroids = np.array([c["centroid"] for c in classes], dtype=np.float64)
        counts = tuple(int(c["sample_count"]) for c in classes)
        return cls(centroids=centroids, sample_counts=counts)


def train_classifier(samples: list[tuple[GrayImage, ThresholdClass]]) -> ClassifierModel:
    """Average the feature vectors of each class into its centroid."""
    by_class: dict[int, list[np.ndarray]] = {i: [] for i in range(len(THRESHOLD_VALUES))}
    for img, cls in samples:
        by_class[cls.class_index].append(compute_features(img).as_vector())
    missing = [THRESHOLD_VALUES[i] for i, vecs in by_class.items() if not vecs]
    if missing:
        raise TrainingError(f"no training samples for threshold classes {missing}")
    centroids = np.stack(
        [np.mean(by_class[i], axis=0) for i in range(len(THRESHOLD_VALUES))]
    )
    counts = tuple(len(by_class[i]) for i in range(len(THRESHOLD_VALUES)))
    return ClassifierModel(centroids=centroids, sample_counts=counts)


def predict_class(model: ClassifierModel, img: GrayImage) -> ThresholdDecision:
    """Nearest centroid by Euclidean distance; ties go to the lower class index."""
    vec = compute_features(img).as_vector()
    dists = np.sqrt(((model.centroids - vec) ** 2).sum(axis=1))
    best = int(np.argmin(dists))  # argmin keeps the first (lowest index) on ties
    inv = 1.0 / (dists + 1e-12)
    confidence = float(inv[best] / inv.sum())
    return ThresholdDecision(
        threshold=THRESHOLD_VALUES[best], method="classifier", confidence=confidence
    )


def save_model(model: ClassifierModel, path) -> None:
    Path(path).write_text(json.dumps(model.to_doc(), indent=2) + "\n")


def load_model(path) -> ClassifierModel:
    return ClassifierModel.from_doc(json.loads(Path(path).read_text()))


def load_manifest(path) -> list[tuple[GrayImage, ThresholdClass]]:
    """Read a training manifest CSV with columns image_path,threshold_class_value.

    Relative image paths resolve against the manifest's directory.
    """
    manifest = Path(path)
    samples = []
    with manifest.open(newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"image_path", "threshold_class_value"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise ValueError(
                "manifest needs columns image_path,threshold_class_value"
            )
        for row in reader:
            img_path = Path(row["image_path"])
            if not img_path.is_absolute():
                img_path = manifest.parent / img_path
            cls = ThresholdClass.from_value(int(row["threshold_class_value"]))
            samples.append((read_pgm(img_path), cls))
    return samples
