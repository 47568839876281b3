"""Seeded synthetic datasets and the on-disk formats of the toolkit.

Generators are bit-reproducible: the same arguments always produce the same
dataset. Feature datasets travel as CSV (header ``f0,...,f{D-1},label``,
floats written with 17 significant digits so the round trip is exact);
prediction logs travel as JSON Lines, one ``{"probs": [...], "label": n}``
object per line, with ``{"logits": [...]}`` lines accepted and softmaxed on
load. Loader errors always name the offending line.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .metrics import PredictionLog
from .numerics import Rng, as_matrix, softmax_rows

# rows whose sum is off by more than this are rejected; smaller deviations
# (beyond what PredictionLog tolerates) are repaired by renormalizing
JSONL_SUM_REJECT = 1e-6
JSONL_SUM_EXACT = 1e-9


@dataclass(frozen=True)
class LabeledDataset:
    """Feature matrix (N x D) with integer labels in [0, K)."""

    features: np.ndarray
    labels: np.ndarray
    k: int

    def __post_init__(self):
        features = as_matrix(self.features, "features")
        labels = np.asarray(self.labels, dtype=np.int64)
        if features.shape[0] < 1:
            raise ValueError("dataset must contain at least one sample")
        if labels.shape != (features.shape[0],):
            raise ValueError("labels must have one entry per feature row")
        if self.k < 1 or labels.min() < 0 or labels.max() >= self.k:
            raise ValueError("labels out of range for class count")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]


def _blob_means(k: int, d: int, separation: float, rng: Rng) -> np.ndarray:
    """k cluster centers on a seeded random arrangement, rescaled so the
    minimum pairwise distance equals ``separation``."""
    while True:
        pts = rng.gaussian_array((k, d))
        dmin = np.inf
        for i in range(k):
            for j in range(i + 1, k):
                dmin = min(dmin, float(np.linalg.norm(pts[i] - pts[j])))
        if dmin > 1e-9:
            return pts * (separation / dmin)


def _sample_blobs(counts: list[int], d: int, separation: float, seed: int) -> LabeledDataset:
    k = len(counts)
    rng = Rng(seed)
    means = _blob_means(k, d, separation, rng)
    rows, labels = [], []
    for cls, count in enumerate(counts):
        rows.append(means[cls] + rng.gaussian_array((count, d)))
        labels.extend([cls] * count)
    return LabeledDataset(
        features=np.vstack(rows),
        labels=np.asarray(labels, dtype=np.int64),
        k=k,
    )


def gen_blobs(k: int, n: int, d: int, separation: float, seed: int) -> LabeledDataset:
    """Balanced unit-variance Gaussian clusters; any remainder of n/k goes
    to the lowest class ids."""
    if k < 2:
        raise ValueError("need at least 2 classes")
    if n < k:
        raise ValueError("need at least one sample per class")
    if d < 2:
        raise ValueError("need at least 2 feature dimensions")
    if not separation > 0.0:
        raise ValueError("separation must be positive")
    base, rem = divmod(n, k)
    counts = [base + (1 if cls < rem else 0) for cls in range(k)]
    return _sample_blobs(counts, d, separation, seed)


def longtail_counts(k: int, n_max: int, imbalance_factor: float) -> list[int]:
    """Exponentially decaying per-class counts, round-half-up.

    Class j gets round(n_max * IF^(-j/(K-1))), so class 0 keeps n_max and
    the last class gets n_max/IF.
    """
    if imbalance_factor < 1.0:
        raise ValueError("imbalance factor must be >= 1")
    counts = [
        int(math.floor(n_max * imbalance_factor ** (-j / (k - 1)) + 0.5))
        for j in range(k)
    ]
    if any(c < 1 for c in counts):
        raise ValueError("imbalance profile rounds a class count to zero")
    return counts


def gen_longtail(
    k: int, n_max: int, d: int, separation: float, imbalance_factor: float, seed: int
) -> LabeledDataset:
    """Long-tail variant of ``gen_blobs``: class counts decay exponentially
    from ``n_max`` down to ``n_max / imbalance_factor``."""
    if k < 2:
        raise ValueError("need at least 2 classes")
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    if d < 2:
        raise ValueError("need at least 2 feature dimensions")
    if not separation > 0.0:
        raise ValueError("separation must be positive")
    counts = longtail_counts(k, n_max, imbalance_factor)
    return _sample_blobs(counts, d, separation, seed)


def rotate_features(ds: LabeledDataset, theta_degrees: float) -> LabeledDataset:
    """Rotate the first two feature dimensions counter-clockwise by theta;
    any further dimensions and the labels are untouched."""
    if ds.d < 2:
        raise ValueError("rotation needs at least 2 feature dimensions")
    rad = math.radians(theta_degrees)
    c, s = math.cos(rad), math.sin(rad)
    features = ds.features.copy()
    x0 = ds.features[:, 0]
    x1 = ds.features[:, 1]
    features[:, 0] = c * x0 - s * x1
    features[:, 1] = s * x0 + c * x1
    return LabeledDataset(features=features, labels=ds.labels.copy(), k=ds.k)


def save_dataset_csv(ds: LabeledDataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join([f"f{i}" for i in range(ds.d)] + ["label"]) + "\n")
        for row, label in zip(ds.features, ds.labels):
            fields = [f"{v:.17g}" for v in row] + [str(int(label))]
            fh.write(",".join(fields) + "\n")


def load_dataset_csv(path) -> LabeledDataset:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty file")
    header = lines[0].split(",")
    d = len(header) - 1
    expected = [f"f{i}" for i in range(d)] + ["label"]
    if d < 1 or header != expected:
        raise ValueError(f"{path}: line 1: bad header {lines[0]!r}")
    rows, labels = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            raise ValueError(f"{path}: line {lineno}: blank line")
        fields = line.split(",")
        if len(fields) != d + 1:
            raise ValueError(f"{path}: line {lineno}: expected {d + 1} fields, got {len(fields)}")
        try:
            values = [float(f) for f in fields[:d]]
        except ValueError:
            raise ValueError(f"{path}: line {lineno}: non-numeric feature") from None
        if not all(math.isfinite(v) for v in values):
            raise ValueError(f"{path}: line {lineno}: non-finite feature")
        try:
            label = int(fields[d])
        except ValueError:
            raise ValueError(f"{path}: line {lineno}: non-integer label {fields[d]!r}") from None
        if label < 0:
            raise ValueError(f"{path}: line {lineno}: negative label")
        rows.append(values)
        labels.append(label)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return LabeledDataset(
        features=np.asarray(rows, dtype=np.float64),
        labels=np.asarray(labels, dtype=np.int64),
        k=max(labels) + 1,
    )


def save_prediction_log_jsonl(log: PredictionLog, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row, label in zip(log.probs, log.labels):
            fh.write(json.dumps({"probs": row.tolist(), "label": int(label)}) + "\n")


def _parse_jsonl_rows(path):
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    numbered = [(i, line) for i, line in enumerate(lines, start=1) if line.strip()]
    if not numbered:
        raise ValueError(f"{path}: empty file")
    for lineno, line in numbered:
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from None
        if not isinstance(obj, dict):
            raise ValueError(f"{path}: line {lineno}: expected a JSON object")
        yield lineno, obj


def _check_vector(values, k: int | None, lineno: int, path, what: str) -> list[float]:
    if not isinstance(values, list) or not values:
        raise ValueError(f"{path}: line {lineno}: {what} must be a nonempty array")
    try:
        vec = [float(v) for v in values]
    except (TypeError, ValueError):
        raise ValueError(f"{path}: line {lineno}: {what} must be numeric") from None
    if not all(math.isfinite(v) for v in vec):
        raise ValueError(f"{path}: line {lineno}: {what} contains non-finite values")
    if k is not None and len(vec) != k:
        raise ValueError(f"{path}: line {lineno}: {what} has {len(vec)} entries, expected {k}")
    return vec


def _check_label(obj, k: int, lineno: int, path) -> int:
    label = obj.get("label")
    if not isinstance(label, int) or isinstance(label, bool):
        raise ValueError(f"{path}: line {lineno}: label must be an integer")
    if not 0 <= label < k:
        raise ValueError(f"{path}: line {lineno}: label {label} out of range for K={k}")
    return label


def load_prediction_log_jsonl(path) -> PredictionLog:
    """Load a prediction log; ``logits`` lines are softmaxed.

    Probability rows are accepted verbatim when they sum to 1 within 1e-9
    (keeping the save/load round trip exact), renormalized when off by at
    most 1e-6, and rejected beyond that.
    """
    rows: list[np.ndarray] = []
    labels: list[int] = []
    k: int | None = None
    for lineno, obj in _parse_jsonl_rows(path):
        has_probs = "probs" in obj
        has_logits = "logits" in obj
        if has_probs == has_logits:
            raise ValueError(
                f"{path}: line {lineno}: need exactly one of 'probs' or 'logits'"
            )
        key = "probs" if has_probs else "logits"
        vec = _check_vector(obj[key], k, lineno, path, key)
        if k is None:
            k = len(vec)
            if k < 2:
                raise ValueError(f"{path}: line {lineno}: need at least 2 classes")
        if has_probs:
            row = np.asarray(vec, dtype=np.float64)
            if np.any(row < 0.0):
                raise ValueError(f"{path}: line {lineno}: negative probability")
            total = float(row.sum())
            if abs(total - 1.0) > JSONL_SUM_REJECT:
                raise ValueError(
                    f"{path}: line {lineno}: probs sum to {total!r}, beyond tolerance"
                )
            if abs(total - 1.0) > JSONL_SUM_EXACT:
                row = row / total
        else:
            row = softmax_rows(np.asarray([vec], dtype=np.float64))[0]
        labels.append(_check_label(obj, k, lineno, path))
        rows.append(row)
    return PredictionLog(probs=np.vstack(rows), labels=np.asarray(labels, dtype=np.int64))


def save_logits_jsonl(logits: np.ndarray, labels: np.ndarray, path) -> None:
    logits = as_matrix(logits, "logits")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row, label in zip(logits, labels):
            fh.write(json.dumps({"logits": row.tolist(), "label": int(label)}) + "\n")


def load_logits_jsonl(path) -> tuple[np.ndarray, np.ndarray]:
    """Load raw logits (for calibrators that need them); every line must
    carry a ``logits`` array."""
    rows: list[list[float]] = []
    labels: list[int] = []
    k: int | None = None
    for lineno, obj in _parse_jsonl_rows(path):
        if "logits" not in obj:
            raise ValueError(f"{path}: line {lineno}: missing 'logits'")
        vec = _check_vector(obj["logits"], k, lineno, path, "logits")
        if k is None:
            k = len(vec)
            if k < 2:
                raise ValueError(f"{path}: line {lineno}: need at least 2 classes")
        labels.append(_check_label(obj, k, lineno, path))
        rows.append(vec)
    return np.asarray(rows, dtype=np.float64), np.asarray(labels, dtype=np.int64)
