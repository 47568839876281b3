"""Binned calibration metrics over a log of predicted probability vectors.

All metrics share the same equal-width binning of the confidence range
[0, 1] into ``m`` bins, where bin ``i`` covers the half-open interval
((i-1)/m, i/m]. A confidence of exactly 0, which no half-open interval
contains, is assigned to bin 1 so that bin counts always partition the
sample count.

Metrics:

* ``compute_ece``: bin-weighted mean |accuracy - confidence| over the
  top-label confidences. Measures calibration of the predicted class only.
* ``compute_mce``: the worst occupied bin's |accuracy - confidence|.
* ``compute_sce``: classwise extension of ECE: every sample is binned
  once per class by its confidence for that class, and the per-class
  errors are averaged. Sensitive to miscalibration of non-predicted
  classes, which top-label ECE cannot see.
* ``compute_class_j_ece``: a single class's un-averaged share of SCE.

Per-bin reductions use exact summation (``math.fsum``), so every metric is
invariant under permutation of the samples bit-for-bit, not just up to
rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import as_matrix

ROW_SUM_TOL = 1e-9


@dataclass(frozen=True)
class PredictionLog:
    """N predicted probability vectors (rows sum to 1) plus N true labels."""

    probs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        probs = as_matrix(self.probs, "probs")
        labels = np.asarray(self.labels, dtype=np.int64)
        if probs.shape[0] < 1 or probs.shape[1] < 2:
            raise ValueError("need at least 1 sample and 2 classes")
        if labels.shape != (probs.shape[0],):
            raise ValueError("labels must be a vector with one entry per row")
        if np.any(probs < 0.0):
            raise ValueError("probabilities must be nonnegative")
        sums = probs.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > ROW_SUM_TOL):
            bad = int(np.argmax(np.abs(sums - 1.0)))
            raise ValueError(f"row {bad} sums to {sums[bad]!r}, not 1")
        if labels.min() < 0 or labels.max() >= probs.shape[1]:
            raise ValueError("labels out of range")
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.probs.shape[0]

    @property
    def k(self) -> int:
        return self.probs.shape[1]


@dataclass(frozen=True)
class BinningConfig:
    """Equal-width binning of [0, 1] into ``m`` bins (default 15)."""

    m: int = 15

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("bin count must be >= 1")


@dataclass
class ReliabilityTable:
    """Per-bin sample count, accuracy and mean confidence, plus globals.

    Empty bins report accuracy and mean confidence of 0. ``counts`` always
    sums to the number of samples.
    """

    m: int
    counts: np.ndarray
    accuracy: np.ndarray
    mean_confidence: np.ndarray
    global_accuracy: float
    global_mean_confidence: float

    def bin_edges(self, i: int) -> tuple[float, float]:
        """(lower, upper] interval of 1-based bin ``i``."""
        return ((i - 1) / self.m, i / self.m)


@dataclass
class CalibrationReport:
    """All four calibration metrics of a log under one binning."""

    ece: float
    sce: float
    mce: float
    class_ece: list[float]
    accuracy: float
    mean_confidence: float
    m: int


def bin_index(confidence: float, m: int) -> int:
    """1-based bin of a confidence value: smallest i with confidence <= i/m.

    Exactly 0 goes to bin 1.
    """
    if not 0.0 <= confidence <= 1.0:
        raise ValueError(f"confidence {confidence!r} outside [0, 1]")
    if m < 1:
        raise ValueError("bin count must be >= 1")
    edges = np.arange(1, m + 1) / m
    return int(np.searchsorted(edges, confidence, side="left")) + 1


def argmax_prediction(probs_row: np.ndarray) -> int:
    """Predicted class of one probability row; ties go to the lowest index."""
    return int(np.argmax(probs_row))


def _bin_ids(conf: np.ndarray, m: int) -> np.ndarray:
    edges = np.arange(1, m + 1) / m
    return np.searchsorted(edges, conf, side="left") + 1


def _top_conf_and_correct(log: PredictionLog) -> tuple[np.ndarray, np.ndarray]:
    preds = np.argmax(log.probs, axis=1)
    conf = log.probs[np.arange(log.n), preds]
    correct = (preds == log.labels).astype(np.float64)
    return conf, correct


def _bin_terms(conf: np.ndarray, hits: np.ndarray, n: int, m: int):
    """Yield (count, |A - C|) for every occupied bin, in bin order."""
    ids = _bin_ids(conf, m)
    for i in range(1, m + 1):
        mask = ids == i
        count = int(mask.sum())
        if count == 0:
            continue
        acc = math.fsum(hits[mask]) / count
        avg_conf = math.fsum(conf[mask]) / count
        yield count, abs(acc - avg_conf)


def compute_ece(log: PredictionLog, cfg: BinningConfig = BinningConfig()) -> float:
    """Expected calibration error over top-label confidences."""
    conf, correct = _top_conf_and_correct(log)
    terms = [(count / log.n) * gap for count, gap in _bin_terms(conf, correct, log.n, cfg.m)]
    return math.fsum(terms)


def compute_mce(log: PredictionLog, cfg: BinningConfig = BinningConfig()) -> float:
    """Maximum calibration error: worst occupied bin's |A - C|."""
    conf, correct = _top_conf_and_correct(log)
    gaps = [gap for _, gap in _bin_terms(conf, correct, log.n, cfg.m)]
    return max(gaps) if gaps else 0.0


def compute_class_j_ece(log: PredictionLog, cfg: BinningConfig, j: int) -> float:
    """Class j's slice of the classwise error: all samples are binned by
    their class-j confidence, and per-bin accuracy is the fraction whose
    true label is j."""
    if not 0 <= j < log.k:
        raise ValueError(f"class {j} out of range for K={log.k}")
    conf_j = log.probs[:, j]
    is_j = (log.labels == j).astype(np.float64)
    terms = [(count / log.n) * gap for count, gap in _bin_terms(conf_j, is_j, log.n, cfg.m)]
    return math.fsum(terms)


def compute_sce(log: PredictionLog, cfg: BinningConfig = BinningConfig()) -> float:
    """Static (classwise) calibration error: the class-j errors averaged
    over all K classes."""
    all_terms = []
    for j in range(log.k):
        conf_j = log.probs[:, j]
        is_j = (log.labels == j).astype(np.float64)
        all_terms.extend(
            (count / log.n) * gap for count, gap in _bin_terms(conf_j, is_j, log.n, cfg.m)
        )
    return math.fsum(all_terms) / log.k


def reliability_table(log: PredictionLog, cfg: BinningConfig = BinningConfig()) -> ReliabilityTable:
    """Per-bin data behind a reliability diagram, over top-label confidences."""
    conf, correct = _top_conf_and_correct(log)
    ids = _bin_ids(conf, cfg.m)
    counts = np.zeros(cfg.m, dtype=np.int64)
    accuracy = np.zeros(cfg.m, dtype=np.float64)
    mean_conf = np.zeros(cfg.m, dtype=np.float64)
    for i in range(1, cfg.m + 1):
        mask = ids == i
        count = int(mask.sum())
        counts[i - 1] = count
        if count > 0:
            accuracy[i - 1] = math.fsum(correct[mask]) / count
            mean_conf[i - 1] = math.fsum(conf[mask]) / count
    return ReliabilityTable(
        m=cfg.m,
        counts=counts,
        accuracy=accuracy,
        mean_confidence=mean_conf,
        global_accuracy=math.fsum(correct) / log.n,
        global_mean_confidence=math.fsum(conf) / log.n,
    )


def confidence_histogram(
    log: PredictionLog,
    cfg: BinningConfig = BinningConfig(),
    misclassified_only: bool = False,
) -> np.ndarray:
    """Counts of top-label confidences per bin, optionally restricted to
    samples whose predicted class is wrong."""
    conf, correct = _top_conf_and_correct(log)
    if misclassified_only:
        keep = correct == 0.0
        conf = conf[keep]
    ids = _bin_ids(conf, cfg.m)
    counts = np.zeros(cfg.m, dtype=np.int64)
    for i in range(1, cfg.m + 1):
        counts[i - 1] = int(np.sum(ids == i))
    return counts


def calibration_report(log: PredictionLog, cfg: BinningConfig = BinningConfig()) -> CalibrationReport:
    """Compute every metric of a log at once."""
    table = reliability_table(log, cfg)
    return CalibrationReport(
        ece=compute_ece(log, cfg),
        sce=compute_sce(log, cfg),
        mce=compute_mce(log, cfg),
        class_ece=[compute_class_j_ece(log, cfg, j) for j in range(log.k)],
        accuracy=table.global_accuracy,
        mean_confidence=table.global_mean_confidence,
        m=cfg.m,
    )
