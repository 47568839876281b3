"""Classification and calibration-auxiliary losses with analytic gradients.

Every loss consumes raw logits, applies the stable softmax internally, and
returns both the scalar value and its exact gradient with respect to the
logits. Keeping softmax inside the loss fixes one gradient convention for
the whole package and avoids log-of-zero issues (log arguments are clamped
at 1e-300).

Auxiliary terms:

* ``mdca_loss``: mean over classes of |batch-mean confidence minus
  batch-mean label frequency|. Differentiable; the label-frequency term is
  constant with respect to the logits, so gradients flow only through the
  confidences. The subgradient of |.| at 0 is taken as 0.
* ``dca_loss``: |batch-mean top-label confidence minus batch accuracy|.
  The accuracy term is a step function and carries no gradient.

``combined_loss`` forms ``classification + beta * auxiliary`` and
short-circuits to the bare classification loss when ``beta`` is 0 or the
auxiliary is ``none``, so those configurations are bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import softmax_rows

LOG_CLAMP = 1e-300

CLASSIFICATION_LOSSES = ("nll", "ls", "fl", "brier")
AUXILIARY_LOSSES = ("none", "mdca", "dca")


@dataclass(frozen=True)
class Batch:
    """A minibatch of logits (N_b x K) and integer labels in [0, K)."""

    logits: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        logits = np.ascontiguousarray(self.logits, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if logits.ndim != 2 or logits.shape[0] < 1 or logits.shape[1] < 2:
            raise ValueError("logits must be N_b x K with N_b >= 1, K >= 2")
        if not np.all(np.isfinite(logits)):
            raise ValueError("logits contain non-finite entries")
        if labels.shape != (logits.shape[0],):
            raise ValueError("labels must have one entry per logit row")
        if labels.min() < 0 or labels.max() >= logits.shape[1]:
            raise ValueError("labels out of range")
        object.__setattr__(self, "logits", logits)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.logits.shape[0]

    @property
    def k(self) -> int:
        return self.logits.shape[1]


@dataclass(frozen=True)
class LossSpec:
    """Which classification loss to train with, plus an optional auxiliary
    calibration term weighted by ``beta``."""

    classification: str = "nll"
    alpha: float = 0.1  # label-smoothing mass moved off the true class
    gamma: float = 1.0  # focal-loss focusing strength
    auxiliary: str = "none"
    beta: float = 0.0

    def __post_init__(self):
        if self.classification not in CLASSIFICATION_LOSSES:
            raise ValueError(f"unknown classification loss {self.classification!r}")
        if self.auxiliary not in AUXILIARY_LOSSES:
            raise ValueError(f"unknown auxiliary loss {self.auxiliary!r}")
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError("alpha must be in [0, 1)")
        if self.gamma < 0.0:
            raise ValueError("gamma must be nonnegative")
        if self.beta < 0.0:
            raise ValueError("beta must be nonnegative")


@dataclass
class LossOutput:
    value: float
    grad_logits: np.ndarray


def _probs_and_onehot(batch: Batch) -> tuple[np.ndarray, np.ndarray]:
    probs = softmax_rows(batch.logits)
    onehot = np.zeros_like(probs)
    onehot[np.arange(batch.n), batch.labels] = 1.0
    return probs, onehot


def nll_loss(batch: Batch) -> LossOutput:
    """Mean negative log-likelihood of the true labels."""
    probs, onehot = _probs_and_onehot(batch)
    p_true = probs[np.arange(batch.n), batch.labels]
    value = -np.sum(np.log(np.maximum(p_true, LOG_CLAMP))) / batch.n
    grad = (probs - onehot) / batch.n
    return LossOutput(float(value), grad)


def label_smoothing_loss(batch: Batch, alpha: float) -> LossOutput:
    """Cross entropy against soft targets: 1-alpha on the true class and
    alpha/(K-1) spread over the others."""
    if not 0.0 <= alpha < 1.0:
        raise ValueError("alpha must be in [0, 1)")
    probs, onehot = _probs_and_onehot(batch)
    soft = np.full_like(probs, alpha / (batch.k - 1))
    soft[np.arange(batch.n), batch.labels] = 1.0 - alpha
    value = -np.sum(soft * np.log(np.maximum(probs, LOG_CLAMP))) / batch.n
    grad = (probs - soft) / batch.n
    return LossOutput(float(value), grad)


def focal_loss(batch: Batch, gamma: float) -> LossOutput:
    """Mean of (1 - p)^gamma * (-log p) over the true-class probabilities p.

    The gradient goes through the softmax Jacobian analytically. At p = 1
    the (1-p)^(gamma-1) factor is ill-formed for gamma < 1; its limit is 0,
    which is what the implementation uses.
    """
    if gamma < 0.0:
        raise ValueError("gamma must be nonnegative")
    probs, onehot = _probs_and_onehot(batch)
    p = probs[np.arange(batch.n), batch.labels]
    p_safe = np.maximum(p, LOG_CLAMP)
    log_p = np.log(p_safe)
    one_minus_p = 1.0 - p
    weight = one_minus_p**gamma
    value = np.sum(weight * (-log_p)) / batch.n

    dloss_dp = -weight / p_safe
    if gamma > 0.0:
        pos = one_minus_p > 0.0
        dloss_dp[pos] += gamma * one_minus_p[pos] ** (gamma - 1.0) * log_p[pos]
    coef = dloss_dp * p  # folds in the p factor of the softmax Jacobian row
    grad = coef[:, None] * (onehot - probs) / batch.n
    return LossOutput(float(value), grad)


def brier_loss(batch: Batch) -> LossOutput:
    """Mean squared distance between the probability vector and the one-hot
    target."""
    probs, onehot = _probs_and_onehot(batch)
    resid = probs - onehot
    value = np.sum(resid * resid) / batch.n
    inner = np.sum(resid * probs, axis=1, keepdims=True)
    grad = 2.0 * probs * (resid - inner) / batch.n
    return LossOutput(float(value), grad)


def mdca_loss(batch: Batch) -> LossOutput:
    """Mean over classes of |mean confidence - mean label count| within the
    batch.

    Both means run over the batch samples. Zero exactly when, for every
    class, the batch-average confidence matches the batch frequency of that
    class; note this is much weaker than per-sample L1 closeness.
    """
    probs, onehot = _probs_and_onehot(batch)
    mean_conf = probs.mean(axis=0)
    mean_count = onehot.mean(axis=0)
    diffs = mean_conf - mean_count
    value = np.sum(np.abs(diffs)) / batch.k

    signs = np.sign(diffs)  # sign(0) = 0: minimum-norm subgradient at the kink
    weighted = np.sum(probs * signs, axis=1, keepdims=True)
    grad = probs * (signs - weighted) / (batch.k * batch.n)
    return LossOutput(float(value), grad)


def dca_loss(batch: Batch) -> LossOutput:
    """|mean top-label confidence - batch accuracy|.

    Accuracy is piecewise constant, so only the confidence term carries
    gradient; the sign rule matches ``mdca_loss``.
    """
    probs, _ = _probs_and_onehot(batch)
    preds = np.argmax(probs, axis=1)
    conf = probs[np.arange(batch.n), preds]
    mean_conf = conf.mean()
    accuracy = np.mean(preds == batch.labels)
    diff = mean_conf - accuracy
    value = abs(diff)

    sign = np.sign(diff)
    pred_onehot = np.zeros_like(probs)
    pred_onehot[np.arange(batch.n), preds] = 1.0
    grad = sign * conf[:, None] * (pred_onehot - probs) / batch.n
    return LossOutput(float(value), grad)


def classification_loss(batch: Batch, spec: LossSpec) -> LossOutput:
    if spec.classification == "nll":
        return nll_loss(batch)
    if spec.classification == "ls":
        return label_smoothing_loss(batch, spec.alpha)
    if spec.classification == "fl":
        return focal_loss(batch, spec.gamma)
    return brier_loss(batch)


def combined_loss(batch: Batch, spec: LossSpec) -> LossOutput:
    """Classification loss plus ``beta`` times the auxiliary term."""
    base = classification_loss(batch, spec)
    if spec.auxiliary == "none" or spec.beta == 0.0:
        return base
    aux = mdca_loss(batch) if spec.auxiliary == "mdca" else dca_loss(batch)
    return LossOutput(
        base.value + spec.beta * aux.value,
        base.grad_logits + spec.beta * aux.grad_logits,
    )
