"""Post-hoc calibrators fitted on a hold-out set.

Temperature scaling divides the logits by a single scalar T > 0 chosen by
exhaustive grid search (0.1 to 10.0 in steps of 0.1) to minimize hold-out
NLL; it never changes the predicted label. Dirichlet calibration learns an
affine map of the log-probabilities followed by softmax, regularized by an
off-diagonal weight penalty (ODIR) and a bias penalty, with the best
(lambda, mu) pair again selected by hold-out NLL.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .losses import Batch, nll_loss
from .numerics import softmax_rows

PROB_CLAMP = 1e-12

TEMPERATURE_GRID = [i / 10 for i in range(1, 101)]

DEFAULT_LAMBDA_GRID = [0.0, 0.01, 0.1, 1.0, 10.0, 0.005, 0.05, 0.5, 5.0, 0.0025, 0.025, 0.25, 2.5]
DEFAULT_MU_GRID = [0.0, 0.01, 0.1, 1.0, 10.0]


@dataclass(frozen=True)
class TemperatureModel:
    t: float

    def __post_init__(self):
        if not self.t > 0.0:
            raise ValueError("temperature must be positive")


@dataclass
class DirichletModel:
    w: np.ndarray  # K x K
    b: np.ndarray  # K

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.w.ndim != 2 or self.w.shape[0] != self.w.shape[1]:
            raise ValueError("w must be square")
        if self.b.shape != (self.w.shape[0],):
            raise ValueError("b must have one entry per class")
        if not (np.all(np.isfinite(self.w)) and np.all(np.isfinite(self.b))):
            raise ValueError("calibrator parameters must be finite")


@dataclass(frozen=True)
class OdirConfig:
    """One (lambda, mu) cell of the regularization grid plus descent knobs."""

    lam: float
    mu: float
    lr: float = 0.01
    epochs: int = 500

    def __post_init__(self):
        if self.lam < 0.0 or self.mu < 0.0:
            raise ValueError("penalty weights must be nonnegative")
        if self.lr <= 0.0:
            raise ValueError("lr must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")


def default_odir_grid(lr: float = 0.01, epochs: int = 500) -> list[OdirConfig]:
    return [
        OdirConfig(lam=lam, mu=mu, lr=lr, epochs=epochs)
        for lam in DEFAULT_LAMBDA_GRID
        for mu in DEFAULT_MU_GRID
    ]


def _mean_nll(logits: np.ndarray, labels: np.ndarray) -> float:
    return nll_loss(Batch(logits, labels)).value


def fit_temperature(holdout_logits: np.ndarray, labels: np.ndarray) -> TemperatureModel:
    """Exhaustive grid argmin of hold-out NLL; ties keep the smallest t."""
    logits = np.asarray(holdout_logits, dtype=np.float64)
    if logits.ndim != 2 or logits.shape[0] == 0:
        raise ValueError("hold-out logits must be a nonempty matrix")
    labels = np.asarray(labels, dtype=np.int64)
    best_t, best_nll = None, np.inf
    for t in TEMPERATURE_GRID:
        nll = _mean_nll(logits / t, labels)
        if nll < best_nll:
            best_t, best_nll = t, nll
    return TemperatureModel(t=best_t)


def apply_temperature(model: TemperatureModel, logits: np.ndarray) -> np.ndarray:
    """softmax(logits / t). Monotone in each row, so argmax is preserved."""
    if not model.t > 0.0:
        raise ValueError("temperature must be positive")
    return softmax_rows(np.asarray(logits, dtype=np.float64) / model.t)


def odir_penalty(w: np.ndarray) -> float:
    """Mean squared off-diagonal weight: sum_{i!=j} w_ij^2 / (K(K-1))."""
    k = w.shape[0]
    off = w - np.diag(np.diag(w))
    return float(np.sum(off * off) / (k * (k - 1)))


def _log_probs(probs: np.ndarray) -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64)
    return np.log(np.maximum(p, PROB_CLAMP))


def _descend(x: np.ndarray, labels: np.ndarray, cfg: OdirConfig) -> DirichletModel:
    """Full-batch gradient descent from the identity map.

    A proposed step that would increase the objective is rejected and the
    step size halved, so the accepted objective sequence never increases.
    """
    k = x.shape[1]
    w = np.eye(k)
    b = np.zeros(k)
    lr = cfg.lr

    def objective_and_grads(w, b):
        logits = x @ w.T + b
        out = nll_loss(Batch(logits, labels))
        value = out.value + cfg.lam * odir_penalty(w) + cfg.mu * float(np.mean(b * b))
        gw = out.grad_logits.T @ x
        gw += cfg.lam * 2.0 * (w - np.diag(np.diag(w))) / (k * (k - 1))
        gb = out.grad_logits.sum(axis=0) + cfg.mu * 2.0 * b / k
        return value, gw, gb

    current, gw, gb = objective_and_grads(w, b)
    for _ in range(cfg.epochs):
        w_next = w - lr * gw
        b_next = b - lr * gb
        value, gw_next, gb_next = objective_and_grads(w_next, b_next)
        if value > current:
            lr *= 0.5
            continue
        w, b, current, gw, gb = w_next, b_next, value, gw_next, gb_next
    return DirichletModel(w=w, b=b)


def fit_dirichlet(
    holdout_probs: np.ndarray,
    labels: np.ndarray,
    grid: list[OdirConfig] | None = None,
) -> DirichletModel:
    """Fit one model per grid cell and keep the lowest hold-out NLL.

    Ties keep the earliest cell, so the result is deterministic for a fixed
    grid order.
    """
    probs = np.asarray(holdout_probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[0] == 0:
        raise ValueError("hold-out probabilities must be a nonempty matrix")
    labels = np.asarray(labels, dtype=np.int64)
    if grid is None:
        grid = default_odir_grid()
    x = _log_probs(probs)
    best_model, best_nll = None, np.inf
    for cfg in grid:
        model = _descend(x, labels, cfg)
        nll = _mean_nll(x @ model.w.T + model.b, labels)
        if nll < best_nll:
            best_model, best_nll = model, nll
    return best_model


def apply_dirichlet(model: DirichletModel, probs: np.ndarray) -> np.ndarray:
    """softmax(W log(clamp(p)) + b) per row."""
    x = _log_probs(probs)
    if x.shape[1] != model.w.shape[0]:
        raise ValueError("probability rows do not match calibrator size")
    return softmax_rows(x @ model.w.T + model.b)


def calibrator_to_dict(model) -> dict:
    if isinstance(model, TemperatureModel):
        return {"kind": "temperature", "t": model.t}
    if isinstance(model, DirichletModel):
        return {"kind": "dirichlet", "w": model.w.tolist(), "b": model.b.tolist()}
    raise ValueError(f"unknown calibrator type {type(model).__name__}")


def calibrator_from_dict(doc: dict):
    kind = doc.get("kind")
    if kind == "temperature":
        return TemperatureModel(t=float(doc["t"]))
    if kind == "dirichlet":
        return DirichletModel(w=np.asarray(doc["w"], dtype=np.float64),
                              b=np.asarray(doc["b"], dtype=np.float64))
    raise ValueError(f"unknown calibrator kind {kind!r}")


def save_calibrator_json(model, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(calibrator_to_dict(model), fh)
        fh.write("\n")


def load_calibrator_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return calibrator_from_dict(json.load(fh))
