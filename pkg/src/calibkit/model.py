"""A small ReLU MLP and a deterministic SGD/momentum trainer.

Training is bit-reproducible: weight init, the train/validation split, and
the per-epoch shuffles are all driven by sub-seeds folded from one seed, so
identical (dataset, architecture, config) inputs give identical weights.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .losses import Batch, LossOutput, LossSpec, combined_loss
from .numerics import Rng, as_matrix, derive_seed, rng_shuffle


@dataclass
class MlpModel:
    """Fully connected layers with ReLU between them; the last layer is
    affine and produces logits. ``weights[l]`` has shape (in_dim, out_dim)."""

    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "relu"

    def copy(self) -> "MlpModel":
        return MlpModel(
            layer_dims=list(self.layer_dims),
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            activation=self.activation,
        )


@dataclass
class TrainConfig:
    epochs: int = 40
    batch_size: int = 128
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0005
    lr_milestones: list[int] = field(default_factory=list)
    lr_decay: float = 0.1
    seed: int = 0
    loss: LossSpec = field(default_factory=LossSpec)
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr < 0.0:
            raise ValueError("lr must be nonnegative")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.weight_decay < 0.0:
            raise ValueError("weight_decay must be nonnegative")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ValueError("lr_decay must be in (0, 1]")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in [0, 1)")


@dataclass
class TrainResult:
    model: MlpModel
    train_loss: list[float]
    val_accuracy: list[float]
    selected_epoch: int


def init_mlp(layer_dims: list[int], seed: int) -> MlpModel:
    """Seeded init: weights uniform in +-sqrt(6/(fan_in+fan_out)), zero biases."""
    if len(layer_dims) < 2 or any(d < 1 for d in layer_dims):
        raise ValueError("layer_dims needs at least input and output sizes >= 1")
    rng = Rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        u = rng.uniform_array((fan_in, fan_out))
        weights.append((2.0 * u - 1.0) * bound)
        biases.append(np.zeros(fan_out, dtype=np.float64))
    return MlpModel(layer_dims=list(layer_dims), weights=weights, biases=biases)


def _forward_cached(model: MlpModel, features: np.ndarray) -> list[np.ndarray]:
    """Activations per layer, input first, logits last."""
    acts = [features]
    last = len(model.weights) - 1
    for l, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = acts[-1] @ w + b
        acts.append(z if l == last else np.maximum(z, 0.0))
    return acts


def forward(model: MlpModel, features: np.ndarray) -> np.ndarray:
    """Logits for a feature matrix (rows are samples)."""
    x = as_matrix(features, "features")
    if x.shape[1] != model.layer_dims[0]:
        raise ValueError(
            f"features have {x.shape[1]} columns, model expects {model.layer_dims[0]}"
        )
    return _forward_cached(model, x)[-1]


def backward(
    model: MlpModel, features: np.ndarray, grad_logits: np.ndarray
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Exact reverse-mode gradients of sum(logits * grad_logits) w.r.t. the
    parameters. The ReLU subgradient at 0 is 0. Returns (dweights, dbiases).
    """
    x = as_matrix(features, "features")
    g = np.asarray(grad_logits, dtype=np.float64)
    acts = _forward_cached(model, x)
    if g.shape != acts[-1].shape:
        raise ValueError("grad_logits shape does not match forward output")

    dweights = [None] * len(model.weights)
    dbiases = [None] * len(model.biases)
    delta = g
    for l in range(len(model.weights) - 1, -1, -1):
        dweights[l] = acts[l].T @ delta
        dbiases[l] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ model.weights[l].T) * (acts[l] > 0.0)
    return dweights, dbiases


def split_train_val(n: int, val_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Disjoint (train_idx, val_idx) partition from a seeded permutation."""
    perm = rng_shuffle(Rng(derive_seed(seed, "split")), n)
    n_val = int(round(n * val_fraction))
    n_val = min(n_val, n - 1)  # keep at least one training sample
    return perm[n_val:], perm[:n_val]


def learning_rate_at(epoch: int, cfg: TrainConfig) -> float:
    """lr0 * decay^k where k counts milestones at or before ``epoch`` (0-based)."""
    passed = sum(1 for m in cfg.lr_milestones if epoch >= m)
    return cfg.lr * cfg.lr_decay**passed


def _accuracy(model: MlpModel, features: np.ndarray, labels: np.ndarray) -> float:
    logits = forward(model, features)
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def train(dataset, layer_dims: list[int], cfg: TrainConfig) -> TrainResult:
    """SGD with momentum and coupled weight decay on minibatches.

    Per step: v <- momentum*v + grad + weight_decay*w, then w <- w - lr*v.
    The last incomplete minibatch is kept. The returned model is the
    snapshot from the epoch with the best validation accuracy (earliest
    epoch on ties).
    """
    features = as_matrix(dataset.features, "features")
    labels = np.asarray(dataset.labels, dtype=np.int64)
    if features.shape[0] < 1:
        raise ValueError("dataset is empty")
    if layer_dims[0] != features.shape[1]:
        raise ValueError("architecture input size does not match feature dim")
    if layer_dims[-1] != dataset.k:
        raise ValueError("architecture output size does not match class count")

    train_idx, val_idx = split_train_val(features.shape[0], cfg.val_fraction, cfg.seed)
    x_train, y_train = features[train_idx], labels[train_idx]
    x_val, y_val = features[val_idx], labels[val_idx]

    model = init_mlp(layer_dims, derive_seed(cfg.seed, "init"))
    vel_w = [np.zeros_like(w) for w in model.weights]
    vel_b = [np.zeros_like(b) for b in model.biases]
    shuffle_rng = Rng(derive_seed(cfg.seed, "shuffle"))

    n_train = x_train.shape[0]
    train_loss_hist: list[float] = []
    val_acc_hist: list[float] = []
    best_acc = -1.0
    best_epoch = 0
    best_model = model.copy()

    for epoch in range(cfg.epochs):
        lr = learning_rate_at(epoch, cfg)
        order = rng_shuffle(shuffle_rng, n_train)
        loss_weighted = 0.0
        for start in range(0, n_train, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb, yb = x_train[idx], y_train[idx]
            logits = forward(model, xb)
            out: LossOutput = combined_loss(Batch(logits, yb), cfg.loss)
            dws, dbs = backward(model, xb, out.grad_logits)
            for l in range(len(model.weights)):
                gw = dws[l] + cfg.weight_decay * model.weights[l]
                gb = dbs[l] + cfg.weight_decay * model.biases[l]
                vel_w[l] = cfg.momentum * vel_w[l] + gw
                vel_b[l] = cfg.momentum * vel_b[l] + gb
                model.weights[l] = model.weights[l] - lr * vel_w[l]
                model.biases[l] = model.biases[l] - lr * vel_b[l]
            loss_weighted += out.value * xb.shape[0]
        train_loss_hist.append(loss_weighted / n_train)

        if x_val.shape[0] > 0:
            acc = _accuracy(model, x_val, y_val)
        else:
            acc = _accuracy(model, x_train, y_train)
        val_acc_hist.append(acc)
        if acc > best_acc:
            best_acc = acc
            best_epoch = epoch
            best_model = model.copy()

    return TrainResult(
        model=best_model,
        train_loss=train_loss_hist,
        val_accuracy=val_acc_hist,
        selected_epoch=best_epoch,
    )


def model_to_dict(model: MlpModel) -> dict:
    """Flat JSON form: dims, activation, row-major weight arrays, biases."""
    return {
        "layer_dims": [int(d) for d in model.layer_dims],
        "activation": model.activation,
        "weights": [w.reshape(-1).tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
    }


def model_from_dict(doc: dict) -> MlpModel:
    dims = [int(d) for d in doc["layer_dims"]]
    if len(dims) < 2:
        raise ValueError("layer_dims needs at least two entries")
    if doc.get("activation", "relu") != "relu":
        raise ValueError(f"unsupported activation {doc.get('activation')!r}")
    weights, biases = [], []
    for l, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        flat = np.asarray(doc["weights"][l], dtype=np.float64)
        if flat.size != fan_in * fan_out:
            raise ValueError(f"layer {l} weight array has wrong length")
        b = np.asarray(doc["biases"][l], dtype=np.float64)
        if b.shape != (fan_out,):
            raise ValueError(f"layer {l} bias vector has wrong length")
        if not (np.all(np.isfinite(flat)) and np.all(np.isfinite(b))):
            raise ValueError(f"layer {l} parameters contain non-finite values")
        weights.append(flat.reshape(fan_in, fan_out))
        biases.append(b)
    return MlpModel(layer_dims=dims, weights=weights, biases=biases)


def save_model_json(model: MlpModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh)
        fh.write("\n")


def load_model_json(path) -> MlpModel:
    with open(path, "r", encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
