"""Edge-side student: a softmax head over frozen backbone features.

Only the last layer is trainable, so the whole model is a C x D weight
matrix, a bias vector and the SGD momentum buffers for both.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core_types import HyperParams, ValidationError

DEFAULT_BATCH_SIZE = 32


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, message: str = "non-finite loss or gradient"):
        super().__init__(f"training diverged at epoch {epoch}: {message}")
        self.epoch = epoch


@dataclass
class StudentModel:
    weights: np.ndarray
    biases: np.ndarray
    weight_velocity: np.ndarray = field(default=None)  # type: ignore[assignment]
    bias_velocity: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        self.weights = np.array(self.weights, dtype=float)
        self.biases = np.array(self.biases, dtype=float)
        if self.weights.ndim != 2 or self.biases.shape != (self.weights.shape[0],):
            raise ValidationError(
                f"bad parameter shapes {self.weights.shape} / {self.biases.shape}"
            )
        if self.weight_velocity is None:
            self.weight_velocity = np.zeros_like(self.weights)
        if self.bias_velocity is None:
            self.bias_velocity = np.zeros_like(self.biases)

    @classmethod
    def zeros(cls, num_classes: int, feature_dim: int) -> "StudentModel":
        return cls(np.zeros((num_classes, feature_dim)), np.zeros(num_classes))

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def num_params(self) -> int:
        return self.weights.size + self.biases.size

    def copy(self) -> "StudentModel":
        return StudentModel(
            self.weights.copy(),
            self.biases.copy(),
            self.weight_velocity.copy(),
            self.bias_velocity.copy(),
        )

    def reset_momentum(self) -> None:
        self.weight_velocity[...] = 0.0
        self.bias_velocity[...] = 0.0


@dataclass(frozen=True)
class LabeledBatch:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        x = np.atleast_2d(np.asarray(self.features, dtype=float))
        y = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if len(y) < 1 or x.shape[0] != len(y):
            raise ValidationError(f"batch needs N >= 1 rows with one label each, got {x.shape} / {y.shape}")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "LabeledBatch":
        return LabeledBatch(self.features[idx], self.labels[idx])


def _check_dims(model: StudentModel, features: np.ndarray) -> None:
    if features.shape[-1] != model.feature_dim:
        raise ValidationError(
            f"feature dimension {features.shape[-1]} does not match model dimension {model.feature_dim}"
        )


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=-1, keepdims=True)
    return z


def predict_proba(model: StudentModel, features: np.ndarray) -> np.ndarray:
    """Class probabilities for each row of an N x D feature matrix."""
    x = np.atleast_2d(np.asarray(features, dtype=float))
    _check_dims(model, x)
    return _softmax_rows(x @ model.weights.T + model.biases)


def forward(model: StudentModel, features: np.ndarray) -> np.ndarray:
    """Probability vector for a single feature vector."""
    x = np.asarray(features, dtype=float)
    if x.ndim != 1:
        raise ValidationError("forward expects a single feature vector")
    return predict_proba(model, x[None, :])[0]


def entropy(probs: np.ndarray, tol: float = 1e-6) -> float:
    """Shannon entropy in nats, with 0 * ln 0 taken as 0."""
    p = np.asarray(probs, dtype=float)
    if p.ndim != 1 or np.any(p < 0) or abs(p.sum() - 1.0) > tol:
        raise ValidationError("entropy needs a valid probability vector")
    nz = p[p > 0]
    return max(0.0, float(-(nz * np.log(nz)).sum()))


def entropy_rows(probs: np.ndarray) -> np.ndarray:
    """Row-wise entropy of an N x C probability matrix (no validation)."""
    p = np.asarray(probs, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return -terms.sum(axis=1)


def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    picked = probs[np.arange(len(labels)), labels]
    return float(-np.mean(np.log(np.maximum(picked, 1e-300))))


def loss_and_gradients(
    model: StudentModel, batch: LabeledBatch, weight_decay: float = 0.0
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean cross-entropy and the gradient of ``CE + weight_decay/2 * |W|^2``.

    The returned loss is the plain cross-entropy; the decay term only enters
    the weight gradient, matching the additive L2 form used by SGD.
    """
    _check_dims(model, batch.features)
    probs = predict_proba(model, batch.features)
    n = len(batch)
    delta = probs.copy()
    delta[np.arange(n), batch.labels] -= 1.0
    delta /= n
    grad_w = delta.T @ batch.features + weight_decay * model.weights
    grad_b = delta.sum(axis=0)
    return cross_entropy(probs, batch.labels), grad_w, grad_b


def train_epoch(
    model: StudentModel,
    batch: LabeledBatch,
    h: HyperParams,
    rng: Optional[np.random.Generator] = None,
    batch_size: int = DEFAULT_BATCH_SIZE,
    epoch: int = 0,
) -> tuple[StudentModel, float]:
    """One shuffled pass of momentum SGD; returns the new model and mean loss.

    The loss is averaged over mini-batches, each measured before its update.
    With ``rng=None`` the data order is kept as given.
    """
    if len(batch) == 0:
        raise ValidationError("batch must be non-empty")
    out = model.copy()
    order = np.arange(len(batch)) if rng is None else rng.permutation(len(batch))
    losses = []
    for start in range(0, len(order), batch_size):
        mb = batch.subset(order[start : start + batch_size])
        loss, gw, gb = loss_and_gradients(out, mb, h.weight_decay)
        if not (np.isfinite(loss) and np.all(np.isfinite(gw)) and np.all(np.isfinite(gb))):
            raise TrainingDiverged(epoch)
        out.weight_velocity *= h.momentum
        out.weight_velocity += gw
        out.bias_velocity *= h.momentum
        out.bias_velocity += gb
        out.weights -= h.learning_rate * out.weight_velocity
        out.biases -= h.learning_rate * out.bias_velocity
        losses.append(loss)
    if not (np.all(np.isfinite(out.weights)) and np.all(np.isfinite(out.biases))):
        raise TrainingDiverged(epoch, "parameters became non-finite")
    return out, float(np.mean(losses))


def evaluate(model: StudentModel, batch: LabeledBatch) -> tuple[float, float]:
    """(accuracy, mean cross-entropy) of ``model`` on ``batch``."""
    probs = predict_proba(model, batch.features)
    acc = float(np.mean(np.argmax(probs, axis=1) == batch.labels))
    return acc, cross_entropy(probs, batch.labels)


# Checkpoint format: first line "C D", then C lines of D weights, then one
# line of C biases. Values are written with repr() so reloads are exact.

def save_checkpoint(model: StudentModel, path: str) -> None:
    lines = [f"{model.num_classes} {model.feature_dim}"]
    lines += [" ".join(repr(float(v)) for v in row) for row in model.weights]
    lines.append(" ".join(repr(float(v)) for v in model.biases))
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)


def load_checkpoint(path: str) -> StudentModel:
    with open(path) as fh:
        rows = [ln.split() for ln in fh.read().splitlines() if ln.strip()]
    try:
        c, d = int(rows[0][0]), int(rows[0][1])
        weights = np.array([[float(v) for v in r] for r in rows[1 : 1 + c]])
        biases = np.array([float(v) for v in rows[1 + c]])
    except (IndexError, ValueError) as exc:
        raise ValidationError(f"malformed checkpoint {path}: {exc}") from exc
    if weights.shape != (c, d) or biases.shape != (c,) or len(rows) != c + 2:
        raise ValidationError(f"checkpoint {path} does not match its header {c}x{d}")
    return StudentModel(weights, biases)
