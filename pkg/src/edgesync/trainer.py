"""Cloud retraining sessions: patience-based early stopping under a time budget."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core_types import HyperParams, ValidationError
from .student import (
    DEFAULT_BATCH_SIZE,
    LabeledBatch,
    StudentModel,
    TrainingDiverged,
    evaluate,
    train_epoch,
)

log = logging.getLogger(__name__)

MIN_WINDOW = 5

PATIENCE = "patience"
TIME_BUDGET = "time_budget"
EPOCH_CAP = "epoch_cap"
DIVERGED = "diverged"
SKIPPED = "skipped"
FIXED = "fixed_epochs"


@dataclass(frozen=True)
class TrainBudget:
    patience: int = 5
    max_time: float = 15.0
    max_epochs: int = 50

    def __post_init__(self) -> None:
        if self.patience < 1:
            raise ValidationError("patience must be >= 1")
        if not self.max_time > 0:
            raise ValidationError("max_time must be positive")
        if self.max_epochs < 1:
            raise ValidationError("max_epochs must be >= 1")


@dataclass(frozen=True)
class EpochCost:
    """Simulated seconds for one epoch over ``n`` training samples."""

    base_s: float = 0.1
    per_sample_s: float = 0.003

    def __call__(self, n: int) -> float:
        return self.base_s + self.per_sample_s * n


@dataclass
class TrainOutcome:
    final_model: StudentModel
    epochs_run: int
    best_epoch: int
    best_eval: float
    stop_reason: str
    train_duration: float
    best_loss: float = float("nan")
    train_size: int = 0
    val_size: int = 0


@dataclass
class SessionResult:
    best_state: object
    epochs_run: int
    best_epoch: int
    best_eval: float
    best_loss: float
    stop_reason: str
    duration: float


def run_session(
    step: Callable[[int], object],
    score: Callable[[object], tuple[float, float]],
    budget: TrainBudget,
    epoch_seconds: float,
) -> SessionResult:
    """Drive an early-stopped loop over abstract epochs.

    ``step(epoch)`` trains one more epoch (1-based) and returns the new
    state; ``score(state)`` returns ``(evaluation, loss)`` where a higher
    evaluation wins and a lower loss breaks ties. The loop stops once
    ``patience`` epochs pass without improvement, once the simulated time
    exceeds ``max_time`` (checked between epochs), or at ``max_epochs``.
    """
    best_state, best_key = None, None
    best_epoch, epoch, elapsed = 0, 0, 0.0
    best_eval, best_loss = float("-inf"), float("inf")
    reason = EPOCH_CAP
    while True:
        epoch += 1
        state = step(epoch)
        elapsed += epoch_seconds
        ev, loss = score(state)
        key = (ev, -loss)
        if best_key is None or key > best_key:
            best_key, best_state, best_epoch = key, state, epoch
            best_eval, best_loss = ev, loss
        if epoch - best_epoch >= budget.patience:
            reason = PATIENCE
            break
        if elapsed > budget.max_time:
            reason = TIME_BUDGET
            break
        if epoch >= budget.max_epochs:
            reason = EPOCH_CAP
            break
    return SessionResult(best_state, epoch, best_epoch, best_eval, best_loss, reason, elapsed)


def split_window(window: LabeledBatch, val_fraction: float = 0.2) -> tuple[LabeledBatch, LabeledBatch]:
    """Time-ordered split: oldest part trains, newest part validates."""
    n = len(window)
    n_val = min(n - 1, max(1, int(round(n * val_fraction))))
    return window.subset(slice(0, n - n_val)), window.subset(slice(n - n_val, n))


def _skip(model: StudentModel, reason: str) -> TrainOutcome:
    return TrainOutcome(model, 0, 0, float("nan"), reason, 0.0)


def retrain(
    model: StudentModel,
    window: LabeledBatch,
    h: HyperParams,
    budget: TrainBudget,
    epoch_cost: Callable[[int], float] = EpochCost(),
    rng: Optional[np.random.Generator] = None,
    val_fraction: float = 0.2,
    batch_size: int = DEFAULT_BATCH_SIZE,
) -> TrainOutcome:
    """Fine-tune ``model`` on ``window`` and return the best-epoch snapshot.

    Windows shorter than ``MIN_WINDOW`` are skipped. A diverged session
    returns the untouched input model.
    """
    if len(window) < MIN_WINDOW:
        return _skip(model, SKIPPED)
    rng = rng if rng is not None else np.random.default_rng(0)
    train, val = split_window(window, val_fraction)
    current = model.copy()
    current.reset_momentum()

    def step(epoch: int) -> StudentModel:
        nonlocal current
        current, _ = train_epoch(current, train, h, rng, batch_size, epoch)
        return current

    try:
        res = run_session(step, lambda m: evaluate(m, val), budget, epoch_cost(len(train)))
    except TrainingDiverged as exc:
        log.warning("retraining diverged at epoch %d; keeping previous model", exc.epoch)
        out = _skip(model, DIVERGED)
        out.epochs_run = exc.epoch
        out.train_duration = exc.epoch * epoch_cost(len(train))
        return out
    best = res.best_state.copy()
    best.reset_momentum()
    return TrainOutcome(
        best, res.epochs_run, res.best_epoch, res.best_eval, res.stop_reason,
        res.duration, res.best_loss, len(train), len(val),
    )


def train_fixed(
    model: StudentModel,
    window: LabeledBatch,
    h: HyperParams,
    epochs: int,
    epoch_cost: Callable[[int], float] = EpochCost(),
    rng: Optional[np.random.Generator] = None,
    time_limit: Optional[float] = None,
    batch_size: int = DEFAULT_BATCH_SIZE,
) -> TrainOutcome:
    """Train for a fixed epoch count on the whole window, keeping the last epoch.

    ``time_limit`` truncates the run so the simulated time never exceeds it,
    though at least one epoch always runs.
    """
    if len(window) < MIN_WINDOW:
        return _skip(model, SKIPPED)
    rng = rng if rng is not None else np.random.default_rng(0)
    cost = epoch_cost(len(window))
    if time_limit is not None:
        epochs = max(1, min(epochs, int(np.floor(time_limit / cost + 1e-9))))
    current = model.copy()
    current.reset_momentum()
    try:
        for epoch in range(1, epochs + 1):
            current, _ = train_epoch(current, window, h, rng, batch_size, epoch)
    except TrainingDiverged as exc:
        log.warning("fixed-epoch training diverged at epoch %d; keeping previous model", exc.epoch)
        out = _skip(model, DIVERGED)
        out.epochs_run = exc.epoch
        out.train_duration = exc.epoch * cost
        return out
    acc, loss = evaluate(current, window)
    current.reset_momentum()
    return TrainOutcome(current, epochs, epochs, acc, FIXED, epochs * cost, loss, len(window), 0)
