"""Edge-side upload filter: keep the top fraction of a cached window by quality.

Quality mixes how uncertain the current model is about a sample (prediction
entropy) with how recent the sample is within the window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .core_types import Sample, ValidationError
from .student import entropy, entropy_rows

RECENCY = "recency_decay"
LITERAL = "paper_literal"
TIMELINESS_MODES = (RECENCY, LITERAL)


@dataclass(frozen=True)
class FilterConfig:
    upload_fraction: float = 0.7
    alpha: float = 1.0
    beta: float = 1.0
    timeliness_mode: str = RECENCY

    def __post_init__(self) -> None:
        if not 0.0 < self.upload_fraction <= 1.0:
            raise ValidationError(f"upload_fraction must be in (0, 1], got {self.upload_fraction}")
        if self.alpha < 0 or self.beta < 0 or not (self.alpha > 0 or self.beta > 0):
            raise ValidationError("alpha and beta must be non-negative and not both zero")
        if self.timeliness_mode not in TIMELINESS_MODES:
            raise ValidationError(f"unknown timeliness mode {self.timeliness_mode!r}")


@dataclass(frozen=True)
class QualityScore:
    adaptability: float
    timeliness: float
    combined: float


def upload_count(fraction: float, window: int) -> int:
    """ceil(fraction * window), computed on the decimal value of ``fraction``."""
    if window <= 0:
        return 0
    exact = Fraction(fraction).limit_denominator(10**9) * window
    return max(1, min(window, math.ceil(exact)))


def timeliness_score(i, T: int, mode: str = RECENCY):
    """Sigmoid weight of a sample ``i`` steps older than the newest one.

    ``recency_decay`` favours newer samples; ``paper_literal`` keeps the sign
    of the exponent as originally printed, which favours older ones.
    """
    if T <= 0:
        raise ValidationError(f"window size must be positive, got {T}")
    if mode not in TIMELINESS_MODES:
        raise ValidationError(f"unknown timeliness mode {mode!r}")
    x = np.asarray(i, dtype=float) / T
    out = 1.0 / (1.0 + np.exp(x if mode == RECENCY else -x))
    return float(out) if np.ndim(out) == 0 else out


def score_sample(sample: Sample, i: int, cfg: FilterConfig, T: int) -> QualityScore:
    if sample.probs is None:
        raise ValidationError(f"sample {sample.seq} on edge {sample.edge_id} has no probabilities")
    e = entropy(sample.probs)
    t = timeliness_score(i, T, cfg.timeliness_mode)
    return QualityScore(e, t, cfg.alpha * e + cfg.beta * t)


def select_top(probs: np.ndarray, cfg: FilterConfig) -> np.ndarray:
    """Vectorised selection over a window given oldest-first.

    ``probs`` is the T x C matrix of edge predictions in arrival order.
    Returns positions into that order, best first; ties go to the newer sample.
    """
    T = len(probs)
    if T == 0:
        return np.zeros(0, dtype=np.int64)
    age = np.arange(T - 1, -1, -1)
    combined = cfg.alpha * entropy_rows(probs) + cfg.beta * timeliness_score(age, T, cfg.timeliness_mode)
    order = np.lexsort((age, -combined))
    return order[: upload_count(cfg.upload_fraction, T)]


def filter_window(cache: Sequence[Sample], cfg: FilterConfig) -> list[tuple[int, Sample]]:
    """Pick the samples to upload from a cache ordered oldest to newest.

    Each result is ``(i, sample)`` where ``i`` is the age index (0 = newest),
    sorted by descending quality score.
    """
    T = len(cache)
    if T == 0:
        return []
    for s in cache:
        if s.probs is None:
            raise ValidationError(f"sample {s.seq} on edge {s.edge_id} has no probabilities")
    probs = np.stack([np.asarray(s.probs, dtype=float) for s in cache])
    return [(T - 1 - int(pos), cache[pos]) for pos in select_top(probs, cfg)]
