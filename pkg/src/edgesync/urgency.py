"""Cloud-side accuracy banks and the urgency degree used to pick the next edge."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .core_types import ValidationError


class BankNotReady(LookupError):
    """The bank holds fewer than ``capacity`` bits, so no degree is defined."""


@dataclass
class AccuracyBank:
    capacity: int = 90
    segments: int = 10
    bits: deque = field(default_factory=deque)
    indices: deque = field(default_factory=deque)

    def __post_init__(self) -> None:
        if self.capacity <= 0 or self.segments <= 0:
            raise ValidationError("bank capacity and segment count must be positive")
        if self.capacity % self.segments:
            raise ValidationError(
                f"bank capacity {self.capacity} is not divisible by segment count {self.segments}"
            )
        self.bits = deque(self.bits, maxlen=self.capacity)
        self.indices = deque(self.indices, maxlen=self.capacity)

    @property
    def segment_length(self) -> int:
        return self.capacity // self.segments

    @property
    def full(self) -> bool:
        return len(self.bits) == self.capacity

    def __len__(self) -> int:
        return len(self.bits)


@dataclass(frozen=True)
class UrgencyReport:
    edge_id: int
    degree: float
    segment_accuracies: tuple


def record_results(
    bank: AccuracyBank,
    labeled: Iterable[tuple[int, int]],
    start_index: int = 0,
) -> AccuracyBank:
    """Append one correctness bit per (edge prediction, teacher label) pair.

    The bank is updated in place (and returned); the oldest bits fall off
    once ``capacity`` is exceeded.
    """
    for offset, (pred, label) in enumerate(labeled):
        bank.bits.append(1 if int(pred) == int(label) else 0)
        bank.indices.append(start_index + offset)
    return bank


def segment_accuracies(bank: AccuracyBank) -> np.ndarray:
    """Mean accuracy of each contiguous segment, oldest segment first."""
    if not bank.full:
        raise BankNotReady(f"bank has {len(bank)} of {bank.capacity} bits")
    bits = np.fromiter(bank.bits, dtype=float, count=bank.capacity)
    return bits.reshape(bank.segments, bank.segment_length).mean(axis=1)


def decay_weights(segments: int, decay: Optional[float] = None, scale: Optional[float] = None) -> np.ndarray:
    """Logistic weight per segment, growing toward the newest segment."""
    decay = float(segments) if decay is None else decay
    scale = float(segments) if scale is None else scale
    i = np.arange(segments, dtype=float)
    return scale / (1.0 + np.exp(-i / decay))


def urgency_degree(bank: AccuracyBank, decay: Optional[float] = None, scale: Optional[float] = None) -> float:
    """Weighted accuracy loss of each segment relative to the oldest one.

    Positive values mean the recent segments are less accurate than the
    oldest, i.e. the edge model is degrading.
    """
    wa = segment_accuracies(bank)
    return float(np.sum((wa[0] - wa) * decay_weights(bank.segments, decay, scale)))


def report(bank: AccuracyBank, edge_id: int, decay: Optional[float] = None) -> Optional[UrgencyReport]:
    if not bank.full:
        return None
    wa = segment_accuracies(bank)
    return UrgencyReport(edge_id, urgency_degree(bank, decay), tuple(float(v) for v in wa))


def _recency_key(edge_id: int, last_trained: Mapping[int, int]) -> tuple[int, int]:
    return (last_trained.get(edge_id, -1), edge_id)


def select_edge(
    reports: Sequence[UrgencyReport],
    last_trained: Mapping[int, int],
    all_edges: Sequence[int] = (),
) -> int:
    """Edge with the largest degree; ties go to the least recently trained.

    With no ready report the least recently trained edge of ``all_edges`` is
    returned, so every edge gets its first update during cold start.
    """
    ready = [r for r in reports if r is not None]
    if not ready:
        candidates = list(all_edges)
        if not candidates:
            raise ValidationError("select_edge needs a ready report or a list of edges")
        return min(candidates, key=lambda e: _recency_key(e, last_trained))
    best = max(r.degree for r in ready)
    tied = [r.edge_id for r in ready if r.degree == best]
    return min(tied, key=lambda e: _recency_key(e, last_trained))
