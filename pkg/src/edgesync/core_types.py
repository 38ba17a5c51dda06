"""Shared value types and the seed-derivation scheme used everywhere else."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Optional

import numpy as np

DEFAULT_NUM_CLASSES = 6
DEFAULT_FEATURE_DIM = 32

_SEED_MASK = (1 << 64) - 1


class ValidationError(ValueError):
    """Raised when an input violates a documented precondition."""


def split_seed(parent: int, stream_tag: str) -> int:
    """Derive a child seed from ``parent`` for the named random stream.

    The child is the first 8 bytes of BLAKE2b over the little-endian parent
    and the UTF-8 tag, so it is stable across platforms and Python versions.
    """
    if not stream_tag:
        raise ValidationError("stream_tag must be non-empty")
    parent &= _SEED_MASK
    digest = hashlib.blake2b(
        parent.to_bytes(8, "little") + stream_tag.encode("utf-8"), digest_size=8
    ).digest()
    return int.from_bytes(digest, "little")


def make_rng(seed: int, *tags: str) -> np.random.Generator:
    """A numpy Generator for ``seed`` refined by each tag in turn."""
    for tag in tags:
        seed = split_seed(seed, tag)
    return np.random.default_rng(seed & _SEED_MASK)


def stable_argmax(values: np.ndarray) -> int:
    # np.argmax already returns the first maximal index; kept as a named helper
    # because the lowest-index tie rule is part of the prediction contract.
    return int(np.argmax(values))


@dataclass(frozen=True)
class HyperParams:
    learning_rate: float
    momentum: float
    weight_decay: float

    def __post_init__(self) -> None:
        if not self.learning_rate > 0:
            raise ValidationError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValidationError(f"momentum must be in [0, 1), got {self.momentum}")
        if not self.weight_decay >= 0:
            raise ValidationError(f"weight_decay must be non-negative, got {self.weight_decay}")


@dataclass(frozen=True)
class Sample:
    """One sampled frame as seen by an edge."""

    edge_id: int
    seq: int
    arrival_time: float
    features: np.ndarray
    true_label: int
    predicted_label: Optional[int] = None
    probs: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if self.seq < 0:
            raise ValidationError("seq must be non-negative")
        if self.probs is not None:
            p = np.asarray(self.probs, dtype=float)
            if np.any(p < 0) or np.any(p > 1) or abs(p.sum() - 1.0) > 1e-9:
                raise ValidationError("probs must be a probability vector")
            if self.predicted_label is not None and self.predicted_label != stable_argmax(p):
                raise ValidationError("predicted_label must equal argmax(probs)")
