import math
from decimal import ROUND_CEILING, Decimal

import numpy as np
import pytest

from edgesync.core_types import Sample, ValidationError
from edgesync.sample_filter import (
    LITERAL,
    RECENCY,
    FilterConfig,
    filter_window,
    score_sample,
    timeliness_score,
    upload_count,
)


def oracle_count(k, T):
    return int((Decimal(str(k)) * T).to_integral_value(ROUND_CEILING))


def oracle_select(probs, k, alpha=1.0, beta=1.0):
    """Score every sample with plain floats, sort, slice. Age 0 is the newest sample."""
    T = len(probs)
    scored = []
    for pos, p in enumerate(probs):
        age = T - 1 - pos
        e = -sum(v * math.log(v) for v in p if v > 0)
        t = 1.0 / (1.0 + math.exp(age / T))
        scored.append((-(alpha * e + beta * t), age, pos))
    scored.sort()
    return [(age, pos) for _, age, pos in scored[: oracle_count(k, T)]]


def make_cache(rng, T, c=6):
    logits = rng.normal(scale=2.0, size=(T, c))
    p = np.exp(logits - logits.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    return [Sample(0, j, float(j), np.zeros(2), 0, int(np.argmax(p[j])), p[j]) for j in range(T)]


def test_timeliness_midpoint_both_modes():
    assert timeliness_score(0, 10, RECENCY) == 0.5
    assert timeliness_score(0, 10, LITERAL) == 0.5


def test_timeliness_direction():
    assert timeliness_score(5, 10, RECENCY) < 0.5 < timeliness_score(5, 10, LITERAL)


@pytest.mark.parametrize("k,T", [(0.2, 10), (0.7, 10), (0.7, 3), (1.0, 7), (0.3, 1), (0.6, 5)])
def test_upload_count_is_exact_ceiling(k, T):
    assert upload_count(k, T) == oracle_count(k, T)


def test_upload_count_empty_window():
    assert upload_count(0.5, 0) == 0


def test_filter_matches_oracle(rng):
    for _ in range(50):
        T = int(rng.integers(1, 120))
        k = float(rng.choice([0.2, 0.4, 0.6, 0.7, 0.8, 1.0]))
        cache = make_cache(rng, T)
        got = [(age, s.seq) for age, s in filter_window(cache, FilterConfig(k))]
        assert got == oracle_select([s.probs for s in cache], k)


def test_ties_prefer_newer_samples():
    p = np.full(3, 1 / 3)
    cache = [Sample(0, j, float(j), np.zeros(1), 0, 0, p) for j in range(4)]
    cfg = FilterConfig(0.5, alpha=1.0, beta=0.0)
    assert [s.seq for _, s in filter_window(cache, cfg)] == [3, 2]


def test_quality_scales_linearly():
    cache = make_cache(np.random.default_rng(0), 20)
    for i, s in enumerate(cache):
        half = score_sample(s, i, FilterConfig(alpha=0.5, beta=0.5), 20).combined
        full = score_sample(s, i, FilterConfig(alpha=1.0, beta=1.0), 20).combined
        assert half == pytest.approx(full / 2, rel=1e-15)


def test_missing_probabilities_rejected():
    with pytest.raises(ValidationError):
        filter_window([Sample(0, 0, 0.0, np.zeros(1), 0)], FilterConfig())


@pytest.mark.parametrize("kwargs", [dict(upload_fraction=0.0), dict(upload_fraction=1.5),
                                    dict(alpha=-1.0), dict(timeliness_mode="other")])
def test_bad_filter_config(kwargs):
    with pytest.raises(ValidationError):
        FilterConfig(**kwargs)
