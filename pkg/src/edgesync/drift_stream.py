"""Synthetic feature streams with scripted drift, plus the stream file format.

Features stand in for frozen-backbone embeddings: each class is an isotropic
Gaussian whose mean, prior and a global offset (lighting, weather) change
from phase to phase, either abruptly or by a linear blend.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core_types import DEFAULT_FEATURE_DIM, DEFAULT_NUM_CLASSES, ValidationError, make_rng, split_seed

DEFAULT_RATE = 2.0
DEFAULT_DURATION = 1200.0
FORMAT_TAG = "EDGESYNC-STREAM"
FORMAT_VERSION = "v1"

ABRUPT = "abrupt"
BLEND = "blend"


class StreamFormatError(ValidationError):
    pass


@dataclass
class Phase:
    duration: float
    means: np.ndarray
    noise_scale: float = 1.0
    priors: Optional[np.ndarray] = None
    shift: Optional[np.ndarray] = None
    transition: str = ABRUPT
    blend_s: float = 0.0

    def __post_init__(self) -> None:
        self.means = np.asarray(self.means, dtype=float)
        c, d = self.means.shape
        self.priors = np.full(c, 1.0 / c) if self.priors is None else np.asarray(self.priors, dtype=float)
        self.shift = np.zeros(d) if self.shift is None else np.asarray(self.shift, dtype=float)
        if not self.duration > 0:
            raise ValidationError("phase duration must be positive")
        if self.priors.shape != (c,) or np.any(self.priors < 0) or abs(self.priors.sum() - 1) > 1e-9:
            raise ValidationError("class priors must be a probability vector")
        if self.transition not in (ABRUPT, BLEND):
            raise ValidationError(f"unknown transition {self.transition!r}")
        if self.noise_scale < 0 or self.blend_s < 0:
            raise ValidationError("noise scale and blend length must be non-negative")


@dataclass
class DriftSchedule:
    name: str
    phases: list
    description: str = ""

    def __post_init__(self) -> None:
        if not self.phases:
            raise ValidationError("a schedule needs at least one phase")
        shapes = {p.means.shape for p in self.phases}
        if len(shapes) != 1:
            raise ValidationError("all phases must share the same class/feature shape")

    @property
    def duration(self) -> float:
        return float(sum(p.duration for p in self.phases))

    @property
    def num_classes(self) -> int:
        return self.phases[0].means.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.phases[0].means.shape[1]

    def phase_starts(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum([p.duration for p in self.phases])[:-1]])

    def state_at(self, t: float) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
        """(means, priors, shift, noise scale) in effect at time ``t``."""
        starts = self.phase_starts()
        k = int(np.searchsorted(starts, t, side="right") - 1)
        k = max(0, min(k, len(self.phases) - 1))
        cur = self.phases[k]
        w = 1.0
        if k > 0 and cur.transition == BLEND and cur.blend_s > 0:
            w = min(1.0, (t - starts[k]) / cur.blend_s)
        if w >= 1.0:
            return cur.means, cur.priors, cur.shift, cur.noise_scale
        prev = self.phases[k - 1]
        mix = lambda a, b: (1 - w) * a + w * b  # noqa: E731
        return (mix(prev.means, cur.means), mix(prev.priors, cur.priors),
                mix(prev.shift, cur.shift), mix(prev.noise_scale, cur.noise_scale))


@dataclass
class FeatureStream:
    times: np.ndarray
    labels: np.ndarray
    features: np.ndarray
    rate: float = DEFAULT_RATE
    num_classes: int = DEFAULT_NUM_CLASSES
    name: str = ""
    description: str = ""

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=float)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.features = np.atleast_2d(np.asarray(self.features, dtype=float))
        n = len(self.times)
        if self.labels.shape != (n,) or self.features.shape[0] != n:
            raise ValidationError("times, labels and features must have the same length")
        if n and np.any(np.diff(self.times) <= 0):
            raise ValidationError("arrival times must be strictly increasing")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValidationError("labels out of range")

    def __len__(self) -> int:
        return len(self.times)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def duration(self) -> float:
        return len(self) / self.rate

    def slice(self, start: int, stop: int, rebase: bool = True) -> "FeatureStream":
        t = self.times[start:stop]
        if rebase and len(t):
            t = t - self.times[start] + 1.0 / self.rate
        return FeatureStream(t, self.labels[start:stop], self.features[start:stop],
                             self.rate, self.num_classes, self.name, self.description)

    def equals(self, other: "FeatureStream") -> bool:
        return (
            self.rate == other.rate and self.num_classes == other.num_classes
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.features, other.features)
        )


def generate(schedule: DriftSchedule, seed: int, rate: float = DEFAULT_RATE) -> FeatureStream:
    """Draw a stream from ``schedule``: sample ``j`` arrives at ``(j + 1) / rate``."""
    rng = make_rng(seed, "generate", schedule.name or "stream")
    n = int(math.floor(schedule.duration * rate + 1e-9))
    c, d = schedule.num_classes, schedule.feature_dim
    times = (np.arange(n) + 1.0) / rate
    labels = np.empty(n, dtype=np.int64)
    feats = np.empty((n, d))
    u = rng.random(n)
    noise = rng.standard_normal((n, d))
    for j, t in enumerate(times):
        means, priors, shift, scale = schedule.state_at(t - 1e-9)
        cls = int(np.searchsorted(np.cumsum(priors), u[j] * priors.sum(), side="right"))
        cls = min(cls, c - 1)
        labels[j] = cls
        feats[j] = means[cls] + shift + scale * noise[j]
    return FeatureStream(times, labels, feats, rate, c, schedule.name, describe(schedule))


def describe(schedule: DriftSchedule) -> str:
    parts = [f"{p.transition}:{p.duration:g}s" for p in schedule.phases]
    return f"{schedule.name} [{' '.join(parts)}]"


def bayes_predict(means: np.ndarray, priors: np.ndarray, shift: np.ndarray, scale: float, x: np.ndarray) -> np.ndarray:
    """Bayes-optimal labels for isotropic Gaussian classes."""
    if scale <= 0:
        d2 = ((x[:, None, :] - (means + shift)[None]) ** 2).sum(-1)
        return np.argmin(d2, axis=1)
    centred = means + shift
    logits = (x @ centred.T - 0.5 * (centred**2).sum(1)) / scale**2 + np.log(np.maximum(priors, 1e-300))
    return np.argmax(logits, axis=1)


def bayes_accuracy(phase: Phase, n: int = 20000, seed: int = 0) -> float:
    """Monte-Carlo accuracy of the Bayes-optimal rule for one phase."""
    rng = make_rng(seed, "bayes")
    c = len(phase.priors)
    y = rng.choice(c, size=n, p=phase.priors)
    x = phase.means[y] + phase.shift + phase.noise_scale * rng.standard_normal((n, phase.means.shape[1]))
    return float(np.mean(bayes_predict(phase.means, phase.priors, phase.shift, phase.noise_scale, x) == y))


# File format ------------------------------------------------------------------

def save_stream(stream: FeatureStream, path: str) -> None:
    """Write ``stream`` atomically in the v1 text format."""
    header = (f"{FORMAT_TAG} {FORMAT_VERSION} C={stream.num_classes} D={stream.feature_dim} "
              f"rate={stream.rate!r} n={len(stream)}")
    rows = [header]
    for t, y, f in zip(stream.times, stream.labels, stream.features):
        rows.append(",".join([repr(float(t)), str(int(y))] + [repr(float(v)) for v in f]))
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write("\n".join(rows) + "\n")
    os.replace(tmp, path)


def _parse_header(line: str) -> dict:
    parts = line.split()
    if len(parts) != 6 or parts[0] != FORMAT_TAG:
        raise StreamFormatError(f"line 1: malformed header {line!r}")
    if parts[1] != FORMAT_VERSION:
        raise StreamFormatError(f"line 1: unsupported version {parts[1]!r}")
    fields = {}
    for token in parts[2:]:
        key, sep, val = token.partition("=")
        if not sep:
            raise StreamFormatError(f"line 1: malformed header field {token!r}")
        fields[key] = val
    try:
        return {"C": int(fields["C"]), "D": int(fields["D"]), "rate": float(fields["rate"]), "n": int(fields["n"])}
    except (KeyError, ValueError) as exc:
        raise StreamFormatError(f"line 1: bad header field {exc}") from exc


def load_feature_file(path: str, name: str = "") -> FeatureStream:
    """Parse a v1 stream file; any defect raises with its line number."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise StreamFormatError(f"{path}: empty file")
    hdr = _parse_header(lines[0])
    c, d, n = hdr["C"], hdr["D"], hdr["n"]
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != n:
        raise StreamFormatError(f"{path}: header declares {n} records, found {len(body)} (truncated?)")
    times = np.empty(n)
    labels = np.empty(n, dtype=np.int64)
    feats = np.empty((n, d))
    prev = -math.inf
    for j, line in enumerate(body):
        lineno = j + 2
        cols = line.split(",")
        if len(cols) != d + 2:
            raise StreamFormatError(f"{path}:{lineno}: expected {d + 2} fields, found {len(cols)}")
        try:
            t, y = float(cols[0]), int(cols[1])
            f = [float(v) for v in cols[2:]]
        except ValueError as exc:
            raise StreamFormatError(f"{path}:{lineno}: {exc}") from exc
        if not t > prev:
            raise StreamFormatError(f"{path}:{lineno}: timestamp {t} is not after {prev}")
        if not 0 <= y < c:
            raise StreamFormatError(f"{path}:{lineno}: label {y} outside [0, {c})")
        times[j], labels[j], feats[j] = t, y, f
        prev = t
    return FeatureStream(times, labels, feats, hdr["rate"], c, name or os.path.basename(path))


# Benchmark catalog ------------------------------------------------------------

CATALOG = ("slow_drift", "fast_drift", "abrupt_shift", "class_imbalance_shift", "stationary")

# Geometry constants: class means sit on a sphere of radius MEAN_RADIUS around
# the origin in unit-noise units; a scene perturbs every class mean by about
# SCENE_OFFSET and the whole cloud by SCENE_SHIFT.
MEAN_RADIUS = 2.2
SCENE_OFFSET = 2.5
SCENE_SHIFT = 2.5
DRIFT_STEP = 2.5


@dataclass(frozen=True)
class Geometry:
    """Scene-independent class layout shared by pretraining and every stream."""

    means: np.ndarray

    @classmethod
    def create(cls, seed: int, num_classes: int = DEFAULT_NUM_CLASSES,
               feature_dim: int = DEFAULT_FEATURE_DIM) -> "Geometry":
        rng = make_rng(seed, "geometry")
        dirs = rng.standard_normal((num_classes, feature_dim))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        return cls(MEAN_RADIUS * dirs)

    @property
    def num_classes(self) -> int:
        return self.means.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.means.shape[1]


def _random_offsets(rng: np.random.Generator, shape, norm_each: float) -> np.ndarray:
    v = rng.standard_normal(shape)
    return norm_each * v / np.linalg.norm(v, axis=-1, keepdims=True)


def _scene(geo: Geometry, rng: np.random.Generator, offset: Optional[float] = None, shift: Optional[float] = None):
    offset = SCENE_OFFSET if offset is None else offset
    shift = SCENE_SHIFT if shift is None else shift
    means = geo.means + _random_offsets(rng, geo.means.shape, offset)
    return means, _random_offsets(rng, (geo.feature_dim,), shift)


def _drifted(means, shift, rng, step: Optional[float] = None, shift_step: Optional[float] = None):
    step = DRIFT_STEP if step is None else step
    shift_step = SCENE_SHIFT if shift_step is None else shift_step
    return means + _random_offsets(rng, means.shape, step), shift + _random_offsets(rng, shift.shape, shift_step)


def catalog_schedule(name: str, geo: Geometry, seed: int, duration: float = DEFAULT_DURATION) -> DriftSchedule:
    """Build one named schedule of the benchmark catalog."""
    rng = make_rng(seed, "catalog", name)
    c = geo.num_classes
    means, shift = _scene(geo, rng)
    if name == "stationary":
        phases = [Phase(duration, means, shift=shift)]
    elif name == "slow_drift":
        third = duration / 3
        m2, s2 = _drifted(means, shift, rng)
        m3, s3 = _drifted(m2, s2, rng)
        phases = [Phase(third, means, shift=shift),
                  Phase(third, m2, shift=s2, transition=BLEND, blend_s=third),
                  Phase(third, m3, shift=s3, transition=BLEND, blend_s=third)]
    elif name == "fast_drift":
        count = 6
        phases, m, s = [], means, shift
        for k in range(count):
            if k:
                m, s = _drifted(m, s, rng, DRIFT_STEP * 0.8, SCENE_SHIFT * 0.8)
            phases.append(Phase(duration / count, m, shift=s,
                                transition=BLEND if k else ABRUPT, blend_s=0.2 * duration / count if k else 0.0))
    elif name == "abrupt_shift":
        # Night-time style change: classes trade places and the whole cloud moves.
        perm = np.roll(np.arange(c), 1)
        m2 = 0.5 * means + 0.5 * means[perm] + _random_offsets(rng, means.shape, 0.5 * DRIFT_STEP)
        s2 = shift + _random_offsets(rng, shift.shape, 1.5 * SCENE_SHIFT)
        phases = [Phase(duration / 2, means, shift=shift), Phase(duration / 2, m2, shift=s2)]
    elif name == "class_imbalance_shift":
        skew_a = np.array([0.45, 0.25, 0.1, 0.1, 0.05, 0.05])[:c]
        skew_a = skew_a / skew_a.sum()
        skew_b = skew_a[::-1].copy()
        m2, s2 = _drifted(means, shift, rng, 0.6 * DRIFT_STEP, 0.6 * SCENE_SHIFT)
        phases = [Phase(duration / 3, means, shift=shift),
                  Phase(duration / 3, means, priors=skew_a, shift=shift, transition=BLEND, blend_s=duration / 12),
                  Phase(duration / 3, m2, priors=skew_b, shift=s2, transition=ABRUPT)]
    else:
        raise ValidationError(f"unknown schedule {name!r}; known: {', '.join(CATALOG)}")
    return DriftSchedule(name, phases)


def inverted_geometry_schedule(geo: Geometry, phase_s: float = 300.0, noise_scale: float = 1.0) -> DriftSchedule:
    """Two abrupt phases where every class takes the next class's mean."""
    perm = np.roll(np.arange(geo.num_classes), -1)
    return DriftSchedule("inverted", [
        Phase(phase_s, geo.means, noise_scale),
        Phase(phase_s, geo.means[perm], noise_scale),
    ])


def standard_benchmark_suite(seed: int, duration: float = DEFAULT_DURATION, rate: float = DEFAULT_RATE,
                             num_classes: int = DEFAULT_NUM_CLASSES,
                             feature_dim: int = DEFAULT_FEATURE_DIM) -> list[FeatureStream]:
    """One stream per catalog entry, in ``CATALOG`` order."""
    return benchmark_streams(len(CATALOG), seed, duration, rate, num_classes, feature_dim)


def benchmark_streams(num_edges: int, seed: int, duration: float = DEFAULT_DURATION, rate: float = DEFAULT_RATE,
                      num_classes: int = DEFAULT_NUM_CLASSES, feature_dim: int = DEFAULT_FEATURE_DIM,
                      names: Optional[Sequence[str]] = None, tag: str = "") -> list[FeatureStream]:
    """Disjoint streams for ``num_edges`` cameras, cycling through the catalog.

    Every edge gets its own scene (its own seed) even when schedule names
    repeat. A non-empty ``tag`` draws different scenes over the same class
    geometry, e.g. historical footage for offline profiling.
    """
    geo = Geometry.create(seed, num_classes, feature_dim)
    names = list(names or CATALOG)
    out = []
    for e in range(num_edges):
        name = names[e % len(names)]
        edge_seed = split_seed(seed, f"{tag}edge{e}")
        out.append(generate(catalog_schedule(name, geo, edge_seed, duration), edge_seed, rate))
    return out


def partition_corpus(streams: Sequence[FeatureStream], parts: int, clip_s: Optional[float] = None,
                     seed: int = 0) -> list[FeatureStream]:
    """Deal one fixed corpus out to ``parts`` cameras of equal length.

    Without ``clip_s`` the streams are concatenated and cut into ``parts``
    contiguous pieces. With ``clip_s`` every stream is cut into clips of that
    length, the clips are shuffled once (seeded) and dealt round-robin, so
    every camera meets scene cuts at the same cadence whatever ``parts`` is.
    Either way the union of all cameras is the same sample set.
    """
    if parts < 1:
        raise ValidationError("parts must be >= 1")
    rate = streams[0].rate
    if clip_s is None:
        pieces = [(s.features, s.labels) for s in streams]
    else:
        per = max(1, int(round(clip_s * rate)))
        pieces = [(s.features[i:i + per], s.labels[i:i + per]) for s in streams for i in range(0, len(s), per)]
        order = make_rng(seed, "clips").permutation(len(pieces))
        pieces = [pieces[i] for i in order]
        pieces = [pieces[i] for k in range(parts) for i in range(k, len(pieces), parts)]
    feats = np.concatenate([f for f, _ in pieces])
    labels = np.concatenate([y for _, y in pieces])
    n = len(labels) // parts
    out = []
    for k in range(parts):
        sl = slice(k * n, (k + 1) * n)
        times = (np.arange(n) + 1.0) / rate
        out.append(FeatureStream(times, labels[sl], feats[sl], rate, streams[0].num_classes, f"part{k}"))
    return out


def pretraining_set(geo: Geometry, seed: int, n: int = 3000) -> tuple[np.ndarray, np.ndarray]:
    """Generic labelled data drawn from the scene-free geometry."""
    rng = make_rng(seed, "pretrain-data")
    y = rng.integers(0, geo.num_classes, size=n)
    x = geo.means[y] + rng.standard_normal((n, geo.feature_dim))
    return x, y
