"""Offline Bayesian hyperparameter search (GP surrogate, expected improvement).

Search happens in the unit cube; ``SearchBox`` maps unit points to concrete
values (log10 scale for learning rate and weight decay). The GP lives on
standardised objective values with a zero prior mean.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.stats import norm, qmc

from .core_types import HyperParams, ValidationError, make_rng, split_seed

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Dimension:
    name: str
    low: float
    high: float
    log10: bool = False

    def __post_init__(self) -> None:
        if not self.low < self.high:
            raise ValidationError(f"dimension {self.name}: lower bound must be below upper bound")


@dataclass(frozen=True)
class SearchBox:
    dims: tuple = (
        Dimension("learning_rate", -4.0, -1.0, log10=True),
        Dimension("momentum", 0.0, 0.99),
        Dimension("weight_decay", -6.0, -2.0, log10=True),
    )

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def is_hyperparams(self) -> bool:
        return tuple(d.name for d in self.dims) == ("learning_rate", "momentum", "weight_decay")

    def to_raw(self, unit: np.ndarray) -> np.ndarray:
        u = np.clip(np.asarray(unit, dtype=float), 0.0, 1.0)
        lo = np.array([d.low for d in self.dims])
        hi = np.array([d.high for d in self.dims])
        raw = lo + u * (hi - lo)
        return np.array([10.0**v if d.log10 else v for v, d in zip(raw, self.dims)])

    def to_unit(self, raw: np.ndarray) -> np.ndarray:
        out = []
        for v, d in zip(np.asarray(raw, dtype=float), self.dims):
            x = math.log10(v) if d.log10 else v
            out.append((x - d.low) / (d.high - d.low))
        return np.clip(np.array(out), 0.0, 1.0)

    def decode(self, unit: np.ndarray):
        """Unit point -> HyperParams for the default box, raw array otherwise."""
        raw = self.to_raw(unit)
        if self.is_hyperparams:
            return HyperParams(float(raw[0]), float(raw[1]), float(raw[2]))
        return raw

    def encode(self, point) -> np.ndarray:
        if isinstance(point, HyperParams):
            point = [point.learning_rate, point.momentum, point.weight_decay]
        return self.to_unit(np.asarray(point, dtype=float))


def se_kernel(a: np.ndarray, b: np.ndarray, length_scale) -> np.ndarray:
    """Squared-exponential kernel with unit signal variance."""
    ls = np.broadcast_to(np.asarray(length_scale, dtype=float), (a.shape[1],))
    d = (a[:, None, :] - b[None, :, :]) / ls
    return np.exp(-0.5 * np.sum(d * d, axis=-1))


class GpSurrogate:
    """Zero-mean GP regression on standardised targets."""

    def __init__(self, points, values, length_scale=0.2, noise: float = 1e-6, standardize: bool = True):
        x = np.atleast_2d(np.asarray(points, dtype=float))
        y = np.asarray(values, dtype=float).reshape(-1)
        if len(y) < 1 or x.shape[0] != len(y):
            raise ValidationError("GP needs at least one observation with matching targets")
        self.x = x
        self.length_scale = length_scale
        self.noise = noise
        if standardize:
            self.y_mean = float(y.mean())
            sd = float(y.std())
            self.y_scale = sd if sd > 0 else 1.0
        else:
            self.y_mean, self.y_scale = 0.0, 1.0
        self.y = (y - self.y_mean) / self.y_scale
        k = se_kernel(x, x, length_scale) + noise * np.eye(len(y))
        try:
            self._chol = cho_factor(k, lower=True)
        except np.linalg.LinAlgError as exc:
            raise ValidationError(
                f"GP kernel matrix is not positive definite (noise={noise}); use a larger noise floor"
            ) from exc
        self._alpha = cho_solve(self._chol, self.y)

    def standardize(self, value: float) -> float:
        return (value - self.y_mean) / self.y_scale

    def posterior(self, query) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and variance (standardised units) at each query row."""
        q = np.atleast_2d(np.asarray(query, dtype=float))
        ks = se_kernel(q, self.x, self.length_scale)
        mean = ks @ self._alpha
        v = cho_solve(self._chol, ks.T)
        var = 1.0 - np.sum(ks * v.T, axis=1)
        return mean, np.maximum(var, 0.0)


def gp_posterior(surrogate: GpSurrogate, query) -> tuple[float, float]:
    mean, var = surrogate.posterior(np.asarray(query, dtype=float)[None, :])
    return float(mean[0]), float(var[0])


def ei_from_moments(mu, sigma, f_best: float, xi: float = 0.01):
    """Closed-form expected improvement for maximisation; zero where sigma == 0."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    gain = mu - f_best - xi
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sigma > 0, gain / np.where(sigma > 0, sigma, 1.0), 0.0)
    ei = np.where(sigma > 0, gain * norm.cdf(z) + sigma * norm.pdf(z), 0.0)
    ei = np.maximum(ei, 0.0)
    return float(ei) if ei.ndim == 0 else ei


def expected_improvement(surrogate: GpSurrogate, query, f_best: float, xi: float = 0.01):
    """EI at ``query``; ``f_best`` is given in the surrogate's standardised units."""
    mean, var = surrogate.posterior(query)
    ei = ei_from_moments(mean, np.sqrt(var), f_best, xi)
    return float(ei[0]) if np.ndim(query) == 1 else ei


@dataclass(frozen=True)
class EiConfig:
    xi: float = 0.01
    candidate_count: int = 1000
    init_points: int = 8
    max_iters: int = 30
    improvement_threshold: float = 0.002
    stall_window: int = 5
    length_scale: float = 0.2
    noise: float = 1e-6

    def __post_init__(self) -> None:
        if self.candidate_count < 1 or self.init_points < 1 or self.max_iters < 0:
            raise ValidationError("candidate_count and init_points must be >= 1, max_iters >= 0")
        if self.xi < 0 or not self.improvement_threshold > 0:
            raise ValidationError("xi must be >= 0 and improvement_threshold > 0")


@dataclass
class Observation:
    unit: np.ndarray
    params: object
    value: float
    phase: str


@dataclass
class OptimizeResult:
    best_params: object
    best_value: float
    best_unit: np.ndarray
    history: list = field(default_factory=list)

    def best_so_far(self) -> list[float]:
        out, best = [], float("-inf")
        for obs in self.history:
            if np.isfinite(obs.value):
                best = max(best, obs.value)
            out.append(best)
        return out


def _initial_design(ndim: int, count: int, seed: int, seeded: Sequence[np.ndarray]) -> list[np.ndarray]:
    pts = [np.clip(np.asarray(p, dtype=float), 0.0, 1.0) for p in seeded][:count]
    if len(pts) < count:
        lhs = qmc.LatinHypercube(d=ndim, seed=np.random.default_rng(split_seed(seed, "lhs")))
        pts.extend(lhs.random(count - len(pts)))
    return pts


def optimize(
    objective: Callable[[object], float],
    box: SearchBox,
    cfg: EiConfig = EiConfig(),
    seed: int = 0,
    initial_points: Sequence = (),
) -> OptimizeResult:
    """Maximise ``objective`` over ``box`` with GP-EI.

    ``initial_points`` (decoded values or HyperParams) take the first slots of
    the stratified initial design. Non-finite objective values are recorded
    and stand in as the worst value seen so far.
    """
    rng = make_rng(seed, "bho-candidates")
    seeded = [box.encode(p) for p in initial_points]
    history: list[Observation] = []
    best_trace: list[float] = []

    def evaluate_at(unit: np.ndarray, phase: str) -> None:
        params = box.decode(unit)
        value = float(objective(params))
        if not np.isfinite(value):
            log.warning("objective returned %r at %s", value, params)
        history.append(Observation(np.asarray(unit, dtype=float), params, value, phase))
        finite = [o.value for o in history if np.isfinite(o.value)]
        best_trace.append(max(finite) if finite else float("-inf"))

    for unit in _initial_design(box.ndim, cfg.init_points, seed, seeded):
        evaluate_at(unit, "init")

    for it in range(cfg.max_iters):
        finite = [o.value for o in history if np.isfinite(o.value)]
        if finite:
            worst = min(finite)
            xs = np.array([o.unit for o in history])
            ys = np.array([o.value if np.isfinite(o.value) else worst for o in history])
            gp = GpSurrogate(xs, ys, cfg.length_scale, cfg.noise)
            cands = rng.uniform(size=(cfg.candidate_count, box.ndim))
            ei = expected_improvement(gp, cands, gp.standardize(max(finite)), cfg.xi)
            nxt = cands[int(np.argmax(ei))]
        else:
            nxt = rng.uniform(size=box.ndim)
        evaluate_at(nxt, "ei")
        n_ei = it + 1
        if n_ei >= cfg.stall_window:
            gained = best_trace[-1] - best_trace[-1 - cfg.stall_window]
            if gained < cfg.improvement_threshold:
                break

    finite_obs = [o for o in history if np.isfinite(o.value)]
    if not finite_obs:
        raise ValidationError("objective produced no finite value")
    best = max(finite_obs, key=lambda o: o.value)
    return OptimizeResult(best.params, best.value, best.unit, history)


# Offline profiling ----------------------------------------------------------

@dataclass(frozen=True)
class ProfileConfig:
    window_samples: int = 400
    segment_samples: int = 80
    max_rounds: int = 5
    ei: EiConfig = EiConfig()


@dataclass
class ProfileResult:
    params: HyperParams
    value: float
    h0: HyperParams
    per_stream: list
    history: list = field(default_factory=list)  # (stage, source, Observation)


ObjectiveFactory = Callable[[object], Callable[[HyperParams], float]]


def offline_profile(
    streams: Sequence,
    objective_factory: ObjectiveFactory,
    cfg: ProfileConfig = ProfileConfig(),
    seed: int = 0,
    box: SearchBox = SearchBox(),
) -> ProfileResult:
    """Two-stage profiling over a collection of training streams.

    Stage one optimises each stream's first window on its own and averages
    the optima (in unit/log space) into a starting point. Stage two keeps
    re-optimising on random segments drawn from every stream and combined,
    seeded with the incumbent, until a round improves on it by less than
    ``improvement_threshold``.

    ``objective_factory(data)`` builds the objective for a data window; the
    windows passed are ``(features, labels)`` tuples.
    """
    if len(streams) < 2:
        raise ValidationError("offline profiling needs at least two streams")
    for s in streams:
        if len(s) < cfg.window_samples:
            raise ValidationError(
                f"stream {getattr(s, 'name', '?')} has {len(s)} samples, fewer than one window ({cfg.window_samples})"
            )
    history = []
    optima = []
    for k, s in enumerate(streams):
        data = (s.features[: cfg.window_samples], s.labels[: cfg.window_samples])
        res = optimize(objective_factory(data), box, cfg.ei, split_seed(seed, f"stage1-{k}"))
        optima.append(res)
        history += [("stage1", k, o) for o in res.history]
    h0_unit = np.mean([r.best_unit for r in optima], axis=0)
    h0 = box.decode(h0_unit)

    rng = make_rng(seed, "stage2-segments")
    incumbent, incumbent_value = h0, float("nan")
    for rnd in range(cfg.max_rounds):
        feats, labels, pos = [], [], []
        for s in streams:
            seg = min(cfg.segment_samples, len(s))
            start = int(rng.integers(0, len(s) - seg + 1))
            feats.append(s.features[start : start + seg])
            labels.append(s.labels[start : start + seg])
            pos.append((np.arange(seg) + 0.5) / seg)
        # Interleave by relative position so every stream's newest samples
        # land in the held-out tail of a time-ordered split.
        order = np.argsort(np.concatenate(pos), kind="stable")
        data = (np.concatenate(feats)[order], np.concatenate(labels)[order])
        res = optimize(objective_factory(data), box, cfg.ei, split_seed(seed, f"stage2-{rnd}"),
                       initial_points=[incumbent])
        history += [("stage2", rnd, o) for o in res.history]
        baseline = res.history[0].value
        gain = res.best_value - baseline if np.isfinite(baseline) else float("inf")
        incumbent, incumbent_value = res.best_params, res.best_value
        if gain < cfg.ei.improvement_threshold:
            break
    return ProfileResult(incumbent, incumbent_value, h0, [r.best_params for r in optima], history)


def write_profile(result: ProfileResult, path: str) -> None:
    """Plain-text profile: ``key = value`` lines then a CSV search history."""
    p = result.params
    lines = [
        "# edgesync offline hyperparameter profile v1",
        f"learning_rate = {p.learning_rate!r}",
        f"momentum = {p.momentum!r}",
        f"weight_decay = {p.weight_decay!r}",
        f"best_value = {result.value!r}",
        f"h0_learning_rate = {result.h0.learning_rate!r}",
        f"h0_momentum = {result.h0.momentum!r}",
        f"h0_weight_decay = {result.h0.weight_decay!r}",
        "history:",
        "stage,source,phase,learning_rate,momentum,weight_decay,value",
    ]
    for stage, source, o in result.history:
        hp = o.params
        lines.append(
            f"{stage},{source},{o.phase},{hp.learning_rate!r},{hp.momentum!r},{hp.weight_decay!r},{o.value!r}"
        )
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)


def read_profile(path: str) -> HyperParams:
    values = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line == "history:":
                break
            if not line or line.startswith("#"):
                continue
            key, _, val = line.partition("=")
            values[key.strip()] = val.strip()
    try:
        return HyperParams(
            float(values["learning_rate"]), float(values["momentum"]), float(values["weight_decay"])
        )
    except KeyError as exc:
        raise ValidationError(f"profile {path} is missing {exc}") from exc
