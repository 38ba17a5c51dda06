"""Deterministic event loop for K edges sharing one cloud.

Edges are passive: each sample is inferred by whichever model is installed
on its edge when inference starts, so inference is resolved lazily whenever
the cloud needs an edge's state. The cloud runs update cycles strictly one
after another; every cost inside a cycle comes from the analytic cost model,
never from the host clock.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..bho import SearchBox
from ..core_types import HyperParams, ValidationError, make_rng
from ..drift_stream import FeatureStream
from ..sample_filter import select_top, upload_count
from ..student import LabeledBatch, StudentModel, evaluate, predict_proba
from ..trainer import (
    DIVERGED,
    MIN_WINDOW,
    SKIPPED,
    EpochCost,
    TrainBudget,
    TrainOutcome,
    retrain,
    split_window,
    train_fixed,
)
from ..urgency import AccuracyBank, record_results, report, select_edge
from . import policies as pol

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NetworkModel:
    uplink_bps: float = 8e6
    downlink_bps: float = 8e6
    rtt_s: float = 0.05
    bytes_per_sample: int = 10_000
    bytes_per_param: int = 4

    def __post_init__(self) -> None:
        if min(self.uplink_bps, self.downlink_bps, self.rtt_s, self.bytes_per_sample, self.bytes_per_param) <= 0:
            raise ValidationError("network parameters must all be positive")

    def upload_seconds(self, samples: int) -> float:
        return samples * self.bytes_per_sample * 8 / self.uplink_bps + self.rtt_s

    def download_seconds(self, params: int) -> float:
        return params * self.bytes_per_param * 8 / self.downlink_bps + self.rtt_s


@dataclass(frozen=True)
class CostModel:
    label_s_per_sample: float = 0.06
    filter_s_per_sample: float = 0.0005
    epoch_cost: EpochCost = EpochCost()
    teacher_error: float = 0.02
    edge_fps: float = 2.0
    cache_capacity: int = 400
    train_window: int = 400
    min_new_samples: int = 40
    sliding_window: bool = False
    idle_poll_s: float = 1.0

    def __post_init__(self) -> None:
        if self.label_s_per_sample < 0 or self.filter_s_per_sample < 0:
            raise ValidationError("per-sample costs must be non-negative")
        if not 0 <= self.teacher_error < 1:
            raise ValidationError("teacher_error must be in [0, 1)")
        if self.edge_fps <= 0 or self.cache_capacity < 1:
            raise ValidationError("edge_fps must be positive and cache_capacity >= 1")
        if self.train_window < MIN_WINDOW or self.min_new_samples < 1:
            raise ValidationError(f"train_window must be >= {MIN_WINDOW} and min_new_samples >= 1")
        if self.idle_poll_s <= 0:
            raise ValidationError("idle_poll_s must be positive")


@dataclass
class CycleRecord:
    edge_id: int
    cycle_index: int
    start: float
    t_filter: float = 0.0
    t_upload: float = 0.0
    t_label: float = 0.0
    t_profile: float = 0.0
    t_train: float = 0.0
    t_download: float = 0.0
    t_idle: float = 0.0
    samples_uploaded: int = 0
    window_size: int = 0
    train_samples: int = 0
    d_at_selection: float = float("nan")
    epochs: int = 0
    best_epoch: int = 0
    stop_reason: str = ""
    installed: bool = False
    urgency: dict = field(default_factory=dict)
    uploads: dict = field(default_factory=dict)

    @property
    def busy(self) -> float:
        return self.t_filter + self.t_upload + self.t_label + self.t_profile + self.t_train + self.t_download

    @property
    def total(self) -> float:
        return self.busy + self.t_idle

    @property
    def end(self) -> float:
        return self.start + self.total

    @property
    def install_time(self) -> float:
        return self.start + self.busy


@dataclass
class SimulationResult:
    policy: str
    num_edges: int
    duration: float
    arrival_times: list
    true_labels: list
    predictions: list
    model_versions: list
    cycles: list
    upload_bytes: int
    download_bytes: int
    final_models: list
    hyperparams: HyperParams

    def correct(self, edge: int) -> np.ndarray:
        return self.predictions[edge] == self.true_labels[edge]


class _Edge:
    def __init__(self, edge_id: int, stream: FeatureStream, model: StudentModel, fps: float):
        self.id = edge_id
        self.stream = stream
        self.model = model
        self.version = 0
        n = len(stream)
        # Inference queue: a frame starts once it has arrived and the previous
        # frame is done, so a throughput cap below the frame rate adds delay.
        starts = np.empty(n)
        prev = -np.inf
        for j, t in enumerate(stream.times):
            prev = max(t, prev + 1.0 / fps)
            starts[j] = prev
        self.infer_start = starts
        self.preds = np.full(n, -1, dtype=np.int64)
        self.probs = np.zeros((n, stream.num_classes))
        self.versions = np.full(n, -1, dtype=np.int64)
        self.inferred = 0
        self.upload_from = 0
        self.buffer_x: list = []
        self.buffer_y: list = []
        self.buffer_seq: list = []
        self.fresh = 0

    def advance(self, t: float) -> None:
        """Infer every frame whose inference starts at or before ``t``."""
        stop = int(np.searchsorted(self.infer_start, t, side="right"))
        if stop > self.inferred:
            sl = slice(self.inferred, stop)
            p = predict_proba(self.model, self.stream.features[sl])
            self.probs[sl] = p
            self.preds[sl] = np.argmax(p, axis=1)
            self.versions[sl] = self.version
            self.inferred = stop

    def cache(self, capacity: int, cutoff: Optional[float] = None) -> tuple[int, int]:
        """Index range of frames cached since the last upload (newest ``capacity``)."""
        stop = self.inferred
        if cutoff is not None:
            stop = min(stop, int(np.searchsorted(self.stream.times, cutoff, side="right")))
        start = max(self.upload_from, stop - capacity)
        return start, max(start, stop)

    @property
    def buffered(self) -> int:
        return sum(len(y) for y in self.buffer_y)

    def window(self) -> tuple[LabeledBatch, np.ndarray]:
        x = np.concatenate(self.buffer_x)
        y = np.concatenate(self.buffer_y)
        seq = np.concatenate(self.buffer_seq)
        order = np.argsort(seq, kind="stable")
        return LabeledBatch(x[order], y[order]), seq[order]

    def clear_buffer(self) -> None:
        self.buffer_x, self.buffer_y, self.buffer_seq = [], [], []

    def trim_buffer(self, capacity: int) -> None:
        excess = self.buffered - capacity
        while excess > 0 and self.buffer_y:
            n0 = len(self.buffer_y[0])
            if n0 <= excess:
                for buf in (self.buffer_x, self.buffer_y, self.buffer_seq):
                    buf.pop(0)
                excess -= n0
            else:
                self.buffer_x[0] = self.buffer_x[0][excess:]
                self.buffer_y[0] = self.buffer_y[0][excess:]
                self.buffer_seq[0] = self.buffer_seq[0][excess:]
                excess = 0


class Simulation:
    def __init__(
        self,
        streams: Sequence[FeatureStream],
        policy: pol.PolicyConfig,
        net: NetworkModel,
        costs: CostModel,
        budget: TrainBudget,
        h: HyperParams,
        seed: int,
        initial_model: Optional[StudentModel] = None,
        bank_capacity: int = 90,
        bank_segments: int = 10,
        urgency_decay: Optional[float] = None,
        val_fraction: float = 0.2,
        batch_size: int = 32,
        search_box: SearchBox = SearchBox(),
    ):
        if not streams:
            raise ValidationError("need at least one stream")
        c, d = streams[0].num_classes, streams[0].feature_dim
        for s in streams:
            if s.num_classes != c or s.feature_dim != d:
                raise ValidationError("all streams must share class count and feature dimension")
        model = initial_model if initial_model is not None else StudentModel.zeros(c, d)
        if model.num_classes != c or model.feature_dim != d:
            raise ValidationError(
                f"initial model is {model.num_classes}x{model.feature_dim}, streams are {c}x{d}"
            )
        self.policy = policy
        self.net = net
        self.costs = costs
        self.budget = budget
        self.h = h
        self.seed = seed
        self.val_fraction = val_fraction
        self.batch_size = batch_size
        self.search_box = search_box
        self.urgency_decay = urgency_decay
        self.edges = [_Edge(e, s, model.copy(), costs.edge_fps) for e, s in enumerate(streams)]
        self.banks = [AccuracyBank(bank_capacity, bank_segments) for _ in streams]
        self.bank_seen = [0] * len(streams)
        self.last_trained: dict[int, int] = {}
        self.horizon = max(float(s.times[-1]) for s in streams if len(s)) if any(len(s) for s in streams) else 0.0
        self.teacher = [self._teacher_labels(e, s) for e, s in enumerate(streams)]
        self.cycles: list[CycleRecord] = []
        self.upload_bytes = 0
        self.download_bytes = 0
        self.rr_next = 0
        self.window_next = [policy.window_s] * len(streams)
        self.one_time_done: set[int] = set()

    def _teacher_labels(self, e: int, s: FeatureStream) -> np.ndarray:
        """True labels, each flipped to a random wrong class with the teacher error rate."""
        rng = make_rng(self.seed, "teacher", str(e))
        flip = rng.random(len(s)) < self.costs.teacher_error
        wrong = (s.labels + rng.integers(1, s.num_classes, size=len(s))) % s.num_classes
        return np.where(flip, wrong, s.labels)

    # -- scheduling ------------------------------------------------------------

    def _pending(self, edge: _Edge, t: float, cutoff: Optional[float] = None) -> int:
        edge.advance(t)
        a, b = edge.cache(self.costs.cache_capacity, cutoff)
        return b - a

    def _fresh_at(self, edge: _Edge, t: float) -> int:
        """Labelled samples new since the edge's last training, if a cycle started at ``t``."""
        return edge.fresh + upload_count(self.policy.upload_fraction, self._pending(edge, t))

    def _next_start(self, t: float) -> tuple[Optional[float], Optional[int]]:
        """Earliest time >= ``t`` a cycle can start, and the pre-chosen edge if any."""
        p = self.policy
        k = len(self.edges)
        if p.selection == pol.NONE:
            return None, None
        if p.selection == pol.ONE_TIME:
            remaining = [e for e in range(k) if e not in self.one_time_done]
            if not remaining:
                return None, None
            return max(t, p.one_time_horizon_s), remaining[0]
        if p.selection == pol.WINDOWED:
            e = self.rr_next
            return max(t, self.window_next[e]), e
        while t < self.horizon:
            if p.selection == pol.ROUND_ROBIN:
                e = self.rr_next
                if self._fresh_at(self.edges[e], t) >= self.costs.min_new_samples:
                    return t, e
            elif any(self._fresh_at(edge, t) >= self.costs.min_new_samples for edge in self.edges):
                return t, None
            t += self.costs.idle_poll_s
        return None, None

    # -- one cycle ----------------------------------------------------------------

    def _upload(self, edge: _Edge, t: float, cutoff: Optional[float] = None) -> tuple[int, int, float, float]:
        """Filter, upload and label one edge's cache; returns (T, uploaded, t_filter, t_upload)."""
        edge.advance(t)
        a, b = edge.cache(self.costs.cache_capacity, cutoff)
        T = b - a
        edge.upload_from = b
        if T == 0:
            return 0, 0, 0.0, 0.0
        if self.policy.use_filter:
            pos = np.sort(select_top(edge.probs[a:b], self.policy.filter))
            t_filter = self.costs.filter_s_per_sample * T
        else:
            pos = np.arange(T)
            t_filter = 0.0
        idx = a + pos
        n = len(idx)
        teacher = self.teacher[edge.id][idx]
        record_results(self.banks[edge.id], zip(edge.preds[idx], teacher), self.bank_seen[edge.id])
        self.bank_seen[edge.id] += n
        edge.buffer_x.append(edge.stream.features[idx])
        edge.buffer_y.append(teacher)
        edge.buffer_seq.append(idx)
        edge.trim_buffer(self.costs.train_window)
        edge.fresh += n
        self.upload_bytes += n * self.net.bytes_per_sample
        return T, n, t_filter, self.net.upload_seconds(n)

    def _select(self, rec: CycleRecord) -> int:
        reports = []
        for edge in self.edges:
            r = report(self.banks[edge.id], edge.id, self.urgency_decay)
            rec.urgency[edge.id] = r.degree if r is not None else float("nan")
            if r is not None and edge.fresh >= self.costs.min_new_samples:
                reports.append(r)
        eligible = [e.id for e in self.edges if e.fresh >= self.costs.min_new_samples]
        chosen = select_edge(reports, self.last_trained, eligible or [e.id for e in self.edges])
        rec.d_at_selection = rec.urgency[chosen]
        return chosen

    def _search(self, model: StudentModel, window: LabeledBatch, rng: np.random.Generator) -> tuple[HyperParams, float]:
        """Windowed baseline's micro-profiler: short random search on a data fraction.

        Returns the winning hyperparameters and the simulated search time.
        """
        p = self.policy
        train, val = split_window(window, self.val_fraction)
        n = min(len(train), max(MIN_WINDOW, int(round(len(train) * p.trial_fraction))))
        sub = train.subset(np.sort(rng.permutation(len(train))[:n]))
        best, best_key, spent = self.h, None, 0.0
        for _ in range(p.search_trials):
            cand = self.search_box.decode(rng.uniform(size=self.search_box.ndim))
            out = train_fixed(model, sub, cand, p.trial_epochs, self.costs.epoch_cost, rng,
                              batch_size=self.batch_size)
            spent += out.train_duration
            acc, loss = evaluate(out.final_model, val)
            if best_key is None or (acc, -loss) > best_key:
                best, best_key = cand, (acc, -loss)
        return best, spent

    def _train(self, edge: _Edge, window: LabeledBatch, h: HyperParams, rng, time_left: Optional[float]) -> TrainOutcome:
        p = self.policy
        if p.stopping == pol.FIXED:
            return train_fixed(edge.model, window, h, p.fixed_epochs, self.costs.epoch_cost, rng,
                               time_limit=time_left, batch_size=self.batch_size)
        budget = self.budget
        if time_left is not None:
            budget = TrainBudget(budget.patience, max(min(budget.max_time, time_left), 1e-9), budget.max_epochs)
        return retrain(edge.model, window, h, budget, self.costs.epoch_cost, rng,
                       self.val_fraction, self.batch_size)

    def _run_cycle(self, t: float, chosen: Optional[int]) -> CycleRecord:
        p = self.policy
        idx = len(self.cycles)
        rec = CycleRecord(edge_id=-1 if chosen is None else chosen, cycle_index=idx, start=t)
        cutoff = p.one_time_horizon_s if p.selection == pol.ONE_TIME else None
        # Every edge ships its (filtered) cache each cycle so the cloud can keep
        # all accuracy banks current; edges upload in parallel on their own links.
        uploaders = [chosen] if p.selection == pol.ONE_TIME else range(len(self.edges))
        total, t_filter, t_upload, windows = 0, 0.0, 0.0, {}
        for e in uploaders:
            windows[e], n, tf, tu = self._upload(self.edges[e], t, cutoff)
            rec.uploads[e] = (windows[e], n)
            total += n
            t_filter = max(t_filter, tf)
            t_upload = max(t_upload, tu)
        rec.samples_uploaded = total
        rec.t_filter, rec.t_upload = t_filter, t_upload
        rec.t_label = self.costs.label_s_per_sample * total
        if chosen is None:
            chosen = self._select(rec)
            rec.edge_id = chosen
        rec.window_size = windows.get(chosen, 0)
        edge = self.edges[chosen]
        rng = make_rng(self.seed, "train", f"{chosen}-{idx}")
        h = self.h
        window = None
        rec.t_profile = p.profile_cost_s
        if edge.buffered >= MIN_WINDOW:
            window, _ = edge.window()
            rec.train_samples = len(window)
            if p.search_trials > 0:
                h, spent = self._search(edge.model, window, rng)
                rec.t_profile += spent
        time_left = None
        if p.fixed_cycle_time_s is not None and p.fit_to_cycle:
            overhead = rec.t_filter + rec.t_upload + rec.t_label + rec.t_profile
            overhead += self.net.download_seconds(edge.model.num_params)
            time_left = max(p.fixed_cycle_time_s - overhead, 0.0)
        if window is not None:
            out = self._train(edge, window, h, rng, time_left)
        else:
            out = TrainOutcome(edge.model, 0, 0, float("nan"), SKIPPED, 0.0)
        rec.t_train = out.train_duration
        rec.epochs, rec.best_epoch, rec.stop_reason = out.epochs_run, out.best_epoch, out.stop_reason
        if out.epochs_run > 0 and out.stop_reason not in (SKIPPED, DIVERGED):
            rec.t_download = self.net.download_seconds(out.final_model.num_params)
            self.download_bytes += out.final_model.num_params * self.net.bytes_per_param
            edge.advance(rec.install_time)
            edge.model = out.final_model
            edge.version += 1
            rec.installed = True
            edge.fresh = 0
            if not self.costs.sliding_window:
                edge.clear_buffer()
        if p.fixed_cycle_time_s is not None:
            rec.t_idle = max(0.0, p.fixed_cycle_time_s - rec.busy)
        self.last_trained[chosen] = idx
        self.cycles.append(rec)
        return rec

    def _after_cycle(self, rec: CycleRecord) -> None:
        p = self.policy
        k = len(self.edges)
        if p.selection == pol.ONE_TIME:
            self.one_time_done.add(rec.edge_id)
        if p.selection in (pol.ROUND_ROBIN, pol.WINDOWED):
            self.rr_next = (rec.edge_id + 1) % k
        if p.selection == pol.WINDOWED:
            w = p.window_s
            self.window_next[rec.edge_id] = (np.floor(rec.start / w) + 1) * w

    def run(self) -> SimulationResult:
        t = 0.0
        while True:
            start, chosen = self._next_start(t)
            if start is None or start >= self.horizon:
                break
            rec = self._run_cycle(start, chosen)
            self._after_cycle(rec)
            t = rec.end
        for edge in self.edges:
            edge.advance(np.inf)
        return SimulationResult(
            policy=self.policy.name,
            num_edges=len(self.edges),
            duration=self.horizon,
            arrival_times=[e.stream.times for e in self.edges],
            true_labels=[e.stream.labels for e in self.edges],
            predictions=[e.preds for e in self.edges],
            model_versions=[e.versions for e in self.edges],
            cycles=self.cycles,
            upload_bytes=self.upload_bytes,
            download_bytes=self.download_bytes,
            final_models=[e.model for e in self.edges],
            hyperparams=self.h,
        )


def run_simulation(
    streams: Sequence[FeatureStream],
    policy: pol.PolicyConfig,
    net: NetworkModel = NetworkModel(),
    costs: CostModel = CostModel(),
    budget: TrainBudget = TrainBudget(),
    h: HyperParams = HyperParams(0.05, 0.9, 1e-4),
    seed: int = 0,
    initial_model: Optional[StudentModel] = None,
    num_edges: Optional[int] = None,
    **kwargs,
) -> SimulationResult:
    """Run one policy over one stream per edge and return the raw trace.

    ``num_edges``, when given, must equal the number of streams.
    """
    if num_edges is not None and num_edges != len(streams):
        raise ValidationError(f"{len(streams)} streams for {num_edges} edges; need exactly one stream per edge")
    return Simulation(streams, policy, net, costs, budget, h, seed, initial_model, **kwargs).run()
