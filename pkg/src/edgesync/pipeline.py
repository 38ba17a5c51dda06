"""Glue shared by the command line and the experiment harness."""

from __future__ import annotations

import logging
from typing import Optional, Sequence

import numpy as np

from . import drift_stream as ds
from .bho import ProfileResult, offline_profile
from .config import Config
from .core_types import HyperParams, make_rng
from .sim import SimulationResult, run_simulation
from .sim.policies import PolicyConfig
from .student import LabeledBatch, StudentModel, train_epoch
from .trainer import retrain

log = logging.getLogger(__name__)


def catalog_streams(cfg: Config, seed: int, num_edges: Optional[int] = None, tag: str = "") -> list[ds.FeatureStream]:
    s = cfg["stream"]
    return ds.benchmark_streams(
        num_edges if num_edges is not None else s["num_edges"], seed, s["duration"], s["rate"],
        s["num_classes"], s["feature_dim"], s["schedules"], tag,
    )


def pretrained_student(cfg: Config, seed: int) -> StudentModel:
    """The deployed model every edge starts from: trained on scene-free generic data."""
    s, st = cfg["stream"], cfg["student"]
    geo = ds.Geometry.create(seed, s["num_classes"], s["feature_dim"])
    x, y = ds.pretraining_set(geo, seed, st["pretrain_samples"])
    batch = LabeledBatch(x, y)
    model = StudentModel.zeros(s["num_classes"], s["feature_dim"])
    rng = make_rng(seed, "pretrain")
    h = cfg.hyperparams()
    for epoch in range(1, st["pretrain_epochs"] + 1):
        model, _ = train_epoch(model, batch, h, rng, st["batch_size"], epoch)
    model.reset_momentum()
    return model


def profiling_objective(cfg: Config, model: StudentModel, seed: int):
    """Objective factory for offline profiling: validation accuracy after one retraining session."""
    budget, cost = cfg.budget(), cfg.epoch_cost()
    val_fraction = cfg.get("trainer", "val_fraction")
    batch_size = cfg.get("student", "batch_size")

    def factory(data):
        window = LabeledBatch(*data)

        def objective(h: HyperParams) -> float:
            out = retrain(model, window, h, budget, cost, make_rng(seed, "profile-train"),
                          val_fraction, batch_size)
            return float(out.best_eval) if np.isfinite(out.best_eval) else 0.0

        return objective

    return factory


def profile(cfg: Config, seed: int, streams: Optional[Sequence[ds.FeatureStream]] = None,
            model: Optional[StudentModel] = None) -> ProfileResult:
    """Offline hyperparameter search on historical streams (separate from the test streams)."""
    if streams is None:
        streams = catalog_streams(cfg, seed, tag="history-")
    model = model if model is not None else pretrained_student(cfg, seed)
    return offline_profile(streams, profiling_objective(cfg, model, seed), cfg.profile_config(), seed,
                           cfg.search_box())


def simulate(
    cfg: Config,
    seed: int,
    policy: Optional[PolicyConfig] = None,
    streams: Optional[Sequence[ds.FeatureStream]] = None,
    model: Optional[StudentModel] = None,
    h: Optional[HyperParams] = None,
) -> SimulationResult:
    """One simulation with everything not passed in taken from ``cfg``."""
    streams = list(streams) if streams is not None else catalog_streams(cfg, seed)
    model = model if model is not None else pretrained_student(cfg, seed)
    policy = policy if policy is not None else cfg.policy()
    log.info("simulating %s on %d edges (seed %d)", policy.name, len(streams), seed)
    return run_simulation(
        streams, policy, cfg.network(), cfg.costs(), cfg.budget(), h or cfg.hyperparams(), seed, model,
        **cfg.sim_kwargs(),
    )
