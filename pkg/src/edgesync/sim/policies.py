"""Update policies: the full method, its ablations and the baselines.

A policy is plain data; the kernel reads its switches. ``make_policy``
builds the named presets.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

from ..core_types import ValidationError
from ..sample_filter import FilterConfig

NONE = "none"
ONE_TIME = "one_time"
ROUND_ROBIN = "round_robin"
URGENCY = "urgency"
WINDOWED = "windowed"
SELECTIONS = (NONE, ONE_TIME, ROUND_ROBIN, URGENCY, WINDOWED)

EARLY = "early"
FIXED = "fixed"


@dataclass(frozen=True)
class PolicyConfig:
    name: str
    selection: str = URGENCY
    use_filter: bool = True
    filter: FilterConfig = FilterConfig()
    stopping: str = EARLY
    fixed_epochs: int = 30
    fixed_cycle_time_s: Optional[float] = None
    window_s: float = 200.0
    profile_cost_s: float = 0.0
    search_trials: int = 0
    trial_epochs: int = 5
    trial_fraction: float = 0.2
    one_time_horizon_s: float = 100.0
    fit_to_cycle: bool = True

    def __post_init__(self) -> None:
        if self.selection not in SELECTIONS:
            raise ValidationError(f"unknown selection rule {self.selection!r}")
        if self.stopping not in (EARLY, FIXED):
            raise ValidationError(f"unknown stopping rule {self.stopping!r}")
        if self.fixed_epochs < 1:
            raise ValidationError("fixed_epochs must be >= 1")
        if self.fixed_cycle_time_s is not None and not self.fixed_cycle_time_s > 0:
            raise ValidationError("fixed_cycle_time_s must be positive when set")
        if self.window_s <= 0 or self.one_time_horizon_s <= 0:
            raise ValidationError("window lengths must be positive")
        if self.profile_cost_s < 0 or self.search_trials < 0:
            raise ValidationError("profiling cost and trial count must be non-negative")
        if not 0 < self.trial_fraction <= 1:
            raise ValidationError("trial_fraction must be in (0, 1]")

    @property
    def upload_fraction(self) -> float:
        return self.filter.upload_fraction if self.use_filter else 1.0

    @property
    def adapts(self) -> bool:
        return self.selection != NONE


POLICY_NAMES = (
    "no_adapt", "one_time", "ams_like", "ekya_like", "edgesync",
    "edgesync_f", "edgesync_tf", "edgesync_stf", "edgesync_fixed", "ams_filter",
)


def make_policy(
    name: str,
    filter_cfg: FilterConfig = FilterConfig(),
    fixed_epochs: int = 30,
    fixed_cycle_time_s: Optional[float] = None,
    **overrides,
) -> PolicyConfig:
    """Named preset.

    ``edgesync_fixed`` is the full method with the training manager replaced
    by a fixed epoch count; ``ams_filter`` is the round-robin fixed-epoch
    baseline with the upload filter switched on. ``edgesync_stf`` needs
    ``fixed_cycle_time_s`` (the measured mean cycle of the full method).
    """
    base = dict(name=name, filter=filter_cfg, fixed_epochs=fixed_epochs)
    presets = {
        "no_adapt": dict(selection=NONE, use_filter=False),
        "one_time": dict(selection=ONE_TIME, use_filter=False),
        "ams_like": dict(selection=ROUND_ROBIN, use_filter=False, stopping=FIXED),
        "ekya_like": dict(selection=WINDOWED, use_filter=False, stopping=FIXED,
                          profile_cost_s=7.84, search_trials=5),
        "edgesync": dict(selection=URGENCY, use_filter=True, stopping=EARLY),
        "edgesync_f": dict(selection=URGENCY, use_filter=False, stopping=EARLY),
        "edgesync_tf": dict(selection=URGENCY, use_filter=False, stopping=FIXED),
        "edgesync_stf": dict(selection=ROUND_ROBIN, use_filter=False, stopping=FIXED, fit_to_cycle=False),
        "edgesync_fixed": dict(selection=URGENCY, use_filter=True, stopping=FIXED),
        "ams_filter": dict(selection=ROUND_ROBIN, use_filter=True, stopping=FIXED),
    }
    if name not in presets:
        raise ValidationError(f"unknown policy {name!r}; known: {', '.join(POLICY_NAMES)}")
    if name == "edgesync_stf" and fixed_cycle_time_s is None:
        raise ValidationError("edgesync_stf needs fixed_cycle_time_s (the full method's mean cycle time)")
    cfg = PolicyConfig(**base, **presets[name], fixed_cycle_time_s=fixed_cycle_time_s)
    return replace(cfg, **overrides) if overrides else cfg
