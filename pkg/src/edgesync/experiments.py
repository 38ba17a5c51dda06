"""Comparative studies across policies, seeds, camera counts and upload fractions.

An experiment is described by a small INI file::

    [experiment]
    name = table1
    kind = comparison
    policies = no_adapt one_time ams_like edgesync
    seeds = 1 2 3
    claims =
        edgesync > ams_like
        ams_like > one_time

    [overrides]
    costs.label_s_per_sample = 0.06

Every run's headline numbers go to ``per_seed.csv``; the summary table and
the claim verdicts are computed from those rows alone, so anyone can
recompute them from the CSV (see :func:`verdicts_from_rows`).

Claim grammar (accuracy in points, i.e. percent):

``A > B``
    majority of seeds with A > B, and mean(A) - mean(B) >= gap.
``A >= B``
    majority of seeds with A >= B, and mean(A) >= mean(B).
``A between B C``
    mean(A) lies within [min(mean B, mean C), max(mean B, mean C)].
``cycle_ratio A B <= r`` / ``cycle_ratio A B >= r``
    mean cycle time of A over that of B, compared with r.
``nonincreasing A``
    mean accuracy of A does not increase along the sweep.
``spread A < x``
    max minus min of A's mean accuracy over the sweep is below x.
``interior_max A``
    the best mean over settings below the largest one is >= the value at the largest.
``drop A s >= x``
    the sweep maximum exceeds A's mean at setting s by at least x.
"""

from __future__ import annotations

import configparser
import csv
import io
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import drift_stream as ds
from . import pipeline
from .config import Config, ConfigError, load_config
from .sim import metrics_report
from .sim.metrics import atomic_write, cycles_csv, fmt, summary_text
from .sim.policies import POLICY_NAMES

log = logging.getLogger(__name__)

KINDS = ("comparison", "ablation", "cameras", "fractions")
ABLATION_POLICIES = ("edgesync", "edgesync_f", "edgesync_tf", "edgesync_stf", "ams_like")
PER_SEED_FIELDS = (
    "policy", "setting", "seed", "accuracy", "mean_cycle_time", "cycles",
    "fixed_cycle_s", "upload_bytes", "download_bytes",
)
SUMMARY_FIELDS = ("policy", "setting", "seeds", "accuracy_mean", "accuracy_sd", "mean_cycle_time")
VERDICT_FIELDS = ("claim", "verdict", "wins", "seeds", "lhs", "rhs", "detail")


@dataclass
class ExperimentSpec:
    name: str
    kind: str = "comparison"
    policies: tuple = ()
    seeds: tuple = (1, 2, 3)
    cameras: tuple = ()
    fractions: tuple = ()
    fixed_cycle_time_s: Optional[float] = None
    clip_s: Optional[float] = None
    claims: tuple = ()
    overrides: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}")
        if not self.policies:
            raise ConfigError("experiment needs at least one policy")
        for p in self.policies:
            if p not in POLICY_NAMES:
                raise ConfigError(f"unknown policy {p!r}")
        if not self.seeds:
            raise ConfigError("experiment needs at least one seed")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("duplicate seeds")
        if self.claims and len(self.seeds) < 2:
            raise ConfigError("ordering claims need at least 2 seeds")
        if self.kind == "cameras" and (not self.cameras or min(self.cameras) < 1):
            raise ConfigError("camera sweep needs positive camera counts")
        if self.kind == "fractions":
            if not self.fractions or any(not 0 < k <= 1 for k in self.fractions):
                raise ConfigError("fraction sweep needs fractions in (0, 1]")
        if self.kind == "ablation" and "edgesync_stf" in self.policies and "edgesync" not in self.policies \
                and self.fixed_cycle_time_s is None:
            raise ConfigError("edgesync_stf needs edgesync in the ablation or an explicit fixed_cycle_time_s")
        if self.fixed_cycle_time_s is not None and self.fixed_cycle_time_s <= 0:
            raise ConfigError("fixed_cycle_time_s must be positive")
        for c in self.claims:
            parse_claim(c)

    def settings(self) -> list:
        if self.kind == "cameras":
            return list(self.cameras)
        if self.kind == "fractions":
            return list(self.fractions)
        return [""]


def _split(text: str) -> list[str]:
    return text.replace(",", " ").split()


def parse_spec(text: str, source: str = "<spec>") -> ExperimentSpec:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text, source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}".replace("\n", " ")) from exc
    if not cp.has_section("experiment"):
        raise ConfigError(f"{source}: missing [experiment] section")
    extra = set(cp.sections()) - {"experiment", "overrides"}
    if extra:
        raise ConfigError(f"{source}: unknown section(s) {sorted(extra)}")
    e = dict(cp["experiment"])
    known = {"name", "kind", "policies", "seeds", "cameras", "fractions", "fixed_cycle_time_s", "clip_s", "claims"}
    unknown = set(e) - known
    if unknown:
        raise ConfigError(f"{source}: unknown key(s) {sorted(unknown)}")
    try:
        spec = ExperimentSpec(
            name=e.get("name", os.path.splitext(os.path.basename(source))[0]),
            kind=e.get("kind", "comparison"),
            policies=tuple(_split(e.get("policies", ""))),
            seeds=tuple(int(s) for s in _split(e.get("seeds", "1 2 3"))),
            cameras=tuple(int(s) for s in _split(e.get("cameras", ""))),
            fractions=tuple(float(s) for s in _split(e.get("fractions", ""))),
            fixed_cycle_time_s=float(e["fixed_cycle_time_s"]) if e.get("fixed_cycle_time_s") else None,
            clip_s=float(e["clip_s"]) if e.get("clip_s") else None,
            claims=tuple(line.strip() for line in e.get("claims", "").splitlines() if line.strip()),
            overrides=dict(cp["overrides"]) if cp.has_section("overrides") else {},
        )
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    return spec


def load_spec(path: str) -> ExperimentSpec:
    with open(path) as fh:
        return parse_spec(fh.read(), path)


# -- claims ----------------------------------------------------------------------


def parse_claim(text: str) -> tuple:
    t = text.split()
    try:
        if len(t) == 3 and t[1] in (">", ">="):
            return ("order", t[1], t[0], t[2])
        if len(t) == 4 and t[1] == "between":
            return ("between", t[0], t[2], t[3])
        if len(t) == 5 and t[0] == "cycle_ratio" and t[3] in ("<=", ">="):
            return ("cycle_ratio", t[1], t[2], t[3], float(t[4]))
        if len(t) == 2 and t[0] == "nonincreasing":
            return ("nonincreasing", t[1])
        if len(t) == 4 and t[0] == "spread" and t[2] == "<":
            return ("spread", t[1], float(t[3]))
        if len(t) == 2 and t[0] == "interior_max":
            return ("interior_max", t[1])
        if len(t) == 5 and t[0] == "drop" and t[3] == ">=":
            return ("drop", t[1], float(t[2]), float(t[4]))
    except ValueError:
        pass
    raise ConfigError(f"cannot parse claim {text!r}")


def _setting_key(value: str):
    return float(value) if value != "" else 0.0


def _group(rows: Sequence[dict]) -> dict:
    """{policy: {setting: {seed: row}}} with numbers parsed back from text."""
    out: dict = {}
    for r in rows:
        out.setdefault(r["policy"], {}).setdefault(r["setting"], {})[int(r["seed"])] = {
            "accuracy": float(r["accuracy"]), "mean_cycle_time": float(r["mean_cycle_time"]),
        }
    return out


def _mean(d: dict, key: str) -> float:
    return float(np.mean([v[key] for v in d.values()]))


def _series(grouped: dict, policy: str) -> tuple[list, list]:
    settings = sorted(grouped[policy], key=_setting_key)
    return settings, [100 * _mean(grouped[policy][s], "accuracy") for s in settings]


def evaluate_claim(text: str, grouped: dict, gap: float) -> dict:
    """Verdict for one claim over the grouped per-seed rows; accuracies in points."""
    c = parse_claim(text)
    out = {"claim": text, "wins": "", "seeds": "", "lhs": "", "rhs": "", "detail": ""}
    names = {"order": c[2:4], "between": c[1:4], "cycle_ratio": c[1:3]}.get(c[0], c[1:2])
    missing = [n for n in names if n not in grouped]
    if missing:
        out.update(verdict="missing", detail=f"no results for {' '.join(missing)}")
        return out

    def cell(p):
        # comparisons are made at the first (or only) setting
        return grouped[p][sorted(grouped[p], key=_setting_key)[0]]

    kind = c[0]
    if kind == "order":
        op, a, b = c[1], c[2], c[3]
        A, B = cell(a), cell(b)
        seeds = sorted(set(A) & set(B))
        diffs = [100 * (A[s]["accuracy"] - B[s]["accuracy"]) for s in seeds]
        ma, mb = 100 * _mean({s: A[s] for s in seeds}, "accuracy"), 100 * _mean({s: B[s] for s in seeds}, "accuracy")
        wins = sum(d > 0 for d in diffs) if op == ">" else sum(d >= 0 for d in diffs)
        majority = wins * 2 > len(seeds)
        ok = majority and (ma - mb >= gap if op == ">" else ma >= mb)
        out.update(wins=wins, seeds=len(seeds), lhs=fmt(ma), rhs=fmt(mb),
                   detail=f"mean gap {ma - mb:.2f} pts; per-seed " + " ".join(f"{d:+.2f}" for d in diffs))
    elif kind == "between":
        a, b, d = c[1], c[2], c[3]
        ma, mb, md = (100 * _mean(cell(p), "accuracy") for p in (a, b, d))
        lo, hi = min(mb, md), max(mb, md)
        ok = lo <= ma <= hi
        out.update(lhs=fmt(ma), rhs=f"{fmt(lo)}..{fmt(hi)}", detail=f"{a} {ma:.2f} vs [{lo:.2f}, {hi:.2f}]")
    elif kind == "cycle_ratio":
        a, b, op, r = c[1], c[2], c[3], c[4]
        ta, tb = _mean(cell(a), "mean_cycle_time"), _mean(cell(b), "mean_cycle_time")
        ratio = ta / tb if tb > 0 else float("nan")
        ok = bool(ratio <= r) if op == "<=" else bool(ratio >= r)
        out.update(lhs=fmt(ta), rhs=fmt(tb), detail=f"ratio {ratio:.3f} {op} {r}")
    else:
        p = c[1]
        settings, means = _series(grouped, p)
        pairs = " ".join(f"{s}:{m:.2f}" for s, m in zip(settings, means))
        if kind == "nonincreasing":
            ok = all(means[i + 1] <= means[i] for i in range(len(means) - 1))
            out.update(detail=pairs)
        elif kind == "spread":
            spread = max(means) - min(means)
            ok = spread < c[2]
            out.update(lhs=fmt(spread), rhs=fmt(c[2]), detail=pairs)
        elif kind == "interior_max":
            inner = means[:-1]
            ok = bool(inner) and max(inner) >= means[-1]
            out.update(lhs=fmt(max(inner)) if inner else "", rhs=fmt(means[-1]), detail=pairs)
        else:
            at = [m for s, m in zip(settings, means) if np.isclose(_setting_key(s), c[2])]
            if not at:
                out.update(verdict="missing", detail=f"no setting {c[2]}")
                return out
            drop = max(means) - at[0]
            ok = drop >= c[3]
            out.update(lhs=fmt(drop), rhs=fmt(c[3]), detail=pairs)
    out["verdict"] = "pass" if ok else "fail"
    return out


def verdicts_from_rows(claims: Sequence[str], rows: Sequence[dict], gap: float = 1.0) -> list[dict]:
    """Claim verdicts as a pure function of per-seed rows (as read from ``per_seed.csv``)."""
    grouped = _group(rows)
    return [evaluate_claim(c, grouped, gap) for c in claims]


def summary_rows(rows: Sequence[dict]) -> list[dict]:
    grouped = _group(rows)
    out = []
    for p in dict.fromkeys(r["policy"] for r in rows):
        for s in sorted(grouped[p], key=_setting_key):
            cell = grouped[p][s]
            acc = np.array([v["accuracy"] for v in cell.values()])
            cyc = [v["mean_cycle_time"] for v in cell.values()]
            out.append({
                "policy": p, "setting": s, "seeds": len(acc),
                "accuracy_mean": fmt(float(acc.mean())),
                "accuracy_sd": fmt(float(acc.std(ddof=1)) if len(acc) > 1 else 0.0),
                "mean_cycle_time": fmt(float(np.mean(cyc))),
            })
    return out


# -- running ---------------------------------------------------------------------


@dataclass
class Run:
    policy: str
    setting: str
    seed: int
    accuracy: float
    mean_cycle_time: float
    cycles: int
    fixed_cycle_s: Optional[float]
    upload_bytes: int
    download_bytes: int
    metrics_csv: str
    summary: str

    def row(self) -> dict:
        return {
            "policy": self.policy, "setting": self.setting, "seed": str(self.seed),
            "accuracy": fmt(self.accuracy), "mean_cycle_time": fmt(self.mean_cycle_time),
            "cycles": str(self.cycles),
            "fixed_cycle_s": "" if self.fixed_cycle_s is None else fmt(self.fixed_cycle_s),
            "upload_bytes": str(self.upload_bytes), "download_bytes": str(self.download_bytes),
        }


def _one_run(cfg: Config, spec: ExperimentSpec, policy: str, setting, seed: int,
             fixed_cycle: Optional[float]) -> Run:
    model = pipeline.pretrained_student(cfg, seed)
    if spec.kind == "cameras":
        base = pipeline.catalog_streams(cfg, seed)
        streams = ds.partition_corpus(base, int(setting), spec.clip_s, seed)
    else:
        streams = pipeline.catalog_streams(cfg, seed)
    fraction = float(setting) if spec.kind == "fractions" else None
    pc = cfg.policy(policy, fixed_cycle, fraction)
    result = pipeline.simulate(cfg, seed, pc, streams, model)
    rep = metrics_report(result, cfg.get("report", "series_resolution_s"))
    return Run(policy, "" if setting == "" else str(setting), seed, rep.accuracy, rep.mean_cycle_time,
               rep.cycles, fixed_cycle, rep.upload_bytes, rep.download_bytes,
               cycles_csv(result.cycles, result.num_edges), summary_text(rep))


def _task(args):
    cfg_values, spec, policy, setting, seed, fixed_cycle = args
    return _one_run(Config(cfg_values), spec, policy, setting, seed, fixed_cycle)


def _run_all(cfg: Config, spec: ExperimentSpec, tasks: list, jobs: int) -> list[Run]:
    if jobs > 1 and len(tasks) > 1:
        payload = [(cfg.values(), spec, *t) for t in tasks]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_task, payload))
    return [_one_run(cfg, spec, *t) for t in tasks]


def execute(spec: ExperimentSpec, cfg: Optional[Config] = None, jobs: int = 1) -> list[Run]:
    """All (policy, setting, seed) runs of ``spec``, in a fixed order."""
    cfg = (cfg or load_config()).with_overrides(spec.overrides)
    cfg.validate()
    fixed = spec.fixed_cycle_time_s
    needs_probe = spec.kind == "ablation" and "edgesync_stf" in spec.policies and fixed is None
    first = [p for p in spec.policies if not (needs_probe and p == "edgesync_stf")]
    tasks = [(p, s, seed, fixed) for p in first for s in spec.settings() for seed in spec.seeds]
    runs = _run_all(cfg, spec, tasks, jobs)
    if needs_probe:
        # the fixed-cycle variant runs with the cycle time edgesync measured on the same seed
        measured = {r.seed: r.mean_cycle_time for r in runs if r.policy == "edgesync"}
        runs += _run_all(cfg, spec, [("edgesync_stf", "", seed, measured[seed]) for seed in spec.seeds], jobs)
    order = {p: i for i, p in enumerate(spec.policies)}
    runs.sort(key=lambda r: (order[r.policy], _setting_key(r.setting), spec.seeds.index(r.seed)))
    return runs


@dataclass
class ExperimentReport:
    spec: ExperimentSpec
    rows: list
    summary: list
    verdicts: list


def _csv(fields: Sequence[str], rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(fields), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: r[k] for k in fields})
    return buf.getvalue()


def report(spec: ExperimentSpec, runs: Sequence[Run], gap: float = 1.0) -> ExperimentReport:
    rows = [r.row() for r in runs]
    return ExperimentReport(spec, rows, summary_rows(rows), verdicts_from_rows(spec.claims, rows, gap))


def run_comparison(spec: ExperimentSpec, cfg: Optional[Config] = None, jobs: int = 1,
                   out_dir: Optional[str] = None) -> ExperimentReport:
    """Run every policy over every seed (and sweep setting) and judge the claims."""
    cfg = cfg or load_config()
    runs = execute(spec, cfg, jobs)
    rep = report(spec, runs, cfg.with_overrides(spec.overrides).get("report", "gap_points"))
    if out_dir is not None:
        write_report(rep, runs, out_dir)
    return rep


def run_ablation(spec: ExperimentSpec, cfg: Optional[Config] = None, jobs: int = 1,
                 out_dir: Optional[str] = None) -> ExperimentReport:
    unknown = set(spec.policies) - set(ABLATION_POLICIES)
    if unknown:
        raise ConfigError(f"not an ablation policy: {' '.join(sorted(unknown))}")
    if spec.kind != "ablation":
        spec = ExperimentSpec(**{**spec.__dict__, "kind": "ablation"})
    return run_comparison(spec, cfg, jobs, out_dir)


def run_spec(spec: ExperimentSpec, cfg: Optional[Config] = None, jobs: int = 1,
             out_dir: Optional[str] = None) -> ExperimentReport:
    if spec.kind == "ablation":
        return run_ablation(spec, cfg, jobs, out_dir)
    return run_comparison(spec, cfg, jobs, out_dir)


def write_report(rep: ExperimentReport, runs: Sequence[Run], out_dir: str) -> None:
    atomic_write(os.path.join(out_dir, "per_seed.csv"), _csv(PER_SEED_FIELDS, rep.rows))
    atomic_write(os.path.join(out_dir, "summary.csv"), _csv(SUMMARY_FIELDS, rep.summary))
    atomic_write(os.path.join(out_dir, "verdicts.csv"), _csv(VERDICT_FIELDS, rep.verdicts))
    for r in runs:
        tag = r.policy if r.setting == "" else f"{r.policy}-{r.setting}"
        d = os.path.join(out_dir, "runs", f"{tag}-seed{r.seed}")
        atomic_write(os.path.join(d, "metrics.csv"), r.metrics_csv)
        atomic_write(os.path.join(d, "summary.txt"), r.summary)


def read_rows(path: str) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def format_table(rep: ExperimentReport) -> str:
    """Plain-text table and verdict lines for standard output."""
    lines = [f"# {rep.spec.name}"]
    for r in rep.summary:
        label = r["policy"] if r["setting"] == "" else f"{r['policy']}@{r['setting']}"
        lines.append(f"{label:<24} acc {100 * float(r['accuracy_mean']):6.2f} +- {100 * float(r['accuracy_sd']):5.2f}"
                     f"  cycle {float(r['mean_cycle_time']):8.2f} s")
    for v in rep.verdicts:
        lines.append(f"{v['verdict'].upper():<5} {v['claim']}  ({v['detail']})")
    return "\n".join(lines) + "\n"
