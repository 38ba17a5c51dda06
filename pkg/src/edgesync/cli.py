"""Command line entry point.

Subcommands::

    edgesync gen-data --seed 1 --out data/
    edgesync profile-offline --config edgesync.ini --out profile.txt
    edgesync simulate --config edgesync.ini --seed 1 --out-dir run/ --profile profile.txt
    edgesync compare --spec specs/table1.spec --out-dir out/table1

Exit status is 0 on success, 2 for usage or configuration errors and 1 for
failures while running. Errors are a single ``edgesync: error[<kind>]: ...``
line on standard error; logs also go to standard error.
"""

from __future__ import annotations

import argparse
import glob
import logging
import os
import sys
from typing import Optional, Sequence

from . import __version__
from . import drift_stream as ds
from . import experiments, pipeline
from .bho import read_profile, write_profile
from .config import Config, ConfigError, load_config
from .core_types import ValidationError, split_seed
from .sim.metrics import atomic_write, write_outputs
from .sim.policies import POLICY_NAMES
from .student import save_checkpoint

log = logging.getLogger("edgesync")

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # one line instead of usage + message
        raise UsageError(message)


def _fail(kind: str, message: str) -> None:
    print(f"edgesync: error[{kind}]: {' '.join(str(message).split())}", file=sys.stderr)


def _overrides(pairs: Sequence[str]) -> dict:
    out = {}
    for item in pairs or ():
        key, sep, value = item.partition("=")
        if not sep or "." not in key:
            raise UsageError(f"--set expects section.key=value, got {item!r}")
        out[key.strip()] = value.strip()
    return out


_FILTER_FLAGS = {"upload_fraction": "filter.upload_fraction", "alpha": "filter.alpha", "beta": "filter.beta"}
_MODES = {"recency": "recency_decay", "literal": "paper_literal"}


def _config(args) -> Config:
    """Defaults < config file < --set < dedicated flags."""
    overrides = _overrides(getattr(args, "set", None))
    for attr, key in _FILTER_FLAGS.items():
        if getattr(args, attr, None) is not None:
            overrides[key] = str(getattr(args, attr))
    if getattr(args, "timeliness_mode", None):
        overrides["filter.timeliness_mode"] = _MODES[args.timeliness_mode]
    return load_config(getattr(args, "config", None), overrides)


def _read_streams(directory: str) -> list[ds.FeatureStream]:
    paths = sorted(glob.glob(os.path.join(directory, "*.stream")))
    if not paths:
        raise ValidationError(f"no *.stream files in {directory}")
    return [ds.load_feature_file(p, os.path.splitext(os.path.basename(p))[0]) for p in paths]


# -- subcommands -----------------------------------------------------------------


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    s = cfg["stream"]
    if args.schedule:
        # one named schedule, written to the file given by --out
        geo = ds.Geometry.create(args.seed, s["num_classes"], s["feature_dim"])
        edge_seed = split_seed(args.seed, "edge0")
        stream = ds.generate(ds.catalog_schedule(args.schedule, geo, edge_seed, s["duration"]), edge_seed, s["rate"])
        parent = os.path.dirname(os.path.abspath(args.out))
        os.makedirs(parent, exist_ok=True)
        ds.save_stream(stream, args.out)
        print(args.out)
        return EXIT_OK
    os.makedirs(args.out, exist_ok=True)
    streams = pipeline.catalog_streams(cfg, args.seed, tag="history-" if args.history else "")
    for e, stream in enumerate(streams):
        path = os.path.join(args.out, f"edge{e:02d}.stream")
        ds.save_stream(stream, path)
        print(path)
    log.info("wrote %d stream(s) to %s", len(streams), args.out)
    return EXIT_OK


def cmd_profile(args) -> int:
    cfg = _config(args)
    streams = _read_streams(args.streams) if args.streams else None
    result = pipeline.profile(cfg, args.seed, streams)
    write_profile(result, args.out)
    p = result.params
    print(f"learning_rate={p.learning_rate!r} momentum={p.momentum!r} weight_decay={p.weight_decay!r} "
          f"value={result.value!r}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _config(args)
    streams = _read_streams(args.streams) if args.streams else None
    h = read_profile(args.profile) if args.profile else None
    policy = cfg.policy(args.policy) if args.policy else None
    result = pipeline.simulate(cfg, args.seed, policy, streams, h=h)
    rep = write_outputs(result, args.out_dir, args.trace, cfg.get("report", "series_resolution_s"))
    if args.dump_models:
        d = os.path.join(args.out_dir, "models")
        os.makedirs(d, exist_ok=True)
        for e, m in enumerate(result.final_models):
            save_checkpoint(m, os.path.join(d, f"edge{e:02d}.ckpt"))
    print(f"policy={rep.policy} accuracy={rep.accuracy!r} cycles={rep.cycles} "
          f"mean_cycle_time_s={rep.mean_cycle_time!r}")
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = _config(args)
    spec = experiments.load_spec(args.spec)
    rep = experiments.run_spec(spec, cfg, args.jobs, args.out_dir)
    sys.stdout.write(experiments.format_table(rep))
    return EXIT_OK


def cmd_default_config(args) -> int:
    from .config import render_default
    text = render_default()
    if args.out:
        atomic_write(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="edgesync", description="Continuous edge-model updating simulator.")
    p.add_argument("--version", action="version", version=f"edgesync {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging on stderr")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    def common(sp, config_required=False):
        sp.add_argument("--config", required=config_required, help="INI config file")
        sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config value")
        sp.add_argument("--seed", type=int, default=1)

    g = sub.add_parser("gen-data", help="write synthetic drift streams")
    common(g)
    g.add_argument("--schedule", choices=ds.CATALOG, help="one named schedule instead of the edge set")
    g.add_argument("--history", action="store_true", help="historical streams (for offline profiling)")
    g.add_argument("--out", required=True, help="output directory, or the output file with --schedule")
    g.set_defaults(func=cmd_gen_data)

    pr = sub.add_parser("profile-offline", help="search training hyperparameters offline")
    common(pr)
    pr.add_argument("--streams", help="directory of *.stream files (default: generated history)")
    pr.add_argument("--out", required=True, help="profile file to write")
    pr.set_defaults(func=cmd_profile)

    s = sub.add_parser("simulate", help="run one policy over the edge streams")
    common(s, config_required=True)
    s.add_argument("--policy", choices=POLICY_NAMES, help="overrides [policy] name")
    s.add_argument("--streams", help="directory of *.stream files (default: generated)")
    s.add_argument("--profile", help="hyperparameter profile from profile-offline")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--trace", action="store_true", help="also write the per-sample trace.csv")
    s.add_argument("--dump-models", action="store_true", help="write final edge checkpoints")
    s.add_argument("--upload-fraction", type=float, help="share k of each window to upload")
    s.add_argument("--alpha", type=float, help="weight of the adaptability (entropy) score")
    s.add_argument("--beta", type=float, help="weight of the timeliness score")
    s.add_argument("--timeliness-mode", choices=sorted(_MODES), help="recency (default) or literal")
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("compare", help="run an experiment spec and judge its claims")
    c.add_argument("--config", help="INI config file (spec overrides apply on top)")
    c.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    c.add_argument("--spec", required=True)
    c.add_argument("--out-dir", required=True)
    c.add_argument("--jobs", type=int, default=1, help="parallel simulations")
    c.set_defaults(func=cmd_compare)

    d = sub.add_parser("default-config", help="print the annotated default config")
    d.add_argument("--out")
    d.set_defaults(func=cmd_default_config)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("missing command; see --help")
        if getattr(args, "jobs", 1) < 1:
            raise UsageError("--jobs must be at least 1")
    except UsageError as exc:
        _fail("usage", exc)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)

    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        _fail("usage", exc)
        return EXIT_USAGE
    except (ValidationError, OSError, ValueError) as exc:
        _fail("runtime", exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
