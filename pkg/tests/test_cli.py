import re

import pytest

from edgesync import __version__
from edgesync.cli import EXIT_RUNTIME, EXIT_USAGE, main

ERROR_LINE = re.compile(r"^edgesync: error\[(usage|runtime)\]: \S.*$")


@pytest.fixture
def small_ini(tmp_path):
    path = tmp_path / "small.ini"
    path.write_text("[stream]\nnum_edges = 2\nduration = 300\n\n[student]\npretrain_epochs = 5\n\n"
                    "[bho]\nmax_iters = 3\ninit_points = 3\nmax_rounds = 1\nwindow_samples = 100\n")
    return str(path)


def one_error(capsys, kind):
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and ERROR_LINE.match(err[0]) and f"[{kind}]" in err[0]


def test_help_and_version(capsys):
    assert main(["--help"]) == 0
    assert "simulate" in capsys.readouterr().out
    assert main(["--version"]) == 0
    assert __version__ in capsys.readouterr().out


def test_simulate_requires_config(capsys, tmp_path):
    assert main(["simulate", "--out-dir", str(tmp_path)]) == EXIT_USAGE
    one_error(capsys, "usage")


def test_unknown_flag_and_missing_command(capsys):
    assert main(["simulate", "--frobnicate"]) == EXIT_USAGE
    one_error(capsys, "usage")
    assert main([]) == EXIT_USAGE
    one_error(capsys, "usage")


def test_bad_config_is_usage_error(capsys, tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[trainer]\npatience = -1\n")
    assert main(["simulate", "--config", str(bad), "--out-dir", str(tmp_path / "o")]) == EXIT_USAGE
    one_error(capsys, "usage")
    assert not (tmp_path / "o").exists()


def test_runtime_failure_writes_nothing(capsys, small_ini, tmp_path):
    out = tmp_path / "run"
    code = main(["simulate", "--config", small_ini, "--streams", str(tmp_path / "nope"), "--out-dir", str(out)])
    assert code == EXIT_RUNTIME
    one_error(capsys, "runtime")
    assert not out.exists()


def test_full_pipeline(capsys, small_ini, tmp_path):
    data, hist = tmp_path / "data", tmp_path / "hist"
    assert main(["gen-data", "--config", small_ini, "--seed", "3", "--out", str(data)]) == 0
    assert main(["gen-data", "--config", small_ini, "--seed", "3", "--history", "--out", str(hist)]) == 0
    assert sorted(p.name for p in data.iterdir()) == ["edge00.stream", "edge01.stream"]
    prof = tmp_path / "profile.txt"
    assert main(["profile-offline", "--config", small_ini, "--streams", str(hist), "--out", str(prof)]) == 0
    run = tmp_path / "run"
    assert main(["simulate", "--config", small_ini, "--seed", "3", "--streams", str(data),
                 "--profile", str(prof), "--out-dir", str(run), "--trace", "--dump-models"]) == 0
    assert prof.exists()
    for name in ("metrics.csv", "summary.txt", "trace.csv", "models/edge00.ckpt", "models/edge01.ckpt"):
        assert (run / name).exists(), name
    out = capsys.readouterr().out
    assert "accuracy=" in out
    assert not list(tmp_path.rglob("*.tmp")) and not list(tmp_path.rglob(".tmp-*"))


def test_generated_streams_match_in_memory_run(capsys, small_ini, tmp_path):
    data = tmp_path / "data"
    main(["gen-data", "--config", small_ini, "--seed", "4", "--out", str(data)])
    main(["simulate", "--config", small_ini, "--seed", "4", "--streams", str(data), "--out-dir", str(tmp_path / "a")])
    main(["simulate", "--config", small_ini, "--seed", "4", "--out-dir", str(tmp_path / "b")])
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()


def test_single_schedule_and_set_override(capsys, small_ini, tmp_path):
    one = tmp_path / "d" / "abrupt.stream"
    assert main(["gen-data", "--config", small_ini, "--schedule", "abrupt_shift", "--seed", "2", "--out", str(one)]) == 0
    assert one.read_text().startswith("EDGESYNC-STREAM v1 C=6 D=32 rate=2.0 n=600")
    assert main(["simulate", "--config", small_ini, "--set", "policy.name=ams_like",
                 "--out-dir", str(tmp_path / "r")]) == 0
    assert "policy = ams_like" in (tmp_path / "r" / "summary.txt").read_text()
    assert main(["simulate", "--config", small_ini, "--set", "nodot=1", "--out-dir", str(tmp_path / "x")]) == EXIT_USAGE


def test_compare_writes_tables(capsys, tmp_path):
    spec = tmp_path / "mini.spec"
    spec.write_text("[experiment]\npolicies = no_adapt edgesync\nseeds = 1 2\nclaims =\n    edgesync > no_adapt\n"
                    "[overrides]\nstream.num_edges = 2\nstream.duration = 240\nstudent.pretrain_epochs = 5\n")
    out = tmp_path / "out"
    assert main(["compare", "--spec", str(spec), "--out-dir", str(out)]) == 0
    for name in ("per_seed.csv", "summary.csv", "verdicts.csv"):
        assert (out / name).exists()
    assert "edgesync > no_adapt" in capsys.readouterr().out


def test_default_config_command(capsys):
    assert main(["default-config"]) == 0
    assert "[trainer]" in capsys.readouterr().out


def test_filter_flags_override_config(capsys, small_ini, tmp_path):
    args = ["simulate", "--config", small_ini, "--out-dir", str(tmp_path / "k")]
    assert main(args + ["--upload-fraction", "1.0", "--alpha", "0.5", "--timeliness-mode", "literal"]) == 0
    full = int((tmp_path / "k" / "summary.txt").read_text().split("upload_bytes = ")[1].split()[0])
    assert main(args[:-1] + [str(tmp_path / "j"), "--upload-fraction", "0.5"]) == 0
    half = int((tmp_path / "j" / "summary.txt").read_text().split("upload_bytes = ")[1].split()[0])
    assert half < full
    assert main(args + ["--timeliness-mode", "sideways"]) == EXIT_USAGE
    assert main(args + ["--upload-fraction", "1.5"]) == EXIT_USAGE
