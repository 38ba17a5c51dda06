import os

import pytest

from edgesync import experiments as ex
from edgesync.config import ConfigError

from conftest import SPECS

SMALL = """
[overrides]
stream.num_edges = 2
stream.duration = 240
student.pretrain_epochs = 5
"""


def rows(table):
    """{(policy, setting): [acc per seed]} -> per-seed rows."""
    out = []
    for (p, s), accs in table.items():
        for seed, a in enumerate(accs, start=1):
            out.append({"policy": p, "setting": s, "seed": str(seed), "accuracy": repr(a),
                        "mean_cycle_time": "10.0" if p == "a" else "30.0"})
    return out


def verdict(claim, table, gap=1.0):
    return ex.verdicts_from_rows([claim], rows(table), gap)[0]


def test_strict_order_needs_majority_and_gap():
    assert verdict("a > b", {("a", ""): [0.80, 0.80, 0.70], ("b", ""): [0.75, 0.75, 0.75]})["verdict"] == "pass"
    # majority but gap below one point
    assert verdict("a > b", {("a", ""): [0.76, 0.76, 0.70], ("b", ""): [0.75, 0.75, 0.75]})["verdict"] == "fail"
    # large mean gap carried by one seed only
    assert verdict("a > b", {("a", ""): [0.99, 0.74, 0.74], ("b", ""): [0.75, 0.75, 0.75]})["verdict"] == "fail"


def test_weak_order_and_between():
    t = {("a", ""): [0.7, 0.7], ("b", ""): [0.7, 0.6], ("c", ""): [0.5, 0.5]}
    assert verdict("a >= b", t)["verdict"] == "pass"
    assert verdict("b >= a", t)["verdict"] == "fail"
    assert verdict("b between a c", t)["verdict"] == "pass"
    assert verdict("c between a b", t)["verdict"] == "fail"


def test_cycle_ratio():
    t = {("a", ""): [0.7, 0.7], ("b", ""): [0.7, 0.7]}
    assert verdict("cycle_ratio a b <= 0.5", t)["verdict"] == "pass"
    assert verdict("cycle_ratio b a >= 1.15", t)["verdict"] == "pass"
    assert verdict("cycle_ratio b a <= 1.0", t)["verdict"] == "fail"


def test_sweep_claims():
    t = {("a", "0.2"): [0.70, 0.70], ("a", "0.6"): [0.80, 0.80], ("a", "1.0"): [0.78, 0.78]}
    assert verdict("interior_max a", t)["verdict"] == "pass"
    assert verdict("drop a 0.2 >= 1.0", t)["verdict"] == "pass"
    assert verdict("drop a 0.6 >= 1.0", t)["verdict"] == "fail"
    assert verdict("nonincreasing a", t)["verdict"] == "fail"
    assert verdict("spread a < 1.5", t)["verdict"] == "fail"
    cams = {("a", "1"): [0.8, 0.8], ("a", "4"): [0.8, 0.8], ("a", "7"): [0.7, 0.7]}
    assert verdict("nonincreasing a", cams)["verdict"] == "pass"


def test_missing_policy_is_reported():
    assert verdict("a > z", {("a", ""): [0.7, 0.7]})["verdict"] == "missing"


@pytest.mark.parametrize("claim", ["a >> b", "between a b", "drop a x >= 1", "cycle_ratio a b == 1"])
def test_bad_claims(claim):
    with pytest.raises(ConfigError):
        ex.parse_claim(claim)


def test_spec_validation():
    with pytest.raises(ConfigError, match="2 seeds"):
        ex.parse_spec("[experiment]\npolicies = edgesync no_adapt\nseeds = 1\nclaims = edgesync > no_adapt\n")
    with pytest.raises(ConfigError, match="unknown policy"):
        ex.parse_spec("[experiment]\npolicies = edgesink\n")
    with pytest.raises(ConfigError, match="unknown key"):
        ex.parse_spec("[experiment]\npolicies = edgesync\ncolour = red\n")
    with pytest.raises(ConfigError):
        ex.parse_spec("[experiment]\nkind = fractions\npolicies = edgesync\nfractions = 0 0.5\n")


@pytest.mark.parametrize("name", ["table1", "table3", "fig3", "fig5"])
def test_committed_specs_parse(name):
    spec = ex.load_spec(os.path.join(SPECS, f"{name}.spec"))
    assert spec.name == name
    assert len(spec.seeds) >= 2 and spec.claims


def test_single_policy_gives_one_row_and_no_verdicts(tmp_path):
    spec = ex.parse_spec("[experiment]\nname = one\npolicies = no_adapt\nseeds = 1\n" + SMALL)
    rep = ex.run_comparison(spec, out_dir=str(tmp_path))
    assert len(rep.summary) == 1 and rep.verdicts == []
    assert (tmp_path / "runs" / "no_adapt-seed1" / "summary.txt").exists()


def test_verdicts_recompute_from_csv_and_reproduce(tmp_path):
    text = ("[experiment]\nname = mini\nkind = ablation\n"
            "policies = edgesync edgesync_f edgesync_stf\nseeds = 1 2\n"
            "claims =\n    edgesync >= edgesync_f\n    edgesync_f between edgesync edgesync_stf\n" + SMALL)
    spec = ex.parse_spec(text)
    a, b = tmp_path / "a", tmp_path / "b"
    rep = ex.run_spec(spec, out_dir=str(a))
    ex.run_spec(spec, out_dir=str(b))
    recomputed = ex.verdicts_from_rows(spec.claims, ex.read_rows(str(a / "per_seed.csv")))
    assert recomputed == rep.verdicts
    for name in ("per_seed.csv", "summary.csv", "verdicts.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    stf = [r for r in rep.rows if r["policy"] == "edgesync_stf"]
    es = {r["seed"]: r["mean_cycle_time"] for r in rep.rows if r["policy"] == "edgesync"}
    assert all(r["fixed_cycle_s"] == es[r["seed"]] for r in stf)


def test_parallel_runs_match_serial():
    spec = ex.parse_spec("[experiment]\npolicies = edgesync ams_like\nseeds = 1 2\n" + SMALL)
    serial = ex.run_comparison(spec, jobs=1)
    parallel = ex.run_comparison(spec, jobs=2)
    assert serial.rows == parallel.rows


def test_ablation_rejects_other_policies():
    spec = ex.parse_spec("[experiment]\npolicies = one_time\n")
    with pytest.raises(ConfigError):
        ex.run_ablation(spec)
