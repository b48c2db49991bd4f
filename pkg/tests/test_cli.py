import json

import pytest

from radardet.cli import build_parser, main
from radardet.config import RunConfig

from cli_run import run_all, snapshot, write_config


@pytest.fixture(scope="module")
def two_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    first = run_all(write_config(root, "one"))
    second = run_all(write_config(root, "two"))
    return root, first, second


def test_every_command_reruns_identically(two_runs):
    root, first, second = two_runs
    assert first == second
    a, b = snapshot(root / "one"), snapshot(root / "two")
    assert a.keys() == b.keys()
    for name in a:
        assert a[name] == b[name], name


def test_rerun_in_place_is_identical(two_runs):
    root, first, _ = two_runs
    before = snapshot(root / "one")
    assert run_all(root / "one.json") == first
    assert snapshot(root / "one") == before


def test_report_contents(two_runs):
    root, first, _ = two_runs
    table = (root / "one" / "reports" / "table.txt").read_text()
    assert first["report"] == table
    for key in ("A_A,A", "A_B,B", "C_A,B", "M_B,A"):
        assert key in table
    summary = json.loads((root / "one" / "reports" / "summary.json").read_text())
    assert set(summary["cross_profile_degradation"]) == {"v1 A->B", "v1 B->A", "macro_f1 A->B", "macro_f1 B->A"}
    split = json.loads((root / "one" / "benchmark" / "split.json").read_text())
    assert len(split["test"]) == 1 and len(split["train"]) == 4


def test_seed_flag_changes_output(tmp_path):
    cfg = write_config(tmp_path, "s")
    main(["generate", str(cfg)])
    base = (tmp_path / "s" / "benchmark" / "B.csv").read_bytes()
    main(["generate", str(cfg), "--seed", "4"])
    assert (tmp_path / "s" / "benchmark" / "B.csv").read_bytes() != base


def test_missing_stage_reports_clearly(tmp_path):
    cfg = write_config(tmp_path, "m")
    with pytest.raises(SystemExit, match="earlier pipeline stage"):
        main(["tune", str(cfg)])


def test_config_validation(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"tune": {"budgett": 3}}))
    with pytest.raises(ValueError, match="budgett"):
        RunConfig.load(p)
    p.write_text(json.dumps({"profiles": ["C"]}))
    with pytest.raises(SystemExit, match="unknown sensor"):
        main(["generate", str(p)])
    t = tmp_path / "c.toml"
    t.write_text('workdir = "w"\nseed = 7\n[tune]\nbudget = 12\n')
    cfg = RunConfig.load(t)
    assert cfg.seed == 7 and cfg.tune.budget == 12 and cfg.workdir == str(tmp_path / "w")


def test_parser_lists_all_commands():
    sub = build_parser()._subparsers._group_actions[0].choices
    assert set(sub) == {
        "generate", "tune", "features", "select", "train",
        "eval-cluster", "eval-class", "eval-pipeline", "report",
    }
