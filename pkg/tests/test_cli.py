import csv
import json

import pytest

from collusim import cli

FAST = ["--rounds", "600", "--quiet"]


def run(args):
    return cli.main(args)


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert run(["run", "--trials", "3", "--out", str(out)] + FAST) == 0
    return out


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_run_outputs(run_dir):
    assert sorted(p.name for p in run_dir.iterdir()) == ["manifest.json", "summary.json", "trials.csv"]
    table = rows(run_dir / "trials.csv")
    assert len(table) == 12
    assert list(table[0])[:11] == cli.TRIAL_COLUMNS
    assert {r["condition"] for r in table} == {"baseline", "platform_only", "seller_only", "joint"}
    manifest = json.loads((run_dir / "manifest.json").read_text())
    assert manifest["seed_base"] == 42 and manifest["config"]["rounds"] == 600
    summary = json.loads((run_dir / "summary.json").read_text())
    assert summary["complementarity"]["n"] == 3


def test_twelve_significant_digits(run_dir):
    for r in rows(run_dir / "trials.csv"):
        digits = r["cs_mean"].lstrip("-").replace(".", "").lstrip("0").split("e")[0]
        assert len(digits) <= 12


def test_byte_identical_reruns(run_dir, tmp_path):
    assert run(["run", "--trials", "3", "--out", str(tmp_path), "--threads", "2"] + FAST) == 0
    assert (tmp_path / "trials.csv").read_bytes() == (run_dir / "trials.csv").read_bytes()
    again = tmp_path / "again"
    assert run(["rerun", str(run_dir / "manifest.json"), "--out", str(again)]) == 0
    assert (again / "trials.csv").read_bytes() == (run_dir / "trials.csv").read_bytes()


def test_report_round_trip(run_dir, capsys):
    assert run(["report", str(run_dir / "trials.csv"), "--summary", str(run_dir / "summary.json")]) == 0
    assert "matches" in capsys.readouterr().err


def test_report_on_split_condition_files(run_dir, tmp_path):
    lines = (run_dir / "trials.csv").read_text().splitlines()
    header, body = lines[0], lines[1:]
    paths = []
    for cond in ("baseline", "platform_only", "seller_only", "joint"):
        p = tmp_path / f"{cond}.csv"
        p.write_text("\n".join([header] + [x for x in body if f",{cond}," in x]) + "\n")
        paths.append(str(p))
    assert run(["report", *paths, "--summary", str(run_dir / "summary.json")]) == 0


def test_report_rejects_bad_files(run_dir, tmp_path, capsys):
    text = (run_dir / "trials.csv").read_text()
    truncated = tmp_path / "trunc.csv"
    truncated.write_text(text[: len(text) // 2].rsplit(",", 1)[0] + "\n")
    assert run(["report", str(truncated)]) != 0
    renamed = tmp_path / "renamed.csv"
    renamed.write_text(text.replace("cs_mean", "surplus", 1))
    assert run(["report", str(renamed)]) != 0
    assert "cs_mean" in capsys.readouterr().err


def test_single_trial_flags_null(tmp_path):
    assert run(["run", "--trials", "1", "--out", str(tmp_path)] + FAST) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["complementarity"]["d"] is None and summary["complementarity"]["ci"] is None


def test_invalid_config_leaves_no_outputs(tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"rounds": 100, "warp_speed": 9}))
    out = tmp_path / "out"
    assert run(["run", "--config", str(cfg), "--trials", "1", "--out", str(out)] + FAST) != 0
    assert not out.exists() or not any(out.iterdir())
    cfg.write_text("{not json")
    assert run(["run", "--config", str(cfg), "--trials", "1", "--out", str(out)]) != 0


def test_unknown_axis_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        run(["sweep", "phase-of-moon", "--out", "unused"])
    assert exc.value.code == 2
    assert "gatekeeper-w" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        run(["sweep", "algorithm", "dqn", "--out", "unused"])


def test_sweep_rows(tmp_path):
    assert run(["sweep", "algorithm", "qlearning", "sarsa", "exp3", "--trials", "2", "--out", str(tmp_path)]
               + FAST) == 0
    table = rows(tmp_path / "sweep.csv")
    assert [r["value"] for r in table] == ["qlearning", "sarsa", "exp3"]
    assert list(table[0]) == cli.SWEEP_COLUMNS


@pytest.mark.slow
def test_factorial_has_sixteen_rows(tmp_path):
    assert run(["factorial", "--trials", "2", "--rounds", "300", "--out", str(tmp_path), "--quiet"]) == 0
    table = rows(tmp_path / "factorial.csv")
    assert len(table) == 16 and list(table[0]) == cli.FACTORIAL_COLUMNS


def test_convergence_outputs(tmp_path):
    assert run(["convergence", "--trials", "2", "--every", "200", "--out", str(tmp_path)] + FAST) == 0
    assert len(rows(tmp_path / "convergence.csv")) == 3
    assert len(rows(tmp_path / "trajectory.csv")) == 3
