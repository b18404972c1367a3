"""Command-line front end: run suites and sweeps, write CSV/JSON, re-derive reports."""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
from dataclasses import asdict, replace
from datetime import datetime, timezone
from pathlib import Path
from types import SimpleNamespace
from typing import Optional

import numpy as np

from . import __version__, analysis, experiment, kernel
from .errors import CollusimError, ConfigurationError, FormatError
from .experiment import CONDITIONS, Condition, TrialConfig

TRIAL_COLUMNS = [
    "trial", "condition", "seed", "cs_mean", "platform_rev", "seller_profit", "total_welfare",
    "mean_w", "mean_manip", "mean_bid", "q_stability",
]
SWEEP_COLUMNS = [
    "axis", "value", "trials", "joint_effect", "platform_effect", "seller_effect",
    "seller_effect_ci_low", "seller_effect_ci_high", "seller_harm_rate", "seller_effect_d",
    "complementarity", "comp_ci_low", "comp_ci_high", "cohens_d", "t_stat", "p_value",
    "positive_trials", "cs_baseline", "cs_platform", "cs_seller", "cs_joint",
    "platform_rev_joint", "seller_profit_joint", "mean_w_joint", "mean_manip_joint",
]
FACTORIAL_COLUMNS = ["position", "endorsement", "manipulation", "decoy", "joint_effect", "complementarity", "cohens_d"]
CONVERGENCE_COLUMNS = ["threshold", "mean_round", "median_round", "fraction_reaching", "reached", "trials"]
MANIFEST_VERSION = 1


def fmt(x) -> str:
    """12 significant digits; empty for missing values."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        if not math.isfinite(x):
            return ""
        return f"{float(x):.12g}"
    return str(x)


def csv_text(columns: list, rows: list) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([fmt(row.get(c)) for c in columns])
    return buf.getvalue()


def jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


class Outputs:
    """Collects output files and writes them only when everything succeeded."""

    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self.files: dict = {}

    def add(self, name: str, text: str) -> None:
        self.files[name] = text

    def commit(self) -> list:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        written = []
        try:
            for name, text in self.files.items():
                tmp = self.out_dir / f".{name}.tmp"
                with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
                    fh.write(text)
                written.append(tmp)
            for tmp in written:
                tmp.replace(self.out_dir / tmp.name[1:-4])
        except OSError:
            for tmp in written:
                tmp.unlink(missing_ok=True)
            for name in self.files:
                (self.out_dir / name).unlink(missing_ok=True)
            raise
        return sorted(self.files)


# -- configuration -----------------------------------------------------------


def load_config(path: Optional[str]) -> TrialConfig:
    if path is None:
        return TrialConfig()
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config {path} is not valid JSON: {exc}") from exc
    return TrialConfig.from_dict(data)


def apply_overrides(config: TrialConfig, args) -> TrialConfig:
    changes = {}
    if getattr(args, "rounds", None) is not None:
        changes["rounds"] = args.rounds
    if getattr(args, "seed_base", None) is not None:
        changes["seed_base"] = args.seed_base
    return replace(config, **changes) if changes else config


# -- rows --------------------------------------------------------------------


def trial_row(r, config_label: Optional[str] = None) -> dict:
    row = {
        "trial": r.trial,
        "condition": r.condition,
        "seed": r.seed,
        "cs_mean": r.cs_mean,
        "platform_rev": r.platform_mean,
        "seller_profit": r.seller_mean,
        "total_welfare": r.cs_mean + r.platform_mean + r.seller_mean,
        "mean_w": r.mean_w,
        "mean_manip": r.mean_manip,
        "mean_bid": r.mean_bid,
        "q_stability": float(r.q_change.mean()) if r.q_change.size else None,
    }
    for i, x in enumerate(r.win_rate):
        row[f"win_rate_{i + 1}"] = float(x)
    if config_label is not None:
        row["config"] = config_label
    return row


def trial_columns(n_sellers: int, with_config: bool) -> list:
    cols = (["config"] if with_config else []) + TRIAL_COLUMNS
    return cols + [f"win_rate_{i + 1}" for i in range(n_sellers)]


def parse_trials_csv(text: str, source: str = "trials.csv") -> list:
    """Parse a trials CSV back into light records; validates the header."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise FormatError(f"{source}: empty file") from None
    offset = 1 if header and header[0] == "config" else 0
    expected = TRIAL_COLUMNS
    got = header[offset:offset + len(expected)]
    for j, (want, have) in enumerate(zip(expected, got + [None] * len(expected))):
        if want != have:
            raise FormatError(f"{source}: column {offset + j + 1} should be {want!r}, found {have!r}")
    win_cols = header[offset + len(expected):]
    for j, name in enumerate(win_cols):
        if name != f"win_rate_{j + 1}":
            raise FormatError(f"{source}: unexpected column {name!r}")
    if not win_cols:
        raise FormatError(f"{source}: missing win_rate columns")
    records = []
    for line_no, row in enumerate(reader, start=2):
        if len(row) != len(header):
            raise FormatError(f"{source}: line {line_no} has {len(row)} fields, expected {len(header)}")
        cells = dict(zip(header, row))
        try:
            q = cells["q_stability"]
            records.append(SimpleNamespace(
                config=cells.get("config"),
                trial=int(cells["trial"]),
                condition=Condition(cells["condition"]).value,
                seed=int(cells["seed"]),
                cs_mean=float(cells["cs_mean"]),
                platform_mean=float(cells["platform_rev"]),
                seller_mean=float(cells["seller_profit"]),
                mean_w=float(cells["mean_w"]),
                mean_manip=float(cells["mean_manip"]),
                mean_bid=float(cells["mean_bid"]),
                q_change=np.array([float(q)]) if q else np.empty(0),
                win_rate=np.array([float(cells[c]) for c in win_cols]),
            ))
        except (ValueError, KeyError) as exc:
            raise FormatError(f"{source}: line {line_no}: {exc}") from exc
    return records


def group_records(records: list) -> dict:
    """``{config label: {condition: [records sorted by trial]}}``."""
    groups: dict = {}
    for r in records:
        groups.setdefault(r.config, {}).setdefault(r.condition, []).append(r)
    for suite in groups.values():
        for cond, rs in suite.items():
            rs.sort(key=lambda x: x.trial)
            trials = [x.trial for x in rs]
            if len(set(trials)) != len(trials):
                raise FormatError(f"duplicate trial indices for condition {cond!r}")
        lengths = {c: [x.trial for x in rs] for c, rs in suite.items()}
        first = next(iter(lengths.values()))
        if any(v != first for v in lengths.values()):
            raise FormatError("conditions do not cover the same trial indices; cannot pair them")
    return groups


def suite_report(suite: dict, quality: Optional[list] = None) -> dict:
    summary = analysis.summarize_suite(suite)
    out = summary.as_dict()
    out["welfare"] = [asdict(r) for r in analysis.welfare_decomposition(suite)]
    if analysis.BASELINE in suite and analysis.JOINT in suite:
        out["deadweight_loss"] = analysis.deadweight_loss(suite)
    if quality is not None:
        corr = {}
        for c, rs in suite.items():
            try:
                corr[c] = analysis.suite_quality_correlation(rs, quality)
            except CollusimError:
                corr[c] = None
        out["quality_win_correlation"] = corr
    out["q_stability"] = {c: analysis.suite_q_stability(rs) for c, rs in suite.items()}
    return jsonable(out)


def sweep_row(axis: str, label: str, suite: dict) -> dict:
    s = analysis.summarize_suite(suite)
    row = {"axis": axis, "value": label, "trials": len(next(iter(suite.values())))}
    cond = s.conditions
    for key, name in (("joint_effect", analysis.JOINT), ("platform_effect", analysis.PLATFORM),
                      ("seller_effect", analysis.SELLER)):
        if name in cond:
            row[key] = cond[name].effect
    if analysis.SELLER in cond:
        st = cond[analysis.SELLER]
        row["seller_effect_ci_low"], row["seller_effect_ci_high"] = st.effect_ci or (None, None)
        row["seller_harm_rate"] = st.harm_rate
        row["seller_effect_d"] = st.effect_d
    comp = s.complementarity
    if comp is not None:
        row.update(complementarity=comp.mean, cohens_d=comp.d, t_stat=comp.t, p_value=comp.p,
                   positive_trials=comp.positive)
        row["comp_ci_low"], row["comp_ci_high"] = comp.ci or (None, None)
    for key, name in (("cs_baseline", analysis.BASELINE), ("cs_platform", analysis.PLATFORM),
                      ("cs_seller", analysis.SELLER), ("cs_joint", analysis.JOINT)):
        if name in cond:
            row[key] = cond[name].cs_mean
    if analysis.JOINT in cond:
        j = cond[analysis.JOINT]
        row.update(platform_rev_joint=j.platform, seller_profit_joint=j.sellers,
                   mean_w_joint=j.mean_w, mean_manip_joint=j.mean_manip)
    return row


# -- commands ----------------------------------------------------------------


def _manifest(args, config: TrialConfig, invocation: dict, files: list, started: float) -> str:
    data = {
        "manifest_version": MANIFEST_VERSION,
        "tool": "collusim",
        "version": __version__,
        "invocation": invocation,
        "config": config.to_dict(),
        "seed_base": config.seed_base,
        "trials": invocation.get("trials"),
        "backend": kernel.default_backend() if args.backend is None else args.backend,
        "started_utc": datetime.fromtimestamp(started, tz=timezone.utc).isoformat(),
        "wall_clock_seconds": round(time.time() - started, 3),
        "outputs": files + ["manifest.json"],
    }
    return json.dumps(jsonable(data), indent=2, sort_keys=True) + "\n"


def _finish(args, outputs: Outputs, config: TrialConfig, invocation: dict, started: float) -> int:
    names = sorted(outputs.files)
    outputs.add("manifest.json", _manifest(args, config, invocation, names, started))
    outputs.commit()
    return 0


def _trials_and_summary(suites: list, n_sellers: int, quality: list, labelled: bool) -> tuple[str, dict]:
    """Serialize trials, then derive the summary from the serialized rows."""
    rows = []
    for label, suite in suites:
        for cond in (c.value for c in CONDITIONS):
            for r in suite.get(cond, []):
                rows.append(trial_row(r, label if labelled else None))
    text = csv_text(trial_columns(n_sellers, labelled), rows)
    groups = group_records(parse_trials_csv(text))
    summary = {str(k) if k is not None else "suite": suite_report(v, quality) for k, v in groups.items()}
    return text, summary


def cmd_run(args) -> int:
    started = time.time()
    config = apply_overrides(load_config(args.config), args)
    conditions = [Condition(c) for c in args.conditions] if args.conditions else list(CONDITIONS)
    suite = experiment.run_condition_suite(config, args.trials, conditions, args.threads, args.backend)
    quality = list(experiment.catalog_for(config).quality)
    text, summary = _trials_and_summary([(None, suite)], config.n_sellers, quality, labelled=False)
    outputs = Outputs(Path(args.out))
    outputs.add("trials.csv", text)
    outputs.add("summary.json", json.dumps(summary["suite"], indent=2, sort_keys=True) + "\n")
    invocation = {"command": "run", "trials": args.trials, "conditions": [c.value for c in conditions]}
    code = _finish(args, outputs, config, invocation, started)
    _echo(args, f"run: {args.trials} trials x {len(conditions)} conditions -> {args.out}")
    return code


def _sweep(args, axis: str, values) -> int:
    started = time.time()
    config = apply_overrides(load_config(args.config), args)
    results = experiment.run_sweep(axis, values, config, args.trials, args.threads, args.backend)
    rows = [sweep_row(axis, point.label, suite) for point, suite in results]
    for point, _ in results:
        _echo(args, f"{axis} {point.label}: done")
    n_sellers = max(point.base.n_sellers for point, _ in results)
    trial_rows = []
    for point, suite in results:
        for cond in (c.value for c in CONDITIONS):
            for r in suite.get(cond, []):
                trial_rows.append(trial_row(r, point.label))
    trial_text = csv_text(trial_columns(n_sellers, True), trial_rows)
    outputs = Outputs(Path(args.out))
    outputs.add("trials.csv", trial_text)
    if axis == "factorial":
        table = analysis.factorial_table({point.label: suite for point, suite in results}) \
            if len(results) == 16 else []
        if table:
            frows = []
            for row in table:
                on = set(row.mask.split("+"))
                frows.append({"position": "position" in on, "endorsement": "endorsement" in on,
                              "manipulation": "manipulation" in on, "decoy": "decoy" in on,
                              "joint_effect": row.joint_effect, "complementarity": row.complementarity,
                              "cohens_d": row.d})
            outputs.add("factorial.csv", csv_text(FACTORIAL_COLUMNS, frows))
    outputs.add("sweep.csv", csv_text(SWEEP_COLUMNS, rows))
    invocation = {"command": "sweep", "axis": axis, "values": [p.label for p, _ in results] if values else None,
                  "trials": args.trials}
    return _finish(args, outputs, config, invocation, started)


def cmd_sweep(args) -> int:
    if args.axis not in experiment.SWEEP_AXES:
        raise UsageError(f"unknown axis {args.axis!r}; valid axes: {', '.join(experiment.SWEEP_AXES)}")
    try:
        experiment.sweep_points(args.axis, args.values or None, TrialConfig())
    except ConfigurationError as exc:
        raise UsageError(f"{exc}; valid axes: {', '.join(experiment.SWEEP_AXES)}") from exc
    return _sweep(args, args.axis, args.values or None)


def cmd_factorial(args) -> int:
    return _sweep(args, "factorial", None)


def cmd_convergence(args) -> int:
    started = time.time()
    config = apply_overrides(load_config(args.config), args)
    checkpoints = tuple(range(args.every, config.rounds + 1, args.every))
    config = replace(config, checkpoints=checkpoints)
    suite = experiment.run_condition_suite(config, args.trials, CONDITIONS, args.threads, args.backend)
    stats = experiment.time_to_threshold(suite, checkpoints, args.thresholds)
    comp = experiment.checkpoint_complementarity(suite)
    outputs = Outputs(Path(args.out))
    outputs.add("convergence.csv", csv_text(CONVERGENCE_COLUMNS, [asdict(s) for s in stats]))
    traj = []
    for j, cp in enumerate(checkpoints):
        tt = analysis._safe(analysis.t_test_and_ci, comp[:, j])
        traj.append({"round": cp, "complementarity": float(comp[:, j].mean()),
                     "ci_low": tt.ci[0] if tt else None, "ci_high": tt.ci[1] if tt else None})
    outputs.add("trajectory.csv", csv_text(["round", "complementarity", "ci_low", "ci_high"], traj))
    invocation = {"command": "convergence", "trials": args.trials, "every": args.every,
                  "thresholds": list(args.thresholds)}
    return _finish(args, outputs, config, invocation, started)


def _compare(stored, fresh, path="") -> list:
    """Paths where two JSON trees differ by more than 1e-9."""
    if isinstance(stored, dict) and isinstance(fresh, dict):
        bad = []
        for k in sorted(set(stored) | set(fresh)):
            if k not in stored or k not in fresh:
                bad.append(f"{path}/{k}")
            else:
                bad += _compare(stored[k], fresh[k], f"{path}/{k}")
        return bad
    if isinstance(stored, list) and isinstance(fresh, list):
        if len(stored) != len(fresh):
            return [path]
        return [b for j, (x, y) in enumerate(zip(stored, fresh)) for b in _compare(x, y, f"{path}[{j}]")]
    if isinstance(stored, (int, float)) and isinstance(fresh, (int, float)) and not isinstance(stored, bool):
        return [] if abs(stored - fresh) <= 1e-9 * max(1.0, abs(stored)) else [path]
    return [] if stored == fresh else [path]


def cmd_report(args) -> int:
    records = []
    for path in args.csv:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise FormatError(f"cannot read {path}: {exc}") from exc
        records += parse_trials_csv(text, path)
    if not records:
        raise FormatError("no trial rows found")
    groups = group_records(records)
    n = len(records[0].win_rate)
    quality = list(experiment.catalog_for(TrialConfig(n_sellers=n)).quality) if n >= 4 else None
    report = {str(k) if k is not None else "suite": suite_report(v, quality) for k, v in groups.items()}
    status = 0
    if args.summary:
        stored = json.loads(Path(args.summary).read_text(encoding="utf-8"))
        fresh = report["suite"] if set(report) == {"suite"} else report
        diffs = _compare(stored, fresh)
        if diffs:
            print(f"summary mismatch at: {', '.join(diffs[:10])}", file=sys.stderr)
            status = 1
        else:
            print("summary matches stored values", file=sys.stderr)
    print(json.dumps(report if len(report) > 1 else report.get("suite", report), indent=2, sort_keys=True))
    return status


def cmd_rerun(args) -> int:
    manifest = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
    if manifest.get("manifest_version") != MANIFEST_VERSION:
        raise FormatError("unsupported manifest version")
    inv = manifest["invocation"]
    config_path = Path(args.out) / ".rerun-config.json"
    Path(args.out).mkdir(parents=True, exist_ok=True)
    config_path.write_text(json.dumps(manifest["config"]), encoding="utf-8")
    try:
        base = dict(config=str(config_path), rounds=None, seed_base=None, threads=args.threads,
                    backend=args.backend, out=args.out, quiet=True, trials=inv["trials"])
        ns = argparse.Namespace(**base)
        if inv["command"] == "run":
            ns.conditions = inv["conditions"]
            return cmd_run(ns)
        if inv["command"] == "sweep":
            ns.axis, ns.values = inv["axis"], inv["values"]
            return cmd_sweep(ns)
        if inv["command"] == "convergence":
            ns.every, ns.thresholds = inv["every"], inv["thresholds"]
            return cmd_convergence(ns)
        raise FormatError(f"cannot rerun command {inv['command']!r}")
    finally:
        config_path.unlink(missing_ok=True)


class UsageError(CollusimError):
    pass


def _echo(args, msg: str) -> None:
    if not getattr(args, "quiet", False):
        print(msg, file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="collusim", description=__doc__)
    parser.add_argument("--version", action="version", version=f"collusim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, trials_default=100):
        p.add_argument("--config", help="JSON file with TrialConfig fields (all optional)")
        p.add_argument("--trials", type=int, default=trials_default)
        p.add_argument("--rounds", type=int, help="override rounds per trial")
        p.add_argument("--seed-base", type=int, dest="seed_base", help="seed of trial 0 (trial t uses base + 100 t)")
        p.add_argument("--threads", type=int, help="worker processes (default: $COLLUSIM_THREADS or 1)")
        p.add_argument("--backend", choices=kernel.available_backends(), help="trial kernel")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("run", help="run the four-condition suite")
    common(p)
    p.add_argument("--conditions", nargs="+", choices=[c.value for c in CONDITIONS])
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("factorial", help="all 16 bias-channel masks")
    common(p)
    p.set_defaults(func=cmd_factorial)

    p = sub.add_parser("sweep", help="robustness sweep along one axis",
                       epilog="axes: " + ", ".join(experiment.SWEEP_AXES))
    common(p)
    p.add_argument("axis")
    p.add_argument("values", nargs="*", help="axis values (default: the standard grid)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("convergence", help="time to reach complementarity thresholds")
    common(p)
    p.add_argument("--every", type=int, default=1000, help="checkpoint spacing in rounds")
    p.add_argument("--thresholds", type=float, nargs="+", default=[5.0, 10.0, 15.0])
    p.set_defaults(func=cmd_convergence)

    p = sub.add_parser("report", help="recompute statistics from trials.csv files")
    p.add_argument("csv", nargs="+")
    p.add_argument("--summary", help="summary.json to verify against (1e-9 tolerance)")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("rerun", help="repeat a run from its manifest.json")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int)
    p.add_argument("--backend", choices=kernel.available_backends())
    p.set_defaults(func=cmd_rerun)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (CollusimError, OSError, json.JSONDecodeError) as exc:
        print(f"collusim: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
