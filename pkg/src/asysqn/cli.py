"""Experiment driver: config parsing, single runs, step-size sweeps,
reference solves, and report generation.

Config grammar: one `section.key = value` per line, `#` starts a comment.
Every key has a default (listed under --help); only the dataset source is
mandatory.  All numeric output uses 17 significant digits so that reruns
can be compared byte-for-byte.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .algorithms import AlgoConfig, DivergenceError, reference_solve
from .data import (
    Dataset,
    one_hot_encode,
    parse_csv,
    parse_libsvm,
    synthetic_classification,
    vertical_split,
    zscore_normalize,
)
from .metrics import MetricReport, accuracy, cti
from .data import assemble_weights
from .runtime import SchedulerConfig, Simulator, TrainRun


class ConfigError(ValueError):
    pass


class DatasetMissing(ConfigError):
    pass


@dataclass
class ExperimentSpec:
    """Validated experiment description with every knob defaulted."""

    dataset_path: str | None = None
    dataset_format: str = "libsvm"         # libsvm | csv
    label_column: str = "label"            # csv only
    synthetic_n: int | None = None         # alternative dataset source
    synthetic_d: int | None = None
    one_hot_columns: tuple[int, ...] = ()
    zscore: bool = False
    q: int = 8
    shuffle_columns: bool = False
    method: str = "svrg"
    curvature: str = "sdlbfgs"
    step_size: float = 0.1
    batch_size: int | None = None          # default ceil(sqrt(n))
    inner_length: int | None = None
    lam: float = 1e-4
    memory_size: int = 8
    delta_floor: float = 0.01
    paired_batch: bool = False
    mode: str = "async"
    tau_bound: int | None = None
    straggler: float | None = None
    alpha_lat: float = 50e-6
    beta_bw: float = 1e-9
    flop_time: float = 1e-8
    record_every: int | None = None
    mask_mode: str = "uniform"
    budget: int | None = None              # default 21n
    target: float | None = None
    trials: int = 1
    seed: int = 0
    out: str | None = None

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("run.trials must be >= 1")


# key -> (attribute, python type, help default). ``opt`` types accept `none`.
_KEYS = {
    "dataset.path": ("dataset_path", "opt_str"),
    "dataset.format": ("dataset_format", "str"),
    "dataset.label_column": ("label_column", "str"),
    "dataset.synthetic_n": ("synthetic_n", "opt_int"),
    "dataset.synthetic_d": ("synthetic_d", "opt_int"),
    "dataset.one_hot_columns": ("one_hot_columns", "int_tuple"),
    "dataset.zscore": ("zscore", "bool"),
    "split.q": ("q", "int"),
    "split.shuffle": ("shuffle_columns", "bool"),
    "algo.method": ("method", "str"),
    "algo.curvature": ("curvature", "str"),
    "algo.step_size": ("step_size", "float"),
    "algo.batch_size": ("batch_size", "opt_int"),
    "algo.inner_length": ("inner_length", "opt_int"),
    "algo.lambda": ("lam", "float"),
    "algo.memory_size": ("memory_size", "int"),
    "algo.delta_floor": ("delta_floor", "float"),
    "algo.paired_batch": ("paired_batch", "bool"),
    "sched.mode": ("mode", "str"),
    "sched.tau_bound": ("tau_bound", "opt_int"),
    "sched.straggler": ("straggler", "opt_float"),
    "sched.alpha_lat": ("alpha_lat", "float"),
    "sched.beta_bw": ("beta_bw", "float"),
    "sched.flop_time": ("flop_time", "float"),
    "sched.record_every": ("record_every", "opt_int"),
    "sched.mask_mode": ("mask_mode", "str"),
    "run.budget": ("budget", "opt_int"),
    "run.target": ("target", "opt_float"),
    "run.trials": ("trials", "int"),
    "run.seed": ("seed", "int"),
    "run.out": ("out", "opt_str"),
}


def _parse_value(raw: str, kind: str, key: str):
    raw = raw.strip()
    try:
        if kind.startswith("opt_"):
            if raw.lower() in ("none", ""):
                return None
            kind = kind[4:]
        if kind == "str":
            return raw
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            if raw.lower() in ("true", "yes", "1"):
                return True
            if raw.lower() in ("false", "no", "0"):
                return False
            raise ValueError(raw)
        if kind == "int_tuple":
            return tuple(int(t) for t in raw.split(",") if t.strip()) if raw else ()
    except ValueError:
        raise ConfigError(f"key {key!r}: expected {kind}, got {raw!r}") from None
    raise ConfigError(f"unhandled kind {kind}")


def parse_config(text: str) -> ExperimentSpec:
    values = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {line_no}: expected `section.key = value`")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"line {line_no}: unknown key {key!r}")
        attr, kind = _KEYS[key]
        values[attr] = _parse_value(raw, kind, key)
    return ExperimentSpec(**values)


def serialize_config(spec: ExperimentSpec) -> str:
    """Emit a config that parse_config maps back to an equal spec."""
    lines = []
    for key, (attr, kind) in _KEYS.items():
        v = getattr(spec, attr)
        if v is None:
            out = "none"
        elif isinstance(v, bool):
            out = "true" if v else "false"
        elif isinstance(v, float):
            out = f"{v:.17g}"
        elif isinstance(v, tuple):
            out = ",".join(str(x) for x in v)
        else:
            out = str(v)
        lines.append(f"{key} = {out}")
    return "\n".join(lines) + "\n"


def load_dataset(spec: ExperimentSpec) -> Dataset:
    if spec.dataset_path is not None:
        path = Path(spec.dataset_path)
        if not path.exists():
            raise DatasetMissing(f"dataset file not found: {path}")
        text = path.read_text()
        if spec.dataset_format == "libsvm":
            ds = parse_libsvm(text)
        elif spec.dataset_format == "csv":
            ds = parse_csv(text, spec.label_column)
        else:
            raise ConfigError(f"unknown dataset.format {spec.dataset_format!r}")
    elif spec.synthetic_n is not None and spec.synthetic_d is not None:
        ds = synthetic_classification(spec.synthetic_n, spec.synthetic_d, seed=spec.seed)
    else:
        raise DatasetMissing(
            "set dataset.path or both dataset.synthetic_n and dataset.synthetic_d"
        )
    if spec.one_hot_columns:
        ds = one_hot_encode(ds, spec.one_hot_columns)
    if spec.zscore:
        ds = zscore_normalize(ds)
    return ds


def _configs(spec: ExperimentSpec, seed: int) -> tuple[AlgoConfig, SchedulerConfig]:
    algo = AlgoConfig(
        method=spec.method,
        curvature=spec.curvature,
        step_size=spec.step_size,
        batch_size=spec.batch_size,
        inner_length=spec.inner_length,
        lam=spec.lam,
        memory_size=spec.memory_size,
        delta_floor=spec.delta_floor,
        seed=seed,
        paired_batch=spec.paired_batch,
    )
    sched = SchedulerConfig(
        mode=spec.mode,
        seed=seed,
        straggler_profile=spec.straggler,
        tau_bound=spec.tau_bound,
        alpha_lat=spec.alpha_lat,
        beta_bw=spec.beta_bw,
        flop_time=spec.flop_time,
        record_every=spec.record_every,
        mask_mode=spec.mask_mode,
    )
    return algo, sched


def run_trial(spec: ExperimentSpec, dataset: Dataset, trial: int) -> TrainRun:
    seed = spec.seed + trial
    shards = vertical_split(dataset, spec.q, seed=seed, shuffle=spec.shuffle_columns)
    algo, sched = _configs(spec, seed)
    return Simulator(shards, algo, sched).run(budget=spec.budget, target=spec.target)


def _out_dir(spec: ExperimentSpec, override: str | None) -> Path:
    out = override or spec.out or os.environ.get("ASYSQN_OUT") or "."
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def run_experiment(spec: ExperimentSpec, out_dir: Path) -> int:
    """Run all trials; write run CSVs, metrics.csv, summary.txt.

    Returns 0 on success, 1 on divergence (partial artifacts retained).
    """
    dataset = load_dataset(spec)
    finals, comm_times, compute_times, accs = [], [], [], []
    status = 0
    completed = 0
    for trial in range(spec.trials):
        try:
            run = run_trial(spec, dataset, trial)
        except DivergenceError as exc:
            if exc.train_run is not None:
                (out_dir / f"run_{trial}.csv").write_text(exc.train_run.to_csv())
            print(f"trial {trial}: diverged: {exc}", file=sys.stderr)
            status = 1
            break
        (out_dir / f"run_{trial}.csv").write_text(run.to_csv())
        finals.append(run.final_objective)
        comm_times.append(run.comm_time_mean())
        compute_times.append(run.compute_time())
        accs.append(accuracy(assemble_weights(run.shards), dataset))
        completed += 1

    report = MetricReport()
    if finals:
        a = np.asarray(finals)
        report.add("final_objective_mean", a.mean(), "all trials")
        report.add("final_objective_std", a.std(ddof=1) if len(a) > 1 else 0.0, "all trials")
        report.add("train_accuracy_mean", float(np.mean(accs)), "all trials")
        report.add("sim_comm_time_mean_s", float(np.mean(comm_times)), "simulated")
        report.add("sim_compute_time_mean_s", float(np.mean(compute_times)), "simulated")
        d_max = max(len(c) for c in
                    (s.columns for s in vertical_split(dataset, spec.q)))
        report.add("cti_simulated", cti(spec.alpha_lat, spec.beta_bw, d_max), "simulated")
    (out_dir / "metrics.csv").write_text("\n".join(report.csv_lines()) + "\n")

    lines = [
        f"trials completed: {completed}/{spec.trials}",
        f"status: {'ok' if status == 0 else 'diverged'}",
    ]
    if finals:
        a = np.asarray(finals)
        std = a.std(ddof=1) if len(a) > 1 else 0.0
        lines += [
            f"final objective (simulated run): mean {a.mean():.17g} std {std:.17g}",
            f"train accuracy: mean {np.mean(accs):.17g} std "
            f"{np.std(accs, ddof=1) if len(accs) > 1 else 0.0:.17g}",
            f"simulated comm time mean (s): {np.mean(comm_times):.17g}",
            f"simulated compute time mean (s): {np.mean(compute_times):.17g}",
        ]
    (out_dir / "summary.txt").write_text("\n".join(lines) + "\n")
    return status


def cmd_train(args) -> int:
    spec = _load_spec(args)
    return run_experiment(spec, _out_dir(spec, args.out))


def cmd_sweep(args) -> int:
    spec = _load_spec(args)
    grid_key, _, grid_raw = args.grid.partition("=")
    if grid_key.strip() != "gamma" or not grid_raw:
        raise ConfigError("sweep grid must look like gamma=0.1,0.05,0.02")
    gammas = [float(g) for g in grid_raw.split(",") if g.strip()]
    base = _out_dir(spec, args.out)
    worst = 0
    for gamma in gammas:
        sub = base / f"gamma_{gamma:.17g}"
        sub.mkdir(parents=True, exist_ok=True)
        worst = max(worst, run_experiment(replace(spec, step_size=gamma), sub))
    return worst


def cmd_reference(args) -> int:
    spec = _load_spec(args)
    dataset = load_dataset(spec)
    out = _out_dir(spec, args.out)
    try:
        w_star, f_star = reference_solve(
            dataset.dense_features(), dataset.labels, spec.lam
        )
    except RuntimeError as exc:
        print(f"reference solve failed: {exc}", file=sys.stderr)
        return 1
    (out / "f_star.txt").write_text(f"{f_star:.17g}\n")
    np.savetxt(out / "w_star.csv", w_star, fmt="%.17g")
    print(f"f_star = {f_star:.17g}")
    return 0


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    csvs = sorted(run_dir.glob("run_*.csv"))
    if not csvs:
        print(f"no run CSVs under {run_dir}", file=sys.stderr)
        return 1
    f_star_file = run_dir / "f_star.txt"
    f_star = float(f_star_file.read_text()) if f_star_file.exists() else None
    print("run,final_t,comm_rounds,final_objective"
          + (",final_suboptimality" if f_star is not None else ""))
    for path in csvs:
        last = path.read_text().strip().splitlines()[-1].split(",")
        t, rounds, obj = last[0], last[1], float(last[-1])
        line = f"{path.name},{t},{rounds},{obj:.17g}"
        if f_star is not None:
            line += f",{max(obj - f_star, 0.0):.17g}"
        print(line)
    return 0


def _load_spec(args) -> ExperimentSpec:
    spec = parse_config(Path(args.config).read_text())
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    if getattr(args, "format", None):
        spec = replace(spec, dataset_format=args.format)
    return spec


def _key_help() -> str:
    lines = ["config keys (section.key = value) and defaults:"]
    blank = ExperimentSpec()
    for key, (attr, _kind) in _KEYS.items():
        v = getattr(blank, attr)
        lines.append(f"  {key:28s} default: {v!r}")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="asysqn",
        description="Simulated asynchronous vertical federated training.",
        epilog=_key_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", help="experiment config file")
        p.add_argument("--seed", type=int, default=None, help="override run.seed")
        p.add_argument("--out", default=None, help="override output directory")
        p.add_argument("--format", choices=["libsvm", "csv"], default=None,
                       help="override dataset.format")

    p_train = sub.add_parser("train", help="run one experiment (all trials)")
    common(p_train)
    p_train.set_defaults(func=cmd_train)

    p_sweep = sub.add_parser("sweep", help="step-size grid sweep")
    common(p_sweep)
    p_sweep.add_argument("--grid", required=True, help="gamma=0.1,0.05,0.02")
    p_sweep.set_defaults(func=cmd_sweep)

    p_ref = sub.add_parser("reference", help="high-precision solve; caches f*")
    common(p_ref)
    p_ref.set_defaults(func=cmd_reference)

    p_rep = sub.add_parser("report", help="summarize a run directory")
    p_rep.add_argument("run_dir")
    p_rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
