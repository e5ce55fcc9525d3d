"""Command-line entry point: ``bpttfield {train,sweep,field,flow,rotdemo,summarize}``.

Configs are flat ``key=value`` files (``#`` starts a comment) merged with
repeated ``--set key=value`` overrides.  Exit codes: 0 success, 1 config
error, 2 numeric abort.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import math
import sys
import types
import typing
from pathlib import Path

import numpy as np

from . import fieldviz, harness
from .errors import ConfigError, InputError, RunAborted
from .tasks import SUMMARY_THRESHOLDS, TrainConfig, build_problem, run_seeds

ALIASES = {"n": "n_steps"}
TRAIN_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}
SWEEP_KEYS = {"axes": str, "thresholds": str}
FIELD_KEYS = {
    "task": str, "n": int, "method": str, "sim": str, "x0": float, "target": float,
    "p1_min": float, "p1_max": float, "p2_min": float, "p2_max": float,
    "res1": int, "res2": int, "run": str, "plane_seed": int, "span": float,
    "seeds": str, "step": float, "max_steps": int,
}
DEMO_KEYS = {"field": str, "lr": float, "steps": int, "start": str, "optimizer": str}


# -- config parsing -----------------------------------------------------------

def read_config(path):
    pairs = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}", key=line)
        k, v = line.split("=", 1)
        pairs.append((k.strip(), v.strip()))
    return pairs


def gather(args):
    """Config-file pairs followed by ``--set`` overrides (later wins)."""
    pairs = []
    if args.config:
        try:
            pairs += read_config(args.config)
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc.strerror}", key="config") from exc
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}", key=item)
        k, v = item.split("=", 1)
        pairs.append((k.strip(), v.strip()))
    return dict(pairs)


def _base_type(tp):
    if isinstance(tp, str):
        tp = eval(tp, {"tuple": tuple, "int": int, "float": float, "str": str, "bool": bool})  # noqa: S307
    args = typing.get_args(tp)
    if isinstance(tp, types.UnionType) or typing.get_origin(tp) is typing.Union:
        return next(a for a in args if a is not type(None)), True
    return tp, False


def parse_value(key, text, tp):
    base, optional = _base_type(tp)
    if optional and text.lower() in ("", "none", "default"):
        return None
    try:
        if base is bool:
            low = text.lower()
            if low not in ("0", "1", "true", "false", "yes", "no"):
                raise ValueError(text)
            return low in ("1", "true", "yes")
        if base is tuple:
            return tuple(int(t) for t in text.split(",") if t.strip())
        if base is float:
            value = float(text)
            if not math.isfinite(value):
                raise ValueError(text)
            return value
        return base(text)
    except ValueError:
        raise ConfigError(f"invalid value for {key}: {text!r}", key=key) from None


def train_config(values, extra=()):
    """``TrainConfig`` from string values; keys in ``extra`` are passed over."""
    kwargs = {}
    for k, v in values.items():
        if k in extra:
            continue
        k = ALIASES.get(k, k)
        if k not in TRAIN_FIELDS:
            raise ConfigError(f"unknown config key {k!r}", key=k)
        kwargs[k] = parse_value(k, v, TRAIN_FIELDS[k].type)
    return TrainConfig(**kwargs).validate()


def typed(values, schema):
    out = {}
    for k, v in values.items():
        if k not in schema:
            raise ConfigError(f"unknown config key {k!r}", key=k)
        out[k] = parse_value(k, v, schema[k])
    return out


def parse_axes(text):
    """``method=R,M;lr=1e-3,1e-4`` -> ordered mapping of typed value lists."""
    if not text or not text.strip():
        raise ConfigError("sweep needs at least one axis", key="axes")
    axes = {}
    for part in text.split(";"):
        if not part.strip():
            continue
        if "=" not in part:
            raise ConfigError(f"malformed axis {part!r}", key="axes")
        k, vals = part.split("=", 1)
        k = ALIASES.get(k.strip(), k.strip())
        if k not in TRAIN_FIELDS:
            raise ConfigError(f"unknown sweep axis {k!r}", key=k)
        if k in axes:
            raise ConfigError(f"axis {k} given twice", key=k)
        items = [v.strip() for v in vals.split(",") if v.strip()]
        if not items:
            raise ConfigError(f"axis {k} has no values", key=k)
        axes[k] = [parse_value(k, v, TRAIN_FIELDS[k].type) for v in items]
    if not axes:
        raise ConfigError("sweep needs at least one axis", key="axes")
    return axes


def _floats(text, key):
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise ConfigError(f"invalid value for {key}: {text!r}", key=key) from None


def echo(path, values):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(f"{k}={v}\n" for k, v in values.items()))


# -- commands -----------------------------------------------------------------

def run_name(cfg):
    return f"{cfg.task}_{cfg.method}_seed{cfg.seed}"


def cmd_train(args, values):
    cfg = train_config(values, extra=("name",))
    run_dir = Path(args.out) / values.get("name", run_name(cfg))
    try:
        result = harness.train_run(cfg, run_dir, raise_on_abort=True)
    except RunAborted as exc:
        print(f"run aborted: {exc}", file=sys.stderr)
        print(repr(exc.records[-1].test_loss if exc.records else math.nan))
        return 2
    print(f"wrote {run_dir}")
    print(repr(result.final_test_loss))
    return 0


def cmd_sweep(args, values):
    axes = parse_axes(args.axes if args.axes is not None else values.get("axes", ""))
    base = train_config(values, extra=SWEEP_KEYS)
    if "thresholds" in values:
        thresholds = _floats(values["thresholds"], "thresholds")
    else:
        thresholds = SUMMARY_THRESHOLDS.get(base.task, ())
    out = Path(args.out)
    entries = harness.sweep(base, axes, out, threads=args.threads, thresholds=thresholds)
    echo(out / "sweep.txt", values | {"axes": args.axes or values.get("axes", "")})
    failed = sum(e.failed for e in entries)
    print(f"{len(entries)} runs, {failed} failed; summary in {out / 'summary.csv'}")
    return 0


def _field_problem(v):
    task = v.get("task", "toy")
    if task == "toy" and v.get("sim", "toy") == "abs":
        task = "abs-toy"
    elif v.get("sim", "toy") not in ("toy", "abs"):
        raise ConfigError(f"unknown sim {v['sim']!r}", key="sim")
    if task not in ("toy", "abs-toy", "lqr", "net-hyperplane"):
        raise ConfigError(f"field sampling supports toy, abs-toy, lqr, net-hyperplane; got {task!r}", key="task")
    method = v.get("method", "R")
    if method not in ("R", "M", "C", "S"):
        raise ConfigError(f"unknown method {method!r}", key="method")
    return task, method


def _plane_and_problem(v):
    task, method = _field_problem(v)
    if task == "net-hyperplane":
        if "run" not in v:
            raise ConfigError("net-hyperplane needs run=<trained run directory>", key="run")
        run = Path(v["run"])
        if not (run / "config.txt").is_file() or not (run / "final_params.bin").is_file():
            raise ConfigError(f"no trained run in {run}", key="run")
        cfg = train_config(gather(argparse.Namespace(config=run / "config.txt", set=[])))
        problem = build_problem(cfg)
        params = harness.read_params(run / "final_params.bin")
        data = problem.sample(run_seeds(cfg.seed)[1], cfg.resolved("dataset"))
        res = (v.get("res1", 21), v.get("res2", 21))
        plane = fieldviz.random_plane(params, v.get("plane_seed", 0), v.get("span", 1.0), res)
        return f"hyperplane_{cfg.task}_{method}", problem, plane, method, data
    cfg = TrainConfig(task=task, n_steps=v.get("n"), x0=v.get("x0", -0.3), target=v.get("target", 2.0))
    problem = build_problem(cfg)
    plane = fieldviz.PlaneSpec.canonical(
        (v.get("p1_min", -6.0), v.get("p1_max", 6.0)), (v.get("p2_min", -6.0), v.get("p2_max", 6.0)),
        (v.get("res1", fieldviz.TOY_RESOLUTION), v.get("res2", fieldviz.TOY_RESOLUTION)))
    return f"{task}_n{problem.n_steps}_{method}", problem, plane, method, None


def cmd_field(args, values):
    v = typed(values, FIELD_KEYS)
    name, problem, plane, method, data = _plane_and_problem(v)
    grid = fieldviz.sample_grid(problem, plane, method, x0=data)
    path = Path(args.out) / "fields" / f"{name}.csv"
    grid.write_csv(path)
    echo(path.with_suffix(".cfg"), values)
    print(f"wrote {path}")
    return 0


def _seeds(text, plane):
    if text:
        try:
            return [tuple(float(c) for c in s.split(",")) for s in text.split(";") if s.strip()]
        except ValueError:
            raise ConfigError(f"invalid value for seeds: {text!r}", key="seeds") from None
    a1, a2 = (np.linspace(lo, hi, 5)[1:-1] for lo, hi in (plane.range1, plane.range2))
    return [(p, q) for p in a1 for q in a2]


def cmd_flow(args, values):
    v = typed(values, FIELD_KEYS)
    name, problem, plane, method, data = _plane_and_problem(v)
    f = fieldviz.field_function(problem, method, plane, x0=data)
    lines = fieldviz.integrate_flowlines(lambda p: -f(p), _seeds(v.get("seeds"), plane),
                                         step=v.get("step", 0.01), max_steps=v.get("max_steps", 1000),
                                         bounds=(plane.range1, plane.range2))
    path = Path(args.out) / "flowlines" / f"{name}.csv"
    fieldviz.write_flowlines(path, lines)
    echo(path.with_suffix(".cfg"), values)
    print(f"wrote {path}")
    return 0


def cmd_rotdemo(args, values):
    v = typed(values, DEMO_KEYS)
    start = _floats(v.get("start", "2,0"), "start")
    if len(start) != 2:
        raise ConfigError("start needs two values", key="start")
    try:
        result = fieldviz.rotation_demo(v.get("field", "D"), start, v.get("optimizer", "adam"),
                                        v.get("lr", 0.01), v.get("steps", 2000))
    except InputError as exc:
        raise ConfigError(str(exc), key="field") from exc
    path = Path(args.out) / "rotdemo" / f"{result.field}.csv"
    result.write_csv(path)
    echo(path.with_suffix(".cfg"), values)
    print(f"wrote {path}")
    print(repr(float(np.linalg.norm(result.trajectory[-1]))))
    return 0


def _load_run(run_dir):
    cfg = train_config(gather(argparse.Namespace(config=run_dir / "config.txt", set=[])))
    with open(run_dir / "epochs.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    records = [harness.EpochRecord(int(r["epoch"]), float(r["train_loss"]), float(r["test_loss"]),
                                   float(r["update_norm_log10_mean"]), float(r["update_norm_max"]),
                                   float(r["seconds"])) for r in rows]
    aborted = bool(records) and not math.isfinite(records[-1].test_loss)
    return harness.SweepEntry(run_dir.name, cfg, harness.RunResult(cfg, records, aborted=aborted))


def cmd_summarize(args, values):
    v = typed(values, {"dir": str, "thresholds": str, "group_by": str})
    root = Path(v.get("dir", args.out))
    runs = sorted(p.parent for p in root.glob("*/epochs.csv"))
    if not runs:
        raise ConfigError(f"no runs found under {root}", key="dir")
    entries = [_load_run(r) for r in runs]
    if "thresholds" in v:
        thresholds = _floats(v["thresholds"], "thresholds")
    else:
        thresholds = SUMMARY_THRESHOLDS.get(entries[0].config.task, ())
    group_by = v.get("group_by", "method")
    if group_by not in TRAIN_FIELDS:
        raise ConfigError(f"unknown group_by {group_by!r}", key="group_by")
    rows = harness.summarize(entries, thresholds, group_by=group_by)
    harness.write_summary(root / "summary.csv", rows)
    w = csv.DictWriter(sys.stdout, fieldnames=list(rows[0]))
    w.writeheader()
    w.writerows(rows)
    return 0


COMMANDS = {"train": cmd_train, "sweep": cmd_sweep, "field": cmd_field, "flow": cmd_flow,
            "rotdemo": cmd_rotdemo, "summarize": cmd_summarize}


def build_parser():
    parser = argparse.ArgumentParser(prog="bpttfield", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        p.add_argument("--out", default="./runs", help="output directory (default ./runs)")
        p.add_argument("--threads", type=int, default=1, help="worker processes for sweeps")
        if name == "sweep":
            p.add_argument("--axes", help="e.g. 'method=R,M,C,S;lr=1e-2,1e-3'")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads < 1:
            raise ConfigError("threads must be at least 1", key="threads")
        return COMMANDS[args.command](args, gather(args))
    except ConfigError as exc:
        print(f"config error [{exc.key}]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
