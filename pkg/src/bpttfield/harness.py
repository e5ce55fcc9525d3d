"""Training runs, sweeps and their on-disk records.

A run directory holds ``config.txt`` (``key=value`` echo of the effective
config), ``epochs.csv`` (one row per epoch), ``timing.csv`` (wall-clock
seconds per epoch) and ``final_params.bin`` (little-endian uint64 length
followed by that many little-endian float64 values).
"""
from __future__ import annotations

import csv
import dataclasses
import itertools
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nets, optim, unroll
from .errors import ConfigError, NumericalError, RunAborted
from .tasks import SUMMARY_THRESHOLDS, TrainConfig, build_problem, run_seeds

log = logging.getLogger(__name__)

EPOCH_HEADER = ["epoch", "train_loss", "test_loss", "update_norm_log10_mean", "update_norm_max", "seconds"]
EVAL_CHUNK = 256


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    test_loss: float
    update_norm_log10_mean: float
    update_norm_max: float
    seconds: float


@dataclass
class RunResult:
    config: TrainConfig
    records: list = field(default_factory=list)
    params: np.ndarray | None = None
    update_norms: list = field(default_factory=list)
    aborted: bool = False
    error: str = ""

    @property
    def final_test_loss(self):
        return self.records[-1].test_loss if self.records else math.inf

    @property
    def best_test_loss(self):
        finite = [r.test_loss for r in self.records if math.isfinite(r.test_loss)]
        return min(finite) if finite else math.inf


def evaluate(problem, params, data):
    """Mean loss over ``data`` with frozen parameters."""
    total = 0.0
    for start in range(0, len(data), EVAL_CHUNK):
        chunk = data[start:start + EVAL_CHUNK]
        tape = unroll.rollout(problem.net, problem.sim, params, chunk, problem.n_steps)
        total += float(np.sum(unroll.per_sample_loss(tape, problem.loss)))
    return total / len(data)


def _fmt(value):
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def config_lines(cfg):
    return [f"{f.name}={_fmt(getattr(cfg, f.name))}" for f in dataclasses.fields(cfg)]


def write_params(path, params):
    params = np.ascontiguousarray(params, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(np.uint64(params.size).astype("<u8").tobytes())
        fh.write(params.tobytes())


def read_params(path):
    raw = Path(path).read_bytes()
    n = int(np.frombuffer(raw[:8], dtype="<u8")[0])
    values = np.frombuffer(raw[8:], dtype="<f8")
    if values.size != n:
        raise ValueError(f"{path}: header says {n} values, file holds {values.size}")
    return values.copy()


class _RunWriter:
    def __init__(self, out_dir, cfg):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        (self.dir / "config.txt").write_text("\n".join(config_lines(cfg)) + "\n")
        self.wallclock = cfg.wallclock
        with open(self.dir / "epochs.csv", "w", newline="") as fh:
            csv.writer(fh).writerow(EPOCH_HEADER)
        with open(self.dir / "timing.csv", "w", newline="") as fh:
            csv.writer(fh).writerow(["epoch", "seconds"])

    def epoch(self, rec):
        row = dataclasses.astuple(rec)
        if not self.wallclock:
            row = row[:-1] + (0.0,)
        with open(self.dir / "epochs.csv", "a", newline="") as fh:
            csv.writer(fh).writerow([repr(v) if isinstance(v, float) else v for v in row])
        with open(self.dir / "timing.csv", "a", newline="") as fh:
            csv.writer(fh).writerow([rec.epoch, repr(rec.seconds)])

    def finish(self, params):
        write_params(self.dir / "final_params.bin", params)


def _norm_stats(norms):
    arr = np.asarray(norms, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        logs = np.log10(arr)
    return float(np.mean(logs)), float(np.max(arr))


def train_run(cfg, out_dir=None, raise_on_abort=False):
    """Train one controller; returns a ``RunResult`` (also on abort)."""
    cfg.validate()
    problem = build_problem(cfg)
    init_seed, train_seed, test_seed, shuffle_seed = run_seeds(cfg.seed)
    ds, bs = cfg.resolved("dataset"), cfg.resolved("batch_size")
    params = nets.init_params(problem.net, init_seed)
    train = problem.sample(train_seed, ds)
    test = problem.sample(test_seed, ds)
    state = optim.make_optimizer(cfg.optimizer, cfg.lr, params.size)
    clip_spec = optim.ClipSpec(cfg.clip, cfg.clip_threshold)
    rng = np.random.default_rng(shuffle_seed)
    writer = _RunWriter(out_dir, cfg) if out_dir is not None else None
    result = RunResult(cfg)
    methods = {cfg.method}

    for epoch in range(1, cfg.epochs + 1):
        start = time.perf_counter()
        order = rng.permutation(ds)
        norms = []
        for b in range(0, ds, bs):
            batch = train[order[b:b + bs]]
            try:
                bundle = unroll.compute_bundle(problem.net, problem.sim, params, batch,
                                               problem.loss, problem.n_steps, methods)
            except NumericalError as exc:
                log.warning("epoch %d: rollout failed, step skipped: %s", epoch, exc)
                norms.append(math.nan)
                state = dataclasses.replace(state, t=state.t + 1, skipped=state.skipped + 1)
                continue
            update = bundle.get(cfg.method)
            norms.append(float(np.linalg.norm(update)))
            state, params = optim.opt_step(state, params, optim.clip(update, clip_spec))
        seconds = time.perf_counter() - start
        result.update_norms.extend(norms)
        try:
            train_loss = evaluate(problem, params, train)
            test_loss = evaluate(problem, params, test)
        except NumericalError as exc:
            train_loss = test_loss = math.nan
            result.error = str(exc)
        mean_log, max_norm = _norm_stats(norms)
        rec = EpochRecord(epoch, train_loss, test_loss, mean_log, max_norm, seconds)
        result.records.append(rec)
        if writer:
            writer.epoch(rec)
        if not (math.isfinite(train_loss) and math.isfinite(test_loss)):
            result.aborted = True
            result.error = result.error or f"non-finite loss after epoch {epoch}"
            break

    result.params = params
    if writer:
        writer.finish(params)
    if result.aborted and raise_on_abort:
        raise RunAborted(result.error, result.records, params)
    return result


# -- sweeps -------------------------------------------------------------------

@dataclass
class SweepEntry:
    name: str
    config: TrainConfig
    result: RunResult | None = None
    failed: bool = False
    error: str = ""

    @property
    def final_test_loss(self):
        if self.failed or self.result is None or self.result.aborted:
            return math.inf
        return self.result.final_test_loss


def sweep_configs(base, axes):
    """Expand ``axes`` (ordered mapping of field -> values) into named configs."""
    if not axes or any(len(v) == 0 for v in axes.values()):
        raise ConfigError("sweep axes must be non-empty")
    names = {f.name for f in dataclasses.fields(TrainConfig)}
    for key in axes:
        if key not in names:
            raise ConfigError(f"unknown sweep axis {key!r}", key=key)
    keys = list(axes)
    out = []
    for index in itertools.product(*(range(len(axes[k])) for k in keys)):
        values = {k: axes[k][i] for k, i in zip(keys, index)}
        seed = int(np.random.SeedSequence([base.seed, *index]).generate_state(1)[0])
        cfg = base.with_updates(seed=seed, **values).validate()
        name = "_".join(f"{k}-{_fmt(v)}" for k, v in values.items())
        out.append((name, cfg))
    return out


def _run_entry(args):
    name, cfg, run_dir = args
    try:
        return SweepEntry(name, cfg, train_run(cfg, run_dir))
    except Exception as exc:  # a failed run must not abort the sweep
        log.exception("sweep run %s failed", name)
        return SweepEntry(name, cfg, failed=True, error=f"{type(exc).__name__}: {exc}")


def sweep(base, axes, out_dir=None, threads=1, thresholds=None):
    """Run the Cartesian product of ``axes``; optionally write ``summary.csv``."""
    jobs = [(name, cfg, None if out_dir is None else Path(out_dir) / name)
            for name, cfg in sweep_configs(base, axes)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            entries = list(pool.map(_run_entry, jobs))
    else:
        entries = [_run_entry(job) for job in jobs]
    if out_dir is not None:
        if thresholds is None:
            thresholds = SUMMARY_THRESHOLDS.get(base.task, ())
        write_summary(Path(out_dir) / "summary.csv", summarize(entries, thresholds))
    return entries


def summarize(results, thresholds=(), k=(5, 25), group_by="method"):
    """Per-group table rows: best loss, mean of best-k, counts below thresholds."""
    if not results:
        raise ConfigError("nothing to summarise")
    groups = {}
    for r in results:
        groups.setdefault(getattr(r.config, group_by), []).append(r.final_test_loss)
    rows = []
    for key, losses in groups.items():
        ordered = sorted(losses)
        row = {group_by: key, "best": ordered[0]}
        for kk in k:
            row[f"mean_best_{kk}"] = float(np.mean(ordered[:kk]))
        for t in thresholds:
            row[f"runs_below_{_fmt(t)}"] = sum(1 for v in losses if v < t)
        row["total_runs"] = len(losses)
        rows.append(row)
    return rows


def write_summary(path, rows):
    if not rows:
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
