"""Estimation-quality and timing harnesses plus CSV/JSON emission."""
import csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .distributions import CorrelatedGaussianSource, rho_for_mi
from .errors import ContractError, NumericError, UnsupportedError
from .estimators import get_estimator
from .trainer import EstimateTrace, EstimatorRun, TrainConfig, run_schedule, stream

QUALITY_COLUMNS = ("estimator", "task", "level", "bias", "variance", "mse")
TIMING_COLUMNS = ("estimator", "batch_size", "mean_seconds", "reps")
TRACE_COLUMNS = ("estimator", "task", "iter", "true_mi", "estimate", "smoothed")

GRID_ESTIMATORS = ("vvub", "nwj", "mine", "infonce", "vl1out", "vclub", "vclub-s")
GRID_LEVELS = (2.0, 4.0, 6.0, 8.0, 10.0)
TASKS = ("gaussian", "cubic")
TIMING_BATCHES = (32, 64, 128, 256, 512)


@dataclass
class QualityRow:
    estimator: str
    task: str
    level: float
    bias: float
    variance: float
    mse: float
    mean: float = math.nan
    se: float = math.nan
    window: int = 0
    status: str = "ok"


@dataclass
class TimingRow:
    estimator: str
    batch_size: int
    mean_seconds: float
    reps: int
    min_seconds: float = math.nan
    max_seconds: float = math.nan


def _window(values, fraction):
    k = int(round(len(values) * fraction))
    if k < 1:
        raise ContractError("statistics window is empty")
    return values[-k:]


def quality_stats(trace, window_fraction=0.2):
    """Bias, variance and MSE over the last ``window_fraction`` of each level.

    ``variance`` is the population variance of the windowed estimates, so
    ``mse == bias**2 + variance`` is the mean squared error against the truth.
    """
    return pooled_quality_stats([trace], window_fraction)


def pooled_quality_stats(traces, window_fraction=0.2):
    """:func:`quality_stats` with the windows of several seeds pooled per level."""
    if not traces or any(len(t.estimates) == 0 for t in traces):
        raise ContractError("empty trace")
    first = traces[0]
    rows = []
    for li, (level, _) in enumerate(first.level_slices()):
        windows, truth = [], None
        for trace in traces:
            sl = trace.level_slices()[li][1]
            windows.append(_window(trace.estimates[sl], window_fraction))
            truth = float(trace.true_mi[sl][-1])
        w = np.concatenate(windows)
        m = float(w.mean())
        bias = m - truth
        var = float(np.mean((w - m) ** 2))
        rows.append(QualityRow(first.estimator_id, first.task, float(level), bias, var,
                               bias * bias + var, m, float(np.sqrt(var / len(w))), len(w)))
    return rows


def smooth(series, bandwidth=200):
    """Centred moving average; windows are truncated at the ends.

    Position ``t`` averages indices ``t - bandwidth//2`` through
    ``t + (bandwidth - 1)//2`` that exist.
    """
    if bandwidth < 1:
        raise ContractError("bandwidth must be at least 1")
    x = np.asarray(series, dtype=np.float64)
    n = len(x)
    kernel = np.ones(bandwidth)
    # full[k] sums x[k - bandwidth + 1 .. k]; shift so the window is centred on t
    start = (bandwidth - 1) // 2
    sums = np.convolve(x, kernel)[start:start + n]
    counts = np.convolve(np.ones(n), kernel)[start:start + n]
    return sums / counts


# --- quality grid -------------------------------------------------------------

def _run_cell(args):
    estimator_id, task, levels, cfg_dict, seeds, window_fraction = args
    cfg = TrainConfig(**cfg_dict)
    traces = []
    try:
        for s in range(seeds):
            traces.append(run_schedule(estimator_id, list(levels),
                                       TrainConfig(**{**cfg_dict, "seed": cfg.seed + s}), task))
    except (NumericError, UnsupportedError) as exc:
        status = "diverged" if isinstance(exc, NumericError) else "unsupported"
        rows = [QualityRow(estimator_id, task, float(lvl), math.nan, math.nan, math.nan,
                           status=status) for lvl in levels]
        return rows, None, str(exc)
    return pooled_quality_stats(traces, window_fraction), traces[0], None


def run_grid(estimators, tasks, levels, cfg, jobs=1, seeds=1, window_fraction=0.2):
    """Quality rows for every (estimator, task, level) plus the first-seed traces.

    Cells that raise a numeric error are marked ``diverged`` and the grid
    continues. Returns ``(rows, traces, failures)``.
    """
    if not estimators:
        raise ContractError("estimator list is empty")
    for eid in estimators:
        get_estimator(eid)
    cells = [(e, t, tuple(levels), cfg.to_dict(), seeds, window_fraction)
             for e in estimators for t in tasks]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell, cells))
    else:
        results = [_run_cell(c) for c in cells]
    rows, traces, failures = [], [], {}
    for cell, (cell_rows, trace, err) in zip(cells, results):
        rows.extend(cell_rows)
        if trace is not None:
            traces.append(trace)
        if err is not None:
            failures[(cell[0], cell[1])] = err
    return rows, traces, failures


# --- timing -------------------------------------------------------------------

def time_estimators(estimators, batch_sizes=TIMING_BATCHES, reps=50, cfg=None, warmup=5,
                    level=2.0):
    """Mean wall-clock seconds per training-plus-estimate step.

    Batches are drawn before the clock starts; the first ``warmup`` steps of
    each cell are discarded.
    """
    if reps < 30:
        raise ContractError("reps must be at least 30 for stable means")
    batch_sizes = list(batch_sizes)
    if any(b >= a for a, b in zip(batch_sizes[1:], batch_sizes)):
        raise ContractError("batch sizes must be strictly increasing")
    cfg = TrainConfig() if cfg is None else cfg
    source = CorrelatedGaussianSource(cfg.dim, rho_for_mi(level, cfg.dim))
    rows = []
    for eid in estimators:
        for n in batch_sizes:
            run = EstimatorRun(eid, TrainConfig(**{**cfg.to_dict(), "batch_size": n}), source)
            rng = stream(cfg.seed, eid, "timing", n)
            batches = [source.sample(n, rng) for _ in range(reps + warmup)]
            samples = []
            for k, batch in enumerate(batches):
                t0 = time.perf_counter()
                run.step(batch, iteration=k)
                elapsed = time.perf_counter() - t0
                if k >= warmup:
                    samples.append(elapsed)
            samples = np.array(samples)
            rows.append(TimingRow(eid, n, float(samples.mean()), reps,
                                  float(samples.min()), float(samples.max())))
    return rows


def loglog_slope(batch_sizes, seconds):
    """Least-squares slope of log(time) against log(batch size)."""
    return float(np.polyfit(np.log(batch_sizes), np.log(seconds), 1)[0])


# --- emission -----------------------------------------------------------------

def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _rows_to_dicts(rows, columns):
    return [{c: getattr(r, c) for c in columns} for r in rows]


def emit(rows, path, fmt="csv", config=None, columns=None):
    """Write rows as CSV or JSON with the effective ``config`` embedded.

    CSV files start with one ``# config: {...}`` comment line, then the header.
    Floats are written with ``repr`` so parsing round-trips exactly.
    """
    if columns is None:
        columns = QUALITY_COLUMNS if rows and isinstance(rows[0], QualityRow) else TIMING_COLUMNS
    config = {} if config is None else config
    records = _rows_to_dicts(rows, columns)
    try:
        with open(path, "w", newline="") as fh:
            if fmt == "json":
                json.dump({"config": config, "columns": list(columns), "rows": records}, fh,
                          indent=2, sort_keys=False)
                fh.write("\n")
            elif fmt == "csv":
                fh.write(f"# config: {json.dumps(config, sort_keys=True)}\n")
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(columns)
                for rec in records:
                    writer.writerow([_fmt(rec[c]) for c in columns])
            else:
                raise ContractError(f"unknown format {fmt!r}")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def emit_trace(traces, path, config=None, bandwidth=200):
    rows = []
    for tr in traces:
        sm = smooth(tr.estimates, bandwidth)
        for i in range(len(tr.estimates)):
            rows.append(_TraceRow(tr.estimator_id, tr.task, int(tr.iterations[i]),
                                  float(tr.true_mi[i]), float(tr.estimates[i]), float(sm[i])))
    return emit(rows, path, "csv", config, TRACE_COLUMNS)


@dataclass
class _TraceRow:
    estimator: str
    task: str
    iter: int
    true_mi: float
    estimate: float
    smoothed: float


def _parse(v):
    try:
        return int(v)
    except ValueError:
        try:
            return float(v)
        except ValueError:
            return v


def read_output(path):
    """Parse a file written by :func:`emit`; returns ``(config, rows)``."""
    with open(path) as fh:
        text = fh.read()
    if text.lstrip().startswith("{"):
        doc = json.loads(text)
        return doc["config"], doc["rows"]
    lines = text.splitlines()
    config = {}
    if lines and lines[0].startswith("# config: "):
        config = json.loads(lines[0][len("# config: "):])
        lines = lines[1:]
    reader = csv.DictReader(io.StringIO("\n".join(lines)))
    return config, [{k: _parse(v) for k, v in row.items()} for row in reader]


def quality_row_dict(row):
    return asdict(row)


__all__ = [
    "EstimateTrace", "QualityRow", "TimingRow", "quality_stats", "pooled_quality_stats",
    "smooth", "run_grid", "time_estimators", "loglog_slope", "emit", "emit_trace",
    "read_output",
]
