"""Command-line entry point: ``clubmi {estimate,benchmark,minimize,timing}``.

Exit codes: 0 success, 2 usage error, 3 numeric failure.
"""
import argparse
import logging
import os
import sys

import numpy as np

from . import bench
from .distributions import LinearGaussianChannel, channel_true_mi
from .errors import ContractError, NumericError
from .estimators import ESTIMATORS
from .trainer import MINIMIZERS, MinimizeConfig, TrainConfig, minimize_mi, run_schedule, stream

log = logging.getLogger("clubmi")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3
OUTPUT_ENV = "CLUBMI_OUTPUT_DIR"
KNOWN_ONLY = {eid for eid, info in ESTIMATORS.items() if info.model == "known"}


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text):
    return [int(v) for v in text.split(",") if v.strip()]


def _names(text):
    return [v.strip() for v in text.split(",") if v.strip()]


def _add_train_flags(p, dim=20):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--iters-per-level", type=int, default=4000)
    p.add_argument("--lr", type=float, default=5e-3, dest="learning_rate")
    p.add_argument("--hidden", type=int, default=15, dest="hidden_units")
    p.add_argument("--approx-steps", type=int, default=1, dest="approx_steps_per_iter")
    p.add_argument("--dim", type=int, default=dim)
    p.add_argument("--pairing", choices=("allpairs", "shuffle"), default="allpairs")
    p.add_argument("--mine-ema", action="store_true")
    p.add_argument("--out", default=None, help=f"output directory (default ${OUTPUT_ENV} or .)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--config", default=None, help="key=value file merged under the flags")


def build_parser():
    parser = argparse.ArgumentParser(prog="clubmi", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="train one estimator over an MI schedule")
    _add_train_flags(p)
    p.add_argument("--estimator", required=True)
    p.add_argument("--task", choices=bench.TASKS, default="gaussian")
    p.add_argument("--levels", type=_floats, default=list(bench.GRID_LEVELS))
    p.add_argument("--window", type=float, default=0.2)
    p.add_argument("--bandwidth", type=int, default=200)

    p = sub.add_parser("benchmark", help="estimators x tasks x levels quality grid")
    _add_train_flags(p)
    p.add_argument("--estimators", type=_names, default=list(bench.GRID_ESTIMATORS))
    p.add_argument("--tasks", type=_names, default=list(bench.TASKS))
    p.add_argument("--levels", type=_floats, default=list(bench.GRID_LEVELS))
    p.add_argument("--window", type=float, default=0.2)
    p.add_argument("--bandwidth", type=int, default=200)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seeds", type=int, default=1)

    p = sub.add_parser("minimize", help="drive a linear-Gaussian channel's MI down")
    _add_train_flags(p, dim=4)
    p.add_argument("--estimator", default="vclub-s")
    p.add_argument("--init-mi", type=float, default=2.0)
    p.add_argument("--max-iters", type=int, default=2000)
    p.add_argument("--eval-every", type=int, default=10)
    p.add_argument("--sampling", dest="sampling", action="store_true", default=None)
    p.add_argument("--no-sampling", dest="sampling", action="store_false")
    p.add_argument("--freeze-channel", action="store_true")

    p = sub.add_parser("timing", help="seconds per estimation step against batch size")
    _add_train_flags(p)
    p.add_argument("--estimators", type=_names,
                   default=["vclub", "vclub-s", "vl1out", "vvub", "nwj", "mine", "infonce"])
    p.add_argument("--batches", type=_ints, default=list(bench.TIMING_BATCHES))
    p.add_argument("--reps", type=int, default=50)
    return parser


def read_config_file(path):
    """``key = value`` lines; ``#`` starts a comment. Keys may use dashes."""
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ContractError(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            values[key.replace("-", "_")] = value
    return values


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        # re-parse with file values as defaults so explicit flags still win
        sub = parser._subparsers._group_actions[0].choices[args.command]
        file_values = read_config_file(args.config)
        actions = {a.dest: a for a in sub._actions}
        defaults = {}
        for key, value in file_values.items():
            if key not in actions:
                parser.error(f"unknown config key {key!r}")
            act = actions[key]
            defaults[key] = act.type(value) if act.type else _coerce(value)
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return parser, args


def _coerce(value):
    low = value.lower()
    if low in ("true", "yes", "1"):
        return True
    if low in ("false", "no", "0"):
        return False
    return value


def _train_config(args):
    return TrainConfig(
        batch_size=args.batch_size, iters_per_level=args.iters_per_level,
        learning_rate=args.learning_rate, hidden_units=args.hidden_units, seed=args.seed,
        approx_steps_per_iter=args.approx_steps_per_iter, dim=args.dim, pairing=args.pairing,
        mine_ema=args.mine_ema,
    )


def _out_dir(args):
    out = args.out or os.environ.get(OUTPUT_ENV) or "."
    os.makedirs(out, exist_ok=True)
    return out


def _usage(msg):
    print(f"clubmi: error: {msg}", file=sys.stderr)
    return EXIT_USAGE


def _check_estimator(eid, task=None):
    if eid not in ESTIMATORS:
        return _usage(f"unknown estimator {eid!r}; valid ids: {', '.join(ESTIMATORS)}")
    if task == "cubic" and eid in KNOWN_ONLY:
        return _usage(f"{eid} needs the true conditional, which has no closed form for the "
                      f"cubic task; use the variational variant")
    return None


def cmd_estimate(args):
    err = _check_estimator(args.estimator, args.task)
    if err is not None:
        return err
    cfg = _train_config(args)
    out = _out_dir(args)
    try:
        trace = run_schedule(args.estimator, args.levels, cfg, args.task)
    except NumericError as exc:
        print(f"clubmi: numeric failure at iteration {exc.iteration}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    config = {**cfg.to_dict(), "command": "estimate", "estimator": args.estimator,
              "task": args.task, "levels": args.levels, "window": args.window}
    rows = bench.quality_stats(trace, args.window)
    bench.emit_trace([trace], os.path.join(out, "trace.csv"), config, args.bandwidth)
    ext = "json" if args.format == "json" else "csv"
    bench.emit(rows, os.path.join(out, f"quality.{ext}"), args.format, config)
    for r in rows:
        print(f"{r.estimator:8s} {r.task:8s} MI={r.level:5.2f} mean={r.mean:8.4f} "
              f"bias={r.bias:+.4f} var={r.variance:.4f} mse={r.mse:.4f}")
    return EXIT_OK


def cmd_benchmark(args):
    for eid in args.estimators:
        err = _check_estimator(eid)
        if err is not None:
            return err
    for task in args.tasks:
        if task not in bench.TASKS:
            return _usage(f"unknown task {task!r}; valid: {', '.join(bench.TASKS)}")
    if not args.estimators:
        return _usage("estimator list is empty")
    cfg = _train_config(args)
    out = _out_dir(args)
    rows, traces, failures = bench.run_grid(args.estimators, args.tasks, args.levels, cfg,
                                            jobs=args.jobs, seeds=args.seeds,
                                            window_fraction=args.window)
    for (eid, task), msg in failures.items():
        log.warning("cell %s/%s failed: %s", eid, task, msg)
    config = {**cfg.to_dict(), "command": "benchmark", "estimators": args.estimators,
              "tasks": args.tasks, "levels": args.levels, "window": args.window,
              "seeds": args.seeds}
    ext = "json" if args.format == "json" else "csv"
    bench.emit(rows, os.path.join(out, f"quality.{ext}"), args.format, config,
               bench.QUALITY_COLUMNS + ("status",))
    if traces:
        bench.emit_trace(traces, os.path.join(out, "trace.csv"), config, args.bandwidth)
    for r in rows:
        print(f"{r.estimator:8s} {r.task:8s} MI={r.level:5.2f} mse={r.mse:10.4f} {r.status}")
    return EXIT_OK


def cmd_minimize(args):
    if args.estimator not in MINIMIZERS:
        return _usage(f"unknown minimization estimator {args.estimator!r}; "
                      f"valid ids: {', '.join(MINIMIZERS)}")
    tc = _train_config(args)
    try:
        mcfg = MinimizeConfig(tc, args.estimator, args.init_mi, args.max_iters, args.eval_every,
                              args.sampling, args.freeze_channel)
    except ContractError as exc:
        return _usage(str(exc))
    out = _out_dir(args)
    channel = LinearGaussianChannel.with_mi(args.init_mi, args.dim, stream(args.seed, "channel"))
    try:
        trace = minimize_mi(channel, mcfg)
    except NumericError as exc:
        print(f"clubmi: numeric failure at iteration {exc.iteration}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    rows = []
    prev = 0
    for it, mi in zip(trace.mi_iterations, trace.true_mi):
        est = float(np.mean(trace.estimates[prev:it])) if it > prev else float("nan")
        rows.append(_MinRow(int(it), est, float(mi)))
        prev = it
    config = {**mcfg.to_dict(), "command": "minimize", "sampling_branch": mcfg.use_sampling,
              "initial_true_mi": float(trace.true_mi[0])}
    ext = "json" if args.format == "json" else "csv"
    bench.emit(rows, os.path.join(out, f"minimize.{ext}"), args.format, config,
               ("iter", "estimate", "true_mi"))
    print(f"true MI {trace.true_mi[0]:.4f} -> {trace.true_mi[-1]:.4f} "
          f"after {mcfg.max_iters} iterations"
          + (" (diverged)" if trace.diverged else ""))
    return EXIT_OK


class _MinRow:
    def __init__(self, it, estimate, true_mi):
        self.iter, self.estimate, self.true_mi = it, estimate, true_mi


def cmd_timing(args):
    for eid in args.estimators:
        err = _check_estimator(eid)
        if err is not None:
            return err
        if eid in KNOWN_ONLY:
            return _usage(f"{eid} has no trainable model to time; use its variational variant")
    if any(b >= a for a, b in zip(args.batches[1:], args.batches)):
        return _usage("--batches must be sorted ascending")
    cfg = _train_config(args)
    out = _out_dir(args)
    try:
        rows = bench.time_estimators(args.estimators, args.batches, args.reps, cfg)
    except ContractError as exc:
        return _usage(str(exc))
    config = {**cfg.to_dict(), "command": "timing", "estimators": args.estimators,
              "batches": args.batches, "reps": args.reps}
    ext = "json" if args.format == "json" else "csv"
    bench.emit(rows, os.path.join(out, f"timing.{ext}"), args.format, config,
               bench.TIMING_COLUMNS)
    for r in rows:
        print(f"{r.estimator:8s} N={r.batch_size:4d} {1e3 * r.mean_seconds:9.3f} ms")
    return EXIT_OK


COMMANDS = {"estimate": cmd_estimate, "benchmark": cmd_benchmark,
            "minimize": cmd_minimize, "timing": cmd_timing}


def main(argv=None):
    try:
        _, args = parse_args(sys.argv[1:] if argv is None else argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except (ContractError, OSError) as exc:
        return _usage(str(exc))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ContractError as exc:
        return _usage(str(exc))


if __name__ == "__main__":
    sys.exit(main())
