"""Command-line entry point.

Exit status: 0 on success, 1 on a usage error, 2 when a pipeline stage fails.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import baselines, harness
from .config import ConfigError, ExperimentConfig, load_config
from .core import (RecordFormatError, TrainingData, read_records, read_variations,
                   write_records, write_variations)
from .perf import load_bundle, query, save_bundle, train_perf
from .tasks import PROFILES, get_task, make_evaluator, sample_variations

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common(p, task_required=False):
    p.add_argument("--config", help="INI config file (default: $BTMG_ADAPT_CONFIG)")
    p.add_argument("--task", choices=("obstacle", "push"), required=task_required)
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--profile", choices=PROFILES)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="btmg-adapt", description="Generalise policy parameters across task "
                 "variations with a reward GP and a feasibility SVM.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("sample", help="sample task variations to CSV")
    _common(p, task_required=True)
    p.add_argument("--n", type=int, default=20, help="number of variations")
    p.add_argument("--out", required=True, help="output CSV file")

    p = sub.add_parser("learn", help="run BO on each variation of a variations file")
    _common(p)
    p.add_argument("--variations", required=True, help="variations CSV")
    p.add_argument("--iters", type=int, help="evaluations per variation")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True, help="run directory")

    p = sub.add_parser("train-model", help="fit the PerF and direct models from histories")
    _common(p)
    p.add_argument("--histories", required=True, nargs="+",
                   help="history CSV files or directories containing them")
    p.add_argument("--out", required=True, help="model directory")

    p = sub.add_parser("query", help="policy parameters for one variation from a PerF bundle")
    _common(p)
    p.add_argument("--model", required=True, help="PerF model directory")
    p.add_argument("--variation", required=True, help="comma-separated variation vector")
    p.add_argument("--out", help="directory for config.snapshot")

    p = sub.add_parser("evaluate", help="simulate parameter rows of a CSV file")
    _common(p, task_required=True)
    p.add_argument("--params", required=True,
                   help="CSV with v_* and theta_* columns (e.g. a records file)")
    p.add_argument("--out", required=True, help="output records CSV")

    p = sub.add_parser("report", help="regenerate summaries of a run directory")
    p.add_argument("--out", required=True, help="run directory")

    p = sub.add_parser("reproduce", help="run the full comparison protocol")
    _common(p, task_required=True)
    p.add_argument("--iters", type=int, help="evaluations per BO run")
    p.add_argument("--n-train", type=int)
    p.add_argument("--n-test", type=int)
    p.add_argument("--reps", type=int)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True, help="run directory")
    return ap


def _experiment_config(args) -> ExperimentConfig:
    cfg = load_config(getattr(args, "config", None))
    changes = {}
    if getattr(args, "task", None):
        changes["task"] = args.task
    if getattr(args, "seed", None) is not None:
        if args.seed < 0:
            raise UsageError("--seed must be non-negative")
        changes["master_seed"] = args.seed
    if getattr(args, "profile", None):
        changes["profile"] = args.profile
    for flag, key in (("n_train", "n_train"), ("n_test", "n_test"), ("reps", "repetitions")):
        val = getattr(args, flag, None)
        if val is not None:
            changes[key] = val
    iters = getattr(args, "iters", None)
    if iters is not None:
        bo = cfg.bo
        try:
            changes["bo"] = dataclasses.replace(bo, t_max=iters, n_init=min(bo.n_init, iters))
        except ValueError as exc:
            raise UsageError(f"--iters: {exc}") from None
    try:
        return dataclasses.replace(cfg, **changes)
    except (ConfigError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def _parse_vector(text: str) -> np.ndarray:
    try:
        return np.array([float(a) for a in text.split(",")])
    except ValueError:
        raise UsageError(f"cannot parse vector {text!r}") from None


def _fmt_vec(x) -> str:
    return ", ".join(format(float(a), ".6g") for a in x)


def cmd_sample(args, cfg) -> None:
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    vs = sample_variations(cfg.task, args.n, cfg.master_seed, cfg.constants)
    write_variations(args.out, vs)
    harness.write_snapshot(Path(args.out).parent, cfg)
    print(f"wrote {len(vs)} {cfg.task} variations to {args.out}")


def cmd_learn(args, cfg) -> None:
    vs = read_variations(args.variations)
    if not vs:
        raise UsageError("variations file is empty")
    task = vs[0].task_id
    cfg = dataclasses.replace(cfg, task=task)
    out = Path(args.out)
    harness.write_snapshot(out, cfg)
    units = [(cfg, 0, i, "train", v.v) for i, v in enumerate(vs)]
    hists = harness._map(harness._bo_unit, units, args.jobs)
    for i, h in enumerate(hists):
        write_records(out / "history" / task / "0" / f"{i}.csv", h)
        best = max(h, key=lambda r: r.reward)
        print(f"variation {i}: best reward {best.reward:.6g} feasible {best.feasible} "
              f"theta [{_fmt_vec(best.theta)}]")


def _history_files(paths) -> list:
    files = []
    for p in map(Path, paths):
        if p.is_dir():
            files += sorted(f for f in p.rglob("*.csv") if not f.name.startswith("learned_"))
        elif p.is_file():
            files.append(p)
        else:
            raise UsageError(f"no such history path: {p}")
    if not files:
        raise UsageError("no history files found")
    return files


def cmd_train_model(args, cfg) -> None:
    hists = [read_records(f) for f in _history_files(args.histories)]
    hists = [h for h in hists if h]
    if not hists:
        raise UsageError("history files contain no records")
    task = hists[0][0].task_id
    cfg = dataclasses.replace(cfg, task=task)
    spec = get_task(task, cfg.constants)
    data = TrainingData.from_histories(hists)
    out = Path(args.out)
    harness.write_snapshot(out, cfg)
    model = train_perf(data, seed=cfg.master_seed, var_bounds=spec.var_bounds,
                       theta_bounds=spec.theta_bounds, C=cfg.svm.C, gamma=cfg.svm.gamma,
                       max_points=cfg.gp.max_points, mu_factor=cfg.perf.mu_factor)
    save_bundle(model, out / "perf")
    print(f"PerF model: {len(data.history)} records from {len(data.best)} variations, "
          f"mu={model.mu:.6g}, lengthscale={model.j_hat.lengthscale:.4g} -> {out / 'perf'}")
    if len(data.best) >= 2:
        direct = baselines.train_direct(data.best, spec.var_bounds, spec.theta_bounds,
                                        seed=cfg.master_seed)
        baselines.save_direct(direct, out / "direct")
        print(f"direct model -> {out / 'direct'}")


def cmd_query(args, cfg) -> None:
    model = load_bundle(args.model)
    v = _parse_vector(args.variation)
    if v.size != model.var_bounds.dim:
        raise UsageError(f"variation needs {model.var_bounds.dim} values, got {v.size}")
    cfg = dataclasses.replace(cfg, task=model.task_id)
    if args.out:
        harness.write_snapshot(Path(args.out), cfg)
    q = query(model, v, n_starts=cfg.perf.n_starts, seed=cfg.master_seed)
    print(f"theta: {_fmt_vec(q.theta_hat)}")
    print(f"predicted reward: {q.predicted_reward:.6g}")
    print(f"predicted feasible: {q.predicted_feasible}")
    if q.fallback_flag:
        print("note: no start reached a point classified feasible")
    if q.extrapolated:
        print("note: variation lies outside the training bounds")


def cmd_evaluate(args, cfg) -> None:
    import csv
    spec = get_task(cfg.task, cfg.constants)
    with open(args.params, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise RecordFormatError(args.params, 1, "empty file")
    head = rows[0]
    vi = [head.index(f"v_{i}") for i in range(spec.m) if f"v_{i}" in head]
    ti = [head.index(f"theta_{i}") for i in range(spec.n) if f"theta_{i}" in head]
    if len(vi) != spec.m or len(ti) != spec.n:
        raise RecordFormatError(args.params, 1, f"need v_0..v_{spec.m - 1} and "
                                f"theta_0..theta_{spec.n - 1} columns")
    ev = make_evaluator(cfg.task, cfg.profile, cfg.constants)
    recs = []
    for lineno, row in enumerate(rows[1:], start=2):
        try:
            recs.append(ev([float(row[i]) for i in vi], [float(row[i]) for i in ti]))
        except (ValueError, IndexError) as exc:
            raise RecordFormatError(args.params, lineno, str(exc)) from None
    write_records(args.out, recs, layout=(spec.m, spec.n, spec.metrics))
    harness.write_snapshot(Path(args.out).parent, cfg)
    n_feas = sum(r.feasible for r in recs)
    print(f"evaluated {len(recs)} parameter sets: {n_feas} feasible -> {args.out}")


def cmd_report(args) -> None:
    report = harness.load_report(args.out)
    harness.write_reports(Path(args.out) / "results", report)
    print(harness.render_text(report), end="")


def cmd_reproduce(args, cfg) -> None:
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    report = harness.run_experiment(cfg, args.out, jobs=args.jobs)
    print(harness.render_text(report), end="")
    t = report.timing
    print(f"\nlearning {t['learning_s']:.1f} s, models and queries "
          f"{t['models_and_queries_s']:.1f} s, total {t['total_s']:.1f} s")


_STAGES = {"sample": cmd_sample, "learn": cmd_learn, "train-model": cmd_train_model,
           "query": cmd_query, "evaluate": cmd_evaluate, "reproduce": cmd_reproduce}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.ERROR, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "report":
            cmd_report(args)
        else:
            _STAGES[args.command](args, _experiment_config(args))
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"btmg-adapt: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # any failure inside a stage
        stage = getattr(args, "command", "?") if "args" in locals() else "?"
        print(f"btmg-adapt: {stage} failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
