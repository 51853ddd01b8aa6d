"""Experiment protocol: learn training variations, fit models, compare methods on test variations.

Work is split into independent units (one BO run per variation, then one
model-fitting/evaluation unit per repetition).  Each unit receives its own
seed derived from ``(master_seed, rep, variation_index, method)``, so results
do not depend on how many worker processes execute them.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import os
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import baselines
from .bayesopt import bo_learn
from .config import METHODS, ExperimentConfig, config_to_text, parse_config
from .core import TrainingData, format_real, write_records, write_variations
from .perf import query, save_bundle, train_perf
from .tasks import get_task, make_evaluator, sample_variations

log = logging.getLogger(__name__)

# summary metrics per task: "reward" is the record reward, the rest are metric columns
REPORT_METRICS = {"obstacle": ("reward", "finish_time"), "push": ("pos_error", "ori_error")}
MAX_TEST_RESAMPLES = 100


class HarnessError(RuntimeError):
    pass


def derive_seed(master_seed: int, rep: int, index: int, method: str) -> int:
    """Independent 63-bit seed for one (repetition, variation, method) unit."""
    ss = np.random.SeedSequence([int(master_seed), int(rep), int(index),
                                 zlib.crc32(method.encode("utf-8"))])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


@dataclass(frozen=True)
class RawRow:
    task: str
    rep: int
    var_idx: int
    method: str
    v: tuple
    theta: tuple
    reward: float
    feasible: int
    metrics: dict

    def value(self, metric: str) -> float:
        return self.reward if metric == "reward" else self.metrics[metric]


@dataclass
class ExperimentReport:
    task: str
    rows: list
    summary: dict
    config_hash: str
    master_seed: int
    timing: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# variation sampling
# ---------------------------------------------------------------------------

def sample_rep_variations(cfg: ExperimentConfig, rep: int) -> tuple:
    """Train and test variations of one repetition; test points never repeat a train point."""
    c = cfg.constants
    train = sample_variations(cfg.task, cfg.n_train,
                              derive_seed(cfg.master_seed, rep, 0, "train_variations"), c)
    seen = {t.v for t in train}
    for attempt in range(MAX_TEST_RESAMPLES):
        test = sample_variations(cfg.task, cfg.n_test,
                                 derive_seed(cfg.master_seed, rep, attempt, "test_variations"), c)
        if not any(t.v in seen for t in test):
            break
    else:
        raise HarnessError(f"rep={rep}: could not draw test variations disjoint from training")
    if cfg.task == "push":
        for var in train + test:
            s, g = np.array(var.v[:2]), np.array(var.v[2:])
            if not np.linalg.norm(g - s) > c.pos_tol_real:
                raise HarnessError(f"push variation {var.v} has its goal within tolerance of start")
    return train, test


# ---------------------------------------------------------------------------
# work units (top-level so they can run in worker processes)
# ---------------------------------------------------------------------------

def _bo_unit(args):
    cfg, rep, idx, kind, v = args
    try:
        ev = make_evaluator(cfg.task, cfg.profile, cfg.constants)
        spec = get_task(cfg.task, cfg.constants)
        bo = dataclasses.replace(cfg.bo, seed=derive_seed(cfg.master_seed, rep, idx, kind))
        history, _ = bo_learn(lambda th: ev(v, th), spec.theta_bounds, bo)
        return history
    except Exception as exc:
        method = "learned" if kind == "learned" else "training"
        raise HarnessError(f"rep={rep} variation={idx} method={method}: {exc}") from exc


def _rep_unit(args):
    cfg, rep, train, test, train_hists, learned_hists = args
    spec = get_task(cfg.task, cfg.constants)
    ev = make_evaluator(cfg.task, cfg.profile, cfg.constants)
    ms = cfg.master_seed
    methods = [m for m in METHODS if m in cfg.methods]
    data = TrainingData.from_histories(train_hists) if train_hists else None
    models = {}
    stage = "perf"
    try:
        if "perf" in methods:
            models["perf"] = train_perf(data, seed=derive_seed(ms, rep, 0, "perf_fit"),
                                        var_bounds=spec.var_bounds,
                                        theta_bounds=spec.theta_bounds, C=cfg.svm.C,
                                        gamma=cfg.svm.gamma, max_points=cfg.gp.max_points,
                                        mu_factor=cfg.perf.mu_factor)
        stage = "direct"
        if "direct" in methods:
            models["direct"] = baselines.train_direct(
                data.best, spec.var_bounds, spec.theta_bounds,
                seed=derive_seed(ms, rep, 0, "direct_fit"))
        stage = "single_policy"
        single = (baselines.single_policy(data.best, spec.var_bounds)
                  if "single_policy" in methods else None)
    except Exception as exc:
        raise HarnessError(f"rep={rep} variation=- method={stage}: {exc}") from exc
    rows, notes = [], []
    for idx, var in enumerate(test):
        for m in methods:
            try:
                if m == "learned":
                    hist = learned_hists[idx]
                    theta = hist[int(np.argmax([r.reward for r in hist]))].theta
                elif m == "perf":
                    q = query(models["perf"], var.v, data, n_starts=cfg.perf.n_starts,
                              seed=derive_seed(ms, rep, idx, "perf"))
                    theta = q.theta_hat
                    notes.append({"rep": rep, "var_idx": idx, "fallback": q.fallback_flag,
                                  "predicted_reward": q.predicted_reward,
                                  "predicted_feasible": q.predicted_feasible})
                elif m == "direct":
                    theta = baselines.query_direct(models["direct"], var.v)
                elif m == "nearest_neighbor":
                    theta = baselines.nearest_neighbor(data.best, var.v, spec.var_bounds)
                else:
                    theta = single
                rec = ev(var.v, theta)
            except Exception as exc:
                raise HarnessError(f"rep={rep} variation={idx} method={m}: {exc}") from exc
            rows.append(RawRow(cfg.task, rep, idx, m, rec.v, rec.theta, rec.reward,
                               rec.feasible, rec.metrics))
    return rows, models, notes


def _map(fn, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [fn(a) for a in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items, chunksize=1))


# ---------------------------------------------------------------------------
# orchestration
# ---------------------------------------------------------------------------

def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(config_to_text(cfg).encode("utf-8")).hexdigest()[:16]


def run_experiment(cfg: ExperimentConfig, out_dir=None, jobs: int = 1,
                   variations: Optional[dict] = None) -> ExperimentReport:
    """Run the full protocol.  ``variations`` maps rep -> (train, test) to bypass sampling."""
    t0 = time.perf_counter()
    timing = {}
    reps = range(cfg.repetitions)
    plan = {r: (variations[r] if variations and r in variations else sample_rep_variations(cfg, r))
            for r in reps}
    needs_train = any(m != "learned" for m in cfg.methods)
    units = []
    for r in reps:
        train, test = plan[r]
        if needs_train:
            units += [(cfg, r, i, "train", v.v) for i, v in enumerate(train)]
        if "learned" in cfg.methods:
            units += [(cfg, r, i, "learned", v.v) for i, v in enumerate(test)]
    hists = _map(_bo_unit, units, jobs)
    timing["learning_s"] = time.perf_counter() - t0
    by_rep = {r: ([], []) for r in reps}
    for u, h in zip(units, hists):
        by_rep[u[1]][0 if u[3] == "train" else 1].append(h)
    t1 = time.perf_counter()
    rep_units = [(cfg, r, plan[r][0], plan[r][1], by_rep[r][0], by_rep[r][1]) for r in reps]
    outs = _map(_rep_unit, rep_units, jobs)
    timing["models_and_queries_s"] = time.perf_counter() - t1
    rows = [row for rows_r, _, _ in outs for row in rows_r]
    report = ExperimentReport(cfg.task, rows, summarize_rows(rows, cfg.task),
                              config_hash(cfg), cfg.master_seed)
    timing["total_s"] = time.perf_counter() - t0
    timing["jobs"] = jobs
    timing["cpu_count"] = os.cpu_count()
    report.timing = timing
    if out_dir is not None:
        _persist(Path(out_dir), cfg, plan, units, hists, outs, report)
    return report


def _persist(out: Path, cfg, plan, units, hists, outs, report) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_snapshot(out, cfg)
    for r, (train, test) in plan.items():
        write_variations(out / "vars" / f"{cfg.task}_rep{r}_train.csv", train)
        write_variations(out / "vars" / f"{cfg.task}_rep{r}_test.csv", test)
    for (_, r, i, kind, _v), h in zip(units, hists):
        name = f"{i}.csv" if kind == "train" else f"learned_{i}.csv"
        write_records(out / "history" / cfg.task / str(r) / name, h)
    for r, (_, models, notes) in enumerate(outs):
        mdir = out / "models" / cfg.task / f"rep{r}"
        if "perf" in models:
            save_bundle(models["perf"], mdir / "perf")
        if "direct" in models:
            baselines.save_direct(models["direct"], mdir / "direct")
        if notes:
            mdir.mkdir(parents=True, exist_ok=True)
            (mdir / "perf_queries.json").write_text(json.dumps(notes, indent=1) + "\n",
                                                    encoding="utf-8")
    write_raw(out / "results" / "raw.csv", report.rows)
    write_reports(out / "results", report)
    (out / "results" / "timing.json").write_text(json.dumps(report.timing, indent=1) + "\n",
                                                 encoding="utf-8")


def write_snapshot(out: Path, cfg: ExperimentConfig) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    p = out / "config.snapshot"
    p.write_text(config_to_text(cfg), encoding="utf-8", newline="\n")
    return p


# ---------------------------------------------------------------------------
# raw results
# ---------------------------------------------------------------------------

def _raw_header(task: str) -> list:
    spec = get_task(task)
    return (["task", "rep", "var_idx", "method"] + [f"v_{i}" for i in range(spec.m)]
            + [f"theta_{i}" for i in range(spec.n)] + ["reward", "feasible"] + list(spec.metrics))


def write_raw(path, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not rows:
        raise HarnessError("no raw rows to write")
    task = rows[0].task
    names = get_task(task).metrics
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_raw_header(task))
        for r in rows:
            w.writerow([r.task, r.rep, r.var_idx, r.method] + [format_real(a) for a in r.v]
                       + [format_real(a) for a in r.theta] + [format_real(r.reward), r.feasible]
                       + [format_real(r.metrics[k]) for k in names])


def read_raw(path) -> list:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise HarnessError(f"{path}: no result rows")
    header = rows[0]
    task = rows[1][0]
    spec = get_task(task)
    if header != _raw_header(task):
        raise HarnessError(f"{path}:1: unexpected header")
    m, n = spec.m, spec.n
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        try:
            vals = [float(a) for a in row[4:]]
            out.append(RawRow(row[0], int(row[1]), int(row[2]), row[3], tuple(vals[:m]),
                              tuple(vals[m:m + n]), vals[m + n], int(vals[m + n + 1]),
                              dict(zip(spec.metrics, vals[m + n + 2:]))))
        except (ValueError, IndexError) as exc:
            raise HarnessError(f"{path}:{lineno}: {exc}") from None
    return out


# ---------------------------------------------------------------------------
# summaries
# ---------------------------------------------------------------------------

def percentiles(values) -> tuple:
    """(median, p25, p75) by linear interpolation between order statistics."""
    a = np.asarray(values, dtype=float)
    if a.size == 0:
        return (math.nan, math.nan, math.nan)
    q = np.percentile(a, [50, 25, 75], method="linear")
    return float(q[0]), float(q[1]), float(q[2])


def summarize_rows(rows, task: str) -> dict:
    """Per-method success rates and per-metric median / quartiles."""
    if not rows:
        raise HarnessError("cannot summarise an empty report")
    present = [m for m in METHODS if any(r.method == m for r in rows)]
    reps = sorted({r.rep for r in rows})
    out = {}
    for m in present:
        rs = [r for r in rows if r.method == m]
        by_rep = []
        for rep in reps:
            rr = [r for r in rs if r.rep == rep]
            if rr:
                by_rep.append(100.0 * sum(r.feasible for r in rr) / len(rr))
        entry = {
            "n": len(rs),
            "success_pct": 100.0 * sum(r.feasible for r in rs) / len(rs),
            "success_by_rep": by_rep,
            "success_rep_median": percentiles(by_rep)[0],
            "metrics": {},
        }
        for metric in REPORT_METRICS[task]:
            med, p25, p75 = percentiles([r.value(metric) for r in rs])
            feas = [r.value(metric) for r in rs if r.feasible]
            entry["metrics"][metric] = {"median": med, "p25": p25, "p75": p75,
                                        "median_feasible": percentiles(feas)[0]}
        out[m] = entry
    return out


def _num(x: float) -> str:
    return "nan" if math.isnan(x) else format(x, ".6g")


def render_csv(report: ExperimentReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["task", "metric", "method", "n", "success_pct", "success_rep_median", "median",
                "p25", "p75", "median_feasible"])
    for metric in REPORT_METRICS[report.task]:
        for m, e in report.summary.items():
            s = e["metrics"][metric]
            w.writerow([report.task, metric, m, e["n"], format_real(e["success_pct"]),
                        format_real(e["success_rep_median"]), format_real(s["median"]), format_real(s["p25"]),
                        format_real(s["p75"]), format_real(s["median_feasible"])])
    return buf.getvalue()


def _table_rows(report: ExperimentReport):
    head = ["method", "success %", "success % (rep median)"]
    for metric in REPORT_METRICS[report.task]:
        head += [f"{metric} median", f"{metric} p25", f"{metric} p75",
                 f"{metric} median (feasible)"]
    body = []
    for m, e in report.summary.items():
        row = [m, _num(e["success_pct"]), _num(e["success_rep_median"])]
        for metric in REPORT_METRICS[report.task]:
            s = e["metrics"][metric]
            row += [_num(s["median"]), _num(s["p25"]), _num(s["p75"]), _num(s["median_feasible"])]
        body.append(row)
    return head, body


def render_text(report: ExperimentReport) -> str:
    head, body = _table_rows(report)
    widths = [max(len(h), *(len(r[i]) for r in body)) for i, h in enumerate(head)]
    lines = [f"task: {report.task}   master seed: {report.master_seed}   "
             f"config: {report.config_hash}", ""]
    lines.append("  ".join(h.ljust(w) for h, w in zip(head, widths)).rstrip())
    lines.append("  ".join("-" * w for w in widths))
    for r in body:
        lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())
    return "\n".join(lines) + "\n"


def render_markdown(report: ExperimentReport) -> str:
    head, body = _table_rows(report)
    lines = [f"**{report.task}** (master seed {report.master_seed}, config {report.config_hash})",
             "", "| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    lines += ["| " + " | ".join(r) + " |" for r in body]
    return "\n".join(lines) + "\n"


def write_reports(directory, report: ExperimentReport) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name, text in (("report.txt", render_text(report)), ("report.csv", render_csv(report)),
                       ("report.md", render_markdown(report))):
        (d / name).write_text(text, encoding="utf-8", newline="\n")


def load_report(run_dir) -> ExperimentReport:
    """Rebuild the report of a run directory from its snapshot and raw results."""
    run_dir = Path(run_dir)
    snap = run_dir / "config.snapshot"
    cfg = parse_config(snap.read_text(encoding="utf-8"))
    rows = read_raw(run_dir / "results" / "raw.csv")
    return ExperimentReport(cfg.task, rows, summarize_rows(rows, cfg.task), config_hash(cfg),
                            cfg.master_seed)
