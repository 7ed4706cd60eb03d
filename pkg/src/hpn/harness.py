"""Task-sequence runner, accuracy matrix and forgetting metrics."""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .model import HpnModel, TrainConfig, count_parameters, evaluate, train_epochs
from .numerics import child_rng


class AccuracyMatrix:
    """Lower-triangular grid ``M[i][j]``: accuracy on task ``j`` after training through task ``i``.

    Indices are 0-based in code and 1-based in the CSV file.  Undefined
    entries hold NaN.
    """

    def __init__(self, p):
        if p < 1:
            raise ValueError("need at least one task")
        self.values = np.full((p, p), np.nan)

    @property
    def p(self):
        return self.values.shape[0]

    def set(self, i, j, acc):
        if j > i:
            raise IndexError(f"M[{i}][{j}] lies above the diagonal")
        if not 0.0 <= acc <= 1.0:
            raise ValueError(f"accuracy {acc} outside [0, 1]")
        self.values[i, j] = acc

    def __getitem__(self, ij):
        return self.values[ij]

    def row(self, i):
        return self.values[i, : i + 1]

    @classmethod
    def from_rows(cls, rows):
        m = cls(len(rows))
        for i, r in enumerate(rows):
            for j, a in enumerate(r):
                if a is not None and not (isinstance(a, float) and math.isnan(a)):
                    m.set(i, j, a)
        return m

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["trained_through", "task", "accuracy"])
            for i in range(self.p):
                for j in range(i + 1):
                    if not math.isnan(self.values[i, j]):
                        w.writerow([i + 1, j + 1, repr(float(self.values[i, j]))])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            if next(reader, None) != ["trained_through", "task", "accuracy"]:
                raise ValueError(f"{path}: expected header trained_through,task,accuracy")
            rows = [(int(a), int(b), float(c)) for a, b, c in reader if a]
        if not rows:
            raise ValueError(f"{path}: no entries")
        m = cls(max(max(a, b) for a, b, _ in rows))
        for a, b, c in rows:
            m.set(a - 1, b - 1, c)
        return m


def compute_am_fm(M: AccuracyMatrix):
    """``(AM, FM, fm_defined)`` from the final row; FM is 0 and undefined for one task."""
    p = M.p
    last = M.values[p - 1]
    am = float(np.mean(last[:p]))
    if p == 1:
        return am, 0.0, False
    diag = np.diag(M.values)[: p - 1]
    if np.any(np.isnan(diag)):
        return am, 0.0, False
    fm = float(np.mean(last[: p - 1] - diag))
    return am, fm, True


def compute_ars(M: AccuracyMatrix, return_skipped=False):
    """Average retaining score for every task index ``i >= 2`` (list position 0 is task 2).

    Terms whose just-learned accuracy ``M[m][m]`` is zero are skipped; an
    ARS with every term skipped is NaN.
    """
    out, skipped = [], []
    for i in range(1, M.p):
        ratios = []
        for m in range(i):
            base = M.values[m, m]
            if base == 0 or math.isnan(base) or math.isnan(M.values[i, m]):
                skipped.append((i + 1, m + 1))
                continue
            ratios.append(M.values[i, m] / base)
        out.append(float(np.mean(ratios)) if ratios else float("nan"))
    return (out, skipped) if return_skipped else out


@dataclass
class RunRecord:
    mode: str
    config: dict
    matrix: AccuracyMatrix
    am: float
    fm: float
    fm_defined: bool
    ars: list
    task_seconds: list = field(default_factory=list)
    param_counts: list = field(default_factory=list)  # count_parameters() after each task
    log: list = field(default_factory=list)

    def metrics(self):
        return {
            "mode": self.mode,
            "AM": self.am,
            "FM": self.fm,
            "FM_defined": self.fm_defined,
            "ARS": self.ars,
            "tasks": self.matrix.p,
            "task_seconds": self.task_seconds,
            "param_counts": self.param_counts,
        }


def _config_echo(model: HpnModel, tcfg: TrainConfig):
    return {"model": asdict(model.cfg), "train": asdict(tcfg)}


def run_sequence(model: HpnModel, views, tcfg: TrainConfig, rng=None):
    """Train on each task in turn; after task ``i`` evaluate every task seen so far."""
    views = list(views)
    if not views:
        raise ValueError("need at least one task")
    rng = rng if rng is not None else child_rng(model.cfg.seed, 1)
    M = AccuracyMatrix(len(views))
    rec = RunRecord("sequential", _config_echo(model, tcfg), M, 0.0, 0.0, False, [])
    for i, view in enumerate(views):
        t0 = time.perf_counter()
        train_epochs(model, [view], tcfg, rng, stage=i, log=rec.log, task_label=i + 1)
        rec.task_seconds.append(time.perf_counter() - t0)
        for j in range(i + 1):
            M.set(i, j, evaluate(model, views[j]))
        rec.param_counts.append(count_parameters(model))
    rec.am, rec.fm, rec.fm_defined = compute_am_fm(M)
    rec.ars = compute_ars(M)
    return rec


def run_joint(model_factory, views, tcfg: TrainConfig, rng=None):
    """Non-continual reference: every epoch visits every task's training nodes.

    Only the final row of the matrix exists, so FM is flagged undefined
    unless there is a single task.
    """
    views = list(views)
    if not views:
        raise ValueError("need at least one task")
    model = model_factory()
    rng = rng if rng is not None else child_rng(model.cfg.seed, 1)
    p = len(views)
    M = AccuracyMatrix(p)
    rec = RunRecord("joint", _config_echo(model, tcfg), M, 0.0, 0.0, False, [])
    t0 = time.perf_counter()
    train_epochs(model, views, tcfg, rng, stage=0, log=rec.log, task_label=1 if p == 1 else "all")
    rec.task_seconds.append(time.perf_counter() - t0)
    for j, view in enumerate(views):
        M.set(p - 1, j, evaluate(model, view))
    rec.param_counts.append(count_parameters(model))
    rec.am, rec.fm, rec.fm_defined = compute_am_fm(M)
    rec.ars = compute_ars(M) if p == 1 else []
    rec.model = model
    return rec


RUNLOG_KEYS = ("task", "epoch", "loss_cls", "loss_div", "loss_dis", "n_proto_a", "n_proto_n", "n_proto_c", "params_total")


def write_run_outputs(rec: RunRecord, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rec.matrix.to_csv(out / "acc_matrix.csv")
    with open(out / "metrics.json", "w") as fh:
        json.dump(rec.metrics(), fh, indent=2, sort_keys=True)
    with open(out / "runlog.jsonl", "w") as fh:
        for row in rec.log:
            fh.write(json.dumps({k: _plain(row[k]) for k in RUNLOG_KEYS}) + "\n")


def _plain(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    return x


def params_non_decreasing(log):
    totals = [row["params_total"] for row in log]
    return all(a <= b for a, b in zip(totals, totals[1:]))
