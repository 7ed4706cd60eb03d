"""Command-line entry point: ``hpn gen-synth | train | eval | metrics | check``."""
from __future__ import annotations

import argparse
import json
import os
import shutil
import sys
import tempfile
from pathlib import Path

from . import harness, theory
from .config import ConfigError, RunConfig, defaults_summary, load_config
from .graphstore import GraphFormatError, TaskSpec, gen_synthetic, load_dataset, make_task_subgraphs, save_graph
from .model import HpnModel, TrainingDiverged, evaluate
from .numerics import child_rng, make_rng


class CliError(RuntimeError):
    pass


class _Staging:
    """Write into a scratch directory, move files into place only on success."""

    def __init__(self, out):
        self.out = Path(out)
        self.out.parent.mkdir(parents=True, exist_ok=True)
        self.tmp = None

    def __enter__(self):
        self.tmp = Path(tempfile.mkdtemp(prefix=f".{self.out.name}.partial-", dir=self.out.parent))
        return self.tmp

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            self.out.mkdir(parents=True, exist_ok=True)
            for f in sorted(self.tmp.iterdir()):
                os.replace(f, self.out / f.name)
        shutil.rmtree(self.tmp, ignore_errors=True)
        return False


def _config(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "joint", False):
        cfg.joint = True
    if getattr(args, "freeze_prototypes", False):
        cfg.train.freeze_prototypes = True
    if args.data is not None:
        cfg.data = str(args.data)
    if args.out is not None:
        cfg.out = str(args.out)
    return cfg


def _dataset(path):
    if path is None:
        raise CliError("--data is required")
    g, splits, spec = load_dataset(path)
    if spec is None:
        raise CliError(f"{path}: tasks.json missing")
    views = make_task_subgraphs(g, spec, splits)
    return g, views


def _head_width(views):
    return max(v.num_classes for v in views)


def cmd_gen_synth(args):
    if args.out is None:
        raise CliError("--out is required")
    seed = 0 if args.seed is None else args.seed
    g, splits = gen_synthetic(args.classes, args.per_class, args.dim, args.intra_p, args.inter_p, args.sep, make_rng(seed))
    k = args.classes_per_task
    spec = TaskSpec([list(range(i, min(i + k, args.classes))) for i in range(0, args.classes, k)])
    with _Staging(args.out) as tmp:
        save_graph(g, splits, tmp)
        spec.save(tmp / "tasks.json")
    print(f"wrote {g.num_nodes} nodes, {len(spec.tasks)} tasks to {args.out}")


def cmd_train(args):
    cfg = _config(args)
    if cfg.out is None:
        raise CliError("--out is required")
    g, views = _dataset(cfg.data)
    problems = cfg.problems(g.dim, _head_width(views))
    if problems:
        raise ConfigError(problems)

    def factory():
        return HpnModel(cfg.model_config(g.dim, _head_width(views)))

    rng = child_rng(cfg.seed, 1)
    with _Staging(cfg.out) as tmp:
        if cfg.joint:
            rec = harness.run_joint(factory, views, cfg.train, rng)
            model = rec.model
        else:
            model = factory()
            rec = harness.run_sequence(model, views, cfg.train, rng)
        harness.write_run_outputs(rec, tmp)
        model.save(tmp / "checkpoint.json")
        (tmp / "config.toml").write_text(cfg.to_toml())
    am, fm, ok = rec.am, rec.fm, rec.fm_defined
    print(f"AM {100 * am:.2f}  FM {100 * fm:+.2f}{'' if ok else ' (undefined)'}  -> {cfg.out}")


def cmd_eval(args):
    if args.checkpoint is None:
        raise CliError("--checkpoint is required")
    _, views = _dataset(args.data)
    model = HpnModel.load(args.checkpoint)
    accs = {str(v.task_id + 1): evaluate(model, v, split=args.split) for v in views}
    text = json.dumps({"split": args.split, "accuracy": accs}, indent=2, sort_keys=True)
    if args.out is not None:
        with _Staging(args.out) as tmp:
            (tmp / "eval.json").write_text(text + "\n")
    print(text)


def cmd_metrics(args):
    run = Path(args.run) if args.run else None
    matrix = Path(args.matrix) if args.matrix else (run / "acc_matrix.csv" if run else None)
    if matrix is None:
        raise CliError("give --run DIR or --matrix FILE")
    M = harness.AccuracyMatrix.from_csv(matrix)
    am, fm, ok = harness.compute_am_fm(M)
    ars, skipped = harness.compute_ars(M, return_skipped=True)
    out = Path(args.out) if args.out else (run if run else matrix.parent)
    existing = out / "metrics.json"
    data = json.loads(existing.read_text()) if existing.exists() else {}
    data.update({"AM": am, "FM": fm, "FM_defined": ok, "ARS": ars, "ARS_skipped": skipped, "tasks": M.p})
    with _Staging(out) as tmp:
        (tmp / "metrics.json").write_text(json.dumps(data, indent=2, sort_keys=True))
    ars_txt = " ".join(f"{a:.4f}" for a in ars) or "-"
    print(f"AM {am:.4f}  FM {fm:+.4f}{'' if ok else ' (undefined)'}  ARS {ars_txt}")


def cmd_check(args):
    cfg = _config(args)
    if cfg.out is None:
        raise CliError("--out is required")
    g = views = None
    if cfg.data is not None:
        g, views = _dataset(cfg.data)
    d_v = g.dim if g is not None else 1
    width = _head_width(views) if views else 2
    problems = cfg.problems(d_v, width)
    if problems:
        raise ConfigError(problems)
    mcfg = cfg.model_config(d_v, width)
    model = None
    observed = trajectory = None
    if args.against:
        run = Path(args.against)
        model = HpnModel.load(run / "checkpoint.json")
        mcfg = model.cfg
        observed = {lvl: len(s) for lvl, s in model.stores.items()}
        log = run / "runlog.jsonl"
        if log.exists():
            trajectory = [json.loads(x) for x in log.read_text().splitlines() if x.strip()]
    report = theory.memory_bound(mcfg, observed=observed, trajectory=trajectory).to_dict()
    report["formula_note"] = (
        "formula_bound uses 2*pi/arccos(1-t) per extractor; rule_bound is the cap the store's "
        "creation rule (pairwise cosine < t) enforces, floor(2*pi/arccos(t)) for one 2-d store"
    )
    report["large_graph_accounting"] = theory.large_graph_accounting()
    with _Staging(cfg.out) as tmp:
        theory.write_report(report, tmp / "bound_report.json")
        if views is not None and len(views) >= 2:
            if model is None:
                model = HpnModel(mcfg)
            pairs = []
            for a, b in zip(views, views[1:]):
                r = theory.check_theorem_two(model.bank, a, b, mcfg.t_a).to_dict()
                r["tasks"] = [a.task_id + 1, b.task_id + 1]
                pairs.append(r)
            theory.write_report({"pairs": pairs, "verdict": all(p["verdict"] for p in pairs)}, tmp / "theorem2_report.json")
    for lv in report["levels"]:
        bound = f"bound {lv['rule_bound']}" if lv["rule_bound"] is not None else lv["note"]
        obs = "" if lv["observed"] is None else f", observed {lv['observed']}"
        print(f"{lv['level']}: dim {lv['dim']} t {lv['threshold']}: {bound}{obs}")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML run config (default: built-in defaults)")
    common.add_argument("--data", type=Path, help="dataset directory with nodes/edges/splits csv and tasks.json")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--seed", type=int, default=None, help="overrides the config seed (default 0)")

    epilog = "run config defaults:\n  " + "\n  ".join(defaults_summary())
    p = argparse.ArgumentParser(prog="hpn", description="Continual node classification with prototype hierarchies.",
                                epilog=epilog, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    g = sub.add_parser("gen-synth", parents=[common], formatter_class=fmt, help="write a synthetic block-model dataset")
    g.add_argument("--classes", type=int, default=6)
    g.add_argument("--per-class", type=int, default=200)
    g.add_argument("--dim", type=int, default=32)
    g.add_argument("--intra-p", type=float, default=0.05)
    g.add_argument("--inter-p", type=float, default=0.01)
    g.add_argument("--sep", type=float, default=4.0)
    g.add_argument("--classes-per-task", type=int, default=2)
    g.set_defaults(func=cmd_gen_synth)

    t = sub.add_parser("train", parents=[common], formatter_class=argparse.RawDescriptionHelpFormatter,
                       epilog=epilog, help="train on the task sequence and write a run directory")
    t.add_argument("--joint", action="store_true", help="train on all tasks at once instead of in sequence")
    t.add_argument("--freeze-prototypes", action="store_true", help="no prototype creation or updates after task 1")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common], formatter_class=fmt, help="accuracy of a checkpoint on every task")
    e.add_argument("--checkpoint", type=Path)
    e.add_argument("--split", default="test", choices=["train", "val", "test"])
    e.set_defaults(func=cmd_eval)

    m = sub.add_parser("metrics", parents=[common], formatter_class=fmt, help="recompute AM/FM/ARS from acc_matrix.csv")
    m.add_argument("--run", type=Path, help="run directory")
    m.add_argument("--matrix", type=Path, help="explicit acc_matrix.csv")
    m.set_defaults(func=cmd_metrics)

    c = sub.add_parser("check", parents=[common], formatter_class=argparse.RawDescriptionHelpFormatter,
                       epilog=epilog, help="prototype-count bound and representation-preservation reports")
    c.add_argument("--against", type=Path, help="finished run directory to compare with the bound")
    c.set_defaults(func=cmd_check)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"hpn: {exc}", file=sys.stderr)
        return 2
    except (CliError, GraphFormatError, TrainingDiverged, FileNotFoundError, ValueError) as exc:
        print(f"hpn: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
