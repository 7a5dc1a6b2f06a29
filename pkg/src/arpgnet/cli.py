"""Command-line entry point: ``arpgnet <command> [options]``.

Every command writes into ``<out>/<command>-<timestamp>-seed<N>/`` and prints
that directory. Failures print one line ``error: <category>: <message>`` to
stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import RunConfig, load_run_config
from .data import Dataset, DatasetError, collate, load_dataset, sample_sparse_test, save_dataset, synth_generate
from .evaluation import (
    LeakageError,
    ablation_run,
    bench_inference,
    compute_metrics,
    dump_attention,
    example_input,
    loso_run,
)
from .graphs import build_fusion_graph, build_relation_graph, degree_histogram
from .model import VARIANTS, ArpgNet, ArpgNetConfig, ConfigError
from .numerics import DimensionError, NonFiniteError
from .training import TrainingError, fit, predict

logger = logging.getLogger("arpgnet")

ERROR_CATEGORIES = [
    (ConfigError, "config", 2),
    (DatasetError, "dataset", 3),
    (CheckpointError, "checkpoint", 4),
    (TrainingError, "training", 5),
    (NonFiniteError, "training", 5),
    (DimensionError, "shape", 6),
    (LeakageError, "leakage", 7),
    (OSError, "io", 8),
]

STOCHASTIC = {"synth", "train", "loso", "ablate"}
COMMANDS = ["synth", "train", "eval", "loso", "ablate", "inspect-graph", "inspect-attention", "bench", "export-report"]


class UsageError(ConfigError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError([message])


# -- argument parsing -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="INI run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="parent directory for run directories (default: runs)")
    common.add_argument("--variant", help="|".join(VARIANTS))
    common.add_argument("--trs", type=int)
    common.add_argument("--p", type=int, dest="P")
    common.add_argument("--heads", type=int)
    common.add_argument("--backbone", choices=["toy", "features"])
    common.add_argument("--dataset")
    common.add_argument("--checkpoint")
    common.add_argument("--epochs", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="arpgnet", description="Relation/appearance graph fusion toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    sub.add_parser("synth", parents=[common], help="write a synthetic co-occurrence dataset")
    sub.add_parser("train", parents=[common], help="train on a dataset, save a checkpoint")
    sub.add_parser("eval", parents=[common], help="score a checkpoint on a dataset")
    sub.add_parser("loso", parents=[common], help="leave-one-subject-out cross-validation")
    ab = sub.add_parser("ablate", parents=[common], help="train every variant, emit the ablation table")
    ab.add_argument("--seeds", help="comma separated seeds")
    g = sub.add_parser("inspect-graph", parents=[common], help="dump a relation or fusion graph")
    g.add_argument("--kind", choices=["relation", "fusion"], default="relation")
    g.add_argument("--t", type=int, dest="T", help="frames for the fusion graph")
    a = sub.add_parser("inspect-attention", parents=[common], help="dump attention weights for one clip")
    a.add_argument("--sample", type=int, default=0, help="dataset sample index")
    b = sub.add_parser("bench", parents=[common], help="time inference")
    b.add_argument("--repeats", type=int)
    b.add_argument("--metrics", help="metrics.json whose accuracy joins the timing record")
    r = sub.add_parser("export-report", parents=[common], help="collect run summaries into one table")
    r.add_argument("runs", nargs="*", help="run directories (default: every run under --out)")
    return parser


def overrides_from_args(args) -> dict[str, dict]:
    model = {k: getattr(args, k, None) for k in ("trs", "P", "heads", "backbone")}
    if args.variant is not None:
        model["variant"] = args.variant
    if getattr(args, "T", None) is not None:
        model["T"] = args.T
    run = {
        "seed": args.seed, "out": args.out, "dataset": args.dataset, "checkpoint": args.checkpoint,
        "repeats": getattr(args, "repeats", None), "seeds": getattr(args, "seeds", None),
    }
    return {"run": run, "model": model, "train": {"epochs": args.epochs}}


# -- helpers --------------------------------------------------------------------------

def make_run_dir(cfg: RunConfig, command: str) -> Path:
    seed = "NA" if cfg.run.seed is None else cfg.run.seed
    base = Path(cfg.run.out) / f"{command}-{time.strftime('%Y%m%d-%H%M%S')}-seed{seed}"
    path, n = base, 1
    while path.exists():
        path = base.with_name(f"{base.name}-{n}")
        n += 1
    path.mkdir(parents=True)
    return path


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(type(o).__name__)


def model_config_for(cfg: ArpgNetConfig, dataset: Dataset) -> ArpgNetConfig:
    """Fill the shape fields that a dataset dictates."""
    changes: dict = {"n_classes": dataset.n_classes}
    shapes = dataset[0].frame_shapes
    if dataset.kind == "image":
        c, h, w = shapes["frames"]
        changes.update(backbone="toy", C=c, H=h, W=w)
    else:
        changes.update(backbone="features", embed_dim=shapes["app"][-1])
        if "relmap" in shapes:
            side, _, ch = shapes["relmap"]
            changes.update(relation_input="map", map_side=side,
                           trunk_channels=tuple(cfg.trunk_channels[:2]) + (ch,))
        else:
            changes.update(relation_input="sequence")
    return cfg.replace(**changes).validate()


def require(cfg: RunConfig, key: str, command: str):
    value = getattr(cfg.run, key)
    if value is None:
        raise UsageError([f"[run] {key}: required by '{command}' (set it in the config or pass --{key})"])
    return value


def model_from_run(cfg: RunConfig) -> ArpgNet:
    if cfg.run.checkpoint is not None:
        return load_checkpoint(cfg.run.checkpoint)
    mc = cfg.model
    if cfg.run.dataset is not None:
        mc = model_config_for(mc, load_dataset(cfg.run.dataset))
    return ArpgNet(mc.replace(seed=cfg.run.seed if cfg.run.seed is not None else mc.seed))


def summary(cfg: RunConfig, command: str, **extra) -> dict:
    return {"command": command, "version": __version__, "config": cfg.to_dict(), **extra}


# -- commands ---------------------------------------------------------------------------

def cmd_synth(cfg: RunConfig, args, run: Path) -> dict:
    ds = synth_generate(dataclasses.replace(cfg.synth, seed=cfg.run.seed))
    save_dataset(ds, run / "dataset")
    return {"dataset": "dataset", "n_samples": len(ds), "subjects": ds.subjects()}


def cmd_train(cfg: RunConfig, args, run: Path) -> dict:
    ds = load_dataset(require(cfg, "dataset", "train"))
    mc = model_config_for(cfg.model, ds).replace(seed=cfg.run.seed)
    model = ArpgNet(mc)
    tc = dataclasses.replace(cfg.train, seed=cfg.run.seed)
    log = fit(model, ds, tc)
    save_checkpoint(model, run / "model.ckpt")
    (run / "train_log.csv").write_text(log.to_csv())
    _, preds = predict(model, ds)
    report = compute_metrics(preds, ds.labels, ds.n_classes)
    write_json(run / "train_metrics.json", report.to_dict())
    return {"checkpoint": "model.ckpt", "final_loss": log.losses[-1] if log.rows else None,
            "train_metrics": report.to_dict(), "variant": mc.variant}


def cmd_eval(cfg: RunConfig, args, run: Path) -> dict:
    ds = load_dataset(require(cfg, "dataset", "eval"))
    model = load_checkpoint(require(cfg, "checkpoint", "eval"))
    if model.config.n_classes != ds.n_classes:
        raise DatasetError(f"dataset has {ds.n_classes} classes, checkpoint expects {model.config.n_classes}")
    logits, preds = predict(model, ds)
    report = compute_metrics(preds, ds.labels, ds.n_classes)
    write_json(run / "metrics.json", report.to_dict())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sample_id", "label", "prediction"] + [f"logit{k}" for k in range(ds.n_classes)])
    for s, p, row in zip(ds.samples, preds, logits):
        w.writerow([s.sample_id, s.label, int(p)] + [f"{v:.9g}" for v in row])
    (run / "predictions.csv").write_text(buf.getvalue())
    np.savetxt(run / "confusion.csv", report.confusion, fmt="%d", delimiter=",")
    return {"metrics": report.to_dict(), "variant": model.config.variant}


def cmd_loso(cfg: RunConfig, args, run: Path) -> dict:
    ds = load_dataset(require(cfg, "dataset", "loso"))
    mc = model_config_for(cfg.model, ds).replace(seed=cfg.run.seed)
    tc = dataclasses.replace(cfg.train, seed=cfg.run.seed)
    res = loso_run(ds, mc, tc, n_jobs=cfg.run.n_jobs)
    (run / "loso.csv").write_text(res.to_csv())
    write_json(run / "loso.json", res.to_dict())
    return {"accuracy_mean": res.mean, "accuracy_std": res.std, "n_folds": len(res.folds), "variant": mc.variant}


def cmd_ablate(cfg: RunConfig, args, run: Path) -> dict:
    if cfg.run.dataset is not None:
        ds = load_dataset(cfg.run.dataset)
    else:
        ds = synth_generate(dataclasses.replace(cfg.synth, seed=cfg.run.seed))
    mc = model_config_for(cfg.model, ds)
    table = ablation_run(ds, mc, cfg.train, seeds=cfg.run.seeds, test_fraction=cfg.run.test_fraction,
                         n_jobs=cfg.run.n_jobs)
    (run / "ablation.csv").write_text(table.to_csv())
    rows = {r.label: {"accuracy_mean": r.mean(), "accuracies": r.accuracies().tolist()} for r in table.rows}
    write_json(run / "ablation.json", {"seeds": table.seeds, "rows": rows})
    return {"ablation": rows}


def cmd_inspect_graph(cfg: RunConfig, args, run: Path) -> dict:
    if args.kind == "relation":
        adj = build_relation_graph(cfg.model.P)
        info = {"kind": "relation", "P": cfg.model.P}
    else:
        adj = build_fusion_graph(cfg.model.T, cfg.model.trs)
        info = {"kind": "fusion", "T": cfg.model.T, "trs": cfg.model.trs}
    (run / "edges.csv").write_text(adj.edge_list_csv())
    (run / "adjacency.csv").write_text(adj.to_csv())
    info.update(n_nodes=adj.n_nodes, n_edges=adj.n_edges,
                degree_histogram={str(k): v for k, v in degree_histogram(adj).items()})
    write_json(run / "graph.json", info)
    return info


def cmd_inspect_attention(cfg: RunConfig, args, run: Path) -> dict:
    model = model_from_run(cfg)
    if cfg.run.dataset is not None:
        ds = load_dataset(cfg.run.dataset)
        if not 0 <= args.sample < len(ds):
            raise DatasetError(f"sample index {args.sample} outside [0, {len(ds)})")
        s = ds[args.sample]
        x, _ = collate(ds, [(args.sample, sample_sparse_test(s.n_frames, model.config.T))])
        source = s.sample_id
    else:
        x = example_input(model.config, 1, seed=cfg.run.seed or 0)
        source = "random"
    dump = dump_attention(model, x, run)
    return {"sample": source, "edge_counts": dump.edge_counts(), "variant": model.config.variant}


def cmd_bench(cfg: RunConfig, args, run: Path) -> dict:
    model = model_from_run(cfg)
    res = bench_inference(model, None, repeats=cfg.run.repeats)
    accuracy = None
    if getattr(args, "metrics", None):
        accuracy = json.loads(Path(args.metrics).read_text()).get("accuracy")
    (run / "bench.json").write_text(res.to_json(accuracy) + "\n")
    return {"bench": res.to_dict(accuracy), "variant": model.config.variant}


def cmd_export_report(cfg: RunConfig, args, run: Path) -> dict:
    dirs = [Path(d) for d in args.runs] or sorted(
        p for p in Path(cfg.run.out).iterdir() if p.is_dir() and p != run and (p / "summary.json").is_file()
    )
    rows = []
    for d in dirs:
        f = d / "summary.json"
        if not f.is_file():
            raise DatasetError(f"{d} has no summary.json")
        s = json.loads(f.read_text())
        metrics = s.get("metrics") or s.get("train_metrics") or {}
        bench = s.get("bench") or {}
        rows.append({
            "run": d.name,
            "command": s.get("command"),
            "seed": s.get("config", {}).get("run", {}).get("seed"),
            "variant": s.get("variant", ""),
            "accuracy": metrics.get("accuracy", s.get("accuracy_mean", "")),
            "macro_f1": metrics.get("macro_f1", ""),
            "m_score": metrics.get("m_score", ""),
            "mean_seconds": bench.get("mean_seconds", ""),
        })
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["run", "command", "seed", "variant", "accuracy", "macro_f1",
                                        "m_score", "mean_seconds"], lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    (run / "report.csv").write_text(buf.getvalue())
    write_json(run / "report.json", rows)
    return {"n_runs": len(rows)}


HANDLERS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "loso": cmd_loso,
    "ablate": cmd_ablate,
    "inspect-graph": cmd_inspect_graph,
    "inspect-attention": cmd_inspect_attention,
    "bench": cmd_bench,
    "export-report": cmd_export_report,
}


def run_command(argv: list[str]) -> Path:
    """Parse ``argv``, run the command and return its run directory (raises on failure)."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
    cfg = load_run_config(args.config, overrides_from_args(args))
    if args.command in STOCHASTIC and cfg.run.seed is None:
        raise UsageError([f"[run] seed: '{args.command}' is stochastic and needs a seed (--seed N)"])
    run = make_run_dir(cfg, args.command)
    extra = HANDLERS[args.command](cfg, args, run)
    write_json(run / "summary.json", summary(cfg, args.command, **extra))
    return run


def main(argv: list[str] | None = None) -> int:
    try:
        run = run_command(sys.argv[1:] if argv is None else argv)
    except SystemExit as exc:  # --help and --version
        return int(exc.code or 0)
    except Exception as exc:  # noqa: BLE001 - every failure becomes one error line
        category, code = "internal", 1
        for cls, cat, c in ERROR_CATEGORIES:
            if isinstance(exc, cls):
                category, code = cat, c
                break
        msg = str(exc).replace("\n", " ") or type(exc).__name__
        print(f"error: {category}: {msg}", file=sys.stderr)
        return code
    print(run)
    return 0


if __name__ == "__main__":
    sys.exit(main())
