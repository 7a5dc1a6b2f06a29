"""Metrics, leave-one-subject-out runs, ablations, attention dumps and timing."""

from __future__ import annotations

import csv
import io
import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .data import Dataset, stratified_split
from .graphs import build_fusion_graph, build_relation_graph
from .model import VARIANTS, ArpgNet, ArpgNetConfig, FeatureBatch, batch_inputs
from .training import TrainConfig, fit, predict

__all__ = [
    "ABLATION_LABELS",
    "AblationTable",
    "AttentionDump",
    "BenchResult",
    "FoldPlan",
    "LeakageError",
    "LosoResult",
    "MetricReport",
    "ablation_run",
    "bench_inference",
    "compute_metrics",
    "dump_attention",
    "loso_run",
    "m_score",
    "make_fold_plan",
]

M_ACC_WEIGHT = 0.33
M_F1_WEIGHT = 0.67

# Row order and display names of the ablation table.
ABLATION_LABELS = {
    "appearance": "appearance_only",
    "relation": "relation_only",
    "concat": "concat_baseline",
    "fusion": "fusion_no_trs",
    "fusion_trs": "fusion_trs",
}


def m_score(accuracy: float, f1: float) -> float:
    return M_ACC_WEIGHT * accuracy + M_F1_WEIGHT * f1


@dataclass(frozen=True)
class MetricReport:
    accuracy: float
    macro_f1: float
    confusion: np.ndarray
    n_samples: int

    @property
    def m_score(self) -> float:
        return m_score(self.accuracy, self.macro_f1)

    @property
    def n_classes(self) -> int:
        return self.confusion.shape[0]

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "m_score": self.m_score,
            "n_samples": self.n_samples,
            "confusion": self.confusion.tolist(),
            "f1_average": "macro",
            "absent_class_f1": 0.0,
        }


def compute_metrics(predictions, labels, n_classes: int) -> MetricReport:
    """Accuracy, macro-F1 and the confusion matrix (rows are true labels).

    A class with no true and no predicted samples has F1 = 0 and still counts
    in the macro average.
    """
    pred = np.asarray(predictions, dtype=int).ravel()
    true = np.asarray(labels, dtype=int).ravel()
    if pred.shape != true.shape:
        raise ValueError(f"{pred.size} predictions for {true.size} labels")
    if pred.size == 0:
        raise ValueError("cannot score an empty prediction set")
    for name, arr in (("prediction", pred), ("label", true)):
        if arr.min() < 0 or arr.max() >= n_classes:
            raise ValueError(f"{name} outside [0, {n_classes})")
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (true, pred), 1)
    tp = np.diag(confusion).astype(float)
    denom = confusion.sum(axis=0) + confusion.sum(axis=1)
    f1 = np.divide(2 * tp, denom, out=np.zeros(n_classes), where=denom > 0)
    return MetricReport(
        accuracy=float(tp.sum() / pred.size),
        macro_f1=float(f1.mean()),
        confusion=confusion,
        n_samples=int(pred.size),
    )


# -- leave-one-subject-out ------------------------------------------------------------

class LeakageError(RuntimeError):
    """A held-out subject or sample appeared in a training split."""


@dataclass(frozen=True)
class FoldPlan:
    """``folds[i] = (held_out_subjects, train_subjects)``."""

    folds: tuple[tuple[tuple[str, ...], tuple[str, ...]], ...]

    def __len__(self) -> int:
        return len(self.folds)

    def __iter__(self):
        return iter(self.folds)

    def check(self) -> None:
        subjects = set()
        for test, train in self.folds:
            subjects |= set(test) | set(train)
        held = [s for test, _ in self.folds for s in test]
        if sorted(held) != sorted(subjects):
            raise LeakageError("held-out sets do not partition the subjects")
        for test, train in self.folds:
            if set(test) & set(train):
                raise LeakageError(f"subjects {sorted(set(test) & set(train))} on both sides of a fold")


def make_fold_plan(subjects: Sequence[str]) -> FoldPlan:
    """One fold per distinct subject, in sorted order."""
    subs = sorted(set(subjects))
    if len(subs) < 2:
        raise ValueError(f"leave-one-subject-out needs at least 2 subjects, got {len(subs)}")
    plan = FoldPlan(tuple(((s,), tuple(o for o in subs if o != s)) for s in subs))
    plan.check()
    return plan


@dataclass
class FoldResult:
    subject: str
    report: MetricReport
    train_ids: list[str]
    test_ids: list[str]


@dataclass
class LosoResult:
    folds: list[FoldResult]

    @property
    def accuracies(self) -> np.ndarray:
        return np.array([f.report.accuracy for f in self.folds])

    @property
    def mean(self) -> float:
        return float(self.accuracies.mean())

    @property
    def std(self) -> float:
        # Population spread over folds.
        return float(self.accuracies.std(ddof=0))

    def summary(self) -> str:
        return f"{100 * self.mean:.2f} ± {100 * self.std:.2f}"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["subject", "n_test", "accuracy", "macro_f1", "m_score"])
        for f in self.folds:
            r = f.report
            w.writerow([f.subject, r.n_samples, f"{r.accuracy:.6f}", f"{r.macro_f1:.6f}", f"{r.m_score:.6f}"])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "n_folds": len(self.folds),
            "accuracy_mean": self.mean,
            "accuracy_std": self.std,
            "std_ddof": 0,
            "folds": [{"subject": f.subject, **f.report.to_dict()} for f in self.folds],
        }


def _audit(dataset: Dataset, train_idx, test_idx, held_out: Sequence[str]) -> None:
    train_ids = {dataset[i].sample_id for i in train_idx}
    test_ids = {dataset[i].sample_id for i in test_idx}
    if train_ids & test_ids:
        raise LeakageError(f"samples in both train and test: {sorted(train_ids & test_ids)[:5]}")
    leaked = {dataset[i].subject_id for i in train_idx} & set(held_out)
    if leaked:
        raise LeakageError(f"held-out subject(s) {sorted(leaked)} found in training data")


def _run_fold(dataset: Dataset, subject: str, train_idx, test_idx,
              model_cfg: ArpgNetConfig, train_cfg: TrainConfig) -> FoldResult:
    train, test = dataset.subset(train_idx), dataset.subset(test_idx)
    model = ArpgNet(model_cfg)
    fit(model, train, train_cfg)
    _, preds = predict(model, test)
    report = compute_metrics(preds, test.labels, dataset.n_classes)
    return FoldResult(subject, report, [s.sample_id for s in train.samples], [s.sample_id for s in test.samples])


def loso_run(dataset: Dataset, model_cfg: ArpgNetConfig, train_cfg: TrainConfig,
             n_jobs: int = 1) -> LosoResult:
    """Train and score one model per held-out subject.

    Every fold starts from the same initial weights and training seed. Folds
    are independent and run through joblib when ``n_jobs != 1``.
    """
    ids = dataset.subject_ids
    if any(s is None for s in ids):
        raise ValueError("dataset does not declare subjects")
    plan = make_fold_plan(ids)
    jobs = []
    for test_subjects, _ in plan:
        test_idx = [i for i, s in enumerate(ids) if s in test_subjects]
        train_idx = [i for i, s in enumerate(ids) if s not in test_subjects]
        _audit(dataset, train_idx, test_idx, test_subjects)
        jobs.append((dataset, test_subjects[0], train_idx, test_idx, model_cfg, train_cfg))
    if n_jobs == 1:
        folds = [_run_fold(*j) for j in jobs]
    else:
        from joblib import Parallel, delayed

        folds = Parallel(n_jobs=n_jobs)(delayed(_run_fold)(*j) for j in jobs)
    return LosoResult(list(folds))


# -- ablation -------------------------------------------------------------------------

@dataclass
class AblationRow:
    variant: str
    reports: dict[int, MetricReport] = field(default_factory=dict)
    plan_digests: dict[int, str] = field(default_factory=dict)

    @property
    def label(self) -> str:
        return ABLATION_LABELS[self.variant]

    def accuracies(self) -> np.ndarray:
        return np.array([self.reports[s].accuracy for s in sorted(self.reports)])

    def mean(self, metric: str = "accuracy") -> float:
        return float(np.mean([getattr(r, metric) for r in self.reports.values()]))


@dataclass
class AblationTable:
    seeds: list[int]
    rows: list[AblationRow]

    def row(self, variant: str) -> AblationRow:
        for r in self.rows:
            if r.variant == variant or r.label == variant:
                return r
        raise KeyError(variant)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["variant", "accuracy_mean", "accuracy_std", "macro_f1_mean", "m_score_mean"]
                   + [f"accuracy_seed{s}" for s in self.seeds])
        for r in self.rows:
            acc = r.accuracies()
            w.writerow([r.label, f"{acc.mean():.6f}", f"{acc.std(ddof=0):.6f}",
                        f"{r.mean('macro_f1'):.6f}", f"{r.mean('m_score'):.6f}"]
                       + [f"{r.reports[s].accuracy:.6f}" for s in self.seeds])
        return buf.getvalue()


def _ablation_cell(train: Dataset, test: Dataset, cfg: ArpgNetConfig, train_cfg: TrainConfig):
    model = ArpgNet(cfg)
    log = fit(model, train, train_cfg)
    _, preds = predict(model, test)
    return compute_metrics(preds, test.labels, test.n_classes), log.plan_digest


def ablation_run(
    dataset: Dataset,
    model_cfg: ArpgNetConfig,
    train_cfg: TrainConfig,
    seeds: Sequence[int] = (0,),
    test_fraction: float = 0.5,
    variants: Sequence[str] = VARIANTS,
    n_jobs: int = 1,
) -> AblationTable:
    """Train every variant on the same split, initial seed and batch plan per seed.

    For seed ``s`` the stratified split, the model initialisation and the
    training stream are all seeded with ``s``; only ``variant`` differs.
    """
    order = [v for v in VARIANTS if v in set(variants)]
    jobs, keys = [], []
    for s in seeds:
        train, test = stratified_split(dataset, test_fraction, s)
        tcfg = TrainConfig(**{**train_cfg.to_dict(), "seed": s})
        for v in order:
            jobs.append((train, test, model_cfg.replace(variant=v, seed=s), tcfg))
            keys.append((s, v))
    if n_jobs == 1:
        results = [_ablation_cell(*j) for j in jobs]
    else:
        from joblib import Parallel, delayed

        results = Parallel(n_jobs=n_jobs)(delayed(_ablation_cell)(*j) for j in jobs)
    rows = {v: AblationRow(v) for v in order}
    for (s, v), (report, digest) in zip(keys, results):
        rows[v].reports[s] = report
        rows[v].plan_digests[s] = digest
    for s in seeds:
        if len({rows[v].plan_digests[s] for v in order}) != 1:
            raise RuntimeError(f"variants saw different training batches for seed {s}")
    return AblationTable(list(seeds), [rows[v] for v in order])


# -- attention inspection -------------------------------------------------------------

EDGE_FIELDS = ["head", "layer", "src", "dst", "beta", "frame"]


@dataclass
class AttentionDump:
    """Edge-level attention of one clip plus derived node profiles.

    ``edges`` rows follow ``EDGE_FIELDS``; ``frame`` is set for relation
    layers (one patch graph per frame) and ``None`` for fusion layers.
    """

    edges: list[tuple]
    temporal: list[tuple]  # (node, frame, score, stream)
    spatial: list[tuple]  # (layer, patch, row, col, score)
    T: int

    def edge_counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for row in self.edges:
            out[row[1]] = out.get(row[1], 0) + 1
        return out

    def write(self, out: str | os.PathLike) -> Path:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(out / "attention_edges.csv", EDGE_FIELDS,
                   [(h, l, s, d, f"{b:.9g}", "" if f is None else f) for h, l, s, d, b, f in self.edges])
        _write_csv(out / "temporal_profile.csv", ["node", "frame", "score", "stream"],
                   [(n, f, f"{s:.9g}", st) for n, f, s, st in self.temporal])
        if self.spatial:
            _write_csv(out / "spatial_profile.csv", ["layer", "patch", "row", "col", "score"],
                       [(l, p, r, c, f"{s:.9g}") for l, p, r, c, s in self.spatial])
        return out


def _write_csv(path: Path, header: list[str], rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def dump_attention(model: ArpgNet, sample, out: str | os.PathLike | None = None) -> AttentionDump:
    """Run one clip through ``model`` in eval mode and collect every attention weight.

    The temporal profile scores fusion node ``j`` by the head-averaged total
    weight it contributes to the nodes attending to it (a column sum of beta,
    so only nodes inside the temporal scope contribute). Nodes ``0..T-1`` are
    the appearance row, ``T..2T-1`` the relation row. The spatial profile
    does the same per patch of each relation layer, averaged over frames.
    """
    if not isinstance(sample, FeatureBatch) and np.ndim(sample) == 4:
        sample = batch_inputs(sample)
    if isinstance(sample, FeatureBatch) and np.ndim(sample.app) == 2:
        sample = batch_inputs(sample)
    was_training = model.training
    model.eval()
    try:
        model(sample)
    finally:
        model.train(was_training)
    T, P = model.config.T, model.config.P
    edges, temporal, spatial = [], [], []
    for layer, amap in model.attention.items():
        beta = amap.beta[0]  # drop the batch axis
        src, dst = np.nonzero(amap.adj.entries)
        if layer.startswith("relation."):
            for t in range(beta.shape[0]):
                for k in range(beta.shape[1]):
                    vals = beta[t, k, src, dst]
                    edges.extend((k, layer, int(i), int(j), float(b), t) for i, j, b in zip(src, dst, vals))
            score = amap[0].received().mean(axis=0)
            spatial.extend((layer, p, p // P, p % P, float(score[p])) for p in range(P * P))
        else:
            for k in range(beta.shape[0]):
                vals = beta[k, src, dst]
                edges.extend((k, layer, int(i), int(j), float(b), None) for i, j, b in zip(src, dst, vals))
            if layer == "fusion.0":
                score = amap[0].received()
                temporal.extend(
                    (n, n % T, float(score[n]), "appearance" if n < T else "relation") for n in range(2 * T)
                )
    dump = AttentionDump(edges, temporal, spatial, T)
    if out is not None:
        dump.write(out)
    return dump


# -- timing ---------------------------------------------------------------------------

@dataclass
class BenchResult:
    warmup_seconds: float
    run_seconds: list[float]
    batch: int
    edge_counts: dict[str, int]
    config: dict

    @property
    def mean_seconds(self) -> float:
        return float(np.mean(self.run_seconds))

    @property
    def per_clip_seconds(self) -> float:
        return self.mean_seconds / self.batch

    @property
    def attention_edges(self) -> int:
        return sum(self.edge_counts.values())

    def to_dict(self, accuracy: float | None = None) -> dict:
        return {
            "variant": self.config.get("variant"),
            "mean_seconds": self.mean_seconds,
            "per_clip_seconds": self.per_clip_seconds,
            "run_seconds": list(self.run_seconds),
            "warmup_seconds": self.warmup_seconds,
            "repeats": len(self.run_seconds),
            "batch": self.batch,
            "attention_edges": self.attention_edges,
            "edge_counts": dict(self.edge_counts),
            "accuracy": accuracy,
            "clock": "time.perf_counter",
            "threads": 1,
        }

    def to_json(self, accuracy: float | None = None) -> str:
        return json.dumps(self.to_dict(accuracy), indent=1, sort_keys=True)


def attention_edge_counts(cfg: ArpgNetConfig) -> dict[str, int]:
    """Attention weights evaluated per clip: heads times adjacency entries (times T for patch graphs)."""
    counts = {}
    if cfg.uses_relation_graph and cfg.variant != "appearance":
        nnz = build_relation_graph(cfg.P).n_edges
        for i in range(cfg.relation_gat_layers):
            counts[f"relation.{i}"] = cfg.heads * nnz * cfg.T
    if cfg.variant in ("fusion", "fusion_trs"):
        nnz = build_fusion_graph(cfg.T, cfg.effective_trs).n_edges
        for i in range(cfg.fusion_gat_layers):
            counts[f"fusion.{i}"] = cfg.heads * nnz
    return counts


def example_input(cfg: ArpgNetConfig, batch: int = 1, seed: int = 0):
    """Random model input of the right shape for ``cfg``."""
    rng = np.random.default_rng(seed)
    if cfg.backbone == "toy":
        return rng.standard_normal((batch, cfg.T, cfg.C, cfg.H, cfg.W)).astype(np.float32)
    app = rng.standard_normal((batch, cfg.T, cfg.embed_dim)).astype(np.float32)
    if cfg.relation_input == "map":
        relmap = rng.standard_normal((batch, cfg.T, cfg.map_side, cfg.map_side, cfg.feature_channels))
        return FeatureBatch(app, None, relmap.astype(np.float32))
    return FeatureBatch(app, rng.standard_normal(app.shape).astype(np.float32), None)


def bench_inference(model: ArpgNet, input_spec=None, repeats: int = 3,
                    clock: Callable[[], float] = time.perf_counter) -> BenchResult:
    """One untimed warmup forward pass, then ``repeats`` timed ones on a single thread.

    ``input_spec`` is a ready input batch or an int batch size for a random
    input (default 1).
    """
    from threadpoolctl import threadpool_limits

    if repeats < 1:
        raise ValueError(f"repeats must be >= 1, got {repeats}")
    cfg = model.config
    x = example_input(cfg, input_spec or 1) if input_spec is None or isinstance(input_spec, int) else input_spec
    batch = len(x)
    was_training = model.training
    model.eval()
    runs = []
    try:
        with threadpool_limits(limits=1):
            start = clock()
            model(x)
            warmup = clock() - start
            for _ in range(repeats):
                start = clock()
                model(x)
                runs.append(clock() - start)
    finally:
        model.train(was_training)
    return BenchResult(warmup, runs, batch, attention_edge_counts(cfg), cfg.to_dict())
