"""Losses, Adam with per-group learning rates, and the training loop."""

from __future__ import annotations

import csv
import hashlib
import io
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .data import Dataset, collate, sample_sparse_test, sample_sparse_train
from .model import ArpgNet
from .nn import kaiming_init
from .numerics import NonFiniteError, Tensor, as_tensor, exp, log_softmax, mean, mul, power

logger = logging.getLogger(__name__)

__all__ = [
    "Adam",
    "OptimState",
    "TrainConfig",
    "TrainingError",
    "TrainingLog",
    "adam_step",
    "class_weights_from_labels",
    "cross_entropy",
    "fit",
    "focal_loss",
    "kaiming_init",
    "predict",
]


class TrainingError(RuntimeError):
    """Training diverged or was misconfigured."""


@dataclass
class TrainConfig:
    lr_backbone: float = 1e-4
    lr_other: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0
    loss: str = "cross_entropy"
    focal_gamma: float = 2.0
    class_weights: str | None = "inverse_frequency"

    def problems(self) -> list[str]:
        out = []
        for name in ("lr_backbone", "lr_other"):
            if not getattr(self, name) > 0:
                out.append(f"{name}: learning rates must be > 0, got {getattr(self, name)}")
        if not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            out.append("beta1, beta2: must lie in [0, 1)")
        if self.eps <= 0:
            out.append(f"eps: must be > 0, got {self.eps}")
        if self.epochs < 0:
            out.append(f"epochs: must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            out.append(f"batch_size: must be >= 1, got {self.batch_size}")
        if self.loss not in ("cross_entropy", "focal"):
            out.append(f"loss: expected 'cross_entropy' or 'focal', got {self.loss!r}")
        if self.focal_gamma < 0:
            out.append(f"focal_gamma: must be >= 0, got {self.focal_gamma}")
        if self.class_weights not in (None, "none", "inverse_frequency"):
            out.append(f"class_weights: expected 'inverse_frequency' or none, got {self.class_weights!r}")
        return out

    def validate(self) -> "TrainConfig":
        from .model import ConfigError

        problems = self.problems()
        if problems:
            raise ConfigError(problems)
        return self

    def to_dict(self) -> dict:
        return asdict(self)


# -- losses -----------------------------------------------------------------------

def _label_log_probs(logits, labels) -> tuple[Tensor, np.ndarray]:
    logits = as_tensor(logits)
    labels = np.atleast_1d(np.asarray(labels, dtype=int))
    batched = logits.ndim == 2
    if not batched:
        logits = logits.reshape((1, -1))
    k = logits.shape[-1]
    if labels.shape[0] != logits.shape[0]:
        raise ValueError(f"{labels.shape[0]} labels for {logits.shape[0]} logit rows")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"label outside [0, {k})")
    return log_softmax(logits, axis=-1)[np.arange(labels.shape[0]), labels], labels


def cross_entropy(logits, labels) -> Tensor:
    """Mean of ``-log softmax(logits)[label]`` over the batch."""
    logp, _ = _label_log_probs(logits, labels)
    return -mean(logp)


def focal_loss(logits, labels, gamma: float = 2.0, weights: Sequence[float] | None = None) -> Tensor:
    """Mean of ``-w_y * (1 - p_y)**gamma * log p_y``; equals cross-entropy at gamma 0 with unit weights."""
    logp, labels = _label_log_probs(logits, labels)
    terms = logp
    if gamma != 0:
        terms = mul(power(1.0 - exp(logp), gamma), logp)
    if weights is not None:
        w = np.asarray(weights, dtype=logp.dtype)[labels]
        terms = mul(terms, Tensor(w))
    return -mean(terms)


def class_weights_from_labels(labels, n_classes: int) -> np.ndarray:
    """Inverse-frequency weights ``n / (K * count_c)``; absent classes get weight 0."""
    counts = np.bincount(np.asarray(labels, dtype=int), minlength=n_classes).astype(float)
    with np.errstate(divide="ignore"):
        w = np.where(counts > 0, counts.sum() / (n_classes * counts), 0.0)
    return w


# -- optimiser --------------------------------------------------------------------

@dataclass
class OptimState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray | None],
    state: OptimState,
    lr: dict[str, float],
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """In-place bias-corrected Adam update; ``lr`` maps each parameter name to its rate."""
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= (lr[name] * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype)


class Adam:
    """Adam over a model's parameters with one learning rate per parameter group."""

    def __init__(self, model: ArpgNet, lrs: dict[str, float], beta1=0.9, beta2=0.999, eps=1e-8):
        self.named = list(model.named_parameters())
        groups = model.parameter_groups()
        names = [n for n, _ in self.named]
        if sorted(groups) != sorted(names) or len(set(names)) != len(names):
            raise TrainingError("parameter groups do not partition the model parameters")
        unknown = set(groups.values()) - set(lrs)
        if unknown:
            raise TrainingError(f"no learning rate for group(s) {sorted(unknown)}")
        self.lr = {n: lrs[groups[n]] for n in names}
        self.groups = groups
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.state = OptimState()

    def zero_grad(self) -> None:
        for _, p in self.named:
            p.grad = None

    def step(self) -> None:
        adam_step(
            {n: p.data for n, p in self.named},
            {n: p.grad for n, p in self.named},
            self.state, self.lr, self.beta1, self.beta2, self.eps,
        )


# -- loops --------------------------------------------------------------------------

@dataclass
class TrainingLog:
    rows: list[dict] = field(default_factory=list)
    plan_digest: str = ""

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=["epoch", "step", "loss", "acc"], lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({"epoch": r["epoch"], "step": r["step"], "loss": f"{r['loss']:.8g}", "acc": f"{r['acc']:.6f}"})
        return buf.getvalue()

    @property
    def losses(self) -> list[float]:
        return [r["loss"] for r in self.rows]


def make_loss(cfg: TrainConfig, dataset: Dataset) -> Callable[[Tensor, np.ndarray], Tensor]:
    if cfg.loss == "cross_entropy":
        return cross_entropy
    weights = None
    if cfg.class_weights == "inverse_frequency":
        weights = class_weights_from_labels(dataset.labels, dataset.n_classes)
    return lambda logits, labels: focal_loss(logits, labels, cfg.focal_gamma, weights)


def fit(
    model: ArpgNet,
    dataset: Dataset,
    cfg: TrainConfig,
    on_epoch: Callable[[dict], None] | None = None,
) -> TrainingLog:
    """Train ``model`` in place; deterministic for a fixed ``cfg.seed``.

    Shuffling and frame sampling draw from one child stream of ``cfg.seed``
    and dropout from another, so models of different widths see the same
    batches. ``log.plan_digest`` fingerprints that batch plan.
    """
    cfg.validate()
    if len(dataset) == 0:
        raise TrainingError("cannot train on an empty dataset")
    if dataset.n_classes != model.config.n_classes:
        raise TrainingError(
            f"dataset has {dataset.n_classes} classes, model expects {model.config.n_classes}"
        )
    data_seq, drop_seq = np.random.SeedSequence(cfg.seed).spawn(2)
    rng = np.random.default_rng(data_seq)
    drop_rng = np.random.default_rng(drop_seq)
    plan = hashlib.sha256()
    opt = Adam(model, {"backbone": cfg.lr_backbone, "other": cfg.lr_other}, cfg.beta1, cfg.beta2, cfg.eps)
    loss_fn = make_loss(cfg, dataset)
    T = model.config.T
    log = TrainingLog()
    step = 0
    model.train()
    try:
        for epoch in range(1, cfg.epochs + 1):
            order = rng.permutation(len(dataset))
            total, correct, seen = 0.0, 0, 0
            for start in range(0, len(order), cfg.batch_size):
                chunk = order[start: start + cfg.batch_size]
                items = [(int(i), sample_sparse_train(dataset[int(i)].n_frames, T, rng)) for i in chunk]
                for i, frames in items:
                    plan.update(np.asarray([i, *frames], dtype=np.int64).tobytes())
                x, y = collate(dataset, items)
                opt.zero_grad()
                try:
                    logits = model(x, drop_rng)
                    loss = loss_fn(logits, y)
                    loss.backward()
                except NonFiniteError as exc:
                    raise TrainingError(f"non-finite value at epoch {epoch}, step {step + 1}: {exc}") from exc
                opt.step()
                step += 1
                total += loss.item() * len(chunk)
                correct += int((logits.data.argmax(axis=-1) == y).sum())
                seen += len(chunk)
            row = {"epoch": epoch, "step": step, "loss": total / seen, "acc": correct / seen}
            log.rows.append(row)
            logger.debug("epoch %d loss %.4f acc %.3f", epoch, row["loss"], row["acc"])
            if on_epoch is not None:
                on_epoch(row)
    finally:
        model.eval()
    log.plan_digest = plan.hexdigest()
    return log


def predict(model: ArpgNet, dataset: Dataset, batch_size: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Eval-mode logits and argmax predictions using centred test-time sampling."""
    model.eval()
    T = model.config.T
    out = []
    for start in range(0, len(dataset), batch_size):
        items = [(i, sample_sparse_test(dataset[i].n_frames, T))
                 for i in range(start, min(start + batch_size, len(dataset)))]
        x, _ = collate(dataset, items)
        out.append(model(x).data)
    logits = np.concatenate(out) if out else np.zeros((0, model.config.n_classes))
    return logits, logits.argmax(axis=-1)
