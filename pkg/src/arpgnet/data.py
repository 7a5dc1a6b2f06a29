"""Datasets, frame sampling and synthetic co-occurrence tasks.

On-disk layout of a tensor archive::

    <root>/manifest.json
    <root>/classes.csv                    index,name
    <root>/<sample_id>/f000000.bin ...    image samples: one C x H x W frame per file
    <root>/<sample_id>/app.bin            feature samples: n_frames x C'
    <root>/<sample_id>/rel.bin            ... n_frames x C'
    <root>/<sample_id>/relmap.bin         ... or n_frames x S x S x C_f

Every ``.bin`` file holds raw little-endian float32 values.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import ndtr

from .model import FeatureBatch

ARCHIVE_FORMAT = "arpg-tensor-archive"
ARCHIVE_VERSION = 1
FEATURE_STREAMS = ("app", "rel", "relmap")


class DatasetError(ValueError):
    """Manifest missing, malformed, or inconsistent with the stored tensors."""


# -- frame sampling -------------------------------------------------------------

def sample_sparse_train(n_frames: int, T: int, rng: np.random.Generator) -> list[int]:
    """One uniformly drawn frame from each of ``T`` equal segments.

    Videos shorter than ``T`` reuse frames round-robin (sorted, so still ascending).
    """
    if n_frames < 1:
        raise ValueError(f"n_frames must be >= 1, got {n_frames}")
    if n_frames < T:
        return sorted(i % n_frames for i in range(T))
    lo = (np.arange(T) * n_frames) // T
    hi = (np.arange(1, T + 1) * n_frames) // T
    return [int(v) for v in rng.integers(lo, hi)]


def sample_sparse_test(n_frames: int, T: int) -> list[int]:
    """Deterministic segment centres ``floor((i + 0.5) * n_frames / T)``."""
    if n_frames < 1:
        raise ValueError(f"n_frames must be >= 1, got {n_frames}")
    return [int(math.floor((i + 0.5) * n_frames / T)) for i in range(T)]


def sample_dilated(center: int, n_frames: int, count: int = 8, rate: int = 3) -> list[int]:
    """``count`` frames spaced ``rate`` apart around ``center``, clamped to the video.

    Offsets are ``rate * (k - count // 2)``: four frames before the centre,
    the centre, and three after for the default ``count=8``.
    """
    if not 0 <= center < n_frames:
        raise IndexError(f"center {center} outside a video of {n_frames} frames")
    if count < 1 or rate < 1:
        raise ValueError("count and rate must be >= 1")
    return [min(max(center + rate * (k - count // 2), 0), n_frames - 1) for k in range(count)]


# -- samples and datasets -------------------------------------------------------

@dataclass
class VideoSample:
    sample_id: str
    label: int
    n_frames: int
    subject_id: str | None = None
    arrays: dict[str, np.ndarray] | None = field(default=None, repr=False)
    path: Path | None = None
    frame_shapes: dict[str, tuple[int, ...]] = field(default_factory=dict)


@dataclass
class Dataset:
    """In-memory view of a labelled video collection.

    ``kind`` is ``'image'`` (streams: ``frames``) or ``'features'``
    (streams: ``app`` plus ``rel`` or ``relmap``).
    """

    kind: str
    n_classes: int
    samples: list[VideoSample]
    class_names: list[str] | None = None
    root: Path | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.class_names is None:
            self.class_names = [f"class{i}" for i in range(self.n_classes)]

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, i: int) -> VideoSample:
        return self.samples[i]

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=int)

    @property
    def subject_ids(self) -> list[str | None]:
        return [s.subject_id for s in self.samples]

    def subjects(self) -> list[str]:
        return sorted({s.subject_id for s in self.samples if s.subject_id is not None})

    @property
    def streams(self) -> tuple[str, ...]:
        return tuple(self.samples[0].frame_shapes) if self.samples else ()

    def subset(self, indices: Sequence[int]) -> "Dataset":
        return Dataset(self.kind, self.n_classes, [self.samples[i] for i in indices],
                       list(self.class_names), self.root, dict(self.meta))

    def validate(self) -> "Dataset":
        problems = []
        if self.kind not in ("image", "features"):
            problems.append(f"unknown dataset kind {self.kind!r}")
        seen = set()
        with_subject = sum(s.subject_id is not None for s in self.samples)
        if 0 < with_subject < len(self.samples):
            problems.append("subject ids must be given for all samples or none")
        for s in self.samples:
            if s.sample_id in seen:
                problems.append(f"{s.sample_id}: duplicate sample id")
            seen.add(s.sample_id)
            if not 0 <= s.label < self.n_classes:
                problems.append(f"{s.sample_id}: label {s.label} outside [0, {self.n_classes})")
            if s.n_frames < 1:
                problems.append(f"{s.sample_id}: n_frames must be >= 1")
            if self.kind == "image" and set(s.frame_shapes) != {"frames"}:
                problems.append(f"{s.sample_id}: image samples need exactly a 'frames' stream")
            if self.kind == "features" and (
                "app" not in s.frame_shapes or ("rel" in s.frame_shapes) == ("relmap" in s.frame_shapes)
            ):
                problems.append(f"{s.sample_id}: feature samples need 'app' plus one of 'rel'/'relmap'")
        if problems:
            raise DatasetError("; ".join(problems))
        return self


def read_frames(sample: VideoSample, indices: Sequence[int]) -> dict[str, np.ndarray]:
    """Gather the requested frames of every stream, each shaped (len(indices), ...)."""
    idx = np.asarray(indices, dtype=int)
    if idx.size and (idx.min() < 0 or idx.max() >= sample.n_frames):
        raise IndexError(f"{sample.sample_id}: frame index outside [0, {sample.n_frames})")
    if sample.arrays is not None:
        return {k: v[idx] for k, v in sample.arrays.items()}
    if sample.path is None:
        raise DatasetError(f"{sample.sample_id}: no frame source")
    out = {}
    for stream, shape in sample.frame_shapes.items():
        if stream == "frames":
            out[stream] = np.stack([
                np.fromfile(sample.path / f"f{int(i):06d}.bin", dtype="<f4").reshape(shape) for i in idx
            ]) if idx.size else np.zeros((0,) + shape, np.float32)
        else:
            arr = np.memmap(sample.path / f"{stream}.bin", dtype="<f4", mode="r",
                            shape=(sample.n_frames,) + shape)
            out[stream] = np.asarray(arr[idx], dtype=np.float32)
    return out


def collate(dataset: Dataset, items: Sequence[tuple[int, Sequence[int]]]):
    """Stack ``(sample_index, frame_indices)`` pairs into model inputs and labels."""
    frames = [read_frames(dataset.samples[i], idx) for i, idx in items]
    labels = np.array([dataset.samples[i].label for i, _ in items], dtype=int)
    if dataset.kind == "image":
        return np.stack([f["frames"] for f in frames]).astype(np.float32), labels
    stacked = {k: np.stack([f[k] for f in frames]).astype(np.float32) for k in frames[0]}
    return FeatureBatch(stacked["app"], stacked.get("rel"), stacked.get("relmap")), labels


# -- archive IO -------------------------------------------------------------------

def save_dataset(dataset: Dataset, root: str | os.PathLike) -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for s in dataset.samples:
        d = root / s.sample_id
        d.mkdir(exist_ok=True)
        arrays = read_frames(s, range(s.n_frames))
        for stream, arr in arrays.items():
            arr = np.ascontiguousarray(arr, dtype="<f4")
            if stream == "frames":
                for i in range(s.n_frames):
                    (d / f"f{i:06d}.bin").write_bytes(arr[i].tobytes())
            else:
                (d / f"{stream}.bin").write_bytes(arr.tobytes())
        entries.append({
            "id": s.sample_id,
            "subject": s.subject_id,
            "label": int(s.label),
            "n_frames": int(s.n_frames),
            "dtype": "float32",
            "shape": {k: list(v) for k, v in s.frame_shapes.items()},
        })
    manifest = {
        "format": ARCHIVE_FORMAT,
        "version": ARCHIVE_VERSION,
        "kind": dataset.kind,
        "n_classes": dataset.n_classes,
        "meta": dataset.meta,
        "samples": entries,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["index", "name"])
    writer.writerows(enumerate(dataset.class_names))
    (root / "classes.csv").write_text(buf.getvalue())
    return root


def load_dataset(root: str | os.PathLike) -> Dataset:
    root = Path(root)
    mpath = root / "manifest.json"
    if not mpath.is_file():
        raise DatasetError(f"no manifest: {mpath} does not exist")
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetError(f"manifest is not valid JSON: {exc}") from exc
    if manifest.get("format") != ARCHIVE_FORMAT:
        raise DatasetError(f"unexpected manifest format {manifest.get('format')!r}")
    n_classes = int(manifest["n_classes"])
    class_names = None
    cpath = root / "classes.csv"
    if cpath.is_file():
        rows = list(csv.DictReader(cpath.read_text().splitlines()))
        class_names = [r["name"] for r in sorted(rows, key=lambda r: int(r["index"]))]
        if len(class_names) != n_classes:
            raise DatasetError(f"classes.csv lists {len(class_names)} classes, manifest says {n_classes}")
    samples = []
    problems = []
    for e in manifest.get("samples", []):
        sid = str(e["id"])
        if e.get("dtype", "float32") != "float32":
            problems.append(f"{sid}: unsupported dtype {e.get('dtype')!r}")
            continue
        shapes = {k: tuple(int(n) for n in v) for k, v in e["shape"].items()}
        s = VideoSample(sid, int(e["label"]), int(e["n_frames"]), e.get("subject"),
                        path=root / sid, frame_shapes=shapes)
        for stream, shape in shapes.items():
            per = int(np.prod(shape)) * 4
            if stream == "frames":
                files = [root / sid / f"f{i:06d}.bin" for i in range(s.n_frames)]
                bad = [f.name for f in files if not f.is_file() or f.stat().st_size != per]
                if bad:
                    problems.append(f"{sid}: frame files missing or mis-sized: {bad[:3]}")
            else:
                f = root / sid / f"{stream}.bin"
                if not f.is_file() or f.stat().st_size != per * s.n_frames:
                    problems.append(f"{sid}: {stream}.bin missing or not {s.n_frames} x {shape}")
        samples.append(s)
    if problems:
        raise DatasetError("; ".join(problems))
    ds = Dataset(manifest["kind"], n_classes, samples, class_names, root, manifest.get("meta", {}))
    return ds.validate()


# -- splits -------------------------------------------------------------------------

def stratified_split(dataset: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    from sklearn.model_selection import train_test_split

    idx = np.arange(len(dataset))
    train, test = train_test_split(idx, test_size=test_fraction, random_state=seed,
                                   stratify=dataset.labels)
    return dataset.subset(sorted(train)), dataset.subset(sorted(test))


# -- synthetic co-occurrence task ---------------------------------------------------

@dataclass
class SynthTaskConfig:
    """Two-stream task whose label lives in cross-stream temporal co-occurrence.

    Each clip holds two events per stream. An appearance event shows pattern
    ``i``; the relation event within ``evidence_window`` frames of it shows
    pattern ``(i + label) mod n_classes``, so pairing reveals the label while
    each stream's pattern inventory is label independent. Event frames also
    carry a weak label tint (``app_margin`` / ``rel_margin``) which is the only
    single-stream evidence.
    """

    n_classes: int = 2
    T: int = 16
    dim: int = 16
    mode: str = "features"
    evidence_window: int = 1
    pair_gap: int = 8
    amplitude: float = 3.0
    app_margin: float = 0.4
    rel_margin: float = 1.0
    noise_sigma: float = 0.5
    samples_per_class: int = 400
    n_subjects: int = 8
    image_size: int = 32
    seed: int = 0

    def problems(self) -> list[str]:
        out = []
        if self.n_classes < 2:
            out.append(f"n_classes: need at least 2, got {self.n_classes}")
        if self.mode not in ("features", "image"):
            out.append(f"mode: expected 'features' or 'image', got {self.mode!r}")
        if self.evidence_window < 0 or self.evidence_window > self.T:
            out.append(f"evidence_window: must lie in [0, T], got {self.evidence_window}")
        if self.noise_sigma < 0:
            out.append(f"noise_sigma: must be >= 0, got {self.noise_sigma}")
        if self.mode == "features" and self.dim < 4 * self.n_classes:
            out.append(f"dim: need >= 4 * n_classes = {4 * self.n_classes}, got {self.dim}")
        if self.dim % 2:
            out.append(f"dim: must be even, got {self.dim}")
        if self.T < self.pair_gap + 2 * self.evidence_window + 1:
            out.append(f"T: {self.T} frames cannot hold two events {self.pair_gap} apart with window {self.evidence_window}")
        if self.samples_per_class < 1:
            out.append("samples_per_class: must be >= 1")
        if self.n_subjects < 0:
            out.append("n_subjects: must be >= 0")
        if self.mode == "image" and self.image_size < 4 * self.n_classes:
            out.append(f"image_size: need >= {4 * self.n_classes} to place distinct blobs")
        return out

    def validate(self) -> "SynthTaskConfig":
        problems = self.problems()
        if problems:
            raise DatasetError("; ".join(problems))
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    # directions inside the C'-wide feature space
    def app_pattern_dim(self, i: int) -> int:
        return i

    def rel_pattern_dim(self, i: int) -> int:
        return self.n_classes + i

    def app_tint_dim(self, c: int) -> int:
        return 2 * self.n_classes + c

    def rel_tint_dim(self, c: int) -> int:
        return 3 * self.n_classes + c


@dataclass(frozen=True)
class EventPlan:
    """Where the evidence of one clip sits: per pair, (app frame, app pattern, rel frame, rel pattern)."""

    pairs: tuple[tuple[int, int, int, int], ...]


def _plan_events(cfg: SynthTaskConfig, label: int, rng: np.random.Generator) -> EventPlan:
    w, K = cfg.evidence_window, cfg.n_classes
    t0 = int(rng.integers(w, cfg.T - w - cfg.pair_gap))
    t1 = int(rng.integers(t0 + cfg.pair_gap, cfg.T - w))
    i, j = (int(v) for v in rng.choice(K, size=2, replace=False))
    pairs = []
    for t, p in ((t0, i), (t1, j)):
        dt = int(rng.integers(-w, w + 1))
        pairs.append((t, p, t + dt, (p + label) % K))
    return EventPlan(tuple(pairs))


def _render_blob(canvas: np.ndarray, cy: float, cx: float, radius: float, value: float) -> None:
    yy, xx = np.mgrid[: canvas.shape[-2], : canvas.shape[-1]]
    canvas += value * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * radius ** 2))


def _blob_center(cfg: SynthTaskConfig, stream: str, pattern: int) -> tuple[float, float]:
    s = cfg.image_size
    cy = (pattern + 0.5) * s / cfg.n_classes
    cx = 0.25 * s if stream == "app" else 0.75 * s
    return cy, cx


def synth_generate(cfg: SynthTaskConfig) -> Dataset:
    """Generate a class-balanced dataset fully determined by ``cfg.seed``."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    samples = []
    n = cfg.n_classes * cfg.samples_per_class
    labels = np.repeat(np.arange(cfg.n_classes), cfg.samples_per_class)
    labels = labels[rng.permutation(n)]
    for k, label in enumerate(labels):
        label = int(label)
        plan = _plan_events(cfg, label, rng)
        subject = f"subj{k % cfg.n_subjects:02d}" if cfg.n_subjects else None
        sid = f"s{k:05d}"
        if cfg.mode == "features":
            app = rng.normal(0.0, cfg.noise_sigma, (cfg.T, cfg.dim))
            rel = rng.normal(0.0, cfg.noise_sigma, (cfg.T, cfg.dim))
            for ta, pa, tr, pr in plan.pairs:
                app[ta, cfg.app_pattern_dim(pa)] += cfg.amplitude
                app[ta, cfg.app_tint_dim(label)] += cfg.app_margin
                rel[tr, cfg.rel_pattern_dim(pr)] += cfg.amplitude
                rel[tr, cfg.rel_tint_dim(label)] += cfg.rel_margin
            arrays = {"app": app.astype(np.float32), "rel": rel.astype(np.float32)}
            shapes = {"app": (cfg.dim,), "rel": (cfg.dim,)}
        else:
            s = cfg.image_size
            frames = rng.normal(0.0, cfg.noise_sigma, (cfg.T, 1, s, s))
            radius = s / (4.0 * cfg.n_classes)
            for ta, pa, tr, pr in plan.pairs:
                _render_blob(frames[ta, 0], *_blob_center(cfg, "app", pa), radius, cfg.amplitude)
                _render_blob(frames[tr, 0], *_blob_center(cfg, "rel", pr), radius, cfg.amplitude)
            arrays = {"frames": frames.astype(np.float32)}
            shapes = {"frames": (1, s, s)}
        samples.append(VideoSample(sid, label, cfg.T, subject, arrays=arrays, frame_shapes=shapes))
    return Dataset(cfg.mode, cfg.n_classes, samples, meta={"synth": cfg.to_dict()}).validate()


def synth_oracle_predict(cfg: SynthTaskConfig, arrays: dict[str, np.ndarray], streams: str = "both") -> int:
    """Generator-aware classifier for feature-mode clips.

    ``streams='both'`` reads the label from which relation pattern sits next
    to each appearance pattern; ``'app'`` / ``'rel'`` only see one stream and
    fall back to the tint on its two strongest event frames.
    """
    K, w = cfg.n_classes, cfg.evidence_window
    if streams == "both":
        app, rel = arrays["app"], arrays["rel"]
        pat_a = app[:, [cfg.app_pattern_dim(i) for i in range(K)]]
        pat_r = rel[:, [cfg.rel_pattern_dim(i) for i in range(K)]]
        votes = np.zeros(K)
        for t in np.argsort(pat_a.max(axis=1))[-2:]:
            i = int(pat_a[t].argmax())
            lo, hi = max(0, t - w), min(cfg.T, t + w + 1)
            window = pat_r[lo:hi]
            r = int(np.unravel_index(window.argmax(), window.shape)[1])
            votes[(r - i) % K] += window.max()
        return int(votes.argmax())
    x = arrays[streams]
    pat_dims = [cfg.app_pattern_dim(i) if streams == "app" else cfg.rel_pattern_dim(i) for i in range(K)]
    tint_dims = [cfg.app_tint_dim(c) if streams == "app" else cfg.rel_tint_dim(c) for c in range(K)]
    events = np.argsort(x[:, pat_dims].max(axis=1))[-2:]
    return int(x[np.ix_(events, tint_dims)].sum(axis=0).argmax())


def single_stream_margin(cfg: SynthTaskConfig, stream: str) -> float:
    """Accuracy of the single-stream tint oracle when event frames are found exactly (two classes)."""
    tint = cfg.app_margin if stream == "app" else cfg.rel_margin
    if cfg.noise_sigma == 0:
        return 1.0 if tint > 0 else 0.5
    # tint sums over two event frames: 2*tint against a noise difference of std 2*sigma
    return float(ndtr(tint / cfg.noise_sigma))
