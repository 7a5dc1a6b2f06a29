"""scikit-learn compatible classifier around :class:`ArpgNet`."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.preprocessing import LabelEncoder
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import Dataset, VideoSample
from .model import ArpgNet, ArpgNetConfig, FeatureBatch
from .numerics import softmax
from .training import TrainConfig, TrainingLog, fit

__all__ = ["ArpgNetClassifier"]


class ArpgNetClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Two-stream sequence classifier with the usual ``fit`` / ``predict`` API.

    ``X`` depends on ``backbone``:

    * ``"features"``: shape ``(n, 2, T, d)``; ``X[:, 0]`` is the appearance
      sequence and ``X[:, 1]`` the relation sequence.
    * ``"toy"``: raw clips of shape ``(n, T, C, H, W)``.

    Clips are used as given (every frame, no temporal resampling).
    ``transform`` returns the pooled representation fed to the MLP head.
    """

    def __init__(
        self,
        variant: str = "fusion_trs",
        backbone: str = "features",
        trs: int = 3,
        P: int = 6,
        heads: int = 4,
        relation_gat_layers: int = 3,
        fusion_gat_layers: int = 1,
        dropout: float = 0.25,
        trunk_channels: tuple = (8, 16, 16),
        epochs: int = 30,
        batch_size: int = 32,
        lr_backbone: float = 1e-4,
        lr_other: float = 1e-3,
        loss: str = "cross_entropy",
        focal_gamma: float = 2.0,
        random_state: int = 0,
    ):
        self.variant = variant
        self.backbone = backbone
        self.trs = trs
        self.P = P
        self.heads = heads
        self.relation_gat_layers = relation_gat_layers
        self.fusion_gat_layers = fusion_gat_layers
        self.dropout = dropout
        self.trunk_channels = trunk_channels
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr_backbone = lr_backbone
        self.lr_other = lr_other
        self.loss = loss
        self.focal_gamma = focal_gamma
        self.random_state = random_state

    # -- helpers ------------------------------------------------------------------
    def _check_X(self, X, y=None):
        ndim = 4 if self.backbone == "features" else 5
        kw = dict(allow_nd=True, dtype=np.float32, ensure_all_finite=True)
        if y is None:
            X = check_array(X, **kw)
        else:
            X, y = check_X_y(X, y, **kw)
        if X.ndim != ndim or (self.backbone == "features" and X.shape[1] != 2):
            want = "(n, 2, T, d)" if self.backbone == "features" else "(n, T, C, H, W)"
            raise ValueError(f"X must have shape {want} for backbone={self.backbone!r}, got {X.shape}")
        return X, y

    def _model_config(self, X, n_classes: int) -> ArpgNetConfig:
        shape = X.shape[2:] if self.backbone == "features" else X.shape[1:]
        dims = {"T": shape[0], "embed_dim": shape[1]} if self.backbone == "features" else {
            "T": shape[0], "C": shape[1], "H": shape[2], "W": shape[3]}
        return ArpgNetConfig(
            **dims,
            P=self.P, trs=self.trs, heads=self.heads, relation_gat_layers=self.relation_gat_layers,
            fusion_gat_layers=self.fusion_gat_layers, n_classes=n_classes, dropout=self.dropout,
            backbone=self.backbone, variant=self.variant, trunk_channels=tuple(self.trunk_channels),
            seed=self.random_state,
        ).validate()

    def _dataset(self, X, y) -> Dataset:
        if self.backbone == "features":
            arrays = [{"app": x[0], "rel": x[1]} for x in X]
            kind = "features"
        else:
            arrays = [{"frames": x} for x in X]
            kind = "image"
        samples = [
            VideoSample(f"s{i:06d}", int(lab), X.shape[2 if kind == "features" else 1], arrays=a,
                        frame_shapes={k: v.shape[1:] for k, v in a.items()})
            for i, (a, lab) in enumerate(zip(arrays, y))
        ]
        return Dataset(kind, len(self.classes_), samples)

    def _inputs(self, X):
        if self.backbone == "features":
            return FeatureBatch(X[:, 0], X[:, 1], None)
        return X

    def _batches(self, X, fn):
        out = [fn(self._inputs(X[s: s + 64])) for s in range(0, len(X), 64)]
        return np.concatenate(out)

    # -- estimator API ------------------------------------------------------------
    def fit(self, X, y):
        X, y = self._check_X(X, y)
        self._encoder = LabelEncoder().fit(y)
        self.classes_ = self._encoder.classes_
        if len(self.classes_) < 2:
            raise ValueError("need samples from at least 2 classes")
        self.model_ = ArpgNet(self._model_config(X, len(self.classes_)))
        train_cfg = TrainConfig(
            lr_backbone=self.lr_backbone, lr_other=self.lr_other, epochs=self.epochs,
            batch_size=self.batch_size, seed=self.random_state, loss=self.loss, focal_gamma=self.focal_gamma,
        )
        self.log_: TrainingLog = fit(self.model_, self._dataset(X, self._encoder.transform(y)), train_cfg)
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        X, _ = self._check_X(X)
        self.model_.eval()
        return self._batches(X, lambda b: self.model_(b).data)

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self.decision_function(X), axis=-1)

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        return self.classes_[self.decision_function(X).argmax(axis=-1)]

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        X, _ = self._check_X(X)
        self.model_.eval()
        return self._batches(X, lambda b: self.model_.embed(b).data)
