"""Two-branch appearance/relation network with parallel graph-attention fusion."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .attention import AttentionMap, GatLayer, positional_encoding
from .graphs import AdjacencyMatrix, GridSpec, build_fusion_graph, build_relation_graph
from .nn import ConvBlock, Dropout, Linear, Module, PReLU
from .numerics import DimensionError, Tensor, adaptive_avg_pool2d, as_tensor, concat, mean

VARIANTS = ("appearance", "relation", "concat", "fusion", "fusion_trs")
VARIANT_ALIASES = {
    "appearance_only": "appearance",
    "relation_only": "relation",
    "concat_baseline": "concat",
    "fusion_no_trs": "fusion",
}
BACKBONES = ("toy", "features")
BACKBONE_PREFIXES = ("app_trunk.", "app_head.", "rel_trunk.")


def canonical_variant(name: str) -> str:
    name = VARIANT_ALIASES.get(name, name)
    if name not in VARIANTS:
        raise ValueError(f"unknown variant {name!r}; expected one of {VARIANTS}")
    return name


def conv_output_side(side: int, n_blocks: int = 3) -> int:
    for _ in range(n_blocks):
        side = (side + 1) // 2
    return side


class ConfigError(ValueError):
    """Raised with every violated field listed."""

    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("; ".join(problems))


@dataclass
class ArpgNetConfig:
    T: int = 16
    C: int = 3
    H: int = 96
    W: int = 96
    embed_dim: int = 64
    P: int = 6
    trs: int = 3
    heads: int = 4
    relation_gat_layers: int = 3
    fusion_gat_layers: int = 1
    n_classes: int = 7
    dropout: float = 0.25
    backbone: str = "toy"
    variant: str = "fusion_trs"
    trunk_channels: tuple[int, int, int] = (8, 16, 16)
    relation_input: str = "sequence"
    map_side: int = 12
    attention_slope: float = 0.01
    gat_output_slope: float | None = 0.01
    positional_encoding: bool = True
    seed: int = 0

    def __post_init__(self):
        self.trunk_channels = tuple(int(c) for c in self.trunk_channels)
        self.variant = VARIANT_ALIASES.get(self.variant, self.variant)

    @property
    def feature_channels(self) -> int:
        return self.trunk_channels[-1]

    @property
    def feature_side(self) -> int:
        """Side of the feature map the relation branch pools into patches."""
        if self.backbone == "toy":
            return conv_output_side(min(self.H, self.W)) if self.H == self.W else -1
        return self.map_side

    @property
    def effective_trs(self) -> int:
        return self.T - 1 if self.variant == "fusion" else self.trs

    def problems(self) -> list[str]:
        out = []
        for name in ("T", "C", "H", "W", "embed_dim", "P", "heads", "n_classes", "map_side"):
            if int(getattr(self, name)) < 1:
                out.append(f"{name}: must be positive, got {getattr(self, name)}")
        if self.embed_dim % 2:
            out.append(f"embed_dim: must be even for the positional encoding, got {self.embed_dim}")
        if self.trs < 0 or self.trs > max(self.T - 1, 0):
            out.append(f"trs: must lie in [0, T-1] = [0, {self.T - 1}], got {self.trs}")
        if self.relation_gat_layers < 1:
            out.append(f"relation_gat_layers: must be >= 1, got {self.relation_gat_layers}")
        if self.fusion_gat_layers < 0:
            out.append(f"fusion_gat_layers: must be >= 0, got {self.fusion_gat_layers}")
        if not 0.0 <= self.dropout < 1.0:
            out.append(f"dropout: must lie in [0, 1), got {self.dropout}")
        if self.backbone not in BACKBONES:
            out.append(f"backbone: expected one of {BACKBONES}, got {self.backbone!r}")
        if self.variant not in VARIANTS:
            out.append(f"variant: expected one of {VARIANTS}, got {self.variant!r}")
        if self.relation_input not in ("sequence", "map"):
            out.append(f"relation_input: expected 'sequence' or 'map', got {self.relation_input!r}")
        if len(self.trunk_channels) != 3 or min(self.trunk_channels) < 1:
            out.append(f"trunk_channels: need three positive widths, got {self.trunk_channels}")
        if self.backbone == "toy" and self.H != self.W:
            out.append(f"H, W: the toy trunk expects square frames, got {self.H}x{self.W}")
        side = self.feature_side
        if side > 0 and self.P > side and self.uses_relation_graph:
            out.append(f"P: {self.P} patches per side exceed the {side}x{side} feature map")
        return out

    @property
    def uses_relation_graph(self) -> bool:
        return self.backbone == "toy" or self.relation_input == "map"

    def validate(self) -> "ArpgNetConfig":
        problems = self.problems()
        if problems:
            raise ConfigError(problems)
        return self

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["trunk_channels"] = list(self.trunk_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ArpgNetConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError([f"{k}: unknown model field" for k in sorted(unknown)])
        return cls(**d)

    def replace(self, **changes) -> "ArpgNetConfig":
        return dataclasses.replace(self, **changes)


class FeatureBatch(NamedTuple):
    """Precomputed inputs: ``app`` (B, T, C'), and either ``rel`` (B, T, C')
    or ``relmap`` (B, T, S, S, C_f) feature maps."""

    app: np.ndarray
    rel: np.ndarray | None = None
    relmap: np.ndarray | None = None

    def __len__(self) -> int:  # type: ignore[override]
        return self.app.shape[0]


class ToyCnn(Module):
    """Three stride-2 conv/PReLU blocks; 96x96 frames become 12x12 maps."""

    def __init__(self, c_in: int, channels: tuple[int, ...], rng: np.random.Generator, dtype=np.float32):
        widths = (c_in,) + tuple(channels)
        self.blocks = [ConvBlock(widths[i], widths[i + 1], rng, dtype) for i in range(len(channels))]

    def __call__(self, x) -> Tensor:
        for block in self.blocks:
            x = block(x)
        return x


class MlpHead(Module):
    def __init__(self, n_in: int, n_hidden: int, n_out: int, rate: float, rng: np.random.Generator, dtype=np.float32):
        self.fc1 = Linear(n_in, n_hidden, rng, dtype)
        self.act = PReLU(dtype=dtype)
        self.drop = Dropout(rate)
        self.fc2 = Linear(n_hidden, n_out, rng, dtype)

    def __call__(self, x, rng: np.random.Generator | None = None) -> Tensor:
        return self.fc2(self.drop(self.act(self.fc1(x)), rng))


class ArpgNet(Module):
    """Parameter container and forward pass of the full network.

    Every parameter group exists regardless of ``config.variant`` so the
    ablation variants share one layout; groups a variant does not use simply
    receive zero gradient. Batched inputs carry a leading batch axis.
    """

    def __init__(self, config: ArpgNetConfig, rng: np.random.Generator | None = None):
        config.validate()
        self.config = config
        rng = rng if rng is not None else np.random.default_rng(config.seed)
        dt = np.float32
        cp, cf = config.embed_dim, config.feature_channels
        if config.backbone == "toy":
            side = config.feature_side
            self.app_trunk = ToyCnn(config.C, config.trunk_channels, rng, dt)
            self.app_head = Linear(cf * side * side, cp, rng, dt)
            self.rel_trunk = ToyCnn(config.C, config.trunk_channels, rng, dt)
        widths = [cf] + [cp] * config.relation_gat_layers
        gat_kw = dict(attention_slope=config.attention_slope, output_slope=config.gat_output_slope, dtype=dt)
        if config.uses_relation_graph:
            self.rel_gat = [
                GatLayer(widths[i], widths[i + 1], config.heads, rng, **gat_kw)
                for i in range(config.relation_gat_layers)
            ]
        else:
            self.rel_gat = []
        self.fusion_gat = [GatLayer(cp, cp, config.heads, rng, **gat_kw) for _ in range(config.fusion_gat_layers)]
        n_in = cp if config.variant in ("appearance", "relation") else 2 * cp
        self.mlp = MlpHead(n_in, cp, config.n_classes, config.dropout, rng, dt)
        self._relation_adj = build_relation_graph(GridSpec(config.P)) if config.uses_relation_graph else None
        self._attention: dict[str, AttentionMap] = {}

    # -- bookkeeping ----------------------------------------------------------
    @property
    def dtype(self):
        return self.mlp.fc1.weight.dtype

    @property
    def variant(self) -> str:
        return self.config.variant

    def parameter_groups(self) -> dict[str, str]:
        """Map each parameter name to ``'backbone'`` (conv trunks) or ``'other'``."""
        return {
            name: "backbone" if name.startswith(BACKBONE_PREFIXES) else "other"
            for name, _ in self.named_parameters()
        }

    @property
    def attention(self) -> dict[str, AttentionMap]:
        """Attention maps recorded by the most recent forward pass."""
        return self._attention

    def fusion_graph(self, trs: int | None = None) -> AdjacencyMatrix:
        return build_fusion_graph(self.config.T, self.config.effective_trs if trs is None else trs)

    def _tensor(self, x) -> Tensor:
        if isinstance(x, Tensor):
            return x if x.dtype == self.dtype else Tensor(x.data.astype(self.dtype))
        return Tensor(np.asarray(x, dtype=self.dtype))

    # -- branches -------------------------------------------------------------
    def appearance_forward(self, frames) -> Tensor:
        """(B, T, C, H, W) frames -> (B, T, C') per-frame appearance embeddings."""
        cfg = self.config
        x = self._check_frames(frames)
        b, t = x.shape[:2]
        fmap = self.app_trunk(x.reshape((b * t,) + x.shape[2:]))
        flat = fmap.reshape((b * t, -1))
        return self.app_head(flat).reshape((b, t, cfg.embed_dim))

    def relation_forward(self, frames) -> Tensor:
        """(B, T, C, H, W) frames -> (B, T, C') relation embeddings via patch graph attention."""
        x = self._check_frames(frames)
        b, t = x.shape[:2]
        fmap = self.rel_trunk(x.reshape((b * t,) + x.shape[2:]))
        return self.relation_from_map(fmap.reshape((b, t) + fmap.shape[1:]))

    def relation_from_map(self, fmap) -> Tensor:
        """(B, T, C_f, S, S) feature maps -> (B, T, C')."""
        cfg = self.config
        fmap = self._tensor(fmap)
        if fmap.ndim != 5 or fmap.shape[2] != cfg.feature_channels or fmap.shape[3] != fmap.shape[4]:
            raise DimensionError(
                f"relation branch expects (B, T, {cfg.feature_channels}, S, S) maps, got {fmap.shape}"
            )
        if cfg.P > fmap.shape[-1]:
            raise DimensionError(f"P={cfg.P} exceeds the {fmap.shape[-1]}x{fmap.shape[-1]} feature map")
        b, t = fmap.shape[:2]
        pooled = adaptive_avg_pool2d(fmap, cfg.P)  # B, T, C_f, P, P
        nodes = pooled.reshape((b, t, cfg.feature_channels, cfg.P * cfg.P)).swapaxes(-1, -2)
        for i, layer in enumerate(self.rel_gat):
            nodes, amap = layer(nodes, self._relation_adj)
            self._attention[f"relation.{i}"] = amap
        return mean(nodes, axis=-2)

    def fuse(self, app_seq, rel_seq, trs: int | None = None) -> Tensor:
        """Fuse two (B, T, C') sequences on the 2T-node scoped graph into (B, T, 2C').

        The concat variant skips the attention layers, leaving positional
        encoding and frame-wise concatenation.
        """
        app_seq, rel_seq = self._tensor(app_seq), self._tensor(rel_seq)
        if app_seq.shape != rel_seq.shape:
            raise DimensionError(f"fuse: sequence shapes differ, {app_seq.shape} vs {rel_seq.shape}")
        t, d = app_seq.shape[-2], app_seq.shape[-1]
        if self.config.positional_encoding:
            pe = Tensor(positional_encoding(t, d, self.dtype))
            app_seq, rel_seq = app_seq + pe, rel_seq + pe
        nodes = concat([app_seq, rel_seq], axis=-2)
        if self.fusion_gat and self.config.variant != "concat":
            adj = build_fusion_graph(t, self.config.effective_trs if trs is None else trs)
            for i, layer in enumerate(self.fusion_gat):
                nodes, amap = layer(nodes, adj)
                self._attention[f"fusion.{i}"] = amap
        return concat([nodes[..., :t, :], nodes[..., t:, :]], axis=-1)

    def classify(self, fused, rng: np.random.Generator | None = None) -> Tensor:
        """Temporal mean pooling of a (B, T, D) sequence followed by the MLP head."""
        return self.mlp(mean(self._tensor(fused), axis=-2), rng)

    # -- whole network --------------------------------------------------------
    def sequences(self, x) -> tuple[Tensor | None, Tensor | None]:
        """Appearance and relation sequences needed by the active variant."""
        cfg = self.config
        need_app = cfg.variant != "relation"
        need_rel = cfg.variant != "appearance"
        if cfg.backbone == "toy":
            frames = self._check_frames(x)
            app = self.appearance_forward(frames) if need_app else None
            rel = self.relation_forward(frames) if need_rel else None
            return app, rel
        if not isinstance(x, FeatureBatch):
            raise TypeError("the features backbone expects a FeatureBatch input")
        app = self._tensor(x.app) if need_app else None
        rel = None
        if need_rel:
            if cfg.relation_input == "map":
                if x.relmap is None:
                    raise DimensionError("relation_input='map' needs relmap features")
                rel = self.relation_from_map(np.moveaxis(np.asarray(x.relmap), -1, 2))
            else:
                if x.rel is None:
                    raise DimensionError("relation_input='sequence' needs rel features")
                rel = self._tensor(x.rel)
        for name, seq in (("appearance", app), ("relation", rel)):
            if seq is not None and (seq.ndim != 3 or seq.shape[1:] != (cfg.T, cfg.embed_dim)):
                raise DimensionError(
                    f"{name} sequence must be (B, {cfg.T}, {cfg.embed_dim}), got {seq.shape}"
                )
        return app, rel

    def embed(self, x, rng: np.random.Generator | None = None) -> Tensor:
        """Video-level representation fed to the MLP head, shape (B, D)."""
        self._attention = {}
        app, rel = self.sequences(x)
        if self.config.variant == "appearance":
            return mean(app, axis=-2)
        if self.config.variant == "relation":
            return mean(rel, axis=-2)
        return mean(self.fuse(app, rel), axis=-2)

    def forward(self, x, rng: np.random.Generator | None = None) -> Tensor:
        """Logits of shape (B, n_classes). Dropout is active only in train mode."""
        return self.mlp(self.embed(x, rng), rng)

    __call__ = forward

    def _check_frames(self, frames) -> Tensor:
        cfg = self.config
        if cfg.backbone != "toy":
            raise DimensionError("raw frames need backbone='toy'")
        x = self._tensor(frames)
        expected = (cfg.T, cfg.C, cfg.H, cfg.W)
        if x.ndim != 5 or x.shape[1:] != expected:
            raise DimensionError(f"frames must be (B, {', '.join(map(str, expected))}), got {x.shape}")
        return x


def batch_inputs(x):
    """Add a leading batch axis to a single clip."""
    if isinstance(x, FeatureBatch):
        return FeatureBatch(*(None if a is None else np.asarray(a)[None] for a in x))
    return np.asarray(x.data if isinstance(x, Tensor) else x)[None]


def build_model(config: ArpgNetConfig, seed: int | None = None) -> ArpgNet:
    return ArpgNet(config, np.random.default_rng(config.seed if seed is None else seed))
