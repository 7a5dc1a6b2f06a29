"""Masked multi-head graph attention and sinusoidal positional encoding."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .graphs import AdjacencyMatrix
from .nn import Module, kaiming_init
from .numerics import DimensionError, Tensor, as_tensor, leaky_relu, masked_softmax, matmul, mean


@dataclass(frozen=True)
class AttentionRecord:
    """Normalised weight ``beta`` that node ``src`` assigns to neighbour ``dst``.

    ``src`` is the node being updated and ``dst`` the neighbour whose
    transformed feature is aggregated, so ``beta`` sums to one over ``dst``.
    """

    head: int
    src: int
    dst: int
    beta: float


class AttentionMap:
    """Per-head attention weights of one layer evaluation.

    ``beta`` has shape ``(..., heads, N, N)``; leading axes are batch axes.
    Iterating yields :class:`AttentionRecord` for every edge and head of an
    unbatched map.
    """

    def __init__(self, beta: np.ndarray, adj: AdjacencyMatrix):
        self.beta = beta
        self.adj = adj

    @property
    def heads(self) -> int:
        return self.beta.shape[-3]

    def __getitem__(self, index) -> "AttentionMap":
        return AttentionMap(self.beta[index], self.adj)

    def records(self) -> list[AttentionRecord]:
        if self.beta.ndim != 3:
            raise ValueError("records() needs an unbatched map; index the batch first")
        src, dst = np.nonzero(self.adj.entries)
        return [
            AttentionRecord(k, int(i), int(j), float(self.beta[k, i, j]))
            for k in range(self.heads)
            for i, j in zip(src, dst)
        ]

    def __iter__(self) -> Iterator[AttentionRecord]:
        return iter(self.records())

    def __len__(self) -> int:
        return self.heads * self.adj.n_edges

    def received(self) -> np.ndarray:
        """Head-averaged total weight each node receives from the nodes attending to it."""
        return self.beta.sum(axis=-2).mean(axis=-2)


class GatLayer(Module):
    """Parameters of one multi-head graph attention layer.

    ``W`` has shape ``(heads, h, h')`` and maps row features ``x @ W``;
    ``att`` has shape ``(heads, 2h')`` with the query half first.
    ``output_slope`` is the negative slope of the LeakyReLU applied to each
    head's aggregate; ``None`` makes that activation the identity.
    """

    def __init__(
        self,
        n_in: int,
        n_out: int,
        heads: int,
        rng: np.random.Generator | None = None,
        attention_slope: float = 0.01,
        output_slope: float | None = 0.01,
        dtype=np.float32,
    ):
        if heads < 1:
            raise ValueError(f"heads must be >= 1, got {heads}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.W = kaiming_init((heads, n_in, n_out), rng, fan_in=n_in, dtype=dtype)
        self.att = kaiming_init((heads, 2 * n_out), rng, fan_in=2 * n_out, dtype=dtype)
        self.heads = heads
        self.n_in = n_in
        self.n_out = n_out
        self.attention_slope = attention_slope
        self.output_slope = output_slope

    def __call__(self, x, adj: AdjacencyMatrix) -> tuple[Tensor, AttentionMap]:
        return gat_forward(x, adj, self)


def gat_forward(x, adj: AdjacencyMatrix, params: GatLayer) -> tuple[Tensor, AttentionMap]:
    """One masked multi-head attention layer over node features ``x`` of shape ``(..., N, h)``.

    Per head: ``e_ij = LeakyReLU(att . [W x_i || W x_j])`` on edges of ``adj``,
    ``beta_i. = softmax`` over the neighbourhood, ``x'_i = sigma(sum_j beta_ij W x_j)``.
    Head outputs are averaged.
    """
    x = as_tensor(x)
    if x.ndim < 2:
        raise DimensionError(f"gat_forward expects (..., N, h) features, got {x.shape}")
    n, h = x.shape[-2], x.shape[-1]
    if n != adj.n_nodes:
        raise DimensionError(f"gat_forward: {n} node features for a graph of {adj.n_nodes} nodes")
    if h != params.n_in:
        raise DimensionError(f"gat_forward: feature width {h} does not match layer input {params.n_in}")
    if adj.has_empty_row():
        raise DimensionError("gat_forward: adjacency has a node without neighbours")

    k, hp = params.heads, params.n_out
    xh = x.reshape(x.shape[:-2] + (1, n, h))
    wx = matmul(xh, params.W)  # (..., K, N, h')
    att_q = params.att[:, :hp].reshape((k, hp, 1))
    att_k = params.att[:, hp:].reshape((k, hp, 1))
    score_q = matmul(wx, att_q)  # (..., K, N, 1)
    score_k = matmul(wx, att_k).swapaxes(-1, -2)  # (..., K, 1, N)
    e = leaky_relu(score_q + score_k, params.attention_slope)
    beta = masked_softmax(e, adj.entries)
    agg = matmul(beta, wx)
    if params.output_slope is not None:
        agg = leaky_relu(agg, params.output_slope)
    out = mean(agg, axis=-3)
    return out, AttentionMap(beta.data, adj)


def positional_encoding(T: int, d: int, dtype=np.float32) -> np.ndarray:
    """Sinusoidal table: ``sin`` on even columns, ``cos`` on odd, frequency ``10000^(-2k/d)``."""
    if d % 2:
        raise ValueError(f"positional encoding width must be even, got {d}")
    if T < 1:
        raise ValueError(f"sequence length must be >= 1, got {T}")
    pos = np.arange(T, dtype=np.float64)[:, None]
    freq = 10000.0 ** (-np.arange(0, d, 2, dtype=np.float64) / d)
    table = np.empty((T, d), dtype=np.float64)
    table[:, 0::2] = np.sin(pos * freq)
    table[:, 1::2] = np.cos(pos * freq)
    return table.astype(dtype)


def add_positional_encoding(seq) -> Tensor:
    """Add the encoding table to a ``(..., T, d)`` sequence."""
    seq = as_tensor(seq)
    return seq + Tensor(positional_encoding(seq.shape[-2], seq.shape[-1], seq.dtype))
