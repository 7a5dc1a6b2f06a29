"""Facial-region relation graphs and temporally scoped fusion graphs.

Nodes of the relation graph are the patches of a ``P x P`` grid indexed
row-major from 0 (figure labels in the literature are 1-based:
``label = index + 1``). The fusion graph has ``2T`` nodes: appearance
frames ``0..T-1`` followed by relation frames ``T..2T-1``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GridSpec:
    P: int

    def __post_init__(self):
        if int(self.P) < 1:
            raise ValueError(f"grid side P must be >= 1, got {self.P}")

    @property
    def n_nodes(self) -> int:
        return self.P * self.P

    def position(self, index: int) -> tuple[int, int]:
        return divmod(index, self.P)

    def index(self, row: int, col: int) -> int:
        return row * self.P + col


class AdjacencyMatrix:
    """Dense boolean neighbourhood structure; row ``i`` lists the nodes ``i`` attends to."""

    __slots__ = ("entries",)

    def __init__(self, entries):
        arr = np.array(entries, dtype=bool)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] < 1:
            raise ValueError(f"adjacency must be a non-empty square matrix, got shape {arr.shape}")
        arr.setflags(write=False)
        self.entries = arr

    @property
    def n_nodes(self) -> int:
        return self.entries.shape[0]

    @property
    def n_edges(self) -> int:
        """Number of true entries (directed, self-loops included)."""
        return int(self.entries.sum())

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)

    def __eq__(self, other) -> bool:
        if not isinstance(other, AdjacencyMatrix):
            return NotImplemented
        return np.array_equal(self.entries, other.entries)

    def __repr__(self) -> str:
        return f"AdjacencyMatrix(n_nodes={self.n_nodes}, n_edges={self.n_edges})"

    def is_symmetric(self) -> bool:
        return bool(np.array_equal(self.entries, self.entries.T))

    def is_reflexive(self) -> bool:
        return bool(np.all(np.diag(self.entries)))

    def has_empty_row(self) -> bool:
        return bool(not self.entries.any(axis=1).all())

    def permuted(self, perm) -> "AdjacencyMatrix":
        """Relabel nodes so that new node ``k`` is old node ``perm[k]``."""
        perm = np.asarray(perm)
        return AdjacencyMatrix(self.entries[np.ix_(perm, perm)])

    def edges(self) -> list[tuple[int, int]]:
        return [(int(i), int(j)) for i, j in np.argwhere(self.entries)]

    def to_csv(self) -> str:
        return "\n".join(",".join("1" if v else "0" for v in row) for row in self.entries) + "\n"

    def edge_list_csv(self) -> str:
        return "".join(f"{i},{j}\n" for i, j in self.edges())


def relation_edge(grid: GridSpec, i: int, j: int) -> bool:
    """Edge predicate of the facial-region graph: self, 4-neighbour, or left-right mirror."""
    if i == j:
        return True
    ri, ci = grid.position(i)
    rj, cj = grid.position(j)
    if ri == rj and abs(ci - cj) == 1:
        return True
    if ci == cj and abs(ri - rj) == 1:
        return True
    return ri == rj and cj == grid.P - 1 - ci


def build_relation_graph(grid: GridSpec | int) -> AdjacencyMatrix:
    grid = grid if isinstance(grid, GridSpec) else GridSpec(int(grid))
    P = grid.P
    rows, cols = np.divmod(np.arange(P * P), P)
    same_row = rows[:, None] == rows[None, :]
    same_col = cols[:, None] == cols[None, :]
    dr = np.abs(rows[:, None] - rows[None, :])
    dc = np.abs(cols[:, None] - cols[None, :])
    adj = (
        np.eye(P * P, dtype=bool)
        | (same_row & (dc == 1))
        | (same_col & (dr == 1))
        | (same_row & (cols[None, :] == P - 1 - cols[:, None]))
    )
    return AdjacencyMatrix(adj)


def fusion_edge(T: int, trs: int, i: int, j: int) -> bool:
    return abs(i % T - j % T) <= trs


def build_fusion_graph(T: int, trs: int) -> AdjacencyMatrix:
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if trs < 0:
        raise ValueError(f"TRS must be >= 0, got {trs}")
    frame = np.arange(2 * T) % T
    return AdjacencyMatrix(np.abs(frame[:, None] - frame[None, :]) <= trs)


def neighbors(adj: AdjacencyMatrix, i: int) -> list[int]:
    if not 0 <= i < adj.n_nodes:
        raise IndexError(f"node {i} out of range for a graph of {adj.n_nodes} nodes")
    return [int(j) for j in np.flatnonzero(adj.entries[i])]


def degree_histogram(adj: AdjacencyMatrix) -> dict[int, int]:
    """Map degree (self-loop counted) to the number of nodes having it."""
    degrees, counts = np.unique(adj.entries.sum(axis=1), return_counts=True)
    return {int(d): int(c) for d, c in zip(degrees, counts)}


def degrees(adj: AdjacencyMatrix) -> np.ndarray:
    return adj.entries.sum(axis=1)
