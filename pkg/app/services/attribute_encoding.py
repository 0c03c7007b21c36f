"""Continuous encodings of categorical node and edge types.

All encodings live in [-1, 1]:

* ``scalar``  one channel; type ``k`` of ``T`` sits at the midpoint of the k-th
  of T equal sub-intervals, decoding picks the nearest midpoint (the two
  boundary intervals absorb everything beyond the outermost midpoints).
* ``bits``    ceil(log2 T) channels, most significant bit first, 0/1 -> -1/+1.
* ``one-hot`` T channels, +1 on the active type and -1 elsewhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from app.core.config import EncodingKind
from app.core.errors import InvalidInputError
from app.services.graphs import Graph


@dataclass(frozen=True)
class EncodingScheme:
    kind: EncodingKind
    num_node_types: int
    num_edge_types: int

    def __post_init__(self) -> None:
        if self.kind not in ("scalar", "bits", "one-hot"):
            raise InvalidInputError(f"unknown encoding kind {self.kind!r}")
        if self.num_node_types < 0 or self.num_edge_types < 2:
            raise InvalidInputError("need at least two edge types and a nonnegative node type count")

    @property
    def edge_channels(self) -> int:
        return channels_for(self.kind, self.num_edge_types)

    @property
    def node_channels(self) -> int:
        if self.num_node_types == 0:
            return 0
        return channels_for(self.kind, self.num_node_types)


def channels_for(kind: str, num_types: int) -> int:
    if kind == "scalar":
        return 1
    if kind == "bits":
        return max(1, math.ceil(math.log2(num_types)))
    return num_types


def encode_types(types: np.ndarray, kind: str, num_types: int) -> np.ndarray:
    """Integer array (...) -> float array (..., C)."""
    types = np.asarray(types, dtype=np.int64)
    if types.size and (types.min() < 0 or types.max() >= num_types):
        raise InvalidInputError(f"type index out of range [0, {num_types})")
    if kind == "scalar":
        return (-1.0 + (2.0 * types + 1.0) / num_types)[..., None]
    if kind == "bits":
        width = channels_for(kind, num_types)
        shifts = np.arange(width - 1, -1, -1)
        bits = (types[..., None] >> shifts) & 1
        return 2.0 * bits - 1.0
    encoded = -np.ones(types.shape + (num_types,), dtype=np.float64)
    np.put_along_axis(encoded, types[..., None], 1.0, axis=-1)
    return encoded


def decode_types(values: np.ndarray, kind: str, num_types: int) -> np.ndarray:
    """Float array (..., C) -> integer array (...)."""
    values = np.asarray(values, dtype=np.float64)
    if kind == "scalar":
        index = np.floor((values[..., 0] + 1.0) * num_types / 2.0)
        return np.clip(index, 0, num_types - 1).astype(np.int64)
    if kind == "bits":
        width = values.shape[-1]
        bits = (values >= 0).astype(np.int64)
        weights = 2 ** np.arange(width - 1, -1, -1)
        return np.clip((bits * weights).sum(axis=-1), 0, num_types - 1)
    return np.argmax(values, axis=-1).astype(np.int64)


def encode_attributes(g: Graph, scheme: EncodingScheme) -> tuple[np.ndarray, np.ndarray]:
    """Return (n×n×C_e edge array, n×C_v node array)."""
    edge_types = g.edge_attrs if g.edge_attrs is not None else g.adjacency.astype(np.int64)
    edges = encode_types(edge_types, scheme.kind, scheme.num_edge_types)
    if scheme.node_channels == 0:
        nodes = np.zeros((g.n, 0))
    else:
        if g.node_attrs is None:
            raise InvalidInputError("the encoding scheme expects node labels")
        nodes = encode_types(g.node_attrs, scheme.kind, scheme.num_node_types)
    return edges, nodes


def decode_attributes(edges: np.ndarray, nodes: np.ndarray | None, scheme: EncodingScheme) -> Graph:
    edges = np.asarray(edges, dtype=np.float64)
    if edges.ndim != 3 or edges.shape[0] != edges.shape[1]:
        raise InvalidInputError(f"expected an n×n×C edge array, got shape {edges.shape}")
    symmetric = 0.5 * (edges + edges.transpose(1, 0, 2))
    edge_types = decode_types(symmetric, scheme.kind, scheme.num_edge_types)
    np.fill_diagonal(edge_types, 0)
    node_types = None
    if scheme.node_channels and nodes is not None:
        node_types = decode_types(nodes, scheme.kind, scheme.num_node_types)
    adjacency = (edge_types > 0).astype(np.int8)
    return Graph(adjacency, node_attrs=node_types, edge_attrs=edge_types)
