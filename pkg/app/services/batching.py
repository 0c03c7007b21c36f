"""Padded tensor batches of graphs and the packed diffusion state layout.

Plain graphs travel as (B, 1, n, n) adjacency channels mapped to ±1.
Attributed graphs pack edge channels (C_e, n, n) and node channels (C_v, n)
into one flat vector so the sampler and the loss see a single tensor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch
from torch import Tensor

from app.core.errors import InvalidInputError, SamplingDivergedError, ShapeMismatchError
from app.services.attribute_encoding import EncodingScheme, decode_attributes, encode_attributes
from app.services.graphs import Graph, quantize


@dataclass(frozen=True)
class StateLayout:
    n: int
    edge_channels: int = 1
    node_channels: int = 0

    @property
    def packed(self) -> bool:
        return self.node_channels > 0

    @property
    def edge_size(self) -> int:
        return self.edge_channels * self.n * self.n

    @property
    def shape(self) -> tuple[int, ...]:
        if not self.packed:
            return (self.edge_channels, self.n, self.n)
        return (self.edge_size + self.node_channels * self.n,)

    @classmethod
    def infer(cls, state: Tensor, edge_channels: int, node_channels: int) -> "StateLayout":
        """Recover n from a (B, C_e, n, n) or packed (B, C_e·n² + C_v·n) state."""
        if state.ndim == 4:
            return cls(state.shape[-1], state.shape[1], 0)
        if state.ndim != 2 or node_channels == 0:
            raise ShapeMismatchError(f"cannot interpret a state of shape {tuple(state.shape)}")
        length = state.shape[1]
        n = int((-node_channels + math.isqrt(node_channels**2 + 4 * edge_channels * length)) // (2 * edge_channels))
        layout = cls(n, edge_channels, node_channels)
        if layout.shape[0] != length:
            raise ShapeMismatchError(f"packed length {length} matches no node count")
        return layout

    def pack(self, edges: Tensor, nodes: Optional[Tensor] = None) -> Tensor:
        if edges.shape[1:] != (self.edge_channels, self.n, self.n):
            raise ShapeMismatchError(f"edge tensor {tuple(edges.shape)} does not fit {self}")
        if not self.packed:
            return edges
        if nodes is None or nodes.shape[1:] != (self.node_channels, self.n):
            raise ShapeMismatchError(f"node tensor does not fit {self}")
        return torch.cat([edges.flatten(1), nodes.flatten(1)], dim=1)

    def unpack(self, state: Tensor) -> tuple[Tensor, Optional[Tensor]]:
        if not self.packed:
            return state, None
        batch = state.shape[0]
        edges = state[:, : self.edge_size].reshape(batch, self.edge_channels, self.n, self.n)
        nodes = state[:, self.edge_size :].reshape(batch, self.node_channels, self.n)
        return edges, nodes

    def entry_mask(self, node_mask: Tensor) -> Tensor:
        """1 on entries whose nodes are all valid, 0 on padding."""
        valid = node_mask.to(torch.float32)
        pair = valid[:, None, :, None] * valid[:, None, None, :]
        edges = pair.expand(-1, self.edge_channels, -1, -1)
        nodes = valid[:, None, :].expand(-1, self.node_channels, -1) if self.packed else None
        return self.pack(edges.contiguous(), None if nodes is None else nodes.contiguous())


@dataclass
class GraphBatch:
    state: Tensor
    node_mask: Tensor
    layout: StateLayout
    scheme: Optional[EncodingScheme] = None

    def __len__(self) -> int:
        return self.state.shape[0]

    def entry_mask(self) -> Tensor:
        return self.layout.entry_mask(self.node_mask).to(self.state)


def batch(
    graphs: Sequence[Graph],
    max_n: int,
    scheme: Optional[EncodingScheme] = None,
    dtype: torch.dtype = torch.float32,
) -> GraphBatch:
    """Pad graphs to ``max_n`` nodes; valid nodes occupy the leading rows."""
    if scheme is not None and scheme.node_channels == 0 and scheme.num_edge_types == 2:
        scheme = None
    edge_channels = 1 if scheme is None else scheme.edge_channels
    node_channels = 0 if scheme is None else scheme.node_channels
    layout = StateLayout(max_n, edge_channels, node_channels)

    edges = np.zeros((len(graphs), edge_channels, max_n, max_n))
    nodes = np.zeros((len(graphs), node_channels, max_n))
    mask = np.zeros((len(graphs), max_n), dtype=bool)
    for b, g in enumerate(graphs):
        if g.n > max_n:
            raise InvalidInputError(f"graph with {g.n} nodes exceeds the batch size limit {max_n}")
        if scheme is None:
            edges[b, 0, : g.n, : g.n] = 2.0 * g.adjacency - 1.0
        else:
            edge_code, node_code = encode_attributes(g, scheme)
            edges[b, :, : g.n, : g.n] = edge_code.transpose(2, 0, 1)
            nodes[b, :, : g.n] = node_code.T
        mask[b, : g.n] = True

    edge_tensor = torch.as_tensor(edges, dtype=dtype)
    node_tensor = torch.as_tensor(nodes, dtype=dtype) if layout.packed else None
    return GraphBatch(layout.pack(edge_tensor, node_tensor), torch.as_tensor(mask), layout, scheme)


def decode_state(
    state: Tensor,
    layout: StateLayout,
    node_counts: Sequence[int],
    scheme: Optional[EncodingScheme] = None,
) -> list[Graph]:
    """Continuous states (±1 scale) -> graphs truncated to their node counts."""
    if not torch.isfinite(state).all():
        raise SamplingDivergedError("sampled state contains non-finite entries")
    edges, nodes = layout.unpack(state.detach().cpu().to(torch.float64))
    graphs = []
    for b, n in enumerate(node_counts):
        if scheme is None:
            graphs.append(quantize((edges[b, 0, :n, :n].numpy() + 1.0) / 2.0))
        else:
            edge_values = edges[b, :, :n, :n].permute(1, 2, 0).numpy()
            node_values = None if nodes is None else nodes[b, :, :n].T.numpy()
            graphs.append(decode_attributes(edge_values, node_values, scheme))
    return graphs


def unbatch(graph_batch: GraphBatch) -> list[Graph]:
    counts = graph_batch.node_mask.sum(dim=1).tolist()
    return decode_state(graph_batch.state, graph_batch.layout, [int(c) for c in counts], graph_batch.scheme)
