"""Synthetic graph generators, edge-list files, splits and permutation augmentation."""

from __future__ import annotations

import logging
import math
from pathlib import Path
from typing import Optional, Sequence

import networkx as nx
import numpy as np
from sklearn.model_selection import train_test_split

from app.core.config import DatasetSpec
from app.core.errors import GraphParseError, InvalidInputError, SwinGNNError
from app.services.graphs import Graph, Permutation, permute

logger = logging.getLogger(__name__)

REGULAR_TOY_NODES = 16
REGULAR_TOY_DEGREES = tuple(range(2, 12))
NODE_SIDECAR_SUFFIX = ".nodes"


def _seed(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**31 - 1))


def from_networkx(g: nx.Graph) -> Graph:
    nodes = list(g.nodes())
    index = {node: i for i, node in enumerate(nodes)}
    return Graph.from_edges(len(nodes), [(index[u], index[v]) for u, v in g.edges() if u != v])


def to_networkx(g: Graph) -> nx.Graph:
    graph = nx.Graph()
    graph.add_nodes_from(range(g.n))
    graph.add_edges_from(g.edges())
    return graph


# ------------------------------------------------------------------
# Generators
# ------------------------------------------------------------------
def generate_grid(
    rows_range: tuple[int, int], cols_range: tuple[int, int], count: int, rng: np.random.Generator
) -> list[Graph]:
    """2D lattices with rows and columns drawn uniformly from the inclusive ranges."""
    (r_lo, r_hi), (c_lo, c_hi) = rows_range, cols_range
    if r_lo < 1 or c_lo < 1 or r_lo > r_hi or c_lo > c_hi:
        raise InvalidInputError(f"empty grid range rows={rows_range} cols={cols_range}")
    graphs = []
    for _ in range(count):
        rows = int(rng.integers(r_lo, r_hi + 1))
        cols = int(rng.integers(c_lo, c_hi + 1))
        graphs.append(from_networkx(nx.grid_2d_graph(rows, cols)))
    return graphs


def default_p_inter(n: int) -> float:
    """Inter-block probability giving ≈0.05·|V| expected inter-community edges."""
    return min(1.0, 0.05 * n / (n // 2) ** 2)


def generate_community_small(
    count: int,
    rng: np.random.Generator,
    p_intra: float = 0.7,
    p_inter: Optional[float] = None,
    min_nodes: int = 12,
    max_nodes: int = 20,
) -> list[Graph]:
    """Two equal-size Erdős–Rényi communities joined by sparse inter-block edges."""
    for name, p in (("p_intra", p_intra), ("p_inter", p_inter)):
        if p is not None and not 0.0 <= p <= 1.0:
            raise InvalidInputError(f"{name} must lie in [0, 1], got {p}")
    sizes = [n for n in range(min_nodes, max_nodes + 1) if n % 2 == 0]
    if not sizes:
        raise InvalidInputError(f"no even node count in [{min_nodes}, {max_nodes}]")
    graphs = []
    for _ in range(count):
        n = int(rng.choice(sizes))
        inter = default_p_inter(n) if p_inter is None else p_inter
        probs = [[p_intra, inter], [inter, p_intra]]
        graphs.append(from_networkx(nx.stochastic_block_model([n // 2, n // 2], probs, seed=_seed(rng))))
    return graphs


def generate_regular_toy(
    rng: np.random.Generator,
    count: int = 10,
    n: int = REGULAR_TOY_NODES,
    degrees: Sequence[int] = REGULAR_TOY_DEGREES,
    max_retries: int = 100,
) -> list[Graph]:
    """One d-regular graph on n nodes per distinct degree drawn from ``degrees``."""
    feasible = [d for d in degrees if d < n and (d * n) % 2 == 0]
    if count > len(feasible):
        raise InvalidInputError(f"only {len(feasible)} feasible degrees for {count} regular graphs")
    chosen = sorted(int(d) for d in rng.choice(feasible, size=count, replace=False))
    graphs = []
    for d in chosen:
        for attempt in range(max_retries):
            try:
                candidate = from_networkx(nx.random_regular_graph(d, n, seed=_seed(rng)))
            except nx.NetworkXError as exc:
                logger.debug("regular graph d=%d attempt %d failed: %s", d, attempt, exc)
                continue
            if np.all(candidate.degrees() == d):
                graphs.append(candidate)
                break
        else:
            raise SwinGNNError(f"could not build a {d}-regular graph on {n} nodes", category="generation_failed")
    return graphs


# ------------------------------------------------------------------
# Edge-list files
# ------------------------------------------------------------------
def _parse_blocks(path: Path) -> list[tuple[int, list[tuple[int, list[int]]]]]:
    """Split a file into (node count, [(line number, integer fields)]) blocks."""
    blocks: list[tuple[int, list[tuple[int, list[int]]]]] = []
    with path.open("r", encoding="utf-8") as handle:
        for number, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split()
            if fields[0] == "n":
                if len(fields) != 2 or not fields[1].isdigit():
                    raise GraphParseError(f"bad header {line!r}", line_number=number, path=str(path))
                blocks.append((int(fields[1]), []))
                continue
            if not blocks:
                raise GraphParseError("record before the first 'n <count>' header", line_number=number, path=str(path))
            try:
                values = [int(f) for f in fields]
            except ValueError:
                raise GraphParseError(f"non-integer field in {line!r}", line_number=number, path=str(path)) from None
            blocks[-1][1].append((number, values))
    return blocks


def load_edge_list(path: str | Path) -> list[Graph]:
    """Read every graph of an edge-list file (and its ``.nodes`` sidecar if present)."""
    path = Path(path)
    if not path.is_file():
        raise InvalidInputError(f"edge-list file not found: {path}")
    blocks = _parse_blocks(path)
    sidecar = path.with_name(path.name + NODE_SIDECAR_SUFFIX)
    node_blocks = _parse_blocks(sidecar) if sidecar.is_file() else None
    if node_blocks is not None and len(node_blocks) != len(blocks):
        raise GraphParseError(
            f"sidecar holds {len(node_blocks)} graphs, edge list {len(blocks)}", line_number=1, path=str(sidecar)
        )

    graphs = []
    for index, (n, records) in enumerate(blocks):
        edges = []
        for number, values in records:
            if len(values) not in (2, 3):
                raise GraphParseError("expected 'u v [edge_type]'", line_number=number, path=str(path))
            u, v = values[0], values[1]
            if not (0 <= u < n and 0 <= v < n) or u == v:
                raise GraphParseError(f"invalid edge ({u}, {v}) for {n} nodes", line_number=number, path=str(path))
            if len(values) == 3 and values[2] < 1:
                raise GraphParseError("edge types start at 1", line_number=number, path=str(path))
            edges.append(tuple(values))
        if edges and len({len(e) for e in edges}) != 1:
            raise GraphParseError("mixed typed and untyped edges", line_number=records[0][0], path=str(path))

        node_attrs = None
        if node_blocks is not None:
            count, node_records = node_blocks[index]
            if count != n:
                raise GraphParseError(f"sidecar graph {index} has {count} nodes, expected {n}", line_number=1, path=str(sidecar))
            node_attrs = np.zeros(n, dtype=np.int64)
            for number, values in node_records:
                if len(values) != 2 or not 0 <= values[0] < n or values[1] < 0:
                    raise GraphParseError("expected 'v node_type'", line_number=number, path=str(sidecar))
                node_attrs[values[0]] = values[1]
        graphs.append(Graph.from_edges(n, edges, node_attrs=node_attrs))
    logger.info("loaded %d graphs from %s", len(graphs), path)
    return graphs


def format_edge_list(graphs: Sequence[Graph]) -> str:
    lines = []
    for g in graphs:
        lines.append(f"n {g.n}")
        for u, v in g.edges():
            lines.append(f"{u} {v}" if g.edge_attrs is None else f"{u} {v} {int(g.edge_attrs[u, v])}")
    return "\n".join(lines) + "\n"


def save_edge_list(graphs: Sequence[Graph], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_edge_list(graphs), encoding="utf-8")
    if any(g.node_attrs is not None for g in graphs):
        node_lines = []
        for g in graphs:
            node_lines.append(f"n {g.n}")
            labels = g.node_attrs if g.node_attrs is not None else np.zeros(g.n, dtype=np.int64)
            node_lines.extend(f"{v} {int(t)}" for v, t in enumerate(labels))
        path.with_name(path.name + NODE_SIDECAR_SUFFIX).write_text("\n".join(node_lines) + "\n", encoding="utf-8")
    return path


def filter_by_size(graphs: Sequence[Graph], min_nodes: int, max_nodes: int) -> list[Graph]:
    return [g for g in graphs if min_nodes <= g.n <= max_nodes]


# ------------------------------------------------------------------
# Split and augmentation
# ------------------------------------------------------------------
def split(data: Sequence[Graph], ratio: float, seed: int) -> tuple[list[Graph], list[Graph]]:
    """Seeded random partition; ``ratio`` is the training fraction."""
    if not 0.0 < ratio <= 1.0:
        raise InvalidInputError(f"split ratio must lie in (0, 1], got {ratio}")
    data = list(data)
    if ratio == 1.0 or len(data) < 2:
        return data, []
    train, test = train_test_split(data, train_size=ratio, random_state=seed, shuffle=True)
    return list(train), list(test)


def fixed_permutations(n: int, count: int, rng: np.random.Generator) -> list[Permutation]:
    """Identity followed by ``count − 1`` distinct uniformly random permutations of n nodes."""
    if count < 1:
        raise InvalidInputError("need at least one permutation")
    if count > math.factorial(n):
        raise InvalidInputError(f"only {math.factorial(n)} permutations exist on {n} nodes, asked for {count}")
    perms = [Permutation.identity(n)]
    seen = set(perms)
    while len(perms) < count:
        candidate = Permutation(tuple(rng.permutation(n).tolist()))
        if candidate not in seen:
            seen.add(candidate)
            perms.append(candidate)
    return perms


def permutation_augment(graphs: Sequence[Graph], l: int, rng: np.random.Generator) -> list[Graph]:
    """Training set of the l-permuted empirical distribution: every graph under the same l permutations."""
    if l == 1:
        return list(graphs)
    perms_by_size: dict[int, list[Permutation]] = {}
    augmented = []
    for g in graphs:
        if g.n not in perms_by_size:
            perms_by_size[g.n] = fixed_permutations(g.n, l, rng)
        augmented.extend(permute(g, p) for p in perms_by_size[g.n])
    return augmented


def load_dataset(spec: DatasetSpec) -> list[Graph]:
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "grid":
        graphs = generate_grid((spec.rows_min, spec.rows_max), (spec.cols_min, spec.cols_max), spec.count, rng)
    elif spec.kind == "community-small":
        graphs = generate_community_small(spec.count, rng, spec.p_intra, spec.p_inter, spec.min_nodes, spec.max_nodes)
    elif spec.kind == "regular-toy":
        graphs = generate_regular_toy(rng)
    else:
        graphs = filter_by_size(load_edge_list(spec.path), spec.min_nodes, spec.max_nodes)
    logger.info("dataset %s: %d graphs", spec.kind, len(graphs))
    return graphs
