"""Graph values, node permutations and isomorphism machinery."""

from __future__ import annotations

import itertools
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from app.core.errors import InvalidInputError, SamplingDivergedError, UnsupportedSizeError

AUTOMORPHISM_MAX_NODES = 10
ISOMORPHISM_CLASS_MAX_NODES = 8
ISOMORPHISM_MAX_NODES = 64
_PERMUTATION_CHUNK = 20_000


@dataclass(frozen=True, eq=False)
class Graph:
    """Simple undirected graph with optional categorical node and edge labels.

    ``edge_attrs`` uses 0 for "no edge", so it is nonzero exactly where
    ``adjacency`` is 1. Labels that are 1 on every edge are the plain graph
    and are stored as ``None``.
    """

    adjacency: np.ndarray
    node_attrs: Optional[np.ndarray] = None
    edge_attrs: Optional[np.ndarray] = None
    _key: bytes = field(init=False, repr=False)

    def __post_init__(self) -> None:
        adjacency = np.array(self.adjacency, dtype=np.int8, copy=True)
        if adjacency.ndim != 2 or adjacency.shape[0] != adjacency.shape[1]:
            raise InvalidInputError(f"adjacency must be square, got shape {adjacency.shape}")
        if not np.isin(adjacency, (0, 1)).all():
            raise InvalidInputError("adjacency must be binary")
        if not np.array_equal(adjacency, adjacency.T):
            raise InvalidInputError("adjacency must be symmetric")
        if np.any(np.diag(adjacency)):
            raise InvalidInputError("adjacency must have a zero diagonal")
        n = adjacency.shape[0]

        node_attrs = None
        if self.node_attrs is not None:
            node_attrs = np.array(self.node_attrs, dtype=np.int64, copy=True).reshape(-1)
            if node_attrs.shape[0] != n:
                raise InvalidInputError(f"expected {n} node labels, got {node_attrs.shape[0]}")
            if np.any(node_attrs < 0):
                raise InvalidInputError("node labels must be nonnegative")

        edge_attrs = None
        if self.edge_attrs is not None:
            edge_attrs = np.array(self.edge_attrs, dtype=np.int64, copy=True)
            if edge_attrs.shape != adjacency.shape:
                raise InvalidInputError("edge_attrs must have the adjacency shape")
            if not np.array_equal(edge_attrs, edge_attrs.T):
                raise InvalidInputError("edge_attrs must be symmetric")
            if np.any(edge_attrs < 0) or not np.array_equal(edge_attrs > 0, adjacency > 0):
                raise InvalidInputError("edge_attrs must be nonzero exactly on edges")
            if np.array_equal(edge_attrs, adjacency):
                edge_attrs = None

        for array in (adjacency, node_attrs, edge_attrs):
            if array is not None:
                array.setflags(write=False)
        object.__setattr__(self, "adjacency", adjacency)
        object.__setattr__(self, "node_attrs", node_attrs)
        object.__setattr__(self, "edge_attrs", edge_attrs)
        parts = [n.to_bytes(4, "little"), adjacency.tobytes()]
        if node_attrs is not None:
            parts += [b"v", node_attrs.tobytes()]
        if edge_attrs is not None:
            parts += [b"e", edge_attrs.tobytes()]
        object.__setattr__(self, "_key", b"".join(parts))

    @property
    def n(self) -> int:
        return int(self.adjacency.shape[0])

    @property
    def num_edges(self) -> int:
        return int(self.adjacency.sum() // 2)

    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1).astype(np.int64)

    def edges(self) -> list[tuple[int, int]]:
        rows, cols = np.nonzero(np.triu(self.adjacency, k=1))
        return list(zip(rows.tolist(), cols.tolist()))

    @classmethod
    def from_edges(
        cls,
        n: int,
        edges: Iterable[Sequence[int]],
        node_attrs: Optional[Sequence[int]] = None,
    ) -> "Graph":
        adjacency = np.zeros((n, n), dtype=np.int8)
        edge_attrs = None
        typed = False
        labels: dict[tuple[int, int], int] = {}
        for edge in edges:
            u, v = int(edge[0]), int(edge[1])
            if u == v:
                raise InvalidInputError(f"self-loop on node {u}")
            adjacency[u, v] = adjacency[v, u] = 1
            if len(edge) > 2:
                typed = True
                labels[(u, v)] = int(edge[2])
        if typed:
            edge_attrs = adjacency.astype(np.int64)
            for (u, v), label in labels.items():
                edge_attrs[u, v] = edge_attrs[v, u] = label
        return cls(adjacency, node_attrs=node_attrs, edge_attrs=edge_attrs)

    @classmethod
    def empty(cls, n: int) -> "Graph":
        return cls(np.zeros((n, n), dtype=np.int8))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return self._key == other._key

    def __hash__(self) -> int:
        return hash(self._key)

    def __repr__(self) -> str:
        return f"Graph(n={self.n}, edges={self.num_edges})"


@dataclass(frozen=True)
class Permutation:
    """Bijection node ``i`` -> position ``mapping[i]``; matrix P has P[mapping[i], i] = 1."""

    mapping: tuple[int, ...]

    def __post_init__(self) -> None:
        mapping = tuple(int(i) for i in self.mapping)
        if sorted(mapping) != list(range(len(mapping))):
            raise InvalidInputError(f"not a permutation: {mapping}")
        object.__setattr__(self, "mapping", mapping)

    @property
    def n(self) -> int:
        return len(self.mapping)

    @classmethod
    def identity(cls, n: int) -> "Permutation":
        return cls(tuple(range(n)))

    def inverse(self) -> "Permutation":
        inverse = [0] * self.n
        for source, target in enumerate(self.mapping):
            inverse[target] = source
        return Permutation(tuple(inverse))

    def matrix(self) -> np.ndarray:
        p = np.zeros((self.n, self.n), dtype=np.int8)
        p[list(self.mapping), list(range(self.n))] = 1
        return p

    def source_order(self) -> np.ndarray:
        """Index array ``s`` with ``(P A Pᵀ)[i, j] = A[s[i], s[j]]``."""
        return np.asarray(self.inverse().mapping, dtype=np.int64)


def permute(g: Graph, p: Permutation) -> Graph:
    if p.n != g.n:
        raise InvalidInputError(f"permutation of size {p.n} applied to a graph with {g.n} nodes")
    order = p.source_order()
    return Graph(
        g.adjacency[np.ix_(order, order)],
        node_attrs=None if g.node_attrs is None else g.node_attrs[order],
        edge_attrs=None if g.edge_attrs is None else g.edge_attrs[np.ix_(order, order)],
    )


def uniform_random_permutation(n: int, rng: np.random.Generator) -> Permutation:
    if n < 1:
        raise InvalidInputError("permutations need at least one node")
    return Permutation(tuple(rng.permutation(n).tolist()))


def quantize(x: np.ndarray, threshold: float = 0.5) -> Graph:
    """Symmetrize (mean with the transpose), drop the diagonal and threshold."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise InvalidInputError(f"expected a square matrix, got shape {x.shape}")
    if np.isnan(x).any():
        raise SamplingDivergedError("sampled adjacency contains NaN entries")
    symmetric = 0.5 * (x + x.T)
    adjacency = (symmetric >= threshold).astype(np.int8)
    np.fill_diagonal(adjacency, 0)
    return Graph(adjacency)


# ------------------------------------------------------------------
# Isomorphism
# ------------------------------------------------------------------
def _node_invariants(g: Graph) -> list[tuple]:
    a = g.adjacency.astype(np.int64)
    degrees = a.sum(axis=1)
    triangles = np.diag(a @ a @ a) // 2
    invariants = []
    for v in range(g.n):
        neighbours = np.nonzero(a[v])[0]
        label = -1 if g.node_attrs is None else int(g.node_attrs[v])
        incident = () if g.edge_attrs is None else tuple(sorted(g.edge_attrs[v, neighbours].tolist()))
        invariants.append(
            (label, int(degrees[v]), int(triangles[v]), tuple(sorted(degrees[neighbours].tolist())), incident)
        )
    return invariants


def _refine(g1: Graph, g2: Graph) -> tuple[list[int], list[int]]:
    """Colour refinement run on both graphs with a shared palette."""
    colours1 = _node_invariants(g1)
    colours2 = _node_invariants(g2)
    palette: dict = {}
    c1 = [palette.setdefault(c, len(palette)) for c in colours1]
    c2 = [palette.setdefault(c, len(palette)) for c in colours2]
    adj1 = [np.nonzero(row)[0].tolist() for row in g1.adjacency]
    adj2 = [np.nonzero(row)[0].tolist() for row in g2.adjacency]
    for _ in range(max(g1.n, 1)):
        palette = {}
        n1 = [palette.setdefault((c1[v], tuple(sorted(c1[u] for u in adj1[v]))), len(palette)) for v in range(g1.n)]
        n2 = [palette.setdefault((c2[v], tuple(sorted(c2[u] for u in adj2[v]))), len(palette)) for v in range(g2.n)]
        stable = len(set(n1)) == len(set(c1)) and len(set(n2)) == len(set(c2))
        c1, c2 = n1, n2
        if stable:
            break
    return c1, c2


def find_isomorphism(g1: Graph, g2: Graph) -> Optional[Permutation]:
    """Return P with P·A1·Pᵀ = A2 (labels matched), or None.

    Invariant-pruned backtracking: nodes of ``g1`` are mapped in an order that
    keeps each new node adjacent to already mapped ones, and every tentative
    pair is checked against all mapped nodes (edges and non-edges).
    """
    if g1.n != g2.n:
        return None
    n = g1.n
    if n > ISOMORPHISM_MAX_NODES:
        raise UnsupportedSizeError(n, ISOMORPHISM_MAX_NODES, "isomorphism testing")
    if n == 0:
        return Permutation(())
    if g1.num_edges != g2.num_edges:
        return None
    if (g1.node_attrs is None) != (g2.node_attrs is None) or (g1.edge_attrs is None) != (g2.edge_attrs is None):
        return None

    colours1, colours2 = _refine(g1, g2)
    if sorted(colours1) != sorted(colours2):
        return None

    candidates: dict[int, list[int]] = defaultdict(list)
    for v, colour in enumerate(colours2):
        candidates[colour].append(v)

    a1, a2 = g1.adjacency, g2.adjacency
    e1 = g1.edge_attrs if g1.edge_attrs is not None else a1
    e2 = g2.edge_attrs if g2.edge_attrs is not None else a2

    order: list[int] = []
    remaining = set(range(n))
    while remaining:
        def priority(u: int) -> tuple[int, int]:
            links = sum(1 for w in order if a1[u, w])
            return (-links, len(candidates[colours1[u]]))

        u = min(sorted(remaining), key=priority)
        order.append(u)
        remaining.remove(u)

    mapping = [-1] * n
    used = [False] * n

    def consistent(u: int, v: int, depth: int) -> bool:
        for w in order[:depth]:
            if e1[u, w] != e2[v, mapping[w]]:
                return False
        return True

    def backtrack(depth: int) -> bool:
        if depth == n:
            return True
        u = order[depth]
        for v in candidates[colours1[u]]:
            if used[v] or not consistent(u, v, depth):
                continue
            mapping[u] = v
            used[v] = True
            if backtrack(depth + 1):
                return True
            used[v] = False
        mapping[u] = -1
        return False

    if backtrack(0):
        return Permutation(tuple(mapping))
    return None


def isomorphic(g1: Graph, g2: Graph) -> bool:
    return find_isomorphism(g1, g2) is not None


# ------------------------------------------------------------------
# Exhaustive enumeration over S_n
# ------------------------------------------------------------------
def _permutation_chunks(n: int) -> Iterator[np.ndarray]:
    iterator = itertools.permutations(range(n))
    while True:
        chunk = list(itertools.islice(iterator, _PERMUTATION_CHUNK))
        if not chunk:
            return
        yield np.asarray(chunk, dtype=np.int64).reshape(len(chunk), n)


def all_permutations(n: int) -> Iterator[Permutation]:
    for mapping in itertools.permutations(range(n)):
        yield Permutation(mapping)


def _label_matrix(g: Graph) -> np.ndarray:
    """Single integer matrix encoding adjacency, edge labels and node labels (diagonal)."""
    m = (g.edge_attrs if g.edge_attrs is not None else g.adjacency).astype(np.int64)
    if g.node_attrs is not None:
        m = m.copy()
        np.fill_diagonal(m, g.node_attrs + 1)
    return m


def automorphism_count(g: Graph, max_nodes: int = AUTOMORPHISM_MAX_NODES) -> int:
    """|{P : P·A·Pᵀ = A}| by enumeration over S_n."""
    if g.n > max_nodes:
        raise UnsupportedSizeError(g.n, max_nodes, "automorphism enumeration")
    if g.n == 0:
        return 1
    m = _label_matrix(g)
    count = 0
    for perms in _permutation_chunks(g.n):
        permuted = m[perms[:, :, None], perms[:, None, :]]
        count += int(np.all(permuted == m, axis=(1, 2)).sum())
    return count


def permutation_images(g: Graph, max_nodes: int = ISOMORPHISM_CLASS_MAX_NODES) -> list[tuple[Graph, int]]:
    """Every distinct P·A·Pᵀ over S_n with the number of permutations producing it.

    Each count equals automorphism_count(g); the counts sum to n!.
    """
    if g.n > max_nodes:
        raise UnsupportedSizeError(g.n, max_nodes, "isomorphism class enumeration")
    if g.n == 0:
        return [(g, 1)]
    m = _label_matrix(g)
    orders: dict[bytes, np.ndarray] = {}
    counts: dict[bytes, int] = defaultdict(int)
    for perms in _permutation_chunks(g.n):
        # rows of ``perms`` are source orders: permuted[k] = m[s][:, s]
        permuted = m[perms[:, :, None], perms[:, None, :]]
        flat = permuted.reshape(len(perms), -1)
        _, first, chunk_counts = np.unique(
            flat, axis=0, return_index=True, return_counts=True
        )
        for index, count in zip(first, chunk_counts):
            key = permuted[index].tobytes()
            orders.setdefault(key, perms[index])
            counts[key] += int(count)
    images = []
    for key, order in orders.items():
        image = Graph(
            g.adjacency[np.ix_(order, order)],
            node_attrs=None if g.node_attrs is None else g.node_attrs[order],
            edge_attrs=None if g.edge_attrs is None else g.edge_attrs[np.ix_(order, order)],
        )
        images.append((image, counts[key]))
    return images


def isomorphism_class(g: Graph, max_nodes: int = ISOMORPHISM_CLASS_MAX_NODES) -> frozenset[Graph]:
    """All distinct matrices P·A·Pᵀ (attributes permuted alongside)."""
    return frozenset(image for image, _ in permutation_images(g, max_nodes))


def orbit_size(g: Graph) -> int:
    """n! / |Aut(g)| (orbit-stabilizer)."""
    return math.factorial(g.n) // automorphism_count(g)


def isomorphism_classes(graphs: Sequence[Graph]) -> list[list[int]]:
    """Group indices of ``graphs`` into isomorphism classes (first-seen order)."""
    representatives: list[Graph] = []
    groups: list[list[int]] = []
    for index, g in enumerate(graphs):
        for group_index, representative in enumerate(representatives):
            if isomorphic(g, representative):
                groups[group_index].append(index)
                break
        else:
            representatives.append(g)
            groups.append([index])
    return groups
