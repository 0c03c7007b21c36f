"""Graph statistics, MMD with the total-variation kernel, recall and molecule checks."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Literal, Mapping, Optional, Sequence

import networkx as nx
import numpy as np
from joblib import Parallel, delayed
from scipy.stats import chi2_contingency

from app.core.config import EvalConfig
from app.core.errors import InvalidInputError, UnsupportedSizeError
from app.services.datasets import to_networkx
from app.services.graphs import Graph, isomorphic, isomorphism_classes

logger = logging.getLogger(__name__)

StatKind = Literal["degree", "clustering", "orbit"]

NUM_ORBITS = 11
FIRST_ORBIT = 4
RECALL_MAX_NODES = 20
_QUAD_PAIRS = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))
_QUAD_CHUNK = 200_000

# atom type -> maximum valence (C, N, O, F, H)
DEFAULT_VALENCE = {0: 4, 1: 3, 2: 2, 3: 1, 4: 1}


@dataclass(frozen=True)
class StatHistogram:
    kind: StatKind
    bins: np.ndarray

    def __post_init__(self) -> None:
        bins = np.asarray(self.bins, dtype=np.float64)
        total = bins.sum()
        if bins.ndim != 1 or np.any(bins < 0) or not np.isclose(total, 1.0):
            raise InvalidInputError(f"{self.kind} histogram must be a nonnegative vector summing to 1")
        object.__setattr__(self, "bins", bins)


def degree_hist(g: Graph) -> StatHistogram:
    if g.n == 0:
        return StatHistogram("degree", np.array([1.0]))
    counts = np.bincount(g.degrees())
    return StatHistogram("degree", counts / counts.sum())


def clustering_hist(g: Graph, bins: int = 100) -> StatHistogram:
    values = list(nx.clustering(to_networkx(g)).values())
    counts, _ = np.histogram(values, bins=bins, range=(0.0, 1.0))
    if counts.sum() == 0:
        counts = np.zeros(bins)
        counts[0] = 1
    return StatHistogram("clustering", counts / counts.sum())


def _orbit_of_pattern(pattern: int) -> tuple[int, ...]:
    """Orbit index (0-based, orbits 4–14) of each of the 4 positions, −1 if disconnected."""
    adj = np.zeros((4, 4), dtype=np.int64)
    for bit, (u, v) in enumerate(_QUAD_PAIRS):
        if pattern >> bit & 1:
            adj[u, v] = adj[v, u] = 1
    degrees = adj.sum(axis=1)
    edges = int(degrees.sum() // 2)
    if edges < 3 or np.any(degrees == 0):
        return (-1,) * 4
    if edges == 3:
        star = degrees.max() == 3
        orbits = [(7 if d == 3 else 6) if star else (4 if d == 1 else 5) for d in degrees]
    elif edges == 4:
        if np.all(degrees == 2):
            orbits = [8] * 4
        else:
            orbits = [{1: 9, 2: 10, 3: 11}[int(d)] for d in degrees]
    elif edges == 5:
        orbits = [12 if d == 2 else 13 for d in degrees]
    else:
        orbits = [14] * 4
    return tuple(o - FIRST_ORBIT for o in orbits)


_ORBIT_TABLE = np.array([_orbit_of_pattern(p) for p in range(64)], dtype=np.int64)


def orbit_counts(g: Graph) -> np.ndarray:
    """(n, 11) per-node counts of connected 4-node graphlet orbits 4–14."""
    counts = np.zeros((g.n, NUM_ORBITS), dtype=np.int64)
    if g.n < 4:
        return counts
    adjacency = g.adjacency.astype(np.int64)
    quads = itertools.combinations(range(g.n), 4)
    while True:
        chunk = np.fromiter(itertools.chain.from_iterable(itertools.islice(quads, _QUAD_CHUNK)), dtype=np.int64)
        if chunk.size == 0:
            break
        chunk = chunk.reshape(-1, 4)
        pattern = np.zeros(len(chunk), dtype=np.int64)
        for bit, (i, j) in enumerate(_QUAD_PAIRS):
            pattern |= adjacency[chunk[:, i], chunk[:, j]] << bit
        orbits = _ORBIT_TABLE[pattern]
        keep = orbits[:, 0] >= 0
        np.add.at(counts, (chunk[keep].ravel(), orbits[keep].ravel()), 1)
    return counts


def orbit_hist(g: Graph) -> StatHistogram:
    """Normalized totals per orbit; the trailing bin holds all mass when no graphlet exists."""
    totals = orbit_counts(g).sum(axis=0).astype(np.float64)
    bins = np.append(totals, 0.0)
    if totals.sum() == 0:
        bins[-1] = 1.0
    return StatHistogram("orbit", bins / bins.sum())


def _pad(histograms: Sequence[StatHistogram], width: int) -> np.ndarray:
    return np.stack([np.pad(h.bins, (0, width - len(h.bins))) for h in histograms])


def mmd_tv(set_a: Sequence[StatHistogram], set_b: Sequence[StatHistogram], bandwidth: float = 1.0) -> float:
    """Biased squared MMD with k(x, y) = exp(−d_TV(x, y)² / (2δ²)), d_TV = ½Σ|x − y|."""
    if not set_a or not set_b:
        raise InvalidInputError("MMD needs two nonempty sets")
    kinds = {h.kind for h in set_a} | {h.kind for h in set_b}
    if len(kinds) != 1:
        raise InvalidInputError(f"cannot compare histogram kinds {sorted(kinds)}")
    if bandwidth <= 0:
        raise InvalidInputError("bandwidth must be positive")
    width = max(len(h.bins) for h in (*set_a, *set_b))
    a, b = _pad(set_a, width), _pad(set_b, width)

    def kernel_mean(x: np.ndarray, y: np.ndarray) -> float:
        tv = 0.5 * np.abs(x[:, None, :] - y[None, :, :]).sum(axis=-1)
        return float(np.exp(-(tv**2) / (2.0 * bandwidth**2)).mean())

    return max(kernel_mean(a, a) + kernel_mean(b, b) - 2.0 * kernel_mean(a, b), 0.0)


def _histograms(graphs: Sequence[Graph], kind: StatKind, cfg: EvalConfig) -> list[StatHistogram]:
    if kind == "degree":
        return [degree_hist(g) for g in graphs]
    if kind == "clustering":
        return Parallel(n_jobs=cfg.n_jobs)(delayed(clustering_hist)(g, cfg.clustering_bins) for g in graphs)
    return Parallel(n_jobs=cfg.n_jobs)(delayed(orbit_hist)(g) for g in graphs)


def mmd_report(
    generated: Sequence[Graph], reference: Sequence[Graph], cfg: Optional[EvalConfig] = None
) -> dict[str, float]:
    """Degree, clustering and orbit MMDs of a generated set against a reference set."""
    cfg = cfg or EvalConfig()
    report = {}
    for kind in ("degree", "clustering", "orbit"):
        report[f"{kind}_mmd"] = mmd_tv(_histograms(generated, kind, cfg), _histograms(reference, kind, cfg), cfg.bandwidth)
    logger.info("mmd report: %s", report)
    return report


# ------------------------------------------------------------------
# Isomorphism
# ------------------------------------------------------------------
def recall_isomorphic(
    generated: Sequence[Graph], training: Sequence[Graph], max_nodes: int = RECALL_MAX_NODES
) -> float:
    """Fraction of generated graphs isomorphic to at least one training graph."""
    largest = max((g.n for g in (*generated, *training)), default=0)
    if largest > max_nodes:
        raise UnsupportedSizeError(largest, max_nodes, "isomorphism recall")
    if not generated:
        return 0.0
    hits = sum(1 for g in generated if any(isomorphic(g, t) for t in training))
    return hits / len(generated)


def class_histogram(graphs: Sequence[Graph]) -> list[tuple[Graph, int]]:
    """Isomorphism classes of ``graphs`` as (first member, multiplicity), first-seen order."""
    graphs = list(graphs)
    return [(graphs[group[0]], len(group)) for group in isomorphism_classes(graphs)]


def class_distribution_pvalue(set_a: Sequence[Graph], set_b: Sequence[Graph]) -> float:
    """Chi-square homogeneity test of the isomorphism-class frequencies of two samples."""
    if not set_a or not set_b:
        raise InvalidInputError("class comparison needs two nonempty samples")
    groups = isomorphism_classes([*set_a, *set_b])
    if len(groups) < 2:
        return 1.0
    table = np.zeros((2, len(groups)), dtype=np.int64)
    for col, group in enumerate(groups):
        for index in group:
            table[int(index >= len(set_a)), col] += 1
    return float(chi2_contingency(table)[1])


# ------------------------------------------------------------------
# Molecules
# ------------------------------------------------------------------
def molecule_validity(g: Graph, valence_table: Mapping[int, int] = DEFAULT_VALENCE) -> bool:
    """Every atom's bond-order sum stays within its maximum valence; unknown atom types are invalid."""
    if g.node_attrs is None:
        raise InvalidInputError("molecule validity needs node (atom) types")
    orders = (g.edge_attrs if g.edge_attrs is not None else g.adjacency).astype(np.int64).sum(axis=1)
    for atom, order in zip(g.node_attrs.tolist(), orders.tolist()):
        limit = valence_table.get(int(atom))
        if limit is None or order > limit:
            return False
    return True


def uniqueness(graphs: Sequence[Graph], valence_table: Mapping[int, int] = DEFAULT_VALENCE) -> float:
    """Distinct isomorphism classes among valid graphs divided by the number of valid graphs."""
    valid = [g for g in graphs if molecule_validity(g, valence_table)]
    if not valid:
        return 0.0
    return len(class_histogram(valid)) / len(valid)


def molecule_report(graphs: Sequence[Graph], valence_table: Mapping[int, int] = DEFAULT_VALENCE) -> dict[str, float]:
    if not graphs:
        return {"validity": 0.0, "uniqueness": 0.0}
    valid = sum(molecule_validity(g, valence_table) for g in graphs)
    return {"validity": valid / len(graphs), "uniqueness": uniqueness(graphs, valence_table)}
