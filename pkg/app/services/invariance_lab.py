"""Finite distributions over adjacency matrices and the permutation checks built on them.

Weights are ``fractions.Fraction`` whenever every input weight is rational,
so the small-n identities hold with zero error; floats are accepted for Monte
Carlo frequencies.
"""

from __future__ import annotations

import itertools
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from fractions import Fraction
from types import MappingProxyType
from typing import Hashable, Iterable, Mapping, Sequence, Union

import numpy as np

from app.core.errors import InvalidInputError, UnsupportedSizeError
from app.services.graphs import (
    Graph,
    Permutation,
    automorphism_count,
    isomorphism_class,
    permutation_images,
    permute,
    uniform_random_permutation,
)

logger = logging.getLogger(__name__)

Weight = Union[Fraction, float]

CLOSEST_INVARIANT_MAX_NODES = 6
PERMUTED_SAMPLER_MAX_NODES = 6
SUPPORT_SEARCH_MAX_NODES = 4
_FLOAT_TOLERANCE = 1e-12


class DiracMixture:
    """Weighted finite set of atoms (graphs or opaque labels).

    Duplicate atoms are merged by summing their weights and zero-weight atoms
    are dropped, so two mixtures are equal exactly when they assign the same
    probability to every atom.
    """

    __slots__ = ("_probs",)

    def __init__(self, pairs: Iterable[tuple[Hashable, Weight]]) -> None:
        probs: dict[Hashable, Weight] = defaultdict(int)
        for atom, weight in pairs:
            if weight < 0:
                raise InvalidInputError(f"negative weight {weight} for atom {atom!r}")
            probs[atom] += weight
        probs = {atom: weight for atom, weight in probs.items() if weight != 0}
        if not probs:
            raise InvalidInputError("a mixture needs at least one atom with positive weight")
        total = sum(probs.values())
        if all(isinstance(w, (int, Fraction)) for w in probs.values()):
            if total != 1:
                raise InvalidInputError(f"weights sum to {total}, expected exactly 1")
        elif abs(total - 1.0) > _FLOAT_TOLERANCE:
            raise InvalidInputError(f"weights sum to {total}, expected 1")
        self._probs = MappingProxyType(probs)

    @classmethod
    def uniform(cls, atoms: Iterable[Hashable]) -> "DiracMixture":
        unique = list(dict.fromkeys(atoms))
        if not unique:
            raise InvalidInputError("cannot build a uniform mixture over no atoms")
        weight = Fraction(1, len(unique))
        return cls((atom, weight) for atom in unique)

    @classmethod
    def empirical(cls, atoms: Sequence[Hashable]) -> "DiracMixture":
        """Each listed item gets weight 1/len; repeated items accumulate."""
        if not atoms:
            raise InvalidInputError("cannot build an empirical mixture from no samples")
        weight = Fraction(1, len(atoms))
        return cls((atom, weight) for atom in atoms)

    @property
    def probs(self) -> Mapping[Hashable, Weight]:
        return self._probs

    @property
    def support(self) -> frozenset:
        return frozenset(self._probs)

    @property
    def exact(self) -> bool:
        return all(isinstance(w, (int, Fraction)) for w in self._probs.values())

    def __getitem__(self, atom: Hashable) -> Weight:
        return self._probs.get(atom, 0)

    def __len__(self) -> int:
        return len(self._probs)

    def __iter__(self):
        return iter(self._probs.items())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DiracMixture):
            return NotImplemented
        return dict(self._probs) == dict(other._probs)

    def __repr__(self) -> str:
        return f"DiracMixture(atoms={len(self._probs)})"


def total_variation(d1: DiracMixture, d2: DiracMixture, halved: bool = False) -> Weight:
    """Σ_a |d1(a) − d2(a)| over the union of supports (maximum 2).

    ``halved=True`` returns the conventional ½Σ|·| (maximum 1).
    """
    total = sum(abs(d1[atom] - d2[atom]) for atom in d1.support | d2.support)
    return total / 2 if halved else total


def _graph_atoms(mixture: DiracMixture) -> list[Graph]:
    atoms = list(mixture.support)
    if not all(isinstance(atom, Graph) for atom in atoms):
        raise InvalidInputError("this operation needs a mixture over graphs")
    sizes = {atom.n for atom in atoms}
    if len(sizes) != 1:
        raise InvalidInputError(f"all graphs must share one node count, got {sorted(sizes)}")
    return atoms


def l_permuted_distribution(train: Sequence[Graph], perms: Sequence[Permutation]) -> DiracMixture:
    """Uniform mixture over {P_j A_i P_jᵀ}; automorphic images merge into one atom."""
    if not train or not perms:
        raise InvalidInputError("need at least one training graph and one permutation")
    sizes = {g.n for g in train}
    if len(sizes) != 1:
        raise InvalidInputError(f"training graphs must share one node count, got {sorted(sizes)}")
    if len(set(perms)) != len(perms):
        raise InvalidInputError("permutations must be distinct")
    weight = Fraction(1, len(train) * len(perms))
    return DiracMixture((permute(g, p), weight) for g in train for p in perms)


def uniform_tv_formula(m: int, l: int) -> Fraction:
    """TV between a uniform law on m atoms and a uniform law on l ⊇ those atoms: 2(1 − m/l)."""
    if not 0 < m <= l:
        raise InvalidInputError(f"need 0 < m <= l, got m={m}, l={l}")
    return 2 * (1 - Fraction(m, l))


def closest_invariant_uniform(
    train: Sequence[Graph], max_nodes: int = CLOSEST_INVARIANT_MAX_NODES
) -> DiracMixture:
    """Uniform mixture over the union of the isomorphism classes of the training graphs."""
    if not train:
        raise InvalidInputError("need at least one training graph")
    n = max(g.n for g in train)
    if n > max_nodes:
        raise UnsupportedSizeError(n, max_nodes, "closest invariant distribution")
    support: set[Graph] = set()
    for g in set(train):
        support |= isomorphism_class(g, max_nodes=max_nodes)
    return DiracMixture.uniform(support)


@dataclass(frozen=True)
class ClosestInvariantCheck:
    m: int
    l: int
    tv: Fraction
    formula: Fraction

    @property
    def passed(self) -> bool:
        return self.tv == self.formula


def check_closest_invariant(train: Sequence[Graph]) -> ClosestInvariantCheck:
    """Compare TV(p*, p_data) with 2(1 − m/l) for a training set of distinct graphs."""
    distinct = list(dict.fromkeys(train))
    data = DiracMixture.uniform(distinct)
    closest = closest_invariant_uniform(distinct)
    tv = total_variation(closest, data)
    return ClosestInvariantCheck(len(distinct), len(closest), tv, uniform_tv_formula(len(distinct), len(closest)))


def all_graph_classes(n: int) -> list[frozenset[Graph]]:
    """Isomorphism classes partitioning all 2^(n(n−1)/2) unlabeled-attribute graphs on n nodes."""
    if n > SUPPORT_SEARCH_MAX_NODES:
        raise UnsupportedSizeError(n, SUPPORT_SEARCH_MAX_NODES, "graph class enumeration")
    pairs = list(itertools.combinations(range(n), 2))
    remaining: set[Graph] = set()
    for bits in itertools.product((0, 1), repeat=len(pairs)):
        remaining.add(Graph.from_edges(n, [pair for pair, bit in zip(pairs, bits) if bit]))
    classes = []
    while remaining:
        members = isomorphism_class(next(iter(remaining)))
        classes.append(members)
        remaining -= members
    return classes


def best_uniform_invariant_support(train: Sequence[Graph]) -> tuple[DiracMixture, Fraction]:
    """Exhaustive minimizer of TV(q, p_data) over uniform invariant q whose support contains the data.

    Invariant uniform supports are unions of whole isomorphism classes; every
    superset of the classes hit by ``train`` is evaluated.
    """
    distinct = list(dict.fromkeys(train))
    if not distinct:
        raise InvalidInputError("need at least one training graph")
    if any(g.node_attrs is not None or g.edge_attrs is not None for g in distinct):
        raise InvalidInputError("support search covers plain graphs only")
    n = distinct[0].n
    data = DiracMixture.uniform(distinct)
    classes = all_graph_classes(n)
    required = [c for c in classes if any(g in c for g in distinct)]
    optional = [c for c in classes if c not in required]
    base = frozenset().union(*required)
    logger.debug("support search over %d optional classes", len(optional))

    best: tuple[DiracMixture, Fraction] | None = None
    for k in range(len(optional) + 1):
        for extra in itertools.combinations(optional, k):
            candidate = DiracMixture.uniform(base.union(*extra))
            tv = total_variation(candidate, data)
            if best is None or tv < best[1]:
                best = (candidate, tv)
    assert best is not None
    return best


# ------------------------------------------------------------------
# Sampling under a uniform random permutation
# ------------------------------------------------------------------
def permuted_sampler_distribution(
    base: DiracMixture, max_nodes: int = PERMUTED_SAMPLER_MAX_NODES
) -> DiracMixture:
    """Law of P_r·A·P_rᵀ with A ~ base and P_r ~ Unif(S_n), by enumeration over S_n."""
    atoms = _graph_atoms(base)
    n = atoms[0].n
    if n > max_nodes:
        raise UnsupportedSizeError(n, max_nodes, "permuted sampler enumeration")
    factorial = math.factorial(n)
    pairs = []
    for atom in atoms:
        weight = base[atom]
        for image, count in permutation_images(atom, max_nodes=max_nodes):
            share = Fraction(count, factorial) if base.exact else count / factorial
            pairs.append((image, weight * share))
    return DiracMixture(pairs)


def permuted_sampler_closed_form(
    base: DiracMixture, max_nodes: int = PERMUTED_SAMPLER_MAX_NODES
) -> DiracMixture:
    """q(A_r) = Aut(A_r)/n! · Σ_{A ∈ class(A_r)} p(A), evaluated on every reachable A_r."""
    atoms = _graph_atoms(base)
    n = atoms[0].n
    if n > max_nodes:
        raise UnsupportedSizeError(n, max_nodes, "permuted sampler closed form")
    factorial = math.factorial(n)
    pairs = []
    seen: set[Graph] = set()
    for atom in atoms:
        if atom in seen:
            continue
        members = isomorphism_class(atom, max_nodes=max_nodes)
        seen |= members
        mass = sum(base[member] for member in members)
        aut = automorphism_count(atom)
        share = Fraction(aut, factorial) if base.exact else aut / factorial
        pairs.extend((member, share * mass) for member in members)
    return DiracMixture(pairs)


def is_permutation_invariant(d: DiracMixture, max_nodes: int = PERMUTED_SAMPLER_MAX_NODES) -> bool:
    """True iff d(A) = d(P·A·Pᵀ) for every atom A and every P in S_n."""
    for atom in _graph_atoms(d):
        weight = d[atom]
        for image, _ in permutation_images(atom, max_nodes=max_nodes):
            if d[image] != weight:
                return False
    return True


def monte_carlo_permuted(base: DiracMixture, draws: int, rng: np.random.Generator) -> DiracMixture:
    """Empirical frequencies of P_r·A·P_rᵀ over ``draws`` samples."""
    if draws < 1:
        raise InvalidInputError("draws must be positive")
    atoms = _graph_atoms(base)
    probs = np.asarray([float(base[a]) for a in atoms])
    picks = rng.choice(len(atoms), size=draws, p=probs / probs.sum())
    counts: Counter[Graph] = Counter()
    for index in picks:
        atom = atoms[index]
        counts[permute(atom, uniform_random_permutation(atom.n, rng))] += 1
    return DiracMixture((g, c / draws) for g, c in counts.items())


def random_base_distribution(n: int, atoms: int, rng: np.random.Generator) -> DiracMixture:
    """Random rational mixture over ``atoms`` random graphs on n nodes."""
    graphs = []
    for _ in range(atoms):
        upper = np.triu(rng.integers(0, 2, size=(n, n)), k=1)
        graphs.append(Graph(upper + upper.T))
    raw = rng.integers(1, 10, size=len(graphs))
    total = int(raw.sum())
    return DiracMixture((g, Fraction(int(w), total)) for g, w in zip(graphs, raw))


# ------------------------------------------------------------------
# Counterexamples over opaque atoms
# ------------------------------------------------------------------
@dataclass(frozen=True)
class AtomUniverse:
    """Opaque labels A1..A32 with a 24-atom class ``a`` and a 6-atom class ``b``.

    The closest invariant law p* is uniform on all 32 labels, the class sizes
    are the declared 24 and 6 so that 24ρ_a + 6ρ_b = 1.
    """

    size: int = 32
    class_a: tuple[str, ...] = tuple(f"A{i}" for i in range(1, 25))
    class_b: tuple[str, ...] = tuple(f"A{i}" for i in range(25, 31))

    @property
    def atoms(self) -> tuple[str, ...]:
        return tuple(f"A{i}" for i in range(1, self.size + 1))

    def closest(self) -> DiracMixture:
        return DiracMixture.uniform(self.atoms)

    def class_mixture(self, rho_a: Fraction) -> DiracMixture:
        """Invariant, non-uniform law: ρ_a on each class-a atom, ρ_b = (1 − 24ρ_a)/6 on class b."""
        rho_b = (1 - len(self.class_a) * rho_a) / len(self.class_b)
        pairs = [(atom, rho_a) for atom in self.class_a] + [(atom, rho_b) for atom in self.class_b]
        return DiracMixture(pairs)

    def uniform_b(self) -> DiracMixture:
        return DiracMixture.uniform(self.class_b)


@dataclass(frozen=True)
class CounterexampleCase:
    name: str
    tv_star: Fraction
    tv_alternative: Fraction
    rho_a: Fraction | None = None
    intercept: Fraction | None = None
    slope: Fraction | None = None

    @property
    def slack(self) -> Fraction | None:
        """TV* minus the ρ-free part of TV(q_α); the bound on slope·ρ_a."""
        if self.intercept is None:
            return None
        return self.tv_star - self.intercept

    @property
    def rho_threshold(self) -> Fraction | None:
        """Largest ρ_a (exclusive) for which TV(q_α) stays below TV*."""
        if self.slope is None or self.slack is None:
            return None
        return self.slack / self.slope

    @property
    def beats_closest(self) -> bool:
        return self.tv_alternative < self.tv_star


def _linear_in_rho(universe: AtomUniverse, data: DiracMixture) -> tuple[Fraction, Fraction]:
    """TV(q_α(ρ_a), p_data) is affine for small ρ_a; recover intercept and slope from two points."""
    r1, r2 = Fraction(1, 96), Fraction(1, 48)
    t1 = total_variation(universe.class_mixture(r1), data)
    t2 = total_variation(universe.class_mixture(r2), data)
    slope = (t2 - t1) / (r2 - r1)
    return t1 - slope * r1, slope


def counterexample_cases(universe: AtomUniverse | None = None) -> list[CounterexampleCase]:
    """Four training sets on which p* is not the TV minimizer among invariant laws.

    Cases 1 and 2 use invariant laws that are not uniform on their support,
    cases 3 and 4 use the uniform law on class ``b`` whose support misses part
    of the data.
    """
    universe = universe or AtomUniverse()
    three = DiracMixture.uniform(["A23", "A24", "A25"])
    two = DiracMixture.uniform(["A24", "A25"])
    rho_a = Fraction(1, 48)
    closest = universe.closest()

    cases = []
    for name, data in (("case1", three), ("case2", two)):
        intercept, slope = _linear_in_rho(universe, data)
        cases.append(
            CounterexampleCase(
                name=name,
                tv_star=total_variation(closest, data),
                tv_alternative=total_variation(universe.class_mixture(rho_a), data),
                rho_a=rho_a,
                intercept=intercept,
                slope=slope,
            )
        )
    for name, data in (("case3", three), ("case4", two)):
        cases.append(
            CounterexampleCase(
                name=name,
                tv_star=total_variation(closest, data),
                tv_alternative=total_variation(universe.uniform_b(), data),
            )
        )
    return cases


def check_permuted_sampler(base: DiracMixture) -> dict[str, bool]:
    """Invariance, closed-form agreement and idempotence of the permuted sampler on one base law."""
    enumerated = permuted_sampler_distribution(base)
    return {
        "invariant": is_permutation_invariant(enumerated),
        "closed_form": enumerated == permuted_sampler_closed_form(base),
        "idempotent": permuted_sampler_distribution(enumerated) == enumerated,
    }
