import networkx as nx
import numpy as np
import pytest

from app.core.config import DatasetSpec
from app.core.errors import GraphParseError, InvalidInputError
from app.services.datasets import (
    default_p_inter,
    filter_by_size,
    fixed_permutations,
    format_edge_list,
    from_networkx,
    generate_community_small,
    generate_grid,
    generate_regular_toy,
    load_dataset,
    load_edge_list,
    permutation_augment,
    save_edge_list,
    split,
    to_networkx,
)
from app.services.graphs import Graph, Permutation, isomorphic


# ------------------------------------------------------------------
# Generators
# ------------------------------------------------------------------
def test_fixed_size_grid(rng):
    (g,) = generate_grid((3, 3), (4, 4), 1, rng)
    assert g.n == 12
    assert g.num_edges == 3 * 3 + 2 * 4
    assert isomorphic(g, from_networkx(nx.grid_2d_graph(3, 4)))


def test_grid_sizes_stay_in_range(rng):
    graphs = generate_grid((10, 19), (10, 19), 30, rng)
    assert all(100 <= g.n <= 361 for g in graphs)
    for g in graphs:
        degrees = set(g.degrees().tolist())
        assert degrees <= {2, 3, 4}


def test_grid_rejects_empty_range(rng):
    with pytest.raises(InvalidInputError):
        generate_grid((5, 4), (2, 3), 1, rng)


def test_community_blocks_are_cliques_at_full_intra(rng):
    graphs = generate_community_small(5, rng, p_intra=1.0, p_inter=0.0)
    for g in graphs:
        half = g.n // 2
        assert g.n % 2 == 0 and 12 <= g.n <= 20
        assert g.num_edges == 2 * half * (half - 1) // 2
        assert not g.adjacency[:half, half:].any()


def test_grids_are_connected_and_bipartite(rng):
    for g in generate_grid((1, 8), (2, 8), 40, rng):
        graph = to_networkx(g)
        assert nx.is_connected(graph)
        assert nx.is_bipartite(graph)


def test_community_block_densities(rng):
    intra_edges = intra_pairs = inter_edges = inter_pairs = 0
    for g in generate_community_small(300, rng, p_intra=0.7, p_inter=0.1):
        half = g.n // 2
        adjacency = g.adjacency.astype(bool)
        intra_edges += np.triu(adjacency[:half, :half], 1).sum() + np.triu(adjacency[half:, half:], 1).sum()
        intra_pairs += 2 * half * (half - 1) // 2
        inter_edges += adjacency[:half, half:].sum()
        inter_pairs += half * half
    assert intra_edges / intra_pairs == pytest.approx(0.7, abs=0.02)
    assert inter_edges / inter_pairs == pytest.approx(0.1, abs=0.02)


def test_community_without_edges(rng):
    graphs = generate_community_small(3, rng, p_intra=0.0, p_inter=0.0)
    assert all(g.num_edges == 0 for g in graphs)


def test_community_rejects_bad_probability(rng):
    with pytest.raises(InvalidInputError):
        generate_community_small(1, rng, p_intra=1.5)


def test_default_inter_probability():
    assert default_p_inter(20) == pytest.approx(0.05 * 20 / 100)


def test_regular_toy(rng):
    graphs = generate_regular_toy(rng)
    assert len(graphs) == 10
    assert [int(g.degrees()[0]) for g in graphs] == list(range(2, 12))
    for g in graphs:
        assert g.n == 16
        assert len(set(g.degrees().tolist())) == 1


def test_regular_toy_rejects_too_many(rng):
    with pytest.raises(InvalidInputError):
        generate_regular_toy(rng, count=11)


def test_networkx_roundtrip(cycle4):
    assert from_networkx(to_networkx(cycle4)) == cycle4


# ------------------------------------------------------------------
# Edge-list files
# ------------------------------------------------------------------
def test_edge_list_format(path3):
    assert format_edge_list([path3, Graph.empty(2)]) == "n 3\n0 1\n1 2\nn 2\n"


def test_edge_list_roundtrip_with_labels(tmp_path):
    labelled = Graph.from_edges(3, [(0, 1, 2), (1, 2, 1)], node_attrs=[1, 0, 3])
    path = save_edge_list([labelled], tmp_path / "graphs.txt")
    assert (tmp_path / "graphs.txt.nodes").read_text() == "n 3\n0 1\n1 0\n2 3\n"
    assert load_edge_list(path) == [labelled]


def test_edge_list_skips_comments(tmp_path):
    path = tmp_path / "g.txt"
    path.write_text("# two graphs\nn 2\n0 1\n\nn 3\n1 2\n")
    assert load_edge_list(path) == [Graph.from_edges(2, [(0, 1)]), Graph.from_edges(3, [(1, 2)])]


@pytest.mark.parametrize(
    "text, line",
    [
        ("0 1\n", 1),
        ("n 3\n0 1\n0 x\n", 3),
        ("n 3\n0 3\n", 2),
        ("n 3\n1 1\n", 2),
        ("n three\n", 1),
        ("n 3\n0 1 0\n", 2),
        ("n 3\n0 1 2 3\n", 2),
    ],
)
def test_edge_list_errors_carry_line_numbers(tmp_path, text, line):
    path = tmp_path / "bad.txt"
    path.write_text(text)
    with pytest.raises(GraphParseError) as info:
        load_edge_list(path)
    assert info.value.line_number == line


def test_missing_edge_list(tmp_path):
    with pytest.raises(InvalidInputError):
        load_edge_list(tmp_path / "nope.txt")


def test_filter_by_size(path3, cycle4):
    assert filter_by_size([path3, cycle4], 4, 10) == [cycle4]


# ------------------------------------------------------------------
# Split and augmentation
# ------------------------------------------------------------------
def test_split_ratio_and_seed(rng):
    graphs = [Graph.from_edges(n, [(0, 1)]) for n in range(2, 102)]
    train, test = split(graphs, 0.8, seed=3)
    assert len(train) == 80 and len(test) == 20
    assert set(train).isdisjoint(test)
    assert split(graphs, 0.8, seed=3) == (train, test)


def test_split_everything_for_training(path3):
    assert split([path3], 0.8, 0) == ([path3], [])
    with pytest.raises(InvalidInputError):
        split([path3], 0.0, 0)


def test_fixed_permutations(rng):
    perms = fixed_permutations(4, 5, rng)
    assert perms[0] == Permutation.identity(4)
    assert len(set(perms)) == 5
    with pytest.raises(InvalidInputError):
        fixed_permutations(3, 7, rng)


def test_permutation_augment(path4, cycle4, rng):
    augmented = permutation_augment([path4, cycle4], 3, rng)
    assert len(augmented) == 6
    assert augmented[0] == path4 and augmented[3] == cycle4
    assert all(isomorphic(g, path4) for g in augmented[:3])
    assert permutation_augment([path4], 1, rng) == [path4]


def test_load_dataset_is_seeded():
    spec = DatasetSpec(kind="grid", count=5, rows_min=2, rows_max=4, cols_min=2, cols_max=4, seed=9)
    assert load_dataset(spec) == load_dataset(spec)


def test_load_dataset_from_file(tmp_path, path3, cycle4):
    path = save_edge_list([path3, cycle4], tmp_path / "g.txt")
    spec = DatasetSpec(kind="edge-list", path=path, min_nodes=4, max_nodes=4)
    assert load_dataset(spec) == [cycle4]
