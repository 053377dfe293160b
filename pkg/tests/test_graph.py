import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import fixture_graph
from ppacdc.graph import (
    GraphFormatError,
    build_digraph,
    complete_graph,
    cycle_graph,
    diameter,
    format_graph,
    is_strongly_connected,
    parse_graph,
    pull_weights,
    push_weights,
    random_strongly_connected,
)
from ppacdc.rng import SplitMix64, uniform_vector


def floyd_warshall(g):
    """All-pairs shortest hop counts, written independently of the BFS code."""
    inf = float("inf")
    d = [[0 if i == j else inf for j in range(g.n)] for i in range(g.n)]
    for u, v in g.edges:
        d[u][v] = 1
    for k, i, j in itertools.product(range(g.n), repeat=3):
        if d[i][k] + d[k][j] < d[i][j]:
            d[i][j] = d[i][k] + d[k][j]
    return d


# -- prng ------------------------------------------------------------------------


def test_splitmix64_reference_vectors():
    # published outputs of the reference C implementation
    rng = SplitMix64(1234567)
    assert [rng.next_u64() for _ in range(5)] == [
        6457827717110365317,
        3203168211198807973,
        9817491932198370423,
        4593380528125082431,
        16408922859458223821,
    ]
    assert SplitMix64(0).next_u64() == 0xE220A8397B1DCDAF


def test_uniform_draws_use_top_53_bits():
    raw = SplitMix64(42).next_u64()
    assert SplitMix64(42).uniform() == (raw >> 11) / 2.0**53
    vals = uniform_vector(9, 1000, 0.0, 1000.0)
    assert min(vals) >= 0.0 and max(vals) < 1000.0
    assert vals == uniform_vector(9, 1000, 0.0, 1000.0)


def test_below_rejects_empty_range():
    with pytest.raises(ValueError):
        SplitMix64(1).below(0)


# -- construction ----------------------------------------------------------------


def test_two_node_bidirectional():
    g = build_digraph(2, [(0, 1), (1, 0)])
    assert g.m == 2
    assert g.in_adj == ((1,), (0,))
    assert g.out_adj == ((1,), (0,))


def test_three_ring():
    g = build_digraph(3, [(0, 1), (1, 2), (2, 0)])
    assert g.m == 3
    assert is_strongly_connected(g)
    assert diameter(g) == 2


@pytest.mark.parametrize(
    "n, edges",
    [
        (2, [(0, 0)]),  # self-loop
        (2, [(0, 2)]),  # out of range
        (2, [(-1, 0)]),
        (3, [(0, 1), (0, 1)]),  # duplicate
        (1, []),
    ],
)
def test_build_digraph_rejects_malformed_input(n, edges):
    with pytest.raises(ValueError):
        build_digraph(n, edges)


def test_adjacency_consistent_with_edges():
    g = random_strongly_connected(12, 0.3, 5)
    outs = sorted((u, v) for u in range(g.n) for v in g.out_adj[u])
    ins = sorted((u, v) for v in range(g.n) for u in g.in_adj[v])
    assert outs == ins == sorted(g.edges)


# -- connectivity and diameter -----------------------------------------------------


def test_one_way_pair_is_not_strongly_connected():
    assert not is_strongly_connected(build_digraph(2, [(0, 1)]))


def test_two_rings_joined_one_way():
    g = build_digraph(5, [(0, 1), (1, 0), (2, 3), (3, 4), (4, 2), (1, 2)])
    d = floyd_warshall(g)
    brute = all(d[i][j] < float("inf") for i in range(5) for j in range(5))
    assert is_strongly_connected(g) is brute is False
    with pytest.raises(ValueError):
        diameter(g)


def test_diameter_small_cases():
    assert diameter(build_digraph(2, [(0, 1), (1, 0)])) == 1
    assert diameter(cycle_graph(7)) == 6
    assert diameter(complete_graph(6)) == 1


@pytest.mark.parametrize("name", ["rand5", "rand20", "cycle5", "two_node"])
def test_diameter_matches_floyd_warshall_on_fixtures(name):
    g = fixture_graph(name)
    d = floyd_warshall(g)
    assert diameter(g) == max(max(row) for row in d)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 14), st.floats(0.0, 1.0), st.integers(0, 2**64 - 1))
def test_diameter_oracle_and_bound(n, prob, seed):
    g = random_strongly_connected(n, prob, seed)
    assert diameter(g) == max(max(row) for row in floyd_warshall(g))
    assert diameter(g) <= n - 1


# -- weights ---------------------------------------------------------------------


def test_weights_three_ring():
    g = cycle_graph(3)
    R, C = pull_weights(g), push_weights(g)
    for M in (R, C):
        assert np.all((M == 0.5) | (M == 0.0))
    assert np.all((R > 0).sum(axis=1) == 2)
    assert np.all((C > 0).sum(axis=0) == 2)


def test_weights_two_node():
    g = build_digraph(2, [(0, 1), (1, 0)])
    np.testing.assert_array_equal(pull_weights(g), np.full((2, 2), 0.5))
    np.testing.assert_array_equal(push_weights(g), np.full((2, 2), 0.5))


def test_pull_weights_star_receiver():
    g = build_digraph(5, [(i, 0) for i in range(1, 5)] + [(0, i) for i in range(1, 5)])
    R = pull_weights(g)
    np.testing.assert_array_equal(R[0], np.full(5, 0.2))
    assert R[0, 0] == 1 / (1 + g.in_degree(0))


def test_push_weights_out_degree_three():
    g = build_digraph(4, [(0, 1), (0, 2), (0, 3), (1, 0), (2, 0), (3, 0)])
    C = push_weights(g)
    np.testing.assert_array_equal(C[:, 0], np.full(4, 0.25))


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 20), st.floats(0.0, 1.0), st.integers(0, 2**64 - 1))
def test_weights_are_stochastic_with_graph_support(n, prob, seed):
    g = random_strongly_connected(n, prob, seed)
    R, C = pull_weights(g), push_weights(g)
    assert np.max(np.abs(R.sum(axis=1) - 1)) <= 1e-12
    assert np.max(np.abs(C.sum(axis=0) - 1)) <= 1e-12
    support = np.eye(n, dtype=bool)
    for u, v in g.edges:
        support[v, u] = True  # v receives from u
    np.testing.assert_array_equal(R > 0, support)
    np.testing.assert_array_equal(C > 0, support)


# -- generator -------------------------------------------------------------------


def test_generator_extremes():
    ring = random_strongly_connected(5, 0.0, 123)
    assert ring.m == 5 and diameter(ring) == 4
    full = random_strongly_connected(5, 1.0, 123)
    assert full == complete_graph(5) and diameter(full) == 1


def test_generator_n20_seed7_connected():
    assert is_strongly_connected(random_strongly_connected(20, 0.1, 7))


def test_generator_strongly_connected_over_500_seeds():
    for seed in range(500):
        n = 2 + seed % 19
        g = random_strongly_connected(n, (seed % 7) / 10, seed)
        assert is_strongly_connected(g), seed


def test_generator_is_deterministic():
    a = random_strongly_connected(15, 0.25, 2024)
    b = random_strongly_connected(15, 0.25, 2024)
    assert a.edges == b.edges
    assert a != random_strongly_connected(15, 0.25, 2025)


def test_generator_extra_edges_nested_in_probability():
    # one draw per pair regardless of prob, so a higher prob only adds edges
    lo = set(random_strongly_connected(10, 0.2, 77).edges)
    hi = set(random_strongly_connected(10, 0.6, 77).edges)
    assert lo <= hi


# -- text format -----------------------------------------------------------------


def test_format_roundtrip():
    g = random_strongly_connected(9, 0.3, 1)
    assert parse_graph(format_graph(g, "round trip\nsecond comment")) == g


def test_fixture_files_load():
    g = fixture_graph("cycle5")
    assert g == cycle_graph(5)


@pytest.mark.parametrize(
    "text, lineno",
    [
        ("3 2\n0 1\n1 x\n", 3),
        ("# c\n3 1\n0 0\n", 3),
        ("2 1\n0 5\n", 2),
        ("2 2\n0 1\n0 1\n", 3),
        ("2 1 7\n", 1),
        ("1 0\n", 1),
    ],
)
def test_parse_errors_carry_line_numbers(text, lineno):
    with pytest.raises(GraphFormatError, match=f"line {lineno}"):
        parse_graph(text)


def test_parse_edge_count_mismatch_and_missing_header():
    with pytest.raises(GraphFormatError, match="announces 3"):
        parse_graph("3 3\n0 1\n1 2\n")
    with pytest.raises(GraphFormatError, match="header"):
        parse_graph("# only a comment\n")


def test_relabel_preserves_structure():
    g = random_strongly_connected(8, 0.2, 3)
    perm = [3, 7, 0, 5, 1, 6, 2, 4]
    h = g.relabel(perm)
    assert h.m == g.m and diameter(h) == diameter(g)
    assert sorted(h.in_degree(perm[i]) for i in range(8)) == sorted(g.in_degree(i) for i in range(8))
