import itertools
import unittest
from collections import deque

import networkx as nx
import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from graphdistill.errors import GraphError
from graphdistill.graph import (
    BaParams,
    ErParams,
    Graph,
    connected_components,
    density,
    diameter,
    generate_ba,
    generate_er,
    is_connected,
    largest_component,
    permute,
)


def nx_fixture(nx_graph: nx.Graph) -> Graph:
    return Graph.from_networkx(nx_graph)


@st.composite
def graphs(draw, max_nodes=20):
    n = draw(st.integers(min_value=1, max_value=max_nodes))
    pairs = list(itertools.combinations(range(n), 2))
    chosen = draw(st.lists(st.sampled_from(pairs), unique=True)) if pairs else []
    return Graph.from_edges(n, chosen)


def brute_force_diameter(g: Graph) -> int:
    neighbours = {i: set() for i in range(g.node_count)}
    for i, j in g.edges:
        neighbours[i].add(j)
        neighbours[j].add(i)
    # largest component by size, ties to the one holding the smallest node
    seen = set()
    best = None
    for start in range(g.node_count):
        if start in seen:
            continue
        component = {start}
        queue = deque([start])
        while queue:
            node = queue.popleft()
            for other in neighbours[node]:
                if other not in component:
                    component.add(other)
                    queue.append(other)
        seen |= component
        if best is None or len(component) > len(best):
            best = component
    longest = 0
    for start in best:
        hops = {start: 0}
        queue = deque([start])
        while queue:
            node = queue.popleft()
            for other in neighbours[node]:
                if other not in hops:
                    hops[other] = hops[node] + 1
                    queue.append(other)
        longest = max(longest, max(hops.values()))
    return longest


class TestGraph(unittest.TestCase):
    def test_edges_normalized(self):
        g = Graph.from_edges(3, [(1, 0), (0, 1), (2, 1)])
        self.assertEqual(g.sorted_edges(), [(0, 1), (1, 2)])

    def test_fail_self_loop(self):
        with self.assertRaises(GraphError):
            Graph.from_edges(2, [(1, 1)])

    def test_fail_endpoint_out_of_range(self):
        with self.assertRaises(GraphError) as e:
            Graph.from_edges(2, [(0, 2)])
        self.assertIn("outside", str(e.exception))

    def test_networkx_round_trip(self):
        g = nx_fixture(nx.cycle_graph(5))
        self.assertEqual(Graph.from_networkx(g.to_networkx()), g)


class TestDensity(unittest.TestCase):
    def test_complete(self):
        self.assertEqual(density(nx_fixture(nx.complete_graph(4))), 1.0)

    def test_path(self):
        self.assertEqual(density(nx_fixture(nx.path_graph(4))), 0.5)

    def test_star(self):
        # star_graph(4) has a hub and 4 leaves
        self.assertEqual(density(nx_fixture(nx.star_graph(4))), 0.4)

    def test_fail_single_node(self):
        with self.assertRaises(GraphError):
            density(Graph(1))


class TestDiameter(unittest.TestCase):
    def test_complete(self):
        for n in range(2, 7):
            self.assertEqual(diameter(nx_fixture(nx.complete_graph(n))), 1)

    def test_path(self):
        self.assertEqual(diameter(nx_fixture(nx.path_graph(5))), 4)

    def test_cycle(self):
        self.assertEqual(diameter(nx_fixture(nx.cycle_graph(6))), 3)

    def test_single_node(self):
        self.assertEqual(diameter(Graph(1)), 0)

    def test_largest_component_only(self):
        # P4 on 0..3 plus a triangle on 4..6
        g = Graph.from_edges(7, [(0, 1), (1, 2), (2, 3), (4, 5), (5, 6), (4, 6)])
        self.assertEqual(diameter(g), 3)

    def test_component_tie_goes_to_smallest_node(self):
        # path 3..5 (diameter 2) and triangle 0..2 (diameter 1) tie on size
        g = Graph.from_edges(6, [(3, 4), (4, 5), (0, 1), (1, 2), (0, 2)])
        self.assertEqual(largest_component(g), {0, 1, 2})
        self.assertEqual(diameter(g), 1)

    @settings(max_examples=200, deadline=None)
    @given(graphs())
    def test_matches_brute_force(self, g):
        self.assertEqual(diameter(g), brute_force_diameter(g))
        if g.node_count >= 2:
            n = g.node_count
            pairs = sum(1 for i, j in itertools.combinations(range(n), 2) if (i, j) in g.edges)
            self.assertEqual(density(g), 2.0 * pairs / (n * (n - 1)))


class TestComponents(unittest.TestCase):
    def test_edgeless(self):
        self.assertEqual(connected_components(Graph(3)), [{0}, {1}, {2}])

    def test_path(self):
        self.assertEqual(connected_components(nx_fixture(nx.path_graph(3))), [{0, 1, 2}])

    def test_two_edges(self):
        g = Graph.from_edges(4, [(0, 1), (2, 3)])
        self.assertEqual(connected_components(g), [{0, 1}, {2, 3}])

    def test_is_connected(self):
        self.assertTrue(is_connected(Graph(1)))
        self.assertTrue(is_connected(nx_fixture(nx.path_graph(4))))
        self.assertFalse(is_connected(Graph.from_edges(4, [(0, 1), (2, 3)])))
        self.assertFalse(is_connected(Graph(0)))


class TestGenerators(unittest.TestCase):
    def test_er_forced_zero_probability(self):
        g = generate_er(ErParams(), np.random.default_rng(0), n=12, p=0.0)
        self.assertEqual(g.node_count, 12)
        self.assertEqual(g.edge_count, 0)

    def test_er_forced_full_probability(self):
        g = generate_er(ErParams(), np.random.default_rng(0), n=6, p=1.0)
        self.assertEqual(g.edge_count, 15)

    def test_er_mean_edge_count(self):
        rng = np.random.default_rng(2024)
        counts = np.array(
            [generate_er(ErParams(), rng, n=30, p=0.3).edge_count for _ in range(10_000)],
            dtype=np.float64,
        )
        stderr = counts.std(ddof=1) / np.sqrt(len(counts))
        self.assertLess(abs(counts.mean() - 435 * 0.3), 3 * stderr)

    def test_er_deterministic(self):
        a = generate_er(ErParams(), np.random.default_rng(42))
        b = generate_er(ErParams(), np.random.default_rng(42))
        self.assertEqual(a, b)

    def test_er_respects_minimum_size(self):
        params = ErParams(n_mean=1.0, n_std=0.0)
        g = generate_er(params, np.random.default_rng(3))
        self.assertEqual(g.node_count, params.n_min)

    def test_ba_edge_count(self):
        g = generate_ba(BaParams(), np.random.default_rng(0), n=10, k=2)
        self.assertEqual(g.edge_count, 1 + 8 * 2)

    def test_ba_clamped_to_complete_graph(self):
        # k is clamped to n - 1, so the last node attaches to the whole seed clique
        g = generate_ba(BaParams(k_max_offset=1), np.random.default_rng(0), n=5, k=9)
        self.assertEqual(g.edge_count, 10)
        self.assertEqual(density(g), 1.0)

    def test_ba_default_clamp(self):
        g = generate_ba(BaParams(), np.random.default_rng(0), n=8, k=20)
        # k = 8 - 3
        self.assertEqual(g.edge_count, 10 + 3 * 5)

    def test_ba_deterministic(self):
        a = generate_ba(BaParams(), np.random.default_rng(5))
        b = generate_ba(BaParams(), np.random.default_rng(5))
        self.assertEqual(a, b)

    def test_ba_connected(self):
        for seed in range(10):
            g = generate_ba(BaParams(), np.random.default_rng(seed))
            self.assertTrue(is_connected(g))

    def test_fail_invalid_params(self):
        with self.assertRaises(GraphError):
            ErParams(p_min=0.0)
        with self.assertRaises(GraphError):
            BaParams(k_min=0)


class TestPermute(unittest.TestCase):
    def test_identity(self):
        g = nx_fixture(nx.path_graph(4))
        self.assertEqual(permute(g, [0, 1, 2, 3]), g)

    def test_path_reversal(self):
        g = nx_fixture(nx.path_graph(3))
        self.assertEqual(permute(g, [2, 1, 0]), g)

    def test_fail_not_a_bijection(self):
        with self.assertRaises(GraphError):
            permute(Graph(3), [0, 0, 1])

    @settings(max_examples=100, deadline=None)
    @given(graphs(), st.randoms(use_true_random=False))
    def test_metrics_invariant(self, g, random):
        perm = list(range(g.node_count))
        random.shuffle(perm)
        h = permute(g, perm)
        self.assertEqual(h.edge_count, g.edge_count)
        self.assertEqual(diameter(h), diameter(g))
        if g.node_count >= 2:
            self.assertEqual(density(h), density(g))
