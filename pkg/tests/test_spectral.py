import math
import unittest

import networkx as nx
import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from graphdistill.errors import ConfigError, SpectralError
from graphdistill.graph import BaParams, ErParams, Graph, generate_ba, generate_er, permute
from graphdistill.spectral import (
    HksConfig,
    eig_sym,
    featurize,
    heat_kernel_signature,
    hks_histogram,
    laplacian,
)


def random_graph(seed: int) -> Graph:
    rng = np.random.default_rng(seed)
    if seed % 2:
        return generate_ba(BaParams(n_mean=15.0, n_std=6.0), rng, n=int(rng.integers(5, 31)))
    return generate_er(ErParams(n_mean=15.0, n_std=6.0), rng, n=int(rng.integers(1, 31)))


class TestLaplacian(unittest.TestCase):
    def test_k2(self):
        g = Graph.from_edges(2, [(0, 1)])
        np.testing.assert_array_equal(laplacian(g), [[1, -1], [-1, 1]])

    def test_p3(self):
        g = Graph.from_networkx(nx.path_graph(3))
        np.testing.assert_array_equal(laplacian(g), [[1, -1, 0], [-1, 2, -1], [0, -1, 1]])

    def test_edgeless(self):
        np.testing.assert_array_equal(laplacian(Graph(3)), np.zeros((3, 3)))


class TestEigSym(unittest.TestCase):
    def test_k2(self):
        d = eig_sym(laplacian(Graph.from_edges(2, [(0, 1)])))
        np.testing.assert_allclose(d.eigenvalues, [0.0, 2.0], atol=1e-12)

    def test_p3(self):
        d = eig_sym(laplacian(Graph.from_networkx(nx.path_graph(3))))
        np.testing.assert_allclose(d.eigenvalues, [0.0, 1.0, 3.0], atol=1e-10)

    def test_path_closed_form(self):
        n = 7
        d = eig_sym(laplacian(Graph.from_networkx(nx.path_graph(n))))
        expected = sorted(2 - 2 * math.cos(k * math.pi / n) for k in range(n))
        np.testing.assert_allclose(d.eigenvalues, expected, atol=1e-10)

    def test_connected_kernel_is_constant(self):
        g = Graph.from_networkx(nx.cycle_graph(6))
        d = eig_sym(laplacian(g))
        self.assertLess(abs(d.eigenvalues[0]), 1e-10)
        self.assertGreater(d.eigenvalues[1], 1e-6)
        np.testing.assert_allclose(np.abs(d.eigenvectors[:, 0]), 1 / math.sqrt(6), atol=1e-10)

    def test_fail_not_symmetric(self):
        with self.assertRaises(SpectralError) as e:
            eig_sym(np.array([[0.0, 1.0], [0.0, 0.0]]))
        self.assertIn("asymmetry", str(e.exception))

    def test_fail_not_square(self):
        with self.assertRaises(SpectralError):
            eig_sym(np.zeros((2, 3)))

    def test_residual_contract(self):
        for seed in range(200):
            m = laplacian(random_graph(seed))
            d = eig_sym(m)
            scale = max(1.0, float(np.max(np.abs(m).sum(axis=1))))
            residual = np.abs(m @ d.eigenvectors - d.eigenvectors * d.eigenvalues)
            self.assertLessEqual(float(residual.max()), 1e-8 * scale)
            n = m.shape[0]
            np.testing.assert_allclose(d.eigenvectors.T @ d.eigenvectors, np.eye(n), atol=1e-8)
            self.assertTrue(np.all(np.diff(d.eigenvalues) >= 0))


class TestHeatKernelSignature(unittest.TestCase):
    def test_single_node(self):
        cfg = HksConfig(num_steps=8)
        h = heat_kernel_signature(Graph(1), cfg)
        np.testing.assert_array_equal(h, np.ones((1, 8)))

    def test_k2_closed_form(self):
        cfg = HksConfig()
        g = Graph.from_edges(2, [(0, 1)])
        h = heat_kernel_signature(g, cfg)
        expected = (1 + np.exp(-2 * cfg.time_samples())) / 2
        np.testing.assert_allclose(h[0], expected, rtol=0, atol=1e-12)
        np.testing.assert_allclose(h[1], expected, rtol=0, atol=1e-12)

    def test_k2_at_one(self):
        h = heat_kernel_signature(Graph.from_edges(2, [(0, 1)]), HksConfig(), times=[1.0])
        self.assertAlmostEqual(float(h[0, 0]), (1 + math.exp(-2)) / 2, places=12)

    def test_p3_short_time_top_bin(self):
        cfg = HksConfig(num_bins=2, num_steps=2)
        p3 = Graph.from_networkx(nx.path_graph(3))
        h = heat_kernel_signature(p3, cfg, times=[0.01, 0.01])
        self.assertTrue(np.all(h > 0.97))
        np.testing.assert_allclose(hks_histogram(h, cfg)[:, 0], [0.0, 1.0], atol=1e-12)

    def test_trace_at_time_zero(self):
        for seed in range(20):
            g = random_graph(seed)
            h = heat_kernel_signature(g, HksConfig(), times=[0.0])
            self.assertAlmostEqual(float(h[:, 0].sum()), g.node_count, places=9)

    def test_heat_trace(self):
        cfg = HksConfig()
        for seed in range(200):
            g = random_graph(seed)
            h = heat_kernel_signature(g, cfg)
            eigenvalues = np.clip(eig_sym(laplacian(g)).eigenvalues, 0.0, None)
            trace = np.exp(-np.outer(eigenvalues, cfg.time_samples())).sum(axis=0)
            np.testing.assert_allclose(h.sum(axis=0), trace, rtol=0, atol=1e-8)
            self.assertTrue(np.all(h > 0.0))
            self.assertTrue(np.all(h <= 1.0 + 1e-12))

    def test_monotone_and_limit(self):
        g = Graph.from_networkx(nx.path_graph(5))
        h = heat_kernel_signature(g, HksConfig())
        self.assertTrue(np.all(np.diff(h, axis=1) <= 1e-12))
        limit = heat_kernel_signature(g, HksConfig(), times=[1e6])
        np.testing.assert_allclose(limit[:, 0], 1 / 5, atol=1e-6)

    def test_fail_empty_graph(self):
        with self.assertRaises(SpectralError):
            heat_kernel_signature(Graph(0), HksConfig())


class TestHistogram(unittest.TestCase):
    def test_vertex_transitive(self):
        cfg = HksConfig(num_bins=16, num_steps=8)
        histogram = featurize(Graph.from_networkx(nx.complete_graph(5)), cfg)
        self.assertEqual(histogram.shape, (16, 8))
        for column in histogram.T:
            self.assertEqual(int(np.count_nonzero(column)), 1)
            self.assertAlmostEqual(float(column.sum()), 1.0, places=12)

    def test_single_node_top_bin(self):
        cfg = HksConfig(num_bins=8, num_steps=4)
        histogram = featurize(Graph(1), cfg)
        np.testing.assert_array_equal(histogram[-1], np.ones(4))
        np.testing.assert_array_equal(histogram[:-1], np.zeros((7, 4)))

    def test_columns_sum_to_one(self):
        cfg = HksConfig()
        for seed in range(20):
            histogram = featurize(random_graph(seed), cfg)
            np.testing.assert_allclose(histogram.sum(axis=0), 1.0, atol=1e-12)

    def test_fail_out_of_range(self):
        cfg = HksConfig(num_steps=2)
        with self.assertRaises(SpectralError):
            hks_histogram(np.array([[0.5, 1.1]]), cfg)

    def test_fail_wrong_width(self):
        with self.assertRaises(SpectralError):
            hks_histogram(np.full((3, 5), 0.5), HksConfig(num_steps=4))

    @settings(max_examples=200, deadline=None)
    @given(st.integers(min_value=0, max_value=10_000), st.randoms(use_true_random=False))
    def test_isomorphism_invariance(self, seed, random):
        cfg = HksConfig()
        g = random_graph(seed)
        base = featurize(g, cfg)
        for _ in range(5):
            perm = list(range(g.node_count))
            random.shuffle(perm)
            np.testing.assert_allclose(featurize(permute(g, perm), cfg), base, rtol=0, atol=1e-10)


class TestHksConfig(unittest.TestCase):
    def test_defaults(self):
        cfg = HksConfig()
        self.assertEqual(cfg.num_steps, 32)
        self.assertEqual(cfg.num_bins, 32)
        self.assertAlmostEqual(cfg.t_min, math.exp(-2))
        self.assertAlmostEqual(cfg.t_max, math.exp(4))
        times = cfg.time_samples()
        self.assertAlmostEqual(times[0], cfg.t_min)
        self.assertAlmostEqual(times[-1], cfg.t_max)

    def test_fail_inverted_range(self):
        with self.assertRaises(ConfigError):
            HksConfig(t_min=2.0, t_max=1.0)

    def test_dict_round_trip(self):
        cfg = HksConfig(num_steps=16, t_min=0.01, t_max=10.0, num_bins=64)
        self.assertEqual(HksConfig.from_dict(cfg.as_dict()), cfg)
