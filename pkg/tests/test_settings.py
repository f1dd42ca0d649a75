import math
import os
import pathlib
import tempfile
import unittest
from unittest import mock

from graphdistill.errors import ConfigError, ParseError
from graphdistill.settings import (
    ExperimentConfig,
    get_active_config,
    load_config,
    packaged_config,
    save_config,
)
from graphdistill.data import metric_tasks
from graphdistill.utils import (
    THREADS_ENV,
    mean_and_stderr,
    parse_list,
    read_csv,
    worker_count,
    write_csv,
)


class TestExperimentConfig(unittest.TestCase):
    def test_packaged_defaults(self):
        self.assertEqual(packaged_config, ExperimentConfig())
        self.assertEqual(packaged_config.batch_size, 32)
        self.assertEqual(packaged_config.curve_sizes, (500, 1000, 2000, 4000))
        self.assertAlmostEqual(packaged_config.hks.t_max, math.exp(4))

    def test_active_config_without_local_file(self):
        if not os.path.exists("graphdistill.json"):
            self.assertIs(get_active_config(), packaged_config)

    def test_partial_override(self):
        config = ExperimentConfig.from_dict({"training": {"patience": 3}, "hks": {"num_bins": 16}})
        self.assertEqual(config.patience, 3)
        self.assertEqual(config.hks.num_bins, 16)
        self.assertEqual(config.max_epochs, 200)
        self.assertEqual(config.hks.num_steps, 32)

    def test_dict_round_trip(self):
        config = ExperimentConfig(kernel1=5, aux_weight=0.1, curve_sizes=(10, 20))
        self.assertEqual(ExperimentConfig.from_dict(config.as_dict()), config)

    def test_net_config(self):
        config = ExperimentConfig(kernel1=5, kernel2=7, filters1=2)
        net_config = config.net_config(metric_tasks(), seed=4)
        self.assertEqual(net_config.conv1.kernel, 5)
        self.assertEqual(net_config.conv2.kernel, 7)
        self.assertEqual(net_config.conv1.filters, 2)
        self.assertEqual(net_config.rng_seed, 4)
        self.assertEqual(config.schedule(4).seed, 4)

    def test_fail_unknown_section(self):
        with self.assertRaises(ConfigError):
            ExperimentConfig.from_dict({"optimizer": {}})

    def test_fail_unknown_key(self):
        with self.assertRaises(ConfigError):
            ExperimentConfig.from_dict({"training": {"momentum": 0.9}})

    def test_fail_invalid_value(self):
        with self.assertRaises(ConfigError):
            ExperimentConfig.from_dict({"training": {"batch_size": 0}})
        with self.assertRaises(ConfigError):
            ExperimentConfig.from_dict({"hks": {"t_min": 10.0, "t_max": 1.0}})


class TestConfigFile(unittest.TestCase):
    def test_round_trip(self):
        config = ExperimentConfig(patience=4)
        with tempfile.TemporaryDirectory() as tmp:
            path = pathlib.Path(tmp) / "c.json"
            save_config(config, path)
            self.assertEqual(load_config(path), config)

    def test_fail_malformed(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = pathlib.Path(tmp) / "c.json"
            path.write_text('{\n  "training": {\n    "patience": ,\n  }\n}\n')
            with self.assertRaises(ParseError) as e:
                load_config(path)
        self.assertIn("at line 3", str(e.exception))

    def test_fail_missing(self):
        with self.assertRaises(ParseError):
            load_config("/nonexistent/c.json")


class TestUtils(unittest.TestCase):
    def test_mean_and_stderr(self):
        mean, stderr = mean_and_stderr([1.0, 2.0, 3.0])
        self.assertEqual(mean, 2.0)
        self.assertAlmostEqual(stderr, math.sqrt(1.0 / 3.0))

    def test_nan_ignored(self):
        self.assertEqual(mean_and_stderr([4.0, float("nan")]), (4.0, 0.0))
        self.assertTrue(math.isnan(mean_and_stderr([float("nan")])[0]))

    def test_worker_count(self):
        with mock.patch.dict(os.environ, {THREADS_ENV: "3"}):
            self.assertEqual(worker_count(), 3)
        with mock.patch.dict(os.environ, {THREADS_ENV: "0"}):
            self.assertEqual(worker_count(), 1)
        with mock.patch.dict(os.environ, {THREADS_ENV: "many"}):
            self.assertGreaterEqual(worker_count(), 1)

    def test_csv(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = pathlib.Path(tmp) / "t.csv"
            write_csv(path, ("a", "b", "c"), [(1, 0.1, None)])
            self.assertEqual(path.read_text(), "a,b,c\n1,0.1,\n")
            self.assertEqual(read_csv(path), [{"a": "1", "b": "0.1", "c": ""}])

    def test_parse_list(self):
        self.assertEqual(parse_list("500,1000, 2000"), [500, 1000, 2000])
        self.assertEqual(parse_list("0.1,0.5", float), [0.1, 0.5])
