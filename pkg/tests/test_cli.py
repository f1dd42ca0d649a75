import json
import pathlib
import tempfile
import unittest

from click.testing import CliRunner

from graphdistill.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_USAGE, cli, main
from graphdistill.utils import read_csv

FAST_CONFIG = {
    "hks": {"num_steps": 8, "num_bins": 8},
    "network": {"filters1": 4, "filters2": 4},
    "training": {"max_epochs": 3, "patience": 2, "batch_size": 16},
}
ENV = {"GD_THREADS": "1"}


class CliTestCase(unittest.TestCase):
    def setUp(self):
        self.runner = CliRunner()
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = pathlib.Path(self._tmp.name)
        self.config = self.tmp / "fast.json"
        self.config.write_text(json.dumps(FAST_CONFIG))

    def tearDown(self):
        self._tmp.cleanup()

    def invoke(self, *args):
        return self.runner.invoke(cli, [str(a) for a in args], env=ENV, catch_exceptions=False)

    def generate(self, count=60, seed=1, name="d.jsonl"):
        path = self.tmp / name
        result = self.invoke("-q", "generate", "--model", "er", "--count", count, "--seed", seed, "--out", path)
        self.assertEqual(result.exit_code, 0, result.output)
        return path


class TestGenerate(CliTestCase):
    def test_generate(self):
        path = self.tmp / "d.jsonl"
        result = self.invoke("generate", "--model", "er", "--count", 100, "--seed", 1, "--out", path)
        self.assertEqual(result.exit_code, 0, result.output)
        self.assertEqual(len(path.read_text().splitlines()), 101)
        self.assertIn("Writing 100 graphs", result.output)

    def test_generate_count_from_config(self):
        config = self.tmp / "corpus.json"
        config.write_text(json.dumps({"learning_curve": {"corpus_size": 7}}))
        path = self.tmp / "d.jsonl"
        result = self.invoke("-q", "generate", "--model", "ba", "--config", config, "--out", path)
        self.assertEqual(result.exit_code, 0, result.output)
        self.assertEqual(len(path.read_text().splitlines()), 8)

    def test_fail_bad_model(self):
        self.assertEqual(main(["generate", "--model", "ws", "--count", "3", "--out", "x"]), EXIT_USAGE)

    def test_fail_unknown_flag(self):
        self.assertEqual(main(["--bogus"]), EXIT_USAGE)

    def test_stats(self):
        path = self.generate(count=12)
        result = self.invoke("-q", "stats", "--data", path)
        self.assertEqual(result.exit_code, 0, result.output)
        self.assertEqual(json.loads(result.output)["graphs"], 12)


class TestTrain(CliTestCase):
    def test_fail_missing_data(self):
        missing = self.tmp / "absent.jsonl"
        result = self.invoke(
            "train", "--data", missing, "--main", "diameter",
            "--out-model", self.tmp / "m.json", "--out-metrics", self.tmp / "r.json",
        )
        self.assertEqual(result.exit_code, EXIT_DATA)
        self.assertIn(str(missing), result.output)

    def test_fail_class_label_out_of_range(self):
        data = self.tmp / "c.jsonl"
        header = {"format": 1, "tasks": [{"name": "class", "kind": "classification", "num_classes": 2}]}
        records = [{"n": 3, "edges": [[0, 1], [1, 2]], "labels": {"class": c}} for c in (0, 1, 2)]
        data.write_text("\n".join(json.dumps(r) for r in [header] + records) + "\n")
        code = main([
            "-q", "train", "--data", str(data), "--main", "class", "--config", str(self.config),
            "--out-model", str(self.tmp / "m.json"), "--out-metrics", str(self.tmp / "r.json"),
        ])
        self.assertEqual(code, EXIT_DATA)

    def test_main_exit_code_for_missing_data(self):
        code = main([
            "-q", "train", "--data", str(self.tmp / "absent.jsonl"),
            "--out-model", str(self.tmp / "m.json"), "--out-metrics", str(self.tmp / "r.json"),
        ])
        self.assertEqual(code, EXIT_DATA)

    def test_train_and_evaluate(self):
        data = self.generate()
        features = self.tmp / "f.npz"
        result = self.invoke("-q", "hks", "--in", data, "--bins", 8, "--steps", 8, "--out", features)
        self.assertEqual(result.exit_code, 0, result.output)

        model = self.tmp / "m.json"
        metrics = self.tmp / "r.json"
        result = self.invoke(
            "-q", "train", "--data", features, "--main", "diameter", "--aux", "density",
            "--budget", 20, "--seed", 2, "--config", self.config,
            "--out-model", model, "--out-metrics", metrics,
        )
        self.assertEqual(result.exit_code, 0, result.output)
        record = json.loads(metrics.read_text())
        self.assertEqual(record["variant"], "multi-task")
        self.assertEqual([t["name"] for t in record["tasks"]], ["diameter", "density"])
        self.assertIn("diameter", record["metrics"]["test"])

        out = self.tmp / "eval.csv"
        result = self.invoke("-q", "evaluate", "--model", model, "--data", data, "--out", out)
        self.assertEqual(result.exit_code, 0, result.output)
        rows = read_csv(out)
        self.assertEqual([row["task"] for row in rows], ["diameter", "density"])
        summary = json.loads(out.with_suffix(".json").read_text())
        self.assertEqual(summary["examples"], 60)

    def test_divergence_is_numeric_failure(self):
        data = self.generate(count=40)
        config = self.tmp / "wild.json"
        config.write_text(json.dumps(dict(FAST_CONFIG, training={"learning_rate": 1e300, "max_epochs": 5})))
        result = self.invoke(
            "-q", "train", "--data", data, "--main", "diameter", "--config", config,
            "--out-model", self.tmp / "m.json", "--out-metrics", self.tmp / "r.json",
        )
        self.assertEqual(result.exit_code, EXIT_NUMERIC, result.output)


class TestExperiments(CliTestCase):
    def test_learning_curve(self):
        data = self.generate()
        out = self.tmp / "curve.csv"
        args = (
            "-q", "learning-curve", "--data", data, "--main", "diameter", "--aux", "density",
            "--sizes", "10,20,40", "--seeds", 3, "--config", self.config, "--out", out,
        )
        result = self.invoke(*args)
        self.assertEqual(result.exit_code, 0, result.output)
        first = out.read_bytes()
        lines = first.decode().splitlines()
        self.assertEqual(
            lines[0], "variant,main_task,train_size,seed,metric_name,metric_value,best_epoch,wall_seconds"
        )
        self.assertEqual(len(lines), 1 + 18)
        summary = json.loads(out.with_suffix(".json").read_text())
        self.assertEqual(len(summary["summary"]), 6)

        result = self.invoke(*args)
        self.assertEqual(result.exit_code, 0, result.output)
        self.assertEqual(out.read_bytes(), first)

    def test_learning_curve_fractions(self):
        data = self.generate()
        out = self.tmp / "curve.csv"
        result = self.invoke(
            "-q", "learning-curve", "--data", data, "--fractions", "0.25,0.5",
            "--seeds", 1, "--config", self.config, "--out", out,
        )
        self.assertEqual(result.exit_code, 0, result.output)
        sizes = sorted({row["train_size"] for row in read_csv(out)})
        self.assertEqual(sizes, ["12", "24"])

    def test_fail_sizes_and_fractions(self):
        code = main(["learning-curve", "--data", "d.jsonl", "--sizes", "1", "--fractions", "0.5", "--out", "c.csv"])
        self.assertEqual(code, EXIT_USAGE)

    def test_fail_ladder_beyond_train_split(self):
        data = self.generate(count=20)
        result = self.invoke(
            "-q", "learning-curve", "--data", data, "--sizes", "10,100",
            "--config", self.config, "--out", self.tmp / "c.csv",
        )
        self.assertEqual(result.exit_code, EXIT_DATA)

    def test_search(self):
        data = self.generate(count=30)
        out = self.tmp / "search.json"
        result = self.invoke(
            "-q", "search", "--data", data, "--trials", 1, "--seed", 0,
            "--config", self.config, "--out", out,
        )
        self.assertEqual(result.exit_code, 0, result.output)
        document = json.loads(out.read_text())
        self.assertEqual(document["best_trial"], 0)
        self.assertEqual(len(read_csv(out.with_suffix(".csv"))), 1)

    def test_cv(self):
        data = self.generate(count=30)
        out = self.tmp / "cv.csv"
        result = self.invoke(
            "-q", "cv", "--data", data, "--folds", 3, "--seed", 0, "--config", self.config, "--out", out,
        )
        self.assertEqual(result.exit_code, 0, result.output)
        rows = read_csv(out)
        self.assertEqual(len(rows), 6)
        summary = json.loads(out.with_suffix(".json").read_text())["summary"]
        self.assertEqual(sorted(summary), ["multi-task", "single-task"])

    def test_augment(self):
        data = self.generate(count=12)
        out = self.tmp / "more.jsonl"
        result = self.invoke("-q", "augment", "--data", data, "--count", 8, "--seed", 0, "--out", out)
        self.assertEqual(result.exit_code, 0, result.output)
        self.assertEqual(len(out.read_text().splitlines()), 1 + 20)
