import os
import unittest

from yoloret.bench import benchmark_run, summarize_latencies, time_forward
from yoloret.config import ModelConfig
from yoloret.model import build_model
from yoloret.tests.micro import micro_config


class TestSummary(unittest.TestCase):
    def test_known_values(self):
        stats = summarize_latencies([3.0, 1.0, 2.0])
        self.assertEqual(stats["median_ms"], 2.0)
        self.assertEqual(stats["mean_ms"], 2.0)
        self.assertEqual(stats["fps"], 500.0)
        self.assertAlmostEqual(stats["p95_ms"], 2.9)

    def test_empty(self):
        with self.assertRaises(ValueError):
            summarize_latencies([])

    def test_time_forward_counts_calls(self):
        calls = []
        durations = time_forward(calls.append, "x", warmup=2, iters=3)
        self.assertEqual(len(calls), 5)
        self.assertEqual(len(durations), 3)
        self.assertTrue(all(d >= 0 for d in durations))


class TestBenchmarkRun(unittest.TestCase):
    def setUp(self):
        self.model = build_model(micro_config(), seed=0)

    def test_report(self):
        report = benchmark_run(self.model, warmup=1, iters=2)
        self.assertEqual(report["resolution"], 64)
        self.assertEqual(report["batch_size"], 1)
        self.assertEqual(report["macs"], self.model.macs())
        self.assertEqual(report["params"]["total"], self.model.count_params()["total"])
        self.assertEqual(report["weight_precision"], "float32")
        self.assertGreater(report["fps"], 0)
        self.assertLessEqual(report["median_ms"], report["p95_ms"] + 1e-9)

    def test_postprocess(self):
        report = benchmark_run(self.model, resolution=96, warmup=0, iters=1, include_postprocess=True)
        self.assertTrue(report["include_postprocess"])
        self.assertEqual(report["resolution"], 96)

    def test_invalid_counts(self):
        with self.assertRaises(ValueError):
            benchmark_run(self.model, iters=0)
        with self.assertRaises(ValueError):
            benchmark_run(self.model, warmup=-1)

    def test_truncated_backbone_has_fewer_macs(self):
        full = build_model(micro_config(truncate_last=0), seed=0)
        a = benchmark_run(full, warmup=0, iters=1)
        b = benchmark_run(self.model, warmup=0, iters=1)
        self.assertLess(b["macs"], a["macs"])
        self.assertLess(b["weight_bytes"], a["weight_bytes"])


@unittest.skipUnless(os.environ.get("YOLORET_SLOW_TESTS"), "set YOLORET_SLOW_TESTS=1 to run")
class TestDefaultLatency(unittest.TestCase):
    def test_truncated_is_faster(self):
        cfg = ModelConfig()
        full = benchmark_run(build_model(cfg.replace(truncate_last=0), seed=0), warmup=2, iters=10)
        short = benchmark_run(build_model(cfg, seed=0), warmup=2, iters=10)
        self.assertLess(short["median_ms"], full["median_ms"])


if __name__ == "__main__":
    unittest.main()
