import json
import os
import tempfile
import unittest

from click.testing import CliRunner

from yoloret.config import config_dumps
from yoloret.model import build_model
from yoloret.scripts.cli import cli
from yoloret.tests.micro import micro_config
from yoloret.weights import WeightStore, weights_load, weights_save


class TestCli(unittest.TestCase):
    def setUp(self):
        self.runner = CliRunner()
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = self.tmp.name
        self.config = os.path.join(self.dir, "micro.json")
        with open(self.config, "w") as f:
            f.write(config_dumps(micro_config()))

    def tearDown(self):
        self.tmp.cleanup()

    def _run(self, *args, code=0):
        result = self.runner.invoke(cli, list(args))
        self.assertEqual(result.exit_code, code, msg="%s\n%s" % (result.output, result.exception))
        return result

    def _json(self, *args):
        return json.loads(self._run(*args).stdout)

    def _shapes(self, num_images=3):
        data_dir = os.path.join(self.dir, "shapes")
        self._run("make-shapes", data_dir, "--num-images", str(num_images), "--seed", "1")
        return os.path.join(data_dir, "annotations.jsonl")

    def test_flops(self):
        report = self._json("flops", "--config", self.config)
        model = build_model(micro_config(), seed=0)
        self.assertEqual(report["resolution"], 64)
        self.assertEqual(report["macs"], model.macs())
        self.assertEqual(list(report["macs_by_part"]), ["backbone", "rfcr", "neck", "head"])
        self.assertEqual(report["params"]["total"], model.count_params()["total"])

    def test_eval_is_deterministic(self):
        dataset = self._shapes()
        first = self._json("eval", "-c", self.config, "-d", dataset, "--metric", "coco")
        second = self._json("eval", "-c", self.config, "-d", dataset, "--metric", "coco", "--workers", "2")
        self.assertEqual(first, second)
        self.assertEqual(first["num_images"], 3)
        voc = self._json("eval", "-c", self.config, "-d", dataset)
        self.assertEqual(voc["mAP"], first["AP50"])

    def test_detect(self):
        dataset = self._shapes(1)
        image = os.path.join(os.path.dirname(dataset), "shape_0000.ppm")
        out = os.path.join(self.dir, "dets.json")
        self._run("detect", "-c", self.config, "-i", image, "--conf", "0.3", "-o", out)
        with open(out) as f:
            report = json.load(f)
        self.assertEqual((report["width"], report["height"]), (64, 64))
        for det in report["detections"]:
            self.assertGreaterEqual(det["confidence"], 0.3)
            self.assertEqual(set(det), {"x1", "y1", "x2", "y2", "class", "confidence"})

    def test_truncate(self):
        model = build_model(micro_config(truncate_last=0), seed=0)
        src = os.path.join(self.dir, "full.yrw")
        dst = os.path.join(self.dir, "short.yrw")
        weights_save(WeightStore.from_model(model), src)
        report = self._json("truncate", "--in", src, "--out", dst, "--blocks", "2")
        self.assertLess(report["values_after"], report["values_before"])
        short = build_model(micro_config(), seed=1)
        missing = short.load_partial(weights_load(dst))
        self.assertTrue(all(".32." in name for name in missing))

        dataset = self._shapes(1)
        image = os.path.join(os.path.dirname(dataset), "shape_0000.ppm")
        self._run("detect", "-c", self.config, "-w", dst, "-i", image, code=1)
        out = self._json("detect", "-c", self.config, "-w", dst, "--partial", "-i", image)
        self.assertEqual((out["width"], out["height"]), (64, 64))

    def test_train_toy(self):
        dataset = self._shapes(2)
        weights_out = os.path.join(self.dir, "trained.yrw")
        curve = os.path.join(self.dir, "curve.csv")
        args = [
            "train-toy", "-c", self.config, "-d", dataset, "--epochs-p1", "1", "--epochs-p2", "1",
            "--batch-size", "2", "--seed", "3", "--weights-out", weights_out, "--curve", curve,
        ]
        first = self._json(*args)
        second = self._json(*args)
        self.assertEqual(first, second)
        self.assertEqual(first["steps"], 2)
        self.assertTrue(os.path.exists(weights_out))
        self.assertTrue(os.path.exists(curve))

    def test_train_toy_transfer_needs_weights(self):
        dataset = self._shapes(1)
        self._run("train-toy", "-c", self.config, "-d", dataset, "--transfer-blocks", "2", code=1)

    def test_bad_config_exits_1(self):
        bad = os.path.join(self.dir, "bad.json")
        with open(bad, "w") as f:
            f.write('{"input_resolution": 300}')
        self._run("flops", "--config", bad, code=1)

    def test_missing_file_exits_2(self):
        self._run("flops", "--config", os.path.join(self.dir, "missing.json"), code=2)
        self._run("detect", "-c", self.config, "-i", os.path.join(self.dir, "missing.ppm"), code=2)

    def test_bad_weights_exit_1(self):
        bad = os.path.join(self.dir, "bad.yrw")
        with open(bad, "wb") as f:
            f.write(b"NOPE" + b"\0" * 60)
        self._run("bench", "-c", self.config, "-w", bad, "--iters", "1", code=1)


if __name__ == "__main__":
    unittest.main()
