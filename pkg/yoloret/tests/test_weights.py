import json
import os
import struct
import tempfile
import unittest

import numpy as np
from numpy.testing import assert_array_equal

from yoloret.constants import WEIGHTS_ALIGN
from yoloret.model import build_model
from yoloret.tests.micro import micro_config, random_image
from yoloret.weights import WeightStore, truncate_weights, weights_from_bytes, weights_load, weights_save


def _store():
    rng = np.random.default_rng(0)
    store = WeightStore()
    store["a.weight"] = rng.standard_normal((3, 5)).astype(np.float32)
    store["a.bias"] = rng.standard_normal(3).astype(np.float32)
    store["b.scalar"] = np.array(2.5, dtype=np.float32)
    store["c.big"] = rng.standard_normal((4, 4, 3)).astype(np.float32)
    return store


def _container(manifest, blob=b"", version=1, magic=b"YRW1"):
    text = json.dumps(manifest).encode("utf-8")
    head = struct.pack("<4sIQ", magic, version, len(text)) + text
    pad = (-len(head)) % WEIGHTS_ALIGN
    return head + b"\0" * pad + blob


class TestWeights(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = os.path.join(self.tmp.name, "w.yrw")

    def tearDown(self):
        self.tmp.cleanup()

    def test_round_trip_is_bitwise(self):
        store = _store()
        weights_save(store, self.path)
        back = weights_load(self.path)
        self.assertEqual(back.names(), store.names())
        self.assertTrue(back.equals(store))
        self.assertEqual(back["b.scalar"].shape, ())

    def test_offsets_aligned_and_increasing(self):
        entries = _store().manifest()
        # 15 floats = 60 bytes, 3 floats = 12 bytes, 1 float, 48 floats
        self.assertEqual([e["offset"] for e in entries], [0, 64, 128, 192])
        self.assertEqual([e["nbytes"] for e in entries], [60, 12, 4, 192])

    def test_model_round_trip(self):
        model = build_model(micro_config(), seed=0)
        weights_save(WeightStore.from_model(model), self.path)
        other = build_model(micro_config(), seed=1)
        other.load_state_dict(weights_load(self.path))
        for name, arr in model.state_dict().items():
            assert_array_equal(other.state_dict()[name], arr)

    def test_bad_magic(self):
        with self.assertRaisesRegex(ValueError, "^bad magic"):
            weights_from_bytes(_container({"tensors": []}, magic=b"NOPE"))

    def test_unsupported_version(self):
        with self.assertRaisesRegex(ValueError, "^unsupported version"):
            weights_from_bytes(_container({"tensors": []}, version=2))

    def test_truncated(self):
        weights_save(_store(), self.path)
        with open(self.path, "rb") as f:
            raw = f.read()
        with self.assertRaisesRegex(ValueError, "^truncated file"):
            weights_from_bytes(raw[:-4])
        with self.assertRaisesRegex(ValueError, "^truncated file"):
            weights_from_bytes(raw[:10])

    def test_corrupt_manifest(self):
        raw = struct.pack("<4sIQ", b"YRW1", 1, 5) + b"{oops" + b"\0" * 64
        with self.assertRaisesRegex(ValueError, "^corrupt manifest"):
            weights_from_bytes(raw)

    def test_misaligned(self):
        manifest = {"tensors": [{"name": "x", "shape": [2], "offset": 8, "nbytes": 8}]}
        with self.assertRaisesRegex(ValueError, "^misaligned offset"):
            weights_from_bytes(_container(manifest, b"\0" * 128))

    def test_overlapping(self):
        manifest = {
            "tensors": [
                {"name": "x", "shape": [32], "offset": 0, "nbytes": 128},
                {"name": "y", "shape": [4], "offset": 64, "nbytes": 16},
            ]
        }
        with self.assertRaisesRegex(ValueError, "^overlapping offsets"):
            weights_from_bytes(_container(manifest, b"\0" * 128))

    def test_negative_offset(self):
        manifest = {"tensors": [{"name": "x", "shape": [1], "offset": -64}]}
        with self.assertRaisesRegex(ValueError, "^offset out of range"):
            weights_from_bytes(_container(manifest, b"\0" * 64))

    def test_missing_file(self):
        with self.assertRaises(OSError):
            weights_load(os.path.join(self.tmp.name, "missing.yrw"))


class TestTruncateWeights(unittest.TestCase):
    def test_drops_last_blocks(self):
        store = WeightStore()
        for i in range(4):
            store["backbone.blocks.%d.w" % i] = np.full(2, i, dtype=np.float32)
        store["backbone.stem.w"] = np.zeros(1, dtype=np.float32)
        store["head.8.w"] = np.zeros(1, dtype=np.float32)
        out = truncate_weights(store, 2)
        self.assertEqual(
            out.names(), ["backbone.blocks.0.w", "backbone.blocks.1.w", "backbone.stem.w", "head.8.w"]
        )
        self.assertEqual(out.num_values(), store.num_values() - 4)

    def test_drops_deepest_tap_consumers(self):
        store = WeightStore()
        for i in range(3):
            store["backbone.blocks.%d.w" % i] = np.zeros(1, dtype=np.float32)
        for name in ("rfcr.collect.16.w", "rfcr.collect.32.w", "rfcr.redistribute.32.w", "neck.entry.32.w",
                     "neck.entry.16.w", "neck.bu_block.32.w", "head.32.w"):
            store[name] = np.zeros(1, dtype=np.float32)
        kept = truncate_weights(store, 1).names()
        self.assertEqual(
            kept,
            ["backbone.blocks.0.w", "backbone.blocks.1.w", "rfcr.collect.16.w", "neck.entry.16.w",
             "neck.bu_block.32.w", "head.32.w"],
        )
        self.assertEqual(truncate_weights(store, 0).names(), store.names())
        self.assertIn("rfcr.collect.32.w", truncate_weights(store, 1, tap_stride=64).names())

    def test_truncated_file_loads_into_short_model(self):
        full = build_model(micro_config(truncate_last=0), seed=0)
        store = truncate_weights(WeightStore.from_model(full), 2)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "short.yrw")
            weights_save(store, path)
            short = build_model(micro_config(truncate_last=2), seed=1)
            missing = short.load_partial(weights_load(path))

        self.assertTrue(missing)
        for name in missing:
            self.assertTrue(name.startswith(("rfcr.collect.32.", "rfcr.redistribute.32.", "neck.entry.32.")), name)
        state = short.state_dict()
        for name in store.names():
            assert_array_equal(state[name], store[name])
        raw = short(random_image(64))
        self.assertEqual(raw[32].shape[2:], (2, 2))
        self.assertTrue(all(np.isfinite(t.data).all() for _, t in raw))

    def test_partial_load_still_rejects_unknown_names(self):
        model = build_model(micro_config(), seed=0)
        with self.assertRaisesRegex(ValueError, "unknown names"):
            model.load_partial({"extra.weight": np.zeros(1, dtype=np.float32)})

    def test_composition(self):
        full = WeightStore.from_model(build_model(micro_config(truncate_last=0), seed=0))
        for a, b in ((1, 1), (0, 2), (2, 0), (1, 2)):
            once = truncate_weights(full, a + b)
            twice = truncate_weights(truncate_weights(full, a), b)
            self.assertEqual(once.names(), twice.names())
            self.assertTrue(once.equals(twice))

    def test_errors(self):
        store = WeightStore({"backbone.blocks.0.w": np.zeros(1, dtype=np.float32)})
        with self.assertRaises(ValueError):
            truncate_weights(store, 1)
        with self.assertRaises(ValueError):
            truncate_weights(store, -1)


if __name__ == "__main__":
    unittest.main()
