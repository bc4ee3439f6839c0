import os
import tempfile
import unittest

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from yoloret.dataio import read_annotations
from yoloret.synthetic import CLASS_COLORS, ShapesMaker


class TestShapesMaker(unittest.TestCase):
    def test_deterministic(self):
        a = ShapesMaker(num_images=5, seed=3).make_dataset()
        b = ShapesMaker(num_images=5, seed=3).make_dataset()
        for (ia, ga), (ib, gb) in zip(a, b):
            assert_array_equal(ia, ib)
            self.assertEqual(ga, gb)

    def test_boxes_and_colors(self):
        maker = ShapesMaker(num_images=20, size=64, num_classes=3, max_objects=1, seed=1)
        for image, gts in maker.make_dataset():
            self.assertEqual(image.shape, (3, 64, 64))
            self.assertEqual(image.dtype, np.float32)
            self.assertEqual(len(gts), 1)
            x1, y1, x2, y2 = (int(v) for v in gts[0].box)
            self.assertTrue(16 <= x2 - x1 <= 40 and 16 <= y2 - y1 <= 40)
            self.assertTrue(0 <= x1 and x2 <= 64 and 0 <= y1 and y2 <= 64)
            assert_allclose(image[:, (y1 + y2) // 2, (x1 + x2) // 2], CLASS_COLORS[gts[0].class_id], atol=1e-6)

    def test_invalid(self):
        with self.assertRaises(ValueError):
            ShapesMaker(num_classes=len(CLASS_COLORS) + 1)
        with self.assertRaises(ValueError):
            ShapesMaker(size=32, max_box=40)
        with self.assertRaises(ValueError):
            ShapesMaker(num_images=0)

    def test_write(self):
        maker = ShapesMaker(num_images=3, size=32, min_box=8, max_box=20, max_objects=2, seed=2)
        with tempfile.TemporaryDirectory() as tmp:
            path = maker.write(tmp)
            records = read_annotations(path, num_classes=2)
            self.assertEqual(len(records), 3)
            self.assertTrue(os.path.exists(os.path.join(tmp, "shape_0002.ppm")))
            for rec, (_, gts) in zip(records, maker.make_dataset()):
                self.assertEqual(rec.boxes, gts)
                self.assertEqual((rec.width, rec.height), (32, 32))


if __name__ == "__main__":
    unittest.main()
