import unittest

import numpy as np
from numpy.testing import assert_array_equal

from yoloret.boxes import Detection, GroundTruth
from yoloret.metrics import FP, IGNORED, TP, average_precision, evaluate_coco, evaluate_voc, match_detections
from yoloret.tests import oracles


def _det(box, conf, cls=0):
    return Detection(box, cls, conf)


class TestMatching(unittest.TestCase):
    def test_greedy_by_confidence(self):
        gts = [GroundTruth((0, 0, 10, 10), 0)]
        dets = [_det((0, 0, 10, 9), 0.6), _det((0, 0, 10, 10), 0.9)]
        assert_array_equal(match_detections(dets, gts), [FP, TP])

    def test_difficult_is_ignored(self):
        gts = [GroundTruth((0, 0, 10, 10), 0, difficult=True)]
        assert_array_equal(match_detections([_det((0, 0, 10, 10), 0.9)], gts), [IGNORED])

    def test_below_threshold_is_fp(self):
        gts = [GroundTruth((0, 0, 10, 10), 0)]
        assert_array_equal(match_detections([_det((5, 0, 15, 10), 0.9)], gts), [FP])

    def test_matches_exhaustive_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(25):
            gts = []
            for _ in range(10):
                x, y = rng.uniform(0, 80, 2)
                w, h = rng.uniform(8, 30, 2)
                gts.append(GroundTruth((x, y, x + w, y + h), 0, difficult=bool(rng.uniform() < 0.2)))
            dets = []
            for _ in range(20):
                base = gts[rng.integers(0, len(gts))].box
                jitter = rng.uniform(-6, 6, 4)
                x1, y1 = base[0] + jitter[0], base[1] + jitter[1]
                box = (x1, y1, max(x1 + 1, base[2] + jitter[2]), max(y1 + 1, base[3] + jitter[3]))
                dets.append(_det(box, float(np.round(rng.uniform(0, 1), 1))))
            assert_array_equal(match_detections(dets, gts), oracles.match_exhaustive(dets, gts, 0.5))


class TestAveragePrecision(unittest.TestCase):
    def test_fp_then_tp(self):
        self.assertEqual(average_precision([FP, TP], [0.9, 0.8], 1), 0.5)

    def test_tp_then_fp_and_missed(self):
        # recall 0.5 at precision 1, nothing more
        self.assertEqual(average_precision([TP, FP], [0.9, 0.8], 2), 0.5)

    def test_envelope(self):
        # TP, FP, TP with 2 positives: recall 0.5 @ 1.0, then 1.0 @ 2/3
        self.assertAlmostEqual(average_precision([TP, FP, TP], [0.9, 0.8, 0.7], 2), 0.5 + 0.5 * 2 / 3.0)

    def test_no_positives_or_detections(self):
        self.assertEqual(average_precision([], [], 3), 0.0)
        self.assertEqual(average_precision([FP], [0.5], 0), 0.0)
        with self.assertRaises(ValueError):
            average_precision([], [], -1)

    def test_tied_confidences_order_free(self):
        a = average_precision([TP, FP, TP, FP], [0.9, 0.5, 0.5, 0.1], 3)
        b = average_precision([TP, TP, FP, FP], [0.9, 0.5, 0.5, 0.1], 3)
        self.assertEqual(a, b)

    def test_fp_to_tp_never_lowers_ap(self):
        rng = np.random.default_rng(12)
        for _ in range(50):
            labels = list(rng.integers(0, 2, size=12))
            conf = list(np.round(rng.uniform(0, 1, size=12), 2))
            npos = sum(labels) + 2
            base = average_precision(labels, conf, npos)
            for i in np.flatnonzero(np.array(labels) == FP):
                better = list(labels)
                better[i] = TP
                self.assertGreaterEqual(average_precision(better, conf, npos) + 1e-12, base)


class TestEvaluate(unittest.TestCase):
    def setUp(self):
        rng = np.random.default_rng(0)
        self.gts = []
        for _ in range(6):
            image = []
            for _ in range(3):
                x, y = rng.uniform(0, 200, 2)
                w, h = rng.uniform(10, 150, 2)
                image.append(GroundTruth((x, y, x + w, y + h), int(rng.integers(0, 3))))
            self.gts.append(image)
        self.dets = []
        for image in self.gts:
            dets = []
            for gt in image:
                x1, y1, x2, y2 = gt.box
                jitter = rng.uniform(-4, 4, 4)
                box = (x1 + jitter[0], y1 + jitter[1], max(x1 + jitter[0], x2 + jitter[2]) + 1, max(y1 + jitter[1], y2 + jitter[3]) + 1)
                dets.append(Detection(box, gt.class_id, float(rng.uniform(0.1, 1))))
                dets.append(Detection((0, 0, 5, 5), gt.class_id, float(rng.uniform(0.05, 0.5))))
            self.dets.append(dets)

    def test_perfect_detections(self):
        dets = [[Detection(g.box, g.class_id, 0.9) for g in image] for image in self.gts]
        report = evaluate_voc(dets, self.gts)
        self.assertEqual(report["mAP"], 1.0)
        self.assertEqual(evaluate_coco(dets, self.gts)["AP"], 1.0)

    def test_empty_detections(self):
        report = evaluate_voc([[] for _ in self.gts], self.gts)
        self.assertEqual(report["mAP"], 0.0)

    def test_hand_computed_dataset(self):
        gts = [[GroundTruth((0, 0, 10, 10), 0)], [GroundTruth((0, 0, 10, 10), 1)]]
        dets = [
            [_det((20, 20, 30, 30), 0.9, 0), _det((0, 0, 10, 10), 0.8, 0)],
            [_det((0, 0, 10, 10), 0.7, 1)],
        ]
        report = evaluate_voc(dets, gts, class_names=["a", "b"])
        self.assertEqual(report["per_class"], {"a": 0.5, "b": 1.0})
        self.assertEqual(report["mAP"], 0.75)

    def test_coco_ap50_equals_voc(self):
        voc = evaluate_voc(self.dets, self.gts)
        coco = evaluate_coco(self.dets, self.gts)
        self.assertEqual(coco["AP50"], voc["mAP"])
        self.assertLessEqual(coco["AP75"], coco["AP50"])
        self.assertLessEqual(coco["AP"], coco["AP50"])

    def test_area_buckets(self):
        gts = [[GroundTruth((0, 0, 10, 10), 0)]]
        dets = [[_det((0, 0, 10, 10), 0.9)]]
        report = evaluate_coco(dets, gts)
        self.assertEqual(report["APs"], 1.0)
        self.assertIsNone(report["APm"])
        self.assertIsNone(report["APl"])

    def test_worker_count_does_not_change_report(self):
        self.assertEqual(
            evaluate_coco(self.dets, self.gts, max_workers=1),
            evaluate_coco(self.dets, self.gts, max_workers=4),
        )

    def test_image_order_does_not_change_map(self):
        order = np.random.default_rng(13).permutation(len(self.gts))
        shuffled_dets = [self.dets[i] for i in order]
        shuffled_gts = [self.gts[i] for i in order]
        self.assertEqual(evaluate_voc(shuffled_dets, shuffled_gts), evaluate_voc(self.dets, self.gts))
        self.assertEqual(evaluate_coco(shuffled_dets, shuffled_gts), evaluate_coco(self.dets, self.gts))

    def test_length_mismatch(self):
        with self.assertRaises(ValueError):
            evaluate_voc(self.dets[:2], self.gts)


if __name__ == "__main__":
    unittest.main()
