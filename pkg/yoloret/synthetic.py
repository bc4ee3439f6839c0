"""Synthetic "shapes" dataset: filled rectangles on a noisy gray background

Usable for smoke training and evaluating without any downloaded data.
Each class has a fixed color, so a small detector can learn it quickly.
"""
import os

import numpy as np

from .boxes import GroundTruth
from .dataio import DatasetRecord, write_annotations, write_ppm
from .log import get_log

logger = get_log()

CLASS_COLORS = (
    (0.9, 0.1, 0.1),
    (0.1, 0.2, 0.9),
    (0.1, 0.8, 0.2),
    (0.9, 0.8, 0.1),
    (0.8, 0.2, 0.8),
)
BACKGROUND = 0.45
NOISE_STD = 0.05


class ShapesMaker:
    """Draws `num_images` square images, each with 1..max_objects boxes

    Args:
        num_images (int)
        size (int): image side in pixels
        num_classes (int): at most len(CLASS_COLORS)
        min_box, max_box (int): box side range in pixels
        max_objects (int): upper bound of boxes per image
        seed (int)
    """

    def __init__(self, num_images=50, size=64, num_classes=2, min_box=16, max_box=40, max_objects=1, seed=0):
        if not 1 <= num_classes <= len(CLASS_COLORS):
            raise ValueError("num_classes must be in [1, %s], got %s" % (len(CLASS_COLORS), num_classes))
        if not 1 <= min_box <= max_box <= size:
            raise ValueError("need 1 <= min_box <= max_box <= size, got %s, %s, %s" % (min_box, max_box, size))
        if num_images < 1 or max_objects < 1:
            raise ValueError("num_images and max_objects must be positive")
        self.num_images = num_images
        self.size = size
        self.num_classes = num_classes
        self.min_box = min_box
        self.max_box = max_box
        self.max_objects = max_objects
        self.seed = seed

    def make_image(self, rng):
        """One (3, size, size) float32 image and its ground truth"""
        image = BACKGROUND + NOISE_STD * rng.standard_normal((3, self.size, self.size))
        gts = []
        for _ in range(int(rng.integers(1, self.max_objects + 1))):
            w, h = rng.integers(self.min_box, self.max_box + 1, size=2)
            x1 = int(rng.integers(0, self.size - w + 1))
            y1 = int(rng.integers(0, self.size - h + 1))
            class_id = int(rng.integers(0, self.num_classes))
            color = np.array(CLASS_COLORS[class_id])[:, None, None]
            image[:, y1 : y1 + h, x1 : x1 + w] = color
            gts.append(GroundTruth((float(x1), float(y1), float(x1 + w), float(y1 + h)), class_id))
        return np.clip(image, 0, 1).astype(np.float32), gts

    def make_dataset(self):
        """List of (image, ground truth) pairs, deterministic in `seed`"""
        rng = np.random.default_rng(self.seed)
        return [self.make_image(rng) for _ in range(self.num_images)]

    def write(self, directory, name="annotations.jsonl"):
        """Write PPM images plus a JSON-lines dataset file into `directory`

        Returns:
            str: path of the dataset file
        """
        os.makedirs(directory, exist_ok=True)
        records = []
        for idx, (image, gts) in enumerate(self.make_dataset()):
            path = os.path.join(directory, "shape_%04d.ppm" % idx)
            write_ppm(path, image)
            records.append(DatasetRecord(path, gts, self.size, self.size))
        out = os.path.join(directory, name)
        write_annotations(out, records)
        logger.info("Wrote %s shape images to %s", len(records), directory)
        return out
