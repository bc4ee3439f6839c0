"""dataio.py
Image and annotation files: binary PPM (P6) images and JSON-lines datasets

Dataset lines look like

    {"image": "img_0001.ppm", "boxes": [{"x1": 3, "y1": 4, "x2": 20, "y2": 30,
     "class": 1, "difficult": false}]}

with image paths relative to the dataset file.
"""
import json
import os
from dataclasses import dataclass, field
from typing import List

import numpy as np

from .boxes import GroundTruth
from .log import get_log
from .tensor import Tensor

logger = get_log()

PPM_MAGIC = b"P6"
PPM_MAXVAL = 255


@dataclass
class DatasetRecord:
    image_path: str
    boxes: List[GroundTruth] = field(default_factory=list)
    width: int = 0
    height: int = 0

    def load_image(self):
        return read_ppm(self.image_path)


def _read_header(f, path):
    """Returns (width, height, maxval) and leaves `f` at the first pixel byte"""
    magic = f.read(2)
    if magic != PPM_MAGIC:
        raise ValueError("%s is not a P6 binary PPM (magic %r)" % (path, magic))
    tokens = []
    while len(tokens) < 3:
        c = f.read(1)
        if not c:
            raise ValueError("truncated PPM header in %s" % path)
        if c == b"#":
            while c not in (b"\n", b"\r", b""):
                c = f.read(1)
            continue
        if c.isspace():
            continue
        tok = c
        while True:
            c = f.read(1)
            if not c or c.isspace():
                break
            tok += c
        tokens.append(tok)
        if not c and len(tokens) < 3:
            raise ValueError("truncated PPM header in %s" % path)
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise ValueError("bad PPM header in %s: %r" % (path, tokens))
    if maxval != PPM_MAXVAL:
        raise ValueError("%s has maxval %s, only %s is supported" % (path, maxval, PPM_MAXVAL))
    if width <= 0 or height <= 0:
        raise ValueError("%s has invalid size %sx%s" % (path, width, height))
    return width, height, maxval


def read_ppm_size(path):
    """(width, height) from the header only"""
    with open(path, "rb") as f:
        width, height, _ = _read_header(f, path)
    return width, height


def read_ppm(path):
    """Load a P6 PPM as a (1, 3, h, w) float32 tensor in [0, 1], RGB order"""
    with open(path, "rb") as f:
        width, height, _ = _read_header(f, path)
        nbytes = width * height * 3
        raster = f.read(nbytes)
    if len(raster) != nbytes:
        raise ValueError("truncated PPM %s: %s of %s pixel bytes" % (path, len(raster), nbytes))
    pixels = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3)
    data = pixels.transpose(2, 0, 1)[None].astype(np.float32) / PPM_MAXVAL
    return Tensor(data)


def write_ppm(path, image):
    """Write an image as P6 PPM

    Args:
        path (str)
        image: (1, 3, h, w) or (3, h, w) floats in [0, 1], or (h, w, 3) uint8
    """
    data = image.data if isinstance(image, Tensor) else np.asarray(image)
    if data.dtype == np.uint8:
        if data.ndim != 3 or data.shape[2] != 3:
            raise ValueError("uint8 images must be (h, w, 3), got %s" % (data.shape,))
        pixels = data
    else:
        if data.ndim == 4:
            if data.shape[0] != 1:
                raise ValueError("can only write a single image, got batch of %s" % data.shape[0])
            data = data[0]
        if data.ndim != 3 or data.shape[0] != 3:
            raise ValueError("float images must be (3, h, w), got %s" % (data.shape,))
        pixels = np.round(np.clip(data, 0, 1) * PPM_MAXVAL).astype(np.uint8).transpose(1, 2, 0)
    height, width = pixels.shape[:2]
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n%d\n" % (width, height, PPM_MAXVAL))
        f.write(np.ascontiguousarray(pixels).tobytes())


def _parse_box(obj, line_no, path):
    try:
        box = (float(obj["x1"]), float(obj["y1"]), float(obj["x2"]), float(obj["y2"]))
        class_id = obj["class"]
    except (KeyError, TypeError, ValueError) as e:
        raise ValueError("%s line %s: bad box %r (%s)" % (path, line_no, obj, e))
    if not isinstance(class_id, int) or isinstance(class_id, bool):
        raise ValueError("%s line %s: class id must be an integer, got %r" % (path, line_no, class_id))
    difficult = obj.get("difficult", False)
    if not isinstance(difficult, bool):
        raise ValueError("%s line %s: difficult must be a boolean" % (path, line_no))
    return box, class_id, difficult


def read_annotations(path, num_classes=None):
    """Parse a JSON-lines dataset file

    Args:
        path (str): dataset file; image paths inside are relative to it
        num_classes (int): if given, class ids must be < num_classes

    Returns:
        list[DatasetRecord]

    Raises:
        ValueError: malformed lines, boxes outside their image, unknown class ids
        OSError: missing dataset or image files
    """
    base = os.path.dirname(os.path.abspath(path))
    records = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValueError("%s line %s: malformed JSON (%s)" % (path, line_no, e))
            if not isinstance(obj, dict) or "image" not in obj:
                raise ValueError("%s line %s: record needs an \"image\" key" % (path, line_no))
            image_path = os.path.join(base, obj["image"])
            width, height = read_ppm_size(image_path)
            gts = []
            for box_obj in obj.get("boxes", []):
                box, class_id, difficult = _parse_box(box_obj, line_no, path)
                x1, y1, x2, y2 = box
                if not (0 <= x1 <= x2 <= width and 0 <= y1 <= y2 <= height):
                    raise ValueError(
                        "%s line %s: box %s outside image %sx%s" % (path, line_no, box, width, height)
                    )
                if class_id < 0 or (num_classes is not None and class_id >= num_classes):
                    raise ValueError(
                        "%s line %s: unknown class id %s (num_classes=%s)"
                        % (path, line_no, class_id, num_classes)
                    )
                gts.append(GroundTruth(box, class_id, difficult))
            records.append(DatasetRecord(image_path, gts, width, height))
    logger.debug("Read %s records from %s", len(records), path)
    return records


def write_annotations(path, records):
    """Write records as JSON lines, image paths relative to `path`"""
    base = os.path.dirname(os.path.abspath(path))
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            line = {
                "image": os.path.relpath(rec.image_path, base),
                "boxes": [
                    {
                        "x1": gt.box[0],
                        "y1": gt.box[1],
                        "x2": gt.box[2],
                        "y2": gt.box[3],
                        "class": gt.class_id,
                        "difficult": gt.difficult,
                    }
                    for gt in rec.boxes
                ],
            }
            f.write(json.dumps(line) + "\n")
