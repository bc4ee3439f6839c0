"""boxes.py
Box types and geometry: IoU, GIoU (with gradients for the loss), NMS

Boxes are (x1, y1, x2, y2) in pixels.
"""
from dataclasses import dataclass

import numpy as np

from .log import get_log

logger = get_log()


@dataclass(frozen=True)
class Detection:
    box: tuple
    class_id: int
    confidence: float

    def __post_init__(self):
        object.__setattr__(self, "box", tuple(float(v) for v in self.box))
        _check_box(self.box)
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence %s outside [0, 1]" % self.confidence)

    @property
    def area(self):
        return box_area(self.box)

    def to_dict(self):
        x1, y1, x2, y2 = self.box
        return {
            "x1": x1,
            "y1": y1,
            "x2": x2,
            "y2": y2,
            "class": int(self.class_id),
            "confidence": float(self.confidence),
        }


@dataclass(frozen=True)
class GroundTruth:
    box: tuple
    class_id: int
    difficult: bool = False

    def __post_init__(self):
        object.__setattr__(self, "box", tuple(float(v) for v in self.box))
        _check_box(self.box)
        if self.class_id < 0:
            raise ValueError("class id must be non-negative, got %s" % self.class_id)

    @property
    def area(self):
        return box_area(self.box)


def _check_box(box):
    if len(box) != 4:
        raise ValueError("a box needs 4 coordinates, got %s" % (box,))
    x1, y1, x2, y2 = box
    if not (x2 >= x1 and y2 >= y1):
        raise ValueError("invalid box %s: need x2 >= x1 and y2 >= y1" % (box,))


def box_area(box):
    x1, y1, x2, y2 = box
    return (x2 - x1) * (y2 - y1)


def _pair_iou(ax1, ay1, ax2, ay2, bx1, by1, bx2, by2):
    area_a = (ax2 - ax1) * (ay2 - ay1)
    area_b = (bx2 - bx1) * (by2 - by1)
    if area_a <= 0 or area_b <= 0:
        return 0.0
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (area_a + area_b - inter)


def _greedy_suppress_py(boxes, classes, iou_thresh):
    n = boxes.shape[0]
    keep = np.zeros(n, dtype=bool)
    kept = []
    for i in range(n):
        bi = boxes[i]
        ok = True
        for j in kept:
            if classes[j] != classes[i]:
                continue
            bj = boxes[j]
            if _pair_iou(bi[0], bi[1], bi[2], bi[3], bj[0], bj[1], bj[2], bj[3]) >= iou_thresh:
                ok = False
                break
        if ok:
            keep[i] = True
            kept.append(i)
    return keep


# Use the jit-compiled suppression loop if numba is available
try:
    from .box_numba import greedy_suppress
except ImportError:
    logger.debug("numba not available, using python-only NMS loop")
    greedy_suppress = _greedy_suppress_py


def iou(a, b):
    """Intersection over union of two boxes; 0 if either has zero area"""
    return float(_pair_iou(*(float(v) for v in a), *(float(v) for v in b)))


def giou(a, b):
    """Generalized IoU: IoU - |C minus (A u B)| / |C|, C the enclosing box"""
    a = [float(v) for v in a]
    b = [float(v) for v in b]
    area_a, area_b = box_area(a), box_area(b)
    if area_a <= 0 or area_b <= 0:
        return 0.0
    iw = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    ih = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = iw * ih
    union = area_a + area_b - inter
    enclosing = (max(a[2], b[2]) - min(a[0], b[0])) * (max(a[3], b[3]) - min(a[1], b[1]))
    return inter / union - (enclosing - union) / enclosing


def iou_matrix(a, b):
    """Pairwise IoU between (N, 4) and (M, 4) box arrays, as (N, M) float64"""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = iw * ih
    union = area_a[:, None] + area_b[None, :] - inter
    valid = (iw > 0) & (ih > 0) & (area_a[:, None] > 0) & (area_b[None, :] > 0)
    out = np.zeros(inter.shape, dtype=np.float64)
    np.divide(inter, union, out=out, where=valid)
    return out


def giou_with_grad(pred, target):
    """Row-wise GIoU of predicted vs target boxes and d(giou)/d(pred)

    Args:
        pred (ndarray): (P, 4) boxes with positive area
        target (ndarray): (P, 4) boxes with positive area

    Returns:
        tuple[ndarray, ndarray]: giou (P,), gradient (P, 4) w.r.t. pred coordinates
    """
    p = np.asarray(pred, dtype=np.float64).reshape(-1, 4)
    t = np.asarray(target, dtype=np.float64).reshape(-1, 4)
    pw, ph = p[:, 2] - p[:, 0], p[:, 3] - p[:, 1]
    area_p = pw * ph
    area_t = (t[:, 2] - t[:, 0]) * (t[:, 3] - t[:, 1])

    iw = np.minimum(p[:, 2], t[:, 2]) - np.maximum(p[:, 0], t[:, 0])
    ih = np.minimum(p[:, 3], t[:, 3]) - np.maximum(p[:, 1], t[:, 1])
    overlaps = (iw > 0) & (ih > 0)
    iw_c = np.where(overlaps, iw, 0.0)
    ih_c = np.where(overlaps, ih, 0.0)
    inter = iw_c * ih_c
    union = area_p + area_t - inter
    cw = np.maximum(p[:, 2], t[:, 2]) - np.minimum(p[:, 0], t[:, 0])
    ch = np.maximum(p[:, 3], t[:, 3]) - np.minimum(p[:, 1], t[:, 1])
    enclosing = cw * ch
    value = inter / union - 1.0 + union / enclosing

    d_inter = np.stack(
        [
            -np.where(p[:, 0] > t[:, 0], ih_c, 0.0),
            -np.where(p[:, 1] > t[:, 1], iw_c, 0.0),
            np.where(p[:, 2] < t[:, 2], ih_c, 0.0),
            np.where(p[:, 3] < t[:, 3], iw_c, 0.0),
        ],
        axis=1,
    )
    d_area = np.stack([-ph, -pw, ph, pw], axis=1)
    d_union = d_area - d_inter
    d_enclosing = np.stack(
        [
            -np.where(p[:, 0] < t[:, 0], ch, 0.0),
            -np.where(p[:, 1] < t[:, 1], cw, 0.0),
            np.where(p[:, 2] > t[:, 2], ch, 0.0),
            np.where(p[:, 3] > t[:, 3], cw, 0.0),
        ],
        axis=1,
    )
    grad = (
        d_inter / union[:, None]
        - (inter / union ** 2)[:, None] * d_union
        + d_union / enclosing[:, None]
        - (union / enclosing ** 2)[:, None] * d_enclosing
    )
    return value, grad


def nms_order(dets):
    """Suppression priority: confidence descending, then class id, then input order"""
    return sorted(range(len(dets)), key=lambda i: (-dets[i].confidence, dets[i].class_id, i))


def nms(dets, iou_thresh):
    """Per-class greedy non-maximum suppression

    Args:
        dets (list[Detection])
        iou_thresh (float): a box is dropped when its IoU with a kept box of
            the same class is >= iou_thresh

    Returns:
        list[Detection]: kept detections in priority order
    """
    if not dets:
        return []
    order = nms_order(dets)
    boxes = np.array([dets[i].box for i in order], dtype=np.float64).reshape(-1, 4)
    classes = np.array([dets[i].class_id for i in order], dtype=np.int64)
    keep = greedy_suppress(boxes, classes, float(iou_thresh))
    return [dets[i] for i, k in zip(order, keep) if k]
