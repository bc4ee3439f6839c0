"""Jit-compiled versions of the hot loops in boxes.py

Must give results identical to the python versions: same arithmetic in the
same order, float64 throughout.
"""
import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def pair_iou(ax1, ay1, ax2, ay2, bx1, by1, bx2, by2):
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


@njit(cache=True, nogil=True)
def greedy_suppress(boxes, classes, iou_thresh):
    """Keep mask for boxes already sorted by descending priority

    A box is kept iff its IoU with every previously kept box of the same
    class is below `iou_thresh`.
    """
    n = boxes.shape[0]
    keep = np.zeros(n, dtype=np.bool_)
    kept = np.empty(n, dtype=np.int64)
    num_kept = 0
    for i in range(n):
        ok = True
        for k in range(num_kept):
            j = kept[k]
            if classes[j] != classes[i]:
                continue
            overlap = pair_iou(
                boxes[i, 0], boxes[i, 1], boxes[i, 2], boxes[i, 3],
                boxes[j, 0], boxes[j, 1], boxes[j, 2], boxes[j, 3],
            )
            if overlap >= iou_thresh:
                ok = False
                break
        if ok:
            keep[i] = True
            kept[num_kept] = i
            num_kept += 1
    return keep
