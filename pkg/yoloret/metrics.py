"""metrics.py
VOC- and COCO-style average precision

Detections and ground truths are given per image as lists of `Detection`
and `GroundTruth`. Matching is greedy by confidence within each image and
class; the per-image results are reduced in image order.

Detections with identical confidence are scored as one group (precision and
recall are read only after the whole group), so AP does not depend on how
tied detections are ordered.
"""
from collections import OrderedDict, namedtuple

import numpy as np

from .boxes import iou_matrix
from .constants import AREA_RANGES, COCO_IOU_THRESHOLDS, VOC_IOU_THRESHOLD
from .log import get_log
from .utils import make_executor

logger = get_log()

PRPoint = namedtuple("PRPoint", "recall precision")

TP, FP, IGNORED = 1, 0, -1


def _greedy_match(ious, gt_ignore, iou_thresh):
    """Labels for detections already in priority order

    Each detection takes the highest-IoU unmatched, non-ignored GT with
    IoU >= iou_thresh (TP). Failing that, overlapping an ignored GT makes
    it IGNORED, otherwise it is FP.
    """
    nd, ng = ious.shape
    labels = np.full(nd, FP, dtype=np.int8)
    taken = np.zeros(ng, dtype=bool)
    for d in range(nd):
        if ng == 0:
            continue
        ok = ious[d] >= iou_thresh
        candidates = np.flatnonzero(ok & ~taken & ~gt_ignore)
        if len(candidates):
            g = candidates[np.argmax(ious[d, candidates])]
            taken[g] = True
            labels[d] = TP
        elif np.any(ok & gt_ignore):
            labels[d] = IGNORED
    return labels


def _priority(dets):
    return sorted(range(len(dets)), key=lambda i: (-dets[i].confidence, i))


def match_detections(dets, gts, iou_thresh=VOC_IOU_THRESHOLD):
    """TP (1) / FP (0) / ignored (-1) label per detection, in input order

    Args:
        dets (list[Detection]): detections of one image and one class
        gts (list[GroundTruth]): ground truths of the same image and class
        iou_thresh (float)
    """
    order = _priority(dets)
    boxes = np.array([dets[i].box for i in order], dtype=np.float64).reshape(-1, 4)
    gt_boxes = np.array([g.box for g in gts], dtype=np.float64).reshape(-1, 4)
    gt_ignore = np.array([g.difficult for g in gts], dtype=bool)
    sorted_labels = _greedy_match(iou_matrix(boxes, gt_boxes), gt_ignore, iou_thresh)
    labels = np.empty(len(dets), dtype=np.int8)
    labels[order] = sorted_labels
    return labels


def pr_curve(labels, confidences, n_positives):
    """Precision/recall after each confidence group, highest confidence first"""
    labels = np.asarray(labels)
    conf = np.asarray(confidences, dtype=np.float64)
    order = np.argsort(-conf, kind="stable")
    labels, conf = labels[order], conf[order]
    keep = labels != IGNORED
    labels, conf = labels[keep], conf[keep]
    if len(labels) == 0:
        return []
    tp = np.cumsum(labels == TP)
    fp = np.cumsum(labels == FP)
    group_end = np.r_[conf[1:] != conf[:-1], True]
    tp, fp = tp[group_end], fp[group_end]
    recall = tp / float(n_positives) if n_positives > 0 else np.zeros(len(tp))
    precision = tp / (tp + fp).astype(np.float64)
    return [PRPoint(float(r), float(p)) for r, p in zip(recall, precision)]


def average_precision(labels, confidences, n_positives):
    """All-point interpolated AP

    The precision envelope is made non-increasing in recall before the area
    under the curve is summed. 0.0 when there are no positives.
    """
    if n_positives < 0:
        raise ValueError("n_positives must be >= 0, got %s" % n_positives)
    curve = pr_curve(labels, confidences, n_positives)
    if n_positives == 0 or not curve:
        return 0.0
    mrec = np.concatenate([[0.0], [p.recall for p in curve], [1.0]])
    mpre = np.concatenate([[0.0], [p.precision for p in curve], [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    idx = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[idx + 1] - mrec[idx]) * mpre[idx + 1]))


def _in_range(area, bounds):
    lo, hi = bounds
    return lo <= area < hi


def _evaluate_image(dets, gts, thresholds, ranges):
    """Per class: confidences, labels[threshold, range, det], positives[range]"""
    out = {}
    class_ids = set(d.class_id for d in dets) | set(g.class_id for g in gts)
    for c in class_ids:
        cdets = [d for d in dets if d.class_id == c]
        cgts = [g for g in gts if g.class_id == c]
        order = _priority(cdets)
        cdets = [cdets[i] for i in order]
        boxes = np.array([d.box for d in cdets], dtype=np.float64).reshape(-1, 4)
        gt_boxes = np.array([g.box for g in cgts], dtype=np.float64).reshape(-1, 4)
        ious = iou_matrix(boxes, gt_boxes)
        difficult = np.array([g.difficult for g in cgts], dtype=bool)
        gt_area = np.array([g.area for g in cgts], dtype=np.float64)
        det_area = np.array([d.area for d in cdets], dtype=np.float64)

        labels = np.zeros((len(thresholds), len(ranges), len(cdets)), dtype=np.int8)
        npos = np.zeros(len(ranges), dtype=np.int64)
        for r, bounds in enumerate(ranges):
            outside = np.array([not _in_range(a, bounds) for a in gt_area], dtype=bool)
            gt_ignore = difficult | outside
            npos[r] = int(np.sum(~gt_ignore))
            det_outside = np.array([not _in_range(a, bounds) for a in det_area], dtype=bool)
            for t, thresh in enumerate(thresholds):
                lab = _greedy_match(ious, gt_ignore, thresh)
                lab[(lab == FP) & det_outside] = IGNORED
                labels[t, r] = lab
        conf = np.array([d.confidence for d in cdets], dtype=np.float64)
        out[c] = (conf, labels, npos)
    return out


def _accumulate(all_dets, all_gts, thresholds, ranges, max_workers=1):
    """AP table [class][threshold, range] with positives per range"""
    if len(all_dets) != len(all_gts):
        raise ValueError(
            "got detections for %s images and ground truth for %s" % (len(all_dets), len(all_gts))
        )
    with make_executor(max_workers) as executor:
        futures = [
            executor.submit(_evaluate_image, d, g, thresholds, ranges)
            for d, g in zip(all_dets, all_gts)
        ]
        per_image = [f.result() for f in futures]

    merged = {}
    for image_result in per_image:
        for c, (conf, labels, npos) in image_result.items():
            if c not in merged:
                merged[c] = ([], [], np.zeros(len(ranges), dtype=np.int64))
            merged[c][0].append(conf)
            merged[c][1].append(labels)
            merged[c][2][:] += npos

    table = OrderedDict()
    for c in sorted(merged):
        confs, labels, npos = merged[c]
        conf = np.concatenate(confs)
        lab = np.concatenate(labels, axis=2)
        aps = np.zeros((len(thresholds), len(ranges)))
        for t in range(len(thresholds)):
            for r in range(len(ranges)):
                aps[t, r] = average_precision(lab[t, r], conf, int(npos[r]))
        table[c] = (aps, npos)
    return table


def evaluate_voc(all_dets, all_gts, iou_thresh=VOC_IOU_THRESHOLD, class_names=None, max_workers=1):
    """Per-class AP and their mean over classes that have positives

    Args:
        all_dets (list[list[Detection]]): per image
        all_gts (list[list[GroundTruth]]): per image
        iou_thresh (float)
        class_names (sequence): optional names used as report keys
        max_workers (int): threads for per-image matching

    Returns:
        dict: {"per_class": {name: AP}, "mAP": float, "iou_thresh": float,
            "num_images": int}
    """
    table = _accumulate(all_dets, all_gts, [iou_thresh], [AREA_RANGES["all"]], max_workers)
    per_class = OrderedDict()
    for c, (aps, npos) in table.items():
        if npos[0] > 0:
            per_class[_class_key(c, class_names)] = float(aps[0, 0])
    mean = float(np.mean(list(per_class.values()))) if per_class else 0.0
    return {
        "metric": "voc",
        "iou_thresh": float(iou_thresh),
        "num_images": len(all_gts),
        "per_class": per_class,
        "mAP": mean,
    }


def _class_key(c, class_names):
    if class_names is not None and 0 <= c < len(class_names):
        return class_names[c]
    return str(c)


def evaluate_coco(all_dets, all_gts, max_workers=1):
    """AP over IoU 0.5:0.05:0.95, AP50, AP75 and the small/medium/large APs

    Areas are in the pixels of the boxes given (source-image pixels). A
    bucket without any ground truth reports None.
    """
    range_names = ["all", "small", "medium", "large"]
    ranges = [AREA_RANGES[n] for n in range_names]
    thresholds = list(COCO_IOU_THRESHOLDS)
    table = _accumulate(all_dets, all_gts, thresholds, ranges, max_workers)

    def mean_ap(t_idx, r):
        vals = [aps[t_idx, r] for aps, npos in table.values() if npos[r] > 0]
        return float(np.mean(vals)) if vals else None

    def over_thresholds(r):
        vals = [mean_ap(t, r) for t in range(len(thresholds))]
        return None if vals[0] is None else float(np.mean(vals))

    return {
        "metric": "coco",
        "num_images": len(all_gts),
        "AP": over_thresholds(0),
        "AP50": mean_ap(thresholds.index(0.5), 0),
        "AP75": mean_ap(thresholds.index(0.75), 0),
        "APs": over_thresholds(1),
        "APm": over_thresholds(2),
        "APl": over_thresholds(3),
    }
