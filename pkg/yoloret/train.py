"""train.py
Anchor assignment, detection loss, learning-rate schedule, SGD and the
two-phase (frozen, then full) training loop.
"""
import math
from collections import OrderedDict, namedtuple
from dataclasses import dataclass, field
from typing import List

import numpy as np
import pandas as pd
from scipy.special import expit
from tqdm import tqdm

from .boxes import GroundTruth, giou_with_grad, iou_matrix
from .config import TrainConfig
from .head import letterbox, validate_anchors
from .log import get_log, log_runtime
from .tensor import GradientLedger, Tensor, backward, record

logger = get_log()

Positive = namedtuple("Positive", "image gt scale row col anchor")
TrainSample = namedtuple("TrainSample", "image gts")

CURVE_COLUMNS = ["step", "phase", "lr", "total", "box", "obj", "cls"]


@dataclass
class AnchorAssignment:
    """Positive slots and ignore masks for one batch

    Attributes:
        positives (list[Positive]): exactly one per ground truth
        ignore (list[ndarray]): per scale, bool (n, A, h, w); True where a
            non-positive prediction is left out of the objectness loss
        strides (tuple): output strides, finest first
    """

    positives: List[Positive] = field(default_factory=list)
    ignore: list = field(default_factory=list)
    strides: tuple = ()

    def positives_at(self, scale):
        return [p for p in self.positives if p.scale == scale]


def _shape_iou(gw, gh, pw, ph):
    inter = min(gw, pw) * min(gh, ph)
    union = gw * gh + pw * ph - inter
    return inter / union if union > 0 else 0.0


def assign_anchors(gts_batch, anchors, strides, image_size, ignore_iou=0.5):
    """Match every ground truth to one anchor over all scales

    The anchor with the highest width/height IoU (both boxes centred on the
    origin) wins, ties going to the finest scale and lowest anchor index.
    The positive cell is the cell holding the box centre at that scale.
    Other anchors at their own centre cell reaching `ignore_iou` are marked
    ignored.

    Args:
        gts_batch (list[list[GroundTruth]]): ground truth per image
        anchors (list): per scale, a list of (p_w, p_h)
        strides (sequence): output strides matching `anchors`
        image_size (tuple): (width, height) of the network input

    Raises:
        ValueError: if a box centre lies outside the image
    """
    validate_anchors(anchors, len(strides))
    width, height = image_size
    n = len(gts_batch)
    num_anchors = len(anchors[0])
    grids = [(height // s, width // s) for s in strides]
    ignore = [np.zeros((n, num_anchors, h, w), dtype=bool) for h, w in grids]
    flat = [(si, ai, pw, ph) for si, group in enumerate(anchors) for ai, (pw, ph) in enumerate(group)]

    positives = []
    for b, gts in enumerate(gts_batch):
        for gi, gt in enumerate(gts):
            x1, y1, x2, y2 = gt.box
            cx, cy = (x1 + x2) / 2.0, (y1 + y2) / 2.0
            if not (0 <= cx <= width and 0 <= cy <= height):
                raise ValueError(
                    "ground truth centre (%s, %s) outside image %sx%s" % (cx, cy, width, height)
                )
            gw, gh = x2 - x1, y2 - y1
            ious = [_shape_iou(gw, gh, pw, ph) for _, _, pw, ph in flat]
            best = int(np.argmax(ious))
            for k, (si, ai, _, _) in enumerate(flat):
                h, w = grids[si]
                row = min(int(cy // strides[si]), h - 1)
                col = min(int(cx // strides[si]), w - 1)
                if k == best:
                    positives.append(Positive(b, gi, si, row, col, ai))
                elif ious[k] >= ignore_iou:
                    ignore[si][b, ai, row, col] = True
    for p in positives:
        ignore[p.scale][p.image, p.anchor, p.row, p.col] = False
    return AnchorAssignment(positives, ignore, tuple(strides))


def _decode_scale(p, stride, group):
    """Boxes (n, A, h, w, 4) and the sigmoid of t_x, t_y for one scale"""
    n, A, _, h, w = p.shape
    cy, cx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    pw = np.array([a[0] for a in group], dtype=np.float64)[None, :, None, None]
    ph = np.array([a[1] for a in group], dtype=np.float64)[None, :, None, None]
    sx, sy = expit(p[:, :, 0]), expit(p[:, :, 1])
    bx, by = (sx + cx) * stride, (sy + cy) * stride
    bw, bh = pw * np.exp(p[:, :, 2]), ph * np.exp(p[:, :, 3])
    boxes = np.stack([bx - bw / 2, by - bh / 2, bx + bw / 2, by + bh / 2], axis=-1)
    return boxes, sx, sy, bw, bh


def detection_loss(raw, assignment, gts_batch, anchors, cfg=None):
    """GIoU box loss + objectness BCE + class BCE, normalized by positives

    Args:
        raw (RawPrediction): head output for the batch
        assignment (AnchorAssignment): from `assign_anchors`
        gts_batch (list[list[GroundTruth]])
        anchors (list): per scale anchor sizes used to build `assignment`
        cfg (TrainConfig): loss weights and ignore threshold

    Returns:
        tuple[Tensor, dict]: the 0-d loss (recorded on the active ledger) and
            its weighted components "box", "obj", "cls", "total"
    """
    cfg = TrainConfig() if cfg is None else cfg
    if raw.strides != list(assignment.strides):
        raise ValueError("prediction strides %s differ from assignment %s" % (raw.strides, assignment.strides))
    validate_anchors(anchors, len(raw), raw.num_anchors)
    norm = float(max(len(assignment.positives), 1))
    K = raw.num_classes
    box_sum = obj_sum = cls_sum = 0.0
    grads = []
    for si, (stride, tensor) in enumerate(raw):
        p = raw.split(stride).astype(np.float64)
        g = np.zeros_like(p)
        boxes, sx, sy, bw, bh = _decode_scale(p, stride, anchors[si])

        ignore = assignment.ignore[si].copy()
        for b, gts in enumerate(gts_batch):
            if gts:
                gt_boxes = np.array([gt.box for gt in gts], dtype=np.float64)
                best = iou_matrix(boxes[b].reshape(-1, 4), gt_boxes).max(axis=1)
                ignore[b] |= (best >= cfg.ignore_iou).reshape(ignore.shape[1:])
        target = np.zeros(ignore.shape)
        for pos in assignment.positives_at(si):
            target[pos.image, pos.anchor, pos.row, pos.col] = 1.0
        weight = ((~ignore) | (target > 0)).astype(np.float64)

        t_obj = p[:, :, 4]
        obj_sum += float(np.sum(weight * (np.logaddexp(0.0, t_obj) - target * t_obj)))
        g[:, :, 4] += cfg.lambda_obj / norm * weight * (expit(t_obj) - target)

        for pos in assignment.positives_at(si):
            b, a, r, c = pos.image, pos.anchor, pos.row, pos.col
            gt = gts_batch[b][pos.gt]
            value, dg = giou_with_grad(boxes[b, a, r, c][None], np.array([gt.box]))
            dg = -dg[0]
            box_sum += 1.0 - float(value[0])
            scale = cfg.lambda_box / norm
            g[b, a, 0, r, c] += scale * (dg[0] + dg[2]) * stride * sx[b, a, r, c] * (1 - sx[b, a, r, c])
            g[b, a, 1, r, c] += scale * (dg[1] + dg[3]) * stride * sy[b, a, r, c] * (1 - sy[b, a, r, c])
            g[b, a, 2, r, c] += scale * (dg[2] - dg[0]) / 2 * bw[b, a, r, c]
            g[b, a, 3, r, c] += scale * (dg[3] - dg[1]) / 2 * bh[b, a, r, c]

            logits = p[b, a, 5:, r, c]
            onehot = np.zeros(K)
            onehot[gt.class_id] = 1.0
            cls_sum += float(np.sum(np.logaddexp(0.0, logits) - onehot * logits))
            g[b, a, 5:, r, c] += cfg.lambda_cls / norm * (expit(logits) - onehot)
        grads.append(g.reshape(tensor.shape))

    parts = OrderedDict(
        [
            ("box", cfg.lambda_box * box_sum / norm),
            ("obj", cfg.lambda_obj * obj_sum / norm),
            ("cls", cfg.lambda_cls * cls_sum / norm),
        ]
    )
    parts["total"] = parts["box"] + parts["obj"] + parts["cls"]
    inputs = [t for _, t in raw]
    loss = Tensor(np.asarray(parts["total"], dtype=inputs[0].dtype))

    def vjp(g_out):
        return [(g_out * gs).astype(t.dtype) for gs, t in zip(grads, inputs)]

    return record(loss, inputs, vjp), parts


def cosine_lr(step, total, lr_max, lr_min=0.0):
    """lr_min + (lr_max - lr_min) * (1 + cos(pi * step / total)) / 2"""
    if total == 0:
        raise ValueError("cosine schedule needs total > 0")
    if not 0 <= step <= total:
        raise ValueError("step %s outside [0, %s]" % (step, total))
    return lr_min + 0.5 * (lr_max - lr_min) * (1 + math.cos(math.pi * step / total))


def sgd_step(params, grads, lr, momentum, velocity):
    """SGD with momentum: v <- mu * v + g, p <- p - lr * v

    Args:
        params (Mapping): name -> Tensor, updated in place (data rebound)
        grads (Mapping): name -> gradient array for every name in `params`
        lr (float)
        momentum (float): mu
        velocity (dict): name -> array, updated in place; missing entries start at 0

    Returns:
        Mapping: `params`
    """
    for name, tensor in params.items():
        if name not in grads:
            raise ValueError("no gradient for parameter %s" % name)
        g = np.asarray(grads[name])
        if g.shape != tensor.shape:
            raise ValueError(
                "gradient shape %s does not match parameter %s shape %s" % (g.shape, name, tensor.shape)
            )
        v = velocity.get(name)
        v = g.astype(tensor.dtype) if v is None else (momentum * v + g).astype(tensor.dtype)
        velocity[name] = v
        tensor.data = (tensor.data - lr * v).astype(tensor.dtype)
    return params


def prepare_samples(records, resolution):
    """Letterbox dataset records to the network input, boxes included"""
    samples = []
    for rec in records:
        image, lb = letterbox(rec.load_image(), resolution)
        gts = [GroundTruth(lb.to_network(gt.box), gt.class_id, gt.difficult) for gt in rec.boxes]
        samples.append(TrainSample(image.data[0], gts))
    return samples


@log_runtime
def train_two_phase(model, dataset, cfg, progress=False):
    """Phase 1 trains only non-frozen parameters, phase 2 trains all

    Each phase restarts the momentum buffer and runs its own cosine
    schedule from its starting learning rate down to cfg.lr_min.

    Args:
        model (YoloReT): trained in place
        dataset (list[TrainSample]): images at the model resolution
        cfg (TrainConfig)
        progress (bool): show a tqdm bar

    Returns:
        tuple[YoloReT, pandas.DataFrame]: the model and one loss-curve row per step
    """
    if not dataset:
        raise ValueError("cannot train on an empty dataset")
    rng = np.random.default_rng(cfg.seed)
    anchors = model.cfg.resolved_anchors()
    strides = model.cfg.output_strides
    res = model.cfg.input_resolution
    all_params = OrderedDict(model.named_parameters())
    steps_per_epoch = int(math.ceil(len(dataset) / float(cfg.batch_size)))
    phases = [
        (1, cfg.epochs_phase1, cfg.lr_phase1, [n for n in all_params if n not in model.frozen]),
        (2, cfg.epochs_phase2, cfg.lr_phase2, list(all_params)),
    ]
    total_steps = steps_per_epoch * (cfg.epochs_phase1 + cfg.epochs_phase2)
    rows = []
    step = 0
    bar = tqdm(total=total_steps, disable=not progress, desc="train")
    try:
        for phase, epochs, lr_max, names in phases:
            phase_steps = epochs * steps_per_epoch
            if phase_steps == 0:
                continue
            trainable = OrderedDict((n, all_params[n]) for n in names)
            for n, t in all_params.items():
                t.requires_grad = n in trainable
            logger.info(
                "Phase %s: %s steps over %s of %s tensors, lr %s",
                phase,
                phase_steps,
                len(trainable),
                len(all_params),
                lr_max,
            )
            velocity = {}
            t_phase = 0
            for _ in range(epochs):
                order = rng.permutation(len(dataset))
                for start in range(0, len(dataset), cfg.batch_size):
                    batch = [dataset[i] for i in order[start : start + cfg.batch_size]]
                    images = Tensor(np.stack([s.image for s in batch]))
                    gts = [s.gts for s in batch]
                    lr = cosine_lr(t_phase, phase_steps, lr_max, cfg.lr_min)

                    ledger = GradientLedger().watch(trainable.items())
                    with ledger.recording():
                        raw = model(images, training=True)
                        assignment = assign_anchors(gts, anchors, strides, (res, res), cfg.ignore_iou)
                        loss, parts = detection_loss(raw, assignment, gts, anchors, cfg)
                    grads = backward(ledger, loss)
                    sgd_step(trainable, grads, lr, cfg.momentum, velocity)

                    rows.append(
                        {
                            "step": step,
                            "phase": phase,
                            "lr": lr,
                            "total": parts["total"],
                            "box": parts["box"],
                            "obj": parts["obj"],
                            "cls": parts["cls"],
                        }
                    )
                    bar.set_postfix(loss="%.4f" % parts["total"], phase=phase)
                    bar.update(1)
                    step += 1
                    t_phase += 1
    finally:
        bar.close()
        for t in all_params.values():
            t.requires_grad = True
    curve = pd.DataFrame(rows, columns=CURVE_COLUMNS)
    if len(curve):
        logger.success("Finished %s steps, final loss %.5f", len(curve), curve["total"].iloc[-1])
    return model, curve


def save_loss_curve(curve, path):
    curve.to_csv(path, index=False)
