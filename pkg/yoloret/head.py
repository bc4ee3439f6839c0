"""head.py
Feature aggregation (PANet-lite / FPN / none), the YOLO prediction head,
box decoding and letterbox preprocessing.
"""
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import kernels
from .backbone import FeaturePyramid
from .blocks import BlockSpec, ConvBN, Layer, MBConv, PointwiseUnit
from .boxes import Detection
from .constants import ANCHOR_REFERENCE_RESOLUTION, DEFAULT_ANCHORS, LETTERBOX_FILL, MAX_STRIDE
from .tensor import Tensor, make_rng

AGGREGATIONS = ("panet", "fpn", "none")
PANET_WIDTHS = (64, 96, 128)
PANET_EXPANSION = 3
PANET_KERNEL = 3


def default_anchors(resolution):
    """YOLOv3 anchor triplets scaled from a 416 input to `resolution`"""
    scale = resolution / float(ANCHOR_REFERENCE_RESOLUTION)
    return [[(w * scale, h * scale) for w, h in group] for group in DEFAULT_ANCHORS]


def validate_anchors(anchors, num_scales, num_anchors=None):
    if len(anchors) != num_scales:
        raise ValueError("got %s anchor groups for %s output scales" % (len(anchors), num_scales))
    counts = set(len(group) for group in anchors)
    if len(counts) != 1 or (num_anchors is not None and counts != {num_anchors}):
        raise ValueError("every scale needs the same anchor count, got %s" % [len(g) for g in anchors])
    for group in anchors:
        for pw, ph in group:
            if pw <= 0 or ph <= 0:
                raise ValueError("anchor sizes must be positive, got (%s, %s)" % (pw, ph))


class PanetLite(Layer):
    """Per-scale MBConvSE entry, then optional top-down and bottom-up paths

    Cross-scale connections are single pointwise units. With mode "fpn" only
    the top-down path runs; with "none" only the entry blocks.

    Args:
        in_channels (dict): stride -> raw channel count
        widths (sequence): output width per stride, finest first
        mode (str): panet, fpn or none
    """

    def __init__(
        self,
        in_channels,
        widths=PANET_WIDTHS,
        mode="panet",
        expansion=PANET_EXPANSION,
        se_reduction=4,
        rng=None,
    ):
        super().__init__()
        if mode not in AGGREGATIONS:
            raise ValueError("aggregation must be one of %s, got %r" % (AGGREGATIONS, mode))
        rng = make_rng(rng)
        self.strides = sorted(in_channels)
        if len(widths) != len(self.strides):
            raise ValueError("got %s widths for %s scales" % (len(widths), len(self.strides)))
        self.widths = dict(zip(self.strides, widths))
        self.mode = mode

        def mbse(c_in, c_out):
            return MBConv(
                BlockSpec(
                    "mbconvse",
                    c_in,
                    c_out,
                    expansion=expansion,
                    kernel=PANET_KERNEL,
                    se_reduction=se_reduction,
                ),
                rng=rng,
            )

        def pointwise(c_in, c_out):
            return PointwiseUnit(BlockSpec("pointwise", c_in, c_out), rng=rng)

        self.entry = self.add_child("entry", Layer())
        for s in self.strides:
            self.entry.add_child(s, mbse(in_channels[s], self.widths[s]))
        self.td_lateral = self.add_child("td_lateral", Layer())
        self.td_block = self.add_child("td_block", Layer())
        self.bu_lateral = self.add_child("bu_lateral", Layer())
        self.bu_block = self.add_child("bu_block", Layer())
        if mode in ("panet", "fpn"):
            for coarse, fine in self._top_down_pairs():
                self.td_lateral.add_child(fine, pointwise(self.widths[coarse], self.widths[fine]))
                self.td_block.add_child(fine, mbse(self.widths[fine], self.widths[fine]))
        if mode == "panet":
            for fine, coarse in self._bottom_up_pairs():
                self.bu_lateral.add_child(coarse, pointwise(self.widths[fine], self.widths[coarse]))
                self.bu_block.add_child(coarse, mbse(self.widths[coarse], self.widths[coarse]))

    def _top_down_pairs(self):
        s = self.strides
        return [(s[i + 1], s[i]) for i in reversed(range(len(s) - 1))]

    def _bottom_up_pairs(self):
        s = self.strides
        return [(s[i], s[i + 1]) for i in range(len(s) - 1)]

    @property
    def out_channels(self):
        return dict(self.widths)

    def __call__(self, pyramid, training=False):
        if pyramid.strides != self.strides:
            raise ValueError(
                "aggregation built for strides %s, got a pyramid with %s"
                % (self.strides, pyramid.strides)
            )
        feats = {}
        for s in self.strides:
            feats[s] = self.entry.children[str(s)](pyramid[s], training=training)
        if self.mode == "none":
            return FeaturePyramid(sorted(feats.items()))

        top_down = dict(feats)
        for coarse, fine in self._top_down_pairs():
            up = kernels.resize(top_down[coarse], coarse // fine, "up")
            lateral = self.td_lateral.children[str(fine)](up, training=training)
            merged = kernels.eltwise_add([feats[fine], lateral])
            top_down[fine] = self.td_block.children[str(fine)](merged, training=training)
        if self.mode == "fpn":
            return FeaturePyramid(sorted(top_down.items()))

        bottom_up = dict(top_down)
        for fine, coarse in self._bottom_up_pairs():
            down = kernels.resize(bottom_up[fine], coarse // fine, "down")
            lateral = self.bu_lateral.children[str(coarse)](down, training=training)
            merged = kernels.eltwise_add([top_down[coarse], lateral])
            bottom_up[coarse] = self.bu_block.children[str(coarse)](merged, training=training)
        return FeaturePyramid(sorted(bottom_up.items()))

    def describe_pyramid(self, resolution, prefix=""):
        shapes = []
        for group in ("entry", "td_lateral", "td_block", "bu_lateral", "bu_block"):
            for key, layer in self.children[group].children.items():
                size = resolution // int(key)
                sh, _, _ = layer.describe(size, size, "%s%s.%s." % (prefix, group, key))
                shapes.extend(sh)
        return shapes


class RawPrediction(FeaturePyramid):
    """Per-stride head outputs with A * (5 + K) channels

    Channel layout per anchor: t_x, t_y, t_w, t_h, t_obj, K class logits.
    """

    def __init__(self, entries, num_anchors, num_classes):
        super().__init__(entries)
        self.num_anchors = num_anchors
        self.num_classes = num_classes
        per = 5 + num_classes
        for s, t in self.entries:
            if t.ndim != 4 or t.shape[1] != num_anchors * per:
                raise ValueError(
                    "prediction at stride %s has shape %s, expected %s channels"
                    % (s, t.shape, num_anchors * per)
                )

    def split(self, stride):
        """(n, A, 5 + K, h, w) view of the logits at one stride"""
        t = self[stride].data
        n, _, h, w = t.shape
        return t.reshape(n, self.num_anchors, 5 + self.num_classes, h, w)


class YoloHead(Layer):
    """One 1x1 conv with bias per stride, no activation"""

    def __init__(self, in_channels, num_classes, num_anchors=3, rng=None):
        super().__init__()
        rng = make_rng(rng)
        if num_classes < 1:
            raise ValueError("num_classes must be positive, got %s" % num_classes)
        self.num_classes = num_classes
        self.num_anchors = num_anchors
        self.strides = sorted(in_channels)
        out = num_anchors * (5 + num_classes)
        for s in self.strides:
            self.add_child(s, ConvBN(in_channels[s], out, 1, rng=rng, bn=False, bias=True))

    def __call__(self, features, training=False):
        if features.strides != self.strides:
            raise ValueError("head built for strides %s, got %s" % (self.strides, features.strides))
        entries = [(s, self.children[str(s)](features[s])) for s in self.strides]
        return RawPrediction(entries, self.num_anchors, self.num_classes)

    def describe_pyramid(self, resolution, prefix=""):
        shapes = []
        for s in self.strides:
            size = resolution // s
            sh, _, _ = self.children[str(s)].describe(size, size, "%s%d." % (prefix, s))
            shapes.extend(sh)
        return shapes


def decode_boxes(raw, anchors):
    """Decode every cell and anchor without thresholding

    Returns:
        tuple: per image, arrays (boxes (N, 4) unclipped, objectness (N,),
            class probabilities (N, K)) with N = sum over scales of A * h * w,
            ordered by scale, anchor, row, column
    """
    validate_anchors(anchors, len(raw), raw.num_anchors)
    per_scale = []
    for (stride, _), group in zip(raw, anchors):
        p = raw.split(stride).astype(np.float64)
        n, A, _, h, w = p.shape
        cy, cx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        pw = np.array([a[0] for a in group], dtype=np.float64)[None, :, None, None]
        ph = np.array([a[1] for a in group], dtype=np.float64)[None, :, None, None]
        bx = (expit(p[:, :, 0]) + cx) * stride
        by = (expit(p[:, :, 1]) + cy) * stride
        bw = pw * np.exp(p[:, :, 2])
        bh = ph * np.exp(p[:, :, 3])
        box = np.stack([bx - bw / 2, by - bh / 2, bx + bw / 2, by + bh / 2], axis=-1)
        obj = expit(p[:, :, 4])
        cls = expit(p[:, :, 5:]).transpose(0, 1, 3, 4, 2)
        per_scale.append((box.reshape(n, -1, 4), obj.reshape(n, -1), cls.reshape(n, -1, raw.num_classes)))
    n = per_scale[0][0].shape[0]
    return [
        (
            np.concatenate([b[i] for b, _, _ in per_scale]),
            np.concatenate([o[i] for _, o, _ in per_scale]),
            np.concatenate([c[i] for _, _, c in per_scale]),
        )
        for i in range(n)
    ]


def decode(raw, anchors, conf_thresh, image_size=None):
    """Thresholded detections per image

    Each cell and anchor yields at most one detection, for its most likely
    class, with confidence sigmoid(t_obj) * sigmoid(class logit). Boxes are
    clipped to the image.

    Args:
        raw (RawPrediction)
        anchors (list): per output stride, a list of (p_w, p_h)
        conf_thresh (float): keep detections with confidence >= conf_thresh
        image_size (tuple): (width, height); defaults to the network input size

    Returns:
        list[list[Detection]]: one list per image in the batch
    """
    if image_size is None:
        s0 = raw.strides[0]
        h, w = raw[s0].shape[2:]
        image_size = (w * s0, h * s0)
    width, height = image_size
    out = []
    for boxes, obj, cls in decode_boxes(raw, anchors):
        best = cls.argmax(axis=1)
        conf = obj * cls[np.arange(len(best)), best]
        dets = []
        for i in np.flatnonzero(conf >= conf_thresh):
            x1, y1, x2, y2 = boxes[i]
            box = (_clip(x1, width), _clip(y1, height), _clip(x2, width), _clip(y2, height))
            dets.append(Detection(box, int(best[i]), float(conf[i])))
        out.append(dets)
    return out


def _clip(v, hi):
    return min(max(v, 0.0), hi)


@dataclass(frozen=True)
class LetterboxRecord:
    """Mapping between source pixels and letterboxed network pixels"""

    src_width: int
    src_height: int
    target: int
    scale_x: float
    scale_y: float
    pad_x: int
    pad_y: int

    def to_network(self, box):
        x1, y1, x2, y2 = box
        return (
            x1 * self.scale_x + self.pad_x,
            y1 * self.scale_y + self.pad_y,
            x2 * self.scale_x + self.pad_x,
            y2 * self.scale_y + self.pad_y,
        )

    def to_source(self, box):
        x1, y1, x2, y2 = box
        return (
            _clip((x1 - self.pad_x) / self.scale_x, self.src_width),
            _clip((y1 - self.pad_y) / self.scale_y, self.src_height),
            _clip((x2 - self.pad_x) / self.scale_x, self.src_width),
            _clip((y2 - self.pad_y) / self.scale_y, self.src_height),
        )

    def restore(self, dets):
        """Detections mapped back to source-image pixels"""
        return [Detection(self.to_source(d.box), d.class_id, d.confidence) for d in dets]


def letterbox(image, target):
    """Aspect-preserving nearest resize onto a gray square canvas

    Args:
        image (Tensor): (1, 3, h, w) in [0, 1]
        target (int): canvas side, a multiple of 32

    Returns:
        tuple[Tensor, LetterboxRecord]
    """
    if target <= 0 or target % MAX_STRIDE:
        raise ValueError("letterbox target %s is not a positive multiple of %s" % (target, MAX_STRIDE))
    data = image.data if isinstance(image, Tensor) else np.asarray(image)
    if data.ndim != 4:
        raise ValueError("letterbox expects an (n, c, h, w) image, got shape %s" % (data.shape,))
    n, c, h, w = data.shape
    if h == 0 or w == 0:
        raise ValueError("cannot letterbox a zero-sized image (%sx%s)" % (w, h))
    scale = target / float(max(h, w))
    new_w = min(target, max(1, int(round(w * scale))))
    new_h = min(target, max(1, int(round(h * scale))))
    rows = np.minimum(((np.arange(new_h) + 0.5) * h / new_h).astype(int), h - 1)
    cols = np.minimum(((np.arange(new_w) + 0.5) * w / new_w).astype(int), w - 1)
    resized = data[:, :, rows[:, None], cols[None, :]]
    pad_x = (target - new_w) // 2
    pad_y = (target - new_h) // 2
    canvas = np.full((n, c, target, target), LETTERBOX_FILL, dtype=data.dtype)
    canvas[:, :, pad_y : pad_y + new_h, pad_x : pad_x + new_w] = resized
    record = LetterboxRecord(w, h, target, new_w / float(w), new_h / float(h), pad_x, pad_y)
    return Tensor(canvas), record
