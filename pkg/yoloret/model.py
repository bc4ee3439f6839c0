"""model.py
Full detector: backbone -> RFCR -> aggregation -> YOLO head

Parameter names are prefixed by part: `backbone.`, `rfcr.`, `neck.`, `head.`.
"""
from collections import OrderedDict

import numpy as np
from tqdm import tqdm

from .backbone import build_backbone, extract_pyramid
from .boxes import nms
from .flops import flops_of
from .head import PanetLite, YoloHead, decode, letterbox
from .log import get_log, log_runtime
from .rfcr import RFCR
from .tensor import Tensor, make_rng

logger = get_log()

PARTS = ("backbone", "rfcr", "neck", "head")


class YoloReT(object):
    """Assembled detector for one ModelConfig

    Attributes:
        cfg (ModelConfig)
        backbone (Backbone)
        rfcr (RFCR or None): absent when cfg.use_rfcr is False
        neck (PanetLite)
        head (YoloHead)
        frozen (set): full names of parameters held fixed in the first
            training phase
    """

    def __init__(self, cfg, backbone, rng):
        self.cfg = cfg
        self.backbone = backbone
        raw_channels = backbone.tap_channels(cfg.tap_strides)
        self.rfcr = RFCR(cfg.rfcr, raw_channels, rng=rng) if cfg.use_rfcr else None
        self.neck = PanetLite(
            {s: raw_channels[s] for s in cfg.output_strides},
            widths=cfg.panet_widths,
            mode=cfg.aggregation,
            expansion=cfg.panet_expansion,
            se_reduction=cfg.se_reduction,
            rng=rng,
        )
        self.head = YoloHead(self.neck.out_channels, cfg.num_classes, rng=rng)
        self.frozen = {"backbone." + name for name in backbone.frozen}
        self.name_parameters()

    @property
    def parts(self):
        out = OrderedDict()
        for name in PARTS:
            part = getattr(self, name)
            if part is not None:
                out[name] = part
        return out

    def named_parameters(self):
        for name, part in self.parts.items():
            yield from part.named_parameters(name + ".")

    def name_parameters(self):
        for name, part in self.parts.items():
            part.name_parameters(name + ".")
        return self

    def state_dict(self):
        state = OrderedDict()
        for name, part in self.parts.items():
            state.update(part.state_dict(name + "."))
        return state

    def load_state_dict(self, arrays, strict=True):
        """Load every part; returns the list of loaded names"""
        loaded = []
        for name, part in self.parts.items():
            loaded.extend(part.load_state_dict(arrays, prefix=name + ".", strict=strict))
        if strict:
            extra = sorted(set(arrays) - set(self.state_dict()))
            if extra:
                raise ValueError("weights contain unknown names: %s" % ", ".join(extra[:5]))
        return loaded

    def load_partial(self, arrays):
        """Load whatever `arrays` holds, e.g. a truncated weight file

        Unknown names and shape mismatches are still errors. Returns the
        names left at their current values.
        """
        extra = sorted(set(arrays) - set(self.state_dict()))
        if extra:
            raise ValueError("weights contain unknown names: %s" % ", ".join(extra[:5]))
        loaded = set(self.load_state_dict(arrays, strict=False))
        missing = [name for name in self.state_dict() if name not in loaded]
        if missing:
            logger.warning("%s tensors not in the weights keep their initialization", len(missing))
        return missing

    def astype(self, dtype):
        for part in self.parts.values():
            part.astype(dtype)
        return self

    def count_params(self):
        """Parameter count per part plus the total"""
        counts = OrderedDict((name, part.num_params()) for name, part in self.parts.items())
        counts["total"] = sum(counts.values())
        return counts

    def weight_bytes(self):
        """Size of all parameters and buffers stored as float32"""
        return int(sum(np.asarray(a).size for a in self.state_dict().values()) * 4)

    def describe(self, resolution=None):
        """ConvShape for every convolution at a square input of `resolution`"""
        res = self.cfg.input_resolution if resolution is None else resolution
        shapes, _, _ = self.backbone.describe(res, res, "backbone.")
        if self.rfcr is not None:
            shapes.extend(self.rfcr.describe_pyramid(res, "rfcr."))
        shapes.extend(self.neck.describe_pyramid(res, "neck."))
        shapes.extend(self.head.describe_pyramid(res, "head."))
        return shapes

    def macs(self, resolution=None):
        return flops_of(self.describe(resolution))

    def __call__(self, image, training=False):
        """Raw head logits for an (n, 3, H, W) image batch"""
        pyramid = extract_pyramid(self.backbone, image, self.cfg.tap_strides, training=training)
        if self.rfcr is not None:
            pyramid = self.rfcr(pyramid, training=training)
        else:
            pyramid = pyramid.restrict(self.cfg.output_strides)
        features = self.neck(pyramid, training=training)
        return self.head(features, training=training)

    def detect_tensor(self, image, conf_thresh=None, nms_thresh=None):
        """Detections in network-input pixels for an already letterboxed batch"""
        conf = self.cfg.conf_thresh if conf_thresh is None else conf_thresh
        iou = self.cfg.nms_thresh if nms_thresh is None else nms_thresh
        raw = self(image)
        per_image = decode(raw, self.cfg.resolved_anchors(), conf)
        return [nms(dets, iou) for dets in per_image]

    def detect(self, image, conf_thresh=None, nms_thresh=None):
        """Detections in source pixels for one (1, 3, h, w) image of any size"""
        boxed, record = letterbox(image, self.cfg.input_resolution)
        dets = self.detect_tensor(boxed, conf_thresh, nms_thresh)[0]
        return record.restore(dets)


@log_runtime
def build_model(cfg, seed=0):
    """Randomly initialized detector; all parts draw from one generator"""
    rng = make_rng(seed)
    backbone = build_backbone(cfg.backbone_spec(), seed=rng)
    model = YoloReT(cfg, backbone, rng)
    logger.info(
        "Built model at %s px: %s params, %.1fM MACs",
        cfg.input_resolution,
        model.count_params()["total"],
        model.macs() / 1e6,
    )
    return model


def with_backbone(model, backbone):
    """Copy of the model wiring around a replacement backbone, e.g. after
    `init_partial_transfer`. Non-backbone parts are shared, not copied."""
    out = object.__new__(YoloReT)
    out.__dict__.update(model.__dict__)
    out.backbone = backbone
    out.frozen = {"backbone." + name for name in backbone.frozen}
    out.name_parameters()
    return out


def synthetic_input(resolution, seed=0, batch=1):
    rng = np.random.default_rng(seed)
    return Tensor(rng.uniform(0, 1, size=(batch, 3, resolution, resolution)).astype(np.float32))


def detect_records(model, records, conf_thresh=None, progress=False):
    """Source-pixel detections for every dataset record, in record order"""
    return [
        model.detect(rec.load_image(), conf_thresh)
        for rec in tqdm(records, disable=not progress, desc="detect")
    ]
