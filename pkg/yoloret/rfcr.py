"""rfcr.py
Raw feature collection and redistribution

Raw backbone features from every input stride are projected to a common
width, resampled to one fusion stride and summed with trainable weights.
The fused map is refined by one 5x5 MBConv and then projected back and
added onto the raw feature at every output stride.

Collection and fusion parameters are drawn from the generator before any
redistribution parameter, so the fused map does not depend on which output
strides are configured.
"""
from dataclasses import dataclass

import numpy as np

from . import kernels
from .backbone import FeaturePyramid
from .blocks import BlockSpec, ConvBN, Layer, MBConv
from .constants import DEFAULT_TAP_STRIDES, OUTPUT_STRIDES
from .log import get_log
from .tensor import DEFAULT_DTYPE, make_rng, parameter
from .utils import is_power_of_two

logger = get_log()

MERGE_MODES = ("add",)


@dataclass(frozen=True)
class RfcrConfig:
    input_strides: tuple = DEFAULT_TAP_STRIDES
    output_strides: tuple = OUTPUT_STRIDES
    fusion_stride: int = 16
    fusion_channels: int = 24
    refine_expansion: int = 6
    refine_kernel: int = 5
    fusion_eps: float = kernels.FUSION_EPS
    merge_mode: str = "add"

    def __post_init__(self):
        object.__setattr__(self, "input_strides", tuple(self.input_strides))
        object.__setattr__(self, "output_strides", tuple(self.output_strides))
        self.validate()

    def validate(self):
        for name in ("input_strides", "output_strides"):
            strides = getattr(self, name)
            if not strides:
                raise ValueError("%s must not be empty" % name)
            if list(strides) != sorted(set(strides)):
                raise ValueError("%s must be strictly increasing, got %s" % (name, strides))
            for s in strides:
                if not is_power_of_two(s):
                    raise ValueError("%s entry %s is not a power of two" % (name, s))
        if self.fusion_stride not in self.input_strides:
            raise ValueError(
                "fusion_stride %s must be one of input_strides %s"
                % (self.fusion_stride, self.input_strides)
            )
        if self.fusion_channels < 1:
            raise ValueError("fusion_channels must be positive, got %s" % self.fusion_channels)
        if self.merge_mode not in MERGE_MODES:
            raise ValueError("merge_mode must be one of %s, got %r" % (MERGE_MODES, self.merge_mode))
        if self.fusion_eps < 0:
            raise ValueError("fusion_eps must be non-negative, got %s" % self.fusion_eps)
        self.refine_spec  # BlockSpec checks kernel and expansion

    @property
    def refine_spec(self):
        c = self.fusion_channels
        return BlockSpec("mbconv", c, c, expansion=self.refine_expansion, kernel=self.refine_kernel)


class RFCR(Layer):
    """Collection convs, fusion weights, refine block, redistribution convs

    Args:
        cfg (RfcrConfig)
        raw_channels (dict): stride -> channel count of the raw backbone
            feature, covering input and output strides
        rng: seed or generator
    """

    def __init__(self, cfg, raw_channels, rng=None):
        super().__init__()
        rng = make_rng(rng)
        self.cfg = cfg
        for s in set(cfg.input_strides) | set(cfg.output_strides):
            if s not in raw_channels:
                raise ValueError("no raw feature channels given for stride %s" % s)
        self.raw_channels = dict(raw_channels)

        cf = cfg.fusion_channels
        self.collect_convs = self.add_child("collect", Layer())
        for s in cfg.input_strides:
            self.collect_convs.add_child(s, ConvBN(raw_channels[s], cf, 1, rng=rng))
        self.params["fusion_weights"] = parameter(np.ones(len(cfg.input_strides), DEFAULT_DTYPE))
        self.add_child("refine", MBConv(cfg.refine_spec, rng=rng))
        self.redistribute_convs = self.add_child("redistribute", Layer())
        for s in cfg.output_strides:
            self.redistribute_convs.add_child(s, ConvBN(cf, raw_channels[s], 1, rng=rng))
        logger.debug(
            "RFCR %s -> stride %s (%s ch) -> %s: %s params",
            cfg.input_strides,
            cfg.fusion_stride,
            cf,
            cfg.output_strides,
            self.num_params(),
        )

    def reset_parameters(self, rng):
        super().reset_parameters(rng)
        w = self.params["fusion_weights"]
        w.data = np.ones_like(w.data)

    def collect(self, pyramid, training=False):
        """One 1x1 conv + BN per input stride, at native resolution"""
        out = []
        for s in self.cfg.input_strides:
            if s not in pyramid:
                raise ValueError("pyramid is missing input stride %s (has %s)" % (s, pyramid.strides))
            out.append(self.collect_convs.children[str(s)](pyramid[s], training=training))
        return out

    def fuse(self, projected):
        """Resample each projection to the fusion stride and take the weighted sum"""
        if len(projected) != len(self.cfg.input_strides):
            raise ValueError(
                "expected %s projected features, got %s" % (len(self.cfg.input_strides), len(projected))
            )
        cf = self.cfg.fusion_channels
        resized = []
        for s, x in zip(self.cfg.input_strides, projected):
            if x.shape[1] != cf:
                raise ValueError("projected feature at stride %s has %s channels, expected %s" % (s, x.shape[1], cf))
            resized.append(kernels.resize_to(x, s, self.cfg.fusion_stride))
        return kernels.weighted_fusion(resized, self.params["fusion_weights"], eps=self.cfg.fusion_eps)

    def refine(self, fused, training=False):
        return self.children["refine"](fused, training=training)

    def redistribute(self, refined, pyramid, training=False):
        """Project the refined map back to each output stride and add it to the raw feature"""
        entries = []
        for s in self.cfg.output_strides:
            if s not in pyramid:
                raise ValueError("pyramid is missing raw feature at stride %s" % s)
            x = kernels.resize_to(refined, self.cfg.fusion_stride, s)
            x = self.redistribute_convs.children[str(s)](x, training=training)
            entries.append((s, kernels.eltwise_add([pyramid[s], x])))
        return FeaturePyramid(entries)

    def __call__(self, pyramid, training=False):
        fused = self.fuse(self.collect(pyramid, training=training))
        refined = self.refine(fused, training=training)
        return self.redistribute(refined, pyramid, training=training)

    def describe_pyramid(self, resolution, prefix=""):
        """ConvShapes for an input image of `resolution` x `resolution`"""
        shapes = []
        cfg = self.cfg
        for s in cfg.input_strides:
            size = resolution // s
            sh, _, _ = self.collect_convs.children[str(s)].describe(size, size, "%scollect.%d." % (prefix, s))
            shapes.extend(sh)
        fsize = resolution // cfg.fusion_stride
        sh, _, _ = self.children["refine"].describe(fsize, fsize, prefix + "refine.")
        shapes.extend(sh)
        for s in cfg.output_strides:
            size = resolution // s
            sh, _, _ = self.redistribute_convs.children[str(s)].describe(
                size, size, "%sredistribute.%d." % (prefix, s)
            )
            shapes.extend(sh)
        return shapes

    def layer_counts(self):
        """Number of layers of each role, for structural checks"""
        return {
            "collect": len(self.collect_convs.children),
            "fusion": 1,
            "refine": 1,
            "redistribute": len(self.redistribute_convs.children),
        }
