"""backbone.py
Width-scaled MobileNetV2 feature extractor with block-level truncation,
partial weight transfer and multi-scale feature taps.
"""
import copy
from dataclasses import dataclass, field

from .blocks import BlockSpec, ConvBN, Layer, MBConv
from .constants import (
    CLASSIFIER_EXPANSION_CHANNELS,
    DEFAULT_TAP_STRIDES,
    MAX_STRIDE,
    MOBILENETV2_STAGES,
    STEM_CHANNELS,
    STEM_STRIDE,
)
from .log import get_log
from .tensor import make_rng

logger = get_log()


def make_divisible(value, divisor=8, min_value=8):
    """Round a scaled channel count to a multiple of `divisor`

    Never goes below `min_value`, and never rounds down by more than 10%.
    """
    new_value = max(min_value, int(value + divisor / 2) // divisor * divisor)
    if new_value < 0.9 * value:
        new_value += divisor
    return new_value


@dataclass(frozen=True)
class BackboneSpec:
    width_multiplier: float = 1.0
    stages: tuple = MOBILENETV2_STAGES
    truncate_last: int = 0
    tap_strides: tuple = field(default=DEFAULT_TAP_STRIDES)

    def __post_init__(self):
        if self.width_multiplier <= 0:
            raise ValueError("width multiplier must be positive, got %s" % self.width_multiplier)
        if self.truncate_last < 0:
            raise ValueError("truncate_last must be non-negative, got %s" % self.truncate_last)

    @property
    def stem_channels(self):
        return make_divisible(STEM_CHANNELS * self.width_multiplier)

    def block_specs(self):
        """Expand the stage table into one BlockSpec per MBConv block"""
        specs = []
        c_in = self.stem_channels
        for t, c, n, s in self.stages:
            c_out = make_divisible(c * self.width_multiplier)
            for i in range(n):
                stride = s if i == 0 else 1
                specs.append(BlockSpec("mbconv", c_in, c_out, expansion=t, kernel=3, stride=stride))
                c_in = c_out
        return specs

    @property
    def classifier_expansion_channels(self):
        # the reference net never shrinks the last conv below 1280
        return make_divisible(CLASSIFIER_EXPANSION_CHANNELS * max(1.0, self.width_multiplier))


class FeaturePyramid(object):
    """Feature maps keyed by stride, strides strictly increasing"""

    def __init__(self, entries):
        entries = list(entries)
        strides = [s for s, _ in entries]
        if any(b <= a for a, b in zip(strides, strides[1:])):
            raise ValueError("pyramid strides must be strictly increasing, got %s" % strides)
        self.entries = entries

    @property
    def strides(self):
        return [s for s, _ in self.entries]

    @property
    def features(self):
        return [f for _, f in self.entries]

    def __getitem__(self, stride):
        for s, f in self.entries:
            if s == stride:
                return f
        raise KeyError(stride)

    def __contains__(self, stride):
        return stride in self.strides

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def restrict(self, strides):
        """Sub-pyramid with only the given strides"""
        missing = [s for s in strides if s not in self]
        if missing:
            raise ValueError("pyramid has no feature at stride %s (has %s)" % (missing, self.strides))
        return FeaturePyramid([(s, self[s]) for s in sorted(strides)])

    def shapes(self):
        return [(s, f.shape) for s, f in self.entries]

    def channels(self):
        return {s: f.shape[1] for s, f in self.entries}


class Backbone(Layer):
    """Stem conv followed by a list of MBConv blocks

    Parameters are named `stem.*` and `blocks.{i}.*`.
    """

    def __init__(self, spec, rng=None):
        super().__init__()
        rng = make_rng(rng)
        self.spec = spec
        self.add_child(
            "stem",
            ConvBN(3, spec.stem_channels, 3, stride=STEM_STRIDE, act="relu6", rng=rng),
        )
        self.blocks = Layer()
        for i, bspec in enumerate(spec.block_specs()):
            self.blocks.add_child(i, MBConv(bspec, rng=rng))
        self.add_child("blocks", self.blocks)
        self.frozen = set()

    @property
    def block_list(self):
        return list(self.blocks.children.values())

    @property
    def num_blocks(self):
        return len(self.blocks.children)

    def block_strides(self):
        """Cumulative stride after each block"""
        strides = []
        stride = STEM_STRIDE
        for block in self.block_list:
            stride *= block.stride
            strides.append(stride)
        return strides

    def tap_indices(self, tap_strides=None):
        """Index of the deepest block at each requested stride"""
        tap_strides = self.spec.tap_strides if tap_strides is None else tap_strides
        strides = self.block_strides()
        taps = {}
        for stride in tap_strides:
            idx = [i for i, s in enumerate(strides) if s == stride]
            if not idx:
                raise ValueError(
                    "no block at stride %s (available: %s)" % (stride, sorted(set(strides)))
                )
            taps[stride] = idx[-1]
        return taps

    def tap_channels(self, tap_strides=None):
        blocks = self.block_list
        return {s: blocks[i].c_out for s, i in self.tap_indices(tap_strides).items()}

    def count_params(self, include_classifier_expansion=False):
        """Parameter count; optionally add the 1x1 classifier-expansion conv + BN
        the untruncated reference net would have after its last block"""
        total = self.num_params()
        if include_classifier_expansion:
            c_last = self.spec.block_specs()[-1].c_out
            c_exp = self.spec.classifier_expansion_channels
            total += c_last * c_exp + 2 * c_exp
        return total

    def forward_taps(self, image, tap_strides=None, training=False):
        taps = self.tap_indices(tap_strides)
        by_index = {i: s for s, i in taps.items()}
        deepest = max(taps.values())
        x = self.children["stem"](image, training=training)
        features = {}
        for i, block in enumerate(self.block_list[: deepest + 1]):
            x = block(x, training=training)
            if i in by_index:
                features[by_index[i]] = x
        return FeaturePyramid(sorted(features.items()))

    def describe(self, h, w, prefix=""):
        shapes, h, w = self.children["stem"].describe(h, w, prefix + "stem.")
        for i, block in enumerate(self.block_list):
            s, h, w = block.describe(h, w, "%sblocks.%d." % (prefix, i))
            shapes.extend(s)
        return shapes, h, w


def build_backbone(spec, seed=0):
    """Randomly initialized backbone for `spec`

    All 17 reference blocks are drawn from the generator before
    `spec.truncate_last` is applied, so a truncated build shares its
    parameters with the untruncated build of the same seed.
    """
    full_spec = BackboneSpec(spec.width_multiplier, spec.stages, 0, spec.tap_strides)
    model = Backbone(full_spec, rng=make_rng(seed))
    logger.debug(
        "Built backbone alpha=%s with %s blocks, %s params",
        spec.width_multiplier,
        model.num_blocks,
        model.num_params(),
    )
    if spec.truncate_last:
        model = truncate_backbone(model, spec.truncate_last)
    return model


def truncate_backbone(model, truncate_last):
    """Copy of `model` without its last `truncate_last` blocks

    Raises:
        ValueError: if nothing would remain, or no block at stride 32 would remain
    """
    n = model.num_blocks
    if truncate_last < 0:
        raise ValueError("truncate_last must be non-negative, got %s" % truncate_last)
    if truncate_last >= n:
        raise ValueError("truncate_last=%s must be less than the block count %s" % (truncate_last, n))
    if truncate_last == 0:
        return model
    kept_strides = model.block_strides()[: n - truncate_last]
    if MAX_STRIDE not in kept_strides:
        raise ValueError(
            "truncating %s blocks would remove all stride-%s blocks" % (truncate_last, MAX_STRIDE)
        )
    out = copy.copy(model)
    Layer.__init__(out)
    out.add_child("stem", model.children["stem"])
    out.blocks = Layer()
    for i, block in enumerate(model.block_list[: n - truncate_last]):
        out.blocks.add_child(i, block)
    out.add_child("blocks", out.blocks)
    out.spec = BackboneSpec(
        model.spec.width_multiplier,
        model.spec.stages,
        model.spec.truncate_last + truncate_last,
        model.spec.tap_strides,
    )
    out.frozen = {
        name
        for name in model.frozen
        if _block_index(name) is None or _block_index(name) < n - truncate_last
    }
    logger.debug("Truncated %s blocks: %s -> %s params", truncate_last, model.num_params(), out.num_params())
    return out


def _block_index(name):
    parts = name.split(".")
    if len(parts) > 1 and parts[0] == "blocks":
        return int(parts[1])
    return None


def extract_pyramid(model, image, tap_strides=None, training=False):
    """Per requested stride, the output of the deepest block at that stride

    Raises:
        ValueError: if the image height or width is not a multiple of 32
    """
    if image.ndim != 4 or image.shape[1] != 3:
        raise ValueError("expected an (n, 3, h, w) image, got shape %s" % (image.shape,))
    h, w = image.shape[2:]
    if h % MAX_STRIDE or w % MAX_STRIDE:
        raise ValueError("image size %sx%s is not divisible by %s" % (h, w, MAX_STRIDE))
    return model.forward_taps(image, tap_strides, training=training)


def init_partial_transfer(model, store, k_blocks, seed=0, prefix=""):
    """Load the stem and first `k_blocks` blocks from `store`, re-draw the rest

    Args:
        model (Backbone): architecture to initialize (left untouched)
        store (Mapping): name -> array, e.g. a WeightStore
        k_blocks (int): number of leading blocks to transfer. The stem is
            transferred along with block 0
        seed (int): seed for the re-randomized parameters
        prefix (str): prefix of backbone names inside `store`, e.g. "backbone."

    Returns:
        Backbone: new model whose `frozen` set names the transferred parameters
    """
    if not 0 <= k_blocks <= model.num_blocks:
        raise ValueError("k_blocks=%s outside [0, %s]" % (k_blocks, model.num_blocks))
    out = copy.deepcopy(model)
    rng = make_rng(seed)
    loaded = []
    parts = [("stem", out.children["stem"])] + [
        ("blocks.%d" % i, b) for i, b in enumerate(out.block_list)
    ]
    for idx, (name, layer) in enumerate(parts):
        if idx <= k_blocks and k_blocks > 0:
            loaded.extend(layer.load_state_dict(store, prefix="%s%s." % (prefix, name)))
        else:
            layer.reset_parameters(rng)
    param_names = set(n for n, _ in out.named_parameters(prefix))
    out.frozen = {n[len(prefix):] for n in loaded if n in param_names}
    logger.info(
        "Transferred stem + %s blocks (%s tensors), re-initialized %s blocks",
        k_blocks,
        len(loaded),
        out.num_blocks - k_blocks,
    )
    return out


def param_reduction(spec, truncate_last):
    """Fraction of reference backbone parameters removed by truncation

    The reference count includes the classifier-expansion conv that a
    detection backbone never builds.
    """
    full = Backbone(BackboneSpec(spec.width_multiplier, spec.stages), rng=0)
    kept = truncate_backbone(full, truncate_last).count_params()
    return 1.0 - kept / float(full.count_params(include_classifier_expansion=True))
