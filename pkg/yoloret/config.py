"""config.py
Model and training configuration

Model configs are JSON objects. Every key is optional; missing keys take the
defaults below, unknown keys are rejected at every nesting level.

Example:

    {
      "input_resolution": 416,
      "width_multiplier": 1.4,
      "rfcr": {"fusion_stride": 8, "fusion_channels": 64}
    }
"""
import json
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

from .backbone import BackboneSpec
from .constants import MAX_STRIDE, NUM_ANCHORS, VALID_RESOLUTIONS
from .head import AGGREGATIONS, PANET_EXPANSION, PANET_WIDTHS, default_anchors, validate_anchors
from .log import get_log
from .rfcr import RfcrConfig

logger = get_log()


@dataclass(frozen=True)
class ModelConfig:
    input_resolution: int = 320
    width_multiplier: float = 0.75
    truncate_last: int = 2
    num_classes: int = 20
    rfcr: RfcrConfig = field(default_factory=RfcrConfig)
    use_rfcr: bool = True
    aggregation: str = "panet"
    panet_widths: tuple = PANET_WIDTHS
    panet_expansion: int = PANET_EXPANSION
    se_reduction: int = 4
    anchors: Optional[tuple] = None
    conf_thresh: float = 0.25
    eval_conf_thresh: float = 0.05
    nms_thresh: float = 0.45

    def __post_init__(self):
        if isinstance(self.rfcr, dict):
            object.__setattr__(self, "rfcr", RfcrConfig(**self.rfcr))
        object.__setattr__(self, "panet_widths", tuple(self.panet_widths))
        if self.anchors is not None:
            anchors = tuple(tuple((float(w), float(h)) for w, h in g) for g in self.anchors)
            object.__setattr__(self, "anchors", anchors)
        self.validate()

    def validate(self):
        res = self.input_resolution
        if res <= 0 or res % MAX_STRIDE:
            raise ValueError("input_resolution %s is not divisible by %s" % (res, MAX_STRIDE))
        if res not in VALID_RESOLUTIONS:
            logger.debug("input_resolution %s is not one of %s", res, VALID_RESOLUTIONS)
        if self.width_multiplier <= 0:
            raise ValueError("width_multiplier must be positive, got %s" % self.width_multiplier)
        if self.truncate_last < 0:
            raise ValueError("truncate_last must be non-negative, got %s" % self.truncate_last)
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive, got %s" % self.num_classes)
        if self.aggregation not in AGGREGATIONS:
            raise ValueError("aggregation must be one of %s, got %r" % (AGGREGATIONS, self.aggregation))
        if len(self.panet_widths) != len(self.output_strides):
            raise ValueError(
                "panet_widths has %s entries for %s output strides"
                % (len(self.panet_widths), len(self.output_strides))
            )
        if any(w < 1 for w in self.panet_widths):
            raise ValueError("panet_widths must be positive, got %s" % (self.panet_widths,))
        if self.panet_expansion < 1 or self.se_reduction < 1:
            raise ValueError("panet_expansion and se_reduction must be positive")
        for name in ("conf_thresh", "eval_conf_thresh", "nms_thresh"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError("%s must lie in [0, 1], got %s" % (name, value))
        if self.anchors is not None:
            validate_anchors(self.anchors, len(self.output_strides), NUM_ANCHORS)

    @property
    def output_strides(self):
        return tuple(self.rfcr.output_strides)

    @property
    def tap_strides(self):
        """Backbone strides the model reads features from"""
        if self.use_rfcr:
            return tuple(sorted(set(self.rfcr.input_strides) | set(self.rfcr.output_strides)))
        return self.output_strides

    def resolved_anchors(self):
        if self.anchors is not None:
            return [list(g) for g in self.anchors]
        return default_anchors(self.input_resolution)

    def backbone_spec(self):
        return BackboneSpec(
            width_multiplier=self.width_multiplier,
            truncate_last=self.truncate_last,
            tap_strides=self.tap_strides,
        )

    def replace(self, **changes):
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return ModelConfig(**values)


@dataclass(frozen=True)
class TrainConfig:
    epochs_phase1: int = 10
    epochs_phase2: int = 10
    lr_phase1: float = 1e-3
    lr_phase2: float = 1e-4
    lr_min: float = 0.0
    batch_size: int = 8
    momentum: float = 0.9
    ignore_iou: float = 0.5
    lambda_box: float = 0.05
    lambda_obj: float = 1.0
    lambda_cls: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.lr_phase1 <= 0 or self.lr_phase2 <= 0:
            raise ValueError("learning rates must be positive")
        if self.lr_min < 0:
            raise ValueError("lr_min must be non-negative, got %s" % self.lr_min)
        if self.epochs_phase1 < 0 or self.epochs_phase2 < 0:
            raise ValueError("epoch counts must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive, got %s" % self.batch_size)
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1), got %s" % self.momentum)
        if not 0.0 < self.ignore_iou <= 1.0:
            raise ValueError("ignore_iou must lie in (0, 1], got %s" % self.ignore_iou)
        for name in ("lambda_box", "lambda_obj", "lambda_cls"):
            if getattr(self, name) < 0:
                raise ValueError("%s must be non-negative" % name)


_RFCR_TYPES = {
    "input_strides": "ints",
    "output_strides": "ints",
    "fusion_stride": "int",
    "fusion_channels": "int",
    "refine_expansion": "int",
    "refine_kernel": "int",
    "fusion_eps": "float",
    "merge_mode": "str",
}
_MODEL_TYPES = {
    "input_resolution": "int",
    "width_multiplier": "float",
    "truncate_last": "int",
    "num_classes": "int",
    "rfcr": "rfcr",
    "use_rfcr": "bool",
    "aggregation": "str",
    "panet_widths": "ints",
    "panet_expansion": "int",
    "se_reduction": "int",
    "anchors": "anchors",
    "conf_thresh": "float",
    "eval_conf_thresh": "float",
    "nms_thresh": "float",
}


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _coerce(key, value, kind):
    if value is None:
        raise ValueError("missing required field %s (got null)" % key)
    if kind == "int":
        if not _is_int(value):
            raise ValueError("field %s must be an integer, got %r" % (key, value))
        return value
    if kind == "float":
        if not (_is_int(value) or isinstance(value, float)):
            raise ValueError("field %s must be a number, got %r" % (key, value))
        return float(value)
    if kind == "bool":
        if not isinstance(value, bool):
            raise ValueError("field %s must be true or false, got %r" % (key, value))
        return value
    if kind == "str":
        if not isinstance(value, str):
            raise ValueError("field %s must be a string, got %r" % (key, value))
        return value
    if kind == "ints":
        if not isinstance(value, list) or not all(_is_int(v) for v in value):
            raise ValueError("field %s must be a list of integers, got %r" % (key, value))
        return tuple(value)
    if kind == "anchors":
        try:
            return tuple(tuple((float(w), float(h)) for w, h in group) for group in value)
        except (TypeError, ValueError):
            raise ValueError("field %s must be a list of [[w, h], ...] groups, got %r" % (key, value))
    if kind == "rfcr":
        if not isinstance(value, dict):
            raise ValueError("field %s must be an object, got %r" % (key, value))
        return RfcrConfig(**_parse_fields(value, _RFCR_TYPES, prefix="rfcr."))
    raise AssertionError(kind)


def _parse_fields(obj, types, prefix=""):
    unknown = sorted(set(obj) - set(types))
    if unknown:
        raise ValueError("unknown config key(s): %s" % ", ".join(prefix + k for k in unknown))
    return {key: _coerce(prefix + key, value, types[key]) for key, value in obj.items()}


def config_parse(text):
    """Parse a JSON model config, filling defaults

    Raises:
        ValueError: malformed JSON, unknown keys, null values, wrong types,
            or values failing validation
    """
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise ValueError("malformed config JSON: %s" % e)
    if not isinstance(obj, dict):
        raise ValueError("config must be a JSON object, got %s" % type(obj).__name__)
    return ModelConfig(**_parse_fields(obj, _MODEL_TYPES))


def config_to_dict(cfg):
    out = asdict(cfg)
    out["rfcr"] = {k: list(v) if isinstance(v, tuple) else v for k, v in out["rfcr"].items()}
    out["panet_widths"] = list(cfg.panet_widths)
    if cfg.anchors is None:
        del out["anchors"]
    else:
        out["anchors"] = [[list(a) for a in g] for g in cfg.anchors]
    return out


def config_dumps(cfg):
    return json.dumps(config_to_dict(cfg), indent=2)


def load_config(path=None):
    """ModelConfig from a JSON file, or the defaults when `path` is None"""
    if path is None:
        return ModelConfig()
    with open(path, encoding="utf-8") as f:
        return config_parse(f.read())
