"""blocks.py
Composite layers built from the kernels: conv+BN, pointwise unit,
inverted-residual MBConv, squeeze-excitation and MBConvSE.

Every layer is a `Layer` holding named parameters (trainable `Tensor`s),
named buffers (batchnorm running statistics) and named children, so full
parameter names come out dotted, e.g. `blocks.3.depthwise.weight`.
"""
import math
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from . import kernels
from .flops import ConvShape
from .tensor import DEFAULT_DTYPE, he_normal, make_rng, parameter

BLOCK_KINDS = ("pointwise", "mbconv", "mbconvse")
KERNEL_SIZES = (1, 3, 5)
STRIDES = (1, 2)
SE_REDUCTION = 4


class Layer(object):
    """Container of parameters, buffers and child layers"""

    def __init__(self):
        self.params = OrderedDict()
        self.buffers = OrderedDict()
        self.children = OrderedDict()

    def add_child(self, name, layer):
        self.children[str(name)] = layer
        return layer

    def named_parameters(self, prefix=""):
        for name, tensor in self.params.items():
            yield prefix + name, tensor
        for cname, child in self.children.items():
            yield from child.named_parameters(prefix + cname + ".")

    def named_buffers(self, prefix=""):
        for name, arr in self.buffers.items():
            yield prefix + name, arr
        for cname, child in self.children.items():
            yield from child.named_buffers(prefix + cname + ".")

    def parameters(self):
        return [t for _, t in self.named_parameters()]

    def num_params(self):
        return int(sum(t.size for t in self.parameters()))

    def name_parameters(self, prefix=""):
        """Stamp each parameter Tensor with its full dotted name"""
        for name, tensor in self.named_parameters(prefix):
            tensor.name = name
        return self

    def state_dict(self, prefix=""):
        """Parameters then buffers, as name -> ndarray"""
        state = OrderedDict()
        for name, tensor in self.named_parameters(prefix):
            state[name] = tensor.data
        for name, arr in self.named_buffers(prefix):
            state[name] = arr
        return state

    def load_state_dict(self, arrays, prefix="", strict=True):
        """Copy arrays into parameters and buffers by name

        Args:
            arrays (Mapping): name -> array
            prefix (str): prepended to this layer's names before lookup
            strict (bool): raise on names missing from `arrays`

        Returns:
            list[str]: names that were loaded
        """
        loaded = []
        for name, tensor in self.named_parameters():
            if _load_one(arrays, prefix + name, tensor.data, strict):
                tensor.data = np.array(arrays[prefix + name], dtype=tensor.dtype)
                loaded.append(prefix + name)
        for layer, bname, full in self._buffer_slots():
            arr = layer.buffers[bname]
            if _load_one(arrays, prefix + full, arr, strict):
                layer.buffers[bname] = np.array(arrays[prefix + full], dtype=arr.dtype)
                loaded.append(prefix + full)
        return loaded

    def _buffer_slots(self, prefix=""):
        for name in self.buffers:
            yield self, name, prefix + name
        for cname, child in self.children.items():
            yield from child._buffer_slots(prefix + cname + ".")

    def astype(self, dtype):
        """Convert every parameter and buffer in place; returns self"""
        for _, tensor in self.named_parameters():
            tensor.data = tensor.data.astype(dtype)
        for layer, bname, _ in self._buffer_slots():
            layer.buffers[bname] = layer.buffers[bname].astype(dtype)
        return self

    def reset_parameters(self, rng):
        for child in self.children.values():
            child.reset_parameters(rng)

    def describe(self, h, w, prefix=""):
        """Returns (list[ConvShape], h_out, w_out) for an h x w input"""
        raise NotImplementedError


def _load_one(arrays, name, current, strict):
    if name not in arrays:
        if strict:
            raise ValueError("missing parameter %s" % name)
        return False
    shape = tuple(np.shape(arrays[name]))
    if shape != current.shape:
        raise ValueError(
            "shape mismatch for %s: stored %s, expected %s" % (name, shape, current.shape)
        )
    return True


class ConvBN(Layer):
    """Convolution with optional batchnorm and activation

    Padding is k // 2 ("same" for stride 1).
    """

    def __init__(
        self,
        c_in,
        c_out,
        kernel=1,
        stride=1,
        groups=1,
        act=None,
        rng=None,
        bn=True,
        bias=False,
    ):
        super().__init__()
        if c_in % groups or c_out % groups:
            raise ValueError("groups=%s must divide c_in=%s and c_out=%s" % (groups, c_in, c_out))
        if act is not None and act not in kernels.ACTIVATIONS:
            raise ValueError("unknown activation %r" % act)
        self.c_in, self.c_out = c_in, c_out
        self.kernel, self.stride, self.groups = kernel, stride, groups
        self.act = act
        self.use_bn = bn
        self.use_bias = bias
        self.params["weight"] = parameter(np.zeros((c_out, c_in // groups, kernel, kernel), DEFAULT_DTYPE))
        if bias:
            self.params["bias"] = parameter(np.zeros(c_out, DEFAULT_DTYPE))
        if bn:
            self.params["gamma"] = parameter(np.ones(c_out, DEFAULT_DTYPE))
            self.params["beta"] = parameter(np.zeros(c_out, DEFAULT_DTYPE))
            self.buffers["running_mean"] = np.zeros(c_out, DEFAULT_DTYPE)
            self.buffers["running_var"] = np.ones(c_out, DEFAULT_DTYPE)
        self.reset_parameters(make_rng(rng))

    @property
    def fan_in(self):
        return (self.c_in // self.groups) * self.kernel ** 2

    def reset_parameters(self, rng):
        weight = self.params["weight"]
        weight.data = he_normal(rng, weight.shape, self.fan_in, dtype=weight.dtype)
        if self.use_bias:
            self.params["bias"].data = np.zeros_like(self.params["bias"].data)
        if self.use_bn:
            self.params["gamma"].data = np.ones_like(self.params["gamma"].data)
            self.params["beta"].data = np.zeros_like(self.params["beta"].data)
            self.buffers["running_mean"] = np.zeros_like(self.buffers["running_mean"])
            self.buffers["running_var"] = np.ones_like(self.buffers["running_var"])

    @property
    def conv_params(self):
        return kernels.ConvParams(
            weight=self.params["weight"],
            bias=self.params.get("bias"),
            stride=self.stride,
            padding=self.kernel // 2,
            groups=self.groups,
        )

    def __call__(self, x, training=False):
        out = kernels.conv2d(x, self.conv_params)
        if self.use_bn:
            out = kernels.batchnorm(
                out,
                self.params["gamma"],
                self.params["beta"],
                self.buffers["running_mean"],
                self.buffers["running_var"],
                training=training,
            )
        if self.act is not None:
            out = kernels.activation(out, self.act)
        return out

    def output_size(self, h, w):
        return self.conv_params.output_size(h, w)

    def describe(self, h, w, prefix=""):
        ho, wo = self.output_size(h, w)
        shape = ConvShape(
            prefix.rstrip(".") or "conv",
            self.c_in,
            self.c_out,
            self.kernel,
            self.groups,
            ho,
            wo,
        )
        return [shape], ho, wo


@dataclass(frozen=True)
class BlockSpec:
    """Shape of one block

    Attributes:
        kind (str): pointwise, mbconv or mbconvse
        c_in, c_out (int): channels in and out
        expansion (int): t, expanded width is t * c_in
        kernel (int): depthwise kernel size k
        stride (int): depthwise stride s
        se_reduction (int): r, squeeze width is ceil(t * c_in / r)
    """

    kind: str
    c_in: int
    c_out: int
    expansion: int = 1
    kernel: int = 3
    stride: int = 1
    se_reduction: int = SE_REDUCTION

    def __post_init__(self):
        if self.kind not in BLOCK_KINDS:
            raise ValueError("unknown block kind %r, expected one of %s" % (self.kind, BLOCK_KINDS))
        if self.c_in < 1 or self.c_out < 1:
            raise ValueError("channel counts must be positive: %s -> %s" % (self.c_in, self.c_out))
        if self.expansion < 1:
            raise ValueError("expansion must be a positive int, got %s" % self.expansion)
        if self.kernel not in KERNEL_SIZES:
            raise ValueError("invalid kernel size %s, expected one of %s" % (self.kernel, KERNEL_SIZES))
        if self.stride not in STRIDES:
            raise ValueError("invalid stride %s, expected one of %s" % (self.stride, STRIDES))
        if self.se_reduction < 1:
            raise ValueError("se_reduction must be positive, got %s" % self.se_reduction)

    @property
    def expanded_channels(self):
        return self.expansion * self.c_in

    @property
    def has_residual(self):
        return self.kind != "pointwise" and self.stride == 1 and self.c_in == self.c_out


class PointwiseUnit(ConvBN):
    """1x1 conv -> BN -> relu6"""

    def __init__(self, spec, rng=None):
        if spec.kind != "pointwise":
            raise ValueError("PointwiseUnit needs a pointwise spec, got %r" % spec.kind)
        self.spec = spec
        super().__init__(spec.c_in, spec.c_out, kernel=1, act="relu6", rng=rng)

    def __call__(self, x, training=False):
        if x.shape[1] != self.c_in:
            raise ValueError(
                "pointwise unit expects %s input channels, got %s" % (self.c_in, x.shape[1])
            )
        return super().__call__(x, training=training)


class SEUnit(Layer):
    """Squeeze-excitation: channel gate from the spatial mean"""

    def __init__(self, channels, reduction=SE_REDUCTION, rng=None):
        super().__init__()
        rng = make_rng(rng)
        self.channels = channels
        self.squeeze_channels = max(1, math.ceil(channels / reduction))
        self.add_child(
            "reduce",
            ConvBN(channels, self.squeeze_channels, 1, act="swish", rng=rng, bn=False, bias=True),
        )
        self.add_child(
            "expand",
            ConvBN(self.squeeze_channels, channels, 1, act="sigmoid", rng=rng, bn=False, bias=True),
        )

    def gate(self, x):
        squeezed = kernels.global_avg_pool(x)
        return self.children["expand"](self.children["reduce"](squeezed))

    def __call__(self, x, training=False):
        return kernels.multiply(x, self.gate(x))

    def describe(self, h, w, prefix=""):
        shapes = []
        for name in ("reduce", "expand"):
            s, _, _ = self.children[name].describe(1, 1, prefix + name + ".")
            shapes.extend(s)
        return shapes, h, w


class MBConv(Layer):
    """Inverted residual: [1x1 expand] -> depthwise kxk -> [SE] -> 1x1 project

    The expand conv is omitted when t == 1. No activation follows the
    projection. The input is added back when stride is 1 and c_in == c_out.
    """

    def __init__(self, spec, rng=None):
        super().__init__()
        if spec.kind not in ("mbconv", "mbconvse"):
            raise ValueError("MBConv needs an mbconv or mbconvse spec, got %r" % spec.kind)
        rng = make_rng(rng)
        self.spec = spec
        ce = spec.expanded_channels
        if spec.expansion != 1:
            self.add_child("expand", ConvBN(spec.c_in, ce, 1, act="relu6", rng=rng))
        self.add_child(
            "depthwise",
            ConvBN(ce, ce, spec.kernel, stride=spec.stride, groups=ce, act="relu6", rng=rng),
        )
        if spec.kind == "mbconvse":
            self.add_child("se", SEUnit(ce, spec.se_reduction, rng=rng))
        self.add_child("project", ConvBN(ce, spec.c_out, 1, act=None, rng=rng))

    @property
    def c_in(self):
        return self.spec.c_in

    @property
    def c_out(self):
        return self.spec.c_out

    @property
    def stride(self):
        return self.spec.stride

    def __call__(self, x, training=False):
        if x.shape[1] != self.spec.c_in:
            raise ValueError(
                "block expects %s input channels, got %s" % (self.spec.c_in, x.shape[1])
            )
        out = x
        for name, child in self.children.items():
            out = child(out, training=training)
        if self.spec.has_residual:
            out = kernels.eltwise_add([out, x])
        return out

    def describe(self, h, w, prefix=""):
        shapes = []
        for name, child in self.children.items():
            s, h, w = child.describe(h, w, prefix + name + ".")
            shapes.extend(s)
        return shapes, h, w


def build_block(spec, rng=None):
    if spec.kind == "pointwise":
        return PointwiseUnit(spec, rng=rng)
    return MBConv(spec, rng=rng)


def zero_conv_weights(layer):
    """Set every convolution weight (and bias) under `layer` to zero"""
    for name, tensor in layer.named_parameters():
        if name.endswith("weight") or name.endswith("bias"):
            tensor.data = np.zeros_like(tensor.data)
    return layer
