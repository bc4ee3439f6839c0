"""kernels.py
Convolution, normalization and elementwise kernels over NCHW tensors

Each op computes its forward result with numpy, then calls `tensor.record`
with a closure for the vector-Jacobian product. Outputs keep the dtype of
their inputs (float32 normally, float64 inside gradient checks).

Convolution is cross-correlation (no kernel flip). Dense and grouped
convolutions reduce with `np.tensordot`, so results are repeatable for a
given numpy/BLAS build but may differ in the last bits across builds.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .tensor import Tensor, record
from .utils import is_power_of_two

ACTIVATIONS = ("relu6", "sigmoid", "swish")
BN_MOMENTUM = 0.1
BN_EPS = 1e-5
FUSION_EPS = 1e-4


@dataclass
class ConvParams:
    """Weights and geometry of one convolution

    weight has shape (c_out, c_in / groups, k, k). groups == c_in == c_out
    is a depthwise convolution, groups == 1 a dense one.
    """

    weight: Tensor
    bias: Optional[Tensor] = None
    stride: int = 1
    padding: int = 0
    groups: int = 1

    @property
    def c_out(self):
        return self.weight.shape[0]

    @property
    def c_in(self):
        return self.weight.shape[1] * self.groups

    @property
    def kernel_size(self):
        return self.weight.shape[2]

    @property
    def is_depthwise(self):
        return self.groups > 1 and self.groups == self.c_in == self.c_out

    def output_size(self, h, w):
        k, s, p = self.kernel_size, self.stride, self.padding
        return (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1


def _check_4d(x, opname):
    if x.ndim != 4:
        raise ValueError("%s expects an (n, c, h, w) tensor, got shape %s" % (opname, x.shape))


def _check_conv(x, params):
    _check_4d(x, "conv2d")
    w = params.weight
    if w.ndim != 4:
        raise ValueError("conv weight must be 4D, got shape %s" % (w.shape,))
    c_out, c_in_g, kh, kw = w.shape
    if kh != kw:
        raise ValueError("only square kernels are supported, got %sx%s" % (kh, kw))
    if params.groups < 1 or c_out % params.groups != 0:
        raise ValueError("groups=%s must divide c_out=%s" % (params.groups, c_out))
    if params.stride < 1:
        raise ValueError("stride must be positive, got %s" % params.stride)
    if params.padding < 0:
        raise ValueError("padding must be non-negative, got %s" % params.padding)
    n, c, h, wd = x.shape
    if c != params.c_in:
        raise ValueError(
            "input channel dimension c=%s does not match weight c_in=%s (groups=%s)"
            % (c, params.c_in, params.groups)
        )
    if h + 2 * params.padding < kh or wd + 2 * params.padding < kw:
        raise ValueError(
            "kernel %sx%s does not fit input %sx%s with padding %s"
            % (kh, kw, h, wd, params.padding)
        )
    if params.bias is not None and params.bias.shape != (c_out,):
        raise ValueError(
            "bias shape %s does not match c_out=%s" % (params.bias.shape, c_out)
        )


def _pad(x, p):
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _tap(xp, i, j, s, ho, wo):
    """Input samples seen by kernel tap (i, j) for every output position"""
    return xp[:, :, i : i + (ho - 1) * s + 1 : s, j : j + (wo - 1) * s + 1 : s]


def _windows(xp, k, s, ho, wo):
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    return win[:, :, : (ho - 1) * s + 1 : s, : (wo - 1) * s + 1 : s]


def _dense_forward(xp, w, s, ho, wo):
    k = w.shape[2]
    if k == 1:
        xs = _tap(xp, 0, 0, s, ho, wo)
        out = np.tensordot(w[:, :, 0, 0], xs, axes=([1], [1]))
        return np.ascontiguousarray(out.transpose(1, 0, 2, 3))
    win = _windows(xp, k, s, ho, wo)
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def _dense_backward(g, xp, w, s):
    _, _, ho, wo = g.shape
    k = w.shape[2]
    gxp = np.zeros_like(xp)
    for i in range(k):
        for j in range(k):
            contrib = np.tensordot(g, w[:, :, i, j], axes=([1], [0]))
            gxp[:, :, i : i + (ho - 1) * s + 1 : s, j : j + (wo - 1) * s + 1 : s] += (
                contrib.transpose(0, 3, 1, 2)
            )
    if k == 1:
        xs = _tap(xp, 0, 0, s, ho, wo)
        gw = np.tensordot(g, xs, axes=([0, 2, 3], [0, 2, 3]))[:, :, None, None]
    else:
        win = _windows(xp, k, s, ho, wo)
        gw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
    return gxp, gw


def _depthwise_forward(xp, w, s, ho, wo):
    n, c = xp.shape[:2]
    k = w.shape[2]
    out = np.zeros((n, c, ho, wo), dtype=np.result_type(xp, w))
    for i in range(k):
        for j in range(k):
            out += _tap(xp, i, j, s, ho, wo) * w[:, 0, i, j][None, :, None, None]
    return out


def _depthwise_backward(g, xp, w, s):
    _, _, ho, wo = g.shape
    k = w.shape[2]
    gxp = np.zeros_like(xp)
    gw = np.zeros_like(w)
    for i in range(k):
        for j in range(k):
            gxp[:, :, i : i + (ho - 1) * s + 1 : s, j : j + (wo - 1) * s + 1 : s] += (
                g * w[:, 0, i, j][None, :, None, None]
            )
            gw[:, 0, i, j] = (g * _tap(xp, i, j, s, ho, wo)).sum(axis=(0, 2, 3))
    return gxp, gw


def _grouped_slices(params):
    groups = params.groups
    cin_g = params.weight.shape[1]
    cout_g = params.c_out // groups
    for gi in range(groups):
        yield slice(gi * cin_g, (gi + 1) * cin_g), slice(gi * cout_g, (gi + 1) * cout_g)


def conv2d(x, params):
    """2D cross-correlation with optional bias

    Args:
        x (Tensor): input, shape (n, c_in, h, w)
        params (ConvParams): weight, bias and geometry

    Returns:
        Tensor: shape (n, c_out, h_out, w_out) with
            h_out = (h + 2p - k) // stride + 1
    """
    _check_conv(x, params)
    w = params.weight.data
    s, p = params.stride, params.padding
    ho, wo = params.output_size(x.shape[2], x.shape[3])
    xp = _pad(x.data, p)

    if params.groups == 1:
        out = _dense_forward(xp, w, s, ho, wo)
    elif params.is_depthwise:
        out = _depthwise_forward(xp, w, s, ho, wo)
    else:
        out = np.concatenate(
            [
                _dense_forward(xp[:, ci], w[co], s, ho, wo)
                for ci, co in _grouped_slices(params)
            ],
            axis=1,
        )
    if params.bias is not None:
        out = out + params.bias.data[None, :, None, None]

    inputs = [x, params.weight]
    if params.bias is not None:
        inputs.append(params.bias)

    def vjp(g):
        if params.groups == 1:
            gxp, gw = _dense_backward(g, xp, w, s)
        elif params.is_depthwise:
            gxp, gw = _depthwise_backward(g, xp, w, s)
        else:
            gxp = np.zeros_like(xp)
            gw = np.zeros_like(w)
            for ci, co in _grouped_slices(params):
                gxp[:, ci], gw[co] = _dense_backward(g[:, co], xp[:, ci], w[co], s)
        h, wd = x.shape[2], x.shape[3]
        gx = gxp[:, :, p : p + h, p : p + wd]
        grads = [gx, gw]
        if params.bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return record(Tensor(out), inputs, vjp)


def batchnorm(
    x,
    gamma,
    beta,
    running_mean,
    running_var,
    training=False,
    momentum=BN_MOMENTUM,
    eps=BN_EPS,
):
    """Per-channel batch normalization

    Args:
        x (Tensor): (n, c, h, w)
        gamma, beta (Tensor): scale and shift, length c
        running_mean, running_var (ndarray): length-c running statistics.
            Updated in place when `training` is True
        training (bool): normalize with batch statistics (True) or the
            running statistics (False)
        momentum (float): running = (1 - momentum) * running + momentum * batch
        eps (float): added to the variance

    Returns:
        Tensor
    """
    _check_4d(x, "batchnorm")
    c = x.shape[1]
    if c == 0:
        raise ValueError("batchnorm got a zero-length channel dimension")
    for name, arr in (
        ("gamma", gamma.data),
        ("beta", beta.data),
        ("running_mean", running_mean),
        ("running_var", running_var),
    ):
        if arr.shape != (c,):
            raise ValueError("%s shape %s does not match c=%s" % (name, arr.shape, c))
    if eps <= 0:
        raise ValueError("eps must be positive, got %s" % eps)

    data = x.data
    bshape = (1, c, 1, 1)
    g_ = gamma.data.reshape(bshape)
    if training:
        mean = data.mean(axis=(0, 2, 3))
        var = data.var(axis=(0, 2, 3))
        count = data.size // c
        unbiased = var * count / (count - 1) if count > 1 else var
        running_mean *= 1 - momentum
        running_mean += momentum * mean
        running_var *= 1 - momentum
        running_var += momentum * unbiased
    else:
        mean = running_mean.astype(data.dtype)
        var = running_var.astype(data.dtype)
    inv_std = (1.0 / np.sqrt(var + eps)).astype(data.dtype).reshape(bshape)
    xhat = (data - mean.reshape(bshape)) * inv_std
    out = xhat * g_ + beta.data.reshape(bshape)

    def vjp(g):
        dgamma = (g * xhat).sum(axis=(0, 2, 3))
        dbeta = g.sum(axis=(0, 2, 3))
        dxhat = g * g_
        if training:
            m = data.size // c
            dx = (
                inv_std
                / m
                * (
                    m * dxhat
                    - dxhat.sum(axis=(0, 2, 3), keepdims=True)
                    - xhat * (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
                )
            )
        else:
            dx = dxhat * inv_std
        return dx, dgamma, dbeta

    return record(Tensor(out), [x, gamma, beta], vjp)


def activation(x, kind):
    """Elementwise relu6, sigmoid or swish (x * sigmoid(x))"""
    data = x.data
    if kind == "relu6":
        out = np.clip(data, 0, 6)

        def vjp(g):
            return (g * ((data > 0) & (data < 6)),)

    elif kind == "sigmoid":
        out = expit(data)

        def vjp(g):
            return (g * out * (1 - out),)

    elif kind == "swish":
        sig = expit(data)
        out = data * sig

        def vjp(g):
            return (g * (sig + data * sig * (1 - sig)),)

    else:
        raise ValueError("unknown activation %r, expected one of %s" % (kind, ACTIVATIONS))
    return record(Tensor(out), [x], vjp)


def resize(x, factor, direction):
    """Power-of-two resampling: nearest-neighbor up, average-pool down"""
    _check_4d(x, "resize")
    if not is_power_of_two(factor):
        raise ValueError("resize factor must be a power of two, got %s" % factor)
    n, c, h, w = x.shape
    data = x.data
    if factor == 1:
        out = data.copy()

        def vjp(g):
            return (g,)

    elif direction == "up":
        out = data.repeat(factor, axis=2).repeat(factor, axis=3)

        def vjp(g):
            return (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),)

    elif direction == "down":
        if h % factor or w % factor:
            raise ValueError(
                "cannot downsample %sx%s by %s: size not divisible" % (h, w, factor)
            )
        out = data.reshape(n, c, h // factor, factor, w // factor, factor).mean(axis=(3, 5))

        def vjp(g):
            scale = 1.0 / (factor * factor)
            up = g.repeat(factor, axis=2).repeat(factor, axis=3)
            return (up * scale,)

    else:
        raise ValueError("resize direction must be 'up' or 'down', got %r" % direction)
    return record(Tensor(out), [x], vjp)


def resize_to(x, from_stride, to_stride):
    """Resample a feature map living at `from_stride` to `to_stride`"""
    coarse, fine = max(from_stride, to_stride), min(from_stride, to_stride)
    if coarse % fine or not is_power_of_two(coarse // fine):
        raise ValueError(
            "stride %s is not reachable from stride %s by a power-of-two resize"
            % (to_stride, from_stride)
        )
    direction = "down" if to_stride > from_stride else "up"
    return resize(x, coarse // fine, direction)


def fusion_coefficients(w, eps):
    """Normalized fusion weights relu(w) / (sum(relu(w)) + eps)"""
    pos = np.maximum(w, 0)
    total = pos.sum() + eps
    if total <= 0:
        raise ValueError("fusion weights sum to zero with eps=0")
    return pos / total


def weighted_fusion(inputs, weights, eps=FUSION_EPS):
    """Sum of inputs with ReLU-normalized trainable weights

    Args:
        inputs (list[Tensor]): tensors of one shared shape
        weights (Tensor): one weight per input
        eps (float): stabilizer added to the weight sum

    Returns:
        Tensor: sum_i w_hat_i * x_i
    """
    if not inputs:
        raise ValueError("weighted_fusion needs at least one input")
    shape = inputs[0].shape
    for t in inputs[1:]:
        if t.shape != shape:
            raise ValueError("weighted_fusion shape mismatch: %s vs %s" % (t.shape, shape))
    w = weights.data
    if w.shape != (len(inputs),):
        raise ValueError(
            "got %s fusion weights for %s inputs" % (w.size, len(inputs))
        )
    coef = fusion_coefficients(w, eps).astype(np.result_type(inputs[0].data, w))
    out = coef[0] * inputs[0].data
    for c_i, t in zip(coef[1:], inputs[1:]):
        out = out + c_i * t.data

    def vjp(g):
        grads = [g * c_i for c_i in coef]
        dots = np.array([(g * t.data).sum() for t in inputs], dtype=w.dtype)
        total = np.maximum(w, 0).sum() + eps
        gw = (dots - (coef * dots).sum()) / total
        gw = np.where(w > 0, gw, 0).astype(w.dtype)
        grads.append(gw)
        return grads

    return record(Tensor(out), list(inputs) + [weights], vjp)


def global_avg_pool(x):
    _check_4d(x, "global_avg_pool")
    n, c, h, w = x.shape
    if h < 1 or w < 1:
        raise ValueError("global_avg_pool needs h, w >= 1, got %sx%s" % (h, w))
    out = x.data.mean(axis=(2, 3), keepdims=True)

    def vjp(g):
        return (np.broadcast_to(g / (h * w), x.shape).copy(),)

    return record(Tensor(out), [x], vjp)


def eltwise_add(inputs):
    """Elementwise sum of tensors with identical shapes"""
    if not inputs:
        raise ValueError("eltwise_add needs at least one input")
    shape = inputs[0].shape
    for t in inputs[1:]:
        if t.shape != shape:
            raise ValueError("eltwise_add shape mismatch: %s vs %s" % (t.shape, shape))
    out = inputs[0].data
    for t in inputs[1:]:
        out = out + t.data
    if len(inputs) == 1:
        out = out.copy()

    def vjp(g):
        return [g] * len(inputs)

    return record(Tensor(out), list(inputs), vjp)


def concat_channels(inputs):
    """Concatenate along the channel axis, keeping input order"""
    if not inputs:
        raise ValueError("concat_channels needs at least one input")
    for t in inputs:
        _check_4d(t, "concat_channels")
    n, _, h, w = inputs[0].shape
    for t in inputs[1:]:
        if (t.shape[0], t.shape[2], t.shape[3]) != (n, h, w):
            raise ValueError(
                "concat_channels needs equal n, h, w: %s vs %s"
                % (t.shape, inputs[0].shape)
            )
    out = np.concatenate([t.data for t in inputs], axis=1)
    bounds = np.cumsum([0] + [t.shape[1] for t in inputs])

    def vjp(g):
        return [g[:, bounds[i] : bounds[i + 1]] for i in range(len(inputs))]

    return record(Tensor(out), list(inputs), vjp)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def multiply(a, b):
    """Elementwise product with numpy broadcasting (e.g. channel gates)"""
    try:
        out = a.data * b.data
    except ValueError:
        raise ValueError("cannot broadcast shapes %s and %s" % (a.shape, b.shape))

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return record(Tensor(out), [a, b], vjp)


def reduce_sum(x):
    """Sum of all elements as a 0-d tensor"""
    out = np.asarray(x.data.sum())

    def vjp(g):
        return (np.broadcast_to(g, x.shape).astype(x.dtype),)

    return record(Tensor(out), [x], vjp)
