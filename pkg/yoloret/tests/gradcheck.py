"""Central finite-difference checks against the ledger gradients"""
import numpy as np

from yoloret import kernels
from yoloret.tensor import GradientLedger, Tensor, backward


def projection_loss(out, seed=123):
    """Scalar sum(out * r) for a fixed random r, so every output element matters"""
    r = np.random.default_rng(seed).standard_normal(out.shape).astype(out.dtype)
    return kernels.reduce_sum(kernels.multiply(out, Tensor(r)))


def analytic(loss_fn, named):
    """Ledger gradients of loss_fn() for the (name, Tensor) pairs in `named`"""
    ledger = GradientLedger().watch(named.items())
    with ledger.recording():
        loss = loss_fn()
    return backward(ledger, loss)


def numeric(loss_fn, tensor, eps=1e-3, max_entries=None, seed=0):
    """Central differences for (a subset of) the entries of `tensor`

    Returns:
        tuple[ndarray, ndarray]: flat indices checked and their derivatives
    """
    tensor.data = np.ascontiguousarray(tensor.data)
    flat = tensor.data.reshape(-1)
    idx = np.arange(flat.size)
    if max_entries is not None and flat.size > max_entries:
        idx = np.random.default_rng(seed).choice(flat.size, size=max_entries, replace=False)
    out = np.zeros(len(idx))
    for k, i in enumerate(idx):
        orig = flat[i]
        flat[i] = orig + eps
        up = loss_fn().item()
        flat[i] = orig - eps
        down = loss_fn().item()
        flat[i] = orig
        out[k] = (up - down) / (2 * eps)
    return idx, out


def check_gradients(testcase, loss_fn, named, eps=1e-3, rtol=1e-3, atol=1e-5, max_entries=None):
    """Assert ledger and finite-difference gradients agree for every tensor"""
    grads = analytic(loss_fn, named)
    for name, tensor in named.items():
        idx, num = numeric(loss_fn, tensor, eps=eps, max_entries=max_entries)
        np.testing.assert_allclose(
            grads[name].reshape(-1)[idx], num, rtol=rtol, atol=atol, err_msg="gradient of %s" % name
        )


def pyramid_loss(pyramid):
    """projection_loss summed over every level of a FeaturePyramid"""
    return kernels.eltwise_add([projection_loss(f, seed=i) for i, (_, f) in enumerate(pyramid)])


def jitter_betas(layer, scale=0.05, seed=0):
    """Shift every batchnorm beta off zero so no relu6 sits exactly on a kink"""
    rng = np.random.default_rng(seed)
    for name, tensor in layer.named_parameters():
        if name.endswith("beta"):
            tensor.data = tensor.data + scale * rng.standard_normal(tensor.shape).astype(tensor.dtype)
    return layer
