"""tensor.py
Dense tensor value type and tape-based reverse-mode gradients

Every kernel in `kernels.py` returns a new `Tensor` and, when a `GradientLedger`
is recording on the current thread, appends one record holding the
vector-Jacobian product of that op. `backward` walks the tape in reverse.

Usage:

    ledger = GradientLedger()
    ledger.watch(model.named_parameters())
    with ledger.recording():
        loss = some_ops(x)
    grads = backward(ledger, loss)
"""
import threading
from collections import OrderedDict, namedtuple
from contextlib import contextmanager

import numpy as np

DEFAULT_DTYPE = np.float32

_Record = namedtuple("_Record", "output inputs vjp")
_local = threading.local()


class Tensor(object):
    """Dense array in (batch, channel, height, width) layout

    Feature maps and images are 4D. Parameters may be any rank (e.g. the
    1D batchnorm scale, or the fusion weights), and losses are 0-d.

    Attributes:
        data (ndarray): the values. float32 unless built from float64 data
            (gradient checks run the same kernels in float64)
        requires_grad (bool): whether gradients flow back to this tensor
        name (str): parameter name, set on trainable parameters
    """

    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad=False, name=None):
        data = np.asarray(data)
        if not np.issubdtype(data.dtype, np.floating):
            data = data.astype(DEFAULT_DTYPE)
        self.data = data
        self.requires_grad = requires_grad
        self.name = name

    def __repr__(self):
        label = " %s" % self.name if self.name else ""
        return "<Tensor%s shape=%s dtype=%s>" % (label, self.shape, self.dtype)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0])


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name=None):
    """Trainable tensor: float data with requires_grad set"""
    return Tensor(np.asarray(data), requires_grad=True, name=name)


class GradientLedger(object):
    """Recorded operation graph plus the gradients computed from it

    A ledger belongs to a single thread: `recording()` pushes it on a
    thread-local stack, so concurrent inference threads never see it.

    Attributes:
        records (list): (output, inputs, vjp) per recorded op, in execution order
        parameters (OrderedDict): name -> Tensor of watched parameters
        gradients (OrderedDict): name -> ndarray, filled by `backward`
    """

    def __init__(self):
        self.records = []
        self.parameters = OrderedDict()
        self.gradients = OrderedDict()
        self._grads_by_id = {}

    def watch(self, named_tensors):
        """Register (name, Tensor) pairs whose gradients `backward` reports"""
        for name, tensor in named_tensors:
            if name in self.parameters and self.parameters[name] is not tensor:
                raise ValueError("parameter name %s watched twice" % name)
            self.parameters[name] = tensor
        return self

    @contextmanager
    def recording(self):
        stack = _ledger_stack()
        stack.append(self)
        try:
            yield self
        finally:
            stack.pop()

    def clear(self):
        self.records = []
        self.gradients = OrderedDict()
        self._grads_by_id = {}

    def grad_of(self, tensor):
        """Gradient of the last `backward` loss w.r.t. any recorded tensor"""
        g = self._grads_by_id.get(id(tensor))
        return np.zeros_like(tensor.data) if g is None else g


def _ledger_stack():
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_ledger():
    stack = _ledger_stack()
    return stack[-1] if stack else None


def record(output, inputs, vjp):
    """Attach `output` to the active ledger's tape

    Args:
        output (Tensor): result of the op
        inputs (list[Tensor]): op inputs, in the order `vjp` returns gradients
        vjp (callable): maps the output gradient to a tuple with one entry per
            input (None for inputs that need no gradient)

    Returns:
        Tensor: `output`, marked requires_grad when anything upstream requires it
    """
    ledger = active_ledger()
    if ledger is None or not any(t.requires_grad for t in inputs):
        return output
    output.requires_grad = True
    ledger.records.append(_Record(output, tuple(inputs), vjp))
    return output


def backward(ledger, loss):
    """Reverse-mode pass from a scalar loss over the ledger's tape

    Args:
        ledger (GradientLedger): ledger that recorded the forward pass
        loss (Tensor): scalar (one-element) tensor

    Returns:
        OrderedDict: parameter name -> gradient array of the parameter's shape.
            Watched parameters the loss does not reach get zeros. With nothing
            watched, every named tensor that required grad on the tape is reported.

    Raises:
        ValueError: if `loss` is not scalar or was not produced on the tape
    """
    if loss.size != 1:
        raise ValueError("loss must be a scalar, got shape %s" % (loss.shape,))
    outputs = set(id(r.output) for r in ledger.records)
    watched = set(id(p) for p in ledger.parameters.values())
    if id(loss) not in outputs and id(loss) not in watched:
        raise ValueError("loss is not reachable from the recorded graph")

    grads = {id(loss): np.ones_like(loss.data)}
    for rec in reversed(ledger.records):
        g_out = grads.get(id(rec.output))
        if g_out is None:
            continue
        input_grads = rec.vjp(g_out)
        for tensor, g in zip(rec.inputs, input_grads):
            if g is None or not tensor.requires_grad:
                continue
            if g.shape != tensor.shape:
                raise ValueError(
                    "gradient shape %s does not match tensor shape %s"
                    % (g.shape, tensor.shape)
                )
            key = id(tensor)
            if key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = g

    named = ledger.parameters
    if not named:
        named = OrderedDict()
        for rec in ledger.records:
            for t in rec.inputs:
                if t.name and t.requires_grad and t.name not in named:
                    named[t.name] = t

    result = OrderedDict()
    for name, tensor in named.items():
        g = grads.get(id(tensor))
        result[name] = np.zeros_like(tensor.data) if g is None else g.astype(tensor.dtype, copy=False)
    ledger.gradients = result
    ledger._grads_by_id = grads
    return result


def make_rng(seed=0):
    """The single seeded generator all parameter initialization draws from"""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def he_normal(rng, shape, fan_in, dtype=DEFAULT_DTYPE):
    """Zero-mean normal with variance 2 / fan_in"""
    std = np.sqrt(2.0 / fan_in)
    return (rng.standard_normal(shape) * std).astype(dtype)
