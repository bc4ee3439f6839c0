"""Multiply-accumulate accounting over symbolic layer descriptions

Layers describe themselves with `describe(h, w, prefix)`, returning one
`ConvShape` per convolution. All counts here are MACs, not 2 * MACs.
"""
from collections import OrderedDict
from dataclasses import dataclass
from typing import Optional

UNIT = "MAC"


@dataclass(frozen=True)
class ConvShape:
    name: str
    c_in: int
    c_out: int
    kernel: int
    groups: int = 1
    h_out: Optional[int] = None
    w_out: Optional[int] = None

    @property
    def macs(self):
        if self.h_out is None or self.w_out is None:
            raise ValueError("layer %s has no output size" % self.name)
        return self.c_out * (self.c_in // self.groups) * self.kernel ** 2 * self.h_out * self.w_out

    @property
    def num_weights(self):
        return self.c_out * (self.c_in // self.groups) * self.kernel ** 2


def flops_of(layers):
    """Total MACs over a list of ConvShape

    Raises:
        ValueError: if the description is empty or any layer lacks an output size
    """
    layers = list(layers)
    if not layers:
        raise ValueError("cannot count MACs of an empty model description")
    return sum(layer.macs for layer in layers)


def macs_by_prefix(layers, depth=1):
    """MAC totals grouped by the first `depth` dotted parts of each layer name"""
    totals = OrderedDict()
    for layer in layers:
        key = ".".join(layer.name.split(".")[:depth])
        totals[key] = totals.get(key, 0) + layer.macs
    return totals
