"""weights.py
Named float32 tensors and the .yrw container file

Layout (all integers little-endian):

    offset 0   magic            4 bytes  b"YRW1"
    offset 4   format version   u32
    offset 8   manifest length  u64      (bytes)
    offset 16  manifest         UTF-8 JSON
               zero padding to the next 64-byte boundary: the blob start
               tensor data      float32 LE, each tensor starting at a 64-byte
                                aligned offset relative to the blob start

The manifest is {"precision": "float32", "tensors": [{"name", "shape",
"offset", "nbytes"}, ...]} with tensors in store order.
"""
import json
import struct
from collections import OrderedDict

import numpy as np

from .constants import DEFAULT_TAP_STRIDES, WEIGHTS_ALIGN, WEIGHTS_MAGIC, WEIGHTS_VERSION
from .log import get_log
from .utils import align_up

logger = get_log()

HEADER = struct.Struct("<4sIQ")
BLOB_DTYPE = np.dtype("<f4")


class WeightStore(object):
    """Ordered name -> float32 array mapping"""

    def __init__(self, arrays=None):
        self._arrays = OrderedDict()
        if arrays is not None:
            for name, arr in arrays.items():
                self[name] = arr

    def __setitem__(self, name, arr):
        if not isinstance(name, str) or not name:
            raise ValueError("tensor names must be non-empty strings, got %r" % (name,))
        self._arrays[name] = np.array(arr, dtype=np.float32)

    def __getitem__(self, name):
        return self._arrays[name]

    def __contains__(self, name):
        return name in self._arrays

    def __iter__(self):
        return iter(self._arrays)

    def __len__(self):
        return len(self._arrays)

    def __delitem__(self, name):
        del self._arrays[name]

    def keys(self):
        return self._arrays.keys()

    def items(self):
        return self._arrays.items()

    def names(self):
        return list(self._arrays)

    def num_values(self):
        return int(sum(a.size for a in self._arrays.values()))

    def manifest(self):
        """Entries with blob-relative offsets, as written by weights_save"""
        entries = []
        offset = 0
        for name, arr in self._arrays.items():
            nbytes = arr.size * BLOB_DTYPE.itemsize
            entries.append(
                {"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": nbytes}
            )
            offset = align_up(offset + nbytes, WEIGHTS_ALIGN)
        return entries

    @classmethod
    def from_model(cls, model):
        return cls(model.state_dict())

    def equals(self, other):
        """Same names in the same order with bitwise-equal values"""
        if self.names() != other.names():
            return False
        return all(
            self[n].shape == other[n].shape and self[n].tobytes() == other[n].tobytes()
            for n in self.names()
        )


def weights_save(store, path):
    """Write `store` to `path` in the container format"""
    entries = store.manifest()
    manifest = json.dumps({"precision": "float32", "tensors": entries}).encode("utf-8")
    blob_start = align_up(HEADER.size + len(manifest), WEIGHTS_ALIGN)
    with open(path, "wb") as f:
        f.write(HEADER.pack(WEIGHTS_MAGIC, WEIGHTS_VERSION, len(manifest)))
        f.write(manifest)
        f.write(b"\0" * (blob_start - HEADER.size - len(manifest)))
        pos = 0
        for entry in entries:
            f.write(b"\0" * (entry["offset"] - pos))
            data = store[entry["name"]].astype(BLOB_DTYPE, copy=False).tobytes()
            f.write(data)
            pos = entry["offset"] + len(data)
    logger.debug("Saved %s tensors to %s", len(entries), path)


def weights_load(path):
    """Read and validate a container file

    Raises:
        OSError: if the file cannot be read
        ValueError: with a message starting "bad magic", "unsupported version",
            "truncated file", "corrupt manifest", "misaligned offset",
            "offset out of range" or "overlapping offsets"
    """
    with open(path, "rb") as f:
        raw = f.read()
    return weights_from_bytes(raw, source=str(path))


def weights_from_bytes(raw, source="<bytes>"):
    if len(raw) < HEADER.size:
        raise ValueError("truncated file: %s has %s bytes, header needs %s" % (source, len(raw), HEADER.size))
    magic, version, manifest_len = HEADER.unpack_from(raw, 0)
    if magic != WEIGHTS_MAGIC:
        raise ValueError("bad magic %r in %s, expected %r" % (magic, source, WEIGHTS_MAGIC))
    if version != WEIGHTS_VERSION:
        raise ValueError("unsupported version %s in %s (supported: %s)" % (version, source, WEIGHTS_VERSION))
    if HEADER.size + manifest_len > len(raw):
        raise ValueError("truncated file: manifest of %s bytes runs past the end of %s" % (manifest_len, source))
    try:
        manifest = json.loads(raw[HEADER.size : HEADER.size + manifest_len].decode("utf-8"))
        entries = manifest["tensors"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as e:
        raise ValueError("corrupt manifest in %s: %s" % (source, e))

    blob_start = align_up(HEADER.size + manifest_len, WEIGHTS_ALIGN)
    blob_len = len(raw) - blob_start
    spans = []
    store = WeightStore()
    for entry in entries:
        try:
            name, shape, offset = entry["name"], tuple(entry["shape"]), int(entry["offset"])
        except (KeyError, TypeError, ValueError) as e:
            raise ValueError("corrupt manifest entry %r: %s" % (entry, e))
        if name in store:
            raise ValueError("corrupt manifest: duplicate tensor name %s" % name)
        nbytes = int(np.prod(shape, dtype=np.int64)) * BLOB_DTYPE.itemsize
        if entry.get("nbytes", nbytes) != nbytes:
            raise ValueError("corrupt manifest: %s has nbytes %s but shape %s" % (name, entry["nbytes"], shape))
        if offset < 0:
            raise ValueError("offset out of range: %s starts at %s" % (name, offset))
        if offset % WEIGHTS_ALIGN:
            raise ValueError("misaligned offset %s for %s (alignment %s)" % (offset, name, WEIGHTS_ALIGN))
        if offset + nbytes > blob_len:
            raise ValueError(
                "truncated file: %s needs bytes [%s, %s) of a %s-byte blob"
                % (name, offset, offset + nbytes, blob_len)
            )
        spans.append((offset, offset + nbytes, name))
        start = blob_start + offset
        arr = np.frombuffer(raw, dtype=BLOB_DTYPE, count=nbytes // BLOB_DTYPE.itemsize, offset=start)
        store[name] = arr.reshape(shape)

    spans.sort()
    for (s0, e0, n0), (s1, e1, n1) in zip(spans, spans[1:]):
        if s1 < e0:
            raise ValueError("overlapping offsets: %s [%s, %s) and %s [%s, %s)" % (n0, s0, e0, n1, s1, e1))
    logger.debug("Loaded %s tensors from %s", len(store), source)
    return store


# Tensors keyed by the stride of a raw backbone tap; their channel count
# follows the last kept backbone block.
TAP_CONSUMERS = ("rfcr.collect.", "rfcr.redistribute.", "neck.entry.")


def truncate_weights(store, blocks, tap_stride=max(DEFAULT_TAP_STRIDES), prefix="backbone.blocks."):
    """Drop the tensors of the last `blocks` backbone blocks

    Removing trailing blocks changes the channel count of the deepest tap,
    so every tensor reading that tap (`TAP_CONSUMERS` at `tap_stride`) is
    dropped as well. Load the result with `YoloReT.load_partial`; the
    dropped consumers keep their fresh initialization.

    Args:
        store (WeightStore)
        blocks (int): number of trailing blocks to remove
        tap_stride (int): stride of the deepest backbone tap
        prefix (str): name prefix of backbone blocks

    Returns:
        WeightStore: new store without those blocks
    """
    indices = sorted(
        set(int(n[len(prefix):].split(".")[0]) for n in store.names() if n.startswith(prefix))
    )
    if blocks < 0:
        raise ValueError("blocks must be non-negative, got %s" % blocks)
    if blocks >= len(indices):
        raise ValueError("cannot remove %s of %s backbone blocks" % (blocks, len(indices)))
    dropped = set(indices[len(indices) - blocks :])
    consumers = tuple("%s%d." % (p, tap_stride) for p in TAP_CONSUMERS) if blocks else ()
    out = WeightStore()
    for name, arr in store.items():
        if name.startswith(prefix) and int(name[len(prefix):].split(".")[0]) in dropped:
            continue
        if name.startswith(consumers):
            continue
        out[name] = arr
    logger.info("Removed blocks %s: %s -> %s values", sorted(dropped), store.num_values(), out.num_values())
    return out
