"""
Storage module for model weights.
Holds named parameter tensors in construction order and reads/writes the
little-endian "PVT2" binary format bit-exactly.

Layout:
    magic "PVT2" | version u32 | entry count u64
    per entry: path length u32 | UTF-8 path | dtype u8 (0=f32, 1=f64) |
               rank u32 | extents u64 each | raw little-endian data
"""
import logging
import math
import struct
from collections import OrderedDict

import numpy as np

from tensor.tensor import Tensor
from utils.config import WEIGHTS_FORMAT_VERSION, WEIGHTS_MAGIC
from utils.errors import (
    InvalidShapeError,
    WeightCorruptionError,
    WeightFormatError,
    WeightVersionError,
)

logger = logging.getLogger(__name__)

_HEADER = struct.Struct("<4sIQ")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")
_U8 = struct.Struct("<B")

DTYPE_TAGS = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
TAG_DTYPES = {tag: np.dtype(dtype).newbyteorder("<") for dtype, tag in DTYPE_TAGS.items()}


class WeightStore:
    """Ordered, uniquely-named collection of parameter tensors."""

    def __init__(self, entries=()):
        """
        Initialize weight store.

        Args:
            entries: Iterable of (path, Tensor) pairs, kept in order
        """
        self._entries = OrderedDict()
        for path, tensor in entries:
            self.add(path, tensor)

    def add(self, path, tensor):
        if path in self._entries:
            raise InvalidShapeError(f"duplicate weight path {path!r}")
        if not isinstance(tensor, Tensor):
            tensor = Tensor(tensor)
        self._entries[path] = tensor
        return tensor

    def __getitem__(self, path):
        return self._entries[path]

    def __contains__(self, path):
        return path in self._entries

    def get(self, path):
        return self._entries.get(path)

    def __iter__(self):
        return iter(self._entries)

    def __len__(self):
        return len(self._entries)

    def items(self):
        return self._entries.items()

    def paths(self):
        return list(self._entries)

    def total_elements(self):
        return sum(t.size for t in self._entries.values())

    def scope(self, prefix):
        """Read-only view resolving 'name' to '<prefix>.name'."""
        return WeightScope(self, prefix)

    def watch(self, tape):
        """Copy of the store whose tensors are all tracked by `tape`."""
        return WeightStore((path, tape.watch(t)) for path, t in self._entries.items())

    def replace(self, path, tensor):
        """Copy of the store with one entry swapped (same position)."""
        if path not in self._entries:
            raise KeyError(path)
        return WeightStore((p, tensor if p == path else t) for p, t in self._entries.items())

    def bit_equal(self, other):
        """Same paths, order, dtypes, shapes and buffer bits."""
        if self.paths() != other.paths():
            return False
        for path, tensor in self._entries.items():
            theirs = other[path]
            if tensor.dtype != theirs.dtype or tensor.shape != theirs.shape:
                return False
            if tensor.data.tobytes() != theirs.data.tobytes():
                return False
        return True


class WeightScope:
    """Prefix view over a WeightStore, used to hand one layer its parameters."""

    def __init__(self, store, prefix):
        self.store = store
        self.prefix = prefix

    def _key(self, name):
        return f"{self.prefix}.{name}" if self.prefix else name

    def __getitem__(self, name):
        return self.store[self._key(name)]

    def __contains__(self, name):
        return self._key(name) in self.store

    def get(self, name):
        key = self._key(name)
        return self.store[key] if key in self.store else None

    def scope(self, prefix):
        return WeightScope(self.store, self._key(prefix))


def encode_weights(store):
    """Serialize a store to bytes."""
    chunks = [_HEADER.pack(WEIGHTS_MAGIC, WEIGHTS_FORMAT_VERSION, len(store))]
    for path, tensor in store.items():
        if tensor.dtype not in DTYPE_TAGS:
            raise InvalidShapeError(f"{path}: unsupported dtype {tensor.dtype}")
        encoded_path = path.encode("utf-8")
        chunks.append(_U32.pack(len(encoded_path)))
        chunks.append(encoded_path)
        chunks.append(_U8.pack(DTYPE_TAGS[tensor.dtype]))
        chunks.append(_U32.pack(tensor.ndim))
        chunks.extend(_U64.pack(extent) for extent in tensor.shape)
        chunks.append(tensor.data.astype(tensor.dtype.newbyteorder("<"), copy=False).tobytes())
    return b"".join(chunks)


class _Reader:
    def __init__(self, payload):
        self.payload = payload
        self.offset = 0

    def take(self, size, what):
        if self.offset + size > len(self.payload):
            raise WeightCorruptionError(
                f"truncated weight data: need {size} bytes for {what} at offset {self.offset}, "
                f"{len(self.payload) - self.offset} left"
            )
        chunk = self.payload[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, layout, what):
        return layout.unpack(self.take(layout.size, what))[0]


def decode_weights(payload):
    """Parse bytes produced by encode_weights."""
    if len(payload) < 4 or payload[:4] != WEIGHTS_MAGIC:
        found = bytes(payload[:4])
        raise WeightFormatError(f"bad magic {found!r}; expected {WEIGHTS_MAGIC!r}")
    if len(payload) < _HEADER.size:
        raise WeightCorruptionError(f"truncated header: {len(payload)} of {_HEADER.size} bytes")
    _, version, count = _HEADER.unpack_from(payload)
    if version != WEIGHTS_FORMAT_VERSION:
        raise WeightVersionError(f"unsupported weight format version {version}; expected {WEIGHTS_FORMAT_VERSION}")

    reader = _Reader(payload)
    reader.offset = _HEADER.size
    store = WeightStore()
    for index in range(count):
        path_len = reader.unpack(_U32, f"entry {index} path length")
        try:
            path = reader.take(path_len, f"entry {index} path").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise WeightCorruptionError(f"entry {index}: path is not valid UTF-8") from exc
        tag = reader.unpack(_U8, f"{path} dtype")
        if tag not in TAG_DTYPES:
            raise WeightCorruptionError(f"{path}: unknown dtype tag {tag}")
        dtype = TAG_DTYPES[tag]
        rank = reader.unpack(_U32, f"{path} rank")
        shape = tuple(reader.unpack(_U64, f"{path} extent") for _ in range(rank))
        if rank == 0 or any(extent < 1 for extent in shape):
            raise WeightCorruptionError(f"{path}: invalid shape {list(shape)}")
        nbytes = math.prod(shape) * dtype.itemsize
        data = np.frombuffer(reader.take(nbytes, f"{path} data"), dtype=dtype).reshape(shape)
        if path in store:
            raise WeightCorruptionError(f"duplicate weight path {path!r}")
        store.add(path, Tensor(data, dtype=dtype.newbyteorder("=")))
    if reader.offset != len(payload):
        raise WeightCorruptionError(f"{len(payload) - reader.offset} trailing bytes after {count} entries")
    return store


def save_weights(store, destination):
    """
    Write a store to disk.

    Args:
        store: WeightStore
        destination: File path

    Returns:
        int: Number of bytes written
    """
    payload = encode_weights(store)
    try:
        with open(destination, "wb") as f:
            f.write(payload)
    except OSError as exc:
        raise OSError(f"failed to write weights to {destination}: {exc.strerror or exc}") from exc
    logger.info("Saved %d tensors (%d bytes) to %s", len(store), len(payload), destination)
    return len(payload)


def load_weights(source):
    """
    Read a store written by save_weights.

    Args:
        source: File path

    Returns:
        WeightStore: Entries in file order
    """
    try:
        with open(source, "rb") as f:
            payload = f.read()
    except OSError as exc:
        raise OSError(f"failed to read weights from {source}: {exc.strerror or exc}") from exc
    store = decode_weights(payload)
    logger.info("Loaded %d tensors from %s", len(store), source)
    return store
