"""Named parameter collections and their versioned binary serialization."""

from __future__ import annotations

import hashlib
import struct

import numpy as np

from .autodiff import Tensor
from .errors import DataError, UsageError

_MAGIC = b"CSLP"
_VERSION = 1


class ParamSet:
    """Flat map from parameter path to Tensor, plus a trainable flag each.

    Non-trainable entries (batch-norm running statistics) are carried through
    copies and serialization but ignored by gradient updates. The name set and
    shapes are fixed after initialization.
    """

    def __init__(self):
        self._tensors = {}
        self._trainable = {}

    def add(self, name, value, trainable=True):
        if name in self._tensors:
            raise UsageError(f"ParamSet: duplicate parameter {name!r}")
        t = Tensor(np.array(value, dtype=np.float64))
        self._tensors[name] = t
        self._trainable[name] = bool(trainable)
        return t

    def __getitem__(self, name):
        return self._tensors[name]

    def __contains__(self, name):
        return name in self._tensors

    def __len__(self):
        return len(self._tensors)

    def names(self):
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def is_trainable(self, name):
        return self._trainable[name]

    def trainable_items(self):
        return [(n, t) for n, t in self._tensors.items() if self._trainable[n]]

    def copy(self):
        """Deep copy of values; gradient slots start empty."""
        out = ParamSet()
        for name, t in self._tensors.items():
            out.add(name, t.value.copy(), trainable=self._trainable[name])
        return out

    def zero_grads(self):
        for t in self._tensors.values():
            t.grad = None

    def checksum(self):
        """SHA-256 over names, flags, shapes, and values (mutation checks)."""
        h = hashlib.sha256()
        for name in sorted(self._tensors):
            t = self._tensors[name]
            h.update(name.encode())
            h.update(b"T" if self._trainable[name] else b"B")
            h.update(np.asarray(t.value.shape, dtype=np.int64).tobytes())
            h.update(np.ascontiguousarray(t.value).tobytes())
        return h.hexdigest()

    # -- serialization: name table + shape table + float64 payloads + checksum

    def save(self, path):
        header = bytearray()
        header += _MAGIC
        header += struct.pack("<II", _VERSION, len(self._tensors))
        payload = bytearray()
        for name in sorted(self._tensors):
            t = self._tensors[name]
            enc = name.encode()
            header += struct.pack("<HB B", len(enc), self._trainable[name], t.value.ndim)
            header += enc
            header += struct.pack(f"<{t.value.ndim}I", *t.value.shape)
            payload += np.ascontiguousarray(t.value, dtype="<f8").tobytes()
        blob = bytes(header) + bytes(payload)
        digest = hashlib.sha256(blob).digest()
        with open(path, "wb") as f:
            f.write(blob)
            f.write(digest)

    @classmethod
    def load(cls, path):
        with open(path, "rb") as f:
            raw = f.read()
        if len(raw) < 44 or raw[:4] != _MAGIC:
            raise DataError(f"{path}: not a parameter file")
        blob, digest = raw[:-32], raw[-32:]
        if hashlib.sha256(blob).digest() != digest:
            raise DataError(f"{path}: checksum mismatch")
        version, count = struct.unpack_from("<II", blob, 4)
        if version != _VERSION:
            raise DataError(f"{path}: unsupported version {version}")
        off = 12
        entries = []
        for _ in range(count):
            nlen, trainable, ndim = struct.unpack_from("<HBB", blob, off)
            off += 4
            name = blob[off:off + nlen].decode()
            off += nlen
            shape = struct.unpack_from(f"<{ndim}I", blob, off)
            off += 4 * ndim
            entries.append((name, bool(trainable), shape))
        out = cls()
        for name, trainable, shape in entries:
            n = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(blob, dtype="<f8", count=n, offset=off).reshape(shape)
            off += 8 * n
            out.add(name, arr.copy(), trainable=trainable)
        return out


def sgd_step(params, lr):
    """p <- p - lr * g for every trainable parameter; clears all gradients."""
    for name, t in params.trainable_items():
        if t.grad is None:
            raise UsageError(f"sgd_step: missing gradient for {name!r}")
    for _, t in params.trainable_items():
        t.value = t.value - lr * t.grad
    params.zero_grads()
    return params
