"""Named parameter collections and the LASC model file format."""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Dict, Iterator, Mapping, Optional

import numpy as np

from . import quantize

MODEL_MAGIC = b"LASC"
MODEL_VERSION = 1
DTYPE_CODES = {"f32": 0, "t16": 1}
DTYPE_NAMES = {v: k for k, v in DTYPE_CODES.items()}


class ModelParams:
    """Ordered name -> array mapping with a storage tag per tensor.

    Tensors tagged ``t16`` hold the widened 32-bit values of their truncated
    16-bit words, so they can be used for inference as-is.
    """

    def __init__(self, tensors: Optional[Mapping[str, np.ndarray]] = None,
                 dtypes: Optional[Mapping[str, str]] = None):
        self.tensors: Dict[str, np.ndarray] = dict(tensors or {})
        self.dtypes: Dict[str, str] = {name: "f32" for name in self.tensors}
        if dtypes:
            for name, tag in dtypes.items():
                if tag not in DTYPE_CODES:
                    raise ValueError(f"unknown dtype tag {tag!r}")
                self.dtypes[name] = tag

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        self.tensors[name] = value
        self.dtypes.setdefault(name, "f32")

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    def names(self):
        return list(self.tensors)

    def copy(self) -> "ModelParams":
        return ModelParams({k: v.copy() for k, v in self.tensors.items()}, dict(self.dtypes))

    def astype(self, dtype) -> "ModelParams":
        return ModelParams({k: v.astype(dtype) for k, v in self.tensors.items()}, dict(self.dtypes))


def count_parameters(params, include_zeros: bool = False) -> int:
    """Total entries, or only those whose stored value is not exactly zero."""
    tensors = params.tensors.values() if isinstance(params, ModelParams) else params.values()
    if include_zeros:
        return int(sum(np.size(t) for t in tensors))
    return int(sum(np.count_nonzero(t) for t in tensors))


def save_model(path, params: ModelParams) -> None:
    chunks = [MODEL_MAGIC, struct.pack("<II", MODEL_VERSION, len(params))]
    for name, arr in params.items():
        tag = params.dtypes[name]
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<BB", DTYPE_CODES[tag], arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        values = np.ascontiguousarray(arr, dtype=np.float32)
        if tag == "t16":
            chunks.append(quantize.truncate_to_16(values).astype("<u2").tobytes())
        else:
            chunks.append(values.astype("<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_model(path) -> ModelParams:
    data = Path(path).read_bytes()
    if data[:4] != MODEL_MAGIC:
        raise ValueError(f"{path}: not a LASC model file")
    version, count = struct.unpack_from("<II", data, 4)
    if version != MODEL_VERSION:
        raise ValueError(f"{path}: unsupported model version {version}")
    pos = 12
    tensors, dtypes = {}, {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos:pos + name_len].decode("utf-8")
        pos += name_len
        code, ndim = struct.unpack_from("<BB", data, pos)
        pos += 2
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        size = int(np.prod(shape, dtype=np.int64))
        if code not in DTYPE_NAMES:
            raise ValueError(f"{path}: tensor {name!r} has unknown dtype code {code}")
        tag = DTYPE_NAMES[code]
        if tag == "t16":
            words = np.frombuffer(data, dtype="<u2", count=size, offset=pos)
            values = quantize.widen_to_32(words)
            pos += 2 * size
        else:
            values = np.frombuffer(data, dtype="<f4", count=size, offset=pos).astype(np.float32)
            pos += 4 * size
        tensors[name] = values.reshape(shape)
        dtypes[name] = tag
    if pos != len(data):
        raise ValueError(f"{path}: {len(data) - pos} trailing bytes")
    return ModelParams(tensors, dtypes)
