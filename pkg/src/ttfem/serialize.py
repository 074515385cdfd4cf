"""Binary container for TT vectors and operators.

Byte layout (all integers little-endian):

    offset  size  content
    0       4     magic bytes "QTT1"
    4       1     kind tag: 0x56 ('V') vector, 0x4F ('O') operator
    5       4     uint32 K, number of cores
    9       ...   K core records, each:
                    4 x uint32 dims (r_left, m, n, r_right)
                    r_left*m*n*r_right float64 values, row-major (C order)

Vector cores are stored with n = 1, i.e. dims (r_left, mode, 1, r_right),
so both kinds share one record shape.  Values are IEEE-754 binary64,
little-endian.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError
from .tt import TensorTrain, TTLinearOperator

__all__ = ["save_tt", "load_tt", "tt_to_json_dict"]

_MAGIC = b"QTT1"
_KIND_VECTOR = b"V"
_KIND_OPERATOR = b"O"


def save_tt(obj: TensorTrain | TTLinearOperator, path) -> None:
    """Write a TT vector or operator to the QTT1 container format."""
    if isinstance(obj, TTLinearOperator):
        kind = _KIND_OPERATOR
        quads = [c.shape for c in obj.cores]
    elif isinstance(obj, TensorTrain):
        kind = _KIND_VECTOR
        quads = [(c.shape[0], c.shape[1], 1, c.shape[2]) for c in obj.cores]
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(kind)
        fh.write(struct.pack("<I", len(obj.cores)))
        for core, dims in zip(obj.cores, quads):
            fh.write(struct.pack("<4I", *dims))
            fh.write(np.ascontiguousarray(core, dtype="<f8").tobytes())


def load_tt(path) -> TensorTrain | TTLinearOperator:
    """Read a QTT1 container; returns the matching TT type."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 9 or data[:4] != _MAGIC:
        raise FormatError(f"{path}: not a QTT1 container (bad magic)")
    kind = data[4:5]
    if kind not in (_KIND_VECTOR, _KIND_OPERATOR):
        raise FormatError(f"{path}: unknown kind tag {kind!r}")
    (count,) = struct.unpack_from("<I", data, 5)
    offset = 9
    cores = []
    for k in range(count):
        if offset + 16 > len(data):
            raise FormatError(f"{path}: truncated header of core {k}")
        dims = struct.unpack_from("<4I", data, offset)
        offset += 16
        size = int(np.prod(dims))
        end = offset + 8 * size
        if end > len(data):
            raise FormatError(f"{path}: truncated values of core {k}")
        values = np.frombuffer(data, dtype="<f8", count=size, offset=offset)
        offset += 8 * size
        cores.append(values.reshape(dims).astype(np.float64))
    if offset != len(data):
        raise FormatError(f"{path}: {len(data) - offset} trailing bytes")
    if kind == _KIND_OPERATOR:
        return TTLinearOperator(cores)
    return TensorTrain([c.reshape(c.shape[0], c.shape[1], c.shape[3]) for c in cores])


def tt_to_json_dict(obj: TensorTrain | TTLinearOperator) -> dict:
    """Human-readable core dump used by the CLI export command."""
    if isinstance(obj, TTLinearOperator):
        kind = "operator"
        dims = {"row_dims": list(obj.row_dims), "col_dims": list(obj.col_dims)}
    else:
        kind = "vector"
        dims = {"dims": list(obj.dims)}
    return {
        "format": "QTT1",
        "kind": kind,
        **dims,
        "ranks": list(obj.ranks),
        "cores": [
            {"shape": list(c.shape), "values": c.ravel().tolist()}
            for c in obj.cores
        ],
    }
