"""Model file format.

A model file is::

    offset  size  content
    0       8     magic  b"NAEMODEL"
    8       4     format version, uint32 little-endian (currently 1)
    12      4     header length H in bytes, uint32 little-endian
    16      H     UTF-8 JSON header (keys sorted)
    16+H    ...   weight matrices, in header order, each stored row-major
                  as IEEE-754 float64 little-endian

The header always carries ``kind``, ``shapes`` (list of ``[rows, cols]``),
``dtype`` (``"<f8"``), ``order`` (``"row-major"``) and ``endianness``
(``"little"``), plus free-form metadata such as layer sizes, seed and the
sparsity weight.  Loading a saved file reproduces the weights bit for bit.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"NAEMODEL"
FORMAT_VERSION = 1


def save_weights(path, kind: str, weights, meta: dict | None = None) -> None:
    weights = [np.ascontiguousarray(w, dtype="<f8") for w in weights]
    header = dict(meta or {})
    header.update(
        kind=kind,
        shapes=[list(w.shape) for w in weights],
        dtype="<f8",
        order="row-major",
        endianness="little",
    )
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", FORMAT_VERSION, len(blob)))
        f.write(blob)
        for w in weights:
            f.write(w.tobytes(order="C"))


def load_weights(path):
    """Return ``(kind, weights, header)``."""
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ValueError(f"{path}: not a model file (bad magic)")
    version, hlen = struct.unpack_from("<II", data, 8)
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format version {version}")
    header = json.loads(data[16 : 16 + hlen].decode("utf-8"))
    offset = 16 + hlen
    weights = []
    for rows, cols in header["shapes"]:
        n = rows * cols
        w = np.frombuffer(data, dtype="<f8", count=n, offset=offset).reshape(rows, cols)
        weights.append(w.astype(np.float64))
        offset += 8 * n
    if offset != len(data):
        raise ValueError(f"{path}: {len(data) - offset} trailing bytes")
    return header["kind"], weights, header
