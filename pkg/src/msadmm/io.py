"""Signal files: CSV text, 16-bit PGM for display, and a float64 binary.

The binary layout is little-endian: the magic ``b"MRSC"``, then ``u32``
version, ``u32`` ndim and one ``u32`` per dimension, then the values as
row-major ``float64``.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .core import as_signal
from .errors import InvalidInputError

__all__ = [
    "signal_to_csv",
    "signal_from_csv",
    "write_csv",
    "read_csv",
    "write_f64",
    "read_f64",
    "write_pgm",
    "read_pgm",
    "pgm_mapping",
]

MAGIC = b"MRSC"
VERSION = 1


def signal_to_csv(x):
    """One value per line (1D) or comma-separated rows (2D), shortest round-trip reprs."""
    x = as_signal(x)
    if x.ndim == 1:
        return "".join(f"{float(a)!r}\n" for a in x)
    return "".join(",".join(repr(float(a)) for a in row) + "\n" for row in x)


def signal_from_csv(text, ndim=None):
    """Parse :func:`signal_to_csv` output.

    A file whose lines all hold one value is 1D unless ``ndim=2``.
    """
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise InvalidInputError("empty signal file")
    try:
        rows = [[float(t) for t in ln.split(",")] for ln in lines]
    except ValueError as err:
        raise InvalidInputError(f"malformed number: {err}") from err
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise InvalidInputError("ragged rows")
    if widths == {1} and ndim != 2:
        return as_signal([r[0] for r in rows])
    return as_signal(rows)


def write_csv(path, x):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(signal_to_csv(x))


def read_csv(path, ndim=None):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as err:
        raise OSError(f"cannot read {path}: {err.strerror}") from err
    return signal_from_csv(text, ndim=ndim)


def write_f64(path, x):
    x = as_signal(x)
    header = MAGIC + struct.pack("<II", VERSION, x.ndim) + struct.pack(f"<{x.ndim}I", *x.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(x, dtype="<f8").tobytes())


def read_f64(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12 or data[:4] != MAGIC:
        raise InvalidInputError(f"{path}: not an MRSC float64 file")
    version, ndim = struct.unpack_from("<II", data, 4)
    if version != VERSION or ndim not in (1, 2):
        raise InvalidInputError(f"{path}: unsupported version {version} or ndim {ndim}")
    off = 12 + 4 * ndim
    shape = struct.unpack_from(f"<{ndim}I", data, 12)
    count = int(np.prod(shape))
    if len(data) != off + 8 * count:
        raise InvalidInputError(f"{path}: size does not match header")
    return np.frombuffer(data, dtype="<f8", offset=off).astype(np.float64).reshape(shape)


def pgm_mapping(x):
    """Affine map ``min -> 0``, ``max -> 65535`` as ``(offset, scale)``."""
    lo, hi = float(np.min(x)), float(np.max(x))
    scale = 65535.0 / (hi - lo) if hi > lo else 0.0
    return lo, scale


def write_pgm(path, x):
    """Binary 16-bit PGM; returns the ``(offset, scale)`` mapping used."""
    x = as_signal(x)
    if x.ndim == 1:
        x = x[None, :]
    lo, scale = pgm_mapping(x)
    q = np.clip(np.rint((x - lo) * scale), 0, 65535).astype(">u2")
    h, w = x.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(q.tobytes())
    return lo, scale


def read_pgm(path):
    """Read a binary (P5) PGM as float64 gray levels."""
    with open(path, "rb") as fh:
        data = fh.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise InvalidInputError(f"{os.fspath(path)}: only binary PGM (P5) is supported")
    w, h, maxval = (int(t) for t in tokens[1:])
    pos += 1
    dtype = ">u2" if maxval > 255 else "u1"
    arr = np.frombuffer(data, dtype=dtype, count=w * h, offset=pos)
    return arr.reshape(h, w).astype(np.float64)
