"""On-disk formats: AMFF float fields, binary PGM images and AMFS sample stacks.

* AMFF: ``b"AMFF\\n<width> <height>\\n"`` then ``width*height`` little-endian
  float32 values, row-major, top row first.
* PGM: binary ``P5``; label fields are written with maxval 255 as 0/255.
* AMFS: ``b"AMFS\\n<width> <height> <count>\\n"`` then ``count`` labelings,
  each row packed 8 pixels per byte (most significant bit first) and
  zero-padded to a whole byte.

All writers go through a temporary file in the target directory followed by
an atomic rename.
"""

import json
import os
import tempfile

import numpy as np

from .field import as_label_field, as_scalar_field


class FormatError(ValueError):
    """Malformed or unsupported file contents."""


def atomic_write_bytes(path, data):
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj):
    atomic_write_bytes(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())


def _read_bytes(path):
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except FileNotFoundError:
        raise FileNotFoundError(f"{path}: no such file") from None


def _split_header(data, magic, n_fields, path):
    """Parse ``magic\\n<ints>\\n`` and return (ints, payload offset)."""
    lines = data.split(b"\n", 2)
    if len(lines) < 3 or lines[0] != magic:
        raise FormatError(f"{path}: not an {magic.decode()} file (bad magic)")
    try:
        fields = [int(t) for t in lines[1].split()]
    except ValueError:
        raise FormatError(f"{path}: malformed {magic.decode()} header") from None
    if len(fields) != n_fields or any(v < 0 for v in fields) or min(fields[:2]) < 1:
        raise FormatError(f"{path}: malformed {magic.decode()} header")
    return fields, len(lines[0]) + len(lines[1]) + 2


def encode_amff(f):
    f = as_scalar_field(f)
    h, w = f.shape
    return f"AMFF\n{w} {h}\n".encode() + f.astype("<f4").tobytes()


def decode_amff(data, path="<bytes>"):
    (w, h), off = _split_header(data, b"AMFF", 2, path)
    payload = data[off:]
    if len(payload) != 4 * w * h:
        raise FormatError(f"{path}: expected {4 * w * h} data bytes, found {len(payload)}")
    out = np.frombuffer(payload, dtype="<f4").reshape(h, w).astype(np.float64)
    if not np.all(np.isfinite(out)):
        raise FormatError(f"{path}: contains NaN or Inf")
    return out


def write_amff(path, f):
    atomic_write_bytes(path, encode_amff(f))


def read_amff(path):
    return decode_amff(_read_bytes(path), path)


def _pgm_tokens(data, path):
    """Return the four header tokens and the payload offset of a P5 file."""
    tokens = []
    i = 0
    n = len(data)
    while len(tokens) < 4:
        while i < n and data[i:i + 1].isspace():
            i += 1
        if i < n and data[i:i + 1] == b"#":
            while i < n and data[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        start = i
        while i < n and not data[i:i + 1].isspace() and data[i:i + 1] != b"#":
            i += 1
        if start == i:
            raise FormatError(f"{path}: truncated PGM header")
        tokens.append(data[start:i])
    # exactly one whitespace byte separates the header from the raster
    return tokens, i + 1


def decode_pgm(data, path="<bytes>"):
    """Raw grey values of a binary PGM as an integer array."""
    tokens, off = _pgm_tokens(data, path)
    if tokens[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM (expected P5 magic)")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise FormatError(f"{path}: malformed PGM header") from None
    if w < 1 or h < 1 or not 0 < maxval < 65536:
        raise FormatError(f"{path}: malformed PGM header")
    dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
    size = w * h * np.dtype(dtype).itemsize
    payload = data[off:off + size]
    if len(payload) != size:
        raise FormatError(f"{path}: truncated PGM raster")
    return np.frombuffer(payload, dtype=dtype).reshape(h, w).astype(np.int64), maxval


def read_grey(path):
    """Integer grey values and maxval of a PGM file."""
    return decode_pgm(_read_bytes(path), path)


def read_pgm(path):
    """Grey values of a PGM image as float64 (raw intensity units)."""
    values, _ = read_grey(path)
    return values.astype(np.float64)


def labels_from_grey(values, maxval, path="<bytes>"):
    if np.all((values == 0) | (values == maxval)):
        return (values == maxval).astype(np.uint8)
    if np.all((values == 0) | (values == 1)):
        return values.astype(np.uint8)
    raise FormatError(f"{path}: label image must contain only 0 and {maxval} (or 0 and 1)")


def read_labels(path):
    values, maxval = decode_pgm(_read_bytes(path), path)
    return labels_from_grey(values, maxval, path)


def encode_pgm(values, maxval=255):
    a = np.asarray(values)
    if a.ndim != 2:
        raise ValueError("PGM images must be 2D")
    if not 0 < maxval < 256:
        raise ValueError("only 8-bit PGM output is supported")
    if a.min() < 0 or a.max() > maxval:
        raise ValueError(f"grey values must lie in [0, {maxval}]")
    h, w = a.shape
    return f"P5\n{w} {h}\n{maxval}\n".encode() + a.astype(np.uint8).tobytes()


def write_labels(path, z):
    atomic_write_bytes(path, encode_pgm(as_label_field(z) * np.uint8(255)))


def write_pgm(path, values, maxval=255):
    atomic_write_bytes(path, encode_pgm(values, maxval))


def encode_amfs(labels):
    z = np.asarray(labels)
    if z.ndim != 3 or z.shape[1] < 1 or z.shape[2] < 1:
        raise ValueError("sample stack must have shape (count, H, W)")
    if not np.all((z == 0) | (z == 1)):
        raise ValueError("samples must contain only 0 and 1")
    count, h, w = z.shape
    return f"AMFS\n{w} {h} {count}\n".encode() + np.packbits(z.astype(np.uint8), axis=-1).tobytes()


def decode_amfs(data, path="<bytes>"):
    (w, h, count), off = _split_header(data, b"AMFS", 3, path)
    row_bytes = (w + 7) // 8
    payload = data[off:]
    if len(payload) != count * h * row_bytes:
        raise FormatError(f"{path}: expected {count * h * row_bytes} data bytes, "
                          f"found {len(payload)}")
    packed = np.frombuffer(payload, dtype=np.uint8).reshape(count, h, row_bytes)
    return np.unpackbits(packed, axis=-1, count=w)


def write_amfs(path, labels):
    atomic_write_bytes(path, encode_amfs(labels))


def read_amfs(path):
    return decode_amfs(_read_bytes(path), path)
