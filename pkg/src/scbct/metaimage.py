"""Single-file MetaImage (.mha) reader and writer.

Only the subset needed here is supported: 3D, little-endian, ``MET_FLOAT``
or ``MET_UCHAR`` element data stored inline after the header.
"""
from __future__ import annotations

import os
import tempfile
from pathlib import Path

import numpy as np

from .volgrid import Mask3, Volume3

_TYPES = {
    "MET_FLOAT": np.dtype("<f4"),
    "MET_UCHAR": np.dtype("u1"),
}


class MetaImageError(ValueError):
    pass


def _header(dims, spacing, origin, element_type: str) -> bytes:
    lines = [
        "ObjectType = Image",
        "NDims = 3",
        "BinaryData = True",
        "BinaryDataByteOrderMSB = False",
        "DimSize = " + " ".join(str(int(n)) for n in dims),
        "ElementSpacing = " + " ".join(repr(float(s)) for s in spacing),
        "Offset = " + " ".join(repr(float(o)) for o in origin),
        f"ElementType = {element_type}",
        "ElementDataFile = LOCAL",
    ]
    return ("\n".join(lines) + "\n").encode("ascii")


def atomic_write_bytes(path, payload: bytes):
    """Write via a temp file in the same directory, then rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_array(arr: np.ndarray, spacing, origin, path):
    """Write a 3D array indexed ``[x, y, z]`` in x-fastest order."""
    if arr.dtype == np.uint8:
        etype = "MET_UCHAR"
    else:
        etype = "MET_FLOAT"
        arr = arr.astype("<f4", copy=False)
    payload = _header(arr.shape, spacing, origin, etype) + np.asfortranarray(arr).tobytes(order="F")
    atomic_write_bytes(path, payload)


def write_metaimage(vol: Volume3, path):
    write_array(vol.values, vol.spacing, vol.origin, path)


def read_array(path):
    """Return ``(array, spacing, origin, element_type)`` from an .mha file."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(path)
    raw = path.read_bytes()
    fields = {}
    pos = 0
    while True:
        end = raw.find(b"\n", pos)
        if end < 0:
            raise MetaImageError(f"{path}: header not terminated by ElementDataFile")
        line = raw[pos:end].decode("ascii", errors="replace").strip()
        pos = end + 1
        if not line:
            continue
        if "=" not in line:
            raise MetaImageError(f"{path}: malformed header line {line!r}")
        key, val = (t.strip() for t in line.split("=", 1))
        fields[key] = val
        if key == "ElementDataFile":
            break
    try:
        if int(fields.get("NDims", 0)) != 3:
            raise MetaImageError(f"{path}: only NDims = 3 is supported")
        dims = tuple(int(v) for v in fields["DimSize"].split())
        spacing = tuple(float(v) for v in fields.get("ElementSpacing", "1 1 1").split())
        origin = tuple(float(v) for v in fields.get("Offset", fields.get("Origin", "0 0 0")).split())
        etype = fields["ElementType"]
    except (KeyError, ValueError) as exc:
        raise MetaImageError(f"{path}: malformed header ({exc})") from exc
    if len(dims) != 3 or len(spacing) != 3 or len(origin) != 3:
        raise MetaImageError(f"{path}: expected three values for DimSize/ElementSpacing/Offset")
    if fields["ElementDataFile"] != "LOCAL":
        raise MetaImageError(f"{path}: only inline (LOCAL) data is supported")
    if fields.get("BinaryDataByteOrderMSB", "False").lower() == "true":
        raise MetaImageError(f"{path}: big-endian data not supported")
    if etype not in _TYPES:
        raise MetaImageError(f"{path}: unsupported element type {etype}")
    dtype = _TYPES[etype]
    data = raw[pos:]
    expected = int(np.prod(dims))
    if len(data) != expected * dtype.itemsize:
        raise MetaImageError(
            f"{path}: element count mismatch, header says {expected}, "
            f"file holds {len(data) / dtype.itemsize:g}"
        )
    arr = np.frombuffer(data, dtype=dtype).reshape(dims, order="F")
    return np.ascontiguousarray(arr), spacing, origin, etype


def read_metaimage(path, as_mask=None):
    """Load a volume. ``MET_UCHAR`` files with only 0/1 values load as masks.

    Pass ``as_mask=True`` to require a mask (raises on non-binary data) or
    ``as_mask=False`` to always get a float ``Volume3``.
    """
    arr, spacing, origin, etype = read_array(path)
    binary = etype == "MET_UCHAR" and bool(np.all(arr <= 1))
    if as_mask is True:
        if not np.all((arr == 0) | (arr == 1)):
            raise MetaImageError(f"{path}: data is not binary, cannot load as mask")
        return Mask3(arr.astype(np.uint8), spacing, origin)
    if as_mask is None and binary:
        return Mask3(arr, spacing, origin)
    return Volume3(arr.astype(np.float32), spacing, origin)
