"""Versioned binary container for named float64 arrays plus a JSON header.

Layout: magic line, 8-byte little-endian header length, canonical JSON
header (sorted keys), then each array's raw little-endian float64 bytes
in header order. Writing the same content twice produces identical
bytes, which the pipeline's determinism guarantees rely on. Writes are
atomic (temp file + rename).
"""

import json
import os
import struct
from collections import OrderedDict

import numpy as np

from .errors import DataError

_MAGIC = b"SETRISK1\n"


def write_container(path, header, arrays):
    """Write ``header`` (JSON-able dict) and ``arrays`` (name -> ndarray)."""
    entries = [{"name": k, "shape": list(v.shape)} for k, v in arrays.items()]
    head = {"container_version": 1, "header": header, "arrays": entries}
    blob = json.dumps(head, sort_keys=True, separators=(",", ":")).encode("utf-8")
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for v in arrays.values():
            f.write(np.ascontiguousarray(v, dtype="<f8").tobytes())
    os.replace(tmp, path)


def read_container(path):
    """Read a container back as (header dict, OrderedDict name -> ndarray)."""
    with open(path, "rb") as f:
        magic = f.read(len(_MAGIC))
        if magic != _MAGIC:
            raise DataError(f"{path}: not a setrisk container (bad magic)")
        (blob_len,) = struct.unpack("<Q", f.read(8))
        head = json.loads(f.read(blob_len).decode("utf-8"))
        if head.get("container_version") != 1:
            raise DataError(f"{path}: unsupported container version {head.get('container_version')}")
        arrays = OrderedDict()
        for entry in head["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = f.read(count * 8)
            if len(buf) != count * 8:
                raise DataError(f"{path}: truncated array data for '{entry['name']}'")
            arrays[entry["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
        return head["header"], arrays
