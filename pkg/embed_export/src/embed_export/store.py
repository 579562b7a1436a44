"""Writer for the binary embedding-store format.

Layout (independent re-implementation of the documented format; the
classifier's reader is the compatibility oracle in the tests):

    magic            b"SETRISK-EMB 1\\n"
    header           canonical JSON (sorted keys, no spaces) + "\\n"
                     with fields count, dimension, encoder_name, version
    post-id table    one utf-8 id per line, sorted ascending
    separator        one empty line
    vectors          count * dimension little-endian float32 values,
                     row per id in table order

Writes go to a temporary file first and land with os.replace, so a
crash never leaves a half-written store behind.
"""

import json
import os

import numpy as np

from .errors import DataError

MAGIC = b"SETRISK-EMB 1\n"
VERSION = 1


def write_store(path, encoder_name, dimension, vectors):
    """Write {post_id: float32 vector} in the store layout.

    Same inputs always produce identical bytes: ids are sorted, the
    header is canonical JSON, and vectors are written exactly as the
    float32 values handed in.
    """
    dimension = int(dimension)
    if dimension < 1:
        raise DataError(f"dimension must be positive, got {dimension}")
    ids = sorted(vectors.keys())
    rows = []
    for pid in ids:
        if "\n" in pid:
            raise DataError(f"post_id {pid!r} contains a newline")
        row = np.ascontiguousarray(vectors[pid], dtype="<f4")
        if row.shape != (dimension,):
            raise DataError(
                f"vector for {pid!r} has shape {row.shape}, expected ({dimension},)")
        if not np.all(np.isfinite(row)):
            raise DataError(f"vector for {pid!r} contains non-finite values")
        rows.append(row)
    header = {"encoder_name": str(encoder_name), "dimension": dimension,
              "count": len(ids), "version": VERSION}
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode() + b"\n")
        for pid in ids:
            f.write(pid.encode("utf-8") + b"\n")
        f.write(b"\n")
        for row in rows:
            f.write(row.tobytes())
    os.replace(tmp, path)
