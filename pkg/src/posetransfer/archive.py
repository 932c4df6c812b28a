"""Single-file archive of named float64 arrays.

Layout: a text manifest followed by one little-endian float64 blob.

    ARRAYS v1
    meta <key>=<value>          (zero or more)
    array <name> <d0>x<d1>... float64 <byte offset into blob>
    ...
    BLOB <total bytes>
    <raw little-endian float64 data>

Loading validates every name and shape against what the caller expects.
"""
from __future__ import annotations

import numpy as np

MAGIC = b"ARRAYS v1\n"


def write_archive(path, arrays: dict[str, np.ndarray], meta: dict[str, str] | None = None):
    lines = [MAGIC.decode()]
    for k, v in (meta or {}).items():
        if any(c.isspace() for c in k) or "\n" in str(v):
            raise ValueError(f"bad meta entry {k!r}")
        lines.append(f"meta {k}={v}\n")
    blobs = []
    offset = 0
    for name, arr in arrays.items():
        a = np.asarray(arr, dtype="<f8")
        if a.ndim and not a.flags["C_CONTIGUOUS"]:
            a = np.ascontiguousarray(a)
        dims = "x".join(str(d) for d in a.shape) if a.shape else "scalar"
        lines.append(f"array {name} {dims} float64 {offset}\n")
        blobs.append(a.tobytes())
        offset += a.nbytes
    lines.append(f"BLOB {offset}\n")
    with open(path, "wb") as fh:
        fh.write("".join(lines).encode())
        for b in blobs:
            fh.write(b)


def read_archive(path):
    """Return (arrays: dict[str, ndarray], meta: dict[str, str])."""
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(MAGIC):
        raise ValueError(f"{path}: not an array archive")
    head_end = data.index(b"BLOB ", len(MAGIC))
    header = data[len(MAGIC):head_end].decode()
    nl = data.index(b"\n", head_end)
    nbytes = int(data[head_end + 5 : nl])
    blob = data[nl + 1 : nl + 1 + nbytes]
    if len(blob) != nbytes:
        raise ValueError(f"{path}: truncated blob ({len(blob)} of {nbytes} bytes)")
    meta = {}
    arrays = {}
    for line in header.splitlines():
        kind, rest = line.split(" ", 1)
        if kind == "meta":
            k, v = rest.split("=", 1)
            meta[k] = v
        elif kind == "array":
            name, dims, dtype, off = rest.rsplit(" ", 3)
            if dtype != "float64":
                raise ValueError(f"{path}: unsupported dtype {dtype}")
            shape = () if dims == "scalar" else tuple(int(d) for d in dims.split("x"))
            count = int(np.prod(shape)) if shape else 1
            off = int(off)
            arrays[name] = np.frombuffer(
                blob, dtype="<f8", count=count, offset=off
            ).reshape(shape).copy()
        else:
            raise ValueError(f"{path}: bad manifest line {line!r}")
    return arrays, meta
