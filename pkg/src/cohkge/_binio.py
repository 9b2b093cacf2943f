"""Minimal self-describing binary container.

Layout::

    COHKGE <kind> <version>\n
    <json header>\n
    <raw little-endian array bytes, in header order>

The JSON header carries user metadata plus an ``arrays`` list of
``[name, dtype, shape]`` entries. Output is byte-deterministic.
"""

import json

import numpy as np

from .errors import CorruptFileError, VersionError

MAGIC = b"COHKGE"


def write_blob(path, kind, version, meta, arrays):
    specs = []
    payload = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        le = arr.dtype.newbyteorder("<")
        arr = arr.astype(le, copy=False)
        specs.append([name, le.str, list(arr.shape)])
        payload.append(arr.tobytes(order="C"))
    header = dict(meta)
    header["arrays"] = specs
    with open(path, "wb") as fh:
        fh.write(MAGIC + f" {kind} {version}\n".encode())
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for chunk in payload:
            fh.write(chunk)


def read_blob(path, kind, version):
    """Return ``(meta, arrays)``; raises on wrong kind/version or truncation."""
    with open(path, "rb") as fh:
        data = fh.read()
    first = data.find(b"\n")
    if first < 0 or not data.startswith(MAGIC):
        raise CorruptFileError(f"{path}: not a {kind} file (bad magic)")
    parts = data[:first].split()
    if len(parts) != 3 or parts[1].decode() != kind:
        raise CorruptFileError(f"{path}: expected {kind!r} container")
    try:
        found = int(parts[2])
    except ValueError:
        raise CorruptFileError(f"{path}: unreadable version tag") from None
    if found != version:
        raise VersionError(f"{path}: format version {found}, expected {version}")
    second = data.find(b"\n", first + 1)
    if second < 0:
        raise CorruptFileError(f"{path}: truncated header")
    try:
        meta = json.loads(data[first + 1:second])
    except json.JSONDecodeError as exc:
        raise CorruptFileError(f"{path}: bad header ({exc})") from None
    offset = second + 1
    arrays = {}
    for name, dtype, shape in meta.pop("arrays", []):
        dt = np.dtype(dtype)
        nbytes = dt.itemsize * int(np.prod(shape, dtype=np.int64))
        if offset + nbytes > len(data):
            raise CorruptFileError(f"{path}: truncated payload in array {name!r}")
        arrays[name] = np.frombuffer(data, dtype=dt, count=nbytes // dt.itemsize,
                                     offset=offset).reshape(shape).astype(dt.newbyteorder("="))
        offset += nbytes
    if offset != len(data):
        raise CorruptFileError(f"{path}: {len(data) - offset} trailing bytes")
    return meta, arrays
