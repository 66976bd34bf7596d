"""Self-describing binary container: 8-byte magic, uint32 version, uint64
header length, a UTF-8 JSON header, then raw little-endian array blobs in
header order."""
import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

_PREFIX = struct.Struct("<IQ")


def dump(path, magic, version, header, arrays):
    header = dict(header)
    header["arrays"] = [{"name": name, "dtype": np.dtype(a.dtype).newbyteorder("<").str,
                         "shape": list(a.shape)} for name, a in arrays]
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(_PREFIX.pack(version, len(blob)))
        fh.write(blob)
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype=np.dtype(a.dtype).newbyteorder("<")).tobytes())


def load(path, magic, version):
    data = Path(path).read_bytes()
    if data[:len(magic)] != magic:
        raise FormatError(f"{path}: wrong file type (bad magic)")
    if len(data) < len(magic) + _PREFIX.size:
        raise FormatError(f"{path}: truncated header")
    got_version, hlen = _PREFIX.unpack_from(data, len(magic))
    if got_version != version:
        raise FormatError(f"{path}: unsupported version {got_version} (expected {version})")
    start = len(magic) + _PREFIX.size
    try:
        header = json.loads(data[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt header ({exc})") from None
    offset = start + hlen
    arrays = {}
    for spec in header.get("arrays", []):
        dt = np.dtype(spec["dtype"])
        n = int(np.prod(spec["shape"], dtype=np.int64))
        end = offset + n * dt.itemsize
        if end > len(data):
            raise FormatError(f"{path}: truncated array {spec['name']!r}")
        arrays[spec["name"]] = (np.frombuffer(data, dtype=dt, count=n, offset=offset)
                                .reshape(spec["shape"]).astype(dt.newbyteorder("="), copy=True))
        offset = end
    if offset != len(data):
        raise FormatError(f"{path}: {len(data) - offset} unexpected trailing bytes")
    return header, arrays
