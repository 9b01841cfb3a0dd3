"""On-disk container: JSON manifest + raw little-endian float64 arrays + checksum.

The manifest carries the format version and named array descriptors; the
payload is the concatenation of the arrays' raw bytes. The whole file is
protected by a trailing sha256 digest, so a single flipped byte is
detected at load time. Round trips are bit-exact.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

MAGIC = b"%TRFLM-CONTAINER\n"
FORMAT_VERSION = 1
_CHK_TAG = b"TRFCHK"


class ContainerError(ValueError):
    pass


def write_container(path, manifest: dict, arrays: dict):
    manifest = dict(manifest)
    manifest["format_version"] = FORMAT_VERSION
    descriptors = []
    blobs = []
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype="<f8")
        descriptors.append({"name": name, "shape": list(arr.shape)})
        blobs.append(arr.tobytes())
    manifest["arrays"] = descriptors
    head = MAGIC + json.dumps(manifest).encode("utf-8") + b"\n"
    payload = head + b"".join(blobs)
    digest = hashlib.sha256(payload).hexdigest().encode("ascii")
    with open(path, "wb") as fh:
        fh.write(payload + _CHK_TAG + digest)


def read_container(path):
    with open(path, "rb") as fh:
        data = fh.read()
    tail_len = len(_CHK_TAG) + 64
    if len(data) < len(MAGIC) + tail_len or not data.startswith(MAGIC):
        raise ContainerError("not a trflm container: %s" % path)
    payload, tail = data[:-tail_len], data[-tail_len:]
    if not tail.startswith(_CHK_TAG):
        raise ContainerError("truncated file (checksum trailer missing): %s" % path)
    digest = hashlib.sha256(payload).hexdigest().encode("ascii")
    if tail[len(_CHK_TAG):] != digest:
        raise ContainerError("checksum mismatch: %s" % path)
    body = payload[len(MAGIC):]
    nl = body.index(b"\n")
    manifest = json.loads(body[:nl].decode("utf-8"))
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ContainerError(
            "unsupported format version %r (expected %d)"
            % (manifest.get("format_version"), FORMAT_VERSION)
        )
    arrays = {}
    pos = nl + 1
    for desc in manifest["arrays"]:
        shape = tuple(desc["shape"])
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        raw = body[pos : pos + 8 * n]
        if len(raw) != 8 * n:
            raise ContainerError("truncated array payload for %r" % desc["name"])
        arrays[desc["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
        pos += 8 * n
    return manifest, arrays
