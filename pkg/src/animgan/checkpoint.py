"""Versioned binary checkpoints.

Layout::

    magic (8 bytes) | version (u32) | payload length (u64) | sha256(payload) (32 bytes) | payload

The payload is a JSON header (metadata plus an index of arrays) followed by
the raw little-endian float64/int64 bytes of every array, so a load
reproduces every parameter bit for bit.
"""

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

__all__ = ["Checkpoint", "CheckpointError", "save_checkpoint", "load_checkpoint", "MAGIC", "VERSION"]

MAGIC = b"ANIMGANC"
VERSION = 1
_HEAD = struct.Struct("<8sIQ32s")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    step: int
    config: dict
    generator: dict
    discriminator: dict
    optimizer_g: dict
    optimizer_d: dict
    codec: dict
    selector: tuple = None  # (meta, arrays) from StnbnnModel.to_arrays, or None
    metrics_cursor: int = 0
    version: int = VERSION
    extra: dict = field(default_factory=dict)

    @property
    def config_digest(self):
        return hashlib.sha256(json.dumps(self.config, sort_keys=True).encode()).hexdigest()


def _pack(meta, arrays):
    index = []
    blobs = []
    offset = 0
    for name in sorted(arrays):
        a = np.asarray(arrays[name])
        dt = "<f8" if a.dtype.kind == "f" else "<i8"
        raw = np.ascontiguousarray(a, dtype=dt).tobytes()
        index.append({"name": name, "dtype": dt, "shape": list(a.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta, "arrays": index}, sort_keys=True).encode()
    return struct.pack("<Q", len(header)) + header + b"".join(blobs)


def _unpack(payload):
    (hlen,) = struct.unpack_from("<Q", payload, 0)
    header = json.loads(payload[8:8 + hlen].decode())
    base = 8 + hlen
    arrays = {}
    for e in header["arrays"]:
        start = base + e["offset"]
        raw = payload[start:start + e["nbytes"]]
        if len(raw) != e["nbytes"]:
            raise CheckpointError("array data truncated")
        native = np.float64 if e["dtype"] == "<f8" else np.int64
        arrays[e["name"]] = np.frombuffer(raw, dtype=e["dtype"]).reshape(e["shape"]).astype(native)
    return header["meta"], arrays


def _flatten(prefix, state, arrays):
    for k, v in state.items():
        arrays[f"{prefix}/{k}"] = v


def _opt_split(state):
    return {k: v for k, v in state.items() if k != "arrays"}, state.get("arrays", {})


def save_checkpoint(ckpt, path):
    """Atomically write ``ckpt`` to ``path`` (temp file in the same directory, then rename)."""
    arrays = {}
    _flatten("g", ckpt.generator, arrays)
    _flatten("d", ckpt.discriminator, arrays)
    og_meta, og_arr = _opt_split(ckpt.optimizer_g)
    od_meta, od_arr = _opt_split(ckpt.optimizer_d)
    _flatten("opt_g", og_arr, arrays)
    _flatten("opt_d", od_arr, arrays)
    sel_meta = None
    if ckpt.selector is not None:
        sel_meta, sel_arr = ckpt.selector
        _flatten("sel", sel_arr, arrays)
    meta = {
        "step": ckpt.step,
        "config": ckpt.config,
        "config_digest": ckpt.config_digest,
        "optimizer_g": og_meta,
        "optimizer_d": od_meta,
        "codec": ckpt.codec,
        "selector": sel_meta,
        "metrics_cursor": ckpt.metrics_cursor,
        "extra": ckpt.extra,
    }
    payload = _pack(meta, arrays)
    blob = _HEAD.pack(MAGIC, VERSION, len(payload), hashlib.sha256(payload).digest()) + payload
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".ckpt-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def load_checkpoint(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEAD.size:
        raise CheckpointError("file too short to be a checkpoint")
    magic, version, n, digest = _HEAD.unpack_from(blob, 0)
    if magic != MAGIC:
        raise CheckpointError("not a checkpoint file")
    if version != VERSION:
        raise CheckpointError(f"checkpoint version {version} is not supported (expected {VERSION})")
    payload = blob[_HEAD.size:]
    if len(payload) != n or hashlib.sha256(payload).digest() != digest:
        raise CheckpointError("checkpoint is corrupt (length or digest mismatch)")
    meta, arrays = _unpack(payload)

    def group(prefix):
        p = prefix + "/"
        return {k[len(p):]: v for k, v in arrays.items() if k.startswith(p)}

    og = dict(meta["optimizer_g"], arrays=group("opt_g"))
    od = dict(meta["optimizer_d"], arrays=group("opt_d"))
    selector = None if meta["selector"] is None else (meta["selector"], group("sel"))
    ckpt = Checkpoint(
        step=int(meta["step"]),
        config=meta["config"],
        generator=group("g"),
        discriminator=group("d"),
        optimizer_g=og,
        optimizer_d=od,
        codec=meta["codec"],
        selector=selector,
        metrics_cursor=int(meta["metrics_cursor"]),
        version=version,
        extra=meta.get("extra", {}),
    )
    if ckpt.config_digest != meta["config_digest"]:
        raise CheckpointError("config digest mismatch")
    return ckpt
