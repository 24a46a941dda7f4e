"""Versioned binary weight container.

Layout: 8-byte magic, little-endian u32 format version, u64 header length,
a UTF-8 JSON header, then the raw little-endian tensor bytes in header order.
The header records the component name, the config and architecture echo, an
optional part id and a training hash.
"""
import hashlib
import json
import struct

import numpy as np
import torch

from .errors import CheckpointError

MAGIC = b"PBWCKPT\x00"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")
_DTYPES = {"float32": torch.float32, "float64": torch.float64, "int64": torch.int64, "bool": torch.bool}


def state_hash(state):
    h = hashlib.sha256()
    for name in sorted(state):
        h.update(name.encode())
        h.update(state[name].detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def save_checkpoint(path, component, state, config=None, arch=None, part=None, training_hash=None, extra=None):
    """Write ``state`` (a name -> tensor mapping) to ``path``."""
    entries, blobs, offset = [], [], 0
    for name, t in state.items():
        arr = t.detach().cpu().contiguous().numpy()
        dtype = str(arr.dtype)
        if dtype not in _DTYPES:
            raise CheckpointError(f"unsupported tensor dtype {dtype} for {name}")
        raw = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
        entries.append({"name": name, "dtype": dtype, "shape": list(arr.shape), "offset": offset,
                        "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = {"component": component, "version": VERSION, "config": config or {}, "arch": arch or {},
              "part": part, "training_hash": training_hash, "weights_hash": state_hash(state),
              "tensors": entries, "extra": extra or {}}
    hb = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(_PREFIX.pack(MAGIC, VERSION, len(hb)))
        f.write(hb)
        for raw in blobs:
            f.write(raw)
    return header


def read_header(path):
    with open(path, "rb") as f:
        return _read_header(f, path)[0]


def _read_header(f, path):
    prefix = f.read(_PREFIX.size)
    if len(prefix) != _PREFIX.size:
        raise CheckpointError(f"{path}: truncated checkpoint")
    magic, version, hlen = _PREFIX.unpack(prefix)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if version != VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, expected {VERSION}")
    hb = f.read(hlen)
    if len(hb) != hlen:
        raise CheckpointError(f"{path}: truncated checkpoint header")
    try:
        header = json.loads(hb.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt checkpoint header") from e
    return header, f.tell()


def load_checkpoint(path, component=None):
    """Returns ``(state, header)``; raises :class:`CheckpointError` on any mismatch."""
    try:
        f = open(path, "rb")
    except OSError as e:
        raise CheckpointError(f"{path}: cannot open checkpoint") from e
    with f:
        header, _ = _read_header(f, path)
        if component is not None and header.get("component") != component:
            raise CheckpointError(f"{path}: holds component {header.get('component')!r}, expected {component!r}")
        payload = f.read()
    state = {}
    for e in header["tensors"]:
        raw = payload[e["offset"]:e["offset"] + e["nbytes"]]
        if len(raw) != e["nbytes"]:
            raise CheckpointError(f"{path}: truncated tensor data for {e['name']}")
        arr = np.frombuffer(raw, dtype=np.dtype(e["dtype"]).newbyteorder("<")).reshape(e["shape"])
        state[e["name"]] = torch.from_numpy(arr.astype(np.dtype(e["dtype"]), copy=True))
    if state_hash(state) != header.get("weights_hash"):
        raise CheckpointError(f"{path}: weights do not match the stored hash")
    return state, header
