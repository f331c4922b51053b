"""Binary checkpoint serialization.

Layout (all integers little-endian):

    8 bytes   magic b"SCPKPT01"
    u64       metadata length, then that many bytes of canonical JSON
              (iter, seed, config_hash, counts)
    u32       record count, then records:
                u16 name length + UTF-8 name
                u8  dtype code length + ASCII numpy dtype string (e.g. "<f4")
                u8  ndim, then ndim * u64 dims
                u64 byte length, then raw little-endian array bytes

Records hold model parameters, model buffers (name-prefixed "buffer:"), and
optimizer momentum ("optim:"). The config hash is the SHA-256 of the run
configuration's canonical JSON; loading into a differently-configured run
refuses instead of producing silently wrong results.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from .errors import CheckpointError

MAGIC = b"SCPKPT01"


def canonical_json(obj):
    """Deterministic JSON: sorted keys, no whitespace, no NaN."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_hash(config_dict):
    return hashlib.sha256(canonical_json(config_dict).encode("utf-8")).hexdigest()


def _write_record(fh, name, arr):
    arr = np.ascontiguousarray(arr)
    dt = arr.dtype.newbyteorder("<")
    data = arr.astype(dt, copy=False).tobytes()
    name_b = name.encode("utf-8")
    dtype_b = dt.str.encode("ascii")
    fh.write(struct.pack("<H", len(name_b)))
    fh.write(name_b)
    fh.write(struct.pack("<B", len(dtype_b)))
    fh.write(dtype_b)
    fh.write(struct.pack("<B", arr.ndim))
    for d in arr.shape:
        fh.write(struct.pack("<Q", d))
    fh.write(struct.pack("<Q", len(data)))
    fh.write(data)


def _read_exact(fh, n, what):
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return data


def _read_record(fh):
    (name_len,) = struct.unpack("<H", _read_exact(fh, 2, "name length"))
    name = _read_exact(fh, name_len, "name").decode("utf-8")
    (dt_len,) = struct.unpack("<B", _read_exact(fh, 1, "dtype length"))
    dtype = np.dtype(_read_exact(fh, dt_len, "dtype").decode("ascii"))
    (ndim,) = struct.unpack("<B", _read_exact(fh, 1, "ndim"))
    shape = tuple(
        struct.unpack("<Q", _read_exact(fh, 8, "dim"))[0] for _ in range(ndim)
    )
    (nbytes,) = struct.unpack("<Q", _read_exact(fh, 8, "data length"))
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if ndim else dtype.itemsize
    if nbytes != expected:
        raise CheckpointError(
            f"record {name!r}: byte length {nbytes} does not match {dtype} {shape}"
        )
    arr = np.frombuffer(_read_exact(fh, nbytes, f"data of {name!r}"), dtype=dtype)
    return name, arr.reshape(shape).copy()


def save_checkpoint(path, model, optim_state=None, metadata=None):
    """Write model parameters + buffers and optimizer momentum to one file."""
    records = list(model.state_arrays().items())
    if optim_state is not None:
        for name in sorted(optim_state.momentum):
            records.append((f"optim:{name}", optim_state.momentum[name]))
    meta = dict(metadata or {})
    meta.setdefault("format", 1)
    if optim_state is not None:
        meta.setdefault("iter", optim_state.iter)
        meta.setdefault("max_iter", optim_state.max_iter)
    meta["record_count"] = len(records)
    blob = canonical_json(meta).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(records)))
        for name, arr in records:
            _write_record(fh, name, arr)


def load_checkpoint(path, expected_config_hash=None):
    """Read (metadata, {name: array}); verify magic and, if given, config hash."""
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise CheckpointError(f"cannot open checkpoint {path}: {exc}") from None
    with fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise CheckpointError(f"{path} is not a checkpoint (bad magic {magic!r})")
        (meta_len,) = struct.unpack("<Q", _read_exact(fh, 8, "metadata length"))
        meta = json.loads(_read_exact(fh, meta_len, "metadata").decode("utf-8"))
        if expected_config_hash is not None:
            got = meta.get("config_hash")
            if got != expected_config_hash:
                raise CheckpointError(
                    f"config hash mismatch: checkpoint has {got}, run has {expected_config_hash}"
                )
        (count,) = struct.unpack("<I", _read_exact(fh, 4, "record count"))
        arrays = {}
        for _ in range(count):
            name, arr = _read_record(fh)
            if name in arrays:
                raise CheckpointError(f"duplicate record {name!r}")
            arrays[name] = arr
    return meta, arrays


def split_records(arrays):
    """Partition loaded records into (model_arrays, momentum_arrays)."""
    model_arrays = {}
    momentum = {}
    for name, arr in arrays.items():
        if name.startswith("optim:"):
            momentum[name[len("optim:"):]] = arr
        else:
            model_arrays[name] = arr
    return model_arrays, momentum
