"""Versioned binary checkpoint container.

Layout::

    8 bytes   magic  b"HGNBCKPT"
    4 bytes   format version (little-endian uint32)
    8 bytes   payload length (little-endian uint64)
    32 bytes  SHA-256 of the payload
    payload   a NumPy ``.npz`` archive (no pickled objects)

The archive holds the model state arrays under ``state/<name>``, the best
post-burn-in state under ``best/<name>`` (optional), the log-likelihood trace
under ``trace`` and a UTF-8 JSON document under ``meta``.  The random stream
position is fully described by ``meta["seed"]`` and ``meta["iteration"]``
because every sweep derives its streams from ``(seed, iteration, phase)``.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import struct
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .errors import CheckpointError
from .model import ModelState

MAGIC = b"HGNBCKPT"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sIQ32s")


@dataclass
class Checkpoint:
    state: ModelState
    iteration: int = 0
    log_likelihoods: np.ndarray = field(default_factory=lambda: np.zeros(0))
    best_state: ModelState | None = None
    best_iteration: int = -1
    meta: dict[str, Any] = field(default_factory=dict)


def npz_bytes(arrays) -> bytes:
    """``.npz`` archive with fixed entry timestamps, so equal inputs give equal bytes."""
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            with zf.open(info, "w", force_zip64=True) as fh:
                np.lib.format.write_array(fh, np.asarray(arrays[name]), allow_pickle=False)
    return buf.getvalue()


def save_checkpoint(path, checkpoint: Checkpoint) -> None:
    arrays = {f"state/{k}": v for k, v in checkpoint.state.arrays().items()}
    if checkpoint.best_state is not None:
        arrays.update({f"best/{k}": v for k, v in checkpoint.best_state.arrays().items()})
    arrays["trace"] = np.asarray(checkpoint.log_likelihoods, dtype=float)
    meta = dict(checkpoint.meta, iteration=int(checkpoint.iteration),
                best_iteration=int(checkpoint.best_iteration))
    arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    payload = npz_bytes(arrays)
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, len(payload), hashlib.sha256(payload).digest())
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(payload)
    os.replace(tmp, path)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    if len(raw) < _HEADER.size:
        raise CheckpointError(f"{path}: truncated header")
    magic, version, length, digest = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    payload = raw[_HEADER.size:]
    if len(payload) != length:
        raise CheckpointError(f"{path}: truncated payload ({len(payload)} of {length} bytes)")
    if hashlib.sha256(payload).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch")
    try:
        with np.load(io.BytesIO(payload), allow_pickle=False) as npz:
            data = {k: npz[k] for k in npz.files}
        meta = json.loads(data.pop("meta").tobytes().decode())
    except (zipfile.BadZipFile, ValueError, KeyError) as exc:
        raise CheckpointError(f"{path}: corrupt payload ({exc})") from None

    def _state(prefix):
        sub = {k[len(prefix):]: v for k, v in data.items() if k.startswith(prefix)}
        return ModelState.from_arrays(sub) if sub else None

    state = _state("state/")
    if state is None:
        raise CheckpointError(f"{path}: no model state stored")
    return Checkpoint(
        state=state,
        iteration=int(meta.pop("iteration")),
        log_likelihoods=data.get("trace", np.zeros(0)),
        best_state=_state("best/"),
        best_iteration=int(meta.pop("best_iteration")),
        meta=meta,
    )


def save_state(path, state: ModelState) -> None:
    """Write a bare model state (no chain bookkeeping)."""
    save_checkpoint(path, Checkpoint(state=state))


def load_state(path) -> ModelState:
    return load_checkpoint(path).state
