"""Binary and CSV persistence for snapshot files and match streams.

Snapshot file layout (little-endian throughout)::

    b"YBV1"  u32 p  u32 R  then R x (u64 label, (2p+1) x f64)

Match stream layout::

    b"YBM1"  u32 p  u64 count  then count x
        (u32 file_j, u64 iter_j, (2p+1) x f64, u32 file_i, u64 iter_i, (2p+1) x f64)
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

SNAPSHOT_MAGIC = b"YBV1"
MATCH_MAGIC = b"YBM1"


class FormatError(ValueError):
    pass


def _record_dtype(dim: int) -> np.dtype:
    return np.dtype([("label", "<u8"), ("state", "<f8", (dim,))])


def write_snapshots(path, p: int, labels, states) -> None:
    labels = np.asarray(labels, dtype=np.uint64)
    states = np.asarray(states, dtype=np.float64)
    dim = 2 * p + 1
    if states.ndim != 2 or states.shape[1] != dim or states.shape[0] != labels.shape[0]:
        raise ValueError("states must be (R, 2p+1) with one label per row")
    rec = np.empty(labels.shape[0], dtype=_record_dtype(dim))
    rec["label"] = labels
    rec["state"] = states
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(struct.pack("<II", p, labels.shape[0]))
        fh.write(rec.tobytes())


def read_snapshots(path):
    """Return ``(p, labels, states)`` from a snapshot file."""
    data = Path(path).read_bytes()
    if data[:4] != SNAPSHOT_MAGIC:
        raise FormatError(f"{path}: not a snapshot file")
    p, count = struct.unpack_from("<II", data, 4)
    dt = _record_dtype(2 * p + 1)
    body = data[12:]
    if len(body) != count * dt.itemsize:
        raise FormatError(f"{path}: expected {count} records, file is truncated or padded")
    rec = np.frombuffer(body, dtype=dt)
    return p, rec["label"].astype(np.int64), np.array(rec["state"])


def snapshots_to_csv(path, labels, states) -> None:
    with open(path, "w") as fh:
        dim = states.shape[1]
        fh.write("label," + ",".join(f"N{k}" for k in range(dim)) + "\n")
        for lab, row in zip(labels, states):
            fh.write(str(int(lab)) + "," + ",".join(format(v, ".17g") for v in row) + "\n")


def _match_dtype(dim: int) -> np.dtype:
    return np.dtype([
        ("file_j", "<u4"), ("iter_j", "<u8"), ("state_j", "<f8", (dim,)),
        ("file_i", "<u4"), ("iter_i", "<u8"), ("state_i", "<f8", (dim,)),
    ])


def write_matches(path, p: int, matches) -> None:
    dim = 2 * p + 1
    rec = np.empty(len(matches), dtype=_match_dtype(dim))
    for k, m in enumerate(matches):
        rec[k] = (m.file_j, m.iter_j, m.state_j, m.file_i, m.iter_i, m.state_i)
    with open(path, "wb") as fh:
        fh.write(MATCH_MAGIC)
        fh.write(struct.pack("<IQ", p, len(matches)))
        fh.write(rec.tobytes())


def read_matches(path):
    """Return ``(p, records)`` where records is a structured array."""
    data = Path(path).read_bytes()
    if data[:4] != MATCH_MAGIC:
        raise FormatError(f"{path}: not a match stream")
    p, count = struct.unpack_from("<IQ", data, 4)
    dt = _match_dtype(2 * p + 1)
    body = data[16:]
    if len(body) != count * dt.itemsize:
        raise FormatError(f"{path}: expected {count} records")
    return p, np.frombuffer(body, dtype=dt)
