"""File formats: binary time tags, CSV tables and JSON reports.

Time-tag file layout (little endian)::

    offset 0  4s   magic b"PTTG"
    offset 4  u16  format version (1)
    offset 6  u8   channel count
    offset 7  u8   reserved (0)
    offset 8  N x (u8 channel, u64 timestamp_ps), sorted by timestamp
"""

from __future__ import annotations

import dataclasses
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .analysis import CorrelationHistogram
from .noise import RfTrace
from .simulate import TimeTagStream

MAGIC = b"PTTG"
VERSION = 1
HEADER = struct.Struct("<4sHBB")
RECORD = np.dtype([("channel", "<u1"), ("timestamp", "<u8")])
assert HEADER.size == 8 and RECORD.itemsize == 9


class DataError(ValueError):
    """Malformed or inconsistent input data; ``offset`` is a byte offset when known."""

    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        super().__init__(message if offset is None else f"{message} (byte offset {offset})")


def atomic_write(path, data: bytes | str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"newline": "\n", "encoding": "utf-8"})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# --- time tags ----------------------------------------------------------------


def encode_timetags(stream: TimeTagStream, n_channels: int = 2) -> bytes:
    ts = stream.timestamps
    if ts.size and (ts.min() < 0 or np.any(np.diff(ts) < 0)):
        raise DataError("timestamps must be non-negative and sorted")
    if stream.channels.size and stream.channels.max() >= n_channels:
        raise DataError(f"channel id {int(stream.channels.max())} >= channel count {n_channels}")
    rec = np.empty(ts.size, RECORD)
    rec["channel"] = stream.channels
    rec["timestamp"] = ts
    return HEADER.pack(MAGIC, VERSION, n_channels, 0) + rec.tobytes()


def decode_timetags(buf: bytes, period_ps: float | None = None) -> TimeTagStream:
    if len(buf) < HEADER.size:
        raise DataError("file shorter than the 8-byte header", offset=0)
    magic, version, n_channels, _ = HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise DataError(f"bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    if version != VERSION:
        raise DataError(f"unsupported format version {version}", offset=4)
    body = len(buf) - HEADER.size
    n, rem = divmod(body, RECORD.itemsize)
    if rem:
        raise DataError(f"truncated record ({rem} of {RECORD.itemsize} bytes)", offset=HEADER.size + n * RECORD.itemsize)
    rec = np.frombuffer(buf, RECORD, count=n, offset=HEADER.size)
    ch = rec["channel"].astype(np.uint8)
    ts = rec["timestamp"]
    if n and ts.max() > np.iinfo(np.int64).max:
        raise DataError("timestamp exceeds signed 64-bit range")
    ts = ts.astype(np.int64)
    bad = np.flatnonzero(ts[1:] < ts[:-1])
    if bad.size:
        raise DataError("timestamps not sorted", offset=HEADER.size + (int(bad[0]) + 1) * RECORD.itemsize)
    bad = np.flatnonzero(ch >= n_channels)
    if bad.size:
        raise DataError(f"channel id {int(ch[bad[0]])} >= channel count {n_channels}",
                        offset=HEADER.size + int(bad[0]) * RECORD.itemsize)
    duration = int(ts[-1]) + 1 if n else 0
    return TimeTagStream(ch, ts, duration_ps=duration, period_ps=period_ps)


def write_timetags(path, stream: TimeTagStream, n_channels: int = 2):
    atomic_write(path, encode_timetags(stream, n_channels))


def read_timetags(path, period_ps: float | None = None) -> TimeTagStream:
    return decode_timetags(Path(path).read_bytes(), period_ps)


# --- CSV ----------------------------------------------------------------------


def _read_csv(path, header: tuple[str, ...]):
    meta, rows = {}, []
    lines = Path(path).read_text(encoding="utf-8").split("\n")
    seen_header = False
    for lineno, line in enumerate(lines, 1):
        if not line:
            continue
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            meta[key.strip()] = value.strip()
            continue
        if not seen_header:
            if tuple(c.strip() for c in line.split(",")) != header:
                raise DataError(f"{path}: line {lineno}: expected header {','.join(header)}")
            seen_header = True
            continue
        parts = line.split(",")
        if len(parts) != len(header):
            raise DataError(f"{path}: line {lineno}: expected {len(header)} fields")
        rows.append(parts)
    if not seen_header:
        raise DataError(f"{path}: missing header row")
    return meta, rows


def write_histogram_csv(path, hist: CorrelationHistogram):
    lines = [f"# bin_ps={hist.bin_ps}", f"# range_ps={hist.range_ps}"]
    for k, v in hist.metadata.items():
        if v is not None and not isinstance(v, (dict, list)):
            lines.append(f"# {k}={v!r}" if isinstance(v, float) else f"# {k}={v}")
    lines.append("delay_ps,counts")
    lines += [f"{d},{c}" for d, c in zip(hist.delays.tolist(), hist.counts.tolist())]
    atomic_write(path, "\n".join(lines) + "\n")


def read_histogram_csv(path) -> CorrelationHistogram:
    meta, rows = _read_csv(path, ("delay_ps", "counts"))
    try:
        delays = np.array([int(r[0]) for r in rows], dtype=np.int64)
        counts = np.array([int(r[1]) for r in rows], dtype=np.int64)
    except ValueError as exc:
        raise DataError(f"{path}: non-integer field: {exc}") from None
    if delays.size < 2:
        raise DataError(f"{path}: need at least two bins")
    bin_ps = int(meta.pop("bin_ps", delays[1] - delays[0]))
    range_ps = int(meta.pop("range_ps", -delays[0]))
    if not np.array_equal(delays, np.arange(-range_ps, range_ps + 1, bin_ps)):
        raise DataError(f"{path}: delays are not a uniform grid centred on zero")
    if counts.min() < 0:
        raise DataError(f"{path}: negative counts")
    if "period_ps" in meta:
        meta["period_ps"] = float(meta["period_ps"])
    return CorrelationHistogram(bin_ps, range_ps, counts, meta)


def write_rf_trace_csv(path, trace: RfTrace):
    lines = ["bin_us,counts"] + [f"{i * trace.bin_us!r},{c}" for i, c in enumerate(trace.counts.tolist())]
    atomic_write(path, "\n".join(lines) + "\n")


def read_rf_trace_csv(path) -> RfTrace:
    _, rows = _read_csv(path, ("bin_us", "counts"))
    if len(rows) < 2:
        raise DataError(f"{path}: need at least two bins")
    try:
        t = np.array([float(r[0]) for r in rows])
        counts = np.array([int(r[1]) for r in rows], dtype=np.int64)
    except ValueError as exc:
        raise DataError(f"{path}: bad field: {exc}") from None
    return RfTrace(bin_us=float(t[1] - t[0]), counts=counts)


def write_matrix_csv(path, row_values, col_values, matrix, row_name="v1_mv", col_name="v2_mv"):
    """2-D table: first column holds ``row_values``, header holds ``col_values``."""
    head = f"{row_name}\\{col_name}," + ",".join(repr(float(c)) for c in col_values)
    body = [repr(float(r)) + "," + ",".join(repr(float(x)) for x in row) for r, row in zip(row_values, np.asarray(matrix))]
    atomic_write(path, "\n".join([head] + body) + "\n")


# --- JSON ---------------------------------------------------------------------


def _jsonable(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: _jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def write_json(path, obj):
    atomic_write(path, json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def read_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON: {exc}") from None
