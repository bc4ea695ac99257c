"""Event data model and stream (de)serialization.

Streams are stored column-wise (``t``, ``x``, ``y``, ``p`` arrays) so the
layer kernels can consume them without per-event Python objects. Three
on-disk formats are supported:

* EVS1, the native little-endian format (10-byte header + 14 bytes/event),
* the 5-byte-per-event N-MNIST binary layout (read only),
* a ``t,x,y,p`` CSV debug format.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple

import numpy as np

from .errors import (
    BadMagic,
    GeometryMismatch,
    LengthNotMultipleOf5,
    NonMonotoneTimestamp,
    OutOfRangeCoordinate,
    TruncatedRecord,
)

EVS_MAGIC = b"EVS1"
EVS_HEADER = struct.Struct("<4sHHH")
EVS_RECORD = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "<u2")])
assert EVS_HEADER.size == 10 and EVS_RECORD.itemsize == 14

NMNIST_GEOMETRY_SIDE = 34
NMNIST_OVERFLOW_Y = 240
NMNIST_OVERFLOW_STEP = 1 << 13
OFF, ON = 0, 1


class Event(NamedTuple):
    x: int
    y: int
    t: int
    p: int


@dataclass(frozen=True)
class SensorGeometry:
    width: int
    height: int
    num_types: int

    def __post_init__(self):
        for name in ("width", "height", "num_types"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"SensorGeometry.{name} must be an integer >= 1, got {v!r}")


def _frozen(a, dtype) -> np.ndarray:
    a = np.array(a, dtype=dtype).reshape(-1)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class EventStream:
    """An immutable, validated, time-ordered sequence of events."""

    geometry: SensorGeometry
    t: np.ndarray = field(default_factory=lambda: np.zeros(0, np.uint64))
    x: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    y: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    p: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))

    def __post_init__(self):
        t = np.asarray(self.t)
        if t.dtype.kind in "if" and t.size and t.min() < 0:
            raise NonMonotoneTimestamp("negative timestamp")
        object.__setattr__(self, "t", _frozen(t, np.uint64))
        for name in ("x", "y", "p"):
            object.__setattr__(self, name, _frozen(getattr(self, name), np.int64))
        n = self.t.size
        if not (self.x.size == self.y.size == self.p.size == n):
            raise ValueError("t, x, y, p must have equal lengths")
        bad = check_events(self.geometry, self.t, self.x, self.y, self.p)
        if bad is not None:
            kind, i = bad
            raise kind(f"event {i} violates stream invariants")

    @classmethod
    def from_events(cls, geometry: SensorGeometry, events: Iterable[Event]) -> "EventStream":
        events = list(events)
        if not events:
            return cls(geometry)
        x, y, t, p = zip(*events)
        return cls(geometry, t=np.array(t, np.uint64), x=x, y=y, p=p)

    def __len__(self) -> int:
        return int(self.t.size)

    def __iter__(self) -> Iterator[Event]:
        for x, y, t, p in zip(self.x.tolist(), self.y.tolist(), self.t.tolist(), self.p.tolist()):
            yield Event(x, y, t, p)

    def __getitem__(self, i: int) -> Event:
        return Event(int(self.x[i]), int(self.y[i]), int(self.t[i]), int(self.p[i]))

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventStream):
            return NotImplemented
        return (
            self.geometry == other.geometry
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.p, other.p)
        )

    __hash__ = None

    def select(self, mask_or_index) -> "EventStream":
        return EventStream(
            self.geometry,
            t=self.t[mask_or_index],
            x=self.x[mask_or_index],
            y=self.y[mask_or_index],
            p=self.p[mask_or_index],
        )

    def time_slice(self, t_start: int, t_stop: int) -> "EventStream":
        """Events with ``t_start <= t < t_stop``."""
        lo = np.searchsorted(self.t, np.uint64(t_start), side="left")
        hi = np.searchsorted(self.t, np.uint64(t_stop), side="left")
        return self.select(slice(lo, hi))

    @property
    def duration(self) -> int:
        return int(self.t[-1] - self.t[0]) if len(self) else 0


def check_events(geometry: SensorGeometry, t, x, y, p):
    """Return ``(ExceptionType, index)`` for the first invalid event, else None."""
    if t.size == 0:
        return None
    coord_bad = (
        (x < 0) | (x >= geometry.width) | (y < 0) | (y >= geometry.height)
        | (p < 0) | (p >= geometry.num_types)
    )
    mono_bad = np.zeros(t.size, bool)
    mono_bad[1:] = t[1:] < t[:-1]
    firsts = []
    if coord_bad.any():
        firsts.append((int(np.argmax(coord_bad)), OutOfRangeCoordinate))
    if mono_bad.any():
        firsts.append((int(np.argmax(mono_bad)), NonMonotoneTimestamp))
    if not firsts:
        return None
    i, kind = min(firsts, key=lambda f: f[0])
    return kind, i


def concatenate(streams: Iterable[EventStream]) -> EventStream:
    streams = list(streams)
    geometry = streams[0].geometry
    if any(s.geometry != geometry for s in streams):
        raise GeometryMismatch("cannot concatenate streams with different geometries")
    return EventStream(
        geometry,
        t=np.concatenate([s.t for s in streams]),
        x=np.concatenate([s.x for s in streams]),
        y=np.concatenate([s.y for s in streams]),
        p=np.concatenate([s.p for s in streams]),
    )


# --- EVS1 --------------------------------------------------------------------


def encode_native(stream: EventStream) -> bytes:
    g = stream.geometry
    header = EVS_HEADER.pack(EVS_MAGIC, g.width, g.height, g.num_types)
    rec = np.empty(len(stream), EVS_RECORD)
    rec["t"], rec["x"], rec["y"], rec["p"] = stream.t, stream.x, stream.y, stream.p
    return header + rec.tobytes()


def parse_native(data: bytes) -> EventStream:
    data = bytes(data)
    if len(data) < EVS_HEADER.size:
        raise TruncatedRecord("header shorter than 10 bytes", offset=len(data))
    magic, width, height, num_types = EVS_HEADER.unpack_from(data, 0)
    if magic != EVS_MAGIC:
        raise BadMagic(f"expected {EVS_MAGIC!r}, got {magic!r}", offset=0)
    try:
        geometry = SensorGeometry(width, height, num_types)
    except ValueError as e:
        raise OutOfRangeCoordinate(str(e), offset=4) from None
    body = len(data) - EVS_HEADER.size
    n, rem = divmod(body, EVS_RECORD.itemsize)
    if rem:
        raise TruncatedRecord(f"partial record {n}", offset=EVS_HEADER.size + n * EVS_RECORD.itemsize)
    rec = np.frombuffer(data, EVS_RECORD, count=n, offset=EVS_HEADER.size)
    t, x, y, p = (rec[k].astype(np.uint64 if k == "t" else np.int64) for k in ("t", "x", "y", "p"))
    bad = check_events(geometry, t, x, y, p)
    if bad is not None:
        kind, i = bad
        raise kind(f"record {i}", offset=EVS_HEADER.size + i * EVS_RECORD.itemsize)
    return EventStream(geometry, t=t, x=x, y=y, p=p)


# --- N-MNIST -----------------------------------------------------------------


def parse_nmnist(data: bytes, geometry: SensorGeometry | None = None) -> EventStream:
    """Decode the N-MNIST 40-bit record layout.

    byte0 = x, byte1 = y, bit 7 of byte2 = polarity (1 = on), and the
    remaining 23 bits are a big-endian timestamp in microseconds. As in the
    dataset authors' reader, a record with ``y == 240`` is a timestamp
    overflow marker: it is dropped and every later timestamp gains 2**13.
    Records are then stably sorted by timestamp.
    """
    if geometry is None:
        geometry = SensorGeometry(NMNIST_GEOMETRY_SIDE, NMNIST_GEOMETRY_SIDE, 2)
    raw = np.frombuffer(bytes(data), np.uint8)
    if raw.size % 5:
        raise LengthNotMultipleOf5(f"{raw.size} bytes", offset=raw.size - raw.size % 5)
    raw = raw.reshape(-1, 5).astype(np.int64)
    x, y = raw[:, 0], raw[:, 1]
    p = raw[:, 2] >> 7
    t = ((raw[:, 2] & 0x7F) << 16) | (raw[:, 3] << 8) | raw[:, 4]
    overflow = y == NMNIST_OVERFLOW_Y
    if overflow.any():
        t = t + np.cumsum(overflow) * NMNIST_OVERFLOW_STEP
    records = np.flatnonzero(~overflow)
    x, y, p, t = x[records], y[records], p[records], t[records]
    coord_bad = (x >= geometry.width) | (y >= geometry.height) | (p >= geometry.num_types)
    if coord_bad.any():
        i = int(records[np.argmax(coord_bad)])
        raise OutOfRangeCoordinate(f"record {i}", offset=5 * i)
    order = np.argsort(t, kind="stable")
    return EventStream(geometry, t=t[order], x=x[order], y=y[order], p=p[order])


# --- CSV ---------------------------------------------------------------------


def encode_csv(stream: EventStream) -> str:
    out = io.StringIO()
    out.write("t,x,y,p\n")
    for x, y, t, p in stream:
        out.write(f"{t},{x},{y},{p}\n")
    return out.getvalue()


def parse_csv(text: str, geometry: SensorGeometry | None = None) -> EventStream:
    """Parse ``t,x,y,p`` lines. Geometry is inferred from maxima when omitted."""
    rows = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#") or line.startswith("t,"):
            continue
        rows.append([int(v) for v in line.split(",")])
    arr = np.array(rows, np.int64).reshape(-1, 4)
    t, x, y, p = arr.T
    if geometry is None:
        if not len(arr):
            raise ValueError("cannot infer geometry of an empty CSV stream")
        geometry = SensorGeometry(int(x.max()) + 1, int(y.max()) + 1, max(int(p.max()) + 1, 2))
    if (t < 0).any():
        raise NonMonotoneTimestamp("negative timestamp in CSV")
    return EventStream(geometry, t=t.astype(np.uint64), x=x, y=y, p=p)


# --- file helpers ------------------------------------------------------------


def read_stream(path, geometry: SensorGeometry | None = None) -> EventStream:
    """Read a stream, dispatching on suffix (.csv, .bin = N-MNIST, else EVS1)."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".csv":
        return parse_csv(path.read_text(), geometry)
    data = path.read_bytes()
    if suffix == ".bin" and not data.startswith(EVS_MAGIC):
        return parse_nmnist(data, geometry)
    return parse_native(data)


def write_stream(path, stream: EventStream) -> None:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        path.write_text(encode_csv(stream))
    else:
        path.write_bytes(encode_native(stream))
