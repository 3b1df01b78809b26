"""Trace domain types, CSV ingestion and local-plane projection."""
from __future__ import annotations

import bisect
import csv
import io
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import IO, Iterable, Sequence, Union

import numpy as np

from .errors import DomainError, EmptyResultError, FormatError, OrderingError

EARTH_RADIUS_M = 6_371_000.0
MAX_PROJECTION_DISTANCE_M = 100_000.0

TRACE_COLUMNS = (
    "timestamp_s",
    "lat",
    "lon",
    "velocity_mps",
    "heading_deg",
    "rsrp_dbm",
    "rsrq_db",
    "snr_db",
    "cqi",
    "datarate_mbps",
)
INDICATORS = ("rsrp", "rsrq", "snr", "cqi")


@dataclass(frozen=True)
class GeoPoint:
    latitude: float
    longitude: float

    def __post_init__(self):
        if not (-90.0 <= self.latitude <= 90.0):
            raise DomainError(f"latitude {self.latitude} outside [-90, 90]")
        if not (-180.0 <= self.longitude <= 180.0):
            raise DomainError(f"longitude {self.longitude} outside [-180, 180]")


@dataclass(frozen=True)
class CartesianPoint:
    """Metres east (x) and north (y) of a scenario origin."""

    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise DomainError(f"non-finite point ({self.x}, {self.y})")

    def distance_to(self, other: "CartesianPoint") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


@dataclass(frozen=True)
class ChannelContext:
    """Passive LTE downlink indicators; ``None`` marks an absent value."""

    rsrp: float | None = None
    rsrq: float | None = None
    snr: float | None = None
    cqi: int | None = None

    def __post_init__(self):
        if self.cqi is not None and not (0 <= self.cqi <= 15):
            raise DomainError(f"cqi {self.cqi} outside [0, 15]")

    def get(self, name: str) -> float | None:
        if name not in INDICATORS:
            raise KeyError(name)
        return getattr(self, name)

    def is_empty(self) -> bool:
        return all(getattr(self, name) is None for name in INDICATORS)


@dataclass(frozen=True)
class ContextSample:
    timestamp: float
    position: GeoPoint
    velocity: float
    heading: float
    context: ChannelContext = field(default_factory=ChannelContext)
    measured_rate: float | None = None

    def __post_init__(self):
        if not self.velocity >= 0.0:
            raise DomainError(f"velocity {self.velocity} must be >= 0")
        if not (0.0 <= self.heading < 360.0):
            raise DomainError(f"heading {self.heading} outside [0, 360)")


@dataclass(frozen=True)
class Trace:
    trip_id: str
    samples: tuple[ContextSample, ...]
    origin: GeoPoint

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        if len(self.samples) < 2:
            raise FormatError(f"trace {self.trip_id!r} needs at least 2 samples")
        for i in range(1, len(self.samples)):
            prev, cur = self.samples[i - 1].timestamp, self.samples[i].timestamp
            if not cur > prev:
                raise OrderingError(i + 1, prev, cur)

    def __len__(self):
        return len(self.samples)

    @property
    def timestamps(self) -> np.ndarray:
        return np.array([s.timestamp for s in self.samples])

    @property
    def duration(self) -> float:
        return self.samples[-1].timestamp - self.samples[0].timestamp

    @cached_property
    def _local_cache(self) -> dict:
        return {}

    def local_xy(self, origin: GeoPoint | None = None) -> np.ndarray:
        """(n, 2) array of sample positions projected against ``origin``."""
        origin = self.origin if origin is None else origin
        cache = self._local_cache
        if origin not in cache:
            xy = np.empty((len(self.samples), 2))
            for i, s in enumerate(self.samples):
                p = to_local(s.position, origin)
                xy[i, 0] = p.x
                xy[i, 1] = p.y
            xy.setflags(write=False)
            cache[origin] = xy
        return cache[origin]


# ---------------------------------------------------------------------------
# projection


def _haversine(a: GeoPoint, b: GeoPoint) -> float:
    phi1, phi2 = math.radians(a.latitude), math.radians(b.latitude)
    dphi = phi2 - phi1
    dlmb = math.radians(b.longitude - a.longitude)
    h = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def to_local(point: GeoPoint, origin: GeoPoint) -> CartesianPoint:
    """Equirectangular projection of ``point`` onto the tangent plane at ``origin``."""
    if _haversine(point, origin) > MAX_PROJECTION_DISTANCE_M:
        raise DomainError(
            f"{point} is more than {MAX_PROJECTION_DISTANCE_M / 1000:.0f} km from origin {origin}"
        )
    dlon = math.radians(point.longitude - origin.longitude)
    dlat = math.radians(point.latitude - origin.latitude)
    x = EARTH_RADIUS_M * dlon * math.cos(math.radians(origin.latitude))
    y = EARTH_RADIUS_M * dlat
    return CartesianPoint(x, y)


def to_geo(point: CartesianPoint, origin: GeoPoint) -> GeoPoint:
    """Inverse of :func:`to_local`."""
    lat = origin.latitude + math.degrees(point.y / EARTH_RADIUS_M)
    lon = origin.longitude + math.degrees(
        point.x / (EARTH_RADIUS_M * math.cos(math.radians(origin.latitude)))
    )
    return GeoPoint(lat, lon)


# ---------------------------------------------------------------------------
# CSV ingestion

Source = Union[bytes, str, IO[bytes], IO[str]]


def _read_text(source: Source) -> str:
    if isinstance(source, (bytes, bytearray)):
        raw = bytes(source)
    elif isinstance(source, str):
        return source
    else:
        raw = source.read()
        if isinstance(raw, str):
            return raw
    try:
        return raw.decode("utf-8-sig")
    except UnicodeDecodeError as exc:
        raise FormatError(f"input is not valid UTF-8 ({exc.reason})") from None


def _parse_float(value: str, column: str, row: int, optional: bool) -> float | None:
    value = value.strip()
    if value == "":
        if optional:
            return None
        raise FormatError(f"missing mandatory field {column!r}", row)
    try:
        out = float(value)
    except ValueError:
        raise FormatError(f"cannot parse {column!r} value {value!r}", row) from None
    if not math.isfinite(out):
        raise FormatError(f"non-finite {column!r} value {value!r}", row)
    return out


def _parse_cqi(value: str, row: int) -> int | None:
    value = value.strip()
    if value == "":
        return None
    try:
        number = float(value)
    except ValueError:
        raise FormatError(f"cannot parse 'cqi' value {value!r}", row) from None
    if not math.isfinite(number) or number != int(number):
        raise FormatError(f"cqi {value!r} is not an integer", row)
    cqi = int(number)
    if not 0 <= cqi <= 15:
        raise FormatError(f"cqi {cqi} outside [0, 15]", row)
    return cqi


def read_rows(source: Source, extra_columns: Sequence[str] = ()):
    """Yield ``(row_number, ContextSample, extras)`` for each data row.

    ``extra_columns`` names additional columns that must follow the standard
    ten; their raw string values are returned in ``extras``.
    """
    text = _read_text(source)
    reader = csv.reader(io.StringIO(text, newline=""))
    try:
        header = next(reader)
    except StopIteration:
        raise FormatError("empty input, header expected") from None
    except csv.Error as exc:
        raise FormatError(f"unreadable header: {exc}") from None
    header = [h.strip() for h in header]
    expected = list(TRACE_COLUMNS) + list(extra_columns)
    if header[: len(expected)] != expected:
        raise FormatError(f"malformed header {header!r}, expected {expected!r}")
    width = len(header)
    row_no = 0
    while True:
        try:
            fields = next(reader)
        except StopIteration:
            break
        except csv.Error as exc:
            raise FormatError(f"unreadable row: {exc}", row_no + 1) from None
        if not fields or all(f.strip() == "" for f in fields):
            continue
        row_no += 1
        if len(fields) != width:
            raise FormatError(f"expected {width} fields, got {len(fields)}", row_no)
        ts = _parse_float(fields[0], "timestamp_s", row_no, False)
        lat = _parse_float(fields[1], "lat", row_no, False)
        lon = _parse_float(fields[2], "lon", row_no, False)
        vel = _parse_float(fields[3], "velocity_mps", row_no, False)
        heading = _parse_float(fields[4], "heading_deg", row_no, False)
        if vel < 0:
            raise FormatError(f"negative velocity {vel}", row_no)
        try:
            position = GeoPoint(lat, lon)
        except DomainError as exc:
            raise FormatError(str(exc), row_no) from None
        ctx = ChannelContext(
            rsrp=_parse_float(fields[5], "rsrp_dbm", row_no, True),
            rsrq=_parse_float(fields[6], "rsrq_db", row_no, True),
            snr=_parse_float(fields[7], "snr_db", row_no, True),
            cqi=_parse_cqi(fields[8], row_no),
        )
        rate = _parse_float(fields[9], "datarate_mbps", row_no, True)
        heading %= 360.0
        if heading >= 360.0:
            heading = 0.0
        sample = ContextSample(
            timestamp=ts,
            position=position,
            velocity=vel,
            heading=heading,
            context=ctx,
            measured_rate=rate,
        )
        extras = [f.strip() for f in fields[len(TRACE_COLUMNS):]]
        yield row_no, sample, extras


def parse_trace(source: Source, trip_id: str) -> Trace:
    """Parse a trace CSV; the first row's position becomes the origin."""
    samples: list[ContextSample] = []
    for row_no, sample, _ in read_rows(source):
        if samples and not sample.timestamp > samples[-1].timestamp:
            raise OrderingError(row_no, samples[-1].timestamp, sample.timestamp)
        samples.append(sample)
    if len(samples) < 2:
        raise FormatError(f"trace {trip_id!r} has {len(samples)} rows, at least 2 required")
    return Trace(trip_id, tuple(samples), samples[0].position)


def _fmt(value) -> str:
    return "" if value is None else repr(value)


def write_trace(trace: Trace, stream: IO[str] | None = None) -> str:
    """Serialize ``trace`` in the canonical CSV schema; returns the text."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_COLUMNS)
    for s in trace.samples:
        c = s.context
        writer.writerow(
            [
                repr(s.timestamp),
                repr(s.position.latitude),
                repr(s.position.longitude),
                repr(s.velocity),
                repr(s.heading),
                _fmt(c.rsrp),
                _fmt(c.rsrq),
                _fmt(c.snr),
                "" if c.cqi is None else str(c.cqi),
                _fmt(s.measured_rate),
            ]
        )
    text = buf.getvalue()
    if stream is not None:
        stream.write(text)
    return text


# ---------------------------------------------------------------------------
# resampling


def _lerp(a: float, b: float, w: float) -> float:
    return a if w == 0.0 else a + w * (b - a)


def _lerp_heading(a: float, b: float, w: float) -> float:
    if w == 0.0:
        return a
    diff = (b - a + 180.0) % 360.0 - 180.0
    return (a + w * diff) % 360.0


def resample_context(trace: Trace, f_context: float) -> Trace:
    """Resample ``trace`` onto a uniform grid of period ``1 / f_context``.

    Position, velocity and heading are interpolated linearly (heading along the
    shorter arc); indicators and measured rates are copied from the sample
    nearest in time, earlier sample on ties.
    """
    if not f_context > 0:
        raise DomainError(f"f_context must be > 0, got {f_context}")
    times = [s.timestamp for s in trace.samples]
    t0, t_end = times[0], times[-1]
    count = int(math.floor((t_end - t0) * f_context + 1e-9)) + 1
    if count < 2:
        raise EmptyResultError(
            f"trace {trace.trip_id!r} spans {t_end - t0} s, shorter than one period"
        )
    out = []
    last = len(times) - 1
    for k in range(count):
        t = t0 + k / f_context
        i = bisect.bisect_right(times, t) - 1
        i = min(max(i, 0), last)
        a = trace.samples[i]
        if i == last or t <= a.timestamp:
            b, w = a, 0.0
        else:
            b = trace.samples[i + 1]
            w = (t - a.timestamp) / (b.timestamp - a.timestamp)
        nearest = b if (w > 0.5) else a
        out.append(
            ContextSample(
                timestamp=t,
                position=GeoPoint(
                    _lerp(a.position.latitude, b.position.latitude, w),
                    _lerp(a.position.longitude, b.position.longitude, w),
                ),
                velocity=_lerp(a.velocity, b.velocity, w),
                heading=_lerp_heading(a.heading, b.heading, w),
                context=nearest.context,
                measured_rate=nearest.measured_rate,
            )
        )
    return replace(trace, samples=tuple(out))


def load_traces(paths: Iterable[str]) -> list[Trace]:
    """Parse several CSV files, using each file stem as trip id."""
    import os

    traces = []
    for path in paths:
        with open(path, "rb") as fh:
            trip = os.path.splitext(os.path.basename(path))[0]
            traces.append(parse_trace(fh, trip))
    return traces
