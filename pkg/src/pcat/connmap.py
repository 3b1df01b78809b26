"""Multi-layer connectivity map: a grid of per-cell indicator aggregates."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Mapping

from .errors import EmptyResultError, FormatError, IncompatibleError
from .geotrace import INDICATORS, CartesianPoint, GeoPoint, Trace, to_local

MAP_FORMAT_VERSION = 1
DEFAULT_CELL_SIDE_M = 5.0


@dataclass(frozen=True, order=True)
class CellIndex:
    ix: int
    iy: int


def cell_index(p: CartesianPoint, cell_side: float) -> CellIndex:
    if not cell_side > 0:
        raise ValueError(f"cell_side must be > 0, got {cell_side}")
    return CellIndex(math.floor(p.x / cell_side), math.floor(p.y / cell_side))


@dataclass(frozen=True)
class LayerStats:
    """Streaming mean and sum of squared deviations of one indicator."""

    mean: float
    n: int
    m2: float

    @property
    def variance(self) -> float:
        return self.m2 / (self.n - 1) if self.n >= 2 else 0.0

    def push(self, x: float) -> "LayerStats":
        n = self.n + 1
        delta = x - self.mean
        mean = self.mean + delta / n
        return LayerStats(mean, n, self.m2 + delta * (x - mean))

    @staticmethod
    def single(x: float) -> "LayerStats":
        return LayerStats(float(x), 1, 0.0)

    def combine(self, other: "LayerStats") -> "LayerStats":
        # Symmetric in (self, other) so that merge commutes bit-for-bit.
        n = self.n + other.n
        delta = other.mean - self.mean
        mean = (self.n * self.mean + other.n * other.mean) / n
        m2 = (self.m2 + other.m2) + delta * delta * (self.n * other.n) / n
        return LayerStats(mean, n, m2)


@dataclass(frozen=True)
class CellEntry:
    layers: Mapping[str, LayerStats]

    def __post_init__(self):
        object.__setattr__(self, "layers", MappingProxyType(dict(self.layers)))

    def mean(self, indicator: str) -> float | None:
        stats = self.layers.get(indicator)
        return None if stats is None else stats.mean

    def __eq__(self, other):
        return isinstance(other, CellEntry) and dict(self.layers) == dict(other.layers)

    def __hash__(self):
        return hash(tuple(sorted(self.layers.items())))

    def __reduce__(self):
        return (CellEntry, (dict(self.layers),))


@dataclass(frozen=True)
class ConnectivityMap:
    cell_side: float
    origin: GeoPoint
    cells: Mapping[CellIndex, CellEntry] = field(default_factory=dict)

    def __post_init__(self):
        if not self.cell_side > 0:
            raise ValueError(f"cell_side must be > 0, got {self.cell_side}")
        object.__setattr__(self, "cells", MappingProxyType(dict(self.cells)))

    def __reduce__(self):
        return (ConnectivityMap, (self.cell_side, self.origin, dict(self.cells)))

    def __len__(self):
        return len(self.cells)

    def __eq__(self, other):
        return (
            isinstance(other, ConnectivityMap)
            and self.cell_side == other.cell_side
            and self.origin == other.origin
            and dict(self.cells) == dict(other.cells)
        )

    __hash__ = None

    @classmethod
    def empty(cls, cell_side: float = DEFAULT_CELL_SIDE_M, origin: GeoPoint | None = None):
        return cls(cell_side, origin if origin is not None else GeoPoint(0.0, 0.0), {})


def build_map(
    traces: Iterable[Trace],
    cell_side: float = DEFAULT_CELL_SIDE_M,
    origin: GeoPoint | None = None,
) -> ConnectivityMap:
    """Fold every sample's present indicators into its cell (Welford update).

    All traces are projected against ``origin`` (default: the first trace's).
    """
    traces = list(traces)
    if not traces:
        raise EmptyResultError("no traces given, cannot build a map")
    if origin is None:
        origin = traces[0].origin
    acc: dict[CellIndex, dict[str, LayerStats]] = {}
    for trace in traces:
        xy = trace.local_xy(origin)
        for (x, y), sample in zip(xy, trace.samples):
            ctx = sample.context
            if ctx.is_empty():
                continue
            idx = cell_index(CartesianPoint(float(x), float(y)), cell_side)
            layers = acc.setdefault(idx, {})
            for name in INDICATORS:
                value = getattr(ctx, name)
                if value is None:
                    continue
                stats = layers.get(name)
                layers[name] = (
                    LayerStats.single(value) if stats is None else stats.push(float(value))
                )
    cells = {idx: CellEntry(layers) for idx, layers in acc.items()}
    return ConnectivityMap(cell_side, origin, cells)


def lookup(cmap: ConnectivityMap, p: CartesianPoint) -> CellEntry | None:
    """Entry of the cell containing ``p``, or ``None`` for unvisited cells."""
    return cmap.cells.get(cell_index(p, cmap.cell_side))


def merge(a: ConnectivityMap, b: ConnectivityMap) -> ConnectivityMap:
    if a.cell_side != b.cell_side:
        raise IncompatibleError(f"cell sides differ: {a.cell_side} vs {b.cell_side}")
    if a.origin != b.origin:
        raise IncompatibleError(f"origins differ: {a.origin} vs {b.origin}")
    cells = dict(a.cells)
    for idx, entry in b.cells.items():
        mine = cells.get(idx)
        if mine is None:
            cells[idx] = entry
            continue
        layers = dict(mine.layers)
        for name, stats in entry.layers.items():
            layers[name] = stats if name not in layers else layers[name].combine(stats)
        cells[idx] = CellEntry(layers)
    return ConnectivityMap(a.cell_side, a.origin, cells)


# ---------------------------------------------------------------------------
# persistence


def map_to_dict(cmap: ConnectivityMap) -> dict:
    cells = []
    for idx in sorted(cmap.cells):
        entry = cmap.cells[idx]
        layers = {
            name: {"mean": s.mean, "n": s.n, "m2": s.m2}
            for name, s in sorted(entry.layers.items())
        }
        cells.append({"ix": idx.ix, "iy": idx.iy, "layers": layers})
    return {
        "version": MAP_FORMAT_VERSION,
        "cell_side_m": cmap.cell_side,
        "origin": {"lat": cmap.origin.latitude, "lon": cmap.origin.longitude},
        "cells": cells,
    }


def save_map(cmap: ConnectivityMap) -> bytes:
    return json.dumps(map_to_dict(cmap), sort_keys=True, separators=(",", ":")).encode()


def _require(obj, key, kind, where):
    if not isinstance(obj, dict) or key not in obj:
        raise FormatError(f"{where}: missing key {key!r}")
    value = obj[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, kind) or isinstance(value, bool):
        raise FormatError(f"{where}: key {key!r} has wrong type {type(value).__name__}")
    return value


def map_from_dict(doc) -> ConnectivityMap:
    if not isinstance(doc, dict):
        raise FormatError("map document must be a JSON object")
    version = doc.get("version")
    if version != MAP_FORMAT_VERSION:
        raise FormatError(f"unsupported map version {version!r}")
    side = _require(doc, "cell_side_m", float, "map")
    origin_doc = _require(doc, "origin", dict, "map")
    try:
        origin = GeoPoint(
            _require(origin_doc, "lat", float, "origin"),
            _require(origin_doc, "lon", float, "origin"),
        )
    except ValueError as exc:
        raise FormatError(f"invalid origin: {exc}") from None
    cells = {}
    for k, cell in enumerate(_require(doc, "cells", list, "map")):
        where = f"cells[{k}]"
        idx = CellIndex(_require(cell, "ix", int, where), _require(cell, "iy", int, where))
        layers = {}
        for name, s in _require(cell, "layers", dict, where).items():
            if name not in INDICATORS:
                raise FormatError(f"{where}: unknown layer {name!r}")
            n = _require(s, "n", int, f"{where}.{name}")
            if n < 1:
                raise FormatError(f"{where}.{name}: count must be >= 1")
            layers[name] = LayerStats(
                _require(s, "mean", float, f"{where}.{name}"),
                n,
                _require(s, "m2", float, f"{where}.{name}"),
            )
        if not layers:
            raise FormatError(f"{where}: cell without layers")
        if idx in cells:
            raise FormatError(f"{where}: duplicate cell ({idx.ix}, {idx.iy})")
        cells[idx] = CellEntry(layers)
    if not side > 0:
        raise FormatError(f"cell_side_m must be > 0, got {side}")
    return ConnectivityMap(side, origin, cells)


def load_map(data: bytes | str) -> ConnectivityMap:
    try:
        doc = json.loads(data)
    except (ValueError, UnicodeDecodeError) as exc:
        raise FormatError(f"corrupt map payload: {exc}") from None
    return map_from_dict(doc)
