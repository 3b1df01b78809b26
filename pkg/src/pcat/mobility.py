"""Future-position prediction: GPS extrapolation, trajectory walk, reference trace."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import stats

from . import _kernels
from .errors import DataError, DomainError, EmptyResultError
from .geotrace import CartesianPoint, ChannelContext, GeoPoint, Trace

OFF_ROUTE_DISTANCE_M = 200.0
MEAN_TRAJECTORY_POINTS = 512
KMH_10 = 10.0 / 3.6


@dataclass(frozen=True)
class MobilityState:
    position: CartesianPoint
    velocity: float
    heading: float

    def __post_init__(self):
        if not self.velocity >= 0:
            raise DomainError(f"velocity {self.velocity} must be >= 0")
        if not 0.0 <= self.heading < 360.0:
            raise DomainError(f"heading {self.heading} outside [0, 360)")


@dataclass(frozen=True)
class PredictionOutcome:
    position: CartesianPoint | None
    horizon: float
    failure: str | None = None

    def __post_init__(self):
        if (self.position is None) == (self.failure is None):
            raise ValueError("exactly one of position and failure must be set")

    @property
    def ok(self) -> bool:
        return self.position is not None


def heading_unit_vector(heading_deg: float) -> tuple[float, float]:
    """(east, north) unit vector for a compass heading (clockwise from north).

    The extrapolation formula's (cos, sin) pair is applied to the (north, east)
    components; this is the single place owning that convention.
    """
    rad = heading_deg * math.pi / 180.0
    north = math.cos(rad)
    east = math.sin(rad)
    return east, north


def predict_gps(state: MobilityState, tau: float) -> PredictionOutcome:
    """Straight-line extrapolation along the current heading."""
    if tau < 0:
        raise DomainError(f"tau must be >= 0, got {tau}")
    east, north = heading_unit_vector(state.heading)
    dist = tau * state.velocity
    p = state.position
    return PredictionOutcome(CartesianPoint(p.x + east * dist, p.y + north * dist), tau)


# ---------------------------------------------------------------------------
# trajectories


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Polyline of distinct consecutive waypoints with cumulative arc length."""

    waypoints: np.ndarray
    cumulative_dist: np.ndarray
    origin: GeoPoint | None = None

    def __post_init__(self):
        if self.waypoints.ndim != 2 or self.waypoints.shape[1] != 2:
            raise ValueError("waypoints must be an (n, 2) array")
        if len(self.waypoints) < 2:
            raise DataError("a trajectory needs at least 2 distinct waypoints")
        if not np.all(np.diff(self.cumulative_dist) > 0):
            raise DataError("cumulative distance must be strictly increasing")

    @classmethod
    def from_points(cls, points, origin: GeoPoint | None = None) -> "Trajectory":
        """Build from an (n, 2) array, collapsing repeated consecutive points."""
        traj, _ = _polyline(np.asarray(points, dtype=float), origin)
        return traj

    @property
    def length(self) -> float:
        return float(self.cumulative_dist[-1])

    def __len__(self):
        return len(self.waypoints)

    def __eq__(self, other):
        return (
            isinstance(other, Trajectory)
            and np.array_equal(self.waypoints, other.waypoints)
            and self.origin == other.origin
        )

    __hash__ = None


def _polyline(points: np.ndarray, origin) -> tuple[Trajectory, np.ndarray]:
    """Trajectory plus the index of the source point behind each waypoint."""
    keep = [0]
    for i in range(1, len(points)):
        if points[i, 0] != points[keep[-1], 0] or points[i, 1] != points[keep[-1], 1]:
            keep.append(i)
    keep = np.asarray(keep)
    wp = np.ascontiguousarray(points[keep])
    seg = np.hypot(np.diff(wp[:, 0]), np.diff(wp[:, 1]))
    cum = np.concatenate(([0.0], np.cumsum(seg)))
    wp.setflags(write=False)
    cum.setflags(write=False)
    return Trajectory(wp, cum, origin), keep


def _arc_resample(xy: np.ndarray, n_points: int) -> np.ndarray:
    seg = np.hypot(np.diff(xy[:, 0]), np.diff(xy[:, 1]))
    cum = np.concatenate(([0.0], np.cumsum(seg)))
    if cum[-1] <= 0.0:
        raise DataError("trace has zero path length")
    # Drop zero-length steps so np.interp sees a strictly increasing abscissa.
    keep = np.concatenate(([True], seg > 0))
    cum, xy = cum[keep], xy[keep]
    s = np.linspace(0.0, 1.0, n_points) * cum[-1]
    return np.column_stack((np.interp(s, cum, xy[:, 0]), np.interp(s, cum, xy[:, 1])))


def mean_trajectory(
    traces: Iterable[Trace],
    n_points: int = MEAN_TRAJECTORY_POINTS,
    origin: GeoPoint | None = None,
) -> Trajectory:
    """Arc-length resample every trace to ``n_points`` and average pointwise."""
    traces = list(traces)
    if not traces:
        raise EmptyResultError("no traces given")
    if n_points < 2:
        raise ValueError("n_points must be >= 2")
    if origin is None:
        origin = traces[0].origin
    total = np.zeros((n_points, 2))
    for trace in traces:
        total += _arc_resample(np.asarray(trace.local_xy(origin)), n_points)
    mean = total / len(traces)
    try:
        return Trajectory.from_points(mean, origin)
    except DataError:
        raise DataError("mean trajectory collapsed to a single point") from None


def _project(traj: Trajectory, p: CartesianPoint):
    seg, t, dist, qx, qy = _kernels.nearest_segment(traj.waypoints, p.x, p.y)
    return int(seg), float(t), float(dist), qx, qy


def _walk(traj: Trajectory, seg: int, t: float, qx: float, qy: float, distance: float):
    """Advance ``distance`` metres along ``traj`` from a point on segment ``seg``.

    Returns ``(x, y, arc_length)``; stops at the last waypoint.
    """
    wp, cum = traj.waypoints, traj.cumulative_dist
    seg_len = cum[seg + 1] - cum[seg]
    ahead = seg_len * (1.0 - t)
    if distance <= ahead:
        ux = (wp[seg + 1, 0] - wp[seg, 0]) / seg_len
        uy = (wp[seg + 1, 1] - wp[seg, 1]) / seg_len
        return qx + ux * distance, qy + uy * distance, cum[seg] + seg_len * t + distance
    last = len(wp) - 1
    # Travelled distance at waypoint i is ahead + cum[i] - cum[seg + 1]; the walk
    # ends on the first segment where it reaches the distance potential.
    target = cum[seg + 1] + (distance - ahead)
    if target >= cum[last]:
        return float(wp[last, 0]), float(wp[last, 1]), float(cum[last])
    i = min(max(seg + 1, int(np.searchsorted(cum, target, side="right")) - 1), last - 1)
    d_ij = cum[i + 1] - cum[i]
    offset = min(target - cum[i], d_ij)
    ux = (wp[i + 1, 0] - wp[i, 0]) / d_ij
    uy = (wp[i + 1, 1] - wp[i, 1]) / d_ij
    return wp[i, 0] + ux * offset, wp[i, 1] + uy * offset, cum[i] + offset


def predict_on_trajectory(
    state: MobilityState,
    traj: Trajectory,
    tau: float,
    off_route_m: float = OFF_ROUTE_DISTANCE_M,
) -> PredictionOutcome:
    """Walk ``velocity * tau`` metres along ``traj`` from the projected position."""
    outcome, _ = _trajectory_prediction(state, traj, tau, off_route_m)
    return outcome


def _trajectory_prediction(state, traj, tau, off_route_m):
    if tau < 0:
        raise DomainError(f"tau must be >= 0, got {tau}")
    seg, t, dist, qx, qy = _project(traj, state.position)
    if dist > off_route_m:
        return (
            PredictionOutcome(None, tau, f"off route: {dist:.1f} m from trajectory"),
            None,
        )
    x, y, arc = _walk(traj, seg, t, qx, qy, state.velocity * tau)
    return PredictionOutcome(CartesianPoint(float(x), float(y)), tau), float(arc)


@dataclass(frozen=True, eq=False)
class ReferenceTrack:
    """A single reference trace prepared for repeated prediction."""

    trace: Trace
    trajectory: Trajectory
    sample_arc: np.ndarray

    @classmethod
    def from_trace(cls, trace: Trace, origin: GeoPoint | None = None) -> "ReferenceTrack":
        origin = trace.origin if origin is None else origin
        xy = np.asarray(trace.local_xy(origin))
        traj, keep = _polyline(xy, origin)
        # Every sample takes the arc length of the waypoint it collapsed into.
        owner = np.searchsorted(keep, np.arange(len(xy)), side="right") - 1
        return cls(trace, traj, traj.cumulative_dist[owner])

    def nearest_sample(self, arc: float) -> int:
        arcs = self.sample_arc
        j = int(np.searchsorted(arcs, arc, side="left"))
        if j >= len(arcs):
            return len(arcs) - 1
        if j == 0:
            return 0
        # Lower sample on equal distance; first sample among duplicates.
        lower = int(np.searchsorted(arcs, arcs[j - 1], side="left"))
        return lower if arc - arcs[j - 1] <= arcs[j] - arc else j


def predict_on_reference(
    state: MobilityState,
    ref: Trace | ReferenceTrack,
    tau: float,
    off_route_m: float = OFF_ROUTE_DISTANCE_M,
    origin: GeoPoint | None = None,
) -> tuple[PredictionOutcome, ChannelContext | None]:
    """Predict along a reference trace and return that trace's nearby context."""
    track = ref if isinstance(ref, ReferenceTrack) else ReferenceTrack.from_trace(ref, origin)
    outcome, arc = _trajectory_prediction(state, track.trajectory, tau, off_route_m)
    if not outcome.ok:
        return outcome, None
    return outcome, track.trace.samples[track.nearest_sample(arc)].context


# ---------------------------------------------------------------------------
# error evaluation

Predictor = Callable[[MobilityState, float], PredictionOutcome]


@dataclass(frozen=True)
class ErrorBin:
    speed_bin_low_mps: float
    mean_error_m: float
    ci95_halfwidth_m: float
    n: int
    failure_ratio: float


def mean_ci95(values: Sequence[float]) -> tuple[float, float]:
    """Mean and Student-t 0.95 confidence half-width (0 for a single value)."""
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        return math.nan, math.nan
    mean = float(arr.mean())
    if arr.size < 2:
        return mean, 0.0
    sem = float(arr.std(ddof=1)) / math.sqrt(arr.size)
    return mean, float(stats.t.ppf(0.975, arr.size - 1)) * sem


def state_at(trace: Trace, i: int, origin: GeoPoint | None = None) -> MobilityState:
    xy = trace.local_xy(origin)
    s = trace.samples[i]
    return MobilityState(CartesianPoint(float(xy[i, 0]), float(xy[i, 1])), s.velocity, s.heading)


def _truth(trace_xy: np.ndarray, times: np.ndarray, t: float) -> CartesianPoint:
    j = int(np.searchsorted(times, t, side="left"))
    if j < len(times) and times[j] == t:
        return CartesianPoint(float(trace_xy[j, 0]), float(trace_xy[j, 1]))
    w = (t - times[j - 1]) / (times[j] - times[j - 1])
    a, b = trace_xy[j - 1], trace_xy[j]
    return CartesianPoint(float(a[0] + w * (b[0] - a[0])), float(a[1] + w * (b[1] - a[1])))


def evaluate_prediction_error(
    predictor: Predictor,
    traces: Iterable[Trace],
    tau: float,
    speed_bin_width: float = KMH_10,
    origin: GeoPoint | None = None,
) -> list[ErrorBin]:
    """Position error of ``predictor`` per velocity bin.

    Ground truth at ``t + tau`` is the trace position at that time (linear
    interpolation between samples when it falls between two of them).
    """
    if not speed_bin_width > 0:
        raise ValueError("speed_bin_width must be > 0")
    errors: dict[int, list[float]] = {}
    attempts: dict[int, int] = {}
    failures: dict[int, int] = {}
    for trace in traces:
        frame = trace.origin if origin is None else origin
        xy = np.asarray(trace.local_xy(frame))
        times = trace.timestamps
        t_last = times[-1]
        for i, sample in enumerate(trace.samples):
            t_target = sample.timestamp + tau
            if t_target > t_last:
                break
            b = int(math.floor(sample.velocity / speed_bin_width))
            attempts[b] = attempts.get(b, 0) + 1
            outcome = predictor(state_at(trace, i, frame), tau)
            if not outcome.ok:
                failures[b] = failures.get(b, 0) + 1
                continue
            truth = _truth(xy, times, t_target)
            errors.setdefault(b, []).append(outcome.position.distance_to(truth))
    if not attempts:
        raise EmptyResultError(f"no sample has ground truth {tau} s ahead")
    table = []
    for b in sorted(attempts):
        mean, half = mean_ci95(errors.get(b, []))
        table.append(
            ErrorBin(
                speed_bin_low_mps=b * speed_bin_width,
                mean_error_m=mean,
                ci95_halfwidth_m=half,
                n=len(errors.get(b, [])),
                failure_ratio=failures.get(b, 0) / attempts[b],
            )
        )
    return table


ERROR_CSV_COLUMNS = ("speed_bin_low_mps", "mean_error_m", "ci95_halfwidth_m", "n", "failure_ratio")


def error_table_to_csv(table: Sequence[ErrorBin]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(ERROR_CSV_COLUMNS)
    for row in table:
        writer.writerow([getattr(row, c) for c in ERROR_CSV_COLUMNS])
    return buf.getvalue()
