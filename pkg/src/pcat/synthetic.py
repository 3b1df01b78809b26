"""Synthetic traces for tests, benchmarks and desk-scale scheme comparisons."""
from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .geotrace import CartesianPoint, ChannelContext, ContextSample, GeoPoint, Trace, to_geo

DEFAULT_ORIGIN = GeoPoint(51.4926, 7.4130)


def trace_from_local(
    trip_id: str,
    times: Sequence[float],
    xy: np.ndarray,
    velocity: Sequence[float],
    heading: Sequence[float],
    contexts: Sequence[ChannelContext] | None = None,
    origin: GeoPoint = DEFAULT_ORIGIN,
    measured_rates: Sequence[float | None] | None = None,
) -> Trace:
    samples = []
    for k, t in enumerate(times):
        samples.append(
            ContextSample(
                timestamp=float(t),
                position=to_geo(CartesianPoint(float(xy[k][0]), float(xy[k][1])), origin),
                velocity=float(velocity[k]),
                heading=float(heading[k]) % 360.0,
                context=contexts[k] if contexts is not None else ChannelContext(),
                measured_rate=None if measured_rates is None else measured_rates[k],
            )
        )
    return Trace(trip_id, tuple(samples), origin)


def straight_trace(
    trip_id: str = "straight",
    speed: float = 15.0,
    heading: float = 90.0,
    duration: float = 120.0,
    hz: float = 1.0,
    start: tuple[float, float] = (0.0, 0.0),
    origin: GeoPoint = DEFAULT_ORIGIN,
) -> Trace:
    times = np.arange(int(round(duration * hz)) + 1) / hz
    rad = math.radians(heading)
    xy = np.column_stack(
        (start[0] + math.sin(rad) * speed * times, start[1] + math.cos(rad) * speed * times)
    )
    n = len(times)
    return trace_from_local(trip_id, times, xy, [speed] * n, [heading] * n, origin=origin)


def circular_trace(
    radius: float,
    speed: float,
    duration: float,
    hz: float = 1.0,
    trip_id: str = "circle",
    origin: GeoPoint = DEFAULT_ORIGIN,
) -> Trace:
    """Counter-clockwise drive on a circle centred at the origin."""
    times = np.arange(int(round(duration * hz)) + 1) / hz
    ang = speed * times / radius
    xy = np.column_stack((radius * np.cos(ang), radius * np.sin(ang)))
    # Direction of travel (-sin, cos) expressed as a compass heading.
    heading = [(math.degrees(math.atan2(-math.sin(a), math.cos(a)))) % 360.0 for a in ang]
    n = len(times)
    return trace_from_local(trip_id, times, xy, [speed] * n, heading, origin=origin)


def snr_context(snr: float) -> ChannelContext:
    """Indicators consistent with an SNR value in [0, 30] dB."""
    snr = min(30.0, max(0.0, snr))
    return ChannelContext(
        rsrp=-120.0 + 50.0 * snr / 30.0,
        rsrq=-11.0 + 7.0 * snr / 30.0,
        snr=snr,
        cqi=int(round(2 + 13 * snr / 30.0)),
    )


def sinusoid_route_trace(
    trip_id: str,
    duration: float = 1800.0,
    speed: float = 15.0,
    period_s: float = 120.0,
    hz: float = 1.0,
    noise_db: float = 0.0,
    seed: int = 0,
    origin: GeoPoint = DEFAULT_ORIGIN,
    profile: Callable[[float], float] | None = None,
) -> Trace:
    """Eastbound straight route whose SNR is a spatial sinusoid.

    The SNR seen at constant ``speed`` oscillates in [0, 30] dB with temporal
    period ``period_s``; ``noise_db`` adds seeded Gaussian noise.
    """
    rng = np.random.default_rng(seed)
    times = np.arange(int(round(duration * hz)) + 1) / hz
    x = speed * times
    wavelength = speed * period_s
    if profile is None:
        def profile(pos):
            return 15.0 + 15.0 * math.sin(2.0 * math.pi * pos / wavelength)
    contexts = []
    for pos in x:
        snr = profile(float(pos)) + (rng.normal(0.0, noise_db) if noise_db > 0 else 0.0)
        contexts.append(snr_context(snr))
    xy = np.column_stack((x, np.zeros_like(x)))
    n = len(times)
    return trace_from_local(trip_id, times, xy, [speed] * n, [90.0] * n, contexts, origin)
