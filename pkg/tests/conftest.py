import math
import sys

import numpy as np
import pytest

from pcat import synthetic
from pcat.geotrace import GeoPoint

ORIGIN = GeoPoint(51.0, 7.0)

HEADER = "timestamp_s,lat,lon,velocity_mps,heading_deg,rsrp_dbm,rsrq_db,snr_db,cqi,datarate_mbps"


def csv_text(*rows, header=HEADER, newline="\n"):
    return newline.join([header, *rows]) + newline


def haversine_m(lat1, lon1, lat2, lon2, radius=6_371_000.0):
    p1, p2 = math.radians(lat1), math.radians(lat2)
    a = math.sin((p2 - p1) / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(math.radians(lon2 - lon1) / 2) ** 2
    return 2 * radius * math.asin(math.sqrt(a))


@pytest.fixture
def straight():
    return synthetic.straight_trace(speed=15.0, heading=90.0, duration=120.0, origin=ORIGIN)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def stepwise_walk(waypoints, start, distance, step=0.1):
    """Independent oracle: project with shapely, then advance in fixed steps.

    Returns the point reached after the largest whole number of steps not
    exceeding ``distance``, clamped at the polyline end, and the start arc.
    """
    import shapely

    line = shapely.LineString(waypoints)
    s0 = float(line.project(shapely.Point(start)))
    n_steps = int(math.floor(distance / step + 1e-9))
    arc = min(s0 + n_steps * step, line.length)
    p = line.interpolate(arc)
    return (p.x, p.y), s0


def point_to_polyline(waypoints, p):
    import shapely

    return float(shapely.LineString(waypoints).distance(shapely.Point(p)))


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(module.format_line(n, *results[n]))
