"""Uplink energy estimation with a two-segment device power characteristic."""
from __future__ import annotations

import bisect
from dataclasses import dataclass

from .errors import ConfigError, DomainError, EstimationError
from .geotrace import ChannelContext

CONTINUITY_TOL_W = 1e-6


@dataclass(frozen=True)
class DeviceCharacteristic:
    """Device power (W) as a piecewise-linear function of TX power (dBm)."""

    knee_dbm: float
    low_slope: float
    low_intercept: float
    high_slope: float
    high_intercept: float
    p_max_dbm: float
    state_edges: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "state_edges", tuple(float(e) for e in self.state_edges))
        low = self.low_intercept + self.low_slope * self.knee_dbm
        high = self.high_intercept + self.high_slope * self.knee_dbm
        if abs(low - high) > CONTINUITY_TOL_W:
            raise ConfigError(f"characteristic discontinuous at knee: {low} W vs {high} W")
        if self.low_slope < 0 or self.high_slope < 0:
            raise ConfigError("segment slopes must be non-negative")
        if any(b <= a for a, b in zip(self.state_edges, self.state_edges[1:])):
            raise ConfigError("state_edges must be strictly ascending")

    @property
    def n_states(self) -> int:
        return len(self.state_edges) + 1

    @classmethod
    def from_dict(cls, doc: dict) -> "DeviceCharacteristic":
        try:
            return cls(
                knee_dbm=float(doc["knee_dbm"]),
                low_slope=float(doc["low"]["slope_w_per_db"]),
                low_intercept=float(doc["low"]["intercept_w"]),
                high_slope=float(doc["high"]["slope_w_per_db"]),
                high_intercept=float(doc["high"]["intercept_w"]),
                p_max_dbm=float(doc["p_max_dbm"]),
                state_edges=tuple(doc.get("state_edges_dbm", ())),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid device characteristic: {exc!r}") from None

    def to_dict(self) -> dict:
        return {
            "knee_dbm": self.knee_dbm,
            "low": {"slope_w_per_db": self.low_slope, "intercept_w": self.low_intercept},
            "high": {"slope_w_per_db": self.high_slope, "intercept_w": self.high_intercept},
            "p_max_dbm": self.p_max_dbm,
            "state_edges_dbm": list(self.state_edges),
        }


# Illustrative device; real characteristics come from lab measurements.
EXAMPLE_DEVICE = DeviceCharacteristic(
    knee_dbm=10.0,
    low_slope=0.005,
    low_intercept=1.0,
    high_slope=0.05,
    high_intercept=0.55,
    p_max_dbm=23.0,
    state_edges=(-20.0, 0.0, 10.0, 18.0),
)


@dataclass(frozen=True)
class TxPowerParams:
    p0_dbm: float = -60.0
    alpha_pl: float = 0.8
    rsrp_ref_dbm: float = -50.0
    p_max_dbm: float = 23.0


@dataclass(frozen=True)
class PowerEstimate:
    tx_power_dbm: float
    state: int
    device_power_w: float
    energy_j: float
    duration_s: float


def estimate_tx_power(ctx: ChannelContext, params: TxPowerParams = TxPowerParams()) -> float:
    """Open-loop uplink power from the downlink pathloss implied by RSRP."""
    if ctx.rsrp is None:
        raise EstimationError("rsrp absent, cannot estimate TX power")
    pathloss = params.rsrp_ref_dbm - ctx.rsrp
    return min(params.p_max_dbm, params.p0_dbm + params.alpha_pl * pathloss)


def device_power(tx_dbm: float, dev: DeviceCharacteristic) -> float:
    if tx_dbm > dev.p_max_dbm:
        raise DomainError(f"tx power {tx_dbm} dBm exceeds p_max {dev.p_max_dbm} dBm")
    if tx_dbm < dev.knee_dbm:
        return dev.low_intercept + dev.low_slope * tx_dbm
    return dev.high_intercept + dev.high_slope * tx_dbm


def power_state(tx_dbm: float, dev: DeviceCharacteristic) -> int:
    """Index of the left-closed state interval containing ``tx_dbm``."""
    return bisect.bisect_right(dev.state_edges, tx_dbm)


def transmission_duration(payload_kb: float, rate_mbps: float) -> float:
    return (payload_kb * 8.0 / 1000.0) / rate_mbps


def transmission_energy(
    payload_kb: float,
    achieved_rate_mbps: float,
    ctx: ChannelContext,
    dev: DeviceCharacteristic = EXAMPLE_DEVICE,
    params: TxPowerParams = TxPowerParams(),
) -> PowerEstimate:
    if not achieved_rate_mbps > 0:
        raise DomainError(f"achieved rate must be > 0, got {achieved_rate_mbps}")
    duration = transmission_duration(payload_kb, achieved_rate_mbps)
    tx = min(estimate_tx_power(ctx, params), dev.p_max_dbm)
    watts = device_power(tx, dev)
    return PowerEstimate(tx, power_state(tx, dev), watts, watts * duration, duration)
