"""Probabilistic transmission decisions (periodic, CAT and predictive pCAT)."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .errors import ConfigError, DomainError

MODES = ("periodic", "cat", "pcat")


@dataclass(frozen=True)
class MetricDefinition:
    name: str
    phi_min: float
    phi_max: float
    alpha: float = 8.0
    gamma: float = 1.0

    def __post_init__(self):
        if not self.phi_max > self.phi_min:
            raise ConfigError(f"metric {self.name!r}: phi_max must exceed phi_min")
        if not self.alpha > 0:
            raise ConfigError(f"metric {self.name!r}: alpha must be > 0")
        if not self.gamma > 0:
            raise ConfigError(f"metric {self.name!r}: gamma must be > 0")


# Metric bounds, exponents and weighting factors of the reference evaluation.
REFERENCE_METRICS = {
    "rsrp": MetricDefinition("rsrp", -120.0, -70.0, 8.0, 0.3),
    "rsrq": MetricDefinition("rsrq", -11.0, -4.0, 8.0, 2.14),
    "snr": MetricDefinition("snr", 0.0, 30.0, 8.0, 0.5),
    "cqi": MetricDefinition("cqi", 2.0, 16.0, 8.0, 1.07),
    "m5t": MetricDefinition("m5t", 0.0, 18.0, 8.0, 1.0),
}


@dataclass(frozen=True)
class SchemeConfig:
    metric: MetricDefinition
    mode: str = "pcat"
    t_min: float = 10.0
    t_max: float = 120.0
    t_p: float = 1.0
    tau: float = 10.0
    period: float = 10.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}, expected one of {MODES}")
        if not 0 <= self.t_min < self.t_max:
            raise ConfigError("require 0 <= t_min < t_max")
        if not self.t_p > 0:
            raise ConfigError("t_p must be > 0")
        if not self.tau >= 0:
            raise ConfigError("tau must be >= 0")
        if self.mode == "periodic" and not self.period > 0:
            raise ConfigError("period must be > 0 in periodic mode")


@dataclass(frozen=True)
class BufferState:
    buffered_kb: float
    last_tx_time: float
    now: float

    def __post_init__(self):
        if self.buffered_kb < 0:
            raise DomainError("buffered_kb must be >= 0")
        if self.now < self.last_tx_time:
            raise DomainError("now precedes last_tx_time")

    @property
    def dt(self) -> float:
        return self.now - self.last_tx_time


@dataclass(frozen=True)
class Decision:
    transmit: bool
    probability: float
    used_fallback: bool
    theta: float
    delta_phi: float
    z: float


def normalize(phi: float, m: MetricDefinition) -> float:
    """Min-max normalised metric value, saturated to [0, 1]."""
    theta = (phi - m.phi_min) / (m.phi_max - m.phi_min)
    return min(1.0, max(0.0, theta))


def gain(phi_now: float, phi_future: float) -> float:
    return phi_future - phi_now


def exponent_z(delta_phi: float, theta: float, gamma: float) -> float:
    """Exponent > 1 delays (improving channel), < 1 boosts (degrading channel)."""
    if delta_phi > 0:
        return max(abs(delta_phi * (1.0 - theta) * gamma), 1.0)
    return 1.0 / max(abs(delta_phi * theta * gamma), 1.0)


def tx_probability(theta: float, z: float, alpha: float, dt: float, t_min: float, t_max: float) -> float:
    if dt <= t_min:
        return 0.0
    if dt >= t_max:
        return 1.0
    return theta ** (alpha * z)


def derive_gamma(target: MetricDefinition, reference: MetricDefinition) -> float:
    """Weighting factor of ``target`` scaled to the value range of ``reference``."""
    width = target.phi_max - target.phi_min
    ref_width = reference.phi_max - reference.phi_min
    if not width > 0 or not ref_width > 0:
        raise DomainError("metric ranges must have positive width")
    return reference.gamma * ref_width / width


def with_derived_gamma(target: MetricDefinition, reference: MetricDefinition) -> MetricDefinition:
    return replace(target, gamma=derive_gamma(target, reference))


def decide(
    cfg: SchemeConfig,
    buf: BufferState,
    phi_now: float | None,
    phi_future: float | None,
    random_draw: float,
    last_valid_phi: float | None = None,
) -> Decision:
    """One transmission decision; the caller supplies the uniform draw.

    ``phi_future`` is ``None`` whenever the position or context prediction
    failed, which selects the non-predictive fallback. When ``phi_now`` is
    absent the most recent valid value (``last_valid_phi``) is used instead;
    without one only the timeout branch can trigger a transmission.
    """
    dt = buf.dt
    m = cfg.metric
    if cfg.mode == "periodic":
        send = dt >= cfg.period
        theta = normalize(phi_now, m) if phi_now is not None else 0.0
        return Decision(send, 1.0 if send else 0.0, False, theta, 0.0, 1.0)

    fallback = cfg.mode == "pcat" and (phi_future is None or phi_now is None)
    current = phi_now if phi_now is not None else last_valid_phi
    if current is None:
        p = 1.0 if dt >= cfg.t_max else 0.0
        return Decision(random_draw < p, p, cfg.mode == "pcat", 0.0, 0.0, 1.0)
    theta = normalize(current, m)
    if cfg.mode == "cat" or fallback:
        delta, z = 0.0, 1.0
    else:
        delta = gain(current, phi_future)
        z = exponent_z(delta, theta, m.gamma)
    p = tx_probability(theta, z, m.alpha, dt, cfg.t_min, cfg.t_max)
    if not (0.0 <= p <= 1.0) or math.isnan(p):
        raise AssertionError(f"probability {p} out of range")
    return Decision(random_draw < p, p, fallback, theta, delta, z)
