"""Trace replay under a transmission scheme, KPIs and scheme comparison."""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from statistics import NormalDist
from typing import Callable, Mapping, Sequence

import numpy as np

from .connmap import ConnectivityMap, lookup
from .errors import ConfigError, DataError, EmptyResultError, EstimationError, PredictionError
from .geotrace import INDICATORS, CartesianPoint, ChannelContext, GeoPoint, Trace
from .mobility import (
    MobilityState,
    ReferenceTrack,
    Trajectory,
    mean_ci95,
    predict_gps,
    predict_on_reference,
    predict_on_trajectory,
)
from .power import (
    EXAMPLE_DEVICE,
    DeviceCharacteristic,
    PowerEstimate,
    TxPowerParams,
    transmission_duration,
    transmission_energy,
)
from .ratemodel import FeatureVector, RateModel, predict
from .txscheme import BufferState, Decision, SchemeConfig, decide, normalize

PREDICTORS = ("gps", "trajectory", "reference")
ORACLE_MODES = ("model", "table", "synthetic")
RATE_METRICS = ("m5t", "datarate", "rate")
_EPS = 1e-9


@dataclass(frozen=True)
class SensorConfig:
    f_sensor: float = 1.0
    s_sensor_kb: float = 50.0

    def __post_init__(self):
        if not self.f_sensor > 0 or not self.s_sensor_kb > 0:
            raise ConfigError("f_sensor and s_sensor_kb must be > 0")


@dataclass(frozen=True)
class OracleConfig:
    """How the achieved rate of a transmission is synthesised.

    ``synthetic`` takes either a callable ``rate_fn(ctx, payload_kb)`` or the
    serialisable linear form ``{"indicator", "slope", "intercept"}``.
    """

    mode: str = "model"
    sigma_ln: float = 0.25
    table_window_s: float = 10.0
    min_rate_mbps: float = 0.1
    synthetic: Mapping | None = None
    rate_fn: Callable[[ChannelContext, float], float] | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.mode not in ORACLE_MODES:
            raise ConfigError(f"unknown oracle mode {self.mode!r}, expected one of {ORACLE_MODES}")
        if self.sigma_ln < 0 or not self.min_rate_mbps > 0:
            raise ConfigError("sigma_ln must be >= 0 and min_rate_mbps > 0")
        if self.mode == "synthetic" and self.rate_fn is None:
            spec = self.synthetic or {}
            if spec.get("indicator") not in INDICATORS:
                raise ConfigError("synthetic oracle needs rate_fn or an indicator-linear form")

    def to_dict(self) -> dict:
        doc = {
            "mode": self.mode,
            "sigma_ln": self.sigma_ln,
            "table_window_s": self.table_window_s,
            "min_rate_mbps": self.min_rate_mbps,
        }
        if self.synthetic is not None:
            doc["synthetic"] = dict(self.synthetic)
        elif self.rate_fn is not None:
            doc["synthetic"] = getattr(self.rate_fn, "__name__", "callable")
        return doc


def _synthetic_rate(cfg: OracleConfig, ctx: ChannelContext, payload_kb: float) -> float:
    if cfg.rate_fn is not None:
        return float(cfg.rate_fn(ctx, payload_kb))
    spec = cfg.synthetic
    value = ctx.get(spec["indicator"])
    if value is None:
        raise DataError(f"synthetic oracle: indicator {spec['indicator']!r} absent")
    return float(spec.get("intercept", 0.0)) + float(spec.get("slope", 1.0)) * value


def channel_oracle(
    cfg: OracleConfig,
    ctx: ChannelContext,
    payload_kb: float,
    rng_draw: float,
    *,
    rate_model: RateModel | None = None,
    velocity: float = 0.0,
    trace: Trace | None = None,
    time: float | None = None,
) -> float:
    """Achieved data rate (Mbit/s) of a transmission; deterministic in ``rng_draw``.

    Rates below ``min_rate_mbps`` are raised to it so durations stay finite.
    """
    if cfg.mode == "model":
        if rate_model is None:
            raise ConfigError("model oracle needs a rate model")
        try:
            rate = predict(rate_model, FeatureVector.from_context(ctx, payload_kb, velocity))
        except PredictionError as exc:
            raise DataError(f"model oracle: {exc}") from None
        if cfg.sigma_ln > 0:
            u = min(max(rng_draw, 1e-12), 1.0 - 1e-12)
            rate *= math.exp(cfg.sigma_ln * NormalDist().inv_cdf(u))
    elif cfg.mode == "table":
        if trace is None or time is None:
            raise ConfigError("table oracle needs the replayed trace and time")
        rate = _nearest_measured(trace, time, cfg.table_window_s)
    else:
        rate = _synthetic_rate(cfg, ctx, payload_kb)
    if not math.isfinite(rate):
        raise DataError(f"oracle produced non-finite rate {rate}")
    return max(rate, cfg.min_rate_mbps)


def _nearest_measured(trace: Trace, t: float, window: float) -> float:
    best, best_gap = None, math.inf
    for s in trace.samples:
        if s.measured_rate is None:
            continue
        gap = abs(s.timestamp - t)
        if gap < best_gap:
            best, best_gap = s.measured_rate, gap
    if best is None or best_gap > window:
        raise DataError(f"table oracle: no measured rate within {window} s of t={t}")
    return best


# ---------------------------------------------------------------------------
# scenario and results


@dataclass(frozen=True)
class Scenario:
    traces: tuple[Trace, ...]
    scheme: SchemeConfig
    map: ConnectivityMap | None = None
    trajectory: Trajectory | None = None
    reference: Trace | None = None
    rate_model: RateModel | None = None
    predictor: str = "trajectory"
    sensor: SensorConfig = SensorConfig()
    device: DeviceCharacteristic = EXAMPLE_DEVICE
    tx_power: TxPowerParams = TxPowerParams()
    oracle: OracleConfig = OracleConfig()
    seed: int = 0
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "traces", tuple(self.traces))

    @property
    def origin(self) -> GeoPoint:
        if self.map is not None:
            return self.map.origin
        if self.trajectory is not None and self.trajectory.origin is not None:
            return self.trajectory.origin
        return self.traces[0].origin

    def validate(self) -> None:
        if not self.traces:
            raise ConfigError("scenario has no traces")
        if self.predictor not in PREDICTORS:
            raise ConfigError(f"unknown predictor {self.predictor!r}, expected one of {PREDICTORS}")
        metric = self.scheme.metric.name
        if metric not in INDICATORS and metric not in RATE_METRICS:
            raise ConfigError(f"metric {metric!r} is neither an indicator nor the rate metric")
        if metric in RATE_METRICS and self.rate_model is None:
            raise ConfigError(f"metric {metric!r} needs a rate model")
        if self.oracle.mode == "model" and self.rate_model is None:
            raise ConfigError("model oracle needs a rate model")
        if self.scheme.mode == "pcat":
            if self.predictor == "reference":
                if self.reference is None:
                    raise ConfigError("reference predictor needs a reference trace")
            elif self.map is None:
                raise ConfigError("pcat mode needs a connectivity map")
            if self.predictor == "trajectory" and self.trajectory is None:
                raise ConfigError("trajectory predictor needs a trajectory")

    def describe(self) -> dict:
        s = self.scheme
        return {
            "name": self.name,
            "seed": self.seed,
            "traces": [t.trip_id for t in self.traces],
            "predictor": self.predictor,
            "scheme": {
                "mode": s.mode,
                "t_min": s.t_min,
                "t_max": s.t_max,
                "t_p": s.t_p,
                "tau": s.tau,
                "period": s.period,
                "metric": {
                    "name": s.metric.name,
                    "phi_min": s.metric.phi_min,
                    "phi_max": s.metric.phi_max,
                    "alpha": s.metric.alpha,
                    "gamma": s.metric.gamma,
                },
            },
            "sensor": {"f_sensor_hz": self.sensor.f_sensor, "s_sensor_kb": self.sensor.s_sensor_kb},
            "device": self.device.to_dict(),
            "tx_power": {
                "p0_dbm": self.tx_power.p0_dbm,
                "alpha_pl": self.tx_power.alpha_pl,
                "rsrp_ref_dbm": self.tx_power.rsrp_ref_dbm,
                "p_max_dbm": self.tx_power.p_max_dbm,
            },
            "oracle": self.oracle.to_dict(),
            "map_cells": None if self.map is None else len(self.map),
            "rate_model": None if self.rate_model is None else self.rate_model.kind,
        }


@dataclass(frozen=True)
class TransmissionRecord:
    trip_id: str
    start_time: float
    payload_kb: float
    n_samples: int
    achieved_rate_mbps: float
    duration_s: float
    energy: PowerEstimate | None
    oldest_sample_time: float
    mean_aoi_s: float
    decision: Decision
    flushed: bool = False

    @property
    def end_time(self) -> float:
        return self.start_time + self.duration_s


@dataclass(frozen=True)
class RunResult:
    records: tuple[TransmissionRecord, ...]
    aoi: tuple[float, ...]
    config: Mapping
    seed: int
    decisions: int
    fallbacks: int
    generated_kb: float

    @property
    def transmitted_kb(self) -> float:
        return sum(r.payload_kb for r in self.records)


# ---------------------------------------------------------------------------
# replay


class _MetricSource:
    def __init__(self, scenario: Scenario):
        self.name = scenario.scheme.metric.name
        self.model = scenario.rate_model
        self.from_model = self.name in RATE_METRICS

    def value(self, ctx: ChannelContext, payload_kb: float, velocity: float) -> float | None:
        if not self.from_model:
            v = ctx.get(self.name)
            return None if v is None else float(v)
        try:
            return predict(self.model, FeatureVector.from_context(ctx, payload_kb, velocity))
        except PredictionError:
            return None

    def value_from_entry(self, entry, payload_kb: float, velocity: float) -> float | None:
        if not self.from_model:
            return entry.mean(self.name)
        fv = FeatureVector(
            entry.mean("rsrp"), entry.mean("rsrq"), entry.mean("snr"), entry.mean("cqi"),
            payload_kb, velocity,
        )
        try:
            return predict(self.model, fv)
        except PredictionError:
            return None


def _future_phi(scenario, track, metric, state, payload_kb):
    tau = scenario.scheme.tau
    if scenario.predictor == "reference":
        outcome, ctx = predict_on_reference(state, track, tau)
        if not outcome.ok:
            return None
        return metric.value(ctx, payload_kb, state.velocity)
    if scenario.predictor == "gps":
        outcome = predict_gps(state, tau)
    else:
        outcome = predict_on_trajectory(state, scenario.trajectory, tau)
    if not outcome.ok:
        return None
    entry = lookup(scenario.map, outcome.position)
    if entry is None:
        return None
    return metric.value_from_entry(entry, payload_kb, state.velocity)


def _energy(scenario, payload_kb, rate, ctx):
    try:
        return transmission_energy(payload_kb, rate, ctx, scenario.device, scenario.tx_power)
    except EstimationError:
        return None


def _replay(scenario: Scenario, trace: Trace, rng, metric, track, out: dict) -> None:
    cfg = scenario.scheme
    origin = scenario.origin
    xy = trace.local_xy(origin)
    times = [s.timestamp for s in trace.samples]
    t0, t_end = times[0], times[-1]
    gen_period = 1.0 / scenario.sensor.f_sensor
    s_kb = scenario.sensor.s_sensor_kb
    steps = int(math.floor((t_end - t0) / cfg.t_p + _EPS))

    pending: list[float] = []
    j = 1
    i = 0
    last_tx = t0
    busy_until = t0
    last_valid = None
    records = out["records"]
    aoi = out["aoi"]

    def transmit(start, ctx, velocity, decision, flushed):
        payload = len(pending) * s_kb
        rate = channel_oracle(
            scenario.oracle, ctx, payload, float(rng.random()),
            rate_model=scenario.rate_model, velocity=velocity, trace=trace, time=start,
        )
        duration = transmission_duration(payload, rate)
        end = start + duration
        ages = [end - g for g in pending]
        aoi.extend(ages)
        records.append(
            TransmissionRecord(
                trip_id=trace.trip_id,
                start_time=start,
                payload_kb=payload,
                n_samples=len(pending),
                achieved_rate_mbps=rate,
                duration_s=duration,
                energy=_energy(scenario, payload, rate, ctx),
                oldest_sample_time=pending[0],
                mean_aoi_s=sum(ages) / len(ages),
                decision=decision,
                flushed=flushed,
            )
        )
        pending.clear()
        return end

    for k in range(1, steps + 1):
        t = t0 + k * cfg.t_p
        while t0 + j * gen_period <= t + _EPS:
            pending.append(t0 + j * gen_period)
            out["generated_kb"] += s_kb
            j += 1
        while i + 1 < len(times) and times[i + 1] <= t + _EPS:
            i += 1
        if t < busy_until or not pending:
            continue
        sample = trace.samples[i]
        payload = len(pending) * s_kb
        phi_now = metric.value(sample.context, payload, sample.velocity)
        if phi_now is not None:
            last_valid = phi_now
        phi_future = None
        if cfg.mode == "pcat":
            state = MobilityState(
                CartesianPoint(float(xy[i, 0]), float(xy[i, 1])), sample.velocity, sample.heading
            )
            phi_future = _future_phi(scenario, track, metric, state, payload)
        buf = BufferState(payload, last_tx, t)
        decision = decide(cfg, buf, phi_now, phi_future, float(rng.random()), last_valid)
        out["decisions"] += 1
        out["fallbacks"] += int(decision.used_fallback)
        if decision.transmit:
            busy_until = transmit(t, sample.context, sample.velocity, decision, False)
            last_tx = t

    while t0 + j * gen_period <= t_end + _EPS:
        pending.append(t0 + j * gen_period)
        out["generated_kb"] += s_kb
        j += 1
    if pending:
        sample = trace.samples[-1]
        start = max(t0 + steps * cfg.t_p, busy_until)
        phi = metric.value(sample.context, len(pending) * s_kb, sample.velocity)
        theta = normalize(phi, cfg.metric) if phi is not None else 0.0
        transmit(start, sample.context, sample.velocity, Decision(True, 1.0, False, theta, 0.0, 1.0), True)


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator; draws are taken decision first, then oracle."""
    return np.random.Generator(np.random.Philox(int(seed) % (1 << 64)))


def run_simulation(scenario: Scenario) -> RunResult:
    scenario.validate()
    rng = make_rng(scenario.seed)
    metric = _MetricSource(scenario)
    track = None
    if scenario.scheme.mode == "pcat" and scenario.predictor == "reference":
        track = ReferenceTrack.from_trace(scenario.reference, scenario.origin)
    out = {"records": [], "aoi": [], "decisions": 0, "fallbacks": 0, "generated_kb": 0.0}
    for trace in scenario.traces:
        _replay(scenario, trace, rng, metric, track, out)
    return RunResult(
        records=tuple(out["records"]),
        aoi=tuple(out["aoi"]),
        config=scenario.describe(),
        seed=scenario.seed,
        decisions=out["decisions"],
        fallbacks=out["fallbacks"],
        generated_kb=out["generated_kb"],
    )


# ---------------------------------------------------------------------------
# serialisation of results

RECORD_CSV_COLUMNS = (
    "start_s", "payload_kb", "rate_mbps", "duration_s", "energy_j", "mean_aoi_s",
    "p", "theta", "delta_phi", "z", "fallback",
)


def _record_dict(r: TransmissionRecord) -> dict:
    e = r.energy
    return {
        "trip_id": r.trip_id,
        "start_s": r.start_time,
        "payload_kb": r.payload_kb,
        "n_samples": r.n_samples,
        "rate_mbps": r.achieved_rate_mbps,
        "duration_s": r.duration_s,
        "energy": None if e is None else {
            "tx_power_dbm": e.tx_power_dbm,
            "state": e.state,
            "device_power_w": e.device_power_w,
            "energy_j": e.energy_j,
        },
        "oldest_sample_s": r.oldest_sample_time,
        "mean_aoi_s": r.mean_aoi_s,
        "decision": {
            "p": r.decision.probability,
            "theta": r.decision.theta,
            "delta_phi": r.decision.delta_phi,
            "z": r.decision.z,
            "fallback": r.decision.used_fallback,
        },
        "flushed": r.flushed,
    }


def run_result_to_json(r: RunResult) -> str:
    doc = {
        "config": r.config,
        "seed": r.seed,
        "decisions": r.decisions,
        "fallbacks": r.fallbacks,
        "generated_kb": r.generated_kb,
        "records": [_record_dict(rec) for rec in r.records],
        "aoi_s": list(r.aoi),
    }
    return json.dumps(doc, sort_keys=True, indent=1)


def records_to_csv(r: RunResult) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RECORD_CSV_COLUMNS)
    for rec in r.records:
        d = rec.decision
        writer.writerow([
            repr(rec.start_time), repr(rec.payload_kb), repr(rec.achieved_rate_mbps),
            repr(rec.duration_s), "" if rec.energy is None else repr(rec.energy.energy_j),
            repr(rec.mean_aoi_s), repr(d.probability), repr(d.theta), repr(d.delta_phi),
            repr(d.z), int(d.used_fallback),
        ])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# KPIs


@dataclass(frozen=True)
class KpiReport:
    mean_rate_mbps: float
    rate_ci95: float
    mean_aoi_s: float
    aoi_ci95: float
    energy_per_mb_j: float
    energy_ci95: float
    tx_count: int
    fallback_ratio: float
    byte_weighted_rate_mbps: float
    energy_unknown: int = 0
    single_record: bool = False


def compute_kpis(r: RunResult, include_flush: bool = False) -> KpiReport:
    """Per-run KPIs; the end-of-trace flush is left out of rate and energy by default."""
    if not r.records:
        raise EmptyResultError("run has no transmissions")
    used = [rec for rec in r.records if include_flush or not rec.flushed]
    if not used:
        used = list(r.records)
    rate, rate_ci = mean_ci95([rec.achieved_rate_mbps for rec in used])
    aoi, aoi_ci = mean_ci95(r.aoi) if r.aoi else (math.nan, math.nan)
    known = [rec for rec in used if rec.energy is not None and rec.payload_kb > 0]
    if known:
        energy = sum(rec.energy.energy_j for rec in known) / sum(rec.payload_kb / 1000.0 for rec in known)
        _, energy_ci = mean_ci95([rec.energy.energy_j / (rec.payload_kb / 1000.0) for rec in known])
    else:
        energy, energy_ci = math.nan, math.nan
    air = sum(rec.duration_s for rec in used)
    bits = sum(rec.payload_kb * 8.0 / 1000.0 for rec in used)
    return KpiReport(
        mean_rate_mbps=rate,
        rate_ci95=rate_ci,
        mean_aoi_s=aoi,
        aoi_ci95=aoi_ci,
        energy_per_mb_j=energy,
        energy_ci95=energy_ci,
        tx_count=len(r.records),
        fallback_ratio=r.fallbacks / r.decisions if r.decisions else 0.0,
        byte_weighted_rate_mbps=bits / air if air > 0 else math.nan,
        energy_unknown=sum(1 for rec in used if rec.energy is None),
        single_record=len(used) == 1,
    )


# ---------------------------------------------------------------------------
# comparison

KPI_FIELDS = ("mean_rate_mbps", "mean_aoi_s", "energy_per_mb_j", "byte_weighted_rate_mbps", "fallback_ratio")


@dataclass(frozen=True)
class SchemeSummary:
    name: str
    runs: tuple[KpiReport, ...]
    mean: Mapping[str, float]
    ci95: Mapping[str, float]
    gain_pct: Mapping[str, float]


@dataclass(frozen=True)
class Comparison:
    baseline: str
    repetitions: int
    schemes: Mapping[str, SchemeSummary]

    def to_rows(self) -> list[dict]:
        rows = []
        for name, summary in self.schemes.items():
            for kpi in KPI_FIELDS:
                rows.append({
                    "scheme": name,
                    "kpi": kpi,
                    "mean": summary.mean[kpi],
                    "ci95": summary.ci95[kpi],
                    "gain_pct": summary.gain_pct[kpi],
                    "n": len(summary.runs),
                })
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=("scheme", "kpi", "mean", "ci95", "gain_pct", "n"), lineterminator="\n")
        writer.writeheader()
        for row in self.to_rows():
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
        return buf.getvalue()

    def to_json(self) -> str:
        doc = {
            "baseline": self.baseline,
            "repetitions": self.repetitions,
            "schemes": {
                name: {"mean": dict(s.mean), "ci95": dict(s.ci95), "gain_pct": dict(s.gain_pct)}
                for name, s in self.schemes.items()
            },
        }
        return json.dumps(doc, sort_keys=True, indent=1, default=float)


class ComparisonError(DataError):
    pass


def _run_kpis(job):
    scenario, seed = job
    return compute_kpis(run_simulation(replace(scenario, seed=seed)))


def compare_schemes(
    scenarios: Mapping[str, Scenario],
    repetitions: int = 5,
    baseline: str = "periodic",
    workers: int = 1,
) -> Comparison:
    """Repeat every scenario with seeds ``seed, seed + 1, ...`` and compare KPIs.

    Gains are relative differences of the run-mean KPIs against ``baseline``
    in percent. ``workers > 1`` distributes runs over processes.
    """
    if repetitions < 1:
        raise ConfigError(f"repetitions must be >= 1, got {repetitions}")
    if baseline not in scenarios:
        raise ConfigError(f"baseline {baseline!r} not among scenarios {sorted(scenarios)}")
    for s in scenarios.values():
        s.validate()
    jobs = [(name, (s, s.seed + r)) for name, s in scenarios.items() for r in range(repetitions)]
    results: dict[str, list[KpiReport]] = {name: [] for name in scenarios}

    def collect(outputs):
        for (name, _), kpi in zip(jobs, outputs):
            results[name].append(kpi)

    try:
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                collect(list(pool.map(_run_kpis, [job for _, job in jobs])))
        else:
            collect([_run_kpis(job) for _, job in jobs])
    except EmptyResultError:
        empty = [name for name, (s, seed) in jobs if not run_simulation(replace(s, seed=seed)).records]
        if baseline in empty:
            raise ComparisonError(f"baseline {baseline!r} produced no transmissions") from None
        raise ComparisonError(f"scenarios without transmissions: {sorted(set(empty))}") from None

    stats = {}
    for name, runs in results.items():
        mean, ci = {}, {}
        for kpi in KPI_FIELDS:
            mean[kpi], ci[kpi] = mean_ci95([getattr(k, kpi) for k in runs])
        stats[name] = (mean, ci)
    base = stats[baseline][0]
    schemes = {}
    for name, runs in results.items():
        mean, ci = stats[name]
        gains = {}
        for kpi in KPI_FIELDS:
            b = base[kpi]
            gains[kpi] = (mean[kpi] - b) / abs(b) * 100.0 if b not in (0.0,) and math.isfinite(b) else math.nan
        schemes[name] = SchemeSummary(name, tuple(runs), mean, ci, gains)
    return Comparison(baseline, repetitions, schemes)
