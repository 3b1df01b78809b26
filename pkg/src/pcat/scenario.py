"""Scenario configuration documents (JSON) and named presets."""
from __future__ import annotations

import copy
import json
import os
from importlib import resources

from .connmap import build_map, load_map
from .errors import ConfigError, DataError
from .geotrace import parse_trace, resample_context
from .mobility import mean_trajectory
from .power import EXAMPLE_DEVICE, DeviceCharacteristic, TxPowerParams
from .ratemodel import load_model
from .sim import OracleConfig, Scenario, SensorConfig
from .txscheme import REFERENCE_METRICS, MetricDefinition, SchemeConfig, derive_gamma

PRESETS = ("paper-defaults",)


def load_preset(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}, available: {PRESETS}")
    text = resources.files("pcat").joinpath("presets", f"{name}.json").read_text()
    return json.loads(text)


def deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


class _Loader:
    """Resolves file references relative to a base directory, with caching."""

    def __init__(self, base_dir: str):
        self.base_dir = base_dir
        self._traces = {}

    def path(self, ref: str) -> str:
        return ref if os.path.isabs(ref) else os.path.join(self.base_dir, ref)

    def read(self, ref: str) -> bytes:
        try:
            with open(self.path(ref), "rb") as fh:
                return fh.read()
        except OSError as exc:
            raise DataError(f"cannot read {ref!r}: {exc.strerror}") from None

    def trace(self, ref: str, f_context: float | None):
        key = (self.path(ref), f_context)
        if key not in self._traces:
            trip = os.path.splitext(os.path.basename(ref))[0]
            trace = parse_trace(self.read(ref), trip)
            if f_context:
                trace = resample_context(trace, f_context)
            self._traces[key] = trace
        return self._traces[key]

    def traces(self, refs, f_context):
        if isinstance(refs, str):
            refs = [refs]
        if not isinstance(refs, list) or not refs:
            raise ConfigError("expected a non-empty list of trace files")
        return [self.trace(r, f_context) for r in refs]


def _metric(scheme_doc: dict, metrics_doc: dict) -> MetricDefinition:
    spec = scheme_doc.get("metric", "snr")
    if isinstance(spec, str):
        spec = {"name": spec}
    if not isinstance(spec, dict) or "name" not in spec:
        raise ConfigError("scheme.metric must be a name or an object with 'name'")
    name = spec["name"]
    table = {k: v for k, v in metrics_doc.items()}
    base = dict(table.get(name, {}))
    if not base and name in REFERENCE_METRICS:
        m = REFERENCE_METRICS[name]
        base = {"phi_min": m.phi_min, "phi_max": m.phi_max, "alpha": m.alpha, "gamma": m.gamma}
    fields = {**base, **{k: v for k, v in spec.items() if k not in ("name", "derive_gamma")}}
    try:
        metric = MetricDefinition(
            name, float(fields["phi_min"]), float(fields["phi_max"]),
            float(fields.get("alpha", 8.0)), float(fields.get("gamma", 1.0)),
        )
    except KeyError as exc:
        raise ConfigError(f"metric {name!r} lacks {exc.args[0]!r}") from None
    if spec.get("derive_gamma"):
        ref = table.get("snr") or {"phi_min": 0.0, "phi_max": 30.0, "gamma": 0.5}
        reference = MetricDefinition("snr", ref["phi_min"], ref["phi_max"], 8.0, ref["gamma"])
        metric = MetricDefinition(name, metric.phi_min, metric.phi_max, metric.alpha, derive_gamma(metric, reference))
    return metric


def _number_fields(doc: dict, names, where):
    out = {}
    for name in names:
        if name in doc:
            value = doc[name]
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{where}.{name} must be a number")
            out[name] = float(value)
    return out


def scenario_from_dict(doc: dict, base_dir: str = ".", preset: str | None = None, loader=None) -> Scenario:
    if not isinstance(doc, dict):
        raise ConfigError("scenario must be a JSON object")
    if preset is None:
        preset = doc.get("preset")
    if preset:
        doc = deep_merge(load_preset(preset), doc)
    loader = loader or _Loader(base_dir)
    f_context = doc.get("f_context_hz")

    scheme_doc = doc.get("scheme", {})
    if not isinstance(scheme_doc, dict):
        raise ConfigError("scheme must be an object")
    scheme = SchemeConfig(
        metric=_metric(scheme_doc, doc.get("metrics", {})),
        mode=scheme_doc.get("mode", "pcat"),
        **_number_fields(scheme_doc, ("t_min", "t_max", "t_p", "tau", "period"), "scheme"),
    )
    if "traces" not in doc:
        raise ConfigError("scenario needs 'traces'")
    traces = loader.traces(doc["traces"], f_context)

    cmap, map_traces = None, None
    map_doc = doc.get("map")
    if isinstance(map_doc, str):
        cmap = load_map(loader.read(map_doc))
    elif isinstance(map_doc, dict):
        map_traces = loader.traces(map_doc.get("traces"), f_context)
        cmap = build_map(map_traces, float(map_doc.get("cell_side_m", doc.get("cell_side_m", 5.0))))
    elif map_doc is not None:
        raise ConfigError("map must be a file name or an object with 'traces'")

    origin = cmap.origin if cmap is not None else traces[0].origin
    pred_doc = doc.get("predictor", {"kind": "trajectory"})
    if isinstance(pred_doc, str):
        pred_doc = {"kind": pred_doc}
    kind = pred_doc.get("kind", "trajectory")
    trajectory = reference = None
    if kind == "trajectory" and scheme.mode == "pcat":
        refs = pred_doc.get("traces")
        source = loader.traces(refs, f_context) if refs else map_traces
        if source is None:
            raise ConfigError("trajectory predictor needs 'traces' (or a map built from traces)")
        trajectory = mean_trajectory(source, int(pred_doc.get("n_points", 512)), origin=origin)
    elif kind == "reference":
        if "trace" not in pred_doc:
            raise ConfigError("reference predictor needs 'trace'")
        reference = loader.trace(pred_doc["trace"], f_context)

    model = load_model(loader.read(doc["rate_model"])) if doc.get("rate_model") else None

    sensor_doc = doc.get("sensor", {})
    sensor = SensorConfig(
        float(sensor_doc.get("f_sensor_hz", 1.0)), float(sensor_doc.get("s_sensor_kb", 50.0))
    )
    device_doc = doc.get("device", "example-device")
    if device_doc == "example-device":
        device = EXAMPLE_DEVICE
    elif isinstance(device_doc, dict):
        device = DeviceCharacteristic.from_dict(device_doc)
    else:
        raise ConfigError("device must be 'example-device' or a characteristic object")
    tx_power = TxPowerParams(
        **_number_fields(doc.get("tx_power", {}), ("p0_dbm", "alpha_pl", "rsrp_ref_dbm", "p_max_dbm"), "tx_power")
    )
    oracle_doc = dict(doc.get("oracle", {"mode": "model"}))
    synthetic = None
    if oracle_doc.get("mode") == "synthetic":
        synthetic = {
            "indicator": oracle_doc.get("indicator"),
            "slope": float(oracle_doc.get("slope", 1.0)),
            "intercept": float(oracle_doc.get("intercept", 0.0)),
        }
    oracle = OracleConfig(
        mode=oracle_doc.get("mode", "model"),
        synthetic=synthetic,
        **_number_fields(oracle_doc, ("sigma_ln", "table_window_s", "min_rate_mbps"), "oracle"),
    )
    seed = doc.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError("seed must be an integer")
    scenario = Scenario(
        traces=tuple(traces),
        scheme=scheme,
        map=cmap,
        trajectory=trajectory,
        reference=reference,
        rate_model=model,
        predictor=kind,
        sensor=sensor,
        device=device,
        tx_power=tx_power,
        oracle=oracle,
        seed=seed,
        name=str(doc.get("name", "")),
    )
    scenario.validate()
    return scenario


def read_json(path: str) -> dict:
    try:
        with open(path, "rb") as fh:
            return json.loads(fh.read())
    except OSError as exc:
        raise DataError(f"cannot read {path!r}: {exc.strerror}") from None
    except ValueError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def load_scenario(path: str, preset: str | None = None) -> Scenario:
    return scenario_from_dict(read_json(path), os.path.dirname(os.path.abspath(path)), preset)


def comparison_from_dict(doc: dict, base_dir: str = ".", preset: str | None = None):
    """``(scenarios, repetitions, baseline, workers)`` from a comparison document.

    ``common`` is merged under every entry of ``scenarios``; an entry may also
    be the file name of a scenario document.
    """
    if not isinstance(doc, dict) or not isinstance(doc.get("scenarios"), dict) or not doc["scenarios"]:
        raise ConfigError("comparison needs a non-empty 'scenarios' object")
    common = doc.get("common", {})
    loader = _Loader(base_dir)
    scenarios = {}
    for name, entry in doc["scenarios"].items():
        if isinstance(entry, str):
            entry = read_json(loader.path(entry))
        merged = deep_merge(common, entry)
        merged.setdefault("name", name)
        scenarios[name] = scenario_from_dict(merged, base_dir, preset or doc.get("preset"), loader)
    repetitions = doc.get("repetitions", 5)
    if isinstance(repetitions, bool) or not isinstance(repetitions, int):
        raise ConfigError("repetitions must be an integer")
    return scenarios, repetitions, doc.get("baseline", "periodic"), int(doc.get("workers", 1))
