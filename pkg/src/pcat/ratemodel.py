"""Data-rate prediction from channel context: model tree and linear baseline.

The model tree grows binary splits that maximise the reduction of the label
standard deviation, fits a least-squares linear model in every leaf and can be
pruned bottom-up against a held-out part of the training rows.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

from . import _kernels
from .errors import DataError, FormatError, PredictionError
from .geotrace import ChannelContext, Source, read_rows

FEATURES = ("rsrp", "rsrq", "snr", "cqi", "payload_kb", "velocity")
MODEL_FORMAT_VERSION = 1
KINDS = ("model_tree", "linear")
# Stop splitting once a node's label spread falls below this share of the root's.
MIN_SD_FRACTION = 0.05
HOLDOUT_FRACTION = 0.2


@dataclass(frozen=True)
class FeatureVector:
    rsrp: float | None
    rsrq: float | None
    snr: float | None
    cqi: float | None
    payload_kb: float | None
    velocity: float | None

    @classmethod
    def from_context(cls, ctx: ChannelContext, payload_kb: float, velocity: float):
        return cls(ctx.rsrp, ctx.rsrq, ctx.snr, ctx.cqi, payload_kb, velocity)

    def missing(self) -> list[str]:
        return [f for f in FEATURES if getattr(self, f) is None]

    def as_array(self) -> np.ndarray:
        missing = self.missing()
        if missing:
            raise PredictionError(f"absent features: {', '.join(missing)}")
        return np.array([float(getattr(self, f)) for f in FEATURES])


@dataclass(frozen=True)
class LabeledSample:
    features: FeatureVector
    rate: float

    def __post_init__(self):
        if not (math.isfinite(self.rate) and self.rate > 0):
            raise DataError(f"rate must be finite and positive, got {self.rate}")
        if self.features.missing():
            raise DataError(f"labeled sample lacks {self.features.missing()}")


@dataclass(frozen=True)
class Leaf:
    intercept: float
    coefficients: tuple[float, ...]
    n: int

    def evaluate(self, x: np.ndarray) -> float:
        value = self.intercept
        for c, v in zip(self.coefficients, x):
            value += c * v
        return value


@dataclass(frozen=True)
class Split:
    feature: str
    threshold: float
    left: "Node"
    right: "Node"


Node = Union[Leaf, Split]


@dataclass(frozen=True)
class RateModel:
    kind: str
    root: Node
    training_meta: Mapping = field(default_factory=dict)

    def leaves(self) -> list[Leaf]:
        out, stack = [], [self.root]
        while stack:
            node = stack.pop()
            if isinstance(node, Leaf):
                out.append(node)
            else:
                stack.extend((node.right, node.left))
        return out

    @property
    def depth(self) -> int:
        def _depth(node):
            return 0 if isinstance(node, Leaf) else 1 + max(_depth(node.left), _depth(node.right))

        return _depth(self.root)


@dataclass(frozen=True)
class AccuracyReport:
    mae: float
    rmse: float
    n: int
    overestimation_share: float


# ---------------------------------------------------------------------------
# leaf models


def _lstsq_leaf(X: np.ndarray, y: np.ndarray, active: np.ndarray) -> Leaf:
    coef = np.zeros(X.shape[1])
    mean_y = float(y.mean())
    mu = X.mean(axis=0)
    if active.any():
        sol, *_ = np.linalg.lstsq(X[:, active] - mu[active], y - mean_y, rcond=None)
        coef[active] = sol
    intercept = mean_y - float(coef @ mu)
    return Leaf(intercept, tuple(float(c) for c in coef), int(len(y)))


def _predict_rows(leaf: Leaf, X: np.ndarray) -> np.ndarray:
    return np.maximum(leaf.intercept + X @ np.asarray(leaf.coefficients), 0.0)


def fit_linear(X: np.ndarray, y: np.ndarray, eliminate: bool = False) -> Leaf:
    """Least-squares linear model with intercept.

    Constant columns get a zero coefficient. With ``eliminate``, terms are
    dropped greedily while that lowers the size-penalised absolute error
    ``mae * (n + v) / (n - v)``.
    """
    if np.all(y == y[0]):
        return Leaf(float(y[0]), (0.0,) * X.shape[1], int(len(y)))
    active = np.ptp(X, axis=0) > 0
    leaf = _lstsq_leaf(X, y, active)
    if not eliminate:
        return leaf
    n = len(y)

    def penalised(candidate: Leaf, n_params: int) -> float:
        if n <= n_params:
            return math.inf
        mae = float(np.mean(np.abs(_predict_rows(candidate, X) - y)))
        return mae * (n + n_params) / (n - n_params)

    best = penalised(leaf, int(active.sum()) + 1)
    while active.any():
        trial = None
        for j in np.flatnonzero(active):
            mask = active.copy()
            mask[j] = False
            cand = _lstsq_leaf(X, y, mask)
            err = penalised(cand, int(mask.sum()) + 1)
            if err < best and (trial is None or err < trial[0]):
                trial = (err, mask, cand)
        if trial is None:
            break
        best, active, leaf = trial
    return leaf


# ---------------------------------------------------------------------------
# tree induction


class _BuildNode:
    __slots__ = ("rows", "leaf", "feature", "threshold", "left", "right")

    def __init__(self, rows, leaf):
        self.rows = rows
        self.leaf = leaf
        self.feature = None
        self.threshold = None
        self.left = None
        self.right = None


def _best_split(X, y, rows, min_leaf):
    """(sdr, feature, threshold) of the best admissible split, or None."""
    yr = y[rows]
    yc = np.ascontiguousarray(yr - yr.mean())
    best = None
    for j in range(X.shape[1]):
        order = np.argsort(X[rows, j], kind="stable")
        xs = np.ascontiguousarray(X[rows, j][order])
        sdr, thr, k = _kernels.best_split(xs, np.ascontiguousarray(yc[order]), min_leaf)
        if k < 0:
            continue
        if best is None or sdr > best[0]:
            best = (sdr, j, thr)
    return best


def _grow(X, y, rows, depth, params, root_sd):
    yr = y[rows]
    node = _BuildNode(rows, fit_linear(X[rows], yr, eliminate=True))
    sd = float(yr.std())
    if (
        depth >= params["max_depth"]
        or len(rows) < 2 * params["min_leaf"]
        or sd <= MIN_SD_FRACTION * root_sd
    ):
        return node
    found = _best_split(X, y, rows, params["min_leaf"])
    if found is None or not found[0] > 0.0:
        return node
    _, j, thr = found
    go_left = X[rows, j] < thr
    node.feature, node.threshold = j, thr
    node.left = _grow(X, y, rows[go_left], depth + 1, params, root_sd)
    node.right = _grow(X, y, rows[~go_left], depth + 1, params, root_sd)
    return node


def _prune(node: _BuildNode, X, y) -> float:
    """Reduced-error pruning; returns the absolute error on the rows given."""
    leaf_err = float(np.abs(_predict_rows(node.leaf, X) - y).sum()) if len(y) else 0.0
    if node.left is None:
        return leaf_err
    mask = X[:, node.feature] < node.threshold
    sub_err = _prune(node.left, X[mask], y[mask]) + _prune(node.right, X[~mask], y[~mask])
    if leaf_err <= sub_err:
        node.left = node.right = None
        node.feature = node.threshold = None
        return leaf_err
    return sub_err


def _freeze(node: _BuildNode) -> Node:
    if node.left is None:
        return node.leaf
    return Split(FEATURES[node.feature], float(node.threshold), _freeze(node.left), _freeze(node.right))


def _as_arrays(data: Sequence[LabeledSample]):
    X = np.array([s.features.as_array() for s in data], dtype=float).reshape(-1, len(FEATURES))
    y = np.array([s.rate for s in data], dtype=float)
    return X, y


def train(
    data: Iterable[LabeledSample],
    kind: str = "model_tree",
    min_leaf: int = 4,
    max_depth: int = 8,
    prune: bool = True,
    seed: int = 0,
) -> RateModel:
    """Fit a rate model. Deterministic for equal data, parameters and seed."""
    data = list(data)
    if kind not in KINDS:
        raise ValueError(f"unknown model kind {kind!r}, expected one of {KINDS}")
    if min_leaf < 1 or max_depth < 0:
        raise ValueError("min_leaf must be >= 1 and max_depth >= 0")
    needed = 2 * min_leaf if kind == "model_tree" else 2
    if len(data) < needed:
        raise DataError(f"{kind} needs at least {needed} samples, got {len(data)}")
    X, y = _as_arrays(data)
    meta = {
        "n_samples": len(y),
        "feature_ranges": {f: [float(X[:, j].min()), float(X[:, j].max())] for j, f in enumerate(FEATURES)},
        "params": {"min_leaf": min_leaf, "max_depth": max_depth, "prune": prune, "seed": seed},
    }
    if kind == "linear":
        return RateModel(kind, fit_linear(X, y), meta)

    order = np.random.default_rng(seed).permutation(len(y))
    X, y = X[order], y[order]
    n_hold = int(round(HOLDOUT_FRACTION * len(y))) if prune else 0
    if len(y) - n_hold < 2 * min_leaf:
        n_hold = 0
    n_grow = len(y) - n_hold
    Xg, yg = X[:n_grow], y[:n_grow]
    root = _grow(Xg, yg, np.arange(n_grow), 0, {"min_leaf": min_leaf, "max_depth": max_depth}, float(yg.std()))
    if n_hold:
        _prune(root, X[n_grow:], y[n_grow:])
    meta["n_grow"] = n_grow
    meta["n_holdout"] = n_hold
    return RateModel(kind, _freeze(root), meta)


def _leaf_for(model: RateModel, x: np.ndarray) -> Leaf:
    node = model.root
    while isinstance(node, Split):
        node = node.left if x[FEATURES.index(node.feature)] < node.threshold else node.right
    return node


def predict(model: RateModel, f: FeatureVector) -> float:
    """Predicted data rate in Mbit/s, clamped at zero."""
    x = f.as_array()
    return max(0.0, _leaf_for(model, x).evaluate(x))


def evaluate(model: RateModel, data: Iterable[LabeledSample]) -> AccuracyReport:
    data = list(data)
    if not data:
        raise DataError("cannot evaluate on an empty data set")
    pred = np.array([predict(model, s.features) for s in data])
    label = np.array([s.rate for s in data])
    err = pred - label
    return AccuracyReport(
        mae=float(np.mean(np.abs(err))),
        rmse=float(np.sqrt(np.mean(err * err))),
        n=len(data),
        overestimation_share=float(np.mean(pred > label)),
    )


# ---------------------------------------------------------------------------
# persistence


def _node_to_dict(node: Node) -> dict:
    if isinstance(node, Leaf):
        return {
            "intercept": node.intercept,
            "coefficients": dict(zip(FEATURES, node.coefficients)),
            "n": node.n,
        }
    return {
        "feature": node.feature,
        "threshold": node.threshold,
        "left": _node_to_dict(node.left),
        "right": _node_to_dict(node.right),
    }


def _num(doc, key):
    value = doc.get(key) if isinstance(doc, dict) else None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise FormatError(f"model node: {key!r} missing or not a number")
    return float(value)


def _node_from_dict(doc, depth=0) -> Node:
    if depth > 256:
        raise FormatError("model tree nesting too deep")
    if not isinstance(doc, dict):
        raise FormatError("model node must be an object")
    if "feature" in doc:
        if doc["feature"] not in FEATURES:
            raise FormatError(f"unknown split feature {doc['feature']!r}")
        return Split(
            doc["feature"],
            _num(doc, "threshold"),
            _node_from_dict(doc.get("left"), depth + 1),
            _node_from_dict(doc.get("right"), depth + 1),
        )
    coefs = doc.get("coefficients")
    if not isinstance(coefs, dict) or set(coefs) != set(FEATURES):
        raise FormatError("leaf coefficients must name every feature")
    n = doc.get("n")
    if not isinstance(n, int) or isinstance(n, bool) or n < 1:
        raise FormatError("leaf sample count must be a positive integer")
    return Leaf(_num(doc, "intercept"), tuple(_num(coefs, f) for f in FEATURES), n)


def model_to_dict(model: RateModel) -> dict:
    return {
        "version": MODEL_FORMAT_VERSION,
        "kind": model.kind,
        "features": list(FEATURES),
        "root": _node_to_dict(model.root),
        "meta": dict(model.training_meta),
    }


def save_model(model: RateModel) -> bytes:
    return json.dumps(model_to_dict(model), sort_keys=True, separators=(",", ":")).encode()


def model_from_dict(doc) -> RateModel:
    if not isinstance(doc, dict):
        raise FormatError("model document must be a JSON object")
    if doc.get("version") != MODEL_FORMAT_VERSION:
        raise FormatError(f"unsupported model version {doc.get('version')!r}")
    if doc.get("kind") not in KINDS:
        raise FormatError(f"unknown model kind {doc.get('kind')!r}")
    if doc.get("features") != list(FEATURES):
        raise FormatError(f"feature list mismatch: {doc.get('features')!r}")
    meta = doc.get("meta", {})
    if not isinstance(meta, dict):
        raise FormatError("model meta must be an object")
    return RateModel(doc["kind"], _node_from_dict(doc.get("root")), meta)


def load_model(data: bytes | str) -> RateModel:
    try:
        doc = json.loads(data)
    except (ValueError, UnicodeDecodeError) as exc:
        raise FormatError(f"corrupt model payload: {exc}") from None
    return model_from_dict(doc)


# ---------------------------------------------------------------------------
# training data


def parse_training_csv(source: Source) -> tuple[list[LabeledSample], int]:
    """Labeled samples from a trace CSV with a trailing ``payload_kb`` column.

    Rows lacking a feature or a positive rate label are dropped; the number of
    dropped rows is returned alongside.
    """
    out, dropped = [], 0
    for row_no, sample, extras in read_rows(source, extra_columns=("payload_kb",)):
        payload = extras[0]
        try:
            payload_kb = float(payload) if payload != "" else None
        except ValueError:
            raise FormatError(f"cannot parse 'payload_kb' value {payload!r}", row_no) from None
        fv = FeatureVector.from_context(sample.context, payload_kb, sample.velocity)
        rate = sample.measured_rate
        if fv.missing() or rate is None or not rate > 0:
            dropped += 1
            continue
        out.append(LabeledSample(fv, rate))
    return out, dropped
