"""Day-ahead demand forecasting with a small feed-forward network.

The forecaster maps yesterday's demand profile plus calendar features to the
next day's demand, emitted as 24 hourly values and interpolated back to the
clock resolution. Training is plain stochastic gradient descent with a seeded
shuffle, so results are bit-reproducible.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .scenario import DayKind, DayProfile, HistoryWindow, SlotClock

HOURLY_POINTS = 24

MODEL_FORMAT_VERSION = 1


class ForecastError(Exception):
    pass


class ShapeMismatch(ForecastError):
    pass


class DivergenceDetected(ForecastError):
    """Training loss became non-finite; the last finite parameters are kept."""


class UntrainedNetwork(ForecastError):
    """The network has no normalization bounds; train or load it first."""


class AllSlotsExcluded(ForecastError):
    """Every slot had non-positive actual demand, MAPE is undefined."""


class Activation(enum.Enum):
    SIGMOID = "sigmoid"
    TANH = "tanh"


class ForecastSource(enum.Enum):
    SIMPLE = "simple"
    REPREDICTED = "repredicted"
    ORACLE = "oracle"


_KIND_INDEX = {DayKind.WEEKDAY: 0, DayKind.WEEKEND: 1, DayKind.HOLIDAY: 2}


def kind_onehot(kind: DayKind) -> np.ndarray:
    vec = np.zeros(3)
    vec[_KIND_INDEX[kind]] = 1.0
    return vec


@dataclass(frozen=True)
class ForecastInput:
    """Network input: normalized previous-day samples, one-hot day kind of
    the day being predicted, and optional exogenous features."""

    prev_day: np.ndarray
    day_kind_onehot: np.ndarray
    exogenous: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def concat(self) -> np.ndarray:
        return np.concatenate([self.prev_day, self.day_kind_onehot, self.exogenous])


@dataclass(frozen=True)
class Forecast:
    """Predicted next-day demand plus the statistics agents shape rewards with."""

    samples: np.ndarray
    mean_kw: float
    std_kw: float
    source: ForecastSource

    @classmethod
    def from_samples(cls, samples: np.ndarray, source: ForecastSource) -> "Forecast":
        arr = np.maximum(np.asarray(samples, dtype=float), 0.0)
        if not np.all(np.isfinite(arr)):
            raise ForecastError("forecast samples must be finite")
        return cls(arr, float(arr.mean()), float(arr.std()), source)


@dataclass
class TrainingTrace:
    epoch_mse: list[float]
    final_lr: float

    @property
    def initial_mse(self) -> float:
        return self.epoch_mse[0]

    @property
    def final_mse(self) -> float:
        return self.epoch_mse[-1]


class Mlp:
    """Fully-connected network: configurable hidden activation, linear output.

    ``layer_sizes`` chains input through hidden layers to the output, e.g.
    ``[51, 32, 24]``. A two-entry list is a single linear layer.
    """

    def __init__(self, layer_sizes: list[int], activation: Activation = Activation.SIGMOID,
                 seed: int = 0):
        if len(layer_sizes) < 2 or any(s <= 0 for s in layer_sizes):
            raise ValueError(f"bad layer sizes {layer_sizes}")
        self.layer_sizes = list(layer_sizes)
        self.activation = activation
        rng = np.random.default_rng(seed)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(layer_sizes, layer_sizes[1:]):
            scale = 1.0 / np.sqrt(fan_in)
            self.weights.append(rng.uniform(-scale, scale, size=(fan_out, fan_in)))
            self.biases.append(np.zeros(fan_out))
        # (min, max) per demand feature space; None until trained/loaded
        self.norm_bounds: tuple[float, float] | None = None

    # -- inference ---------------------------------------------------------

    def _act(self, z: np.ndarray) -> np.ndarray:
        if self.activation is Activation.SIGMOID:
            return 1.0 / (1.0 + np.exp(-z))
        return np.tanh(z)

    def _act_grad(self, a: np.ndarray) -> np.ndarray:
        if self.activation is Activation.SIGMOID:
            return a * (1.0 - a)
        return 1.0 - a * a

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Single forward pass; hidden layers use the activation, output is linear."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.layer_sizes[0],):
            raise ShapeMismatch(
                f"input length {x.shape} does not match layer size {self.layer_sizes[0]}"
            )
        a = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = w @ a + b
            a = z if i == last else self._act(z)
        return a

    def _forward_trace(self, x: np.ndarray) -> list[np.ndarray]:
        activations = [x]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = w @ activations[-1] + b
            activations.append(z if i == last else self._act(z))
        return activations

    def gradients(self, x: np.ndarray, target: np.ndarray):
        """Backprop gradients of the per-sample MSE ``mean((y - t)^2)``."""
        acts = self._forward_trace(np.asarray(x, dtype=float))
        y = acts[-1]
        n_out = y.size
        delta = 2.0 * (y - target) / n_out
        grads_w = [np.zeros_like(w) for w in self.weights]
        grads_b = [np.zeros_like(b) for b in self.biases]
        for i in range(len(self.weights) - 1, -1, -1):
            grads_w[i] = np.outer(delta, acts[i])
            grads_b[i] = delta
            if i > 0:
                delta = (self.weights[i].T @ delta) * self._act_grad(acts[i])
        return grads_w, grads_b

    # -- persistence ---------------------------------------------------------

    def save(self, path: str | Path) -> None:
        doc = {
            "format_version": MODEL_FORMAT_VERSION,
            "layer_sizes": self.layer_sizes,
            "activation": self.activation.value,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "norm_bounds": list(self.norm_bounds) if self.norm_bounds else None,
        }
        Path(path).write_text(json.dumps(doc, indent=1))

    @classmethod
    def load(cls, path: str | Path) -> "Mlp":
        doc = json.loads(Path(path).read_text())
        if doc.get("format_version") != MODEL_FORMAT_VERSION:
            raise ForecastError(f"unsupported model format {doc.get('format_version')!r}")
        net = cls(doc["layer_sizes"], Activation(doc["activation"]))
        net.weights = [np.array(w, dtype=float) for w in doc["weights"]]
        net.biases = [np.array(b, dtype=float) for b in doc["biases"]]
        net.norm_bounds = tuple(doc["norm_bounds"]) if doc["norm_bounds"] else None
        return net


def mlp_forward(net: Mlp, x: np.ndarray) -> np.ndarray:
    return net.forward(x)


def mlp_train(
    net: Mlp,
    dataset: list[tuple[np.ndarray, np.ndarray]],
    epochs: int,
    lr: float,
    seed: int = 0,
    plateau_patience: int = 50,
) -> TrainingTrace:
    """Train by per-sample SGD with a seeded shuffle.

    The learning rate halves when the epoch MSE has not improved for
    ``plateau_patience`` epochs. If the loss ever turns non-finite the last
    finite parameters are restored and :class:`DivergenceDetected` raised.
    """
    if not dataset:
        raise ValueError("dataset must be non-empty")
    if lr <= 0:
        raise ValueError("lr must be positive")
    rng = np.random.default_rng(seed)
    order = np.arange(len(dataset))

    def epoch_loss() -> float:
        return float(
            np.mean([np.mean((net.forward(x) - t) ** 2) for x, t in dataset])
        )

    trace = [epoch_loss()]
    best = trace[0]
    stall = 0
    snapshot = ([w.copy() for w in net.weights], [b.copy() for b in net.biases])
    for _ in range(epochs):
        rng.shuffle(order)
        for idx in order:
            x, t = dataset[idx]
            gw, gb = net.gradients(x, t)
            for w, g in zip(net.weights, gw):
                w -= lr * g
            for b, g in zip(net.biases, gb):
                b -= lr * g
        mse = epoch_loss()
        if not np.isfinite(mse):
            net.weights, net.biases = snapshot
            raise DivergenceDetected(f"training diverged (mse={mse})")
        snapshot = ([w.copy() for w in net.weights], [b.copy() for b in net.biases])
        trace.append(mse)
        if mse < best - 1e-12:
            best = mse
            stall = 0
        else:
            stall += 1
            if stall >= plateau_patience:
                lr *= 0.5
                stall = 0
    return TrainingTrace(trace, lr)


# ---------------------------------------------------------------------------
# Day-ahead forecasting on top of the raw network
# ---------------------------------------------------------------------------

def hourly_to_slots(hourly: np.ndarray, slots_per_day: int) -> np.ndarray:
    """Upsample hourly points to slots, holding the anchors exactly.

    For the half-hourly clock each hourly value lands on its even slot and
    odd slots take the midpoint of their neighbours; the final half hour
    holds the last hourly value.
    """
    hourly = np.asarray(hourly, dtype=float)
    n_h = hourly.size
    if slots_per_day == n_h:
        return hourly.copy()
    if slots_per_day % n_h != 0:
        raise ShapeMismatch(f"{n_h} points do not divide {slots_per_day} slots")
    ratio = slots_per_day // n_h
    anchors_x = np.arange(n_h) * ratio
    x = np.arange(slots_per_day, dtype=float)
    return np.interp(x, anchors_x, hourly)


def slots_to_hourly(samples: np.ndarray) -> np.ndarray:
    """Average slot samples down to 24 hourly means."""
    samples = np.asarray(samples, dtype=float)
    if samples.size % HOURLY_POINTS != 0:
        raise ShapeMismatch(f"cannot reduce {samples.size} slots to hours")
    return samples.reshape(HOURLY_POINTS, -1).mean(axis=1)


def _normalize(values: np.ndarray, bounds: tuple[float, float]) -> np.ndarray:
    lo, hi = bounds
    span = hi - lo
    if span <= 0:
        return np.zeros_like(values)
    return np.clip((values - lo) / span, 0.0, 1.0)


def _denormalize(values: np.ndarray, bounds: tuple[float, float]) -> np.ndarray:
    lo, hi = bounds
    return values * (hi - lo) + lo


# Headroom multiplier above the training maximum so that moderately anomalous
# days do not saturate the normalized inputs.
_BOUND_HEADROOM = 1.1


def build_training_set(history: HistoryWindow, bounds: tuple[float, float]):
    """(input, target) pairs mapping each day to the next day's hourly means."""
    pairs = []
    for prev, nxt in zip(history.days, history.days[1:]):
        x = ForecastInput(
            prev_day=_normalize(prev.samples, bounds),
            day_kind_onehot=kind_onehot(nxt.kind),
        ).concat()
        t = _normalize(slots_to_hourly(nxt.samples), bounds)
        pairs.append((x, t))
    return pairs


def fit_bounds(history: HistoryWindow) -> tuple[float, float]:
    all_vals = np.concatenate([d.samples for d in history.days])
    return 0.0, float(all_vals.max()) * _BOUND_HEADROOM


def train_forecaster(
    history: HistoryWindow,
    hidden_units: int = 48,
    epochs: int = 800,
    lr: float = 0.4,
    seed: int = 0,
    restarts: int = 2,
) -> tuple[Mlp, TrainingTrace]:
    """Fit a day-ahead forecaster on the history window.

    Trains ``restarts`` nets from different seeded initialisations and keeps
    the one with the lowest training loss; per-sample SGD on this problem
    occasionally settles into a visibly worse optimum.
    """
    if len(history) < 2:
        raise ValueError("need at least two days of history to train")
    clock_slots = history.days[0].samples.size
    bounds = fit_bounds(history)
    dataset = build_training_set(history, bounds)
    best: tuple[Mlp, TrainingTrace] | None = None
    for attempt in range(max(restarts, 1)):
        net = Mlp([clock_slots + 3, hidden_units, HOURLY_POINTS], seed=seed + 101 * attempt)
        net.norm_bounds = bounds
        trace = mlp_train(net, dataset, epochs=epochs, lr=lr, seed=seed + 1 + attempt)
        if best is None or trace.final_mse < best[1].final_mse:
            best = (net, trace)
    return best


def predict_from_profile(net: Mlp, prev_samples: np.ndarray, kind: DayKind,
                         slots_per_day: int,
                         source: ForecastSource = ForecastSource.SIMPLE) -> Forecast:
    """Forecast the day following ``prev_samples`` (kW, clock resolution)."""
    if net.norm_bounds is None:
        raise UntrainedNetwork("normalization bounds unset; train or load the model")
    x = ForecastInput(
        prev_day=_normalize(np.asarray(prev_samples, dtype=float), net.norm_bounds),
        day_kind_onehot=kind_onehot(kind),
    ).concat()
    hourly = _denormalize(net.forward(x), net.norm_bounds)
    samples = hourly_to_slots(np.maximum(hourly, 0.0), slots_per_day)
    return Forecast.from_samples(samples, source)


def predict_day(net: Mlp, history: HistoryWindow, kind: DayKind,
                clock: SlotClock | None = None) -> Forecast:
    """Forecast the day after the last day in ``history``.

    ``kind`` is the calendar kind of the day being predicted.
    """
    last = history.last()
    slots = clock.slots_per_day if clock else last.samples.size
    return predict_from_profile(net, last.samples, kind, slots)


def mape(actual: np.ndarray, predicted: np.ndarray) -> float:
    """Mean absolute percentage error over slots with positive actuals.

    Slots where the actual demand is <= 0 are excluded; if that excludes
    everything, :class:`AllSlotsExcluded` is raised.
    """
    actual = np.asarray(actual, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    if actual.shape != predicted.shape:
        raise ShapeMismatch(f"length mismatch {actual.shape} vs {predicted.shape}")
    mask = actual > 0
    if not mask.any():
        raise AllSlotsExcluded("no slot has positive actual demand")
    return float(np.mean(np.abs(actual[mask] - predicted[mask]) / actual[mask]) * 100.0)


def excluded_slots(actual: np.ndarray) -> int:
    """Number of slots a MAPE computation over ``actual`` would skip."""
    actual = np.asarray(actual, dtype=float)
    return int(np.count_nonzero(actual <= 0))
