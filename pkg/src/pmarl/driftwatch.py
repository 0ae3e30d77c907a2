"""Intra-day divergence monitoring and pattern-matched reprediction.

When the morning's observed demand drifts away from the forecast, a
self-organizing map classifies the emerging pattern, the closest historical
day of the same class is retrieved, and the forecaster is re-run on a mash-up
of observed-so-far and matched-day demand.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .forecast import Forecast, ForecastSource, Mlp, mape, predict_from_profile
from .scenario import DayProfile, HistoryWindow, SlotClock

SOM_FORMAT_VERSION = 1

# ~10% window MAPE separates forecast noise from a pattern change.
DEFAULT_CHANGE_THRESHOLD = 10.0


class DriftError(Exception):
    pass


class WindowNotCovered(DriftError):
    """Observed samples do not span the monitoring window."""


class EmptyPatternSet(DriftError):
    pass


class DimensionMismatch(DriftError):
    pass


def monitoring_window(clock: SlotClock) -> range:
    """Default monitoring span: 07:00 up to the 14:30 checkpoint."""
    return range(clock.slot_of_time(7, 0), clock.slot_of_time(14, 30) + 1)


@dataclass(frozen=True)
class ChangeVerdict:
    """Outcome of a monitoring checkpoint."""

    triggered: bool
    window_mape: float
    matched_day: DayProfile | None = None
    matched_class: int | None = None


def monitor(
    forecast: Forecast,
    observed_so_far: np.ndarray,
    window: range,
    threshold: float = DEFAULT_CHANGE_THRESHOLD,
) -> ChangeVerdict:
    """Compare observed demand with the forecast over the monitoring window.

    ``observed_so_far`` must cover every slot in ``window`` (shorter prefixes
    raise :class:`WindowNotCovered`). Triggers iff the window MAPE exceeds the
    threshold; matching is done separately by :func:`find_match`.
    """
    observed = np.asarray(observed_so_far, dtype=float)
    if len(window) == 0:
        raise WindowNotCovered("empty monitoring window")
    if window.stop > observed.size:
        raise WindowNotCovered(
            f"observed {observed.size} slots, window needs {window.stop}"
        )
    if window.stop > forecast.samples.size:
        raise WindowNotCovered("forecast shorter than the monitoring window")
    idx = np.asarray(window)
    window_mape = mape(observed[idx], forecast.samples[idx])
    return ChangeVerdict(triggered=window_mape > threshold, window_mape=window_mape)


# ---------------------------------------------------------------------------
# Self-organizing map
# ---------------------------------------------------------------------------

@dataclass
class SomParams:
    rows: int = 4
    cols: int = 4
    iterations: int = 1000
    lr_start: float = 0.5
    lr_end: float = 0.01
    radius_start: float | None = None  # defaults to max(rows, cols) / 2
    radius_end: float = 0.5


class Som:
    """Rectangular-grid SOM over fixed-length day vectors."""

    def __init__(self, codebook: np.ndarray, rows: int, cols: int,
                 class_labels: list[str | None] | None = None,
                 params: SomParams | None = None):
        if codebook.shape[0] != rows * cols:
            raise ValueError("codebook size does not match grid")
        if not np.all(np.isfinite(codebook)):
            raise ValueError("codebook must be finite")
        self.codebook = codebook
        self.rows = rows
        self.cols = cols
        self.class_labels = class_labels or [None] * (rows * cols)
        self.params = params or SomParams(rows=rows, cols=cols)

    @property
    def dim(self) -> int:
        return self.codebook.shape[1]

    def node_position(self, node: int) -> tuple[int, int]:
        return divmod(node, self.cols)

    def save(self, path: str | Path) -> None:
        doc = {
            "format_version": SOM_FORMAT_VERSION,
            "rows": self.rows,
            "cols": self.cols,
            "codebook": self.codebook.tolist(),
            "class_labels": self.class_labels,
            "params": {
                "iterations": self.params.iterations,
                "lr_start": self.params.lr_start,
                "lr_end": self.params.lr_end,
                "radius_start": self.params.radius_start,
                "radius_end": self.params.radius_end,
            },
        }
        Path(path).write_text(json.dumps(doc, indent=1))

    @classmethod
    def load(cls, path: str | Path) -> "Som":
        doc = json.loads(Path(path).read_text())
        if doc.get("format_version") != SOM_FORMAT_VERSION:
            raise DriftError(f"unsupported SOM format {doc.get('format_version')!r}")
        params = SomParams(rows=doc["rows"], cols=doc["cols"], **doc["params"])
        return cls(
            np.array(doc["codebook"], dtype=float),
            doc["rows"],
            doc["cols"],
            doc["class_labels"],
            params,
        )


def som_train(patterns: np.ndarray, params: SomParams | None = None, seed: int = 0,
              labels: list[str] | None = None) -> Som:
    """Classic online SOM training with exponentially decaying rate and radius.

    Each iteration presents one pattern (seeded choice), finds the best
    matching unit by Euclidean distance and pulls its Gaussian neighbourhood
    toward the pattern. After training, nodes are labelled by majority vote
    of the patterns they win (when ``labels`` are given).
    """
    patterns = np.asarray(patterns, dtype=float)
    if patterns.ndim != 2 or patterns.shape[0] == 0:
        raise EmptyPatternSet("need at least one pattern")
    params = params or SomParams()
    rows, cols = params.rows, params.cols
    n_nodes = rows * cols
    dim = patterns.shape[1]
    rng = np.random.default_rng(seed)

    # Seed codebook from the patterns themselves with small jitter.
    picks = rng.integers(0, patterns.shape[0], size=n_nodes)
    codebook = patterns[picks] * (1.0 + rng.normal(0.0, 0.01, size=(n_nodes, dim)))

    grid = np.array([(r, c) for r in range(rows) for c in range(cols)], dtype=float)
    radius_start = params.radius_start if params.radius_start is not None else max(rows, cols) / 2.0
    iters = max(params.iterations, 1)
    for it in range(params.iterations):
        frac = it / iters
        lr = params.lr_start * (params.lr_end / params.lr_start) ** frac
        radius = radius_start * (params.radius_end / radius_start) ** frac
        pattern = patterns[rng.integers(0, patterns.shape[0])]
        bmu = int(np.argmin(np.sum((codebook - pattern) ** 2, axis=1)))
        grid_dist2 = np.sum((grid - grid[bmu]) ** 2, axis=1)
        influence = lr * np.exp(-grid_dist2 / (2.0 * radius * radius))
        codebook += influence[:, None] * (pattern - codebook)

    som = Som(codebook, rows, cols, params=params)
    if labels is not None:
        if len(labels) != patterns.shape[0]:
            raise ValueError("one label per pattern required")
        votes: list[dict[str, int]] = [{} for _ in range(n_nodes)]
        for pattern, label in zip(patterns, labels):
            node, _ = som_classify(som, pattern)
            votes[node][label] = votes[node].get(label, 0) + 1
        som.class_labels = [
            max(sorted(v), key=v.get) if v else None for v in votes
        ]
    return som


def som_classify(som: Som, pattern: np.ndarray) -> tuple[int, float]:
    """Best matching unit and its Euclidean distance; ties go to the lowest index."""
    pattern = np.asarray(pattern, dtype=float)
    if pattern.shape != (som.dim,):
        raise DimensionMismatch(f"pattern dim {pattern.shape} vs codebook {som.dim}")
    dists = np.sqrt(np.sum((som.codebook - pattern) ** 2, axis=1))
    node = int(np.argmin(dists))  # argmin returns the first minimum
    return node, float(dists[node])


# ---------------------------------------------------------------------------
# Historical matching and reprediction
# ---------------------------------------------------------------------------

def _padded_pattern(observed_prefix: np.ndarray, forecast: Forecast,
                    checkpoint: int) -> np.ndarray:
    """Whole-day vector for classification: observed up to the checkpoint,
    forecast beyond it. Zero padding would swamp the distance, the forecast
    keeps the tail plausible."""
    pattern = forecast.samples.copy()
    pattern[:checkpoint] = np.asarray(observed_prefix, dtype=float)[:checkpoint]
    return pattern


def find_match(
    som: Som,
    history: HistoryWindow,
    observed_prefix: np.ndarray,
    forecast: Forecast,
    window: range,
) -> tuple[DayProfile, int]:
    """Closest historical day from the class of the emerging pattern.

    The padded observation is classified; among history days mapping to the
    same node, the one with minimum distance over the observed span wins.
    An empty class falls back to the global nearest, so a non-empty history
    always yields a match.
    """
    if not history.days:
        raise ValueError("history must be non-empty")
    checkpoint = window.stop
    observed = np.asarray(observed_prefix, dtype=float)
    if observed.size < checkpoint:
        raise WindowNotCovered(f"prefix has {observed.size} slots, window needs {checkpoint}")
    pattern = _padded_pattern(observed, forecast, checkpoint)
    node, _ = som_classify(som, pattern)

    prefix = observed[:checkpoint]

    def prefix_dist(day: DayProfile) -> float:
        return float(np.sum((day.samples[:checkpoint] - prefix) ** 2))

    same_class = [d for d in history.days if som_classify(som, d.samples)[0] == node]
    candidates = same_class if same_class else history.days
    best = min(candidates, key=prefix_dist)
    return best, node


def repredict(
    net: Mlp,
    observed_prefix: np.ndarray,
    match: DayProfile,
    forecast: Forecast,
    window: range,
) -> Forecast:
    """Re-run the forecaster on a mash-up of observed and matched demand.

    The network's demand input takes the observed samples up to the
    checkpoint and the matched day's samples after it. Only slots after the
    checkpoint adopt the new prediction; earlier slots keep what was actually
    observed.
    """
    checkpoint = window.stop
    observed = np.asarray(observed_prefix, dtype=float)
    if observed.size < checkpoint:
        raise WindowNotCovered(f"prefix has {observed.size} slots, window needs {checkpoint}")
    if match.samples.size != forecast.samples.size:
        raise DimensionMismatch("match and forecast disagree on slot count")
    mashup = match.samples.copy()
    mashup[:checkpoint] = observed[:checkpoint]
    predicted = predict_from_profile(
        net, mashup, match.kind, forecast.samples.size, source=ForecastSource.REPREDICTED
    )
    samples = predicted.samples.copy()
    samples[:checkpoint] = observed[:checkpoint]
    return Forecast.from_samples(samples, ForecastSource.REPREDICTED)


def check_and_repredict(
    net: Mlp,
    som: Som,
    history: HistoryWindow,
    forecast: Forecast,
    observed_so_far: np.ndarray,
    clock: SlotClock,
    threshold: float = DEFAULT_CHANGE_THRESHOLD,
) -> tuple[ChangeVerdict, Forecast]:
    """Single checkpoint of the full pathway: monitor, match, repredict.

    Returns the verdict (with match details filled in when triggered) and
    either the original forecast or the repredicted one.
    """
    window = monitoring_window(clock)
    verdict = monitor(forecast, observed_so_far, window, threshold)
    if not verdict.triggered:
        return verdict, forecast
    match, node = find_match(som, history, observed_so_far, forecast, window)
    new_forecast = repredict(net, observed_so_far, match, forecast, window)
    verdict = ChangeVerdict(
        triggered=True,
        window_mape=verdict.window_mape,
        matched_day=match,
        matched_class=node,
    )
    return verdict, new_forecast
