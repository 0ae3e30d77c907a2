"""Domain types, demand-history ingestion and synthetic baseload generation.

Everything physical lives here: the slot clock, day profiles of demand in kW,
EV specifications, and the scenario configuration shared by the simulator.
All operations are pure functions of their inputs (plus an explicit seed), so
the module is safe to use from any number of threads.
"""

from __future__ import annotations

import csv
import datetime as _dt
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MINUTES_PER_DAY = 1440


class ScenarioError(Exception):
    """Base class for errors raised by this module."""


class MalformedRow(ScenarioError):
    """A demand CSV row could not be parsed."""

    def __init__(self, line_no: int, reason: str):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {reason}")


class GapInData(ScenarioError):
    """A calendar day is missing more than the tolerated share of slots."""

    def __init__(self, day: str, missing: int, total: int):
        self.day = day
        super().__init__(f"day {day}: {missing} of {total} slots missing")


class ConfigError(ScenarioError):
    """A scenario/run config file is invalid."""


class DayKind(enum.Enum):
    WEEKDAY = "weekday"
    WEEKEND = "weekend"
    HOLIDAY = "holiday"


class AnomalyKind(enum.Enum):
    SCALE = "scale"
    SHIFT = "shift"
    PLATEAU = "plateau"


# Share of a day's slots that may be missing before the day is rejected.
GAP_TOLERANCE = 0.05


@dataclass(frozen=True)
class SlotClock:
    """Fixed-resolution simulation clock.

    ``slots_per_day`` must divide a day evenly and be at least hourly.
    ``day_start_offset`` is the slot index corresponding to 00:00 (kept at 0
    for calendar-aligned data; nonzero offsets rotate all slot arithmetic).
    """

    slots_per_day: int = 48
    day_start_offset: int = 0

    def __post_init__(self):
        if self.slots_per_day < 24 or MINUTES_PER_DAY % self.slots_per_day != 0:
            raise ValueError(
                f"slots_per_day must be >= 24 and divide {MINUTES_PER_DAY}, "
                f"got {self.slots_per_day}"
            )
        if not 0 <= self.day_start_offset < self.slots_per_day:
            raise ValueError("day_start_offset out of range")

    @property
    def minutes_per_slot(self) -> int:
        return MINUTES_PER_DAY // self.slots_per_day

    @property
    def slot_hours(self) -> float:
        return self.minutes_per_slot / 60.0

    def slot_of_time(self, hour: int, minute: int = 0) -> int:
        """Slot index containing the wall-clock time ``hour:minute``."""
        minutes = hour * 60 + minute
        return ((minutes // self.minutes_per_slot) + self.day_start_offset) % self.slots_per_day

    def window_slots(self, start_slot: int, end_slot: int) -> list[int]:
        """Chronological slot indices from start (inclusive) to end (exclusive).

        Wraps past midnight when ``end_slot <= start_slot``.
        """
        n = self.slots_per_day
        if not (0 <= start_slot < n and 0 <= end_slot < n):
            raise ValueError("window slots out of range")
        if start_slot < end_slot:
            return list(range(start_slot, end_slot))
        return list(range(start_slot, n)) + list(range(0, end_slot))


@dataclass(frozen=True)
class DayProfile:
    """One day of demand samples in kW at the clock resolution."""

    date_tag: str
    kind: DayKind
    samples: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=float)
        object.__setattr__(self, "samples", arr)
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"day {self.date_tag}: non-finite samples")
        if np.any(arr < 0):
            raise ValueError(f"day {self.date_tag}: negative demand")

    def __eq__(self, other):
        if not isinstance(other, DayProfile):
            return NotImplemented
        return (
            self.date_tag == other.date_tag
            and self.kind == other.kind
            and self.samples.shape == other.samples.shape
            and bool(np.all(self.samples == other.samples))
        )


@dataclass
class HistoryWindow:
    """Ordered demand history, oldest day first, bounded by ``capacity``."""

    days: list[DayProfile] = field(default_factory=list)
    capacity: int = 365

    def __post_init__(self):
        self._check_order(self.days)
        if len(self.days) > self.capacity:
            raise ValueError("more days than capacity")

    @staticmethod
    def _check_order(days):
        for a, b in zip(days, days[1:]):
            if not a.date_tag < b.date_tag:
                raise ValueError(f"days out of order: {a.date_tag!r} !< {b.date_tag!r}")

    def push(self, day: DayProfile) -> None:
        """Append a day, evicting the oldest once capacity is reached."""
        if self.days and not self.days[-1].date_tag < day.date_tag:
            raise ValueError(f"day {day.date_tag!r} not after {self.days[-1].date_tag!r}")
        self.days.append(day)
        if len(self.days) > self.capacity:
            self.days.pop(0)

    def last(self) -> DayProfile:
        if not self.days:
            raise ValueError("empty history")
        return self.days[-1]

    def __len__(self) -> int:
        return len(self.days)

    def __eq__(self, other):
        if not isinstance(other, HistoryWindow):
            return NotImplemented
        return self.capacity == other.capacity and self.days == other.days


@dataclass(frozen=True)
class EvSpec:
    """Physical EV parameters.

    Defaults describe a mainstream compact EV: 24 kWh pack, 3.3 kW home
    charger, 0.15 kWh/km over a 50 km daily round trip.
    """

    battery_capacity: float = 24.0  # kWh
    charge_power: float = 3.3  # kW while charging
    trip_energy: float = 7.5  # kWh consumed per daily trip
    target_soc: float = 0.8

    def __post_init__(self):
        if min(self.battery_capacity, self.charge_power, self.trip_energy, self.target_soc) <= 0:
            raise ValueError("all EV parameters must be positive")
        if self.target_soc > 1:
            raise ValueError("target_soc must be in (0, 1]")
        if self.trip_energy >= self.battery_capacity:
            raise ValueError("trip must not drain the whole battery")

    def soc_per_slot(self, clock: SlotClock) -> float:
        """SOC gained by charging for one slot."""
        return self.charge_power * clock.slot_hours / self.battery_capacity

    def trip_soc(self) -> float:
        return self.trip_energy / self.battery_capacity


# One car per household; the EV count follows directly from the penetration
# rate unless a config pins it explicitly.
VEHICLES_PER_HOUSEHOLD = 1.0


@dataclass(frozen=True)
class ScenarioConfig:
    """Community-level scenario parameters.

    ``n_evs`` defaults to ``round(n_households * ev_penetration)``; passing it
    explicitly overrides the formula (the full-scale config pins 90).
    """

    n_households: int = 230
    ev_penetration: float = 0.4
    n_evs: int | None = None
    avail_start_slot: int = 36  # 18:00 at half-hourly resolution
    avail_end_slot: int = 18  # 09:00, exclusive
    soc_init_range: tuple[float, float] = (0.17, 0.67)
    n_episodes: int = 60
    exploration_episodes: int = 40
    rng_seed: int = 1
    price_coefficient: float = 0.01  # currency per kW of aggregate demand

    def __post_init__(self):
        if self.n_households <= 0 or not (0 < self.ev_penetration <= 1):
            raise ValueError("bad household/penetration values")
        lo, hi = self.soc_init_range
        if not (0 <= lo < hi <= 1):
            raise ValueError("soc_init_range must satisfy 0 <= lo < hi <= 1")
        if self.n_evs is None:
            object.__setattr__(
                self,
                "n_evs",
                round(self.n_households * self.ev_penetration * VEHICLES_PER_HOUSEHOLD),
            )
        if self.n_evs <= 0:
            raise ValueError("scenario needs at least one EV")
        if self.exploration_episodes > self.n_episodes:
            raise ValueError("exploration_episodes exceeds n_episodes")

    def window_slots(self, clock: SlotClock) -> list[int]:
        slots = clock.window_slots(self.avail_start_slot, self.avail_end_slot)
        if not slots:
            raise ValueError("empty availability window")
        return slots


def _kind_of_date(d: _dt.date) -> DayKind:
    return DayKind.WEEKEND if d.weekday() >= 5 else DayKind.WEEKDAY


# ---------------------------------------------------------------------------
# Demand CSV ingestion
# ---------------------------------------------------------------------------

def load_history(path: str | Path, clock: SlotClock, capacity: int = 365) -> HistoryWindow:
    """Read a ``timestamp,kw`` CSV into day profiles.

    Rows may be at the clock resolution or finer; finer rows are averaged
    down to slots. Days missing more than 5% of their slots raise
    :class:`GapInData`; smaller gaps are filled by linear interpolation.
    A partial trailing day is discarded.
    """
    path = Path(path)
    per_day: dict[_dt.date, dict[int, list[float]]] = {}
    order: list[_dt.date] = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip().lower() for c in header[:2]] != ["timestamp", "kw"]:
            raise MalformedRow(1, "expected header 'timestamp,kw'")
        for line_no, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) < 2:
                raise MalformedRow(line_no, f"expected 2 fields, got {len(row)}")
            try:
                ts = _dt.datetime.fromisoformat(row[0].strip())
            except ValueError:
                raise MalformedRow(line_no, f"bad timestamp {row[0]!r}") from None
            try:
                kw = float(row[1])
            except ValueError:
                raise MalformedRow(line_no, f"bad kw value {row[1]!r}") from None
            if not math.isfinite(kw) or kw < 0:
                raise MalformedRow(line_no, f"kw must be finite and >= 0, got {row[1]}")
            day = ts.date()
            slot = clock.slot_of_time(ts.hour, ts.minute)
            if day not in per_day:
                per_day[day] = {}
                order.append(day)
            per_day[day].setdefault(slot, []).append(kw)

    days: list[DayProfile] = []
    n = clock.slots_per_day
    max_missing = int(GAP_TOLERANCE * n)
    for day in sorted(order):
        slots = per_day[day]
        missing = n - len(slots)
        if missing > max_missing:
            if day == max(order):
                continue  # partial trailing day
            raise GapInData(day.isoformat(), missing, n)
        samples = np.full(n, np.nan)
        for s, values in slots.items():
            samples[s] = sum(values) / len(values)
        if missing:
            idx = np.arange(n)
            known = ~np.isnan(samples)
            samples = np.interp(idx, idx[known], samples[known])
        days.append(DayProfile(day.isoformat(), _kind_of_date(day), samples))
    return HistoryWindow(days=days, capacity=max(capacity, len(days)))


def write_history(path: str | Path, history: HistoryWindow, clock: SlotClock) -> None:
    """Write a history back to the CSV format read by :func:`load_history`."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", "kw"])
        for day in history.days:
            date = _dt.date.fromisoformat(day.date_tag)
            for slot, kw in enumerate(day.samples):
                minutes = ((slot - clock.day_start_offset) % clock.slots_per_day) * clock.minutes_per_slot
                ts = _dt.datetime.combine(date, _dt.time(minutes // 60, minutes % 60))
                writer.writerow([ts.isoformat(), repr(float(kw))])


# ---------------------------------------------------------------------------
# Synthetic baseload
# ---------------------------------------------------------------------------

# Multiplicative day-of-week gains per daypart: each weekday has its own
# particularities on top of the weekday/weekend split, so naive yesterday-
# equals-today forecasting carries a systematic error.
_DAYPART_EDGES = (0.0, 6.5, 10.5, 17.0, 24.0)  # night, morning, midday, evening
_DOW_GAINS = {
    0: (0.00, 0.05, -0.02, -0.02),  # Monday
    1: (0.00, -0.02, 0.01, 0.03),
    2: (0.01, 0.00, 0.04, -0.04),
    3: (-0.01, 0.03, -0.02, 0.04),
    4: (0.03, -0.04, 0.02, -0.06),  # Friday evening out
    5: (0.02, -0.02, 0.03, 0.02),  # Saturday
    6: (-0.02, 0.02, -0.03, -0.04),  # Sunday
}


def _dow_gain(hours: np.ndarray, weekday: int) -> np.ndarray:
    gains = _DOW_GAINS[weekday]
    out = np.ones_like(hours)
    for lo, hi, g in zip(_DAYPART_EDGES, _DAYPART_EDGES[1:], gains):
        out[(hours >= lo) & (hours < hi)] += g
    return out


# Per-household anchor profiles in kW, linearly interpolated over the day.
# Deep flat night valley, gradual shoulders, busy daytime, tall evening peak.
_WEEKDAY_ANCHORS = (
    (0.0, 0.66), (0.5, 0.58), (1.0, 0.50), (1.5, 0.44), (2.0, 0.39), (2.5, 0.35),
    (3.0, 0.33), (6.0, 0.33), (6.5, 0.40), (7.25, 0.56), (8.0, 0.70),
    (8.75, 0.83), (9.25, 0.88), (11.0, 0.58), (13.5, 0.62),
    (16.0, 0.66), (17.5, 1.12), (19.25, 1.30), (21.0, 1.10), (22.0, 1.00),
    (23.0, 0.86), (23.5, 0.75), (24.0, 0.66),
)
_WEEKEND_ANCHORS = (
    (0.0, 0.70), (0.5, 0.62), (1.0, 0.53), (1.5, 0.46), (2.0, 0.41), (2.5, 0.37),
    (3.0, 0.35), (6.5, 0.35), (7.5, 0.44), (8.5, 0.58), (9.5, 0.74),
    (10.5, 0.84), (11.0, 0.86), (13.5, 0.92), (16.0, 0.88), (17.5, 1.06),
    (19.0, 1.20), (21.0, 1.04), (22.0, 1.00), (23.0, 0.88), (23.5, 0.78),
    (24.0, 0.70),
)


def _shape_template(clock: SlotClock, kind: DayKind,
                    morning_shift: float = 0.0, evening_shift: float = 0.0) -> np.ndarray:
    """Per-household demand shape in kW. Weekends wake later and idle higher
    at midday; both variants share the deep night valley. The shift arguments
    move the morning (06:00-10:30) and evening (17:00-23:30) anchor hours to
    model day-to-day peak-timing wobble."""
    anchors = _WEEKEND_ANCHORS if kind is DayKind.WEEKEND else _WEEKDAY_ANCHORS
    hours_anchor = np.array([a[0] for a in anchors])
    values = np.array([a[1] for a in anchors])
    if morning_shift:
        sel = (hours_anchor >= 6.0) & (hours_anchor <= 10.5)
        hours_anchor = np.where(sel, hours_anchor + morning_shift, hours_anchor)
    if evening_shift:
        sel = (hours_anchor >= 17.0) & (hours_anchor <= 23.5)
        hours_anchor = np.where(sel, hours_anchor + evening_shift, hours_anchor)
    s = np.arange(clock.slots_per_day, dtype=float)
    hours = (s - clock.day_start_offset) % clock.slots_per_day * clock.slot_hours
    return np.interp(hours, hours_anchor, values)


def synth_baseload(
    days: int,
    clock: SlotClock,
    seed: int,
    n_households: int = 1,
    start_date: str = "2024-03-04",
    trend_per_day: float = 0.0025,
    noise_sigma: float = 0.015,
) -> HistoryWindow:
    """Generate a deterministic synthetic residential demand history.

    The shape is double-peaked (morning ~08:00, evening ~19:00) with a night
    trough, separate weekday/weekend templates, multiplicative per-slot and
    per-day noise, day-to-day peak-timing wobble, and a slow multiplicative
    trend so that consecutive weeks differ — the drift the monitoring
    pipeline is meant to notice.
    """
    if days < 1:
        raise ValueError("days must be >= 1")
    rng = np.random.default_rng(seed)
    first = _dt.date.fromisoformat(start_date)
    out: list[DayProfile] = []
    hours = (np.arange(clock.slots_per_day) - clock.day_start_offset) % clock.slots_per_day * clock.slot_hours
    for d in range(days):
        date = first + _dt.timedelta(days=d)
        kind = _kind_of_date(date)
        shifts = rng.uniform(-0.4, 0.4, size=2)
        shape = _shape_template(clock, kind, morning_shift=shifts[0], evening_shift=shifts[1])
        shape = shape * _dow_gain(hours, date.weekday())
        trend = (1.0 + trend_per_day) ** d
        season = 1.0 + 0.03 * math.sin(2 * math.pi * d / 28.0)
        day_scale = 1.0 + rng.normal(0.0, 0.015)
        slot_noise = 1.0 + rng.normal(0.0, noise_sigma, size=clock.slots_per_day)
        samples = n_households * shape * trend * season * day_scale * np.clip(slot_noise, 0.5, 1.5)
        out.append(DayProfile(date.isoformat(), kind, np.maximum(samples, 0.0)))
    return HistoryWindow(days=out, capacity=max(365, days))


def inject_anomaly(
    day: DayProfile, kind: AnomalyKind, magnitude: float, seed: int = 0
) -> DayProfile:
    """Return a copy of ``day`` with a synthetic anomalous event.

    ``scale`` multiplies everything after 07:00 by ``1 + magnitude``;
    ``shift`` rotates the post-07:00 curve later by ``magnitude * 4`` hours;
    ``plateau`` pulls midday (11:00-15:00) toward the day mean by
    ``magnitude``. The seed is reserved for randomised variants; the current
    kinds are deterministic. The input day is never mutated.
    """
    if not 0 < magnitude <= 1:
        raise ValueError("magnitude must be in (0, 1]")
    n = len(day.samples)
    clock = SlotClock(slots_per_day=n)
    samples = day.samples.copy()
    start = clock.slot_of_time(7, 0)
    if kind is AnomalyKind.SCALE:
        samples[start:] *= 1.0 + magnitude
    elif kind is AnomalyKind.SHIFT:
        k = round(magnitude * 4 / clock.slot_hours)
        if k:
            seg = samples[start:]
            samples[start:] = np.roll(seg, k % len(seg))
    elif kind is AnomalyKind.PLATEAU:
        lo = clock.slot_of_time(11, 0)
        hi = clock.slot_of_time(15, 0)
        mean = float(day.samples.mean())
        samples[lo:hi] = (1.0 - magnitude) * samples[lo:hi] + magnitude * mean
    else:
        raise ValueError(f"unknown anomaly kind {kind!r}")
    return DayProfile(day.date_tag, day.kind, np.maximum(samples, 0.0))


# ---------------------------------------------------------------------------
# Config files: flat "key = value" text
# ---------------------------------------------------------------------------

_SCENARIO_KEYS = {
    "n_households": int,
    "ev_penetration": float,
    "n_evs": int,
    "avail_start_slot": int,
    "avail_end_slot": int,
    "soc_init_lo": float,
    "soc_init_hi": float,
    "n_episodes": int,
    "exploration_episodes": int,
    "rng_seed": int,
    "price_coefficient": float,
}

# Non-scenario knobs accepted in the same file, namespaced by subsystem.
_EXTENSION_KEYS = {
    "ev.battery_capacity": float,
    "ev.charge_power": float,
    "ev.trip_energy": float,
    "ev.target_soc": float,
    "agents.alpha": float,
    "agents.gamma": float,
    "agents.epsilon_start": float,
    "agents.epsilon_end": float,
    "agents.soc_buckets": int,
    "agents.reward_charge_ok": float,
    "agents.reward_overcharge": float,
    "agents.reward_price_low": float,
    "agents.reward_price_medium": float,
    "agents.reward_price_high": float,
    "agents.terminal_miss_penalty": float,
    "forecast.hidden_units": int,
    "forecast.epochs": int,
    "forecast.learning_rate": float,
    "driftwatch.change_threshold": float,
    "driftwatch.som_rows": int,
    "driftwatch.som_cols": int,
    "driftwatch.som_iterations": int,
    "run.history_days": int,
    "run.n_runs": int,
    "run.method": str,
    "run.prediction_mode": str,
    "run.anomaly_magnitude": float,
    "run.deviation_threshold": float,
}

KNOWN_CONFIG_KEYS = dict(_SCENARIO_KEYS) | dict(_EXTENSION_KEYS)


def parse_kv_file(path: str | Path) -> dict[str, str]:
    """Parse a flat ``key = value`` file. Unknown keys are a hard error."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    values: dict[str, str] = {}
    for line_no, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{line_no}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KNOWN_CONFIG_KEYS:
            raise ConfigError(f"{path}:{line_no}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{path}:{line_no}: duplicate key {key!r}")
        values[key] = value
    return values


def _convert(key: str, raw: str):
    typ = KNOWN_CONFIG_KEYS[key]
    try:
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"key {key!r}: cannot parse {raw!r} as {typ.__name__}") from None


def scenario_from_mapping(values: dict[str, str]) -> ScenarioConfig:
    """Build a ScenarioConfig from parsed key/value strings."""
    kwargs = {}
    for key in _SCENARIO_KEYS:
        if key not in values:
            continue
        kwargs[key] = _convert(key, values[key])
    lo = kwargs.pop("soc_init_lo", None)
    hi = kwargs.pop("soc_init_hi", None)
    if (lo is None) != (hi is None):
        raise ConfigError("soc_init_lo and soc_init_hi must be given together")
    if lo is not None:
        kwargs["soc_init_range"] = (lo, hi)
    try:
        return ScenarioConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_scenario_config(path: str | Path) -> ScenarioConfig:
    return scenario_from_mapping(parse_kv_file(path))
