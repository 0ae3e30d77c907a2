"""Comparison schedulers: greedy, night-tariff greedy, valley-filling, and an
exhaustive optimum for tiny instances.

The shared objective prices each charging decision at the slot's total load,
so stacking vehicles into one slot is strictly worse than spreading them:

    F(x) = sum_j (N_j + C_j) * N_j,   N_j = number of EVs charging in slot j

with C_j the baseload-driven cost of slot j expressed in charger units.
All schedulers are pure functions and share this single cost definition.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

EXACT_MAX_EVS = 6
EXACT_MAX_SLOTS = 8


class BaselineError(Exception):
    pass


class Infeasible(BaselineError):
    pass


class InfeasibleSchedule(BaselineError):
    pass


class InstanceTooLarge(BaselineError):
    pass


@dataclass(frozen=True)
class ChargingSchedule:
    """0/1 decision matrix, one row per EV, one column per slot."""

    x: np.ndarray
    energy_per_slot: float = 1.65  # kWh delivered by one charging decision

    def __post_init__(self):
        arr = np.asarray(self.x, dtype=np.int8)
        if arr.ndim != 2 or not np.isin(arr, (0, 1)).all():
            raise ValueError("schedule must be a 2-D 0/1 matrix")
        object.__setattr__(self, "x", arr)

    @property
    def n_evs(self) -> int:
        return self.x.shape[0]

    @property
    def n_slots(self) -> int:
        return self.x.shape[1]

    def slot_counts(self) -> np.ndarray:
        """EVs charging per slot (column sums)."""
        return self.x.sum(axis=0)

    def __eq__(self, other):
        if not isinstance(other, ChargingSchedule):
            return NotImplemented
        return (
            self.energy_per_slot == other.energy_per_slot
            and self.x.shape == other.x.shape
            and bool(np.all(self.x == other.x))
        )


@dataclass(frozen=True)
class CostInstance:
    """One day's scheduling problem.

    ``base_cost`` is the per-slot marginal cost of energy before any EV load
    (baseload expressed in charger units so it adds to EV counts);
    ``needs`` the number of charging slots each EV requires; ``availability``
    a per-EV boolean mask (defaults to always available).
    """

    base_cost: np.ndarray
    needs: np.ndarray
    availability: np.ndarray | None = None

    def __post_init__(self):
        cost = np.asarray(self.base_cost, dtype=float)
        needs = np.asarray(self.needs, dtype=int)
        if np.any(cost < 0) or not np.all(np.isfinite(cost)):
            raise ValueError("base costs must be finite and >= 0")
        if np.any(needs < 0):
            raise ValueError("needs must be >= 0")
        avail = self.availability
        if avail is None:
            avail = np.ones((needs.size, cost.size), dtype=bool)
        else:
            avail = np.asarray(avail, dtype=bool)
            if avail.shape != (needs.size, cost.size):
                raise ValueError("availability shape mismatch")
        object.__setattr__(self, "base_cost", cost)
        object.__setattr__(self, "needs", needs)
        object.__setattr__(self, "availability", avail)

    @property
    def n_evs(self) -> int:
        return self.needs.size

    @property
    def n_slots(self) -> int:
        return self.base_cost.size

    def check_feasible(self) -> None:
        slots_available = self.availability.sum(axis=1)
        bad = np.nonzero(self.needs > slots_available)[0]
        if bad.size:
            i = int(bad[0])
            raise Infeasible(
                f"EV {i} needs {self.needs[i]} slots but only "
                f"{slots_available[i]} are available"
            )


def cost(instance: CostInstance, schedule: ChargingSchedule) -> float:
    """Objective value of a schedule; infeasible placements raise."""
    if schedule.x.shape != (instance.n_evs, instance.n_slots):
        raise InfeasibleSchedule("schedule shape does not match instance")
    if np.any(schedule.x & ~instance.availability):
        raise InfeasibleSchedule("schedule charges outside availability")
    counts = schedule.slot_counts().astype(float)
    return float(np.sum((counts + instance.base_cost) * counts))


def marginal_cost(base_cost: float, current_count: int) -> float:
    """Cost increase from adding one more EV to a slot."""
    return 2.0 * current_count + 1.0 + base_cost


def greedy_schedule(instance: CostInstance) -> ChargingSchedule:
    """Each EV charges in its earliest available slots until its need is met."""
    instance.check_feasible()
    x = np.zeros((instance.n_evs, instance.n_slots), dtype=np.int8)
    for i in range(instance.n_evs):
        slots = np.nonzero(instance.availability[i])[0][: instance.needs[i]]
        x[i, slots] = 1
    return ChargingSchedule(x)


def night_greedy_schedule(instance: CostInstance, tariff_start_slot: int) -> ChargingSchedule:
    """Greedy, but slots before the night tariff are off limits.

    ``tariff_start_slot`` indexes the instance's slot axis. A window too
    short after the tariff start is reported as infeasible, never silently
    relaxed.
    """
    masked = CostInstance(
        base_cost=instance.base_cost,
        needs=instance.needs,
        availability=instance.availability & (np.arange(instance.n_slots) >= tariff_start_slot),
    )
    try:
        masked.check_feasible()
    except Infeasible as exc:
        raise Infeasible(f"night tariff window too short: {exc}") from None
    return greedy_schedule(masked)


def valley_fill(instance: CostInstance) -> ChargingSchedule:
    """Iterative marginal-cost filling.

    Repeatedly, the EV with the fewest remaining feasible slots places one
    unit of charge in its cheapest available slot, where the marginal cost
    counts charge already placed. Ties break on the lowest index, so the
    result is deterministic.
    """
    instance.check_feasible()
    n, m = instance.n_evs, instance.n_slots
    x = np.zeros((n, m), dtype=np.int8)
    counts = np.zeros(m, dtype=int)
    remaining = instance.needs.copy()
    free_slots = instance.availability.sum(axis=1) - instance.needs

    while True:
        pending = np.nonzero(remaining > 0)[0]
        if pending.size == 0:
            break
        # Most constrained first: fewest unused feasible slots.
        i = int(pending[np.argmin(free_slots[pending] + remaining[pending])])
        slots = np.nonzero(instance.availability[i] & (x[i] == 0))[0]
        margins = np.array([marginal_cost(instance.base_cost[j], counts[j]) for j in slots])
        j = int(slots[np.argmin(margins)])
        x[i, j] = 1
        counts[j] += 1
        remaining[i] -= 1
    return ChargingSchedule(x)


def solve_exact(instance: CostInstance) -> ChargingSchedule:
    """Global optimum by slot-wise enumeration with memoisation.

    Guarded to tiny instances. Ties are resolved toward the schedule whose
    slot-major flattening is lexicographically smallest.
    """
    if instance.n_evs > EXACT_MAX_EVS or instance.n_slots > EXACT_MAX_SLOTS:
        raise InstanceTooLarge(
            f"exact solver limited to {EXACT_MAX_EVS} EVs x {EXACT_MAX_SLOTS} slots"
        )
    instance.check_feasible()
    n, m = instance.n_evs, instance.n_slots
    if n == 0:
        return ChargingSchedule(np.zeros((0, m), dtype=np.int8))
    avail = instance.availability
    base = instance.base_cost

    # Subsets enumerated in increasing binary order; lower bits = lower EV
    # index, so the first minimal-cost hit is already the lexicographic
    # winner per slot.
    subsets = list(range(1 << n))
    members = [tuple(i for i in range(n) if mask >> i & 1) for mask in subsets]

    # Remaining needs can never exceed remaining available slots.
    slots_after = [avail[:, j:].sum(axis=1) for j in range(m + 1)]

    @lru_cache(maxsize=None)
    def best(j: int, remaining: tuple[int, ...]):
        if j == m:
            return (0.0, ()) if not any(remaining) else None
        if any(r > s for r, s in zip(remaining, slots_after[j])):
            return None
        top: tuple[float, tuple] | None = None
        for mask in subsets:
            size = 0
            ok = True
            for i in members[mask]:
                if remaining[i] == 0 or not avail[i, j]:
                    ok = False
                    break
                size += 1
            if not ok:
                continue
            nxt = tuple(
                r - 1 if mask >> i & 1 else r for i, r in enumerate(remaining)
            )
            sub = best(j + 1, nxt)
            if sub is None:
                continue
            total = (size + base[j]) * size + sub[0]
            if top is None or total < top[0] - 1e-12:
                top = (total, (mask,) + sub[1])
        return top

    result = best(0, tuple(int(v) for v in instance.needs))
    best.cache_clear()
    if result is None:
        raise Infeasible("no feasible assignment exists")
    x = np.zeros((n, m), dtype=np.int8)
    for j, mask in enumerate(result[1]):
        for i in members[mask]:
            x[i, j] = 1
    return ChargingSchedule(x)


def random_feasible_schedule(instance: CostInstance, rng: np.random.Generator) -> ChargingSchedule:
    """Uniformly random slot choice per EV; handy for optimality spot checks."""
    instance.check_feasible()
    x = np.zeros((instance.n_evs, instance.n_slots), dtype=np.int8)
    for i in range(instance.n_evs):
        slots = np.nonzero(instance.availability[i])[0]
        chosen = rng.choice(slots, size=instance.needs[i], replace=False)
        x[i, chosen] = 1
    return ChargingSchedule(x)


# ---------------------------------------------------------------------------
# Instance and schedule files
# ---------------------------------------------------------------------------

def write_instance(path: str | Path, instance: CostInstance) -> None:
    lines = ["base_cost: " + " ".join(repr(float(c)) for c in instance.base_cost)]
    for i in range(instance.n_evs):
        mask = "".join("1" if b else "0" for b in instance.availability[i])
        lines.append(f"ev: need={int(instance.needs[i])} avail={mask}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_instance(path: str | Path) -> CostInstance:
    base_cost: np.ndarray | None = None
    needs: list[int] = []
    masks: list[list[bool]] = []
    for line_no, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("base_cost:"):
            base_cost = np.array([float(v) for v in line.split(":", 1)[1].split()])
        elif line.startswith("ev:"):
            fields = dict(part.split("=", 1) for part in line.split(":", 1)[1].split())
            needs.append(int(fields["need"]))
            masks.append([ch == "1" for ch in fields["avail"]])
        else:
            raise BaselineError(f"{path}:{line_no}: unrecognised line {raw!r}")
    if base_cost is None:
        raise BaselineError(f"{path}: missing base_cost line")
    availability = np.array(masks, dtype=bool) if masks else None
    return CostInstance(base_cost, np.array(needs, dtype=int), availability)


def write_schedule_csv(path: str | Path, schedule: ChargingSchedule) -> None:
    rows = [",".join(str(int(v)) for v in row) for row in schedule.x]
    Path(path).write_text("\n".join(rows) + ("\n" if rows else ""))
