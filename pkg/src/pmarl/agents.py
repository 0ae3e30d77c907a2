"""Per-EV learning agents: two tabular Q-learners under W-learning arbitration.

Each vehicle runs one Q-table per objective — reach the charge target, avoid
charging into high demand — plus one W-table per objective. At every slot the
objective with the higher W-value for the current state nominates its greedy
action; only the losing objective's W is updated, with the regret it suffered
under the winner's choice.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .scenario import EvSpec

TABLE_FORMAT_VERSION = 1


class Action(enum.IntEnum):
    IDLE = 0
    CHARGE = 1


ACTIONS = (Action.IDLE, Action.CHARGE)


class DemandLevel(enum.IntEnum):
    LOW = 0
    MEDIUM = 1
    HIGH = 2


def demand_level(value_kw: float, mean_kw: float, std_kw: float) -> DemandLevel:
    """Three-way classification against forecast statistics.

    Low strictly below mean - std/2, high strictly above mean + std/2,
    medium on the boundaries and between.
    """
    if value_kw < mean_kw - 0.5 * std_kw:
        return DemandLevel.LOW
    if value_kw > mean_kw + 0.5 * std_kw:
        return DemandLevel.HIGH
    return DemandLevel.MEDIUM


class AgentState(NamedTuple):
    slot_of_window: int
    soc_bucket: int
    demand_level: DemandLevel


@dataclass
class RewardParams:
    """Reward magnitudes; the high-demand penalty is sized so the price
    objective can outvote the charge objective near peaks."""

    charge_ok: float = 1.0
    overcharge: float = -1.0
    price_low: float = 1.0
    price_medium: float = 0.0
    price_high: float = -2.0
    terminal_miss_penalty: float = -5.0

    def max_abs_step_reward(self) -> float:
        return max(
            abs(self.charge_ok) + abs(self.terminal_miss_penalty),
            abs(self.overcharge) + abs(self.terminal_miss_penalty),
            abs(self.price_low),
            abs(self.price_medium),
            abs(self.price_high),
        )


@dataclass
class LearningParams:
    alpha: float = 0.1
    gamma: float = 0.9
    epsilon_start: float = 0.9
    epsilon_end: float = 0.05
    soc_buckets: int = 10
    # Re-sweeps of an episode's own transitions, newest first, after the
    # episode ends; speeds up credit propagation along the visited path.
    replay_sweeps: int = 1
    rewards: RewardParams = field(default_factory=RewardParams)

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must be in (0, 1]")
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must be in [0, 1)")

    def epsilon_for_episode(self, episode: int, exploration_episodes: int) -> float:
        """Linear decay across the exploration phase, zero afterwards."""
        if episode >= exploration_episodes:
            return 0.0
        if exploration_episodes <= 1:
            return self.epsilon_start
        frac = episode / (exploration_episodes - 1)
        return self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac

    def q_bound(self) -> float:
        return self.rewards.max_abs_step_reward() / (1.0 - self.gamma)


class QTable:
    """Sparse state-action value table; missing entries read as zero."""

    def __init__(self, alpha: float = 0.1, gamma: float = 0.9):
        if not 0 < alpha <= 1:
            raise ValueError("alpha must be in (0, 1]")
        if not 0 <= gamma < 1:
            raise ValueError("gamma must be in [0, 1)")
        self.alpha = alpha
        self.gamma = gamma
        self.values: dict[tuple[AgentState, Action], float] = {}

    def get(self, s: AgentState, a: Action) -> float:
        return self.values.get((s, a), 0.0)

    def max_q(self, s: AgentState | None) -> float:
        if s is None:  # terminal
            return 0.0
        return max(self.values.get((s, a), 0.0) for a in ACTIONS)

    def greedy_action(self, s: AgentState) -> Action:
        """Argmax over actions; an exact tie prefers idling."""
        q_idle = self.get(s, Action.IDLE)
        q_charge = self.get(s, Action.CHARGE)
        return Action.CHARGE if q_charge > q_idle else Action.IDLE

    def max_abs(self) -> float:
        return max((abs(v) for v in self.values.values()), default=0.0)


class WTable:
    """Per-state arbitration weights; missing entries read as zero."""

    def __init__(self):
        self.values: dict[AgentState, float] = {}

    def get(self, s: AgentState) -> float:
        return self.values.get(s, 0.0)


def q_update(table: QTable, s: AgentState, a: Action, r: float,
             s_next: AgentState | None) -> QTable:
    """One-step Q-learning update; ``s_next=None`` marks a terminal transition."""
    old = table.get(s, a)
    target = r + table.gamma * table.max_q(s_next)
    table.values[(s, a)] = old + table.alpha * (target - old)
    return table


def w_update(w: WTable, s: AgentState, q_obeyed: QTable, winner_action: Action,
             r: float, s_next: AgentState | None) -> WTable:
    """Update the losing objective's W with its regret for the winner's choice.

    ``q_obeyed`` is the loser's own Q-table and ``r`` the loser's reward under
    the executed (winner's) action; the winner's W is left untouched by the
    caller. ``winner_action`` is recorded in the signature for symmetry with
    the Q update but the regret depends on it only through ``r`` and
    ``s_next``.
    """
    regret = q_obeyed.max_q(s) - (r + q_obeyed.gamma * q_obeyed.max_q(s_next))
    old = w.get(s)
    w.values[s] = (1.0 - q_obeyed.alpha) * old + q_obeyed.alpha * regret
    return w


class Objective(enum.Enum):
    CHARGE = "charge"
    PRICE = "price"


class Decision(NamedTuple):
    action: Action
    winner: Objective | None  # None when explored or forced
    explored: bool
    forced: bool  # physical constraint decided, not the learner


class EvAgent:
    """One vehicle's learning state."""

    def __init__(self, agent_id: int, spec: EvSpec, params: LearningParams,
                 run_seed: int, soc: float = 0.5):
        self.agent_id = agent_id
        self.spec = spec
        self.params = params
        self.soc = soc
        self.q_charge = QTable(params.alpha, params.gamma)
        self.q_price = QTable(params.alpha, params.gamma)
        self.w_charge = WTable()
        self.w_price = WTable()
        self.epsilon = params.epsilon_start
        self.rng = np.random.default_rng(run_seed ^ agent_id)

    def min_departure_soc(self) -> float:
        """Lowest acceptable SOC at departure: tomorrow's trip plus an equal
        reserve, so the vehicle can never run itself flat."""
        return min(2.0 * self.spec.trip_soc(), self.spec.target_soc)

    def decide(self, s_charge: AgentState, s_price: AgentState,
               soc_quantum: float, slots_remaining: int | None = None) -> Decision:
        """Pick an action for the slot.

        Physical constraints fire first: idle when (nearly) full, charge when
        the remaining window is only just long enough to reach the departure
        reserve. Otherwise epsilon-uniform exploration, then W-learning
        arbitration between the two objectives.
        """
        if self.soc + soc_quantum > 1.0 + 1e-12:
            return Decision(Action.IDLE, None, False, True)
        if slots_remaining is not None:
            deficit = self.min_departure_soc() - self.soc
            if deficit > 0 and math.ceil(deficit / soc_quantum - 1e-9) >= slots_remaining:
                return Decision(Action.CHARGE, None, False, True)
        if self.epsilon > 0.0 and self.rng.random() < self.epsilon:
            action = Action.CHARGE if self.rng.random() < 0.5 else Action.IDLE
            return Decision(action, None, True, False)
        # Ties go to the price objective: grid-safety first.
        if self.w_price.get(s_price) >= self.w_charge.get(s_charge):
            return Decision(self.q_price.greedy_action(s_price), Objective.PRICE, False, False)
        return Decision(self.q_charge.greedy_action(s_charge), Objective.CHARGE, False, False)


def select_action(agent: EvAgent, s_charge: AgentState, s_price: AgentState,
                  soc_quantum: float, slots_remaining: int | None = None) -> Action:
    """Arbitrated action for the current slot (see :meth:`EvAgent.decide`)."""
    return agent.decide(s_charge, s_price, soc_quantum, slots_remaining).action


def reward_charge(agent: EvAgent, action: Action, soc_after: float,
                  soc_quantum: float = 0.0) -> float:
    """Charging toward the target pays off; charging past it is penalised.

    The slot that crosses the target still counts toward it (slot-quantised
    charging almost always overshoots a little); overcharging means the
    charge began at or above the target.
    """
    r = agent.params.rewards
    if action is not Action.CHARGE:
        return 0.0
    started_at = soc_after - soc_quantum
    return r.overcharge if started_at >= agent.spec.target_soc - 1e-12 else r.charge_ok


def reward_price(agent: EvAgent, action: Action, level: DemandLevel) -> float:
    """Charging is rewarded at low demand and penalised at high demand."""
    r = agent.params.rewards
    if action is not Action.CHARGE:
        return 0.0
    return {
        DemandLevel.LOW: r.price_low,
        DemandLevel.MEDIUM: r.price_medium,
        DemandLevel.HIGH: r.price_high,
    }[level]


def soc_bucket(soc: float, n_buckets: int) -> int:
    return min(int(soc * n_buckets), n_buckets - 1)


# ---------------------------------------------------------------------------
# Table persistence (inspection and warm starts)
# ---------------------------------------------------------------------------

def _state_key(s: AgentState) -> list:
    return [s.slot_of_window, s.soc_bucket, int(s.demand_level)]


def dump_tables(agent: EvAgent, path: str | Path) -> None:
    def q_entries(table: QTable):
        return sorted(
            [_state_key(s) + [int(a), v] for (s, a), v in table.values.items()]
        )

    def w_entries(table: WTable):
        return sorted([_state_key(s) + [v] for s, v in table.values.items()])

    doc = {
        "format_version": TABLE_FORMAT_VERSION,
        "agent_id": agent.agent_id,
        "alpha": agent.params.alpha,
        "gamma": agent.params.gamma,
        "q_charge": q_entries(agent.q_charge),
        "q_price": q_entries(agent.q_price),
        "w_charge": w_entries(agent.w_charge),
        "w_price": w_entries(agent.w_price),
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def load_tables(agent: EvAgent, path: str | Path) -> None:
    doc = json.loads(Path(path).read_text())
    if doc.get("format_version") != TABLE_FORMAT_VERSION:
        raise ValueError(f"unsupported table format {doc.get('format_version')!r}")

    def to_state(slot, bucket, level) -> AgentState:
        return AgentState(slot, bucket, DemandLevel(level))

    for table, entries in ((agent.q_charge, doc["q_charge"]), (agent.q_price, doc["q_price"])):
        table.values = {
            (to_state(slot, bucket, level), Action(a)): v
            for slot, bucket, level, a, v in entries
        }
    for table, entries in ((agent.w_charge, doc["w_charge"]), (agent.w_price, doc["w_price"])):
        table.values = {
            to_state(slot, bucket, level): v for slot, bucket, level, v in entries
        }
