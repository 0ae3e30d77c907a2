"""End-to-end experiment orchestration.

One run replays a single scenario day: gather history, forecast the replay
day (perfectly, with the trained network, or through the drift-triggered
reprediction pathway), run learning/exploitation episodes for the chosen
method, and score every episode against the valley-filling optimum. The
availability window wraps midnight, so the same day profile supplies both
its evening and the following morning — the day is literally replayed.

Demand aggregation is additive: baseload plus charger power times the number
of charging vehicles, no power-flow physics.
"""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import agents as agents_mod
from .agents import (
    Action,
    AgentState,
    Decision,
    DemandLevel,
    EvAgent,
    LearningParams,
    Objective,
    demand_level,
    q_update,
    reward_charge,
    reward_price,
    soc_bucket,
    w_update,
)
from .baselines import (
    ChargingSchedule,
    CostInstance,
    greedy_schedule,
    night_greedy_schedule,
    valley_fill,
)
from .driftwatch import (
    DEFAULT_CHANGE_THRESHOLD,
    ChangeVerdict,
    SomParams,
    check_and_repredict,
    som_train,
)
from .forecast import Forecast, ForecastSource, mape, train_forecaster
from .scenario import (
    AnomalyKind,
    ConfigError,
    DayProfile,
    EvSpec,
    HistoryWindow,
    ScenarioConfig,
    SlotClock,
    inject_anomaly,
    parse_kv_file,
    scenario_from_mapping,
    synth_baseload,
)

REPORT_FORMAT_VERSION = 1


class EngineError(Exception):
    pass


class SpanMismatch(EngineError):
    """Schedules being compared cover different slot spans."""


class PredictionMode(enum.Enum):
    PERFECT = "perfect"
    SIMPLE = "simple"
    ANOMALY_REPREDICT = "anomaly_repredict"


class Method(enum.Enum):
    PMARL = "pmarl"
    GREEDY = "greedy"
    NIGHT_GREEDY = "night_greedy"
    VALLEY_FILL = "valley_fill"


ALL_METHODS = tuple(Method)
ALL_MODES = tuple(PredictionMode)


@dataclass(frozen=True)
class RunConfig:
    """Everything one experiment needs; defaults mirror the desk scenario."""

    scenario: ScenarioConfig
    prediction_mode: PredictionMode = PredictionMode.PERFECT
    method: Method = Method.PMARL
    n_runs: int = 3
    ev: EvSpec = field(default_factory=EvSpec)
    learning: LearningParams = field(default_factory=LearningParams)
    clock: SlotClock = field(default_factory=SlotClock)
    history_days: int = 60
    forecast_hidden: int = 32
    forecast_epochs: int = 300
    forecast_lr: float = 0.4
    change_threshold: float = DEFAULT_CHANGE_THRESHOLD
    som: SomParams = field(default_factory=SomParams)
    anomaly_magnitude: float = 0.25
    deviation_threshold: float = 0.25
    night_tariff_hour: int = 23

    def __post_init__(self):
        if self.n_runs < 1:
            raise ValueError("n_runs must be >= 1")
        if self.history_days < 2:
            raise ValueError("history_days must be >= 2")


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def efficiency(schedule: ChargingSchedule, optimal: ChargingSchedule, n_evs: int) -> float:
    """Per-slot agreement with the optimal charging counts, in [0, 1].

    Averages ``1 - |X_j - Xhat_j| / n_evs`` over slots, where X_j counts the
    vehicles charging in slot j. Equal schedules score exactly 1.
    """
    if schedule.n_slots != optimal.n_slots:
        raise SpanMismatch(f"{schedule.n_slots} slots vs {optimal.n_slots}")
    if n_evs <= 0:
        raise ValueError("n_evs must be positive")
    counts = schedule.slot_counts().astype(float)
    target = optimal.slot_counts().astype(float)
    return float(np.mean(1.0 - np.abs(counts - target) / n_evs))


def deviation_count(schedule: ChargingSchedule, optimal: ChargingSchedule,
                    n_evs: int, threshold: float = 0.25) -> int:
    """Number of slots deviating from the optimum by more than ``threshold``
    of the fleet."""
    if schedule.n_slots != optimal.n_slots:
        raise SpanMismatch(f"{schedule.n_slots} slots vs {optimal.n_slots}")
    counts = schedule.slot_counts().astype(float)
    target = optimal.slot_counts().astype(float)
    return int(np.count_nonzero(np.abs(counts - target) / n_evs > threshold))


# ---------------------------------------------------------------------------
# World construction
# ---------------------------------------------------------------------------

@dataclass
class World:
    """Immutable-per-run environment snapshot the episodes execute against.

    The baseload day is replayed identically every episode; the fleet's
    morning SOCs are redrawn per episode from the scenario's init range so
    agents experience the whole state space during training.
    """

    config: RunConfig
    run_index: int
    run_seed: int
    window: list[int]  # absolute slot indices, chronological
    baseload: np.ndarray  # realized day profile, kW, full clock
    learn_baseload: np.ndarray  # day replayed during learning episodes
    forecast: Forecast  # forecast used on the scored (exploitation) day
    learn_forecast: Forecast  # forecast used during learning episodes
    forecast_mape: float | None = None
    verdict: ChangeVerdict | None = None

    @property
    def n_evs(self) -> int:
        return self.config.scenario.n_evs

    def window_values(self, samples: np.ndarray) -> np.ndarray:
        return np.asarray([samples[s] for s in self.window])

    def socs_for_episode(self, episode_index: int) -> np.ndarray:
        lo, hi = self.config.scenario.soc_init_range
        rng = np.random.default_rng([self.run_seed, 0x50C, episode_index])
        return rng.uniform(lo, hi, size=self.n_evs)

    def benchmark_for_episode(self, episode_index: int, exploiting: bool = True) -> ChargingSchedule:
        """Valley-fill optimum for that episode's fleet state on the realized day."""
        day = self.baseload if exploiting else self.learn_baseload
        spec = self.config.ev
        quantum = spec.soc_per_slot(self.config.clock)
        needs = _needs_to_target(self.socs_for_episode(episode_index), spec, quantum)
        return valley_fill(_instance(self.window_values(day), needs, spec))


def _run_seed(scenario: ScenarioConfig, run_index: int) -> int:
    return scenario.rng_seed + 7919 * run_index


def _needs_to_target(socs: np.ndarray, spec: EvSpec, quantum: float) -> np.ndarray:
    deficit = np.maximum(spec.target_soc - socs, 0.0)
    return np.ceil(deficit / quantum - 1e-9).astype(int)


def _needs_to_full(socs: np.ndarray, quantum: float) -> np.ndarray:
    return np.floor((1.0 - socs) / quantum + 1e-9).astype(int)


def _instance(base_window_kw: np.ndarray, needs: np.ndarray, spec: EvSpec) -> CostInstance:
    # Baseload in charger units so one EV moves the cost like one EV.
    return CostInstance(base_window_kw / spec.charge_power, needs)


def _pattern_library(history: HistoryWindow, rng: np.random.Generator) -> tuple[HistoryWindow, list[str]]:
    """History plus labelled anomalous exemplars for the matching database."""
    days = list(history.days)
    labels = ["normal"] * len(days)
    weekdays = [d for d in days if d.kind.value == "weekday"][-6:]
    if not weekdays:
        weekdays = days[-6:]
    import datetime as _dt

    last_date = _dt.date.fromisoformat(days[-1].date_tag)
    offset = 1
    for kind in AnomalyKind:
        for magnitude in (0.2, 0.3):
            base = weekdays[(offset - 1) % len(weekdays)]
            injected = inject_anomaly(base, kind, magnitude, seed=int(rng.integers(1 << 30)))
            tag = (last_date + _dt.timedelta(days=offset)).isoformat()
            days.append(DayProfile(tag, injected.kind, injected.samples))
            labels.append(kind.value)
            offset += 1
    return HistoryWindow(days=days, capacity=max(history.capacity, len(days))), labels


def build_world(config: RunConfig, run_index: int) -> World:
    """Assemble the per-run environment: history, replay day, forecast, benchmark."""
    scenario = config.scenario
    clock = config.clock
    run_seed = _run_seed(scenario, run_index)
    window = scenario.window_slots(clock)

    history_full = synth_baseload(
        config.history_days + 1, clock, seed=run_seed, n_households=scenario.n_households
    )
    replay_day = history_full.days[-1]
    history = HistoryWindow(days=history_full.days[:-1], capacity=history_full.capacity)

    mode = config.prediction_mode
    verdict = None
    forecast_err = None
    if mode is PredictionMode.PERFECT:
        learn_day = replay_day
        scored_day = replay_day
        learn_forecast = Forecast.from_samples(replay_day.samples, ForecastSource.ORACLE)
        scored_forecast = learn_forecast
    else:
        net, _ = train_forecaster(
            history,
            hidden_units=config.forecast_hidden,
            epochs=config.forecast_epochs,
            lr=config.forecast_lr,
            seed=run_seed ^ 0xF0CA,
        )
        from .forecast import predict_day

        simple = predict_day(net, history, replay_day.kind, clock)
        learn_day = replay_day
        learn_forecast = simple
        if mode is PredictionMode.SIMPLE:
            scored_day = replay_day
            scored_forecast = simple
        else:
            anomalous = inject_anomaly(
                replay_day, AnomalyKind.SCALE, config.anomaly_magnitude,
                seed=run_seed ^ 0xA770,
            )
            lib_rng = np.random.default_rng(run_seed ^ 0x11B)
            library, labels = _pattern_library(history, lib_rng)
            som = som_train(
                np.stack([d.samples for d in library.days]),
                config.som,
                seed=run_seed ^ 0x50E,
                labels=labels,
            )
            verdict, scored_forecast = check_and_repredict(
                net, som, library, simple, anomalous.samples, clock,
                threshold=config.change_threshold,
            )
            scored_day = anomalous
        forecast_err = mape(scored_day.samples, scored_forecast.samples)

    return World(
        config=config,
        run_index=run_index,
        run_seed=run_seed,
        window=window,
        baseload=scored_day.samples,
        learn_baseload=learn_day.samples,
        forecast=scored_forecast,
        learn_forecast=learn_forecast,
        forecast_mape=forecast_err,
        verdict=verdict,
    )


def make_agents(world: World) -> list[EvAgent]:
    spec = world.config.ev
    params = world.config.learning
    socs = world.socs_for_episode(0)
    return [
        EvAgent(i, spec, params, world.run_seed, soc=float(socs[i]))
        for i in range(world.n_evs)
    ]


# ---------------------------------------------------------------------------
# Episodes
# ---------------------------------------------------------------------------

@dataclass
class EpisodeResult:
    episode_index: int
    schedule: ChargingSchedule
    aggregate_kw: np.ndarray
    efficiency: float
    deviations: int
    socs_end: np.ndarray  # post-trip SOC per EV
    socs_at_departure: np.ndarray


def run_episode(
    world: World,
    agents: list[EvAgent],
    forecast: Forecast,
    episode_index: int = 0,
    epsilon: float = 0.0,
    learn: bool = True,
    baseload: np.ndarray | None = None,
    benchmark: ChargingSchedule | None = None,
) -> EpisodeResult:
    """Step the fleet through one availability window.

    All agents act simultaneously against the pre-decision state; the slot's
    aggregate demand then resolves and rewards flow from the realized demand
    level measured against the forecast statistics. SOC integrates charger
    energy exactly and the daily trip is deducted at the window's end.
    """
    config = world.config
    spec = config.ev
    clock = config.clock
    params = config.learning
    rewards = params.rewards
    baseload = world.baseload if baseload is None else baseload
    if benchmark is None:
        benchmark = world.benchmark_for_episode(episode_index)
    window = world.window
    m = len(window)
    quantum = spec.soc_per_slot(clock)
    mu, sd = forecast.mean_kw, forecast.std_kw
    # Forecast-derived demand level per window slot: the expectation channel.
    state_levels = [demand_level(float(forecast.samples[s]), mu, sd) for s in window]

    init_socs = world.socs_for_episode(episode_index)
    for agent in agents:
        agent.soc = float(init_socs[agent.agent_id])
        agent.epsilon = epsilon

    n = len(agents)
    x = np.zeros((n, m), dtype=np.int8)
    aggregate = np.zeros(m)
    transitions: list[list[tuple]] = [[] for _ in agents]

    for t in range(m):
        decisions: list[tuple[EvAgent, AgentState, Decision]] = []
        level = state_levels[t]
        for agent in agents:
            s = AgentState(t, soc_bucket(agent.soc, params.soc_buckets), level)
            decisions.append((agent, s, agent.decide(s, s, quantum, slots_remaining=m - t)))
        n_charging = sum(1 for _, _, d in decisions if d.action is Action.CHARGE)
        agg_kw = float(baseload[window[t]]) + spec.charge_power * n_charging
        aggregate[t] = agg_kw
        realized = demand_level(agg_kw, mu, sd)
        terminal = t == m - 1

        for agent, s, decision in decisions:
            action = decision.action
            soc_after = agent.soc + (quantum if action is Action.CHARGE else 0.0)
            r_c = reward_charge(agent, action, soc_after, quantum)
            r_p = reward_price(agent, action, realized)
            if terminal and soc_after < spec.target_soc:
                r_c += rewards.terminal_miss_penalty
            if learn:
                s_next = None
                if not terminal:
                    s_next = AgentState(
                        t + 1, soc_bucket(soc_after, params.soc_buckets), state_levels[t + 1]
                    )
                q_update(agent.q_charge, s, action, r_c, s_next)
                q_update(agent.q_price, s, action, r_p, s_next)
                # The winner's W stays untouched; whoever was not obeyed
                # accumulates regret. An explored action obeyed nobody, so
                # both objectives count as losers for that step.
                if decision.winner is not Objective.CHARGE and not decision.forced:
                    w_update(agent.w_charge, s, agent.q_charge, action, r_c, s_next)
                if decision.winner is not Objective.PRICE and not decision.forced:
                    w_update(agent.w_price, s, agent.q_price, action, r_p, s_next)
                transitions[agent.agent_id].append(
                    (s, action, r_c, r_p, s_next, decision.winner, decision.forced)
                )
            agent.soc = soc_after
            if action is Action.CHARGE:
                x[agent.agent_id, t] = 1

    if learn:
        for agent in agents:
            seq = transitions[agent.agent_id]
            for _ in range(params.replay_sweeps):
                for s, action, r_c, r_p, s_next, winner, forced in reversed(seq):
                    q_update(agent.q_charge, s, action, r_c, s_next)
                    q_update(agent.q_price, s, action, r_p, s_next)
                    if forced:
                        continue
                    if winner is not Objective.CHARGE:
                        w_update(agent.w_charge, s, agent.q_charge, action, r_c, s_next)
                    if winner is not Objective.PRICE:
                        w_update(agent.w_price, s, agent.q_price, action, r_p, s_next)
        _check_q_bounds(agents, params)

    schedule = ChargingSchedule(x, energy_per_slot=spec.charge_power * clock.slot_hours)
    departure = np.array([a.soc for a in agents])
    socs_end = np.maximum(departure - spec.trip_soc(), 0.0)
    return EpisodeResult(
        episode_index=episode_index,
        schedule=schedule,
        aggregate_kw=aggregate,
        efficiency=efficiency(schedule, benchmark, n) if n else 1.0,
        deviations=deviation_count(schedule, benchmark, n, config.deviation_threshold) if n else 0,
        socs_end=socs_end,
        socs_at_departure=departure,
    )


def _check_q_bounds(agents: list[EvAgent], params: LearningParams) -> None:
    bound = params.q_bound() + 1e-9
    for agent in agents:
        worst = max(agent.q_charge.max_abs(), agent.q_price.max_abs())
        if worst > bound:
            raise EngineError(
                f"Q-value {worst:.3f} exceeds bound {bound:.3f} for agent {agent.agent_id}"
            )


def _schedule_for_method(world: World, method: Method, episode_index: int) -> ChargingSchedule:
    """Planned schedule for the non-learning methods."""
    config = world.config
    spec = config.ev
    quantum = spec.soc_per_slot(config.clock)
    socs = world.socs_for_episode(episode_index)
    base_actual = world.window_values(world.baseload)
    if method in (Method.GREEDY, Method.NIGHT_GREEDY):
        # Tariff-unaware vehicles top up all the way.
        needs = _needs_to_full(socs, quantum)
        inst = _instance(base_actual, needs, spec)
        if method is Method.GREEDY:
            return greedy_schedule(inst)
        tariff_slot = config.clock.slot_of_time(config.night_tariff_hour, 0)
        if tariff_slot not in world.window:
            raise ConfigError("night tariff start lies outside the availability window")
        return night_greedy_schedule(inst, world.window.index(tariff_slot))
    if method is Method.VALLEY_FILL:
        # Plans on the forecast, is scored on the realized day.
        needs = _needs_to_target(socs, spec, quantum)
        inst = _instance(world.window_values(world.forecast.samples), needs, spec)
        return valley_fill(inst)
    raise ValueError(f"not a schedule-based method: {method}")


def _episode_from_schedule(world: World, schedule: ChargingSchedule,
                           episode_index: int) -> EpisodeResult:
    spec = world.config.ev
    counts = schedule.slot_counts()
    aggregate = world.window_values(world.baseload) + spec.charge_power * counts
    quantum = spec.soc_per_slot(world.config.clock)
    departure = world.socs_for_episode(episode_index) + schedule.x.sum(axis=1) * quantum
    n = world.n_evs
    benchmark = world.benchmark_for_episode(episode_index)
    return EpisodeResult(
        episode_index=episode_index,
        schedule=schedule,
        aggregate_kw=aggregate,
        efficiency=efficiency(schedule, benchmark, n),
        deviations=deviation_count(schedule, benchmark, n, world.config.deviation_threshold),
        socs_end=np.maximum(departure - spec.trip_soc(), 0.0),
        socs_at_departure=departure,
    )


def run_method(world: World, agents: list[EvAgent] | None = None) -> list[EpisodeResult]:
    """All episodes of one run. The learning method explores on the learning
    day, then exploits its frozen greedy policy on the scored day; schedule
    methods re-plan for each episode's fleet state."""
    config = world.config
    scenario = config.scenario
    episodes: list[EpisodeResult] = []
    if config.method is Method.PMARL:
        agents = agents if agents is not None else make_agents(world)
        explore = scenario.exploration_episodes
        for e in range(scenario.n_episodes):
            eps = config.learning.epsilon_for_episode(e, explore)
            # Learning happens during the exploration phase; exploitation
            # replays the learned greedy policy against frozen tables.
            exploiting = e >= explore
            episodes.append(
                run_episode(
                    world,
                    agents,
                    world.forecast if exploiting else world.learn_forecast,
                    episode_index=e,
                    epsilon=eps,
                    learn=not exploiting,
                    baseload=world.baseload if exploiting else world.learn_baseload,
                    benchmark=world.benchmark_for_episode(e, exploiting),
                )
            )
        return episodes
    for e in range(scenario.n_episodes):
        schedule = _schedule_for_method(world, config.method, e)
        episodes.append(_episode_from_schedule(world, schedule, e))
    return episodes


# ---------------------------------------------------------------------------
# Experiments and reports
# ---------------------------------------------------------------------------

def _exploitation_mean(episodes: list[EpisodeResult], exploration: int) -> float:
    tail = [ep.efficiency for ep in episodes[exploration:]]
    if not tail:
        tail = [ep.efficiency for ep in episodes]
    return float(np.mean(tail))


def _run_payload(world: World, episodes: list[EpisodeResult]) -> dict:
    exploration = world.config.scenario.exploration_episodes
    final = episodes[-1]
    payload = {
        "run_index": world.run_index,
        "run_seed": world.run_seed,
        "exploitation_efficiency_mean": _exploitation_mean(episodes, exploration),
        "deviation_count_final": final.deviations,
        "episodes": [
            {
                "episode_index": ep.episode_index,
                "efficiency": ep.efficiency,
                "deviations": ep.deviations,
                "socs_end": [round(float(v), 6) for v in ep.socs_end],
                "socs_at_departure": [round(float(v), 6) for v in ep.socs_at_departure],
            }
            for ep in episodes
        ],
        "final_day": {
            "window_slots": list(world.window),
            "baseload_kw": [float(v) for v in world.window_values(world.baseload)],
            "aggregate_kw": [float(v) for v in final.aggregate_kw],
            "ev_counts": [int(v) for v in final.schedule.slot_counts()],
            "benchmark_counts": [
                int(v)
                for v in world.benchmark_for_episode(final.episode_index).slot_counts()
            ],
        },
    }
    if world.forecast_mape is not None:
        payload["forecast_mape"] = world.forecast_mape
    if world.verdict is not None:
        payload["change_detected"] = world.verdict.triggered
        payload["change_window_mape"] = world.verdict.window_mape
    return payload


@dataclass
class ExperimentReport:
    config_echo: dict
    cells: dict[str, dict[str, dict]]  # method -> mode -> cell payload

    def summary_matrix(self) -> dict[str, dict[str, float]]:
        return {
            method: {mode: cell["efficiency_mean"] for mode, cell in modes.items()}
            for method, modes in self.cells.items()
        }

    def to_json_dict(self) -> dict:
        return {
            "format_version": REPORT_FORMAT_VERSION,
            "config": self.config_echo,
            "results": self.cells,
            "summary_matrix": self.summary_matrix(),
        }


def config_echo(config: RunConfig) -> dict:
    """Everything needed to reproduce the experiment byte-for-byte."""
    scenario = config.scenario
    return {
        "scenario": {
            "n_households": scenario.n_households,
            "ev_penetration": scenario.ev_penetration,
            "n_evs": scenario.n_evs,
            "avail_start_slot": scenario.avail_start_slot,
            "avail_end_slot": scenario.avail_end_slot,
            "soc_init_range": list(scenario.soc_init_range),
            "n_episodes": scenario.n_episodes,
            "exploration_episodes": scenario.exploration_episodes,
            "rng_seed": scenario.rng_seed,
            "price_coefficient": scenario.price_coefficient,
        },
        "ev": {
            "battery_capacity": config.ev.battery_capacity,
            "charge_power": config.ev.charge_power,
            "trip_energy": config.ev.trip_energy,
            "target_soc": config.ev.target_soc,
        },
        "learning": {
            "alpha": config.learning.alpha,
            "gamma": config.learning.gamma,
            "epsilon_start": config.learning.epsilon_start,
            "epsilon_end": config.learning.epsilon_end,
            "soc_buckets": config.learning.soc_buckets,
            "rewards": {
                "charge_ok": config.learning.rewards.charge_ok,
                "overcharge": config.learning.rewards.overcharge,
                "price_low": config.learning.rewards.price_low,
                "price_medium": config.learning.rewards.price_medium,
                "price_high": config.learning.rewards.price_high,
                "terminal_miss_penalty": config.learning.rewards.terminal_miss_penalty,
            },
        },
        "prediction_mode": config.prediction_mode.value,
        "method": config.method.value,
        "n_runs": config.n_runs,
        "history_days": config.history_days,
        "forecast": {
            "hidden_units": config.forecast_hidden,
            "epochs": config.forecast_epochs,
            "learning_rate": config.forecast_lr,
        },
        "driftwatch": {
            "change_threshold": config.change_threshold,
            "som_rows": config.som.rows,
            "som_cols": config.som.cols,
            "som_iterations": config.som.iterations,
        },
        "anomaly_magnitude": config.anomaly_magnitude,
        "deviation_threshold": config.deviation_threshold,
        "night_tariff_hour": config.night_tariff_hour,
        "slots_per_day": config.clock.slots_per_day,
    }


def _evaluate_cell(config: RunConfig) -> tuple[dict, list[tuple[World, list[EpisodeResult]]]]:
    runs = []
    for r in range(config.n_runs):
        world = build_world(config, r)
        episodes = run_method(world)
        runs.append((world, episodes))
    exploration = config.scenario.exploration_episodes
    means = [_exploitation_mean(eps, exploration) for _, eps in runs]
    cell = {
        "efficiency_mean": float(np.mean(means)),
        "efficiency_std": float(np.std(means)),
        "runs": [_run_payload(w, eps) for w, eps in runs],
    }
    return cell, runs


def run_experiment(config: RunConfig) -> ExperimentReport:
    """Execute one (method, prediction mode) cell across ``n_runs`` seeds."""
    cell, _ = _evaluate_cell(config)
    return ExperimentReport(
        config_echo=config_echo(config),
        cells={config.method.value: {config.prediction_mode.value: cell}},
    )


def compare_experiments(config: RunConfig,
                        methods: tuple[Method, ...] = ALL_METHODS,
                        modes: tuple[PredictionMode, ...] = ALL_MODES) -> ExperimentReport:
    """Full comparison matrix: every method under every prediction mode."""
    cells: dict[str, dict[str, dict]] = {}
    for method in methods:
        cells[method.value] = {}
        for mode in modes:
            sub = replace(config, method=method, prediction_mode=mode)
            cell, _ = _evaluate_cell(sub)
            cells[method.value][mode.value] = cell
    return ExperimentReport(config_echo=config_echo(config), cells=cells)


# ---------------------------------------------------------------------------
# Report files
# ---------------------------------------------------------------------------

def write_report(report: ExperimentReport, outdir: str | Path) -> list[Path]:
    """Write report.json plus the per-episode aggregate demand CSV."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    report_path = outdir / "report.json"
    report_path.write_text(json.dumps(report.to_json_dict(), indent=1))

    csv_path = outdir / "aggregate_kw.csv"
    with csv_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        n_slots = None
        for method, modes in report.cells.items():
            for mode, cell in modes.items():
                for run in cell["runs"]:
                    n_slots = len(run["final_day"]["aggregate_kw"])
        header = ["method", "mode", "run", "kind"] + [f"slot_{i}" for i in range(n_slots or 0)]
        writer.writerow(header)
        for method, modes in report.cells.items():
            for mode, cell in modes.items():
                for run in cell["runs"]:
                    fd = run["final_day"]
                    writer.writerow(
                        [method, mode, run["run_index"], "baseload"]
                        + [repr(v) for v in fd["baseload_kw"]]
                    )
                    writer.writerow(
                        [method, mode, run["run_index"], "aggregate"]
                        + [repr(v) for v in fd["aggregate_kw"]]
                    )
    return [report_path, csv_path]


def format_summary(report: ExperimentReport) -> str:
    """Fixed-width comparison table of mean efficiencies."""
    matrix = report.summary_matrix()
    modes: list[str] = []
    for per_mode in matrix.values():
        for mode in per_mode:
            if mode not in modes:
                modes.append(mode)
    width = max(len(m) for m in list(matrix) + ["method"]) + 2
    lines = ["method".ljust(width) + "".join(m.rjust(18) for m in modes)]
    for method, per_mode in matrix.items():
        row = method.ljust(width)
        for mode in modes:
            value = per_mode.get(mode)
            row += (f"{value * 100:.1f}%" if value is not None else "-").rjust(18)
        lines.append(row)
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Config file -> RunConfig
# ---------------------------------------------------------------------------

def run_config_from_mapping(values: dict[str, str]) -> RunConfig:
    scenario = scenario_from_mapping(values)

    def take(key: str, default):
        if key not in values:
            return default
        from .scenario import _convert

        return _convert(key, values[key])

    ev = EvSpec(
        battery_capacity=take("ev.battery_capacity", 24.0),
        charge_power=take("ev.charge_power", 3.3),
        trip_energy=take("ev.trip_energy", 7.5),
        target_soc=take("ev.target_soc", 0.8),
    )
    rewards = agents_mod.RewardParams(
        charge_ok=take("agents.reward_charge_ok", 1.0),
        overcharge=take("agents.reward_overcharge", -1.0),
        price_low=take("agents.reward_price_low", 1.0),
        price_medium=take("agents.reward_price_medium", 0.0),
        price_high=take("agents.reward_price_high", -2.0),
        terminal_miss_penalty=take("agents.terminal_miss_penalty", -5.0),
    )
    learning = LearningParams(
        alpha=take("agents.alpha", 0.1),
        gamma=take("agents.gamma", 0.9),
        epsilon_start=take("agents.epsilon_start", 0.9),
        epsilon_end=take("agents.epsilon_end", 0.05),
        soc_buckets=take("agents.soc_buckets", 10),
        rewards=rewards,
    )
    som = SomParams(
        rows=take("driftwatch.som_rows", 4),
        cols=take("driftwatch.som_cols", 4),
        iterations=take("driftwatch.som_iterations", 1000),
    )
    try:
        method = Method(take("run.method", "pmarl"))
        mode = PredictionMode(take("run.prediction_mode", "perfect"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return RunConfig(
        scenario=scenario,
        prediction_mode=mode,
        method=method,
        n_runs=take("run.n_runs", 3),
        ev=ev,
        learning=learning,
        history_days=take("run.history_days", 60),
        forecast_hidden=take("forecast.hidden_units", 32),
        forecast_epochs=take("forecast.epochs", 300),
        forecast_lr=take("forecast.learning_rate", 0.4),
        change_threshold=take("driftwatch.change_threshold", DEFAULT_CHANGE_THRESHOLD),
        som=som,
        anomaly_magnitude=take("run.anomaly_magnitude", 0.25),
        deviation_threshold=take("run.deviation_threshold", 0.25),
    )


def load_run_config(path: str | Path) -> RunConfig:
    return run_config_from_mapping(parse_kv_file(path))
