"""Forecast-shaped multi-agent reinforcement learning for EV charging.

The package splits along the pipeline's three stages plus benchmarks:

- :mod:`pmarl.scenario` — physical units, demand history, synthetic baseload
- :mod:`pmarl.forecast` — day-ahead demand forecasting network
- :mod:`pmarl.driftwatch` — divergence monitoring, SOM matching, reprediction
- :mod:`pmarl.agents` — per-EV Q-learning with W-learning arbitration
- :mod:`pmarl.baselines` — greedy / night-greedy / valley-fill / exact optimum
- :mod:`pmarl.engine` — episode and experiment orchestration, metrics, reports
- :mod:`pmarl.plots` — SVG rendering of demand overlays and learning curves
"""

from .scenario import (
    AnomalyKind,
    DayKind,
    DayProfile,
    EvSpec,
    HistoryWindow,
    ScenarioConfig,
    SlotClock,
    inject_anomaly,
    load_history,
    synth_baseload,
    write_history,
)
from .forecast import Forecast, ForecastSource, Mlp, mape, mlp_forward, mlp_train, predict_day, train_forecaster
from .driftwatch import ChangeVerdict, Som, SomParams, find_match, monitor, repredict, som_classify, som_train
from .agents import Action, AgentState, DemandLevel, EvAgent, LearningParams, QTable, WTable, q_update, reward_charge, reward_price, select_action, w_update
from .baselines import ChargingSchedule, CostInstance, cost, greedy_schedule, night_greedy_schedule, solve_exact, valley_fill
from .engine import (
    EpisodeResult,
    ExperimentReport,
    Method,
    PredictionMode,
    RunConfig,
    World,
    build_world,
    compare_experiments,
    deviation_count,
    efficiency,
    load_run_config,
    run_episode,
    run_experiment,
)

__version__ = "0.1.0"
