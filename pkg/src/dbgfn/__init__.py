"""GFlowNet training on fixed-length token sequences with reward-driven backtracking.

Core pieces: a sequence environment with exact enumeration, numpy policy
networks with analytic gradients, trajectory/detailed balance objectives,
the backtracking revision step, an exact-distribution oracle, and an
experiment harness.
"""

from .backtrack import BacktrackConfig, dbgfn_revise_batch, dynamic_steps, ls_revise_batch, regret_gate
from .config import ExperimentConfig, load_config, parse_config
from .env import BuiltinReward, EnvSpec, SequenceEnv, State, TableReward, Trajectory
from .harness import run_experiment, sweep
from .oracle import exact_terminal_probs
from .policy import init_params

__version__ = "0.1.0"

__all__ = [
    "BacktrackConfig",
    "BuiltinReward",
    "EnvSpec",
    "ExperimentConfig",
    "SequenceEnv",
    "State",
    "TableReward",
    "Trajectory",
    "dbgfn_revise_batch",
    "dynamic_steps",
    "exact_terminal_probs",
    "init_params",
    "load_config",
    "ls_revise_batch",
    "parse_config",
    "regret_gate",
    "run_experiment",
    "sweep",
]
