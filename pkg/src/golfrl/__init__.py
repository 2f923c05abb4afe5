"""Group-level natural-language feedback for RL on a desk-scale toy policy.

Failed attempts in a rollout group, together with verifier critiques, are
aggregated into a refinement prompt; successful refinements are injected back
into low-reward groups as off-policy scaffolds.
"""

from .config import TrainConfig, load_config, preset
from .core import GolfError, RolloutGroup, TrajectoryRecord
from .envs import TaskSpec, generate_instance, verify
from .grpo import group_advantages, grpo_objective
from .golf import aggregate_refinement_context, inject, mixed_objective
from .metrics import MetricsRecord, pass_at_k
from .policy import PolicyParams, init_params
from .trainer import run_ablation_suite, run_experiment, train, train_step

__version__ = "0.1.0"

__all__ = [
    "TrainConfig", "load_config", "preset", "GolfError", "RolloutGroup", "TrajectoryRecord",
    "TaskSpec", "generate_instance", "verify", "group_advantages", "grpo_objective",
    "aggregate_refinement_context", "inject", "mixed_objective", "MetricsRecord", "pass_at_k",
    "PolicyParams", "init_params", "run_ablation_suite", "run_experiment", "train", "train_step",
]
