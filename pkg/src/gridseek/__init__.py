"""Budget-constrained active search over grid regions.

A policy network learns, via policy-gradient training on fully annotated
tasks, which grid cell to query next given per-cell features, the outcomes
of past queries and the remaining budget; several test-time adaptation
schemes update it at decision time.
"""

from .baselines import (
    GreedyNet,
    greedy_topk,
    random_policy,
    train_greedy_classifier,
    train_greedy_selection,
)
from .dataio import TaskDataset, ingest_features, read_dataset, write_dataset
from .harness import (
    ResultRow,
    ResultTable,
    evaluate,
    export_heatmap,
    export_saliency,
    first_divergence_step,
    sensitivity_trace,
    shift_protocol,
)
from .policy import (
    PolicyConfig,
    VasPolicy,
    features_to_map,
    masked_distribution,
    select_action,
)
from .synth import SynthConfig, generate
from .task import (
    BudgetSpec,
    SearchState,
    Task,
    episode_utility,
    esr,
    initial_state,
    reward,
    sample_budget,
    step,
)
from .train import (
    EpisodeTrace,
    TrainConfig,
    episode_gradient,
    rollout,
    train,
    write_training_log,
)
from .tta import ReconHead, TtaConfig, TtaSession, adaptive_search

__all__ = [
    "BudgetSpec", "EpisodeTrace", "GreedyNet", "PolicyConfig", "ReconHead",
    "ResultRow", "ResultTable", "SearchState", "SynthConfig", "Task",
    "TaskDataset", "TrainConfig", "TtaConfig", "TtaSession", "VasPolicy",
    "adaptive_search", "episode_gradient", "episode_utility", "esr",
    "evaluate", "export_heatmap", "export_saliency", "features_to_map",
    "first_divergence_step", "generate", "greedy_topk", "ingest_features",
    "initial_state", "masked_distribution", "random_policy", "read_dataset",
    "reward", "rollout", "sample_budget", "select_action",
    "sensitivity_trace", "shift_protocol", "step", "train",
    "train_greedy_classifier", "train_greedy_selection", "write_dataset",
    "write_training_log",
]
