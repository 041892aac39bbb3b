"""Search tasks, episode state, reward/observation dynamics and the ESR metric.

A task is a grid of N cells, each carrying a feature vector and a hidden
binary label.  An episode queries cells one at a time under a budget K;
querying cell j reveals its label as an outcome o[j] in {-1, +1}
(0 = unqueried) and yields reward +1/-1.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    BudgetExhaustedError,
    InconsistentCountError,
    InvalidBudgetError,
    InvalidCellError,
    RequeriedCellError,
)


@dataclass(frozen=True)
class Task:
    """One search task: a feature grid plus hidden binary labels.

    Immutable after construction; safe to share across threads.
    """

    id: str
    grid_shape: tuple[int, int]
    features: np.ndarray  # (N, d) float
    labels: np.ndarray    # (N,) uint8 in {0, 1}

    def __post_init__(self):
        rows, cols = self.grid_shape
        n = rows * cols
        feats = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels)
        if rows < 1 or cols < 1:
            raise ValueError(f"grid_shape must be positive, got {self.grid_shape}")
        if feats.ndim != 2 or feats.shape[0] != n or feats.shape[1] < 1:
            raise ValueError(f"features must be (N={n}, d>=1), got {feats.shape}")
        if not np.all(np.isfinite(feats)):
            raise ValueError("features contain non-finite entries")
        if labels.shape != (n,) or not np.all((labels == 0) | (labels == 1)):
            raise ValueError("labels must be a length-N vector of 0/1")
        feats.setflags(write=False)
        labels = labels.astype(np.uint8)
        labels.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)

    @property
    def n_cells(self) -> int:
        return self.grid_shape[0] * self.grid_shape[1]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def n_targets(self) -> int:
        return int(self.labels.sum())


@dataclass(frozen=True)
class SearchState:
    """Observation vector, remaining budget and ordered query history."""

    observations: np.ndarray      # (N,) int8 in {-1, 0, +1}
    remaining_budget: int
    queried: tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        obs = np.asarray(self.observations, dtype=np.int8)
        obs.setflags(write=False)
        object.__setattr__(self, "observations", obs)

    @property
    def n_cells(self) -> int:
        return self.observations.shape[0]

    @property
    def initial_budget(self) -> int:
        return self.remaining_budget + len(self.queried)

    def unqueried_mask(self) -> np.ndarray:
        return self.observations == 0


@dataclass(frozen=True)
class BudgetSpec:
    """Either a fixed budget or one drawn uniformly from [k_min, k_max]."""

    mode: str = "fixed"           # "fixed" | "uniform-random"
    fixed_k: int = 15
    k_min: int = 12
    k_max: int = 18

    def __post_init__(self):
        if self.mode not in ("fixed", "uniform-random"):
            raise ValueError(f"unknown budget mode {self.mode!r}")
        if self.mode == "fixed" and self.fixed_k < 1:
            raise ValueError("fixed_k must be >= 1")
        if self.mode == "uniform-random" and not (1 <= self.k_min <= self.k_max):
            raise ValueError("need 1 <= k_min <= k_max")


def initial_state(task: Task, k: int) -> SearchState:
    """Fresh episode state: all cells unqueried, full budget k."""
    if not 1 <= k <= task.n_cells:
        raise InvalidBudgetError(f"budget {k} outside [1, {task.n_cells}]")
    return SearchState(np.zeros(task.n_cells, dtype=np.int8), int(k))


def reward(task: Task, cell: int) -> int:
    """+1 if the cell holds a target, -1 otherwise."""
    if not 0 <= cell < task.n_cells:
        raise InvalidCellError(f"cell {cell} outside [0, {task.n_cells})")
    return 1 if task.labels[cell] == 1 else -1


def step(state: SearchState, task: Task, cell: int) -> tuple[SearchState, int]:
    """Query one cell: record its outcome, decrement the budget.

    Returns the successor state (the input state is not mutated) and the
    immediate reward.
    """
    if state.remaining_budget < 1:
        raise BudgetExhaustedError("no remaining budget")
    if not 0 <= cell < task.n_cells:
        raise InvalidCellError(f"cell {cell} outside [0, {task.n_cells})")
    if state.observations[cell] != 0:
        raise RequeriedCellError(f"cell {cell} was already queried")
    r = reward(task, cell)
    obs = np.array(state.observations)
    obs[cell] = r
    new_state = SearchState(obs, state.remaining_budget - 1,
                            state.queried + (int(cell),))
    return new_state, r


def episode_utility(rewards) -> int:
    """Number of successful queries (+1 rewards) in an episode."""
    total = 0
    for r in rewards:
        if r not in (-1, 1):
            raise ValueError(f"reward must be +/-1, got {r}")
        if r == 1:
            total += 1
    return total


def esr(discovered: int, total_targets: int, k: int) -> float:
    """Effective success rate: discovered / min(total_targets, k).

    Defined as 1.0 when the task has no targets (the ratio is 0/0 there);
    aggregate reporting excludes such tasks by default.
    """
    if k < 1:
        raise InvalidBudgetError(f"budget {k} must be >= 1")
    if discovered < 0 or total_targets < 0:
        raise InconsistentCountError("counts must be nonnegative")
    if total_targets == 0:
        if discovered != 0:
            raise InconsistentCountError(
                f"discovered {discovered} with zero targets")
        return 1.0
    denom = min(total_targets, k)
    if discovered > denom:
        raise InconsistentCountError(
            f"discovered {discovered} exceeds min(targets={total_targets}, k={k})")
    return discovered / denom


def sample_budget(spec: BudgetSpec, rng: np.random.Generator) -> int:
    """Draw an episode budget from the spec."""
    if spec.mode == "fixed":
        return spec.fixed_k
    return int(rng.integers(spec.k_min, spec.k_max + 1))


def apply_outcome(state: SearchState, cell: int, outcome: int) -> SearchState:
    """Record an externally imposed outcome for a cell (intervention traces).

    Same bookkeeping as `step` but the recorded o-value is `outcome`
    rather than the true reward.
    """
    if state.remaining_budget < 1:
        raise BudgetExhaustedError("no remaining budget")
    if state.observations[cell] != 0:
        raise RequeriedCellError(f"cell {cell} was already queried")
    if outcome not in (-1, 1):
        raise ValueError(f"outcome must be +/-1, got {outcome}")
    obs = np.array(state.observations)
    obs[cell] = outcome
    return SearchState(obs, state.remaining_budget - 1,
                       state.queried + (int(cell),))
