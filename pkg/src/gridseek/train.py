"""Policy-gradient training loop: rollouts, advantages, batched Adam updates."""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation
from .nn import Adam
from .policy import VasPolicy, features_to_map, masked_distribution, select_action
from .task import (
    BudgetSpec,
    SearchState,
    Task,
    apply_outcome,
    esr,
    initial_state,
    sample_budget,
    step,
)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 500
    batch_size: int = 16
    learning_rate: float = 1e-4
    budget_spec: BudgetSpec = field(
        default_factory=lambda: BudgetSpec("uniform-random", k_min=12, k_max=18))
    baseline: str = "random-query"      # "none" | "random-query"
    attribution: str = "immediate"      # "immediate" | "reward-to-go"
    seed: int = 0
    checkpoint_every: int = 0           # 0 = no intermediate checkpoints
    recon_weight: float = 1.0

    def __post_init__(self):
        if self.baseline not in ("none", "random-query"):
            raise ValueError(f"unknown baseline {self.baseline!r}")
        if self.attribution not in ("immediate", "reward-to-go"):
            raise ValueError(f"unknown attribution {self.attribution!r}")


@dataclass(frozen=True)
class StepRecord:
    step: int
    distribution: np.ndarray    # full psi' at decision time
    cell: int
    reward: int                 # true reward from the label
    observed: int               # o-value recorded (differs under intervention)
    remaining_budget: int       # after this step


@dataclass
class EpisodeTrace:
    task_id: str
    initial_budget: int
    steps: list[StepRecord]
    utility: int
    esr: float
    n_targets: int

    @property
    def cells(self) -> list[int]:
        return [s.cell for s in self.steps]


def rollout(policy: VasPolicy, task: Task, k: int, mode: str,
            rng: np.random.Generator | None = None,
            intervention: str = "none") -> EpisodeTrace:
    """Run one K-step episode; never re-queries a cell.

    ``intervention`` overrides the recorded outcome: "force-success" writes
    +1 and "force-failure" -1 into o regardless of the true label.  True
    rewards are still logged and score the episode.
    """
    if intervention not in ("none", "force-success", "force-failure"):
        raise ValueError(f"unknown intervention {intervention!r}")
    fmap = features_to_map(task)
    state = initial_state(task, k)
    records = []
    rewards = []
    for t in range(k):
        psi = policy.distribution(fmap, state)
        psi_prime = masked_distribution(psi, state)
        cell = select_action(psi_prime, mode, rng)
        if intervention == "none":
            state, r = step(state, task, cell)
            observed = r
        else:
            r = 1 if task.labels[cell] == 1 else -1
            observed = 1 if intervention == "force-success" else -1
            state = apply_outcome(state, cell, observed)
        records.append(StepRecord(step=t, distribution=psi_prime, cell=cell,
                                  reward=r, observed=observed,
                                  remaining_budget=state.remaining_budget))
        rewards.append(r)
    utility = sum(1 for r in rewards if r == 1)
    return EpisodeTrace(task_id=task.id, initial_budget=k, steps=records,
                        utility=utility, esr=esr(utility, task.n_targets, k),
                        n_targets=task.n_targets)


def random_query_baseline(state: SearchState, task: Task) -> float:
    """Expected reward of querying a uniformly random unqueried cell."""
    mask = state.unqueried_mask()
    n_unqueried = int(mask.sum())
    remaining_targets = int(task.labels[mask].sum())
    return 2.0 * remaining_targets / n_unqueried - 1.0


def episode_gradient(policy: VasPolicy, trace: EpisodeTrace, task: Task,
                     baseline: str = "random-query",
                     attribution: str = "immediate") -> float:
    """Accumulate the episode's REINFORCE gradient into the policy params.

    Each step contributes advantage_t * grad(log psi'_{a_t}); the advantage
    is the step reward (or reward-to-go) minus the baseline.  Returns the
    summed weighted log-probability (useful for diagnostics).
    """
    if trace.task_id != task.id:
        raise ContractViolation(
            f"trace for task {trace.task_id!r} applied to {task.id!r}")
    fmap = features_to_map(task)
    state = initial_state(task, trace.initial_budget)
    rewards = [rec.reward for rec in trace.steps]
    total = 0.0
    for t, rec in enumerate(trace.steps):
        if attribution == "immediate":
            ret = float(rewards[t])
        else:
            ret = float(sum(rewards[t:]))
        b = random_query_baseline(state, task) if baseline == "random-query" else 0.0
        weight = ret - b
        logp = policy.log_prob_gradient(fmap, state, rec.cell, weight=weight)
        total += weight * logp
        state = apply_outcome(state, rec.cell, rec.observed)
    return total


@dataclass
class EpochStats:
    epoch: int
    mean_utility: float
    mean_esr: float
    wall_ms: float


def write_training_log(log: list[EpochStats], path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("epoch,mean_utility,mean_esr,wall_ms\n")
        for row in log:
            f.write(f"{row.epoch},{row.mean_utility!r},{row.mean_esr!r},"
                    f"{row.wall_ms:.1f}\n")


def train(policy: VasPolicy, dataset, cfg: TrainConfig,
          out_dir: str | None = None, recon_head=None) -> list[EpochStats]:
    """REINFORCE training over a task dataset.

    Shuffles tasks each epoch (seeded), draws a fresh budget per episode,
    and takes one Adam step per batch on the mean episode gradient.  If a
    reconstruction head is supplied its loss gradient is added each batch
    (scaled by cfg.recon_weight) and its own parameters are optimized too.
    """
    tasks = list(dataset)
    if not tasks:
        raise ValueError("dataset is empty")
    rng = np.random.default_rng(cfg.seed)
    optimizer = Adam(policy.params, lr=cfg.learning_rate)
    recon_optimizer = None
    if recon_head is not None:
        recon_optimizer = Adam(recon_head.params, lr=cfg.learning_rate)
    log: list[EpochStats] = []
    for epoch in range(cfg.epochs):
        start = time.perf_counter()
        order = rng.permutation(len(tasks))
        utilities = []
        esrs = []
        for lo in range(0, len(order), cfg.batch_size):
            batch = order[lo:lo + cfg.batch_size]
            policy.params.zero_grads()
            if recon_head is not None:
                recon_head.params.zero_grads()
            for idx in batch:
                task = tasks[idx]
                k = sample_budget(cfg.budget_spec, rng)
                trace = rollout(policy, task, k, "sample", rng)
                episode_gradient(policy, trace, task, cfg.baseline,
                                 cfg.attribution)
                utilities.append(trace.utility)
                if task.n_targets > 0:
                    esrs.append(trace.esr)
            # episode_gradient accumulates the ascent direction; Adam
            # descends, so flip the policy grads before adding the
            # (descent-signed) reconstruction gradients
            policy.params.scale_grads(-1.0 / len(batch))
            if recon_head is not None:
                for idx in batch:
                    recon_head.accumulate(policy, features_to_map(tasks[idx]),
                                          weight=cfg.recon_weight / len(batch))
            optimizer.step()
            if recon_head is not None:
                recon_optimizer.step()
        wall_ms = (time.perf_counter() - start) * 1000.0
        log.append(EpochStats(
            epoch=epoch,
            mean_utility=float(np.mean(utilities)) if utilities else 0.0,
            mean_esr=float(np.mean(esrs)) if esrs else 0.0,
            wall_ms=wall_ms))
        if (out_dir is not None and cfg.checkpoint_every > 0
                and (epoch + 1) % cfg.checkpoint_every == 0):
            last_checkpoint = os.path.join(out_dir, f"ckpt_{epoch + 1:05d}.vasp")
            policy.save(last_checkpoint)
    return log
