"""Test-time adaptation wrappers around a trained search policy.

Modes:
  online   -- one REINFORCE update from each completed episode's observed
              outcomes (baseline-free; labels of unqueried cells are unknown).
  stepwise -- the same update applied every m steps within an episode.
  fixmatch -- after every query, cross-entropy toward an outcome-derived
              target vector, evaluated on noise-augmented features.
  ttt      -- pre-search gradient steps on a feature-reconstruction loss,
              updating only the projection and the reconstruction head.

Online and stepwise carry adapted parameters across a test stream by
default; fixmatch and ttt reset to the trained checkpoint per task.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError
from .nn import Adam, ParamStore, PointwiseLinear, cross_entropy
from .policy import VasPolicy, features_to_map, masked_distribution, select_action
from .task import SearchState, Task, apply_outcome, esr, initial_state, step
from .train import EpisodeTrace, StepRecord, episode_gradient, rollout

MODES = ("none", "online", "stepwise", "fixmatch", "ttt")
_PERSIST_DEFAULT = {"none": False, "online": True, "stepwise": True,
                    "fixmatch": False, "ttt": False}


@dataclass(frozen=True)
class TtaConfig:
    mode: str = "none"
    tta_learning_rate: float = 1e-5
    stepwise_m: int = 5
    fixmatch_noise_std: float = 0.1
    ttt_pre_steps: int = 10
    persist: bool | None = None   # None -> per-mode default

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown TTA mode {self.mode!r}")
        if self.stepwise_m < 1:
            raise ValueError("stepwise_m must be >= 1")
        if self.tta_learning_rate < 0 or self.fixmatch_noise_std < 0:
            raise ValueError("rates must be nonnegative")
        if self.ttt_pre_steps < 0:
            raise ValueError("ttt_pre_steps must be >= 0")

    @property
    def persists(self) -> bool:
        if self.persist is not None:
            return self.persist
        return _PERSIST_DEFAULT[self.mode]


class ReconHead:
    """Pointwise map from the projected latent grid back to the input features."""

    def __init__(self, policy_config, rng: np.random.Generator | None = None):
        self.params = ParamStore()
        self.layer = PointwiseLinear(policy_config.n_cells,
                                     policy_config.latent_channels,
                                     self.params, "recon", rng)

    def loss(self, policy: VasPolicy, features_map: np.ndarray) -> float:
        z = policy.proj.forward(features_map)
        recon = self.layer.forward(z)
        return float(np.sum((features_map - recon) ** 2))

    def accumulate(self, policy: VasPolicy, features_map: np.ndarray,
                   weight: float = 1.0) -> float:
        """Add the descent gradient of the reconstruction loss.

        Gradients flow into this head's parameters and the policy's
        projection; the grid-selection head is untouched.
        """
        z = policy.proj.forward(features_map)
        recon = self.layer.forward(z)
        diff = features_map - recon
        g_recon = -2.0 * weight * diff
        g_z = self.layer.backward(g_recon)
        policy.proj.backward(g_z)
        return float(np.sum(diff ** 2))

    def save(self, path: str) -> None:
        self.params.save(path)

    def load(self, path: str) -> None:
        self.params.load(path)


def _guarded_step(params: ParamStore, optimizer: Adam) -> bool:
    """Adam step that reverts the parameters if the update goes non-finite."""
    snap = params.snapshot()
    try:
        optimizer.step()
        return True
    except NumericError:
        params.restore(snap)
        params.zero_grads()
        return False


def online_tta_update(policy: VasPolicy, trace: EpisodeTrace, task: Task,
                      cfg: TtaConfig, optimizer: Adam | None = None) -> None:
    """One baseline-free REINFORCE update from a completed episode."""
    if not trace.steps:
        raise ValueError("trace is empty")
    if optimizer is None:
        optimizer = Adam(policy.params, lr=cfg.tta_learning_rate)
    policy.params.zero_grads()
    episode_gradient(policy, trace, task, baseline="none",
                     attribution="immediate")
    policy.params.scale_grads(-1.0)   # ascent
    _guarded_step(policy.params, optimizer)


def stepwise_window_update(policy: VasPolicy, trace: EpisodeTrace, task: Task,
                           start: int, end: int, cfg: TtaConfig,
                           optimizer: Adam | None = None) -> None:
    """REINFORCE update on steps [start, end) of a (partial) trace."""
    if optimizer is None:
        optimizer = Adam(policy.params, lr=cfg.tta_learning_rate)
    fmap = features_to_map(task)
    state = initial_state(task, trace.initial_budget)
    policy.params.zero_grads()
    for t, rec in enumerate(trace.steps):
        if t >= end:
            break
        if t >= start:
            policy.log_prob_gradient(fmap, state, rec.cell,
                                     weight=float(rec.reward))
        state = apply_outcome(state, rec.cell, rec.observed)
    policy.params.scale_grads(-1.0)
    _guarded_step(policy.params, optimizer)


def fixmatch_target(n_cells: int, queried_after: set[int],
                    queried_cell: int, outcome: int) -> np.ndarray | None:
    """Outcome-derived label vector.

    Success: one-hot at the queried cell.  Failure: zero on every queried
    cell (including the current one), uniform over the rest.  Returns None
    when a failure leaves no unqueried cell to spread mass over.
    """
    if outcome not in (-1, 1):
        raise ValueError(f"outcome must be +/-1, got {outcome}")
    t = np.zeros(n_cells)
    if outcome == 1:
        t[queried_cell] = 1.0
        return t
    unqueried = [j for j in range(n_cells) if j not in queried_after]
    if not unqueried:
        return None
    t[unqueried] = 1.0 / len(unqueried)
    return t


def fixmatch_update(policy: VasPolicy, state_before: SearchState,
                    queried_cell: int, outcome: int,
                    features_map: np.ndarray, cfg: TtaConfig,
                    optimizer: Adam | None = None,
                    rng: np.random.Generator | None = None) -> float | None:
    """Cross-entropy step toward the outcome target on augmented features."""
    if optimizer is None:
        optimizer = Adam(policy.params, lr=cfg.tta_learning_rate)
    queried_after = set(state_before.queried) | {queried_cell}
    target = fixmatch_target(state_before.n_cells, queried_after,
                             queried_cell, outcome)
    if target is None:
        return None
    augmented = features_map
    if cfg.fixmatch_noise_std > 0:
        if rng is None:
            rng = np.random.default_rng()
        augmented = features_map + cfg.fixmatch_noise_std * \
            rng.standard_normal(features_map.shape)
    psi = policy.distribution(augmented, state_before)
    loss, dlogits = cross_entropy(psi, target)
    policy.params.zero_grads()
    policy._backward_from_logits(dlogits)
    _guarded_step(policy.params, optimizer)
    return loss


def ttt_adapt(policy: VasPolicy, recon_head: ReconHead,
              features_map: np.ndarray, cfg: TtaConfig) -> list[float]:
    """Pre-search reconstruction steps updating projection + recon head only.

    The grid-selection head receives no gradient, so a fresh Adam leaves it
    bit-identical.
    """
    policy_opt = Adam(policy.params, lr=cfg.tta_learning_rate)
    recon_opt = Adam(recon_head.params, lr=cfg.tta_learning_rate)
    losses = []
    for _ in range(cfg.ttt_pre_steps):
        policy.params.zero_grads()
        recon_head.params.zero_grads()
        losses.append(recon_head.accumulate(policy, features_map))
        ok = _guarded_step(policy.params, policy_opt)
        if ok:
            _guarded_step(recon_head.params, recon_opt)
    return losses


class TtaSession:
    """Runs a test stream under one adaptation mode.

    Keeps the Adam state (and adapted parameters, for persistent modes)
    across tasks; non-persistent modes restore the entry checkpoint after
    every task.
    """

    def __init__(self, policy: VasPolicy, cfg: TtaConfig,
                 recon_head: ReconHead | None = None,
                 select_mode: str = "argmax"):
        if cfg.mode == "ttt" and recon_head is None:
            raise ValueError("ttt mode needs a reconstruction head")
        self.policy = policy
        self.cfg = cfg
        self.recon_head = recon_head
        self.select_mode = select_mode
        self.optimizer = Adam(policy.params, lr=cfg.tta_learning_rate)
        self.n_updates_last = 0

    def run_task(self, task: Task, k: int,
                 rng: np.random.Generator) -> EpisodeTrace:
        cfg = self.cfg
        snapshot = None
        if not cfg.persists:
            snapshot = self.policy.params.snapshot()
            self.optimizer = Adam(self.policy.params, lr=cfg.tta_learning_rate)
        self.n_updates_last = 0
        try:
            if cfg.mode in ("none", "online", "ttt"):
                if cfg.mode == "ttt":
                    ttt_adapt(self.policy, self.recon_head,
                              features_to_map(task), cfg)
                    self.n_updates_last += cfg.ttt_pre_steps
                trace = rollout(self.policy, task, k, self.select_mode, rng)
                if cfg.mode == "online":
                    online_tta_update(self.policy, trace, task, cfg,
                                      self.optimizer)
                    self.n_updates_last += 1
                return trace
            return self._run_intra_task(task, k, rng)
        finally:
            if snapshot is not None:
                self.policy.params.restore(snapshot)

    def _run_intra_task(self, task: Task, k: int,
                        rng: np.random.Generator) -> EpisodeTrace:
        cfg = self.cfg
        fmap = features_to_map(task)
        state = initial_state(task, k)
        records = []
        for t in range(k):
            psi = self.policy.distribution(fmap, state)
            psi_prime = masked_distribution(psi, state)
            cell = select_action(psi_prime, self.select_mode, rng)
            state_before = state
            state, r = step(state, task, cell)
            records.append(StepRecord(step=t, distribution=psi_prime,
                                      cell=cell, reward=r, observed=r,
                                      remaining_budget=state.remaining_budget))
            if cfg.mode == "fixmatch":
                done = fixmatch_update(self.policy, state_before, cell, r,
                                       fmap, cfg, self.optimizer, rng)
                if done is not None:
                    self.n_updates_last += 1
            elif cfg.mode == "stepwise" and (t + 1) % cfg.stepwise_m == 0:
                partial = EpisodeTrace(
                    task_id=task.id, initial_budget=k, steps=records,
                    utility=sum(1 for rec in records if rec.reward == 1),
                    esr=0.0, n_targets=task.n_targets)
                stepwise_window_update(self.policy, partial, task,
                                       t + 1 - cfg.stepwise_m, t + 1, cfg,
                                       self.optimizer)
                self.n_updates_last += 1
        utility = sum(1 for rec in records if rec.reward == 1)
        return EpisodeTrace(task_id=task.id, initial_budget=k, steps=records,
                            utility=utility,
                            esr=esr(utility, task.n_targets, k),
                            n_targets=task.n_targets)


def adaptive_search(policy: VasPolicy, task: Task, k: int, cfg: TtaConfig,
                    rng: np.random.Generator,
                    recon_head: ReconHead | None = None,
                    select_mode: str = "argmax") -> EpisodeTrace:
    """One-off adaptive episode (a single-task TtaSession)."""
    session = TtaSession(policy, cfg, recon_head, select_mode)
    return session.run_task(task, k, rng)
