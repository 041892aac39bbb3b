"""Experiment harness: evaluation, distribution-shift protocol, sensitivity
interventions, and heatmap/saliency export."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from xml.sax.saxutils import escape

import numpy as np

from .baselines import GreedyNet, greedy_topk, random_policy
from .errors import ConfigurationError
from .policy import VasPolicy, features_to_map
from .task import Task, esr, initial_state, step
from .train import EpisodeTrace, StepRecord, rollout
from .tta import ReconHead, TtaConfig, TtaSession

METHODS = ("vas", "vas-no-rsb", "random", "greedy-class", "greedy-select")


@dataclass(frozen=True)
class ResultRow:
    method: str
    n_cells: int
    k: int
    mean_esr: float
    stderr: float
    n_tasks: int


@dataclass
class ResultTable:
    rows: list[ResultRow] = field(default_factory=list)

    def to_csv(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write("method,N,K,mean_esr,stderr,n_tasks\n")
            for r in self.rows:
                f.write(f"{r.method},{r.n_cells},{r.k},{r.mean_esr!r},"
                        f"{r.stderr!r},{r.n_tasks}\n")

    def lookup(self, method: str, k: int) -> ResultRow:
        for r in self.rows:
            if r.method == method and r.k == k:
                return r
        raise KeyError((method, k))


def _aggregate(method: str, n_cells: int, k: int,
               traces: list[EpisodeTrace]) -> ResultRow:
    scored = [t.esr for t in traces if t.n_targets > 0]
    mean = float(np.mean(scored)) if scored else 0.0
    stderr = float(np.std(scored, ddof=1) / math.sqrt(len(scored))) \
        if len(scored) > 1 else 0.0
    return ResultRow(method=method, n_cells=n_cells, k=k, mean_esr=mean,
                     stderr=stderr, n_tasks=len(scored))


def random_episode(task: Task, k: int, rng: np.random.Generator) -> EpisodeTrace:
    state = initial_state(task, k)
    records = []
    for t in range(k):
        mask = state.unqueried_mask()
        dist = np.where(mask, 1.0 / mask.sum(), 0.0)
        cell = random_policy(state, rng)
        state, r = step(state, task, cell)
        records.append(StepRecord(step=t, distribution=dist, cell=cell,
                                  reward=r, observed=r,
                                  remaining_budget=state.remaining_budget))
    utility = sum(1 for rec in records if rec.reward == 1)
    return EpisodeTrace(task_id=task.id, initial_budget=k, steps=records,
                        utility=utility, esr=esr(utility, task.n_targets, k),
                        n_targets=task.n_targets)


def greedy_episode(net: GreedyNet, task: Task, k: int) -> EpisodeTrace:
    """Queries the top-k cells in score order; no adaptation to outcomes."""
    order = greedy_topk(net, task, k)
    scores = net.scores(features_to_map(task)).astype(np.float64)
    state = initial_state(task, k)
    records = []
    for t, cell in enumerate(order):
        mask = state.unqueried_mask()
        masked = np.where(mask, scores, 0.0)
        total = masked.sum()
        dist = masked / total if total > 0 else np.where(mask, 1.0 / mask.sum(), 0.0)
        state, r = step(state, task, cell)
        records.append(StepRecord(step=t, distribution=dist, cell=cell,
                                  reward=r, observed=r,
                                  remaining_budget=state.remaining_budget))
    utility = sum(1 for rec in records if rec.reward == 1)
    return EpisodeTrace(task_id=task.id, initial_budget=k, steps=records,
                        utility=utility, esr=esr(utility, task.n_targets, k),
                        n_targets=task.n_targets)


def evaluate(method: str, dataset, budgets, *, policy: VasPolicy | None = None,
             net: GreedyNet | None = None, tta_cfg: TtaConfig | None = None,
             recon_head: ReconHead | None = None, seed: int = 0,
             collect_traces: bool = False):
    """Argmax-mode evaluation of one method over all tasks at each budget.

    Returns a ResultTable, or (ResultTable, {k: [EpisodeTrace]}) when
    collect_traces is set.  Zero-target tasks are excluded from aggregates.
    TTA streams process tasks in dataset order, restarting the session per
    budget.
    """
    if method not in METHODS:
        raise ConfigurationError(f"unknown method {method!r}")
    if method in ("vas", "vas-no-rsb") and policy is None:
        raise ConfigurationError(f"method {method} needs a trained policy")
    if method in ("greedy-class", "greedy-select") and net is None:
        raise ConfigurationError(f"method {method} needs a trained net")
    table = ResultTable()
    all_traces: dict[int, list[EpisodeTrace]] = {}
    for k in budgets:
        rng = np.random.default_rng(seed + k)
        traces = []
        if method in ("vas", "vas-no-rsb") and tta_cfg is not None \
                and tta_cfg.mode != "none":
            snapshot = policy.params.snapshot()
            session = TtaSession(policy, tta_cfg, recon_head)
            for task in dataset:
                traces.append(session.run_task(task, min(k, task.n_cells), rng))
            policy.params.restore(snapshot)
        else:
            for task in dataset:
                kk = min(k, task.n_cells)
                if method in ("vas", "vas-no-rsb"):
                    traces.append(rollout(policy, task, kk, "argmax"))
                elif method == "random":
                    traces.append(random_episode(task, kk, rng))
                else:
                    traces.append(greedy_episode(net, task, kk))
        n_cells = dataset.grid_shape[0] * dataset.grid_shape[1]
        table.rows.append(_aggregate(method, n_cells, k, traces))
        all_traces[k] = traces
    if collect_traces:
        return table, all_traces
    return table


def write_tta_report(traces_by_mode: dict, k: int, path: str) -> None:
    """CSV report: task id, mode, K, utility, esr, n_updates."""
    with open(path, "w", encoding="utf-8") as f:
        f.write("task,mode,K,utility,esr,n_updates\n")
        for mode, entries in traces_by_mode.items():
            for trace, n_updates in entries:
                f.write(f"{trace.task_id},{mode},{k},{trace.utility},"
                        f"{trace.esr!r},{n_updates}\n")


def shift_protocol(policy: VasPolicy, test_dataset, budgets, tta_modes,
                   *, recon_head: ReconHead | None = None,
                   tta_cfg_overrides: dict | None = None,
                   seed: int = 0) -> dict[str, ResultTable]:
    """Evaluate a trained policy on a shifted test stream per TTA mode."""
    results = {}
    overrides = tta_cfg_overrides or {}
    for mode in tta_modes:
        cfg = TtaConfig(mode=mode, **overrides)
        results[mode] = evaluate("vas", test_dataset, budgets, policy=policy,
                                 tta_cfg=cfg, recon_head=recon_head, seed=seed)
    return results


def sensitivity_trace(policy: VasPolicy, task: Task, k: int,
                      intervention: str = "none") -> EpisodeTrace:
    """Argmax rollout with query outcomes optionally forced to +1/-1."""
    return rollout(policy, task, k, "argmax", intervention=intervention)


def first_divergence_step(trace_a: EpisodeTrace, trace_b: EpisodeTrace):
    """Index of the first differing query, or None if identical."""
    for i, (a, b) in enumerate(zip(trace_a.steps, trace_b.steps)):
        if a.cell != b.cell:
            return i
    if len(trace_a.steps) != len(trace_b.steps):
        return min(len(trace_a.steps), len(trace_b.steps))
    return None


# -- heatmap / saliency export ------------------------------------------------

_CELL = 28
_PAD = 6
_STEP_GAP = 14


def _write_rows_csv(rows: list[np.ndarray], path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        n = len(rows[0]) if rows else 0
        f.write("step," + ",".join(f"v{j}" for j in range(n)) + "\n")
        for i, row in enumerate(rows):
            f.write(str(i) + "," + ",".join(repr(float(v)) for v in row) + "\n")


def _render_steps_svg(per_step: list[np.ndarray], grid_shape, trace,
                      path: str) -> None:
    """One grid per step, left to right; darker cell = higher value.

    Queried cells are annotated with their step number and +/- outcome.
    """
    rows, cols = grid_shape
    n_steps = len(per_step)
    width = _PAD + n_steps * (cols * _CELL + _STEP_GAP)
    height = 2 * _PAD + rows * _CELL + 16
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}">'
    ]
    for s, values in enumerate(per_step):
        vmax = float(np.max(values))
        x0 = _PAD + s * (cols * _CELL + _STEP_GAP)
        queried = {rec.cell: rec for rec in trace.steps[:s]}
        for j, v in enumerate(values):
            r, c = divmod(j, cols)
            shade = 255 - int(round(215 * (float(v) / vmax))) if vmax > 0 else 255
            x = x0 + c * _CELL
            y = _PAD + r * _CELL
            parts.append(
                f'<rect class="cell" x="{x}" y="{y}" width="{_CELL}" '
                f'height="{_CELL}" fill="rgb({shade},{shade},{shade})" '
                f'stroke="black" stroke-width="0.5"/>')
            if j in queried:
                rec = queried[j]
                sign = "+" if rec.observed > 0 else "−"
                parts.append(
                    f'<text x="{x + 3}" y="{y + 12}" font-size="9" '
                    f'fill="red">{escape(str(rec.step + 1) + sign)}</text>')
        parts.append(
            f'<text x="{x0}" y="{_PAD + rows * _CELL + 12}" font-size="10">'
            f'step {s + 1}</text>')
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(parts) + "\n")


def export_heatmap(trace: EpisodeTrace, policy: VasPolicy | None, task: Task,
                   out_prefix: str) -> tuple[str, str]:
    """Per-step policy distributions as CSV + SVG; returns the two paths."""
    rows = [rec.distribution for rec in trace.steps]
    csv_path = out_prefix + "_heatmap.csv"
    svg_path = out_prefix + "_heatmap.svg"
    _write_rows_csv(rows, csv_path)
    _render_steps_svg(rows, task.grid_shape, trace, svg_path)
    return csv_path, svg_path


def export_saliency(trace: EpisodeTrace, policy: VasPolicy, task: Task,
                    out_prefix: str) -> tuple[str, str]:
    """Per-step saliency maps of the chosen output w.r.t. the input features."""
    fmap = features_to_map(task)
    state = initial_state(task, trace.initial_budget)
    rows = []
    from .task import apply_outcome

    for rec in trace.steps:
        rows.append(policy.saliency(fmap, state, rec.cell))
        state = apply_outcome(state, rec.cell, rec.observed)
    csv_path = out_prefix + "_saliency.csv"
    svg_path = out_prefix + "_saliency.svg"
    _write_rows_csv(rows, csv_path)
    _render_steps_svg(rows, task.grid_shape, trace, svg_path)
    return csv_path, svg_path
