"""Synthetic search-task generator.

Targets are planted in spatial clusters; per-cell features separate
positives from negatives with a controllable signal strength.  A fraction
of negative cells can be turned into "confusers" whose features sit close
to the positive mean, emulating look-alike regions.

Two optional knobs support harder experiment families:

* ``motif_mix`` -- probability that a task's positive feature motif is
  flipped from axis ``target_motif`` to the other motif axis.  With
  ``motif_mix=0.5`` the positive appearance is ambiguous across tasks and
  only query outcomes disambiguate it.
* ``confuser_motif`` -- ``"same"`` draws confusers near the task's positive
  mean (default); ``"other"`` draws them near the alternative motif's mean.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np

from .dataio import TaskDataset
from .errors import GenerationConfigError
from .task import Task


@dataclass(frozen=True)
class SynthConfig:
    grid_shape: tuple[int, int] = (6, 6)
    feature_dim: int = 16
    n_clusters: int = 2
    cluster_spread: float = 1.0
    target_rate: float = 0.2
    signal_strength: float = 4.0
    noise_std: float = 1.0
    confuser_rate: float = 0.0
    seed: int = 0
    target_motif: int = 0
    motif_mix: float = 0.0
    confuser_motif: str = "same"   # "same" | "other"

    def __post_init__(self):
        rows, cols = self.grid_shape
        if rows * cols < 1:
            raise GenerationConfigError("grid must have at least one cell")
        if not 0.0 < self.target_rate < 1.0:
            raise GenerationConfigError("target_rate must be in (0,1)")
        if not 0.0 <= self.confuser_rate < 1.0:
            raise GenerationConfigError("confuser_rate must be in [0,1)")
        if self.cluster_spread <= 0:
            raise GenerationConfigError("cluster_spread must be > 0")
        if self.signal_strength < 0 or self.noise_std <= 0:
            raise GenerationConfigError("bad signal/noise settings")
        if self.n_clusters < 0:
            raise GenerationConfigError("n_clusters must be >= 0")
        if self.feature_dim < 1:
            raise GenerationConfigError("feature_dim must be >= 1")
        if self.target_motif not in (0, 1):
            raise GenerationConfigError("target_motif must be 0 or 1")
        if not 0.0 <= self.motif_mix <= 1.0:
            raise GenerationConfigError("motif_mix must be in [0,1]")
        if self.confuser_motif not in ("same", "other"):
            raise GenerationConfigError("confuser_motif must be same|other")


def config_hash(config: SynthConfig, n_tasks: int) -> str:
    payload = json.dumps({"config": asdict(config), "n_tasks": n_tasks},
                         sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def motif_direction(feature_dim: int, motif: int) -> np.ndarray:
    """Unit feature-space direction for motif 0 or 1."""
    direction = np.zeros(feature_dim)
    direction[min(motif, feature_dim - 1)] = 1.0
    return direction


def _confuser_perturb_direction(feature_dim: int) -> np.ndarray:
    direction = np.zeros(feature_dim)
    direction[min(2, feature_dim - 1)] = 1.0
    return direction


def _grow_cluster_cells(rng, rows, cols, center, count, claimed, spread):
    """Claim `count` cells around `center` via rounded Gaussian offsets.

    Stalled draws (already-claimed cells) fall back to the nearest
    unclaimed cell adjacent to the growing blob, keeping the cluster
    connected even as spread -> 0.
    """
    cells = []
    cr, cc = center
    blob = set()
    for _ in range(count):
        placed = None
        for _attempt in range(40):
            r = int(np.clip(round(cr + rng.normal(0.0, spread)), 0, rows - 1))
            c = int(np.clip(round(cc + rng.normal(0.0, spread)), 0, cols - 1))
            idx = r * cols + c
            if idx not in claimed:
                placed = idx
                break
        if placed is None:
            placed = _nearest_adjacent_unclaimed(rows, cols, center, blob, claimed)
            if placed is None:
                break  # grid exhausted
        claimed.add(placed)
        blob.add(placed)
        cells.append(placed)
    return cells


def _nearest_adjacent_unclaimed(rows, cols, center, blob, claimed):
    candidates = []
    if not blob:
        anchor_cells = [(center[0], center[1])]
    else:
        anchor_cells = [divmod(i, cols) for i in blob]
    seen = set()
    for (br, bc) in anchor_cells:
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                r, c = br + dr, bc + dc
                if 0 <= r < rows and 0 <= c < cols:
                    idx = r * cols + c
                    if idx not in claimed and idx not in seen:
                        seen.add(idx)
                        dist = (r - center[0]) ** 2 + (c - center[1]) ** 2
                        candidates.append((dist, idx))
    if not candidates:
        # blob is walled in; fall back to the globally nearest free cell
        for idx in range(rows * cols):
            if idx not in claimed:
                r, c = divmod(idx, cols)
                dist = (r - center[0]) ** 2 + (c - center[1]) ** 2
                candidates.append((dist, idx))
    if not candidates:
        return None
    candidates.sort()
    return candidates[0][1]


def _plant_clustered_cells(rng, rows, cols, n_cells_wanted, n_clusters, spread,
                           claimed):
    """Return a list of claimed cell indices forming n_clusters blobs."""
    if n_cells_wanted == 0:
        return []
    if n_clusters == 0:
        free = [i for i in range(rows * cols) if i not in claimed]
        take = min(n_cells_wanted, len(free))
        chosen = rng.choice(len(free), size=take, replace=False)
        cells = [free[i] for i in chosen]
        claimed.update(cells)
        return cells
    centers = [(int(rng.integers(0, rows)), int(rng.integers(0, cols)))
               for _ in range(n_clusters)]
    per_cluster = [n_cells_wanted // n_clusters] * n_clusters
    for i in range(n_cells_wanted % n_clusters):
        per_cluster[i] += 1
    cells = []
    for center, count in zip(centers, per_cluster):
        cells.extend(_grow_cluster_cells(rng, rows, cols, center, count,
                                         claimed, spread))
    return cells


def generate_task(config: SynthConfig, task_id: str,
                  rng: np.random.Generator) -> Task:
    rows, cols = config.grid_shape
    n = rows * cols
    d = config.feature_dim

    n_pos = int(round(config.target_rate * n))
    if n_pos < 1 and config.n_clusters >= 1:
        raise GenerationConfigError(
            f"target_rate {config.target_rate} yields no positives on a "
            f"{rows}x{cols} grid but n_clusters >= 1")

    motif = config.target_motif
    if rng.random() < config.motif_mix:
        motif = 1 - motif

    claimed: set[int] = set()
    pos_cells = _plant_clustered_cells(rng, rows, cols, n_pos,
                                       config.n_clusters,
                                       config.cluster_spread, claimed)
    labels = np.zeros(n, dtype=np.uint8)
    labels[pos_cells] = 1

    neg_cells = [i for i in range(n) if labels[i] == 0]
    n_conf = int(round(config.confuser_rate * len(neg_cells)))
    conf_cells = _plant_clustered_cells(rng, rows, cols, n_conf,
                                        config.n_clusters,
                                        config.cluster_spread, claimed)

    mu_pos = config.signal_strength * config.noise_std * motif_direction(d, motif)
    if config.confuser_motif == "same":
        mu_conf = mu_pos + 0.5 * config.noise_std * _confuser_perturb_direction(d)
    else:
        mu_conf = (config.signal_strength * config.noise_std
                   * motif_direction(d, 1 - motif)
                   + 0.5 * config.noise_std * _confuser_perturb_direction(d))

    features = config.noise_std * rng.standard_normal((n, d))
    features[labels == 1] += mu_pos
    features[conf_cells] += mu_conf
    return Task(id=task_id, grid_shape=(rows, cols), features=features,
                labels=labels)


def generate(config: SynthConfig, n_tasks: int, split: str = "train") -> TaskDataset:
    """Deterministically generate `n_tasks` tasks from (config, n_tasks)."""
    if n_tasks < 1:
        raise GenerationConfigError("n_tasks must be >= 1")
    root = np.random.SeedSequence(config.seed)
    children = root.spawn(n_tasks)
    tasks = [
        generate_task(config, f"synth-{config.seed}-{i:05d}",
                      np.random.Generator(np.random.PCG64(child)))
        for i, child in enumerate(children)
    ]
    return TaskDataset(tasks=tasks, split=split, provenance="synthetic",
                       config_hash=config_hash(config, n_tasks))
