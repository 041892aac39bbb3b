"""Comparison policies: random search, greedy classification, greedy selection.

The greedy nets reuse the search policy's head topology minus the
observation/budget channels, so capacity differences do not confound the
comparison.  Both are non-adaptive: they commit to a ranking of cells from
features alone.
"""

from __future__ import annotations

import json
from dataclasses import asdict

import numpy as np

from .errors import NoActionError
from .nn import (
    Adam,
    Dense,
    Flatten,
    Network,
    ParamStore,
    PointwiseLinear,
    Relu,
    Sigmoid,
    Softmax,
    binary_cross_entropy,
)
from .policy import PolicyConfig, features_to_map
from .task import SearchState, Task, sample_budget
from .train import TrainConfig


class GreedyNet:
    """Feature-only scoring net.

    kind "classification": per-cell sigmoid probabilities, trained with BCE.
    kind "selection": softmax distribution over cells, trained by one-shot
    REINFORCE on sampled K-subsets.
    """

    def __init__(self, config: PolicyConfig, kind: str,
                 rng: np.random.Generator | None = None):
        if kind not in ("classification", "selection"):
            raise ValueError(f"unknown greedy kind {kind!r}")
        self.config = config
        self.kind = kind
        self.params = ParamStore()
        n = config.n_cells
        h, w = config.spatial_shape
        tail = Sigmoid() if kind == "classification" else Softmax()
        self.proj = PointwiseLinear(config.latent_channels, n, self.params,
                                    "proj", rng)
        self.head = Network([
            PointwiseLinear(n, 3, self.params, "conv2", rng),
            Flatten(),
            Dense(3 * h * w, 2 * n, self.params, "fc1", rng),
            Relu(),
            Dense(2 * n, n, self.params, "fc2", rng),
            tail,
        ])

    def scores(self, features_map: np.ndarray) -> np.ndarray:
        z = self.proj.forward(np.asarray(features_map, dtype=np.float64))
        return self.head.forward(z)

    def backward_from_logits(self, grad_logits: np.ndarray) -> np.ndarray:
        g_z = self.head.backward(grad_logits, from_logits=True)
        return self.proj.backward(g_z)

    def save(self, path: str) -> None:
        self.params.save(path)
        with open(path + ".json", "w", encoding="utf-8") as f:
            json.dump({"kind": f"greedy-{self.kind}",
                       "config": asdict(self.config)}, f, indent=1,
                      sort_keys=True)
            f.write("\n")

    @classmethod
    def load(cls, path: str) -> "GreedyNet":
        with open(path + ".json", "r", encoding="utf-8") as f:
            sidecar = json.load(f)
        kind = sidecar["kind"].removeprefix("greedy-")
        cfg = sidecar["config"]
        cfg["spatial_shape"] = tuple(cfg["spatial_shape"])
        net = cls(PolicyConfig(**cfg), kind)
        net.params.load(path)
        return net


def random_policy(state: SearchState, rng: np.random.Generator) -> int:
    """Uniform choice among unqueried cells."""
    candidates = np.flatnonzero(state.unqueried_mask())
    if candidates.size == 0:
        raise NoActionError("all cells have been queried")
    return int(rng.choice(candidates))


def greedy_topk(net: GreedyNet, task: Task, k: int) -> list[int]:
    """The k highest-scoring cells, descending, ties to lowest index."""
    from .errors import InvalidBudgetError

    if k > task.n_cells:
        raise InvalidBudgetError(f"k={k} exceeds N={task.n_cells}")
    scores = net.scores(features_to_map(task))
    order = np.argsort(-scores, kind="stable")
    return [int(i) for i in order[:k]]


def train_greedy_classifier(net: GreedyNet, dataset, cfg: TrainConfig):
    """Minimize mean per-cell BCE between sigmoid outputs and the labels."""
    if net.kind != "classification":
        raise ValueError("net is not a classification net")
    tasks = list(dataset)
    if not tasks:
        raise ValueError("dataset is empty")
    rng = np.random.default_rng(cfg.seed)
    optimizer = Adam(net.params, lr=cfg.learning_rate)
    losses = []
    for _epoch in range(cfg.epochs):
        order = rng.permutation(len(tasks))
        epoch_loss = 0.0
        for lo in range(0, len(order), cfg.batch_size):
            batch = order[lo:lo + cfg.batch_size]
            net.params.zero_grads()
            for idx in batch:
                task = tasks[idx]
                pred = net.scores(features_to_map(task))
                loss, dlogits = binary_cross_entropy(pred, task.labels)
                net.backward_from_logits(dlogits)
                epoch_loss += loss
            net.params.scale_grads(1.0 / len(batch))
            optimizer.step()
        losses.append(epoch_loss / len(tasks))
    return losses


def sample_without_replacement(psi: np.ndarray, k: int,
                               rng: np.random.Generator) -> list[int]:
    """k sequential renormalized draws from psi (no repeats)."""
    psi = np.asarray(psi, dtype=np.float64).copy()
    chosen = []
    for _ in range(k):
        total = psi.sum()
        if total <= 0:
            remaining = np.flatnonzero(psi >= 0)
            remaining = [i for i in remaining if i not in chosen]
            cell = int(rng.choice(remaining))
        else:
            cell = int(rng.choice(len(psi), p=psi / total))
        chosen.append(cell)
        psi[cell] = 0.0
    return chosen


def train_greedy_selection(net: GreedyNet, dataset, cfg: TrainConfig):
    """One-shot REINFORCE: sample K cells per task, score each with +/-1."""
    if net.kind != "selection":
        raise ValueError("net is not a selection net")
    tasks = list(dataset)
    if not tasks:
        raise ValueError("dataset is empty")
    rng = np.random.default_rng(cfg.seed)
    optimizer = Adam(net.params, lr=cfg.learning_rate)
    utilities = []
    for _epoch in range(cfg.epochs):
        order = rng.permutation(len(tasks))
        epoch_utility = 0.0
        for lo in range(0, len(order), cfg.batch_size):
            batch = order[lo:lo + cfg.batch_size]
            net.params.zero_grads()
            for idx in batch:
                task = tasks[idx]
                k = sample_budget(cfg.budget_spec, rng)
                k = min(k, task.n_cells)
                psi = net.scores(features_to_map(task))
                chosen = sample_without_replacement(psi, k, rng)
                # ascent gradient of sum_i r_i * log p(draw i | earlier draws)
                dlogits = np.zeros_like(psi)
                masked = psi.copy()
                for cell in chosen:
                    r = 1.0 if task.labels[cell] == 1 else -1.0
                    total = masked.sum()
                    psi_prime = np.where(masked > 0, masked / total, 0.0) \
                        if total > 0 else np.zeros_like(masked)
                    dlogits -= r * psi_prime
                    dlogits[cell] += r
                    epoch_utility += 1.0 if r > 0 else 0.0
                    masked[cell] = 0.0
                net.backward_from_logits(dlogits)
            net.params.scale_grads(-1.0 / len(batch))   # ascent
            optimizer.step()
        utilities.append(epoch_utility / len(tasks))
    return utilities
