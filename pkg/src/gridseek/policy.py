"""The search-policy network.

Layout (latent map C x h x w, grid of N cells):

    proj   : pointwise C -> N channels (trainable feature projection)
    encode : channel-concat [proj(features), tile(o), tile(B/normalizer)]
    head   : pointwise (2N+1) -> 3, flatten (3hw), dense 3hw -> 2N + ReLU,
             dense 2N -> N, softmax

The budget channel can be removed (`use_budget_channel=False`) to form the
ablated variant whose output is independent of the remaining budget.
Masked renormalization zeroes already-queried cells and rescales the rest.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ContractViolation, NoActionError, ShapeError
from .nn import (
    Dense,
    Flatten,
    Network,
    ParamStore,
    PointwiseLinear,
    Relu,
    Softmax,
)
from .task import SearchState, Task

LOG_CLAMP = 1e-12


@dataclass(frozen=True)
class PolicyConfig:
    n_cells: int
    latent_channels: int = 16
    spatial_shape: tuple[int, int] = (7, 7)
    use_budget_channel: bool = True
    budget_normalizer: float | None = None   # None -> n_cells

    def __post_init__(self):
        if self.n_cells < 1 or self.latent_channels < 1:
            raise ValueError("n_cells and latent_channels must be >= 1")
        h, w = self.spatial_shape
        if h < 1 or w < 1:
            raise ValueError("spatial_shape must be positive")

    @property
    def normalizer(self) -> float:
        return float(self.n_cells if self.budget_normalizer is None
                     else self.budget_normalizer)

    @property
    def fused_channels(self) -> int:
        return 2 * self.n_cells + (1 if self.use_budget_channel else 0)

    @classmethod
    def for_task_grid(cls, grid_shape, feature_dim, **kwargs):
        """Config whose latent map is the task's own feature grid."""
        rows, cols = grid_shape
        return cls(n_cells=rows * cols, latent_channels=feature_dim,
                   spatial_shape=(rows, cols), **kwargs)


def features_to_map(task: Task) -> np.ndarray:
    """Identity feature extractor: (N, d) features -> (d, rows, cols) map."""
    rows, cols = task.grid_shape
    return np.ascontiguousarray(
        task.features.reshape(rows, cols, task.feature_dim).transpose(2, 0, 1))


class VasPolicy:
    def __init__(self, config: PolicyConfig,
                 rng: np.random.Generator | None = None):
        self.config = config
        self.params = ParamStore()
        n = config.n_cells
        h, w = config.spatial_shape
        self.proj = PointwiseLinear(config.latent_channels, n, self.params,
                                    "proj", rng)
        self.head = Network([
            PointwiseLinear(config.fused_channels, 3, self.params, "conv2", rng),
            Flatten(),
            Dense(3 * h * w, 2 * n, self.params, "fc1", rng),
            Relu(),
            Dense(2 * n, n, self.params, "fc2", rng),
            Softmax(),
        ])

    # -- forward ---------------------------------------------------------

    def encode(self, features_map: np.ndarray, state: SearchState) -> np.ndarray:
        """Fuse projected features with tiled observations (and budget)."""
        cfg = self.config
        h, w = cfg.spatial_shape
        features_map = np.asarray(features_map, dtype=np.float64)
        if features_map.shape != (cfg.latent_channels, h, w):
            raise ShapeError(
                f"features map must be {(cfg.latent_channels, h, w)}, "
                f"got {features_map.shape}")
        if state.n_cells != cfg.n_cells:
            raise ShapeError(
                f"state has {state.n_cells} cells, policy expects {cfg.n_cells}")
        z = self.proj.forward(features_map)
        obs_tiles = np.broadcast_to(
            state.observations.astype(np.float64)[:, None, None],
            (cfg.n_cells, h, w))
        channels = [z, obs_tiles]
        if cfg.use_budget_channel:
            channels.append(np.full((1, h, w),
                                    state.remaining_budget / cfg.normalizer))
        return np.concatenate(channels, axis=0)

    def distribution(self, features_map: np.ndarray,
                     state: SearchState) -> np.ndarray:
        """Unmasked policy output: a probability vector over all N cells."""
        fused = self.encode(features_map, state)
        return self.head.forward(fused)

    # -- backward helpers --------------------------------------------------

    def _backward_from_logits(self, grad_logits: np.ndarray) -> np.ndarray:
        """Backprop a logit gradient through head and projection.

        Accumulates parameter gradients; returns the gradient w.r.t. the
        input feature map.
        """
        g_fused = self.head.backward(grad_logits, from_logits=True)
        return self.proj.backward(g_fused[: self.config.n_cells])

    def log_prob_gradient(self, features_map: np.ndarray, state: SearchState,
                          chosen_cell: int, weight: float = 1.0) -> float:
        """Accumulate weight * grad(log psi'_chosen) into the ParamStore.

        Differentiates through masking and renormalization; at the logits
        this gradient is exactly (one_hot(chosen) - psi').
        Returns log psi'_chosen.
        """
        if state.observations[chosen_cell] != 0:
            raise ContractViolation(f"cell {chosen_cell} was already queried")
        psi = self.distribution(features_map, state)
        psi_prime = masked_distribution(psi, state)
        grad_logits = -weight * psi_prime
        grad_logits[chosen_cell] += weight
        self._backward_from_logits(grad_logits)
        return float(np.log(max(psi_prime[chosen_cell], LOG_CLAMP)))

    def saliency(self, features_map: np.ndarray, state: SearchState,
                 chosen_cell: int) -> np.ndarray:
        """|d psi_chosen / d features| summed over channels, one value per cell.

        Parameter gradients are left untouched.
        """
        psi = self.distribution(features_map, state)
        # d psi_c / d logit_i = psi_c * (delta_ic - psi_i)
        grad_logits = -psi[chosen_cell] * psi
        grad_logits[chosen_cell] += psi[chosen_cell]
        saved = {name: p.grad.copy() for name, p in self.params.items()}
        try:
            g_in = self._backward_from_logits(grad_logits)
        finally:
            for name, p in self.params.items():
                p.grad[...] = saved[name]
        return np.abs(g_in).sum(axis=0).reshape(-1)

    # -- persistence -------------------------------------------------------

    def save(self, path: str) -> None:
        """VASP parameter file plus a JSON config sidecar at path + '.json'."""
        self.params.save(path)
        with open(path + ".json", "w", encoding="utf-8") as f:
            json.dump({"kind": "vas", "config": asdict(self.config)},
                      f, indent=1, sort_keys=True)
            f.write("\n")

    @classmethod
    def load(cls, path: str) -> "VasPolicy":
        with open(path + ".json", "r", encoding="utf-8") as f:
            sidecar = json.load(f)
        cfg = sidecar["config"]
        cfg["spatial_shape"] = tuple(cfg["spatial_shape"])
        policy = cls(PolicyConfig(**cfg))
        policy.params.load(path)
        return policy


def masked_distribution(psi: np.ndarray, state: SearchState) -> np.ndarray:
    """Zero queried cells and renormalize over the unqueried ones."""
    psi = np.asarray(psi, dtype=np.float64)
    mask = state.unqueried_mask()
    if not mask.any():
        raise NoActionError("all cells have been queried")
    total = psi[mask].sum()
    psi_prime = np.zeros_like(psi)
    if total <= 0.0:
        # degenerate underflow: fall back to uniform over the unqueried set
        psi_prime[mask] = 1.0 / mask.sum()
    else:
        psi_prime[mask] = psi[mask] / total
    return psi_prime


def select_action(psi_prime: np.ndarray, mode: str,
                  rng: np.random.Generator | None = None) -> int:
    """Draw from psi' ("sample") or take its max ("argmax", ties to lowest)."""
    if mode == "argmax":
        return int(np.argmax(psi_prime))
    if mode == "sample":
        if rng is None:
            raise ValueError("sample mode needs an rng")
        p = np.asarray(psi_prime, dtype=np.float64)
        p = p / p.sum()
        return int(rng.choice(len(p), p=p))
    raise ValueError(f"unknown selection mode {mode!r}")
