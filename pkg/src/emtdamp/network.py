"""Network hyperparameters (the group-sparse prior plus noise variance)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .prior import BGGroups

TASKS = ("regression", "classification")


@dataclass
class NetHyper:
    """Prior over all weights and biases plus the likelihood noise variance.

    ``weights[l]`` has ``mu.shape == (N_{l+1}, N_l)`` with one group per
    column (outgoing weights of an input/hidden neuron); ``biases[l]`` holds
    length-1 groups, ``mu.shape == (1, N_{l+1})``.
    """

    sizes: tuple[int, ...]
    task: str
    weights: list[BGGroups]
    biases: list[BGGroups]
    noise_var: float

    def __post_init__(self):
        self.sizes = tuple(int(s) for s in self.sizes)
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if len(self.weights) != len(self.sizes) - 1 or len(self.biases) != len(self.sizes) - 1:
            raise ValueError("one weight and one bias prior per layer")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.mu.shape != (self.sizes[l + 1], self.sizes[l]) or b.mu.shape != (1, self.sizes[l + 1]):
                raise ValueError(f"layer {l + 1} prior shapes do not match sizes {self.sizes}")
        if not self.noise_var > 0:
            raise ValueError("noise variance must be positive")
        if self.task == "classification" and self.sizes[-1] < 2:
            raise ValueError("classification needs at least two output classes")

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    @property
    def n_weight_groups(self) -> int:
        return sum(self.sizes[:-1])

    @property
    def n_bias_groups(self) -> int:
        return sum(self.sizes[1:])

    def weight_rho(self) -> np.ndarray:
        return np.concatenate([w.rho for w in self.weights])

    def set_weight_rho(self, rho) -> None:
        rho = np.asarray(rho, dtype=float)
        k = 0
        for w in self.weights:
            w.rho = rho[k : k + w.n_groups].copy()
            k += w.n_groups

    def copy(self) -> "NetHyper":
        return NetHyper(
            self.sizes, self.task, [w.copy() for w in self.weights], [b.copy() for b in self.biases], float(self.noise_var)
        )

    def check(self) -> None:
        for g in self.weights + self.biases:
            g.check()
        assert self.noise_var > 0


def init_hyper(
    sizes,
    task: str = "regression",
    rho0: float = 1.0,
    bias_var: float = 0.1,
    noise_var: float = 1.0,
    mean_scale: float = 1.0,
    seed: int = 0,
) -> NetHyper:
    """Fan-in scaled prior: slab variance 2/N_{l-1}, random slab means.

    Means are drawn from N(0, mean_scale/N_{l-1}); all-zero means leave the
    hidden units exchangeable and message passing never separates them.
    """
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        mu = rng.normal(0.0, np.sqrt(mean_scale / n_in), size=(n_out, n_in)) if mean_scale > 0 else np.zeros((n_out, n_in))
        weights.append(BGGroups(np.full(n_in, rho0), mu, np.full((n_out, n_in), 2.0 / n_in)))
        biases.append(BGGroups(np.ones(n_out), np.zeros((1, n_out)), np.full((1, n_out), bias_var)))
    return NetHyper(tuple(sizes), task, weights, biases, noise_var)


def relu(z):
    return np.maximum(z, 0.0)


def forward(weights, biases, x) -> np.ndarray:
    """Deterministic pass; ``x`` is (I, N_0), returns (I, N_L) pre-activation outputs."""
    u = np.asarray(x, dtype=float).T
    for l, (w, b) in enumerate(zip(weights, biases)):
        z = w @ u + b[:, None]
        u = relu(z) if l < len(weights) - 1 else z
    return u.T
