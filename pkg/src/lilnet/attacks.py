"""L-infinity FGSM and PGD against the training loss, plus robust-accuracy sweeps.

The loss being attacked is ``alpha * CSE + beta * ISO`` at one block of the
network. For the isometric term the attacked batch is its own reference: input
distances come from the clean batch and stay fixed while the inputs move.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datasets import LabeledDataset
from .linalg import pairwise_distances
from .losses import LossWeights, build_indexing_matrix, combined_loss
from .network import StackedLilNetwork, stacked_forward, stacked_input_gradient

FGSM = "fgsm"
PGD = "pgd"


@dataclass(frozen=True)
class LossContext:
    alpha: float = 1.0
    beta: float = 0.0
    level: int = 0
    mode: str = "combined"  # or "cse"
    global_isometry: bool = False

    def weights(self) -> LossWeights:
        return LossWeights(self.alpha, self.beta if self.mode == "combined" else 0.0)


@dataclass(frozen=True)
class AttackConfig:
    kind: str = FGSM
    epsilon: float = 0.1
    ball_radius: float = 0.5
    n_steps: int = 10
    clip_min: float = -np.inf
    clip_max: float = np.inf

    def __post_init__(self):
        if self.kind not in (FGSM, PGD):
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if self.epsilon < 0 or self.ball_radius < 0 or self.n_steps < 0:
            raise ValueError("epsilon, ball_radius and n_steps must be >= 0")
        if self.clip_min > self.clip_max:
            raise ValueError("clip_min must not exceed clip_max")


def loss_input_gradient(net: StackedLilNetwork, X, targets, ctx: LossContext, D_ref=None) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != net.in_width:
        raise ValueError(f"expected inputs of width {net.in_width}, got shape {X.shape}")
    k = net.block_for_level(ctx.level)
    traces = stacked_forward(net, X)
    weights = ctx.weights()
    if weights.beta > 0:
        if D_ref is None:
            D_ref = pairwise_distances(X)
        G = build_indexing_matrix(targets, ctx.global_isometry)
    else:
        G = None
    parts = combined_loss(traces[k], D_ref, G, targets, weights)
    return stacked_input_gradient(net, traces, k, parts.dL_dlogits, parts.dL_dPhi)


def fgsm(net, X, targets, ctx: LossContext, epsilon: float, clip_min=-np.inf, clip_max=np.inf) -> np.ndarray:
    if epsilon < 0:
        raise ValueError(f"epsilon must be >= 0, got {epsilon}")
    X = np.asarray(X, dtype=np.float64)
    g = loss_input_gradient(net, X, targets, ctx)
    # np.sign(0) == 0: flat coordinates stay put
    return np.clip(X + epsilon * np.sign(g), clip_min, clip_max)


def pgd(net, X, targets, ctx: LossContext, config: AttackConfig) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    D_ref = pairwise_distances(X) if ctx.weights().beta > 0 else None
    lo = X - config.ball_radius
    hi = X + config.ball_radius
    x = X.copy()
    for _ in range(config.n_steps):
        g = loss_input_gradient(net, x, targets, ctx, D_ref)
        x = np.clip(x + config.epsilon * np.sign(g), config.clip_min, config.clip_max)
        x = np.clip(x, lo, hi)
    return x


def attack(net, X, targets, ctx: LossContext, config: AttackConfig) -> np.ndarray:
    if config.kind == FGSM:
        return fgsm(net, X, targets, ctx, config.epsilon, config.clip_min, config.clip_max)
    return pgd(net, X, targets, ctx, config)


def log_sweep(lo: float = 0.01, hi: float = 1.0, n: int = 20) -> list[float]:
    if n < 1 or lo <= 0 or hi < lo:
        raise ValueError("log sweep needs n >= 1 and 0 < lo <= hi")
    return [float(v) for v in np.geomspace(lo, hi, n)]


def robust_accuracy_sweep(
    net,
    ds: LabeledDataset,
    kind: str,
    epsilons,
    ctx: LossContext,
    ball_radius: float = 0.5,
    n_steps: int = 10,
    clip_min: float = -np.inf,
    clip_max: float = np.inf,
    batch_size: int = 100,
) -> list[tuple[float, float]]:
    """``(epsilon, robust accuracy)`` per epsilon, attacking ``ds`` in fixed-order batches."""
    if len(ds) == 0:
        raise ValueError("cannot attack an empty dataset")
    targets = ds.labels[ctx.level]
    batches = [np.arange(s, min(s + batch_size, len(ds))) for s in range(0, len(ds), batch_size)]
    out = []
    for eps in epsilons:
        cfg = AttackConfig(kind, float(eps), ball_radius, n_steps, clip_min, clip_max)
        correct = 0
        for idx in batches:
            x_adv = attack(net, ds.points[idx], targets[idx], ctx, cfg)
            correct += int(np.sum(net.predict(x_adv, ctx.level) == targets[idx]))
        out.append((float(eps), correct / len(ds)))
    return out
