"""Mini-batch training of stacked LIL networks under ``alpha * CSE + beta * ISO``."""

from __future__ import annotations

import csv
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .datasets import LabeledDataset, make_batches
from .linalg import Rng, pairwise_distances
from .losses import LossWeights, build_indexing_matrix, combined_loss
from .metrics import IsometryReport, accuracy, isometry_report
from .network import StackedLilNetwork, backward, stacked_forward
from .optim import AdamState, adam_step


class NumericalError(RuntimeError):
    def __init__(self, epoch: int, batch: int, block: int):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}, block {block}")
        self.epoch = epoch
        self.batch = batch
        self.block = block


@dataclass
class TrainConfig:
    alpha: float = 1.0
    beta: float = 0.0
    epochs: int = 1
    batch_size: int | None = None  # None: full batch
    lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    hierarchy_plan: list[int] | None = None
    global_isometry: bool = False

    def __post_init__(self):
        LossWeights(self.alpha, self.beta)
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0 or not 0 <= self.adam_beta1 < 1 or not 0 <= self.adam_beta2 < 1 or self.adam_eps <= 0:
            raise ValueError("invalid Adam hyperparameters")

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.alpha, self.beta)


@dataclass
class TrainReport:
    losses: list[dict] = field(default_factory=list)  # epoch, batch, block, loss_total, loss_cse, loss_iso
    final_accuracy: dict[int, float] = field(default_factory=dict)
    seed: int = 0
    config: dict = field(default_factory=dict)
    wall_time: float = 0.0

    def epoch_count(self) -> int:
        return len({row["epoch"] for row in self.losses})

    def to_dict(self) -> dict:
        # wall time is kept out so reports from identical runs are byte-identical
        return {
            "seed": self.seed,
            "config": self.config,
            "final_accuracy": {str(k): v for k, v in self.final_accuracy.items()},
            "losses": self.losses,
        }

    def write_loss_csv(self, path) -> None:
        cols = ["epoch", "batch", "block", "loss_total", "loss_cse", "loss_iso"]
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
            w.writeheader()
            for row in self.losses:
                w.writerow({k: (repr(row[k]) if isinstance(row[k], float) else row[k]) for k in cols})


def _check_plan(net: StackedLilNetwork, ds: LabeledDataset, plan: list[int]) -> None:
    if len(plan) != len(net.blocks):
        raise ValueError(f"hierarchy plan has {len(plan)} entries for {len(net.blocks)} blocks")
    if ds.points.shape[1] != net.in_width:
        raise ValueError(f"dataset width {ds.points.shape[1]} != network input width {net.in_width}")
    for k, level in enumerate(plan):
        if not 0 <= level < ds.n_levels:
            raise ValueError(f"block {k} trains on level {level}, dataset has {ds.n_levels} levels")
        if ds.num_classes(level) > net.blocks[k].n_classes:
            raise ValueError(
                f"level {level} has {ds.num_classes(level)} classes, block {k} head has {net.blocks[k].n_classes}"
            )


def train(net: StackedLilNetwork, ds: LabeledDataset, cfg: TrainConfig, rng: Rng,
          block_order: list[int] | None = None) -> TrainReport:
    """Train every block of ``net`` in place on all rows of ``ds``.

    Each block's loss uses its own level's labels and the distances between the
    original inputs of the batch. Gradients stop at block boundaries.
    """
    plan = list(cfg.hierarchy_plan) if cfg.hierarchy_plan is not None else list(net.levels)
    _check_plan(net, ds, plan)
    net.levels = plan
    n = len(ds)
    batch_size = n if cfg.batch_size is None else min(cfg.batch_size, n)
    order = list(range(len(net.blocks))) if block_order is None else list(block_order)
    states = [
        AdamState.for_params(b.params(), lr=cfg.lr, beta1=cfg.adam_beta1, beta2=cfg.adam_beta2, eps=cfg.adam_eps)
        for b in net.blocks
    ]
    weights = cfg.weights
    report = TrainReport(seed=cfg.seed, config=asdict(cfg))
    start = time.perf_counter()
    for epoch in range(cfg.epochs):
        for b_idx, idx in enumerate(make_batches(n, batch_size, rng)):
            X = ds.points[idx]
            traces = stacked_forward(net, X)
            D_in = pairwise_distances(X) if weights.beta > 0 else None
            updates = {}
            rows = []
            for k in range(len(net.blocks)):
                targets = ds.labels[plan[k]][idx]
                G = build_indexing_matrix(targets, cfg.global_isometry) if weights.beta > 0 else None
                parts = combined_loss(traces[k], D_in, G, targets, weights)
                if not np.isfinite(parts.total):
                    raise NumericalError(epoch, b_idx, k)
                grads, _ = backward(net.blocks[k], traces[k], parts.dL_dlogits, parts.dL_dPhi)
                updates[k] = grads
                rows.append({"epoch": epoch, "batch": b_idx, "block": k, "loss_total": parts.total,
                             "loss_cse": parts.cse, "loss_iso": parts.iso})
            for k in order:
                adam_step(net.blocks[k].params(), updates[k], states[k])
            report.losses.extend(rows)
    report.wall_time = time.perf_counter() - start
    report.final_accuracy = {lvl: accuracy(net, ds, lvl) for lvl in plan}
    return report


def evaluate(net: StackedLilNetwork, ds: LabeledDataset, level: int = 0) -> tuple[float, IsometryReport]:
    acc = accuracy(net, ds, level)
    k = net.block_for_level(level)
    phi = stacked_forward(net, ds.points)[k].phi
    return acc, isometry_report(ds.points, phi, ds.labels[level])
