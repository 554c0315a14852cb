"""Tanh MLP blocks with linear heads, stacked with hard gradient isolation.

A block maps ``X -> Phi -> logits``: every hidden layer is ``tanh(X W^T + b)``,
``Phi`` is the last hidden activation and the head is a plain affine map.
In a stack, block ``k`` consumes block ``k-1``'s ``Phi`` as its input, but
its parameter gradients stop at that boundary.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .linalg import Rng


@dataclass
class NetworkConfig:
    """Widths ``[D, n_1, ..., n_L]`` of the first block plus one class count per level.

    Every block shares the hidden widths ``n_1..n_L``; block ``k > 0`` takes
    ``n_L`` inputs. Block ``k`` classifies hierarchy level ``levels[k]``.
    """

    layer_widths: list[int]
    num_classes_per_level: list[int]
    levels: list[int] | None = None

    def __post_init__(self):
        self.layer_widths = [int(w) for w in self.layer_widths]
        self.num_classes_per_level = [int(c) for c in self.num_classes_per_level]
        if len(self.layer_widths) < 2:
            raise ValueError("layer_widths needs an input width and at least one hidden layer")
        if any(w < 1 for w in self.layer_widths):
            raise ValueError(f"all widths must be >= 1, got {self.layer_widths}")
        if not self.num_classes_per_level or any(c < 1 for c in self.num_classes_per_level):
            raise ValueError(f"num_classes_per_level must be non-empty and >= 1, got {self.num_classes_per_level}")
        if self.levels is None:
            self.levels = list(range(len(self.num_classes_per_level)))
        self.levels = [int(v) for v in self.levels]
        for lvl in self.levels:
            if not 0 <= lvl < len(self.num_classes_per_level):
                raise ValueError(f"block level {lvl} has no class count")

    @property
    def hidden_widths(self) -> list[int]:
        return self.layer_widths[1:]

    def to_dict(self) -> dict:
        return {
            "layer_widths": list(self.layer_widths),
            "num_classes_per_level": list(self.num_classes_per_level),
            "levels": list(self.levels),
        }


@dataclass
class LilBlock:
    weights: list[np.ndarray]  # each (n_out, n_in)
    biases: list[np.ndarray]   # each (n_out,)
    head_weight: np.ndarray    # (C, n_L)
    head_bias: np.ndarray      # (C,)

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("a block needs matching, non-empty weight and bias lists")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValueError(f"layer {k}: weight {w.shape} and bias {b.shape} do not match")
            if k > 0 and w.shape[1] != self.weights[k - 1].shape[0]:
                raise ValueError(f"layer {k} expects {w.shape[1]} inputs, previous layer gives {self.weights[k - 1].shape[0]}")
        if self.head_weight.shape[1] != self.rep_width or self.head_bias.shape != (self.head_weight.shape[0],):
            raise ValueError("head input width must equal the final hidden width")

    @property
    def in_width(self) -> int:
        return self.weights[0].shape[1]

    @property
    def rep_width(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def n_classes(self) -> int:
        return self.head_weight.shape[0]

    def params(self) -> list[np.ndarray]:
        """Parameter arrays in a fixed order; gradients use the same order."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out + [self.head_weight, self.head_bias]

    def copy(self) -> "LilBlock":
        return LilBlock(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.head_weight.copy(),
            self.head_bias.copy(),
        )


@dataclass
class ForwardTrace:
    inputs: np.ndarray
    pre: list[np.ndarray]   # affine outputs of each hidden layer
    acts: list[np.ndarray]  # tanh of each entry of ``pre``
    logits: np.ndarray

    @property
    def phi(self) -> np.ndarray:
        return self.acts[-1]


@dataclass
class StackedLilNetwork:
    blocks: list[LilBlock]
    levels: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not self.blocks:
            raise ValueError("a stacked network needs at least one block")
        if not self.levels:
            self.levels = list(range(len(self.blocks)))
        if len(self.levels) != len(self.blocks):
            raise ValueError("one hierarchy level per block is required")
        for k in range(1, len(self.blocks)):
            if self.blocks[k].in_width != self.blocks[k - 1].rep_width:
                raise ValueError(
                    f"block {k} expects {self.blocks[k].in_width} inputs but block {k - 1} "
                    f"produces {self.blocks[k - 1].rep_width}"
                )

    @property
    def in_width(self) -> int:
        return self.blocks[0].in_width

    def block_for_level(self, level: int) -> int:
        if level not in self.levels:
            raise ValueError(f"no block classifies hierarchy level {level} (levels: {self.levels})")
        return self.levels.index(level)

    def represent(self, X, block: int = -1) -> np.ndarray:
        return stacked_forward(self, X)[block].phi

    def predict(self, X, level: int = 0) -> np.ndarray:
        k = self.block_for_level(level)
        logits = stacked_forward(self, X)[k].logits
        # argmax returns the first maximum, so ties go to the lowest class index
        return np.argmax(logits, axis=1)


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def init_params(in_width: int, hidden_widths, n_classes: int, rng: Rng) -> LilBlock:
    """Glorot-uniform weights and zero biases for one block."""
    widths = [int(in_width)] + [int(w) for w in hidden_widths]
    if len(widths) < 2 or min(widths) < 1 or n_classes < 1:
        raise ValueError(f"invalid block shape {widths} -> {n_classes}")
    weights, biases = [], []
    for n_in, n_out in zip(widths[:-1], widths[1:]):
        a = glorot_bound(n_in, n_out)
        weights.append(rng.uniform(-a, a, size=(n_out, n_in)))
        biases.append(np.zeros(n_out))
    a = glorot_bound(widths[-1], n_classes)
    head_w = rng.uniform(-a, a, size=(n_classes, widths[-1]))
    return LilBlock(weights, biases, head_w, np.zeros(n_classes))


def init_network(config: NetworkConfig, rng: Rng) -> StackedLilNetwork:
    blocks = []
    in_width = config.layer_widths[0]
    for lvl in config.levels:
        block = init_params(in_width, config.hidden_widths, config.num_classes_per_level[lvl], rng)
        blocks.append(block)
        in_width = block.rep_width
    return StackedLilNetwork(blocks, list(config.levels))


def forward(block: LilBlock, X) -> ForwardTrace:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != block.in_width:
        raise ValueError(f"block expects inputs of width {block.in_width}, got shape {X.shape}")
    pre, acts = [], []
    h = X
    for w, b in zip(block.weights, block.biases):
        z = h @ w.T + b
        h = np.tanh(z)
        pre.append(z)
        acts.append(h)
    logits = h @ block.head_weight.T + block.head_bias
    return ForwardTrace(X, pre, acts, logits)


def backward(block: LilBlock, trace: ForwardTrace, dL_dlogits, dL_dPhi):
    """Reverse-mode pass through one block.

    The two upstream gradients are summed at the representation. Returns
    ``(param_grads, dL_dX)`` with ``param_grads`` ordered like ``block.params()``.
    """
    n = trace.inputs.shape[0]
    dlog = np.zeros_like(trace.logits) if dL_dlogits is None else np.asarray(dL_dlogits, dtype=np.float64)
    dphi = np.zeros_like(trace.phi) if dL_dPhi is None else np.asarray(dL_dPhi, dtype=np.float64)
    if dlog.shape != trace.logits.shape:
        raise ValueError(f"dL_dlogits shape {dlog.shape} != logits shape {trace.logits.shape}")
    if dphi.shape != trace.phi.shape:
        raise ValueError(f"dL_dPhi shape {dphi.shape} != representation shape {trace.phi.shape}")
    if trace.inputs.shape[0] != n or len(trace.acts) != len(block.weights):
        raise ValueError("trace does not belong to this block")

    g_head_w = dlog.T @ trace.phi
    g_head_b = dlog.sum(axis=0)
    dh = dphi + dlog @ block.head_weight

    layer_grads = []
    for k in range(len(block.weights) - 1, -1, -1):
        dz = dh * (1.0 - trace.acts[k] ** 2)
        h_in = trace.acts[k - 1] if k > 0 else trace.inputs
        layer_grads.append((dz.T @ h_in, dz.sum(axis=0)))
        dh = dz @ block.weights[k]
    grads = []
    for gw, gb in reversed(layer_grads):
        grads += [gw, gb]
    return grads + [g_head_w, g_head_b], dh


def stacked_forward(net: StackedLilNetwork, X) -> list[ForwardTrace]:
    traces = []
    h = X
    for block in net.blocks:
        trace = forward(block, h)
        traces.append(trace)
        h = trace.phi
    return traces


def stacked_input_gradient(net: StackedLilNetwork, traces, block_index: int, dL_dlogits, dL_dPhi) -> np.ndarray:
    """Gradient of a loss attached to ``block_index`` w.r.t. the raw network input.

    Parameter updates never use this path; it exists so attacks can differentiate
    through every block.
    """
    _, d = backward(net.blocks[block_index], traces[block_index], dL_dlogits, dL_dPhi)
    for k in range(block_index - 1, -1, -1):
        _, d = backward(net.blocks[k], traces[k], None, d)
    return d


# checkpoint I/O -----------------------------------------------------------

def _arr(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "data": [float(v) for v in a.ravel()]}


def _unarr(d: dict) -> np.ndarray:
    a = np.asarray(d["data"], dtype=np.float64).reshape(d["shape"])
    if not np.all(np.isfinite(a)):
        raise ValueError("checkpoint contains non-finite parameters")
    return a


def network_to_dict(net: StackedLilNetwork) -> dict:
    return {
        "levels": list(net.levels),
        "blocks": [
            {
                "layers": [{"weight": _arr(w), "bias": _arr(b)} for w, b in zip(blk.weights, blk.biases)],
                "head": {"weight": _arr(blk.head_weight), "bias": _arr(blk.head_bias)},
            }
            for blk in net.blocks
        ],
    }


def network_from_dict(d: dict) -> StackedLilNetwork:
    blocks = []
    for bd in d["blocks"]:
        blocks.append(
            LilBlock(
                [_unarr(layer["weight"]) for layer in bd["layers"]],
                [_unarr(layer["bias"]) for layer in bd["layers"]],
                _unarr(bd["head"]["weight"]),
                _unarr(bd["head"]["bias"]),
            )
        )
    return StackedLilNetwork(blocks, list(d["levels"]))


def save_checkpoint(path, net: StackedLilNetwork, config: dict | None = None, seed: int | None = None,
                    metadata: dict | None = None) -> None:
    doc = {
        "format": "lilnet-checkpoint/1",
        "config": config or {},
        "seed": seed,
        "metadata": metadata or {},
        "network": network_to_dict(net),
    }
    # repr-based float formatting round-trips float64 exactly
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load_checkpoint(path) -> tuple[StackedLilNetwork, dict]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != "lilnet-checkpoint/1":
        raise ValueError(f"{path}: not a lilnet checkpoint")
    return network_from_dict(doc["network"]), doc
