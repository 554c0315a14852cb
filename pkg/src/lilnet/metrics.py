"""Accuracy, within-class isometry diagnostics and empirical Lipschitz estimates."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .datasets import LabeledDataset
from .linalg import Rng, make_rng

DEFAULT_MAX_PAIRS = 10_000
MIN_INPUT_DIST = 1e-9


def accuracy(net, ds: LabeledDataset, level: int = 0) -> float:
    if not 0 <= level < ds.n_levels:
        raise ValueError(f"dataset has no label level {level}")
    if len(ds) == 0:
        raise ValueError("cannot score an empty dataset")
    pred = net.predict(ds.points, level)
    return float(np.mean(pred == ds.labels[level]))


def _class_pairs(n: int, max_pairs: int | None, rng: Rng):
    i, j = np.triu_indices(n, k=1)
    if max_pairs is not None and i.size > max_pairs:
        keep = np.sort(rng.choice(i.size, size=max_pairs, replace=False))
        i, j = i[keep], j[keep]
    return i, j


def _row_dist(a, i, j, chunk_elems: int = 1 << 22):
    # chunked so all-pairs reports on high-dimensional data stay within memory
    out = np.empty(len(i))
    step = max(1, chunk_elems // max(1, a.shape[1]))
    for s in range(0, len(i), step):
        diff = a[i[s:s + step]] - a[j[s:s + step]]
        out[s:s + step] = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    return out


@dataclass
class ClassIsometry:
    label: int
    input_dist: np.ndarray
    repr_dist: np.ndarray
    pearson_r: float
    mean_abs_residual: float
    empirical_k: float

    @property
    def n_pairs(self) -> int:
        return int(self.input_dist.size)


@dataclass
class IsometryReport:
    classes: list[ClassIsometry]
    warnings: list[str] = field(default_factory=list)

    def by_label(self, label: int) -> ClassIsometry:
        for c in self.classes:
            if c.label == label:
                return c
        raise KeyError(label)

    @property
    def max_k(self) -> float:
        return max(c.empirical_k for c in self.classes)

    def rows(self) -> list[dict]:
        return [
            {
                "class": c.label,
                "pearson_r": c.pearson_r,
                "mean_abs_residual": c.mean_abs_residual,
                "empirical_K": c.empirical_k,
                "n_pairs": c.n_pairs,
            }
            for c in self.classes
        ]


def pearson(a: np.ndarray, b: np.ndarray) -> float:
    """Pearson r, or NaN when either side has zero variance."""
    a = a - a.mean()
    b = b - b.mean()
    den = np.sqrt(np.sum(a * a) * np.sum(b * b))
    if den == 0 or not np.isfinite(den):
        return float("nan")
    return float(np.clip(np.sum(a * b) / den, -1.0, 1.0))


def isometry_report(X, Phi, labels, max_pairs: int | None = DEFAULT_MAX_PAIRS, seed: int = 0) -> IsometryReport:
    X = np.asarray(X, dtype=np.float64)
    Phi = np.asarray(Phi, dtype=np.float64)
    labels = np.asarray(labels).ravel()
    if not (X.shape[0] == Phi.shape[0] == labels.shape[0]):
        raise ValueError("X, Phi and labels need the same number of rows")
    rng = make_rng(seed)
    out, warnings = [], []
    for c in np.unique(labels):
        # sorting by row content keeps the report independent of row order
        idx = np.flatnonzero(labels == c)
        idx = idx[np.lexsort(X[idx].T[::-1])] if idx.size else idx
        if idx.size < 2:
            warnings.append(f"class {int(c)}: fewer than 2 points, skipped")
            continue
        i, j = _class_pairs(idx.size, max_pairs, rng)
        din = _row_dist(X[idx], i, j)
        dout = _row_dist(Phi[idx], i, j)
        r = pearson(din, dout)
        if np.isnan(r):
            warnings.append(f"class {int(c)}: zero distance variance, correlation undefined")
        ok = din > MIN_INPUT_DIST
        k = float(np.max(dout[ok] / din[ok])) if ok.any() else 0.0
        out.append(ClassIsometry(int(c), din, dout, r, float(np.mean(np.abs(din - dout))), k))
    return IsometryReport(out, warnings)


def distance_histograms(X, Phi, labels, n_bins: int) -> list[dict]:
    """Per-class histograms of input and representation distances on shared bin edges."""
    if n_bins < 1:
        raise ValueError(f"n_bins must be >= 1, got {n_bins}")
    rep = isometry_report(X, Phi, labels, max_pairs=None)
    rows = []
    for c in rep.classes:
        lo = float(min(c.input_dist.min(), c.repr_dist.min()))
        hi = float(max(c.input_dist.max(), c.repr_dist.max()))
        edges = np.histogram_bin_edges(np.array([lo, hi]), bins=n_bins, range=(lo, hi))
        for space, d in (("input", c.input_dist), ("repr", c.repr_dist)):
            counts, _ = np.histogram(d, bins=edges)
            for b in range(n_bins):
                rows.append({"class": c.label, "space": space, "bin_lo": float(edges[b]),
                             "bin_hi": float(edges[b + 1]), "count": int(counts[b])})
    return rows


def sample_same_class_pairs(labels, n_pairs: int, rng: Rng):
    """``n_pairs`` random same-class index pairs (i != j), drawn with replacement."""
    if n_pairs < 1:
        raise ValueError(f"n_pairs must be >= 1, got {n_pairs}")
    labels = np.asarray(labels).ravel()
    groups = [np.flatnonzero(labels == c) for c in np.unique(labels)]
    groups = [g for g in groups if g.size >= 2]
    if not groups:
        raise ValueError("no class has two or more points")
    sizes = np.array([g.size * (g.size - 1) for g in groups], dtype=np.float64)
    which = rng.choice(len(groups), size=n_pairs, p=sizes / sizes.sum())
    ii = np.empty(n_pairs, dtype=np.int64)
    jj = np.empty(n_pairs, dtype=np.int64)
    for g_idx, g in enumerate(groups):
        sel = np.flatnonzero(which == g_idx)
        a = rng.integers(0, g.size, size=sel.size)
        b = rng.integers(0, g.size - 1, size=sel.size)
        b = b + (b >= a)
        ii[sel], jj[sel] = g[a], g[b]
    return ii, jj


def lipschitz_ratios(embed, X, i, j) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    Phi = np.asarray(embed(X), dtype=np.float64)
    din = _row_dist(X, i, j)
    ok = din > MIN_INPUT_DIST
    return _row_dist(Phi, i[ok], j[ok]) / din[ok]


def empirical_lipschitz(embed, ds: LabeledDataset, n_pairs: int, rng: Rng, level: int = 0) -> float:
    """Max within-class ratio ``d(f(x), f(y)) / d(x, y)`` over sampled pairs; a lower bound on K.

    ``embed`` is a callable ``X -> Phi`` or a network (its last representation is used).
    """
    if hasattr(embed, "represent"):
        embed = embed.represent
    i, j = sample_same_class_pairs(ds.labels[level], n_pairs, rng)
    ratios = lipschitz_ratios(embed, ds.points, i, j)
    if ratios.size == 0:
        raise ValueError("no sampled pair has a positive input distance")
    return float(ratios.max())
