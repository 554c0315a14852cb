"""Cross-entropy, within-class isometric loss, and their weighted sum.

The isometric term is

    L_iso = 1/N^2 * sum_{i,j} G_ij (D_in_ij - |phi_i - phi_j|)^2

over ordered pairs of the current batch, where ``G`` selects same-class pairs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import pairwise_distances
from .network import ForwardTrace, LilBlock, backward

# pairs whose representations coincide get a zero subgradient
DEGENERATE_DIST = 1e-12


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0
    beta: float = 0.0

    def __post_init__(self):
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")


def build_indexing_matrix(labels, global_mode: bool = False) -> np.ndarray:
    labels = np.asarray(labels).ravel()
    n = labels.shape[0]
    if n < 1:
        raise ValueError("need at least one label")
    if global_mode:
        g = np.ones((n, n))
    else:
        g = (labels[:, None] == labels[None, :]).astype(np.float64)
    np.fill_diagonal(g, 0.0)
    return g


def softmax(logits) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, targets):
    """Mean negative log-likelihood and its gradient ``(softmax - onehot) / N``."""
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets).astype(np.int64).ravel()
    n, c = logits.shape
    if targets.shape[0] != n:
        raise ValueError(f"{targets.shape[0]} targets for {n} rows of logits")
    if targets.size and (targets.min() < 0 or targets.max() >= c):
        raise ValueError(f"targets must lie in [0, {c}), got range [{targets.min()}, {targets.max()}]")
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(log_norm - z[rows, targets]))
    grad = np.exp(z - log_norm[:, None])
    grad[rows, targets] -= 1.0
    return loss, grad / n


def _pair_weights(D_in, Phi, G):
    """Residuals ``H``, representation distances and ``G*H/d_phi`` (zero on degenerate pairs)."""
    d_phi = pairwise_distances(Phi)
    H = D_in - d_phi
    ok = d_phi >= DEGENERATE_DIST
    W = np.zeros_like(H)
    np.divide(G * H, d_phi, out=W, where=ok)
    return H, d_phi, W


def isometric_loss(D_in, Phi, G):
    D_in = np.asarray(D_in, dtype=np.float64)
    Phi = np.asarray(Phi, dtype=np.float64)
    G = np.asarray(G, dtype=np.float64)
    n = Phi.shape[0]
    if D_in.shape != (n, n) or G.shape != (n, n):
        raise ValueError(f"D_in {D_in.shape} and G {G.shape} must both be {n}x{n} for {n} representations")
    H, _, W = _pair_weights(D_in, Phi, G)
    loss = float(np.sum((G * H) ** 2) / n**2)
    # row i: -(4/N^2) sum_j G_ij H_ij (phi_i - phi_j) / d_ij
    grad = -(4.0 / n**2) * (W.sum(axis=1)[:, None] * Phi - W @ Phi)
    return loss, grad


@dataclass
class LossParts:
    total: float
    cse: float
    iso: float
    dL_dlogits: np.ndarray
    dL_dPhi: np.ndarray


def combined_loss(trace: ForwardTrace, D_in, G, targets, weights: LossWeights) -> LossParts:
    cse, g_log = softmax_cross_entropy(trace.logits, targets)
    if weights.beta > 0:
        iso, g_phi = isometric_loss(D_in, trace.phi, G)
    else:
        iso, g_phi = 0.0, np.zeros_like(trace.phi)
    return LossParts(
        total=weights.alpha * cse + weights.beta * iso,
        cse=cse,
        iso=iso,
        dL_dlogits=weights.alpha * g_log,
        dL_dPhi=weights.beta * g_phi,
    )


# closed-form input gradient ----------------------------------------------

def representation_jacobians(block: LilBlock, trace: ForwardTrace) -> np.ndarray:
    """Per-sample Jacobians ``d phi(x_i) / d x_i`` with shape (N, n_rep, D).

    Built from one backward pass per representation unit, seeding a one-hot
    gradient at the representation.
    """
    n, m = trace.phi.shape
    jac = np.empty((n, m, trace.inputs.shape[1]))
    zeros = np.zeros_like(trace.logits)
    for u in range(m):
        seed = np.zeros_like(trace.phi)
        seed[:, u] = 1.0
        _, dx = backward(block, trace, zeros, seed)
        jac[:, u, :] = dx
    return jac


@dataclass
class IsoGradTerms:
    """Pair quantities of the isometric input gradient.

    ``H[i, j]`` is the distance residual, ``J[i, j]`` the unit vector
    ``(phi_i - phi_j) / d(phi_i, phi_j)`` (zero on degenerate pairs), and
    ``bracket(i, j)`` the Jacobian difference ``dphi_j - dphi_i``.
    """

    H: np.ndarray
    J: np.ndarray
    valid: np.ndarray
    jacobians: np.ndarray

    def bracket(self, i: int, j: int) -> np.ndarray:
        return self.jacobians[j] - self.jacobians[i]


def iso_grad_terms(D_in, Phi, jacobians) -> IsoGradTerms:
    Phi = np.asarray(Phi, dtype=np.float64)
    d_phi = pairwise_distances(Phi)
    H = np.asarray(D_in, dtype=np.float64) - d_phi
    valid = d_phi >= DEGENERATE_DIST
    diff = Phi[:, None, :] - Phi[None, :, :]
    J = np.zeros_like(diff)
    np.divide(diff, d_phi[:, :, None], out=J, where=valid[:, :, None])
    return IsoGradTerms(H, J, valid, np.asarray(jacobians, dtype=np.float64))


def closed_form_input_gradient(X, trace: ForwardTrace, D_in, G, beta: float, jacobians) -> np.ndarray:
    """Input gradient of ``beta * L_iso`` assembled pair by pair from H, J and Jacobian brackets.

    Each unordered pair ``i > j`` contributes ``(4 beta / N^2) G_ij H_ij J_ij``
    pushed through the bracket: ``+J^T dphi_j`` on row ``j``, ``-J^T dphi_i`` on
    row ``i``. The input distances are held fixed.
    """
    X = np.asarray(X, dtype=np.float64)
    G = np.asarray(G, dtype=np.float64)
    n = X.shape[0]
    out = np.zeros_like(X)
    if beta == 0:
        return out
    terms = iso_grad_terms(D_in, trace.phi, jacobians)
    coef = 4.0 * beta / n**2
    for i in range(n):
        for j in range(i):
            if G[i, j] == 0 or not terms.valid[i, j]:
                continue
            c = coef * G[i, j] * terms.H[i, j]
            jij = terms.J[i, j]
            # bracket [phi_i, phi_j] acts row-wise on the batch
            out[j] += c * (jij @ terms.jacobians[j])
            out[i] -= c * (jij @ terms.jacobians[i])
    return out


def iso_gradient_bound(D_in, Phi, G, beta: float, lipschitz_k: float) -> float:
    """``(4 beta / N^2) * K * sum_{i>j} G_ij |H_ij|``: upper bound on any per-sample input-gradient norm."""
    n = Phi.shape[0]
    H = np.asarray(D_in) - pairwise_distances(Phi)
    lower = np.tril(np.asarray(G) * np.abs(H), k=-1)
    return float(4.0 * beta / n**2 * lipschitz_k * lower.sum())
