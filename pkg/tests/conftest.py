import numpy as np
import pytest

from lilnet.linalg import make_rng
from lilnet.network import init_params

LD = np.longdouble

# finite differences run in 80-bit extended precision, so round-off
# (~1e-19 / h) sits far below the 1e-6 relative tolerance; the floor only
# guards entries that are zero up to that round-off
REL_FLOOR = 1e-9


def rel_err(a, b, floor=REL_FLOOR):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def central_diff(f, x, index, h=1e-6):
    """d f / d x[index] by central differences, restoring x afterwards."""
    old = x[index]
    x[index] = old + h
    up = f()
    x[index] = old - h
    down = f()
    x[index] = old
    return (up - down) / (2 * h)


# extended-precision reference implementation -----------------------------
# Written independently of lilnet: plain loops over pairs, explicit softmax.

def ld_params(block):
    return [p.astype(LD) for p in block.params()]


def ld_forward(params, X):
    h = np.asarray(X, dtype=LD)
    n_layers = (len(params) - 2) // 2
    for k in range(n_layers):
        h = np.tanh(h @ params[2 * k].T + params[2 * k + 1])
    return h, h @ params[-2].T + params[-1]


def ld_distance(a, b):
    return np.sqrt(np.sum((a - b) ** 2))


def ld_loss(params, X, y, alpha, beta, D_in=None, global_mode=False):
    X = np.asarray(X, dtype=LD)
    phi, logits = ld_forward(params, X)
    n = X.shape[0]
    cse = LD(0)
    for i in range(n):
        row = logits[i] - np.max(logits[i])
        cse -= row[y[i]] - np.log(np.sum(np.exp(row)))
    cse /= n
    iso = LD(0)
    if beta:
        for i in range(n):
            for j in range(n):
                if i == j or (not global_mode and y[i] != y[j]):
                    continue
                d_in = ld_distance(X[i], X[j]) if D_in is None else D_in[i][j]
                iso += (d_in - ld_distance(phi[i], phi[j])) ** 2
        iso /= n * n
    return LD(alpha) * cse + LD(beta) * iso


def ld_param_grad(block, X, y, alpha, beta, p, idx, h=1e-6, global_mode=False):
    params = ld_params(block)
    X = np.asarray(X, dtype=LD)
    D_in = [[ld_distance(a, b) for b in X] for a in X]
    return central_diff(lambda: ld_loss(params, X, y, alpha, beta, D_in, global_mode), params[p], idx, h)


def ld_input_grad(block, X, y, alpha, beta, idx, h=1e-6, global_mode=False):
    """Input derivative with the input distance matrix held at the unperturbed batch."""
    params = ld_params(block)
    X = np.asarray(X, dtype=LD)
    D_in = [[ld_distance(a, b) for b in X] for a in X]
    return central_diff(lambda: ld_loss(params, X, y, alpha, beta, D_in, global_mode), X, idx, h)


def random_block(rng, widths, n_classes):
    block = init_params(widths[0], widths[1:], n_classes, rng)
    # non-zero biases exercise every gradient path
    for b in block.biases:
        b[:] = rng.normal(scale=0.3, size=b.shape)
    block.head_bias[:] = rng.normal(scale=0.3, size=block.head_bias.shape)
    return block


@pytest.fixture
def rng():
    return make_rng(1234)
