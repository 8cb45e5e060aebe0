"""Chebyshev-Lobatto collocation helpers (nodes, barycentric interpolation, quadrature)."""
import numpy as np
from numba import njit


def lobatto(N, lo=0.0, hi=1.0):
    """N+1 Chebyshev-Lobatto points on [lo, hi], ascending."""
    k = np.arange(N + 1)
    return lo + (hi - lo) * (1.0 - np.cos(np.pi * k / N)) / 2.0


def bary_weights(N):
    w = (-1.0) ** np.arange(N + 1)
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def cc_weights(N, lo=0.0, hi=1.0):
    """Clenshaw-Curtis weights matching lobatto(N, lo, hi)."""
    theta = np.pi * np.arange(N + 1) / N
    w = np.zeros(N + 1)
    ii = np.arange(1, N)
    v = np.ones(N - 1)
    if N % 2 == 0:
        w[0] = w[N] = 1.0 / (N * N - 1)
        for k in range(1, N // 2):
            v -= 2.0 * np.cos(2 * k * theta[ii]) / (4 * k * k - 1)
        v -= np.cos(N * theta[ii]) / (N * N - 1)
    else:
        w[0] = w[N] = 1.0 / N**2
        for k in range(1, (N - 1) // 2 + 1):
            v -= 2.0 * np.cos(2 * k * theta[ii]) / (4 * k * k - 1)
    w[ii] = 2.0 * v / N
    return w * (hi - lo) / 2.0


@njit(cache=True)
def _interp_rows(nodes, bw, y, out):
    n = nodes.shape[0]
    for i in range(y.shape[0]):
        yi = y[i]
        hit = -1
        for k in range(n):
            if yi == nodes[k]:
                hit = k
                break
        if hit >= 0:
            for k in range(n):
                out[i, k] = 0.0
            out[i, hit] = 1.0
            continue
        s = 0.0
        for k in range(n):
            t = bw[k] / (yi - nodes[k])
            out[i, k] = t
            s += t
        for k in range(n):
            out[i, k] /= s


def interp_matrix(nodes, bw, y):
    """Rows evaluate the nodal interpolant at the points y."""
    y = np.ascontiguousarray(np.asarray(y, dtype=float).ravel())
    out = np.empty((y.size, nodes.size))
    _interp_rows(nodes, bw, y, out)
    return out


@njit(cache=True)
def assemble(H, W, nodes, bw, out):
    """out[i, k] += sum_j W[j, i] * ell_k(H[j, i]) (complex weights)."""
    n = nodes.shape[0]
    t = np.empty(n)
    for j in range(H.shape[0]):
        for i in range(H.shape[1]):
            y = H[j, i]
            wt = W[j, i]
            if wt == 0:
                continue
            hit = -1
            for k in range(n):
                if y == nodes[k]:
                    hit = k
                    break
            if hit >= 0:
                out[i, hit] += wt
                continue
            s = 0.0
            for k in range(n):
                t[k] = bw[k] / (y - nodes[k])
                s += t[k]
            for k in range(n):
                out[i, k] += wt * (t[k] / s)
