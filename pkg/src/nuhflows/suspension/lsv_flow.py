"""Suspension of the full LSV map with roof r(x) = r0 + r1 x.

This flow is isomorphic to the suspension of lsv_induced with the
return-time roof sum_{k < tau} r(T^k y), so it is the backend used to
simulate that semiflow.  Stationary samples are exact up to the truncation
of the excursion length at ``l_max``:

* draw l >= 0 with probability proportional to mu_Y(tau > l), where
  mu_Y(tau > l) = G(x_l) and mu_Y(tau > 0) = 1;
* l = 0: y ~ mu_Y; l >= 1: draw w = T_R y from G restricted to (0, x_l] and
  push it through T_L^(l-1);
* the flow coordinate is then drawn by rejection on r(x) / max r.
"""
from __future__ import annotations

import numpy as np
from numba import njit, prange

from ..errors import BadParams
from ..gibbs_markov import GMSystem, density_cdf, make_builtin
from ..gibbs_markov.systems import _lsv_preimages, _tl


@njit(cache=True)
def _T(x, alpha):
    if x <= 0.5:
        return _tl(x, alpha)
    return 2.0 * x - 1.0


@njit(cache=True, parallel=True)
def _push_left(w, l, alpha):
    out = np.empty_like(w)
    for i in prange(w.shape[0]):
        x = w[i]
        for _ in range(l[i] - 1):
            x = _tl(x, alpha)
        out[i] = x
    return out


@njit(cache=True, parallel=True)
def _advance(x, u, dt, alpha, r0, r1):
    steps = np.zeros(x.shape[0], dtype=np.int64)
    for i in prange(x.shape[0]):
        xi = x[i]
        ui = u[i] + dt
        r = r0 + r1 * xi
        k = 0
        while ui >= r:
            ui -= r
            xi = _T(xi, alpha)
            r = r0 + r1 * xi
            k += 1
        x[i] = xi
        u[i] = ui
        steps[i] = k
    return steps


class LSVFlow:
    """Flow on {(x, u): x in [0, 1], 0 <= u < r(x)} over the LSV map."""

    def __init__(self, alpha=0.5, r=(1.0, 1.0), l_max=10**6, gm: GMSystem | None = None):
        if not 0 < alpha < 1:
            raise BadParams("alpha must lie in (0, 1)")
        self.alpha = float(alpha)
        self.r0, self.r1 = float(r[0]), float(r[1])
        self.gm = gm or make_builtin("lsv_induced", {"alpha": alpha, "r": (self.r0, self.r1)})
        self.dens = density_cdf(self.gm)
        self.l_max = int(l_max)
        xs = _lsv_preimages(self.alpha, self.l_max)
        self.xs = xs
        tail = np.empty(self.l_max + 1)
        tail[0] = self.dens.total
        tail[1:] = self.dens.G(xs[1:])
        self.cum = np.cumsum(tail)
        self.mean_tau = self.cum[-1] / self.dens.total
        # mass of excursions longer than l_max, left out of the sampler
        self.truncated_mass = float(tail[-1] * self.l_max / self.cum[-1])

    @property
    def r_max(self):
        return max(self.r0, self.r0 + self.r1)

    def r(self, x):
        return self.r0 + self.r1 * np.asarray(x)

    def sample_map(self, n, rng):
        """n draws of the T-invariant probability measure."""
        l = np.searchsorted(self.cum, rng.random(n) * self.cum[-1], side="right")
        l = np.minimum(l, self.l_max)
        out = np.empty(n)
        zero = l == 0
        out[zero] = self.dens.sample(int(zero.sum()), rng)
        ex = ~zero
        if ex.any():
            le = l[ex]
            top = self.xs[le]
            target = rng.random(le.size) * self.dens.G(top)
            w = self.dens.G_inv(target, top)
            out[ex] = _push_left(np.ascontiguousarray(w), le.astype(np.int64), self.alpha)
        return out

    def sample(self, n, rng):
        x = np.empty(0)
        while x.size < n:
            m = int(1.3 * (n - x.size) * self.r_max / min(self.r0, self.r0 + self.r1)) + 64
            cand = self.sample_map(m, rng)
            keep = rng.random(m) * self.r_max < self.r(cand)
            x = np.concatenate([x, cand[keep]])
        x = x[:n].copy()
        return {"x": x, "u": rng.random(n) * self.r(x)}

    def advance(self, state, dt, rng=None):
        return _advance(state["x"], state["u"], float(dt), self.alpha, self.r0, self.r1)


def bump_observable(r0=1.0, r1=1.0):
    """v(x, u) = 1_{x > 1/2} sin^2(pi u / r(x)); vanishes at u = 0 and u = r(x)."""
    def v(state):
        x = state["x"]
        return (x > 0.5) * np.sin(np.pi * state["u"] / (r0 + r1 * x)) ** 2
    return v
