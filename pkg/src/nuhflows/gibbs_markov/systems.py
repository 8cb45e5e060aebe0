"""Full-branch Gibbs-Markov interval maps and roof functions.

Three builtins:

* ``doubling``: x -> 2x mod 1 on [0, 1], branches 0 and 1;
* ``gauss``: x -> 1/x mod 1 on [0, 1], branches j >= 1 with Y_j = (1/(j+1), 1/j];
* ``lsv_induced``: the first return map to Y = (1/2, 1] of the
  Liverani-Saussol-Vaienti map T(x) = x(1 + (2x)^alpha) on [0, 1/2],
  2x - 1 on (1/2, 1].  Branch j collects the points with return time j.

Branches are described by their inverse maps h_j and |h_j'|.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from ..errors import BadParams
from . import _cheb

# ------------------------------------------------------------------ LSV pieces


@njit(cache=True)
def _tl(x, alpha):
    return x * (1.0 + (2.0 * x) ** alpha)


@njit(cache=True)
def _tl_prime(x, alpha):
    return 1.0 + (1.0 + alpha) * (2.0 * x) ** alpha


@njit(cache=True)
def _tl_inv(w, alpha):
    # Newton on x(1 + (2x)^alpha) = w, x in (0, 1/2]
    x = w / (1.0 + (2.0 * w) ** alpha)
    for _ in range(60):
        f = _tl(x, alpha) - w
        dx = f / _tl_prime(x, alpha)
        x -= dx
        if x <= 0.0:
            x = 0.5 * (x + dx)
        if abs(dx) <= 1e-17 * x:
            break
    return x


@njit(cache=True)
def _lsv_preimages(alpha, n):
    # x_0 = 1, x_1 = 1/2, x_{k+1} = T_L^{-1}(x_k)
    xs = np.empty(n + 1)
    xs[0] = 1.0
    xs[1] = 0.5
    for k in range(1, n):
        xs[k + 1] = _tl_inv(xs[k], alpha)
    return xs


@njit(cache=True)
def _lsv_branches(x, alpha, J, rc0, rc1):
    """Inverse branches of the induced map at the points x (in Y).

    Returns H[j-1, i] = h_j(x_i), D = |h_j'(x_i)| and the excursion roof
    Phi[j-1, i] = sum of r over the orbit segment y, Ty, ..., T^{j-1}y with
    y = h_j(x_i) and r(u) = rc0 + rc1 * u.
    """
    n = x.shape[0]
    H = np.empty((J, n))
    D = np.empty((J, n))
    P = np.empty((J, n))
    for i in range(n):
        w = x[i]
        d = 0.5
        S = 0.0
        for j in range(J):
            if j > 0:
                w = _tl_inv(w, alpha)
                d /= _tl_prime(w, alpha)
                S += rc0 + rc1 * w
            y = 0.5 * (1.0 + w)
            H[j, i] = y
            D[j, i] = d
            P[j, i] = S + rc0 + rc1 * y
    return H, D, P


@njit(cache=True)
def _lsv_forward(y, alpha, rc0, rc1, cap):
    n = y.shape[0]
    out = np.empty(n)
    lab = np.empty(n, dtype=np.int64)
    roof = np.empty(n)
    for i in range(n):
        acc = rc0 + rc1 * y[i]
        w = 2.0 * y[i] - 1.0
        j = 1
        while w <= 0.5 and j < cap:
            acc += rc0 + rc1 * w
            w = _tl(w, alpha)
            j += 1
        out[i] = w
        lab[i] = j
        roof[i] = acc
    return out, lab, roof


# ------------------------------------------------------------------- systems
@dataclass
class GMSystem:
    """A full-branch Gibbs-Markov map on an interval [lo, hi].

    ``labels`` are the branch indices of a finite system; countable systems
    (``countable=True``) use labels 1, 2, ... truncated at ``J``.
    """
    name: str
    lo: float
    hi: float
    theta: float
    labels: tuple = ()
    countable: bool = False
    J: int = 0
    params: dict = field(default_factory=dict)
    _density_nodes: np.ndarray | None = None
    _density_vals: np.ndarray | None = None

    # -- partition ---------------------------------------------------------
    def branch_labels(self):
        if self.countable:
            return tuple(range(1, self.J + 1))
        return self.labels

    def branch_interval(self, j):
        if self.name == "doubling":
            return (0.5 * j, 0.5 * (j + 1))
        if self.name == "gauss":
            return (1.0 / (j + 1), 1.0 / j)
        xs = self._preimages(j)
        if j == 1:
            return (0.75, 1.0)
        return (0.5 * (1 + xs[j]), 0.5 * (1 + xs[j - 1]))

    def _preimages(self, n):
        cached = self.params.get("_xs")
        if cached is None or len(cached) <= n:
            cached = _lsv_preimages(self.params["alpha"], max(n, 64))
            self.params["_xs"] = cached
        return cached

    def branch_of(self, y):
        return self.forward(y)[1]

    # -- maps -----------------------------------------------------------------
    def inv(self, j, x):
        """h_j(x) and |h_j'(x)| for a single branch label j."""
        x = np.asarray(x, dtype=float)
        if self.name == "doubling":
            return 0.5 * (x + j), np.full_like(x, 0.5)
        if self.name == "gauss":
            return 1.0 / (j + x), 1.0 / (j + x) ** 2
        a = self.params["alpha"]
        H, D, _ = _lsv_branches(np.atleast_1d(x).astype(float), a, int(j), *self.params["r"])
        return H[-1].reshape(x.shape), D[-1].reshape(x.shape)

    def forward(self, y):
        """(F y, branch label, excursion roof or None)."""
        y = np.asarray(y, dtype=float)
        if self.name == "doubling":
            j = np.minimum(np.floor(2 * y), 1).astype(np.int64)
            return 2 * y - j, j, None
        if self.name == "gauss":
            inv = 1.0 / y
            j = np.floor(inv).astype(np.int64)
            # 1/j itself belongs to branch j, half-open (1/(j+1), 1/j]
            return inv - j, j, None
        a = self.params["alpha"]
        yy = np.atleast_1d(y).astype(float)
        fy, lab, roof = _lsv_forward(yy, a, *self.params["r"], 10**9)
        return fy.reshape(y.shape), lab.reshape(y.shape), roof.reshape(y.shape)

    def log_jacobian(self, y):
        """log |F'(y)|."""
        y = np.asarray(y, dtype=float)
        if self.name == "doubling":
            return np.full_like(y, math.log(2.0))
        if self.name == "gauss":
            return -2.0 * np.log(y)
        fy, lab, _ = self.forward(y)
        out = np.empty(np.size(y))
        for i, (z, j) in enumerate(zip(np.atleast_1d(fy), np.atleast_1d(lab))):
            out[i] = -math.log(float(self.inv(int(j), z)[1]))
        return out.reshape(np.shape(y))

    # -- branch tables for operator assembly ---------------------------------
    def branch_table(self, x, J=None):
        """Inverse-branch data at the points x.

        Returns (H, W, labels, excursion) where rows run over branches (and,
        for the Gauss map, over quadrature pseudo-branches covering j > J),
        W holds |h_j'| times any quadrature weight, and ``excursion`` is the
        return-time roof on each branch for lsv_induced (else None).
        """
        x = np.asarray(x, dtype=float)
        if self.name == "doubling":
            H = np.vstack([0.5 * x, 0.5 * (x + 1)])
            return H, np.full_like(H, 0.5), np.array([0.0, 1.0]), None
        J = int(J or self.J)
        if self.name == "gauss":
            j = np.arange(1, J + 1, dtype=float)
            # tail j > J: sum replaced by the integral from J + 1/2 (midpoint
            # rule), mapped to u = 1/j and done by Gauss-Legendre
            g, gw = np.polynomial.legendre.leggauss(24)
            U = 1.0 / (J + 0.5)
            u = 0.5 * U * (g + 1.0)
            jt = 1.0 / u
            wt = 0.5 * U * gw / u**2
            jj = np.concatenate([j, jt])
            ww = np.concatenate([np.ones(J), wt])
            H = 1.0 / (jj[:, None] + x[None, :])
            W = ww[:, None] * H**2
            return H, W, jj, None
        a = self.params["alpha"]
        H, D, P = _lsv_branches(np.ascontiguousarray(x), a, J, *self.params["r"])
        # one pseudo-branch standing in for every j > J: it carries the
        # Lebesgue mass of (1/2, h_J(x)] scaled by the last branch's derivative
        xs = self._preimages(J + 1)
        ratio = xs[J] / (xs[J - 1] - xs[J])
        tailH = 0.5 + 0.5 * (H[-1] - 0.5)
        tailD = D[-1] * ratio
        tailP = 2.0 * P[-1]
        H = np.vstack([H, tailH])
        W = np.vstack([D, tailD])
        P = np.vstack([P, tailP])
        labels = np.arange(1, J + 2, dtype=float)
        return H, W, labels, P

    def mass_defect(self, J=None):
        """Invariant mass of the branches beyond the truncation (handled approximately)."""
        J = int(J or self.J)
        if self.name == "doubling":
            return 0.0
        if self.name == "gauss":
            # midpoint-rule error of the tail sum, integrated against the density
            return 1.0 / (12.0 * (J + 0.5) ** 3 * math.log(2.0))
        xs = self._preimages(J + 1)
        rho_half = float(self.density(np.array([0.5]))[0]) if self._density_vals is not None else 2.0
        return 0.5 * xs[J] * rho_half

    # -- invariant density ----------------------------------------------------
    def density(self, x):
        x = np.asarray(x, dtype=float)
        if self.name == "doubling":
            return np.ones_like(x)
        if self.name == "gauss":
            return 1.0 / ((1.0 + x) * math.log(2.0))
        if self._density_vals is None:
            from .transfer import invariant_density
            nodes, vals = invariant_density(self, resolution=64, return_nodes=True)
            self._density_nodes = nodes
            self._density_vals = vals
        N = len(self._density_nodes) - 1
        M = _cheb.interp_matrix(self._density_nodes, _cheb.bary_weights(N), np.atleast_1d(x))
        return (M @ self._density_vals).reshape(x.shape)

    def potential(self, y):
        """log(d mu / d mu o F) = log rho(y) - log rho(Fy) - log|F'(y)|."""
        fy = self.forward(y)[0]
        return np.log(self.density(y)) - np.log(self.density(fy)) - self.log_jacobian(y)

    def sample(self, n, rng):
        """i.i.d. draws from the invariant probability measure."""
        if self.name == "doubling":
            return rng.random(n)
        if self.name == "gauss":
            return 2.0 ** rng.random(n) - 1.0
        # inverse CDF of the tabulated density
        from .transfer import density_cdf
        return density_cdf(self).sample(n, rng)


@dataclass
class Roof:
    """Roof function on the base.

    ``func`` is a vectorized callable of y.  For the induced LSV roof
    (``induced=True``) the values come from the excursion sums instead.
    """
    func: object = None
    name: str = "roof"
    induced: bool = False

    def __call__(self, gm: GMSystem, y):
        y = np.asarray(y, dtype=float)
        if self.induced:
            return gm.forward(y)[2]
        return np.asarray(self.func(y), dtype=float) * np.ones_like(y)

    def on_branches(self, gm, H, excursion):
        if self.induced:
            return excursion
        return np.asarray(self.func(H), dtype=float) * np.ones_like(H)

    def inf(self, gm: GMSystem, n=4097):
        if self.induced:
            return gm.params["r"][0] + gm.params["r"][1] * 0.75
        y = np.linspace(gm.lo, gm.hi, n)
        return float(np.min(self(gm, y)))

    def integral(self, gm: GMSystem, resolution=128):
        """int phi d mu, by quadrature against the invariant density."""
        if self.induced:
            # Kac: the mean return roof equals the T-integral of r divided by mu_T(Y)
            from .transfer import induced_roof_mean
            return induced_roof_mean(gm)
        nodes = _cheb.lobatto(resolution, gm.lo, gm.hi)
        w = _cheb.cc_weights(resolution, gm.lo, gm.hi)
        return float(np.sum(w * gm.density(nodes) * self(gm, nodes)))


def affine_roof(c0, c1, name=None):
    return Roof(lambda y: c0 + c1 * np.asarray(y), name or f"{c0}+{c1}x")


def constant_roof(c):
    return Roof(lambda y: np.full(np.shape(y), float(c)), f"const {c}")


def make_builtin(name, params=None) -> GMSystem:
    params = dict(params or {})
    if name == "doubling":
        if params:
            raise BadParams(f"doubling takes no parameters, got {sorted(params)}")
        return GMSystem("doubling", 0.0, 1.0, 0.5, labels=(0, 1))
    if name == "gauss":
        J = int(params.pop("J", 400))
        if params:
            raise BadParams(f"unknown gauss parameters {sorted(params)}")
        if J < 8:
            raise BadParams("gauss needs J >= 8")
        return GMSystem("gauss", 0.0, 1.0, (math.sqrt(5) - 1) / 2, countable=True, J=J)
    if name == "lsv_induced":
        alpha = params.pop("alpha", 0.5)
        r = params.pop("r", (1.0, 1.0))
        J = params.pop("J", None)
        if params:
            raise BadParams(f"unknown lsv_induced parameters {sorted(params)}")
        if not 0.0 < alpha < 1.0:
            raise BadParams("alpha must lie in (0, 1)")
        r = (float(r[0]), float(r[1]))
        if r[0] <= 0 or r[0] + r[1] <= 0:
            raise BadParams("r(x) = r0 + r1 x must be positive on [0, 1]")
        gm = GMSystem("lsv_induced", 0.5, 1.0, 0.5, countable=True, J=0,
                      params={"alpha": float(alpha), "r": r})
        if J is None:
            # smallest J with x_J < 4e-9, so the tail mass rho(1/2) x_J / 2 stays below 1e-8
            xs = gm._preimages(4096)
            while xs[-1] > 4e-9:
                xs = _lsv_preimages(alpha, 2 * (len(xs) - 1))
            gm.params["_xs"] = xs
            J = int(np.argmax(xs < 4e-9))
        gm.J = int(J)
        return gm
    raise BadParams(f"unknown builtin {name!r}; choose doubling, gauss or lsv_induced")


# ------------------------------------------------------------ separation time
class SeparationTime(int):
    """int subclass carrying a ``saturated`` flag."""

    def __new__(cls, value, saturated=False):
        obj = super().__new__(cls, value)
        obj.saturated = saturated
        return obj


def separation_time(gm: GMSystem, y, y2, n_cap=64) -> SeparationTime:
    """Least n with F^n y, F^n y2 in different branches (n_cap if none found)."""
    a = np.array([y], dtype=float)
    b = np.array([y2], dtype=float)
    for n in range(n_cap):
        fa, ja, _ = gm.forward(a)
        fb, jb, _ = gm.forward(b)
        if ja[0] != jb[0]:
            return SeparationTime(n)
        a, b = fa, fb
    return SeparationTime(n_cap, saturated=True)
