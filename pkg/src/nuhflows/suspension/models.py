"""Suspension flows, the fattened doubling model and the coboundary reduction.

Suspension points are dicts of arrays: ``{"y": ..., "u": ...}`` over a
Gibbs-Markov base, ``{"y": ybar, "z": z, "u": ...}`` over the two-sided model.
The identification (y, phi(y)) ~ (Fy, 0) is applied with the half-open
convention: u = phi(y) is reduced to (Fy, 0).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import BadParams, InducePowerNeeded, NoConvergence
from ..gibbs_markov import GMSystem, Roof, make_builtin

TWO53 = 2.0**53


# ---------------------------------------------------------------- two-sided
@dataclass
class FiberRoof:
    """Roof phi(ybar, z) on the two-sided model with Lipschitz data.

    lip_z bounds |d phi / dz| and lip_y bounds |d phi / d ybar|; both feed the
    remainder bounds of the chi and temporal-distance series.
    """
    func: object
    lip_z: float
    lip_y: float
    name: str = "roof"

    def __call__(self, ybar, z):
        return np.asarray(self.func(np.asarray(ybar, dtype=float), np.asarray(z, dtype=float)), dtype=float) \
            * np.ones(np.broadcast(np.asarray(ybar), np.asarray(z)).shape)

    @property
    def fiber_constant(self):
        return self.lip_z == 0


def fiber_roof(c=1.0, a=0.0, k=0.25, name=None):
    """phi(ybar, z) = c + a sin(2 pi ybar) + k z."""
    return FiberRoof(lambda y, z: c + a * np.sin(2 * np.pi * y) + k * z, abs(k), 2 * np.pi * abs(a),
                     name or f"{c}+{a}sin(2pi y)+{k}z")


@dataclass
class TwoSidedModel:
    """Fattened doubling map (baker map) on [0,1) x [0,1].

    F(ybar, z) = (2 ybar mod 1, (z + j)/2) with j the first binary digit of
    ybar.  Vertical segments {ybar} x [0,1] are stable fibers contracted by
    1/2; the reference unstable leaf is z = 0 and pi(ybar, z) = (ybar, 0).
    The digits of z are the symbolic past, most recent first, so inverse
    branches are read off z exactly.  ``power`` replaces F by F^power.
    """
    power: int = 1
    C2: float = 1.0

    @property
    def gamma(self):
        return 0.5**self.power

    @property
    def quotient(self) -> GMSystem:
        return make_builtin("doubling")

    def power_of(self, n):
        return TwoSidedModel(self.power * n, self.C2)

    # single base steps -------------------------------------------------------
    @staticmethod
    def base_step(ybar, z):
        j = np.minimum(np.floor(2 * ybar), 1.0)
        return 2 * ybar - j, 0.5 * (z + j)

    @staticmethod
    def base_step_inv(ybar, z):
        p = np.minimum(np.floor(2 * z), 1.0)
        return 0.5 * (ybar + p), 2 * z - p

    def F(self, ybar, z):
        for _ in range(self.power):
            ybar, z = self.base_step(ybar, z)
        return ybar, z

    def F_inv(self, ybar, z):
        for _ in range(self.power):
            ybar, z = self.base_step_inv(ybar, z)
        return ybar, z

    @staticmethod
    def proj(ybar, z):
        return ybar, np.zeros_like(np.asarray(z, dtype=float))

    def phi(self, roof: FiberRoof, ybar, z):
        """Roof of F (Birkhoff sum of the base roof over ``power`` steps)."""
        acc = roof(ybar, z)
        for _ in range(self.power - 1):
            ybar, z = self.base_step(ybar, z)
            acc = acc + roof(ybar, z)
        return acc

    def sample(self, n, rng):
        """Invariant (Lebesgue) measure; ybar on the 2^-53 grid."""
        y = rng.integers(0, 2**53, size=n, dtype=np.int64) / TWO53
        return y, rng.random(n)

    def periodic_point(self, word):
        """(ybar, z) with F_base^p = id along the binary word (base steps)."""
        word = [int(w) for w in word]
        p = len(word)
        # ybar = 0.(w0 w1 ... w_{p-1})^inf, z = 0.(w_{p-1} ... w0)^inf
        num_y = sum(w << (p - 1 - k) for k, w in enumerate(word))
        num_z = sum(w << k for k, w in enumerate(word))
        den = (1 << p) - 1
        return num_y / den, num_z / den


def chi(model: TwoSidedModel, roof: FiberRoof, ybar, z, K=None, tol=1e-9, return_bound=False):
    """chi(y) = sum_{n >= 0} phi(F^n pi y) - phi(F^n y) with a geometric tail bound.

    The n-th term is at most lip_z * C2 * gamma^n * |z| (orbits on one stable
    fiber), which bounds the remainder after K terms.
    """
    ybar = np.asarray(ybar, dtype=float)
    z = np.asarray(z, dtype=float)
    g = model.gamma
    zmax = float(np.max(np.abs(z))) if z.size else 0.0

    def bound(k):
        return roof.lip_z * model.C2 * g**k / (1 - g) * zmax * model.power

    if K is None:
        K = 1
        while bound(K) > tol and K < 200:
            K += 1
    if bound(K) > tol:
        raise NoConvergence(f"chi remainder bound {bound(K):.3g} > tol {tol:.3g} at K={K}")
    total = np.zeros(np.broadcast(ybar, z).shape)
    if roof.fiber_constant:
        out = total
    else:
        a_y, a_z = model.proj(ybar, z)
        b_y, b_z = ybar, z
        for _ in range(K):
            total = total + (model.phi(roof, a_y, a_z) - model.phi(roof, b_y, b_z))
            a_y, a_z = model.F(a_y, a_z)
            b_y, b_z = model.F(b_y, b_z)
        out = total
    if return_bound:
        return out, bound(K)
    return out


def tilde_phi(model: TwoSidedModel, roof: FiberRoof, ybar, z, tol=1e-9):
    """phi + chi - chi o F (constant along stable fibers)."""
    fy, fz = model.F(ybar, z)
    return model.phi(roof, ybar, z) + chi(model, roof, ybar, z, tol=tol) - chi(model, roof, fy, fz, tol=tol)


def chi_sup(model, roof, n=100_000, seed=0, margin=0.1):
    """Sampled sup |chi| plus a safety margin."""
    rng = np.random.default_rng(seed)
    y, z = model.sample(n, rng)
    # the extreme fiber points are always included
    z[:2] = (0.0, 1.0)
    return float(np.max(np.abs(chi(model, roof, y, z)))) * (1 + margin)


def _reduce(model, ybar, z, u, roof_fn):
    """Bring u into [0, roof(y)) through the identifications."""
    ybar = np.array(ybar, dtype=float)
    z = np.array(z, dtype=float)
    u = np.array(u, dtype=float)
    steps = np.zeros(u.shape, dtype=np.int64)
    r = roof_fn(ybar, z)
    todo = u >= r
    while np.any(todo):
        u[todo] -= r[todo]
        ny, nz = model.F(ybar[todo], z[todo])
        ybar[todo] = ny
        z[todo] = nz
        steps[todo] += 1
        r[todo] = roof_fn(ny, nz)
        todo = u >= r
    return ybar, z, u, steps


@dataclass
class Conjugacy:
    g_plus: object
    g_minus: object
    chi_sup: float
    shift: float


def conjugacies(model: TwoSidedModel, roof: FiberRoof, sup=None, seed=0, tol=1e-12) -> Conjugacy:
    """Semiconjugacies between the phi- and phi~-suspensions.

    g+(y, u) = (y, u + chi(y) + |chi|) reduced in the phi~ suspension;
    g-(y, u) = (y, u - chi(y) + |chi|) reduced in the phi suspension.
    Their composition is the time-2|chi| map of the phi suspension.
    """
    sup = chi_sup(model, roof, seed=seed) if sup is None else float(sup)
    y, z = model.sample(20_000, np.random.default_rng(seed))
    inf_phi = float(np.min(model.phi(roof, y, z)))
    if inf_phi < 4 * sup + 1:
        raise InducePowerNeeded(
            f"inf phi = {inf_phi:.4g} < 4|chi| + 1 = {4 * sup + 1:.4g}; use model.power_of(n)")

    def tphi(a, b):
        return tilde_phi(model, roof, a, b, tol=tol)

    def phi(a, b):
        return model.phi(roof, a, b)

    def g_plus(ybar, z, u):
        c = chi(model, roof, ybar, z, tol=tol)
        return _reduce(model, ybar, z, np.asarray(u) + c + sup, tphi)[:3]

    def g_minus(ybar, z, u):
        c = chi(model, roof, ybar, z, tol=tol)
        return _reduce(model, ybar, z, np.asarray(u) - c + sup, phi)[:3]

    return Conjugacy(g_plus, g_minus, sup, 2 * sup)


def temporal_distance(model: TwoSidedModel, roof: FiberRoof, y1, y4, K=40, tol=None):
    """D(y1, y4) summed over |n| < K, with its remainder bound.

    y2 = (ybar1, z4) lies on the stable fiber of y1 and the unstable leaf of
    y4; y3 = (ybar4, z1) the other way round.  Backward orbits follow the
    past stored in z.
    """
    (a1, b1), (a4, b4) = y1, y4
    a1, b1, a4, b4 = (np.asarray(v, dtype=float) for v in (a1, b1, a4, b4))
    pts = [(a1, b1), (a1, b4), (a4, b1), (a4, b4)]

    def term(p):
        v = [model.phi(roof, *q) for q in p]
        return (v[0] - v[1]) - (v[2] - v[3])

    total = term(pts)
    fw = pts
    bw = pts
    for _ in range(1, K):
        fw = [model.F(*q) for q in fw]
        bw = [model.F_inv(*q) for q in bw]
        total = total + term(fw) + term(bw)
    g = model.gamma
    rem = 2 * model.power * (roof.lip_z + roof.lip_y) * g**K / (1 - g)
    if tol is not None and rem > tol:
        raise NoConvergence(f"temporal distance remainder {rem:.3g} > {tol:.3g}")
    return total, rem


# ------------------------------------------------------------- suspensions
@dataclass
class SuspensionFlow:
    """Suspension over a Gibbs-Markov base (``base`` is a GMSystem) or over
    the two-sided model (``base`` is a TwoSidedModel, ``roof`` a FiberRoof)."""
    base: object
    roof: object
    info: dict = field(default_factory=dict)

    @property
    def two_sided(self):
        return isinstance(self.base, TwoSidedModel)

    def phi(self, state):
        if self.two_sided:
            return self.base.phi(self.roof, state["y"], state["z"])
        return self.roof(self.base, state["y"])

    def step(self, state, idx, rng=None):
        """Apply the base map to the entries idx of state (in place)."""
        if self.two_sided:
            state["y"][idx], state["z"][idx] = self.base.F(state["y"][idx], state["z"][idx])
            return
        gm = self.base
        y = state["y"][idx]
        if gm.name == "doubling" and rng is not None:
            # doubling discards the leading bit; a fresh random trailing bit
            # keeps the 2^-53 grid uniform, so orbits are exact in law
            fy = 2 * y - np.minimum(np.floor(2 * y), 1.0)
            state["y"][idx] = fy + rng.integers(0, 2, size=fy.shape) / TWO53
        else:
            state["y"][idx] = gm.forward(y)[0]

    def roof_bounds(self, n=4097):
        if self.two_sided:
            y = np.linspace(0, 1, n, endpoint=False)
            lo = np.minimum(self.base.phi(self.roof, y, 0 * y), self.base.phi(self.roof, y, 0 * y + 1))
            hi = np.maximum(self.base.phi(self.roof, y, 0 * y), self.base.phi(self.roof, y, 0 * y + 1))
            return float(lo.min()), float(hi.max())
        gm = self.base
        y = np.linspace(gm.lo, gm.hi, n)
        if self.roof.induced:
            return self.roof.inf(gm), np.inf
        v = self.roof(gm, y)
        return float(v.min()), float(v.max())

    def integral(self):
        if self.two_sided:
            rng = np.random.default_rng(12345)
            y, z = self.base.sample(200_000, rng)
            return float(np.mean(self.base.phi(self.roof, y, z)))
        return self.roof.integral(self.base)

    def sample(self, n, rng):
        """Draws from mu x Leb / int phi (acceptance on the roof height)."""
        lo, hi = self.roof_bounds()
        if not np.isfinite(hi):
            raise BadParams("rejection sampling needs a bounded roof; use the dedicated backend")
        keys = ("y", "z") if self.two_sided else ("y",)
        out = {k: np.empty(0) for k in keys}
        while len(out["y"]) < n:
            m = max(1024, int(1.3 * (n - len(out["y"])) * hi / max(lo, 1e-12)))
            if self.two_sided:
                y, z = self.base.sample(m, rng)
                cand = {"y": y, "z": z}
            else:
                gm = self.base
                if gm.name == "doubling":
                    cand = {"y": rng.integers(0, 2**53, size=m, dtype=np.int64) / TWO53}
                else:
                    cand = {"y": gm.sample(m, rng)}
            ph = self.phi(cand)
            keep = rng.random(m) * hi < ph
            for k in keys:
                out[k] = np.concatenate([out[k], cand[k][keep]])
        state = {k: out[k][:n].copy() for k in keys}
        state["u"] = rng.random(n) * self.phi(state)
        return state

    def advance(self, state, dt, rng=None):
        """Flow every point forward by dt (in place); returns base steps taken."""
        state["u"] = state["u"] + dt
        steps = np.zeros(len(state["u"]), dtype=np.int64)
        r = self.phi(state)
        todo = np.nonzero(state["u"] >= r)[0]
        while todo.size:
            state["u"][todo] -= r[todo]
            self.step(state, todo, rng)
            steps[todo] += 1
            sub = {k: v[todo] for k, v in state.items()}
            r[todo] = self.phi(sub)
            todo = todo[state["u"][todo] >= r[todo]]
        return steps


def _integrate(self, state, dt, v, rng=None, n_gl=16):
    """int_0^dt v(F_s x) ds for every point, advancing the state in place.

    Each fiber piece [u, min(u + left, phi)) is integrated by Gauss-Legendre
    (or ``v.fiber_integral`` when given), so fiber ends are handled exactly.
    """
    g, gw = np.polynomial.legendre.leggauss(n_gl)
    n = len(state["u"])
    acc = np.zeros(n)
    left = np.full(n, float(dt))
    idx = np.arange(n)
    while idx.size:
        sub = {k: val[idx] for k, val in state.items()}
        r = self.phi(sub)
        u0 = sub["u"]
        piece = np.minimum(left[idx], r - u0)
        if getattr(v, "fiber_integral", None) is not None:
            acc[idx] += v.fiber_integral(sub, u0, u0 + piece)
        else:
            for x, wx in zip(g, gw):
                q = dict(sub)
                q["u"] = u0 + 0.5 * piece * (x + 1)
                acc[idx] += 0.5 * piece * wx * np.asarray(v(q), dtype=float)
        left[idx] -= piece
        ends = (r - u0) <= left[idx] + piece
        ends &= piece >= r - u0
        state["u"][idx] = u0 + piece
        hit = idx[ends]
        if hit.size:
            state["u"][hit] = 0.0
            self.step(state, hit, rng)
        idx = idx[left[idx] > 0]
    return acc


SuspensionFlow.integrate = _integrate


def flow_eval(susp: SuspensionFlow, point: dict, t: float):
    """F_t of a point (dict of scalars or arrays); returns (point, base steps)."""
    if t < 0:
        raise BadParams("t must be >= 0")
    st = {k: np.array(v, dtype=float, ndmin=1) for k, v in point.items()}
    steps = susp.advance(st, float(t))
    scalar = np.ndim(point["u"]) == 0
    out = {k: (float(v[0]) if scalar else v) for k, v in st.items()}
    return out, (int(steps[0]) if scalar else steps)


# --------------------------------------------------------------- truncation
class TruncatedRoof(Roof):
    def __init__(self, base: Roof, N, branches):
        super().__init__(base.func, f"{base.name} truncated at {N}", base.induced)
        self.base = base
        self.N = float(N)
        self.branches = frozenset(int(j) for j in branches)

    def _mask(self, gm, y):
        lab = gm.forward(np.asarray(y, dtype=float))[1]
        return np.isin(lab, list(self.branches)) if self.branches else np.zeros(np.shape(y), bool)

    def __call__(self, gm, y):
        v = self.base(gm, y)
        return np.where(self._mask(gm, y), self.N, v)

    def on_branches(self, gm, H, excursion):
        v = self.base.on_branches(gm, H, excursion)
        labels = np.arange(1, v.shape[0] + 1)
        sel = np.isin(labels, list(self.branches))
        v = v.copy()
        v[sel] = self.N
        return v


def branch_roof_range(gm: GMSystem, roof: Roof, j, n=33):
    """(inf, sup) of the roof over branch j, from a grid pushed through h_j."""
    x = np.linspace(gm.lo, gm.hi, n)
    h, _ = gm.inv(j, x)
    v = roof(gm, h)
    return float(v.min()), float(v.max())


def branch_mass(gm: GMSystem, j, resolution=64):
    from ..gibbs_markov import _cheb
    x = _cheb.lobatto(resolution, gm.lo, gm.hi)
    w = _cheb.cc_weights(resolution, gm.lo, gm.hi)
    h, d = gm.inv(j, x)
    return float(np.sum(w * d * gm.density(h)))


def truncate_roof(susp: SuspensionFlow, N: float, N0: float = 1.0, j_max=None) -> SuspensionFlow:
    """phi(N) = N on Y(N) (branches with inf phi >= N), phi elsewhere.

    The returned flow's ``info`` holds the branches of Y(N), mu(Y(N)), the
    sampled constant C1 (max over scanned branches of (sup - inf)/inf, at
    least 1) and the maximum of phi(N) over the scanned branches.
    """
    if N < N0:
        raise BadParams(f"N must be >= N0 = {N0}")
    gm = susp.base
    roof = susp.roof
    if not isinstance(gm, GMSystem):
        raise BadParams("truncation acts on suspensions over a Gibbs-Markov base")
    labels = gm.branch_labels()
    if j_max is not None:
        labels = [j for j in labels if j <= j_max]
    YN = []
    C1 = 1.0
    top = 0.0
    for j in labels:
        lo, hi = branch_roof_range(gm, roof, j)
        C1 = max(C1, (hi - lo) / lo)
        if lo >= N:
            YN.append(j)
            top = max(top, N)
        else:
            top = max(top, hi)
        # once branches have inf beyond 4N the remaining ones all lie in Y(N)
        if gm.countable and lo >= 4 * N and j_max is None:
            break
    last = YN[-1] if YN else None
    mass = 0.0
    if YN:
        mass = sum(branch_mass(gm, j) for j in YN)
        if gm.countable and j_max is None:
            # every branch past the scan lies in Y(N); add their total mass
            tail = 1.0 - sum(branch_mass(gm, j) for j in range(1, last + 1))
            mass += max(tail, 0.0)
    new = TruncatedRoof(roof, N, YN)
    scanned_all = gm.countable and j_max is None
    info = {"N": N, "YN": YN, "YN_open_ended": bool(scanned_all and YN), "mu_YN": mass,
            "C1": C1, "max_phiN": top}
    return SuspensionFlow(gm, _OpenTruncation(new, last) if scanned_all and YN else new, info)


class _OpenTruncation(TruncatedRoof):
    """Truncated roof where every branch beyond ``last`` belongs to Y(N)."""

    def __init__(self, inner: TruncatedRoof, last):
        super().__init__(inner.base, inner.N, inner.branches)
        self.last = last

    def _mask(self, gm, y):
        lab = gm.forward(np.asarray(y, dtype=float))[1]
        return np.isin(lab, list(self.branches)) | (lab > self.last)

    def on_branches(self, gm, H, excursion):
        v = self.base.on_branches(gm, H, excursion).copy()
        labels = np.arange(1, v.shape[0] + 1)
        sel = np.isin(labels, list(self.branches)) | (labels > self.last)
        v[sel] = self.N
        return v


@dataclass
class Observable:
    """Observable on a suspension: ``func(state) -> values``.

    ``fiber_integral(state, u0, u1)`` optionally gives the exact integral in
    u along a fiber; otherwise Gauss-Legendre quadrature is used.
    """
    func: object
    eta: float = 1.0
    name: str = "v"
    fiber_integral: object = None
    norms: dict = field(default_factory=dict)

    def __call__(self, state):
        return np.asarray(self.func(state), dtype=float)


# ------------------------------------------------------- roof-tail inequality
@dataclass
class TailInequalityCheck:
    i: int
    n: int
    t: float
    lhs: float
    rhs: float
    se: float
    holds: bool


def roof_tail_inequality(gm: GMSystem, roof: Roof, grid_i, grid_n, grid_t, eta=1.0,
                         n_samples=1_000_000, seed=0, n_sigma=3.0):
    """Monte Carlo check of
    int phi^eta o F^i 1{phi_n > t} dmu <= (n + 1) int phi^eta 1{phi > t/n} dmu.

    Both sides use the same sample of mu; the inequality is accepted when the
    paired difference RHS - LHS is above -n_sigma standard errors.
    """
    if not 0 < eta:
        raise BadParams("eta must be positive")
    rng = np.random.default_rng(seed)
    y = gm.sample(n_samples, rng)
    depth = max(grid_i) + max(grid_n) + 1
    phis = np.empty((depth, n_samples))
    cur = y
    for k in range(depth):
        phis[k] = roof(gm, cur)
        cur = gm.forward(cur)[0]
    csum = np.cumsum(phis, axis=0)
    out = []
    for i in grid_i:
        for n in grid_n:
            phin = csum[n - 1]
            for t in grid_t:
                L = phis[i] ** eta * (phin > t)
                R = (n + 1) * phis[0] ** eta * (phis[0] > t / n)
                D = R - L
                se = float(D.std(ddof=1) / np.sqrt(n_samples))
                out.append(TailInequalityCheck(int(i), int(n), float(t), float(L.mean()), float(R.mean()), se,
                                               bool(D.mean() >= -n_sigma * se)))
    return out
