"""Observable lifting and empirical Hoelder / contraction constants.

All constants are suprema or fits over sampled pairs, so they are lower
bounds for (or estimates of) the true constants, never certificates.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..billiard import BilliardTable, CollisionBatch, map_batch, sample_invariant
from ..billiard.dynamics import _geometry
from ..billiard import _kernels as K
from ..errors import BadParams
from .models import FiberRoof, Observable, TwoSidedModel


# ------------------------------------------------------------ section backend
class BilliardSection:
    """Billiard map section of a Lorentz torus flow with the free flight as roof.

    A section point is a collision (comp, s, phi); pi(y, u) = T_u y is the
    phase point reached after flying for time u from y.
    """

    def __init__(self, table: BilliardTable, gamma=0.5, n_cap=20):
        if table.variant != "lorentz-torus":
            raise BadParams("the section backend supports the Lorentz torus")
        self.table = table
        self.gamma = float(gamma)
        self.n_cap = int(n_cap)
        g = _geometry(table)
        self.geo, self.imgs = g[1], g[2]

    def sample(self, n, rng):
        return sample_invariant(self.table, int(rng.integers(2**62)), n)

    def outgoing(self, b: CollisionBatch):
        n = len(b)
        q = np.empty((n, 2))
        v = np.empty((n, 2))
        for i in range(n):
            q[i, 0], q[i, 1], v[i, 0], v[i, 1] = K.torus_point(self.geo, b.comp[i], b.s[i], b.phi[i])
        return q, v

    def roof(self, b: CollisionBatch):
        return map_batch(self.table, b)[1]

    def pi(self, b: CollisionBatch, u):
        q, v = self.outgoing(b)
        return np.mod(q + np.asarray(u)[:, None] * v, 1.0), v

    def distance(self, a: CollisionBatch, b: CollisionBatch):
        qa, va = self.outgoing(a)
        qb, vb = self.outgoing(b)
        dq = qa - qb
        dq -= np.round(dq)
        return np.sqrt(np.sum(dq**2, 1) + np.sum((va - vb) ** 2, 1))

    def perturb(self, b: CollisionBatch, scale, rng):
        """Nearby section points: shift s and phi by about ``scale``."""
        n = len(b)
        ds = scale * rng.uniform(-1, 1, n)
        dp = scale * rng.uniform(-1, 1, n)
        phi = np.clip(b.phi + dp, -np.pi / 2 + 1e-6, np.pi / 2 - 1e-6)
        s = b.s + ds / self.table.radii[b.comp]
        r = np.array([self.table.to_arclength(int(c), x) for c, x in zip(b.comp, s)])
        return CollisionBatch(b.comp.copy(), s, phi, r, self.table)

    def separation(self, a: CollisionBatch, b: CollisionBatch):
        """Collisions until the two orbits hit different scatterers (or
        the same scatterer in different images, seen as a jump in flight
        time); saturates at n_cap."""
        n = len(a)
        sep = np.full(n, self.n_cap, dtype=np.int64)
        live = np.ones(n, dtype=bool)
        for k in range(self.n_cap):
            a2, ha, sa = map_batch(self.table, a)
            b2, hb, sb = map_batch(self.table, b)
            split = live & ((a2.comp != b2.comp) | (np.abs(ha - hb) > 0.25) | (sa != 0) | (sb != 0))
            sep[split] = k
            live &= ~split
            if not live.any():
                break
            a, b = a2, b2
        return sep


@dataclass
class LiftedObservable(Observable):
    backend: object = None
    ambient: object = None


def lift_observable(backend: BilliardSection, v, eta=1.0, n_pairs=10_000, seed=0, eta2=None):
    """v o pi on the suspension over the section, with sampled norm estimates.

    ``v(q, vel)`` is evaluated on ambient phase points.  The norms recorded
    are the sup norm, the fitted constant C in
    |v(y,u) - v(y',u)| <= C phi(y) (d(y,y')^(eta^2) + gamma^s(y,y')),
    and the eta-Hoelder constant in the flow direction.
    """
    rng = np.random.default_rng(seed)
    eta2 = eta**2 if eta2 is None else eta2

    def ev(state):
        b, u = state["y"], state["u"]
        q, vel = backend.pi(b, u)
        return np.asarray(v(q, vel), dtype=float) * np.ones(len(u))

    y = backend.sample(n_pairs, rng)
    h = backend.roof(y)
    u = rng.random(n_pairs) * h
    vals = ev({"y": y, "u": u})
    sup = float(np.max(np.abs(vals)))
    # pairs on nearby points (same u)
    scale = 10.0 ** rng.uniform(-8, -2, n_pairs)
    y2 = backend.perturb(y, scale, rng)
    h2 = backend.roof(y2)
    uu = np.minimum(u, 0.999 * h2)
    va = ev({"y": y, "u": uu})
    vb = ev({"y": y2, "u": uu})
    d = backend.distance(y, y2)
    s = backend.separation(y, y2)
    denom = h * (d**eta2 + backend.gamma**s)
    ok = (denom > 0) & np.isfinite(va) & np.isfinite(vb)
    gamma_c = float(np.max(np.abs(va - vb)[ok] / denom[ok])) if ok.any() else 0.0
    # flow-direction Hoelder constant
    u2 = rng.random(n_pairs) * h
    vc = ev({"y": y, "u": u2})
    du = np.abs(u - u2)
    m = du > 1e-12
    holder = float(np.max(np.abs(vals - vc)[m] / du[m] ** eta)) if m.any() else 0.0
    norms = {"sup": sup, "gamma": gamma_c, "eta_holder": holder, "pairs": int(ok.sum())}
    return LiftedObservable(ev, eta, "lift", None, norms, backend, v)


# ------------------------------------------------------------ Hoelder report
@dataclass
class HolderReport:
    C1_stable: float
    C1_unstable: float
    contraction_rate: float
    contraction_C2: float
    n_pairs: int
    extra: dict = field(default_factory=dict)

    def to_text(self):
        lines = [f"pairs: {self.n_pairs}",
                 f"C1 (stable pairs, |phi(y)-phi(y')| / d): {self.C1_stable:.6g}",
                 f"C1 (unstable pairs, |phi(y)-phi(y')| / gamma^s): {self.C1_unstable:.6g}",
                 f"contraction rate gamma: {self.contraction_rate:.6g}",
                 f"contraction constant C2: {self.contraction_C2:.6g}"]
        lines += [f"{k}: {v}" for k, v in self.extra.items()]
        return "\n".join(lines)


def _model_report(model: TwoSidedModel, roof: FiberRoof, n_pairs, rng, n_steps=30):
    ybar, z = model.sample(n_pairs, rng)
    z2 = rng.random(n_pairs)
    f1 = model.phi(roof, ybar, z)
    f2 = model.phi(roof, ybar, z2)
    d = np.abs(z - z2)
    m = d > 1e-9
    cs = float(np.max(np.abs(f1 - f2)[m] / d[m])) if m.any() else 0.0
    # unstable pairs: same past, ybar' agreeing with ybar on s binary digits
    s = rng.integers(1, 40, n_pairs)
    flip = 2.0 ** (-s - 1)
    yb2 = np.mod(ybar + flip * rng.uniform(-1, 1, n_pairs), 1.0)
    # separation in base steps: first digit where the two differ
    a = np.floor(ybar * 2.0**53).astype(np.int64)
    b = np.floor(yb2 * 2.0**53).astype(np.int64)
    x = a ^ b
    top = np.where(x > 0, 53 - np.floor(np.log2(np.maximum(x, 1))).astype(np.int64) - 1, 53)
    sep = top // model.power
    g1 = model.phi(roof, ybar, z)
    g2 = model.phi(roof, yb2, z)
    cu = float(np.max(np.abs(g1 - g2) / model.gamma**sep))
    # contraction along stable fibers: fit log d(F^n y, F^n y') = log C2 + n log gamma
    dn = []
    p, q = (ybar[:200], z[:200]), (ybar[:200], z2[:200])
    for n in range(n_steps):
        dn.append(np.abs(p[1] - q[1]))
        p, q = model.F(*p), model.F(*q)
    dn = np.array(dn)
    keep = d[:200] > 1e-6
    ratio = dn[:, keep] / d[:200][keep]
    logs = np.log(np.max(ratio, axis=1))
    nn = np.arange(n_steps)
    slope, icpt = np.polyfit(nn, logs, 1)
    return HolderReport(cs, cu, float(np.exp(slope)), float(np.exp(icpt)), n_pairs)


def _section_report(sec: BilliardSection, n_pairs, rng):
    y = sec.sample(n_pairs, rng)
    scale = 10.0 ** rng.uniform(-8, -2, n_pairs)
    y2 = sec.perturb(y, scale, rng)
    fy, h, sa = map_batch(sec.table, y)
    fy2, h2, sb = map_batch(sec.table, y2)
    d = sec.distance(y, y2)
    s = sec.separation(y, y2)
    ok = (sa == 0) & (sb == 0) & (d > 0)
    C = float(np.max(np.abs(h - h2)[ok] / (d[ok] + sec.gamma ** s[ok])))
    # shadowing: with t = h(y), t' = h(y') the flow points sit at the next
    # collisions; their phase distance over d(y, y')^(1/2) for pairs that
    # stay together for at least one collision
    together = ok & (s >= 1)
    ratio = sec.distance(fy, fy2)[together] / np.sqrt(d[together])
    # expansion of the billiard map across one collision, a rough 1/gamma
    dd = sec.distance(fy, fy2)[together] / d[together]
    extra = {"shadowing_ratio_max": float(np.max(ratio)) if ratio.size else float("nan"),
             "shadowing_pairs": int(together.sum()),
             "median_one_step_expansion": float(np.median(dd)) if dd.size else float("nan")}
    return HolderReport(float("nan"), C, float(sec.gamma), float("nan"), int(ok.sum()), extra)


def holder_diagnostics(model, roof=None, n_pairs=10_000, seed=0) -> HolderReport:
    """Empirical Hoelder constants of the roof and the stable contraction rate.

    For the two-sided model: C1 on stable pairs (same ybar), C1 on unstable
    pairs relative to gamma^s, and a fit of d(F^n y, F^n y') = C2 gamma^n d.
    For a billiard section: the fitted constant in
    |h(y) - h(y')| <= C (d(y,y') + gamma^s) and a shadowing ratio.
    """
    rng = np.random.default_rng(seed)
    if isinstance(model, TwoSidedModel):
        if roof is None:
            raise BadParams("a roof is needed for the two-sided model")
        return _model_report(model, roof, n_pairs, rng)
    if isinstance(model, BilliardTable):
        model = BilliardSection(model)
    if isinstance(model, BilliardSection):
        return _section_report(model, n_pairs, rng)
    raise BadParams(f"unsupported model {type(model).__name__}")
