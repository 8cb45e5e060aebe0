"""Invariant checks for the billiard map: speed, reflection, reversibility,
the flight-time Lipschitz inequality and statistical invariance of mu_X."""
from __future__ import annotations

import math

import numpy as np
from numba import njit
from scipy import stats

from ..errors import UnsupportedVariant
from . import _kernels as K
from .dynamics import CollisionBatch, _geometry, map_batch, sample_invariant
from .tables import BilliardTable


def _torus_only(table):
    g = _geometry(table)
    if g[0] != "torus":
        raise UnsupportedVariant("these checks run on Lorentz tori")
    return g[1], g[2]


@njit(cache=True)
def _chain_checks(geo, imgs, k0, th0, ph0, n_steps, t_cap):
    """Run chains and record the worst speed deviation and reflection error.

    The incoming velocity at a collision is the outgoing velocity of the
    previous one; the mirror image of it in the tangent line must equal the
    outgoing velocity built from the recorded angle.
    """
    speed = 0.0
    refl = 0.0
    events = 0
    for c in range(k0.shape[0]):
        k = k0[c]
        th = th0[c]
        ph = ph0[c]
        px, py, vx, vy = K.torus_point(geo, k, th, ph)
        for _ in range(n_steps):
            st, t, k2, th2, nx, ny = K.torus_hit(px, py, vx, vy, geo, imgs, t_cap)
            if st != K.OK:
                break
            ph2 = K.out_angle(vx, vy, nx, ny)
            qx, qy, wx, wy = K.torus_point(geo, k2, th2, ph2)
            dv = abs(math.sqrt(wx * wx + wy * wy) - 1.0)
            if dv > speed:
                speed = dv
            dot = vx * nx + vy * ny
            rx = vx - 2.0 * dot * nx
            ry = vy - 2.0 * dot * ny
            e = math.sqrt((rx - wx) ** 2 + (ry - wy) ** 2)
            if e > refl:
                refl = e
            px, py, vx, vy = qx, qy, wx, wy
            events += 1
    return speed, refl, events


def speed_and_reflection(table: BilliardTable, n_events=1_000_000, seed=0, n_chains=100, t_cap=1e4):
    """(max | |v| - 1 |, max reflection-law error, events run)."""
    geo, imgs = _torus_only(table)
    b = sample_invariant(table, seed, n_chains)
    return _chain_checks(geo, imgs, b.comp, b.s, b.phi, n_events // n_chains, t_cap)


def reversibility(table: BilliardTable, n_collisions=1000, seed=0):
    """Worst phase-space error of R f R f x = x along an orbit of the billiard map.

    Each collision of one orbit is tested separately (one-step round trips);
    a many-step round trip would only measure the Lyapunov growth of
    rounding errors.
    """
    x = sample_invariant(table, seed, 1)
    worst = 0.0
    for _ in range(n_collisions):
        fx, _, st = map_batch(table, x)
        if st[0] != 0:
            break
        back = CollisionBatch(fx.comp, fx.s, -fx.phi, fx.r, table)
        b2, _, st2 = map_batch(table, back)
        if st2[0] != 0:
            break
        ds = abs(math.remainder(b2.s[0] - x.s[0], 2 * math.pi))
        err = max(ds * table.radii[x.comp[0]], abs(-b2.phi[0] - x.phi[0]))
        if b2.comp[0] != x.comp[0]:
            err = np.inf
        worst = max(worst, err)
        x = fx
    return worst


def _unwrapped_hits(table, geo, b: CollisionBatch, shift):
    """Outgoing point q (shifted by the integer vector ``shift``), direction v,
    and centre of the scatterer image hit next (unwrapped)."""
    n = len(b)
    q = np.empty((n, 2))
    v = np.empty((n, 2))
    for i in range(n):
        q[i, 0], q[i, 1], v[i, 0], v[i, 1] = K.torus_point(geo, b.comp[i], b.s[i], b.phi[i])
    q += shift
    return q, v


def bilroof_violations(table: BilliardTable, n_pairs=10_000, seed=0, scale=1e-3, tol=1e-9):
    """Count pairs in one continuity component with
    |h(x) - h(x')| > d(x, x') + d(fx, fx') + tol.

    x' is a small perturbation of x; the pair is kept when both flights end
    on the same image of the same scatterer.  d is the Euclidean distance of
    (position, velocity) with positions unwrapped relative to each other.
    Batches are drawn until n_pairs kept pairs have been evaluated; returns
    (violations, kept pairs).
    """
    geo, _ = _torus_only(table)
    viol = kept = 0
    for ss in np.random.SeedSequence(seed).spawn(64):
        v, k = _bilroof_batch(table, geo, n_pairs - kept + 64, ss, scale, tol)
        viol += v
        kept += k
        if kept >= n_pairs:
            break
    return viol, kept


def _bilroof_batch(table, geo, n, seed, scale, tol):
    s_pts, s_pert = seed.spawn(2)
    rng = np.random.default_rng(s_pert)
    x = sample_invariant(table, s_pts, n)
    ds = scale * rng.uniform(-1, 1, n)
    dp = scale * rng.uniform(-1, 1, n)
    s2 = x.s + ds
    p2 = np.clip(x.phi + dp, -math.pi / 2 + 1e-6, math.pi / 2 - 1e-6)
    r2 = np.array([table.to_arclength(int(c), s) for c, s in zip(x.comp, s2)])
    y = CollisionBatch(x.comp.copy(), s2, p2, r2, table)
    fx, hx, sx = map_batch(table, x)
    fy, hy, sy = map_batch(table, y)
    qx, vx = _unwrapped_hits(table, geo, x, 0.0)
    qy, vy = _unwrapped_hits(table, geo, y, 0.0)
    shift = -np.round(qy - qx)
    qy = qy + shift
    Px = qx + hx[:, None] * vx
    Py = qy + hy[:, None] * vy
    # next scatterer centre = hit point minus r times the normal at the hit
    rad = table.radii
    Cx = Px - rad[fx.comp][:, None] * np.column_stack([np.cos(fx.s), np.sin(fx.s)])
    Cy = Py - rad[fy.comp][:, None] * np.column_stack([np.cos(fy.s), np.sin(fy.s)])
    same = (sx == 0) & (sy == 0) & (fx.comp == fy.comp) & (np.hypot(*(Cx - Cy).T) < 1e-6)
    d0 = np.sqrt(np.sum((qx - qy) ** 2, 1) + np.sum((vx - vy) ** 2, 1))
    wx = np.column_stack([np.cos(fx.s), np.sin(fx.s)])
    _, vfx = _unwrapped_hits(table, geo, fx, 0.0)
    _, vfy = _unwrapped_hits(table, geo, fy, 0.0)
    d1 = np.sqrt(np.sum((Px - Py) ** 2, 1) + np.sum((vfx - vfy) ** 2, 1))
    viol = same & (np.abs(hx - hy) > d0 + d1 + tol)
    return int(viol.sum()), int(same.sum())


def invariance_test(table: BilliardTable, n=20_000, seed=0, level=0.01):
    """Two-sample KS tests of mu_X against f_* mu_X (independent samples),
    on the global arclength and on sin(phi).  Returns (passed, p-values)."""
    a = sample_invariant(table, np.random.SeedSequence(seed).spawn(2)[0], n)
    c = sample_invariant(table, np.random.SeedSequence(seed).spawn(2)[1], n)
    fc, _, st = map_batch(table, c)
    ok = st == 0
    p1 = stats.ks_2samp(a.global_arclength(), fc.global_arclength()[ok]).pvalue
    p2 = stats.ks_2samp(np.sin(a.phi), np.sin(fc.phi[ok])).pvalue
    # Bonferroni over the two marginals
    return bool(min(p1, p2) > level / 2), (float(p1), float(p2))
