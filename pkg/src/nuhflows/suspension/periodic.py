"""Periodic orbit periods, continued fractions of period ratios, the
good-asymptotics fit and box-counting dimensions of temporal distances."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import optimize, stats

from ..errors import BadParams, DegenerateRange, FitDiverged, PrecisionExhausted
from ..gibbs_markov import GMSystem, Roof


@dataclass
class PeriodicOrbitRecord:
    word: tuple
    p: int
    T: float
    points: np.ndarray = field(repr=False, default=None)


def periodic_point(gm: GMSystem, word, max_iter=2000):
    """Fixed point of h_{w0} o h_{w1} o ... o h_{w_{p-1}} (a contraction),
    iterated until the float value stops moving."""
    y = np.array([0.5 * (gm.lo + gm.hi)])
    prev = None
    for _ in range(max_iter):
        z = y
        for j in reversed(word):
            z = gm.inv(j, z)[0]
        if z[0] == y[0] or (prev is not None and z[0] == prev):
            y = z
            break
        prev = y[0]
        y = z
    return float(y[0])


def periodic_orbits(gm: GMSystem, roof: Roof, words) -> list[PeriodicOrbitRecord]:
    """Period T = phi_p(y) of the periodic orbit coded by each word.

    Every point of the orbit is recomputed as the fixed point of the cyclic
    shift of the word, which avoids the error growth of forward iteration.
    """
    out = []
    for w in words:
        w = tuple(int(j) for j in w)
        if not w:
            raise BadParams("empty word")
        bad = [j for j in w if j not in gm.branch_labels()]
        if bad:
            raise BadParams(f"labels {bad} are not branches of {gm.name}")
        pts = np.array([periodic_point(gm, w[k:] + w[:k]) for k in range(len(w))])
        T = float(np.sum(roof(gm, pts)))
        out.append(PeriodicOrbitRecord(w, len(w), T, pts))
    return out


# ------------------------------------------------------- continued fractions
@dataclass
class CFResult:
    quotients: list
    terminated: bool
    liouville_flag: bool
    depth_certified: int
    ratio: float


def diophantine_ratio(T1, T2, T3, depth=20, rel_err=None, liouville_threshold=10**4, min_quotients=3):
    """Continued fraction of (T1 - T3)/(T2 - T3), certified quotient by quotient.

    The inputs are treated as exact rationals widened by ``rel_err`` (default
    4 machine epsilons each).  A quotient is kept only if it is the same over
    the whole uncertainty interval.  When the central value is an integer and
    the interval is narrower than 1e-3 the expansion is reported as
    terminating; this takes precedence over running out of precision.
    """
    eps = np.finfo(float).eps * 4 if rel_err is None else float(rel_err)
    T = [Fraction(float(t)) for t in (T1, T2, T3)]
    e = [abs(t) * Fraction(eps) for t in T]
    num, den = T[0] - T[2], T[1] - T[2]
    dn, dd = e[0] + e[2], e[1] + e[2]
    if abs(den) <= dd:
        raise BadParams("T2 and T3 are indistinguishable at the given precision")
    cands = [(num + a) / (den + b) for a in (-dn, dn) for b in (-dd, dd)]
    lo, hi = min(cands), max(cands)
    c = num / den
    qs = []
    terminated = False
    for _ in range(depth):
        if c.denominator == 1 and hi - lo < Fraction(1, 1000):
            qs.append(int(c))
            terminated = True
            break
        a = math.floor(lo)
        if math.floor(hi) != a:
            break
        qs.append(a)
        if c == a:
            terminated = True
            break
        lo, hi, c = 1 / (hi - a), 1 / (lo - a), 1 / (c - a)
        if lo <= 0:
            break
    if not terminated and len(qs) < min(min_quotients, depth):
        raise PrecisionExhausted(f"only {len(qs)} certified quotients: {qs}")
    flag = any(q > liouville_threshold for q in qs[1:])
    return CFResult(qs, terminated, flag, len(qs), float(num / den))


# ------------------------------------------------------- good asymptotics
@dataclass
class GoodAsymptoticsFit:
    kappa: float
    gamma: float
    omega: float
    amplitude: float
    phase: float
    E_N: np.ndarray
    liminf_E: float
    N: np.ndarray
    degenerate: bool = False
    residual: float = 0.0


def _linear_part(N, y, g, w):
    A = np.column_stack([np.ones_like(N), g**N * np.cos(N * w), -(g**N) * np.sin(N * w)])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    return coef, float(np.sum((A @ coef - y) ** 2))


def good_asymptotics_fit(records, T0=None, min_records=6, rtol_degenerate=1e-12):
    """Fit T_N - N T0 = kappa + E gamma^N cos(N omega + phase).

    ``records`` are PeriodicOrbitRecords (N = word length) or (N, T_N) pairs.
    T0 defaults to the period of the first record with p = 1.  The fit is a
    grid search over (gamma, omega) with the linear parameters solved
    exactly, refined by least squares.  E_N = |T_N - N T0 - kappa| / gamma^N.
    """
    pairs = []
    for r in records:
        if isinstance(r, PeriodicOrbitRecord):
            pairs.append((r.p, r.T))
        else:
            pairs.append((int(r[0]), float(r[1])))
    if T0 is None:
        ones = [T for n, T in pairs if n == 1]
        if not ones:
            raise BadParams("T0 not given and no record of period 1")
        T0 = ones[0]
    pairs = [(n, T) for n, T in pairs if n >= 1]
    pairs.sort()
    N = np.array([p[0] for p in pairs], dtype=float)
    y = np.array([p[1] for p in pairs]) - N * T0
    if len(N) < min_records:
        raise FitDiverged(f"need at least {min_records} records, got {len(N)}")
    scale = max(np.max(np.abs(y)), 1.0)
    if np.ptp(y) <= rtol_degenerate * scale:
        kappa = float(np.mean(y))
        return GoodAsymptoticsFit(kappa, 0.0, 0.0, 0.0, 0.0, np.zeros_like(N), 0.0, N, True, 0.0)
    # shift N so the amplitude refers to the first record
    n0 = N[0]
    M = N - n0
    best = None
    for g in np.linspace(0.02, 0.98, 49):
        for w in np.linspace(0.0, np.pi, 73):
            coef, ssr = _linear_part(M, y, g, w)
            if best is None or ssr < best[0]:
                best = (ssr, g, w, coef)
    _, g0, w0, c0 = best

    def resid(p):
        k, a, b, g, w = p
        return k + g**M * (a * np.cos(M * w) - b * np.sin(M * w)) - y

    try:
        sol = optimize.least_squares(resid, [c0[0], c0[1], c0[2], g0, w0],
                                     bounds=([-np.inf, -np.inf, -np.inf, 1e-6, -0.1], [np.inf, np.inf, np.inf, 1 - 1e-9, np.pi + 0.1]),
                                     xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=20000)
    except Exception as exc:  # pragma: no cover - scipy failure modes
        raise FitDiverged(str(exc)) from exc
    if not sol.success or not np.all(np.isfinite(sol.x)):
        raise FitDiverged(sol.message)
    k, a, b, g, w = sol.x
    w = abs(w)
    amp = math.hypot(a, b) * g ** (-n0)
    phase = math.atan2(b, a) - w * n0 if math.hypot(a, b) > 0 else 0.0
    phase = (phase + np.pi) % (2 * np.pi) - np.pi
    E = np.abs(y - k) / g**N
    tail = E[len(E) // 2:]
    return GoodAsymptoticsFit(float(k), float(g), float(w), float(amp), float(phase), E,
                              float(np.min(tail)), N, False, float(np.sum(sol.fun**2)))


# ------------------------------------------------- temporal distance range
@dataclass
class BoxDimension:
    slope: float
    ci: tuple
    scales: np.ndarray
    counts: np.ndarray


def tdf_range_dimension(D, scales=None, level=0.95, min_range=1e-12):
    """Box-counting dimension of the set of values D.

    Values are rescaled to [0, 1] by their range first, which makes the
    estimate invariant under D -> aD + c.  The slope of log N(eps) against
    log(1/eps) and a regression confidence interval are returned.
    """
    D = np.asarray(D, dtype=float).ravel()
    D = D[np.isfinite(D)]
    if D.size < 2:
        raise DegenerateRange("need at least two finite values")
    span = float(D.max() - D.min())
    if span <= min_range * max(1.0, float(np.max(np.abs(D)))):
        raise DegenerateRange(f"range {span:.3g} is numerically zero")
    v = (D - D.min()) / span
    if scales is None:
        n = D.size
        lo = max(1.0 / n, 1e-6)
        scales = np.geomspace(0.25, lo * 4, 10)
    scales = np.asarray(scales, dtype=float)
    counts = np.array([np.unique(np.floor(v / e)).size for e in scales], dtype=float)
    x = np.log(1.0 / scales)
    yv = np.log(counts)
    res = stats.linregress(x, yv)
    q = stats.t.ppf(0.5 + level / 2, max(len(x) - 2, 1))
    return BoxDimension(float(res.slope), (float(res.slope - q * res.stderr), float(res.slope + q * res.stderr)),
                        scales, counts)
