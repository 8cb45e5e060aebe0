"""Transfer operators, leading eigenvalues, twisted composition and the eigenfunction defect.

The twisted transfer operator (density-normalized)

    R(s) v(x) = sum_j |h_j'(x)| rho(h_j x) / rho(x) * exp(-s phi(h_j x)) v(h_j x)

is discretized by collocation at Chebyshev-Lobatto points with barycentric
interpolation.  Integrals against the invariant measure use Clenshaw-Curtis.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numpy.polynomial import chebyshev as C

from ..errors import BadParams, EmptySubsystem, NoGap, TruncationTooCoarse
from . import _cheb
from .systems import GMSystem, Roof


@dataclass
class TransferMatrix:
    nodes: np.ndarray
    matrix: np.ndarray
    s: complex
    resolution: int
    mass_defect: float
    quad: np.ndarray  # Clenshaw-Curtis weights
    rho: np.ndarray  # invariant density at the nodes

    def apply(self, v):
        return self.matrix @ v

    def integrate(self, v):
        """int v d mu for nodal values v."""
        return np.sum(self.quad * self.rho * v)

    def evaluate(self, v, y):
        M = _cheb.interp_matrix(self.nodes, _cheb.bary_weights(self.resolution), y)
        return M @ v


def _assemble(nodes, H, W):
    N = len(nodes) - 1
    out = np.zeros((len(nodes), len(nodes)), dtype=np.complex128)
    _cheb.assemble(np.ascontiguousarray(H), np.ascontiguousarray(W), nodes, _cheb.bary_weights(N), out)
    return out


def build_transfer(gm: GMSystem, roof: Roof | None, s, resolution: int = 64, J=None,
                   max_defect: float = 1e-8, normalized: bool = True) -> TransferMatrix:
    """Collocation matrix of R(s) (or of the Lebesgue operator when normalized=False)."""
    s = complex(s)
    if s.real < 0:
        raise BadParams("Re s must be >= 0")
    if resolution < 8:
        raise BadParams("resolution must be >= 8")
    defect = gm.mass_defect(J) if normalized else 0.0
    if defect > max_defect:
        raise TruncationTooCoarse(f"discarded branch mass {defect:.3g} exceeds {max_defect:.3g}")
    nodes = _cheb.lobatto(resolution, gm.lo, gm.hi)
    H, W, _, exc = gm.branch_table(nodes, J)
    W = W.astype(np.complex128)
    if normalized:
        rho_x = gm.density(nodes)
        W = W * gm.density(H) / rho_x[None, :]
    else:
        rho_x = np.ones_like(nodes)
    if s != 0:
        if roof is None:
            raise BadParams("a roof is needed for s != 0")
        W = W * np.exp(-s * roof.on_branches(gm, H, exc))
    mat = _assemble(nodes, H, W)
    return TransferMatrix(nodes, mat, s, resolution, defect, _cheb.cc_weights(resolution, gm.lo, gm.hi), rho_x)


@dataclass
class SpectralSample:
    s: complex
    lam: complex
    vec: np.ndarray
    residual: float
    iterations: int
    second_modulus: float


def _power(A, tol, max_iter, v0=None):
    v = np.ones(A.shape[0], dtype=np.complex128) if v0 is None else v0.astype(np.complex128)
    v /= np.linalg.norm(v)
    lam = 0.0
    res = np.inf
    history = []
    for k in range(1, max_iter + 1):
        w = A @ v
        lam = np.vdot(v, w)
        res = np.linalg.norm(w - lam * v)
        history.append(res)
        nw = np.linalg.norm(w)
        if nw == 0:
            break
        v = w / nw
        if res < tol:
            break
    return lam, v, res, k, np.array(history)


def leading_eigenvalue(gm: GMSystem, roof: Roof, s, resolution: int = 64, delta_spec: float = 0.2,
                       tol: float = 1e-10, max_iter: int = 10_000, gap_tol: float = 1e-6, J=None,
                       return_history: bool = False):
    """Dominant eigenvalue of R(s) by power iteration.

    The gap is measured from the full spectrum of the (small) collocation
    matrix; NoGap is raised when the two largest moduli agree to gap_tol.
    """
    s = complex(s)
    if abs(s) >= delta_spec:
        raise BadParams(f"|s| = {abs(s):.3g} is outside the spectral window {delta_spec}")
    T = build_transfer(gm, roof, s, resolution, J=J)
    ev = np.sort(np.abs(np.linalg.eigvals(T.matrix)))[::-1]
    if ev[0] - ev[1] <= gap_tol * max(ev[0], 1e-300):
        raise NoGap(f"leading moduli {ev[0]:.12g} and {ev[1]:.12g} are not separated")
    lam, v, res, k, hist = _power(T.matrix, tol, max_iter)
    # fix the gauge: int v d mu = 1
    v = v / T.integrate(v)
    out = SpectralSample(s, complex(lam), v, float(res), k, float(ev[1]))
    if return_history:
        return out, hist
    return out


def lambda_prime(gm, roof, h=1e-4, resolution=64):
    """Central difference of lambda(s) at s = 0 along the real axis."""
    lp = leading_eigenvalue(gm, roof, h, resolution).lam
    # R(-h) is not covered by build_transfer (Re s < 0) but is well defined
    T = build_transfer_signed(gm, roof, -h, resolution)
    lm = _power(T.matrix, 1e-13, 10_000)[0]
    return (lp - lm) / (2 * h)


def build_transfer_signed(gm, roof, s, resolution=64, J=None):
    """Like build_transfer but allows Re s < 0 (needed for two-sided differences)."""
    nodes = _cheb.lobatto(resolution, gm.lo, gm.hi)
    H, W, _, exc = gm.branch_table(nodes, J)
    W = W * gm.density(H) / gm.density(nodes)[None, :]
    W = W.astype(np.complex128) * np.exp(-complex(s) * roof.on_branches(gm, H, exc))
    mat = _assemble(nodes, H, W)
    return TransferMatrix(nodes, mat, complex(s), resolution, gm.mass_defect(J),
                          _cheb.cc_weights(resolution, gm.lo, gm.hi), gm.density(nodes))


def invariant_density(gm: GMSystem, resolution: int = 64, return_nodes: bool = False, J=None):
    """Fixed point of the Lebesgue transfer operator, normalized to a probability density."""
    T = build_transfer(gm, None, 0.0, resolution, J=J, normalized=False)
    lam, v, res, k, _ = _power(T.matrix.real, 1e-14, 10_000)
    v = np.real(v)
    v = v / np.sum(T.quad * v)
    if return_nodes:
        return T.nodes, v
    return lambda y: T.evaluate(v, np.atleast_1d(y)).reshape(np.shape(y))


# ------------------------------------------------------ induced LSV helpers
class InducedDensity:
    """Chebyshev model of the invariant density of lsv_induced with CDF tools.

    G(w) = mu(h in (1/2, (1+w)/2]) is the mass of {tau > l} when w = x_l.
    Near w = 0 the Chebyshev antiderivative loses relative accuracy, so a
    Taylor expansion at 1/2 takes over there.
    """

    def __init__(self, gm: GMSystem):
        nodes = gm._density_nodes
        if nodes is None:
            gm.density(np.array([0.75]))
            nodes = gm._density_nodes
        vals = gm._density_vals
        N = len(nodes) - 1
        self.series = C.Chebyshev.fit(nodes, vals, N, domain=[gm.lo, gm.hi])
        self.cum = self.series.integ(lbnd=gm.lo)
        d1 = self.series.deriv(1)
        d2 = self.series.deriv(2)
        d3 = self.series.deriv(3)
        self.taylor = np.array([self.series(0.5), d1(0.5), d2(0.5) / 2, d3(0.5) / 6])
        self.total = float(self.cum(gm.hi))
        self.gm = gm

    def rho(self, y):
        return self.series(y)

    def G(self, w):
        w = np.asarray(w, dtype=float)
        d = 0.5 * w
        c = self.taylor
        tay = c[0] * d + c[1] * d**2 / 2 + c[2] * d**3 / 3 + c[3] * d**4 / 4
        full = self.cum(0.5 + d)
        return np.where(d < 1e-3, tay, full)

    def G_inv(self, target, upper):
        # Newton on G(w) = target inside (0, upper]; the Chebyshev evaluation
        # floors the attainable relative accuracy near 1e-13
        target = np.asarray(target, dtype=float)
        upper = np.broadcast_to(np.asarray(upper, dtype=float), target.shape)
        w = np.clip(target / np.maximum(self.G(upper), 1e-300) * upper, 0.0, upper)
        act = np.arange(target.size)
        for _ in range(60):
            wa = w[act]
            dw = (self.G(wa) - target[act]) / (0.5 * self.rho(0.5 + 0.5 * wa))
            w[act] = np.clip(wa - dw, 0.0, upper[act])
            act = act[np.abs(dw) > 1e-12 * np.maximum(wa, 1e-300)]
            if act.size == 0:
                break
        return w

    def sample(self, n, rng):
        u = rng.random(n) * self.total
        return 0.5 + 0.5 * self.G_inv(u, np.ones(n))


_DENSITY_CACHE: dict[int, InducedDensity] = {}


def density_cdf(gm: GMSystem) -> InducedDensity:
    key = id(gm)
    got = _DENSITY_CACHE.get(key)
    if got is None or got.gm is not gm:
        got = InducedDensity(gm)
        _DENSITY_CACHE[key] = got
    return got


def induced_roof_mean(gm: GMSystem, resolution: int = 64) -> float:
    """int phi d mu for the return-time roof, summed branch by branch."""
    nodes = _cheb.lobatto(resolution, gm.lo, gm.hi)
    w = _cheb.cc_weights(resolution, gm.lo, gm.hi)
    H, W, _, P = gm.branch_table(nodes)
    return float(np.sum(w * np.sum(W * gm.density(H) * P, axis=0)))


# ------------------------------------------------------- twisted composition
def twisted_iterate(gm: GMSystem, roof: Roof, b: float, v, x, grid=None):
    """(M_b v)(x) = exp(i b phi(x)) v(F x).

    ``v`` is a callable, or an array of values on ``grid`` (linear
    interpolation is used to evaluate it at F x).
    """
    x = np.asarray(x, dtype=float)
    fx = gm.forward(x)[0]
    if callable(v):
        vf = v(fx)
    else:
        if grid is None:
            raise BadParams("array-valued v needs its grid")
        vf = np.interp(fx, grid, np.real(v)) + 1j * np.interp(fx, grid, np.imag(v))
    return _phase(b * roof(gm, x)) * vf


def _phase(arg):
    """exp(i arg) with arg reduced mod 2 pi; residues below the rounding
    resolution of arg count as exact multiples of 2 pi."""
    arg = np.asarray(arg, dtype=float)
    rem = np.remainder(arg + np.pi, 2 * np.pi) - np.pi
    rem = np.where(np.abs(rem) <= 8 * np.finfo(float).eps * np.abs(arg), 0.0, rem)
    return np.exp(1j * rem)


class DefectResult(NamedTuple):
    defect: float
    psi: float
    u: object


def defect_horizon(b, xi):
    return max(1, int(math.floor(xi * math.log(abs(b)))))


def _z0_orbits(gm, roof, labels, n, m, n_samples, rng):
    """Points of the subsystem Z0 with their first n images and roof values.

    Each point is h_{j1} o ... o h_{jm}(x0) for a random word in Z0, so its
    forward orbit is available exactly by composing fewer inverse branches.
    """
    words = rng.choice(np.asarray(labels), size=(n_samples, m))
    z = gm.lo + (gm.hi - gm.lo) * rng.random(n_samples)
    pts = np.empty((m + 1, n_samples))
    roofs = np.empty((m, n_samples))
    pts[m] = z
    for k in range(m - 1, -1, -1):
        nxt = np.empty(n_samples)
        rv = np.empty(n_samples)
        for j in np.unique(words[:, k]):
            sel = words[:, k] == j
            h, _ = gm.inv(j, pts[k + 1, sel])
            nxt[sel] = h
            rv[sel] = roof(gm, h)
        pts[k] = nxt
        roofs[k] = rv
    return pts[: n + 1], roofs[:n]


def approx_eigenfunction_defect(gm: GMSystem, roof: Roof, Z0_branches, b: float, xi: float,
                                resolution: int = 64, n_samples: int = 2000, seed=0, u=None) -> DefectResult:
    """Defect sup |M_b^n u - e^{i psi} u| on Z0 for the best candidate u.

    Candidates: u = 1, and the unimodular part of the conjugated leading
    eigenvector of the twisted operator restricted to the Z0 branches (an
    exact approximate eigenfunction would be such an eigenvector).  A
    caller-supplied ``u`` replaces the candidates.
    """
    labels = list(Z0_branches)
    if not labels:
        raise EmptySubsystem("Z0 must contain at least one branch")
    valid = set(gm.branch_labels()) if not gm.countable else None
    for j in labels:
        if valid is not None and j not in valid:
            raise EmptySubsystem(f"branch {j} is not a branch of {gm.name}")
        if gm.countable and (int(j) != j or j < 1):
            raise EmptySubsystem(f"branch {j} is not a branch of {gm.name}")
    if b == 0 or xi <= 0:
        raise BadParams("need b != 0 and xi > 0")
    n = defect_horizon(b, xi)
    rng = np.random.default_rng(seed)
    pts, roofs = _z0_orbits(gm, roof, labels, n, n + 40, n_samples, rng)
    phase = np.prod(_phase(b * roofs), axis=0)

    def measure(ufun):
        u0 = ufun(pts[0])
        un = phase * ufun(pts[n])
        psi = float(np.angle(np.sum(un * np.conj(u0))))
        d = float(np.max(np.abs(un - np.exp(1j * psi) * u0)))
        return d, psi

    if u is not None:
        d, psi = measure(u)
        return DefectResult(d, psi, u)

    cands = [lambda y: np.ones(np.shape(y), dtype=np.complex128)]
    try:
        cands.append(_eigen_candidate(gm, roof, labels, b, resolution))
    except np.linalg.LinAlgError:
        pass
    best = None
    for f in cands:
        d, psi = measure(f)
        if best is None or d < best[0]:
            best = (d, psi, f)
    return DefectResult(*best)


def _eigen_candidate(gm, roof, labels, b, resolution):
    nodes = _cheb.lobatto(resolution, gm.lo, gm.hi)
    bw = _cheb.bary_weights(resolution)
    rows_H, rows_W, rows_P = [], [], []
    for j in labels:
        h, d = gm.inv(j, nodes)
        rows_H.append(h)
        rows_W.append(d * gm.density(h) / gm.density(nodes))
        rows_P.append(roof(gm, h))
    H = np.array(rows_H)
    W = np.array(rows_W)
    P = np.array(rows_P)
    P0 = _assemble(nodes, H, W.astype(np.complex128))
    Pb = _assemble(nodes, H, W * _phase(b * P))
    e0, V0 = np.linalg.eig(P0)
    h0 = np.real(V0[:, np.argmax(np.abs(e0))])
    h0 = h0 / np.sign(h0[np.argmax(np.abs(h0))])
    eb, Vb = np.linalg.eig(Pb)
    vb = Vb[:, np.argmax(np.abs(eb))]

    def ufun(y):
        M = _cheb.interp_matrix(nodes, bw, np.atleast_1d(y))
        q = (M @ vb) / (M @ h0)
        q = np.conj(q)
        return (q / np.abs(q)).reshape(np.shape(y))

    return ufun
