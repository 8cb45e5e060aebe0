"""Public billiard dynamics: collisions, billiard map, flow, corridors, sampling."""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from math import gcd

import numpy as np

from ..errors import BadParams, CapExceeded, GrazingError, UnsupportedVariant
from . import _kernels as K
from .tables import ARC, SCATTERER, SEGMENT, BilliardTable

T_CAP = 1e4
EPS_GRAZE = K.EPS_GRAZE


@dataclass(frozen=True)
class FlowState:
    q: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float).reshape(2)
        v = np.asarray(self.v, dtype=float).reshape(2)
        nv = math.hypot(v[0], v[1])
        if nv == 0:
            raise BadParams("velocity must be nonzero")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "v", v / nv)


@dataclass(frozen=True)
class CollisionState:
    """Boundary point with outgoing angle.

    ``s`` is the internal coordinate (polar angle on curved pieces, distance
    along segments), ``r`` the arclength coordinate, ``phi`` the angle of the
    outgoing velocity to the normal pointing into the domain.
    """
    comp: int
    s: float
    phi: float
    r: float

    @classmethod
    def from_internal(cls, table: BilliardTable, comp, s, phi):
        return cls(int(comp), float(s), float(phi), float(table.to_arclength(int(comp), s)))

    @classmethod
    def at(cls, table: BilliardTable, comp, r, phi):
        """Build from arclength coordinates."""
        comp = int(comp)
        if not 0 <= comp < table.n_components:
            raise BadParams(f"no component {comp}")
        if abs(phi) > np.pi / 2:
            raise BadParams("|phi| must be <= pi/2")
        return cls(comp, float(table.from_arclength(comp, r)), float(phi), float(r))

    def reversed(self) -> "CollisionState":
        return CollisionState(self.comp, self.s, -self.phi, self.r)


@dataclass(frozen=True)
class FlightSegment:
    start: FlowState
    end: CollisionState
    h: float


@dataclass(frozen=True)
class Corridor:
    direction: tuple[int, int]
    width: float
    degenerate: bool = False


# --------------------------------------------------------------- geometry glue
_GEO_CACHE: dict[int, tuple] = {}


def _geometry(table: BilliardTable):
    key = id(table)
    hit = _GEO_CACHE.get(key)
    if hit is not None and hit[0] is table:
        return hit[1]
    if table.variant == "lorentz-torus":
        geo = np.column_stack([table.centers, table.radii]).astype(float)
        ks, dis, djs = table.image_offsets()
        g = ("torus", geo, np.column_stack([ks, dis, djs]).astype(np.int64))
    else:
        kind, arr = table.kernel_arrays()
        cols = ["cx", "cy", "rad", "a0", "a1", "ax", "ay", "ex", "ey", "L", "nx", "ny"]
        geo = np.column_stack([arr[c] for c in cols]).astype(float)
        g = ("bounded", kind, geo)
    _GEO_CACHE[key] = (table, g)
    return g


def _wrap(table, q):
    if table.variant == "lorentz-torus":
        q = np.mod(q, 1.0)
        q[q >= 1.0] = 0.0
    return q


def outgoing(table: BilliardTable, x: CollisionState) -> FlowState:
    """Phase point leaving the boundary at x."""
    g = _geometry(table)
    if g[0] == "torus":
        px, py, vx, vy = K.torus_point(g[1], x.comp, x.s, x.phi)
    else:
        px, py, vx, vy = K.bounded_point(g[1], g[2], x.comp, x.s, x.phi)
    return FlowState(np.array([px, py]), np.array([vx, vy]))


def boundary_normal(table: BilliardTable, x: CollisionState):
    p, n = table.point_normal(x.comp, x.s)
    return _wrap(table, p), n


def _hit(table, q, v, t_cap):
    g = _geometry(table)
    if g[0] == "torus":
        q = _wrap(table, np.array(q, dtype=float))
        return K.torus_hit(q[0], q[1], v[0], v[1], g[1], g[2], t_cap)
    st, t, c, s, nx, ny = K.bounded_hit(q[0], q[1], v[0], v[1], g[1], g[2])
    if st == K.OK and t > t_cap:
        st = K.CAP
    return st, t, c, s, nx, ny


def next_collision(table: BilliardTable, state: FlowState, t_cap: float = T_CAP) -> FlightSegment:
    """First boundary collision along the straight ray from ``state``."""
    if t_cap <= 0:
        raise BadParams("t_cap must be positive")
    v = state.v
    st, t, c, s, nx, ny = _hit(table, state.q, v, t_cap)
    if st == K.CAP:
        raise CapExceeded(f"no collision within t_cap={t_cap}")
    phi = K.out_angle(v[0], v[1], nx, ny)
    end = CollisionState.from_internal(table, c, s, phi)
    seg = FlightSegment(state, end, float(t))
    if st == K.GRAZE:
        raise GrazingError(f"grazing collision on component {c} (|cos phi| < {EPS_GRAZE})", segment=seg)
    return seg


def billiard_map(table: BilliardTable, x: CollisionState, t_cap: float = T_CAP) -> CollisionState:
    return next_collision(table, outgoing(table, x), t_cap).end


def flight_time(table: BilliardTable, x: CollisionState, t_cap: float = T_CAP) -> float:
    return next_collision(table, outgoing(table, x), t_cap).h


def flow(table: BilliardTable, m: FlowState, t: float, t_cap: float = T_CAP) -> FlowState:
    """T_t(m), chaining free flights and reflections."""
    if t < 0:
        raise BadParams("t must be >= 0")
    left = float(t)
    cur = m
    while True:
        try:
            seg = next_collision(table, cur, t_cap)
        except CapExceeded:
            if left >= t_cap:
                raise
            return FlowState(_wrap(table, cur.q + left * cur.v), cur.v)
        if seg.h > left:
            return FlowState(_wrap(table, cur.q + left * cur.v), cur.v)
        left -= seg.h
        cur = outgoing(table, seg.end)


# ------------------------------------------------------------------ corridors
def _directions(max_dir):
    dirs = []
    for p in range(0, max_dir + 1):
        for q in range(-max_dir, max_dir + 1):
            if p == 0 and q <= 0:
                continue
            if gcd(p, abs(q)) != 1:
                continue
            dirs.append((p, q))
    return dirs


def corridor_width(table: BilliardTable, direction) -> tuple[float, bool]:
    """Widest empty strip in the given rational direction.

    Disk images project onto the strip normal at c.n + Z/L (L = |(p, q)|), so
    the question reduces to covering a circle of length 1/L by intervals.
    """
    p, q = direction
    L = math.hypot(p, q)
    per = 1.0 / L
    n = np.array([-q, p]) / L
    ivals = []
    for c, r in zip(table.centers, table.radii):
        if 2 * r >= per - 1e-12:
            return 0.0, bool(abs(2 * r - per) <= 1e-12)
        m = float(np.dot(c, n)) % per
        ivals.append((m - r, m + r))
    ivals.sort()
    # sweep the intervals on the circle, starting at the first left end
    start = ivals[0][0]
    reach = ivals[0][1]
    gap = -np.inf
    for a, b in ivals[1:]:
        gap = max(gap, a - reach)
        reach = max(reach, b)
    gap = max(gap, start + per - reach)
    if gap > 1e-12:
        return float(gap), False
    return 0.0, bool(abs(gap) <= 1e-12)


def detect_corridors(table: BilliardTable, max_dir: int) -> list[Corridor]:
    """Corridors for every primitive direction with |p|, |q| <= max_dir.

    Widths of zero are reported too; ``degenerate`` marks strips that close
    up exactly (tangent scatterer images).
    """
    if table.variant != "lorentz-torus":
        raise UnsupportedVariant("corridor detection needs a lorentz-torus table")
    if max_dir < 1:
        raise BadParams("max_dir must be >= 1")
    out = []
    for d in _directions(max_dir):
        w, deg = corridor_width(table, d)
        out.append(Corridor(d, w, deg))
    return out


def infinite_horizon(table: BilliardTable, max_dir: int = 10) -> bool:
    return any(c.width > 0 for c in detect_corridors(table, max_dir))


# --------------------------------------------------------------- first return
def section_mask(table: BilliardTable) -> np.ndarray:
    if table.variant == "stadium":
        want = ARC
    elif table.variant == "semidispersing-rectangle":
        want = SCATTERER
    else:
        raise UnsupportedVariant("first_return is defined for stadium and semidispersing tables")
    return np.array([c.kind == want for c in table.components], dtype=np.bool_)


def first_return(table: BilliardTable, x: CollisionState, max_steps: int = 10_000):
    """First return to the section; returns (state, number of map steps, total flight)."""
    mask = section_mask(table)
    _, kind, geo = _geometry(table)
    st, n, total, c, s, phi = K.bounded_first_return(kind, geo, mask, x.comp, x.s, x.phi, max_steps)
    if st == K.CAP:
        raise CapExceeded(f"no return to the section within {max_steps} bounces")
    y = CollisionState.from_internal(table, c, s, phi)
    if st == K.GRAZE:
        raise GrazingError("grazing collision during first return")
    return y, int(n), float(total)


# ------------------------------------------------------------------- sampling
@dataclass
class CollisionBatch:
    """Struct-of-arrays batch of collision states."""
    comp: np.ndarray
    s: np.ndarray
    phi: np.ndarray
    r: np.ndarray
    table: BilliardTable

    def __len__(self):
        return len(self.comp)

    def __getitem__(self, i):
        return CollisionState(int(self.comp[i]), float(self.s[i]), float(self.phi[i]), float(self.r[i]))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def global_arclength(self):
        # position along the whole boundary (components laid end to end)
        offs = np.cumsum([0.0] + [c.arclength for c in self.table.components])[:-1]
        return offs[self.comp] + self.r


def sample_invariant(table: BilliardTable, seed, n: int) -> CollisionBatch:
    """i.i.d. draws from the invariant measure of the billiard map.

    The density is proportional to cos(phi) dr dphi: r is uniform along the
    boundary and sin(phi) is uniform on (-1, 1), so phi is drawn by inverting
    its distribution function directly.
    """
    if n < 1:
        raise BadParams("n must be >= 1")
    rng = np.random.default_rng(seed)
    lens = np.array([c.arclength for c in table.components])
    u = rng.random(n) * lens.sum()
    edges = np.cumsum(lens)
    comp = np.minimum(np.searchsorted(edges, u, side="right"), len(lens) - 1)
    r = u - (edges[comp] - lens[comp])
    r = np.clip(r, 0.0, lens[comp])
    phi = np.arcsin(rng.uniform(-1.0, 1.0, n))
    s = np.empty(n)
    for k, c in enumerate(table.components):
        sel = comp == k
        s[sel] = table.from_arclength(k, r[sel])
    return CollisionBatch(comp.astype(np.int64), s, phi, r, table)


def map_batch(table: BilliardTable, batch: CollisionBatch, t_cap: float = T_CAP):
    """Apply the billiard map to every state; returns (image batch, flights, status)."""
    g = _geometry(table)
    n = len(batch)
    c2 = np.empty(n, dtype=np.int64)
    s2 = np.empty(n)
    p2 = np.empty(n)
    h = np.empty(n)
    st = np.empty(n, dtype=np.int64)
    for i in range(n):
        if g[0] == "torus":
            res = K.torus_map(g[1], g[2], batch.comp[i], batch.s[i], batch.phi[i], t_cap)
        else:
            res = K.bounded_map(g[1], g[2], batch.comp[i], batch.s[i], batch.phi[i])
        st[i], h[i], c2[i], s2[i], p2[i] = res
    r2 = np.array([table.to_arclength(int(c), s) for c, s in zip(c2, s2)])
    return CollisionBatch(c2, s2, p2, r2, table), h, st


def sample_flow_states(table: BilliardTable, seed, n: int):
    """Liouville-distributed phase points: uniform position in the domain, uniform direction."""
    if table.variant != "lorentz-torus":
        raise UnsupportedVariant("flow-state sampling is implemented for the torus")
    rng = np.random.default_rng(seed)
    q = np.empty((0, 2))
    while len(q) < n:
        cand = rng.random((2 * n, 2))
        d = cand[:, None, :] - table.centers[None, :, :]
        d -= np.round(d)
        ok = np.all(np.hypot(d[..., 0], d[..., 1]) > table.radii[None, :], axis=1)
        q = np.vstack([q, cand[ok]])
    q = q[:n]
    ang = rng.uniform(0.0, 2 * np.pi, n)
    return q, np.column_stack([np.cos(ang), np.sin(ang)])


def _split(seed, k):
    return np.random.SeedSequence(seed).spawn(k)


def free_flights(table: BilliardTable, n_collisions: int, seed, n_chains: int = 64,
                 t_cap: float = T_CAP, threads: int = 1):
    """Flight times along stationary chains of the billiard map.

    Chains start at independent draws from the invariant measure; each runs
    ``n_collisions // n_chains`` steps.  A chain is cut at its first grazing or
    capped event, which is counted in the returned diagnostics.
    """
    per = max(1, n_collisions // n_chains)
    starts = sample_invariant(table, seed, n_chains)
    g = _geometry(table)
    groups = np.array_split(np.arange(n_chains), max(1, threads))

    def run(idx):
        if g[0] == "torus":
            return K.torus_flights(g[1], g[2], starts.comp[idx], starts.s[idx], starts.phi[idx], per, t_cap)
        return K.bounded_flights(g[1], g[2], starts.comp[idx], starts.s[idx], starts.phi[idx], per)

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(run, groups))
    else:
        parts = [run(i) for i in groups]
    flights = []
    cut = 0
    for out, done in parts:
        for row, d in zip(out, done):
            flights.append(row[:d])
            cut += int(d < per)
    return np.concatenate(flights), {"chains": n_chains, "steps_per_chain": per, "chains_cut": cut}


def displacement_ensemble(table: BilliardTable, t_grid, n: int, seed, t_cap: float = T_CAP, threads: int = 1):
    """Unwrapped displacement of Liouville-distributed trajectories at the times in t_grid.

    Returns (dx, dy, status) with shape (n, len(t_grid)).  This is the time
    integral of the velocity observable, computed exactly along flights.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    q, v = sample_flow_states(table, seed, n)
    _, geo, imgs = _geometry(table)
    groups = np.array_split(np.arange(n), max(1, threads))

    def run(idx):
        return K.torus_displacement(geo, imgs, q[idx, 0], q[idx, 1], v[idx, 0], v[idx, 1], t_grid, t_cap)

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(run, groups))
    else:
        parts = [run(i) for i in groups]
    dx = np.vstack([p[0] for p in parts])
    dy = np.vstack([p[1] for p in parts])
    st = np.concatenate([p[2] for p in parts])
    return dx, dy, st


# ----------------------------------------------------------------- trajectory
def trajectory(table: BilliardTable, x: CollisionState, n_events: int, t_cap: float = T_CAP):
    """Orbit of x under the billiard map as arrays (comp, r, phi, flight_time).

    ``flight_time[k]`` is the flight that ended at event k (0 for the start).
    """
    comp = [x.comp]
    r = [x.r]
    phi = [x.phi]
    h = [0.0]
    cur = x
    for _ in range(n_events):
        seg = next_collision(table, outgoing(table, cur), t_cap)
        cur = seg.end
        comp.append(cur.comp)
        r.append(cur.r)
        phi.append(cur.phi)
        h.append(seg.h)
    return np.array(comp), np.array(r), np.array(phi), np.array(h)


def write_trajectory_csv(path, comp, r, phi, h):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["event_index", "component", "r", "phi", "flight_time"])
        for i, row in enumerate(zip(comp, r, phi, h)):
            w.writerow([i, int(row[0]), f"{row[1]:.17g}", f"{row[2]:.17g}", f"{row[3]:.17g}"])


def phase_distance(table: BilliardTable, x: CollisionState, y: CollisionState) -> float:
    """Euclidean distance of (position, velocity) embeddings (minimal image on the torus)."""
    a = outgoing(table, x)
    b = outgoing(table, y)
    dq = a.q - b.q
    if table.variant == "lorentz-torus":
        dq -= np.round(dq)
    return float(np.sqrt(dq @ dq + (a.v - b.v) @ (a.v - b.v)))
