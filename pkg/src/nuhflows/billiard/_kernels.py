"""numba kernels for the event-driven billiard dynamics.

Collision states are (component, s, phi) with s the polar angle on circles and
arcs and the distance from the start point on segments.  Positions and
velocities are always rebuilt from these coordinates, so nothing drifts.

Status codes: 0 ok, 1 no collision before t_cap, 2 grazing collision.
"""
import math

import numpy as np
from numba import njit

OK = 0
CAP = 1
GRAZE = 2

EPS_GRAZE = 1e-10
TWO_PI = 2.0 * math.pi

# columns of the bounded-table geometry array
CX, CY, RAD, A0, A1, AX, AY, EX, EY, LEN, NX, NY = range(12)


@njit(cache=True)
def ray_circle_out(px, py, vx, vy, cx, cy, r):
    # first entry time of the ray into a disk seen from outside; inf if none
    dx = px - cx
    dy = py - cy
    b = vx * dx + vy * dy
    if b >= 0.0:
        return np.inf
    c = dx * dx + dy * dy - r * r
    disc = b * b - c
    if disc < 0.0:
        return np.inf
    q = -b + math.sqrt(disc)
    t = c / q
    if t < 0.0:
        return 0.0
    return t


@njit(cache=True)
def ray_circle_in(px, py, vx, vy, cx, cy, r):
    # exit time of a ray from the inside of a circle (far root)
    dx = px - cx
    dy = py - cy
    b = vx * dx + vy * dy
    c = dx * dx + dy * dy - r * r
    disc = b * b - c
    if disc < 0.0:
        return np.inf
    sq = math.sqrt(disc)
    if b > 0.0:
        t = -c / (b + sq)
    else:
        t = -b + sq
    if t <= 1e-13:
        return np.inf
    return t


@njit(cache=True)
def ray_segment(px, py, vx, vy, ax, ay, ex, ey, length, nx, ny):
    vn = vx * nx + vy * ny
    if vn >= 0.0:
        return np.inf, 0.0
    t = ((ax - px) * nx + (ay - py) * ny) / vn
    if t <= 1e-13:
        return np.inf, 0.0
    s = (px + t * vx - ax) * ex + (py + t * vy - ay) * ey
    if s < -1e-12 or s > length + 1e-12:
        return np.inf, 0.0
    return t, min(max(s, 0.0), length)


# ----------------------------------------------------------------- torus


@njit(cache=True)
def torus_hit(px, py, vx, vy, geo, imgs, t_cap):
    """First scatterer hit from (px, py) in [0,1)^2 along v.

    Walks the unit cells crossed by the ray (DDA); in each cell only the disk
    images that meet the cell are tested.  Returns
    (status, t, k, theta, nx, ny).
    """
    i = 0
    j = 0
    if vx > 0.0:
        sx = 1
        tdx = 1.0 / vx
        tmx = (1.0 - px) / vx
    elif vx < 0.0:
        sx = -1
        tdx = -1.0 / vx
        tmx = px / (-vx)
    else:
        sx = 0
        tdx = np.inf
        tmx = np.inf
    if vy > 0.0:
        sy = 1
        tdy = 1.0 / vy
        tmy = (1.0 - py) / vy
    elif vy < 0.0:
        sy = -1
        tdy = -1.0 / vy
        tmy = py / (-vy)
    else:
        sy = 0
        tdy = np.inf
        tmy = np.inf
    best = np.inf
    bk = -1
    bcx = 0.0
    bcy = 0.0
    m = imgs.shape[0]
    while True:
        for a in range(m):
            k = imgs[a, 0]
            ccx = geo[k, 0] + imgs[a, 1] + i
            ccy = geo[k, 1] + imgs[a, 2] + j
            t = ray_circle_out(px, py, vx, vy, ccx, ccy, geo[k, 2])
            if t < best:
                best = t
                bk = k
                bcx = ccx
                bcy = ccy
        t_exit = min(tmx, tmy)
        if best <= t_exit:
            break
        if t_exit > t_cap:
            return CAP, np.inf, -1, 0.0, 0.0, 0.0
        if tmx < tmy:
            i += sx
            tmx += tdx
        else:
            j += sy
            tmy += tdy
    if best > t_cap:
        return CAP, np.inf, -1, 0.0, 0.0, 0.0
    r = geo[bk, 2]
    nx = (px + best * vx - bcx) / r
    ny = (py + best * vy - bcy) / r
    nn = math.sqrt(nx * nx + ny * ny)
    nx /= nn
    ny /= nn
    theta = math.atan2(ny, nx)
    if theta < 0.0:
        theta += TWO_PI
    status = OK
    if -(vx * nx + vy * ny) < EPS_GRAZE:
        status = GRAZE
    return status, best, bk, theta, nx, ny


@njit(cache=True)
def torus_point(geo, k, theta, phi):
    # position (wrapped) and outgoing velocity of a collision state
    nx = math.cos(theta)
    ny = math.sin(theta)
    r = geo[k, 2]
    px = geo[k, 0] + r * nx
    py = geo[k, 1] + r * ny
    px -= math.floor(px)
    py -= math.floor(py)
    if px >= 1.0:
        px = 0.0
    if py >= 1.0:
        py = 0.0
    c = math.cos(phi)
    s = math.sin(phi)
    vx = c * nx - s * ny
    vy = c * ny + s * nx
    return px, py, vx, vy


@njit(cache=True)
def out_angle(vx, vy, nx, ny):
    # outgoing angle after specular reflection of incoming v at normal n
    return math.atan2(-vx * ny + vy * nx, -(vx * nx + vy * ny))


@njit(cache=True)
def torus_map(geo, imgs, k, theta, phi, t_cap):
    px, py, vx, vy = torus_point(geo, k, theta, phi)
    st, t, k2, th2, nx, ny = torus_hit(px, py, vx, vy, geo, imgs, t_cap)
    if st == CAP:
        return st, t, k, theta, phi
    return st, t, k2, th2, out_angle(vx, vy, nx, ny)


@njit(cache=True, nogil=True)
def torus_flights(geo, imgs, k0, th0, ph0, n_steps, t_cap):
    """Chains of billiard-map iterates started at the given states.

    Returns the flight times (n_chains, n_steps) and the number of completed
    steps of each chain; a chain stops at its first cap/grazing event.
    """
    n = k0.shape[0]
    out = np.zeros((n, n_steps))
    done = np.zeros(n, dtype=np.int64)
    for c in range(n):
        k = k0[c]
        th = th0[c]
        ph = ph0[c]
        for s in range(n_steps):
            st, t, k, th, ph = torus_map(geo, imgs, k, th, ph, t_cap)
            if st != OK:
                break
            out[c, s] = t
            done[c] = s + 1
    return out, done


@njit(cache=True, nogil=True)
def torus_displacement(geo, imgs, qx, qy, vx0, vy0, t_grid, t_cap):
    """Unwrapped displacement at the times of t_grid for each start point.

    Start points are generic flow states (not on the boundary).  Returns
    dx, dy of shape (n, len(t_grid)) and a status per trajectory.
    """
    n = qx.shape[0]
    m = t_grid.shape[0]
    dx = np.zeros((n, m))
    dy = np.zeros((n, m))
    status = np.zeros(n, dtype=np.int64)
    for c in range(n):
        px = qx[c]
        py = qy[c]
        vx = vx0[c]
        vy = vy0[c]
        ux = 0.0
        uy = 0.0
        now = 0.0
        g = 0
        while g < m:
            st, t, k, th, nx, ny = torus_hit(px, py, vx, vy, geo, imgs, t_cap)
            if st == CAP:
                status[c] = CAP
                break
            while g < m and t_grid[g] <= now + t:
                dt = t_grid[g] - now
                dx[c, g] = ux + dt * vx
                dy[c, g] = uy + dt * vy
                g += 1
            if st == GRAZE:
                status[c] = GRAZE
                break
            ux += t * vx
            uy += t * vy
            now += t
            ph = out_angle(vx, vy, nx, ny)
            cph = math.cos(ph)
            sph = math.sin(ph)
            vx = cph * nx - sph * ny
            vy = cph * ny + sph * nx
            r = geo[k, 2]
            px = geo[k, 0] + r * nx
            py = geo[k, 1] + r * ny
            px -= math.floor(px)
            py -= math.floor(py)
            if px >= 1.0:
                px = 0.0
            if py >= 1.0:
                py = 0.0
    return dx, dy, status


@njit(cache=True, nogil=True)
def torus_advance(geo, imgs, qx, qy, vx, vy, dt, t_cap, status):
    """Flow every state forward by dt in place (positions stay in [0,1)^2).

    Trajectories with a nonzero status are left untouched; a cap or grazing
    event sets the status and freezes the trajectory.
    """
    for c in range(qx.shape[0]):
        if status[c] != OK:
            continue
        px = qx[c]
        py = qy[c]
        ux = vx[c]
        uy = vy[c]
        left = dt
        while True:
            st, t, k, th, nx, ny = torus_hit(px, py, ux, uy, geo, imgs, min(t_cap, left + 1.0))
            if st == CAP and left + 1.0 < t_cap:
                t = np.inf
            elif st == CAP:
                status[c] = CAP
                break
            if t > left:
                px += left * ux
                py += left * uy
                break
            if st == GRAZE:
                status[c] = GRAZE
                break
            left -= t
            ph = out_angle(ux, uy, nx, ny)
            cph = math.cos(ph)
            sph = math.sin(ph)
            ux = cph * nx - sph * ny
            uy = cph * ny + sph * nx
            r = geo[k, 2]
            px = geo[k, 0] + r * nx
            py = geo[k, 1] + r * ny
        px -= math.floor(px)
        py -= math.floor(py)
        if px >= 1.0:
            px = 0.0
        if py >= 1.0:
            py = 0.0
        qx[c] = px
        qy[c] = py
        vx[c] = ux
        vy[c] = uy


# ---------------------------------------------------------------- bounded


@njit(cache=True)
def bounded_hit(px, py, vx, vy, kind, geo):
    """First boundary hit in a bounded table.  Returns (status, t, comp, s, nx, ny)."""
    best = np.inf
    bc = -1
    bs = 0.0
    for c in range(kind.shape[0]):
        kd = kind[c]
        if kd == 0:
            t = ray_circle_out(px, py, vx, vy, geo[c, CX], geo[c, CY], geo[c, RAD])
            if t < best:
                best = t
                bc = c
        elif kd == 1:
            t = ray_circle_in(px, py, vx, vy, geo[c, CX], geo[c, CY], geo[c, RAD])
            if t < best:
                hx = px + t * vx - geo[c, CX]
                hy = py + t * vy - geo[c, CY]
                ang = math.atan2(hy, hx)
                a0 = geo[c, A0]
                while ang < a0 - 1e-12:
                    ang += TWO_PI
                while ang >= a0 + TWO_PI - 1e-12:
                    ang -= TWO_PI
                if ang <= geo[c, A1] + 1e-12:
                    best = t
                    bc = c
        else:
            t, s = ray_segment(px, py, vx, vy, geo[c, AX], geo[c, AY], geo[c, EX], geo[c, EY],
                               geo[c, LEN], geo[c, NX], geo[c, NY])
            if t < best:
                best = t
                bc = c
                bs = s
    if bc < 0:
        return CAP, np.inf, -1, 0.0, 0.0, 0.0
    kd = kind[bc]
    if kd == 2:
        nx = geo[bc, NX]
        ny = geo[bc, NY]
        s = bs
    else:
        hx = px + best * vx - geo[bc, CX]
        hy = py + best * vy - geo[bc, CY]
        nn = math.sqrt(hx * hx + hy * hy)
        hx /= nn
        hy /= nn
        s = math.atan2(hy, hx)
        if kd == 0:
            nx = hx
            ny = hy
            if s < 0.0:
                s += TWO_PI
        else:
            nx = -hx
            ny = -hy
            a0 = geo[bc, A0]
            while s < a0:
                s += TWO_PI
            while s >= a0 + TWO_PI:
                s -= TWO_PI
            s = min(s, geo[bc, A1])
    status = OK
    if -(vx * nx + vy * ny) < EPS_GRAZE:
        status = GRAZE
    return status, best, bc, s, nx, ny


@njit(cache=True)
def bounded_point(kind, geo, c, s, phi):
    kd = kind[c]
    if kd == 2:
        px = geo[c, AX] + s * geo[c, EX]
        py = geo[c, AY] + s * geo[c, EY]
        nx = geo[c, NX]
        ny = geo[c, NY]
    else:
        ex = math.cos(s)
        ey = math.sin(s)
        px = geo[c, CX] + geo[c, RAD] * ex
        py = geo[c, CY] + geo[c, RAD] * ey
        if kd == 0:
            nx = ex
            ny = ey
        else:
            nx = -ex
            ny = -ey
    cph = math.cos(phi)
    sph = math.sin(phi)
    return px, py, cph * nx - sph * ny, cph * ny + sph * nx


@njit(cache=True)
def bounded_map(kind, geo, c, s, phi):
    px, py, vx, vy = bounded_point(kind, geo, c, s, phi)
    st, t, c2, s2, nx, ny = bounded_hit(px, py, vx, vy, kind, geo)
    if st == CAP:
        return st, t, c, s, phi
    return st, t, c2, s2, out_angle(vx, vy, nx, ny)


@njit(cache=True, nogil=True)
def bounded_flights(kind, geo, c0, s0, ph0, n_steps):
    n = c0.shape[0]
    out = np.zeros((n, n_steps))
    done = np.zeros(n, dtype=np.int64)
    for a in range(n):
        c = c0[a]
        s = s0[a]
        ph = ph0[a]
        for k in range(n_steps):
            st, t, c, s, ph = bounded_map(kind, geo, c, s, ph)
            if st != OK:
                break
            out[a, k] = t
            done[a] = k + 1
    return out, done


@njit(cache=True)
def bounded_first_return(kind, geo, section, c, s, phi, max_steps):
    """Iterate the map until the state lands on a component flagged in section.

    Returns (status, steps, total_flight, c, s, phi); status CAP when the step
    bound is exceeded.
    """
    total = 0.0
    for k in range(max_steps):
        st, t, c, s, phi = bounded_map(kind, geo, c, s, phi)
        if st == CAP:
            return CAP, k, total, c, s, phi
        total += t
        if st == GRAZE:
            return GRAZE, k + 1, total, c, s, phi
        if section[c]:
            return OK, k + 1, total, c, s, phi
    return CAP, max_steps, total, c, s, phi
