"""Billiard table geometry.

Three variants are supported:

* ``lorentz-torus``: disjoint disks on the unit torus [0, 1)^2;
* ``semidispersing-rectangle``: a rectangle [0, W] x [0, H] with interior disks;
* ``stadium``: two semicircular arcs of radius ``rho`` joined by two straight
  segments of length ``2a``.

Every boundary piece is a *component* with an integer id.  Bounded tables are
flattened into a small set of numpy arrays consumed by the numba kernels.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ConfigInvalid, InvalidTable

# component kinds (shared with the kernels)
SCATTERER = 0  # circle, domain outside
ARC = 1  # circular arc, domain inside (focusing)
SEGMENT = 2

VARIANTS = ("lorentz-torus", "semidispersing-rectangle", "stadium")
TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class Component:
    kind: int
    center: tuple[float, float] = (0.0, 0.0)
    radius: float = 0.0
    # arcs: angular range [a0, a1] (a1 > a0, measured from the center)
    a0: float = 0.0
    a1: float = TWO_PI
    # segments: start point, unit direction, length, inward normal
    start: tuple[float, float] = (0.0, 0.0)
    direction: tuple[float, float] = (1.0, 0.0)
    length: float = 0.0
    normal: tuple[float, float] = (0.0, 1.0)

    @property
    def arclength(self) -> float:
        if self.kind == SEGMENT:
            return self.length
        return self.radius * (self.a1 - self.a0)


@dataclass(frozen=True)
class BilliardTable:
    variant: str
    components: tuple[Component, ...]
    # lorentz-torus only
    centers: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    radii: np.ndarray = field(default_factory=lambda: np.zeros(0))
    # semidispersing only
    width: float = 0.0
    height: float = 0.0
    # stadium only
    a: float = 0.0
    rho: float = 0.0
    degenerate: bool = False  # tangent scatterers (allowed for geometry queries only)

    # ------------------------------------------------------------------ builders
    @classmethod
    def lorentz_torus(cls, scatterers, *, allow_tangent: bool = False) -> "BilliardTable":
        """Disks ``[(cx, cy, r), ...]`` on the unit torus."""
        sc = np.asarray(scatterers, dtype=float).reshape(-1, 3)
        if len(sc) == 0:
            raise InvalidTable("at least one scatterer is required")
        centers = np.mod(sc[:, :2], 1.0)
        radii = sc[:, 2].copy()
        if np.any(radii <= 0):
            raise InvalidTable("scatterer radii must be strictly positive")
        if np.any(radii >= 1.0):
            raise InvalidTable("scatterer radii must be < 1")
        degenerate = False
        for i in range(len(sc)):
            for k in range(i, len(sc)):
                for di in (-1, 0, 1):
                    for dj in (-1, 0, 1):
                        if i == k and di == 0 and dj == 0:
                            continue
                        d = np.hypot(centers[k, 0] + di - centers[i, 0], centers[k, 1] + dj - centers[i, 1])
                        gap = d - radii[i] - radii[k]
                        if gap < -1e-12:
                            raise InvalidTable(f"scatterers {i} and {k} overlap (image {di},{dj})")
                        if abs(gap) <= 1e-12:
                            if not allow_tangent:
                                raise InvalidTable(f"scatterers {i} and {k} are tangent")
                            degenerate = True
        comps = tuple(Component(SCATTERER, tuple(c), float(r)) for c, r in zip(centers, radii))
        return cls("lorentz-torus", comps, centers=centers, radii=radii, degenerate=degenerate)

    @classmethod
    def semidispersing(cls, width: float, height: float, scatterers) -> "BilliardTable":
        if width <= 0 or height <= 0:
            raise InvalidTable("rectangle dimensions must be positive")
        sc = np.asarray(scatterers, dtype=float).reshape(-1, 3)
        if len(sc) == 0:
            raise InvalidTable("a semidispersing table needs at least one scatterer")
        if np.any(sc[:, 2] <= 0):
            raise InvalidTable("scatterer radii must be strictly positive")
        for cx, cy, r in sc:
            if cx - r <= 0 or cx + r >= width or cy - r <= 0 or cy + r >= height:
                raise InvalidTable("scatterers must lie strictly inside the rectangle")
        for i in range(len(sc)):
            for k in range(i + 1, len(sc)):
                if np.hypot(*(sc[i, :2] - sc[k, :2])) <= sc[i, 2] + sc[k, 2]:
                    raise InvalidTable(f"scatterers {i} and {k} intersect")
        walls = (
            Component(SEGMENT, start=(0.0, 0.0), direction=(1.0, 0.0), length=width, normal=(0.0, 1.0)),
            Component(SEGMENT, start=(width, 0.0), direction=(0.0, 1.0), length=height, normal=(-1.0, 0.0)),
            Component(SEGMENT, start=(width, height), direction=(-1.0, 0.0), length=width, normal=(0.0, -1.0)),
            Component(SEGMENT, start=(0.0, height), direction=(0.0, -1.0), length=height, normal=(1.0, 0.0)),
        )
        disks = tuple(Component(SCATTERER, (float(cx), float(cy)), float(r)) for cx, cy, r in sc)
        return cls("semidispersing-rectangle", walls + disks, centers=sc[:, :2].copy(), radii=sc[:, 2].copy(),
                   width=float(width), height=float(height))

    @classmethod
    def stadium(cls, a: float, rho: float) -> "BilliardTable":
        """Component ids: 0 right arc, 1 top segment, 2 left arc, 3 bottom segment."""
        if a < 0 or rho <= 0:
            raise InvalidTable("stadium needs a >= 0 and rho > 0")
        comps = [
            Component(ARC, (a, 0.0), rho, -np.pi / 2, np.pi / 2),
            Component(SEGMENT, start=(a, rho), direction=(-1.0, 0.0), length=2 * a, normal=(0.0, -1.0)),
            Component(ARC, (-a, 0.0), rho, np.pi / 2, 3 * np.pi / 2),
            Component(SEGMENT, start=(-a, -rho), direction=(1.0, 0.0), length=2 * a, normal=(0.0, 1.0)),
        ]
        return cls("stadium", tuple(comps), a=float(a), rho=float(rho))

    # ------------------------------------------------------------------ queries
    @property
    def n_components(self) -> int:
        return len(self.components)

    @property
    def boundary_length(self) -> float:
        return float(sum(c.arclength for c in self.components))

    def is_curved(self, comp: int) -> bool:
        return self.components[comp].kind != SEGMENT

    def point_normal(self, comp: int, s: float):
        """Boundary point and unit normal (pointing into the domain) at parameter ``s``.

        ``s`` is the polar angle for circles/arcs and the distance from the
        start point for segments.
        """
        c = self.components[comp]
        if c.kind == SEGMENT:
            p = np.array(c.start) + s * np.array(c.direction)
            return p, np.array(c.normal, dtype=float)
        e = np.array([np.cos(s), np.sin(s)])
        p = np.array(c.center) + c.radius * e
        return p, (e if c.kind == SCATTERER else -e)

    def to_arclength(self, comp: int, s):
        c = self.components[comp]
        if c.kind == SEGMENT:
            return s
        return c.radius * (s - c.a0)

    def from_arclength(self, comp: int, r):
        c = self.components[comp]
        if c.kind == SEGMENT:
            return r
        return c.a0 + r / c.radius

    def kernel_arrays(self):
        """Flat arrays describing every component (bounded tables)."""
        n = self.n_components
        out = {k: np.zeros(n) for k in ("cx", "cy", "rad", "a0", "a1", "ax", "ay", "ex", "ey", "L", "nx", "ny")}
        kind = np.zeros(n, dtype=np.int64)
        for i, c in enumerate(self.components):
            kind[i] = c.kind
            out["cx"][i], out["cy"][i] = c.center
            out["rad"][i] = c.radius
            out["a0"][i], out["a1"][i] = c.a0, c.a1
            out["ax"][i], out["ay"][i] = c.start
            out["ex"][i], out["ey"][i] = c.direction
            out["L"][i] = c.length
            out["nx"][i], out["ny"][i] = c.normal
        return kind, out

    def image_offsets(self):
        """For the torus: (scatterer, di, dj) triples whose disk meets the unit cell."""
        ks, dis, djs = [], [], []
        for k, ((cx, cy), r) in enumerate(zip(self.centers, self.radii)):
            for di in (-1, 0, 1):
                for dj in (-1, 0, 1):
                    x, y = cx + di, cy + dj
                    # distance from the disk center to the unit square
                    ddx = max(0.0 - x, 0.0, x - 1.0)
                    ddy = max(0.0 - y, 0.0, y - 1.0)
                    if ddx * ddx + ddy * ddy < r * r:
                        ks.append(k)
                        dis.append(di)
                        djs.append(dj)
        return np.array(ks, dtype=np.int64), np.array(dis, dtype=np.int64), np.array(djs, dtype=np.int64)

    def inside_scatterer(self, q) -> bool:
        q = np.asarray(q, dtype=float)
        if self.variant == "lorentz-torus":
            d = np.mod(q - self.centers + 0.5, 1.0) - 0.5
            return bool(np.any(np.hypot(d[:, 0], d[:, 1]) < self.radii))
        if self.variant == "semidispersing-rectangle":
            if not (0 <= q[0] <= self.width and 0 <= q[1] <= self.height):
                return True
            return bool(np.any(np.hypot(*(q - self.centers).T) < self.radii))
        x, y = q
        if abs(y) > self.rho:
            return True
        if abs(x) <= self.a:
            return False
        return np.hypot(abs(x) - self.a, y) > self.rho

    # ------------------------------------------------------------------ config
    def to_config(self) -> dict:
        if self.variant == "lorentz-torus":
            return {"variant": self.variant,
                    "scatterers": [[float(c[0]), float(c[1]), float(r)] for c, r in zip(self.centers, self.radii)]}
        if self.variant == "semidispersing-rectangle":
            return {"variant": self.variant, "width": self.width, "height": self.height,
                    "scatterers": [[float(c[0]), float(c[1]), float(r)] for c, r in zip(self.centers, self.radii)]}
        return {"variant": self.variant, "stadium": {"a": self.a, "rho": self.rho}}


def table_from_config(cfg: dict) -> BilliardTable:
    """Build a table from a parsed config mapping.

    Keys: ``variant``; ``scatterers`` (list of ``[cx, cy, r]`` or ``{"center":
    [cx, cy], "radius": r}``); a global ``radius`` applied to scatterers given
    as bare centers; ``width``/``height`` for rectangles; ``stadium.a`` and
    ``stadium.rho``.
    """
    allowed = {"variant", "scatterers", "radius", "width", "height", "stadium"}
    unknown = set(cfg) - allowed
    if unknown:
        raise ConfigInvalid(f"unknown table key(s): {sorted(unknown)}")
    variant = cfg.get("variant")
    if variant not in VARIANTS:
        raise ConfigInvalid(f"table.variant must be one of {VARIANTS}, got {variant!r}")
    if variant == "stadium":
        st = cfg.get("stadium")
        if not isinstance(st, dict) or set(st) - {"a", "rho"} or "rho" not in st:
            raise ConfigInvalid("table.stadium must be a mapping with keys a, rho")
        return BilliardTable.stadium(float(st.get("a", 0.0)), float(st["rho"]))
    default_r = cfg.get("radius")
    sc = []
    for i, item in enumerate(cfg.get("scatterers", [])):
        if isinstance(item, dict):
            if set(item) - {"center", "radius"}:
                raise ConfigInvalid(f"table.scatterers[{i}]: unknown keys {sorted(set(item) - {'center', 'radius'})}")
            r = item.get("radius", default_r)
            cx, cy = item["center"]
        elif len(item) == 3:
            cx, cy, r = item
        elif len(item) == 2:
            cx, cy = item
            r = default_r
        else:
            raise ConfigInvalid(f"table.scatterers[{i}] must be [cx, cy] or [cx, cy, r]")
        if r is None:
            raise ConfigInvalid(f"table.scatterers[{i}] has no radius and no table.radius default")
        sc.append((float(cx), float(cy), float(r)))
    try:
        if variant == "lorentz-torus":
            return BilliardTable.lorentz_torus(sc)
        return BilliardTable.semidispersing(float(cfg["width"]), float(cfg["height"]), sc)
    except KeyError as exc:
        raise ConfigInvalid(f"table.{exc.args[0]} is required for {variant}") from None
    except InvalidTable as exc:
        raise ConfigInvalid(f"table.scatterers: {exc}") from None


def load_table(path) -> BilliardTable:
    with open(Path(path)) as fh:
        return table_from_config(json.load(fh))
