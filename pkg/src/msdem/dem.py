"""Discrete element floe engine.

Floes are stored structure-of-arrays. A :class:`CellBatch` packs many
independent local DEMs (one per coarse cell, or a single global one)
contiguously so one kernel call can step all of them; :class:`DemCell` is a
view of one of those local DEMs.

Contact law per overlapping pair (l, j), with ``n`` the unit normal from j
toward l and ``t`` the normal rotated by +90 degrees::

    f_n on l = c E |delta| n                    (repulsive)
    f_t on l = c G v_t t, capped at mu |f_n|    (Coulomb)

``c`` is the chord of the lens-shaped overlap and ``v_t`` the relative
tangential velocity at the common contact point, the midpoint of the
overlap segment on the centre line. Lever arms run from each centre to
that point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ._backend import kernels
from .core import Floe, OceanField, PhysParams, mass_of_radius
from .errors import ConfigurationError, DegenerateContactError, DivergenceError, MsdemError

STATE_FIELDS = ("r", "x", "y", "theta", "vx", "vy", "omega")


@dataclass(frozen=True)
class ContactPair:
    l: int
    j: int
    d: float
    n_hat: tuple[float, float]
    t_hat: tuple[float, float]
    delta: float


@dataclass
class DemCell:
    """One local DEM: a set of floes living in ``box`` = (x0, y0, x1, y1).

    The arrays may be views into a :class:`CellBatch`; mutating them mutates
    the batch.
    """

    r: np.ndarray
    x: np.ndarray
    y: np.ndarray
    theta: np.ndarray
    vx: np.ndarray
    vy: np.ndarray
    omega: np.ndarray
    m: np.ndarray
    inertia: np.ndarray
    box: tuple[float, float, float, float]
    periodic: tuple[bool, bool] = (True, True)

    @classmethod
    def from_floes(cls, floes: Iterable[Floe], box, params: PhysParams, periodic=(True, True)):
        floes = list(floes)
        cols = {k: np.array([getattr(f, k) for f in floes], dtype=float) for k in STATE_FIELDS}
        return cls.from_arrays(box=box, params=params, periodic=periodic, **cols)

    @classmethod
    def from_arrays(cls, *, r, x, y, box, params: PhysParams, theta=None, vx=None, vy=None,
                    omega=None, periodic=(True, True)):
        r = np.array(r, dtype=float)
        n = len(r)
        if np.any(r <= 0):
            raise ConfigurationError("floe radii must be positive")

        def col(v):
            return np.zeros(n) if v is None else np.array(v, dtype=float).reshape(n)

        m = mass_of_radius(r, params.rho_ice)
        return cls(r=r, x=col(x), y=col(y), theta=col(theta), vx=col(vx), vy=col(vy),
                   omega=col(omega), m=m, inertia=m * r * r, box=tuple(float(b) for b in box),
                   periodic=(bool(periodic[0]), bool(periodic[1])))

    def __len__(self):
        return len(self.r)

    @property
    def area(self) -> float:
        x0, y0, x1, y1 = self.box
        return (x1 - x0) * (y1 - y0)

    def floes(self) -> list[Floe]:
        return [Floe(*(float(getattr(self, k)[i]) for k in STATE_FIELDS)) for i in range(len(self))]

    def refresh_mass(self, params: PhysParams):
        self.m[:] = mass_of_radius(self.r, params.rho_ice)
        self.inertia[:] = self.m * self.r * self.r

    def momentum(self):
        return float(np.sum(self.m * self.vx)), float(np.sum(self.m * self.vy))

    def angular_momentum(self, about_origin: bool = True) -> float:
        """Spin plus orbital angular momentum (orbital about the origin)."""
        spin = float(np.sum(self.inertia * self.omega))
        if not about_origin:
            return spin
        return spin + float(np.sum(self.m * (self.x * self.vy - self.y * self.vx)))

    def as_batch(self) -> "CellBatch":
        """One-cell batch sharing this cell's arrays."""
        return CellBatch(
            arrays={k: getattr(self, k) for k in STATE_FIELDS + ("m", "inertia")},
            offsets=np.array([0, len(self)], dtype=np.int64),
            boxes=np.array([self.box], dtype=float),
            periodic=np.array([self.periodic], dtype=np.uint8),
        )

    def write_csv(self, path, ids: Sequence[int] | None = None):
        ids = np.arange(len(self)) if ids is None else ids
        with open(path, "w", newline="\n") as fh:
            fh.write("id,r,x,y,theta,vx,vy,omega\n")
            for k in range(len(self)):
                vals = ",".join(repr(float(getattr(self, f)[k])) for f in STATE_FIELDS)
                fh.write(f"{int(ids[k])},{vals}\n")


@dataclass
class CellBatch:
    """Independent local DEMs stored back to back.

    Floes of cell ``c`` occupy ``offsets[c]:offsets[c+1]`` of every array.
    """

    arrays: dict
    offsets: np.ndarray
    boxes: np.ndarray
    periodic: np.ndarray
    _views: list = field(default_factory=list, repr=False)

    @classmethod
    def from_cells(cls, cells: Sequence[DemCell]) -> "CellBatch":
        names = STATE_FIELDS + ("m", "inertia")
        arrays = {k: np.ascontiguousarray(np.concatenate([getattr(c, k) for c in cells])) for k in names}
        counts = [len(c) for c in cells]
        offsets = np.concatenate(([0], np.cumsum(counts))).astype(np.int64)
        return cls(arrays=arrays, offsets=offsets,
                   boxes=np.array([c.box for c in cells], dtype=float),
                   periodic=np.array([c.periodic for c in cells], dtype=np.uint8))

    def __getattr__(self, name):
        arrays = self.__dict__.get("arrays")
        if arrays is not None and name in arrays:
            return arrays[name]
        raise AttributeError(name)

    @property
    def ncells(self) -> int:
        return len(self.offsets) - 1

    @property
    def nfloes(self) -> int:
        return int(self.offsets[-1])

    @property
    def counts(self) -> np.ndarray:
        return np.diff(self.offsets)

    @property
    def cell_index(self) -> np.ndarray:
        """Owning cell of every floe."""
        return np.repeat(np.arange(self.ncells), self.counts)

    @property
    def areas(self) -> np.ndarray:
        b = self.boxes
        return (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])

    def cell(self, c: int) -> DemCell:
        s, e = int(self.offsets[c]), int(self.offsets[c + 1])
        a = self.arrays
        return DemCell(**{k: a[k][s:e] for k in STATE_FIELDS + ("m", "inertia")},
                       box=tuple(float(v) for v in self.boxes[c]),
                       periodic=(bool(self.periodic[c, 0]), bool(self.periodic[c, 1])))

    def refresh_mass(self, params: PhysParams, lo: int = 0, hi: int | None = None):
        s, e = self._floe_range(lo, hi)
        r = self.arrays["r"][s:e]
        m = mass_of_radius(r, params.rho_ice)
        self.arrays["m"][s:e] = m
        self.arrays["inertia"][s:e] = m * r * r

    def _floe_range(self, lo, hi):
        hi = self.ncells if hi is None else hi
        return int(self.offsets[lo]), int(self.offsets[hi])

    def step(self, ocean: OceanField, params: PhysParams, dt: float, lo: int = 0, hi: int | None = None,
             acc: np.ndarray | None = None, strict: bool = True, semi_implicit: bool = False):
        """Advance cells ``lo:hi`` by one fine step in place.

        ``acc`` (shape ``(hi - lo, 6)``) receives per-cell sums of
        vx, vy, omega and of the drag force/torque, all at the pre-step state.
        """
        hi = self.ncells if hi is None else hi
        s, e = self._floe_range(lo, hi)
        a = self.arrays
        sl = slice(s, e)
        x, y = a["x"][sl], a["y"][sl]
        uox, uoy = ocean.velocity(x, y)
        curl = ocean.curl_z(x, y)
        n = e - s
        uox = np.ascontiguousarray(np.broadcast_to(uox, (n,)), dtype=float)
        uoy = np.ascontiguousarray(np.broadcast_to(uoy, (n,)), dtype=float)
        curl = np.ascontiguousarray(np.broadcast_to(curl, (n,)), dtype=float)
        offsets = np.ascontiguousarray(self.offsets[lo:hi + 1] - s)
        status, ea, eb = kernels.step_cells(
            x, y, a["theta"][sl], a["vx"][sl], a["vy"][sl], a["omega"][sl],
            a["r"][sl], a["m"][sl], a["inertia"][sl], uox, uoy, curl,
            offsets, np.ascontiguousarray(self.boxes[lo:hi]), np.ascontiguousarray(self.periodic[lo:hi]),
            params.E, params.G, params.mu, params.drag_coeff, params.rho_o, dt,
            strict, semi_implicit, acc,
        )
        if status:
            _raise_status(status, ea, eb, s, lo, self.offsets)


def _raise_status(status, a, b, floe_base, cell_base, offsets):
    if status == kernels.BOX_TOO_SMALL:
        raise ConfigurationError(
            f"cell {cell_base + a}: periodic box smaller than 4 r_max (minimum image ambiguous)")
    if status == kernels.ENGULFED:
        raise DegenerateContactError(
            f"floes {floe_base + a} and {floe_base + b} engulfed (d <= |r_l - r_j|)",
            l=floe_base + a, j=floe_base + b)
    if status == kernels.NONFINITE:
        floe = floe_base + a
        cell = int(np.searchsorted(offsets, floe, side="right") - 1)
        raise DivergenceError("non-finite floe state", floe=floe, cell=cell)
    if status == kernels.TOO_MANY_PAIRS:
        raise ConfigurationError(f"cell {cell_base + a}: contact pair buffer exhausted")
    raise MsdemError(f"kernel failure (status {status})")


# --- single-cell operations -------------------------------------------------

def neighbor_pairs(cell: DemCell) -> list[ContactPair]:
    """All overlapping pairs, canonical ``l < j`` order, minimum image aware."""
    status, ls, js = kernels.find_pairs(
        np.ascontiguousarray(cell.x), np.ascontiguousarray(cell.y), np.ascontiguousarray(cell.r),
        cell.box, cell.periodic)
    if status:
        _raise_status(status, 0, -1, 0, 0, np.array([0, len(cell)]))
    out = []
    for l, j in zip(ls.tolist(), js.tolist()):
        dx, dy = separation(cell, l, j)
        d = math.sqrt(dx * dx + dy * dy)
        n_hat = (dx / d, dy / d) if d > 0 else (1.0, 0.0)
        out.append(ContactPair(l, j, d, n_hat, (-n_hat[1], n_hat[0]), d - (cell.r[l] + cell.r[j])))
    return out


def separation(cell: DemCell, l: int, j: int) -> tuple[float, float]:
    """Minimum-image vector from floe j to floe l."""
    x0, y0, x1, y1 = cell.box
    dx = float(cell.x[l] - cell.x[j])
    dy = float(cell.y[l] - cell.y[j])
    if cell.periodic[0]:
        lx = x1 - x0
        dx = dx - lx if dx > 0.5 * lx else dx + lx if dx < -0.5 * lx else dx
    if cell.periodic[1]:
        ly = y1 - y0
        dy = dy - ly if dy > 0.5 * ly else dy + ly if dy < -0.5 * ly else dy
    return dx, dy


def chord_length(pair: ContactPair, r_l: float, r_j: float, strict: bool = True) -> float:
    """Chord through the two intersection points of the floe outlines."""
    d = pair.d
    if d <= abs(r_l - r_j):
        if strict or d == 0:
            raise DegenerateContactError(
                f"engulfed contact: d={d} <= |{r_l} - {r_j}|", l=pair.l, j=pair.j)
        return 2.0 * min(r_l, r_j)
    a = (d * d + r_l * r_l - r_j * r_j) / (2.0 * d)
    return 2.0 * math.sqrt(max(r_l * r_l - a * a, 0.0))


def contact_forces(pair: ContactPair, cell: DemCell, params: PhysParams, strict: bool = True):
    """Forces and torques of one contact.

    Returns ``(f_n_l, f_t_l, torque_l, torque_j)``; the forces on j are the
    exact negations of the forces on l.
    """
    l, j = pair.l, pair.j
    rl, rj = float(cell.r[l]), float(cell.r[j])
    c = chord_length(pair, rl, rj, strict=strict)
    nx, ny = pair.n_hat
    tx, ty = pair.t_hat
    fn = c * params.E * (-pair.delta)
    al = 0.5 * (pair.d + rl - rj)
    aj = 0.5 * (pair.d - rl + rj)
    # velocity of each floe's material point at the common contact point
    wl, wj = float(cell.omega[l]), float(cell.omega[j])
    vlx = cell.vx[l] + wl * (al * ny)
    vly = cell.vy[l] - wl * (al * nx)
    vjx = cell.vx[j] - wj * (aj * ny)
    vjy = cell.vy[j] + wj * (aj * nx)
    vt = (vjx - vlx) * tx + (vjy - vly) * ty
    ft = c * params.G * vt
    cap = params.mu * fn
    if abs(ft) > cap:
        ft = math.copysign(cap, ft)
    return (fn * nx, fn * ny), (float(ft * tx), float(ft * ty)), float(-al * ft), float(-aj * ft)


def drag_force(floe: Floe, ocean: OceanField, params: PhysParams) -> tuple[float, float]:
    ux, uy = ocean.velocity(np.array(floe.x), np.array(floe.y))
    rx, ry = float(ux) - floe.vx, float(uy) - floe.vy
    s = math.sqrt(rx * rx + ry * ry)
    alpha = params.drag_coeff * params.rho_o * math.pi * floe.r * floe.r
    return alpha * rx * s, alpha * ry * s


def drag_torque(floe: Floe, ocean: OceanField, params: PhysParams) -> float:
    rw = 0.5 * float(ocean.curl_z(np.array(floe.x), np.array(floe.y))) - floe.omega
    beta = params.drag_coeff * params.rho_o * math.pi * floe.r ** 4
    return beta * rw * abs(rw)


def step_dem(cell: DemCell, ocean: OceanField, params: PhysParams, dt: float,
             strict: bool = True, semi_implicit: bool = False) -> DemCell:
    """One Euler step of a single local DEM (in place; the cell is returned)."""
    if not dt > 0:
        raise ConfigurationError(f"dt must be positive, got {dt}")
    cell.as_batch().step(ocean, params, dt, strict=strict, semi_implicit=semi_implicit)
    return cell
