"""Coarse-grid moment equations, advanced with a Lax-Friedrichs scheme.

Conserved fields per cell: concentration, momentum density (px, py) and
angular momentum density (pw). Within a coarse step the advecting velocity
``vbar`` and the drag sources come from the local DEMs and are frozen, so
every field obeys the linear conservation law

    dq/dt + div(vbar q) = source

The LF update on a cell uses the four axis neighbours::

    q' = (qE + qW + qN + qS)/4 - tau/(2 hx) (FE - FW) - tau/(2 hy) (GN - GS) + tau S

with F = vbar_x q and G = vbar_y q.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .core import CoarseGrid
from .errors import ConfigurationError, DivergenceError, StabilityError

log = logging.getLogger(__name__)

CONSERVED = ("conc", "px", "py", "pw")
SIDE_KINDS = ("periodic", "dirichlet0", "wall")
DEFAULT_CONC_MAX = 0.91


@dataclass(frozen=True)
class BoundaryCondition:
    """Ghost-cell treatment on each side of the coarse grid.

    ``periodic`` wraps; ``dirichlet0`` uses zero ghost values; ``wall`` mirrors
    the boundary cell with reversed normal velocity, which makes the LF face
    flux through that side vanish.
    """

    x_lo: str = "periodic"
    x_hi: str = "periodic"
    y_lo: str = "periodic"
    y_hi: str = "periodic"

    def __post_init__(self):
        for side in ("x_lo", "x_hi", "y_lo", "y_hi"):
            if getattr(self, side) not in SIDE_KINDS:
                raise ConfigurationError(f"unknown boundary kind {getattr(self, side)!r} on {side}")
        if (self.x_lo == "periodic") != (self.x_hi == "periodic"):
            raise ConfigurationError("x boundary: periodic must be set on both sides")
        if (self.y_lo == "periodic") != (self.y_hi == "periodic"):
            raise ConfigurationError("y boundary: periodic must be set on both sides")

    @property
    def periodic_x(self) -> bool:
        return self.x_lo == "periodic"

    @property
    def periodic_y(self) -> bool:
        return self.y_lo == "periodic"

    @classmethod
    def periodic(cls):
        return cls()

    def to_dict(self):
        return {"x_lo": self.x_lo, "x_hi": self.x_hi, "y_lo": self.y_lo, "y_hi": self.y_hi}


@dataclass
class ContinuumState:
    conc: np.ndarray
    px: np.ndarray
    py: np.ndarray
    pw: np.ndarray
    vbar_x: np.ndarray
    vbar_y: np.ndarray
    src_x: np.ndarray
    src_y: np.ndarray
    src_w: np.ndarray
    conc_max: float = DEFAULT_CONC_MAX
    clamped: int = field(default=0, compare=False)

    @classmethod
    def zeros(cls, grid: CoarseGrid, **fields):
        base = {k: np.zeros(grid.shape) for k in
                ("conc", "px", "py", "pw", "vbar_x", "vbar_y", "src_x", "src_y", "src_w")}
        for k, v in fields.items():
            if k in base:
                base[k] = np.array(np.broadcast_to(v, grid.shape), dtype=float)
            else:
                base[k] = v
        return cls(**base)

    def copy(self) -> "ContinuumState":
        return replace(self, **{k: getattr(self, k).copy() for k in
                                ("conc", "px", "py", "pw", "vbar_x", "vbar_y", "src_x", "src_y", "src_w")})

    def totals(self, grid: CoarseGrid) -> dict:
        a = grid.cell_area
        return {k: float(np.sum(getattr(self, k)) * a) for k in CONSERVED}


def cfl_bound(grid: CoarseGrid, vmax: float, c_max: float = 1.0) -> float:
    """Largest stable coarse step, ``c_max * dX / vmax`` with dX the cell diagonal."""
    if vmax < 0:
        raise ConfigurationError("vmax must be non-negative")
    if vmax == 0:
        return math.inf
    return c_max * grid.dX / vmax


def max_speed(state: ContinuumState) -> float:
    return float(np.max(np.hypot(state.vbar_x, state.vbar_y), initial=0.0))


def _pad(q, vx, vy, bc: BoundaryCondition):
    """Ghost-padded copies of q, vbar_x, vbar_y."""
    qp = np.pad(q, 1)
    vxp = np.pad(vx, 1)
    vyp = np.pad(vy, 1)
    for side, kind in (("x_lo", bc.x_lo), ("x_hi", bc.x_hi)):
        g, b = (0, 1) if side == "x_lo" else (-1, -2)
        if kind == "periodic":
            src = -2 if side == "x_lo" else 1
            qp[g, 1:-1], vxp[g, 1:-1], vyp[g, 1:-1] = qp[src, 1:-1], vxp[src, 1:-1], vyp[src, 1:-1]
        elif kind == "dirichlet0":
            qp[g, 1:-1] = 0.0
            vxp[g, 1:-1], vyp[g, 1:-1] = vxp[b, 1:-1], vyp[b, 1:-1]
        else:
            qp[g, 1:-1] = qp[b, 1:-1]
            vxp[g, 1:-1], vyp[g, 1:-1] = -vxp[b, 1:-1], vyp[b, 1:-1]
    for side, kind in (("y_lo", bc.y_lo), ("y_hi", bc.y_hi)):
        g, b = (0, 1) if side == "y_lo" else (-1, -2)
        if kind == "periodic":
            src = -2 if side == "y_lo" else 1
            qp[1:-1, g], vxp[1:-1, g], vyp[1:-1, g] = qp[1:-1, src], vxp[1:-1, src], vyp[1:-1, src]
        elif kind == "dirichlet0":
            qp[1:-1, g] = 0.0
            vxp[1:-1, g], vyp[1:-1, g] = vxp[1:-1, b], vyp[1:-1, b]
        else:
            qp[1:-1, g] = qp[1:-1, b]
            vxp[1:-1, g], vyp[1:-1, g] = vxp[1:-1, b], -vyp[1:-1, b]
    return qp, vxp, vyp


def lf_field(q, vx, vy, src, grid: CoarseGrid, bc: BoundaryCondition, tau: float):
    """One LF update of a single scalar field."""
    qp, vxp, vyp = _pad(q, vx, vy, bc)
    f = vxp * qp
    g = vyp * qp
    qe, qw = qp[2:, 1:-1], qp[:-2, 1:-1]
    qn, qs = qp[1:-1, 2:], qp[1:-1, :-2]
    out = 0.25 * ((qe + qw) + (qn + qs))
    out -= (tau / (2.0 * grid.hx)) * (f[2:, 1:-1] - f[:-2, 1:-1])
    out -= (tau / (2.0 * grid.hy)) * (g[1:-1, 2:] - g[1:-1, :-2])
    if src is not None:
        out += tau * src
    return out


def lf_substep(state: ContinuumState, grid: CoarseGrid, bc: BoundaryCondition, tau: float) -> ContinuumState:
    """Advance all conserved fields by ``tau``; returns a new state."""
    if not tau > 0:
        raise ConfigurationError(f"substep must be positive, got {tau}")
    vmax = max_speed(state)
    bound = cfl_bound(grid, vmax)
    if tau > bound:
        raise StabilityError(f"substep {tau:g} exceeds CFL bound {bound:g} (max |vbar| = {vmax:g})")
    vx, vy = state.vbar_x, state.vbar_y
    new = state.copy()
    new.conc = lf_field(state.conc, vx, vy, None, grid, bc, tau)
    new.px = lf_field(state.px, vx, vy, state.src_x, grid, bc, tau)
    new.py = lf_field(state.py, vx, vy, state.src_y, grid, bc, tau)
    new.pw = lf_field(state.pw, vx, vy, state.src_w, grid, bc, tau)
    for k in CONSERVED:
        arr = getattr(new, k)
        if not np.all(np.isfinite(arr)):
            bad = np.argwhere(~np.isfinite(arr))[0]
            raise DivergenceError(f"non-finite {k} in coarse cell {tuple(int(b) for b in bad)}")
    low = new.conc < 0.0
    high = new.conc > state.conc_max
    if low.any() or high.any():
        n = int(low.sum() + high.sum())
        log.warning("clamping concentration in %d cell(s) to [0, %g]", n, state.conc_max)
        new.conc = np.clip(new.conc, 0.0, state.conc_max)
        new.clamped = state.clamped + n
    return new


def solve_coarse_step(state: ContinuumState, grid: CoarseGrid, bc: BoundaryCondition,
                      dT: float, N1: int) -> ContinuumState:
    """``N1`` LF substeps of size ``dT / N1`` with frozen coefficients."""
    if N1 < 1:
        raise ConfigurationError(f"N1 must be >= 1, got {N1}")
    tau = dT / N1
    for _ in range(N1):
        state = lf_substep(state, grid, bc, tau)
    return state
