"""Domain types shared by the DEM, continuum and coupling layers.

All quantities are nondimensional. Floes are discs of unit thickness, so a
floe's mass is ``rho_ice * pi * r**2`` and its moment of inertia is
``m * r**2``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .errors import ConfigurationError, OutOfDomainError

VectorField = Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]
ScalarField = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class PhysParams:
    """Material and drag constants.

    Defaults are nondimensional choices of this package; they are recorded in
    every run manifest.
    """

    rho_ice: float = 1.0
    d_o: float = 1.0
    rho_o: float = 1.0
    E: float = 1.0e4
    G: float = 1.0
    mu: float = 0.2
    drag: bool = True

    def __post_init__(self):
        for name in ("rho_ice", "d_o", "rho_o", "E", "G"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ConfigurationError(f"{name} must be positive and finite, got {value!r}")
        if not (self.mu >= 0 and math.isfinite(self.mu)):
            raise ConfigurationError(f"mu must be >= 0, got {self.mu!r}")

    @property
    def drag_coeff(self) -> float:
        """``d_o`` as seen by the integrator; zero when drag is switched off."""
        return self.d_o if self.drag else 0.0

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class Floe:
    r: float
    x: float
    y: float
    theta: float = 0.0
    vx: float = 0.0
    vy: float = 0.0
    omega: float = 0.0

    def __post_init__(self):
        if not self.r > 0:
            raise ConfigurationError(f"floe radius must be positive, got {self.r!r}")

    def mass(self, params: PhysParams) -> float:
        return floe_mass(self, params)

    def inertia(self, params: PhysParams) -> float:
        return floe_mass(self, params) * self.r * self.r


def floe_mass(floe: Floe, params: PhysParams) -> float:
    return params.rho_ice * math.pi * floe.r * floe.r


def mass_of_radius(r, rho_ice: float):
    """Vectorised mass law, used by the engines for whole floe arrays."""
    return rho_ice * np.pi * r * r


@dataclass(frozen=True)
class OceanField:
    """Known ocean surface velocity and the z-component of its curl.

    Both callables take numpy arrays ``(x, y)`` and must broadcast.
    """

    velocity: VectorField
    curl_z: ScalarField
    name: str = "ocean"

    def fd_curl(self, x, y, h: float = 1e-5):
        """Central finite-difference curl, used to check ``curl_z``."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        _, uy_p = self.velocity(x + h, y)
        _, uy_m = self.velocity(x - h, y)
        ux_p, _ = self.velocity(x, y + h)
        ux_m, _ = self.velocity(x, y - h)
        return (uy_p - uy_m) / (2 * h) - (ux_p - ux_m) / (2 * h)


@dataclass(frozen=True)
class CoarseGrid:
    x0: float
    x1: float
    y0: float
    y1: float
    nx: int
    ny: int

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ConfigurationError(f"grid needs nx, ny >= 1, got {self.nx}x{self.ny}")
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise ConfigurationError("grid domain must have positive extent")

    @property
    def hx(self) -> float:
        return (self.x1 - self.x0) / self.nx

    @property
    def hy(self) -> float:
        return (self.y1 - self.y0) / self.ny

    @property
    def dX(self) -> float:
        """Cell diagonal; the length scale used in the CFL bound."""
        return math.hypot(self.hx, self.hy)

    @property
    def cell_area(self) -> float:
        return self.hx * self.hy

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def ncells(self) -> int:
        return self.nx * self.ny

    @property
    def lx(self) -> float:
        return self.x1 - self.x0

    @property
    def ly(self) -> float:
        return self.y1 - self.y0

    def cell_box(self, i: int, j: int) -> tuple[float, float, float, float]:
        """Rectangle ``(x0, y0, x1, y1)`` of cell ``(i, j)``."""
        return (
            self.x0 + i * self.hx,
            self.y0 + j * self.hy,
            self.x0 + (i + 1) * self.hx,
            self.y0 + (j + 1) * self.hy,
        )

    def cell_centers(self):
        xc = self.x0 + (np.arange(self.nx) + 0.5) * self.hx
        yc = self.y0 + (np.arange(self.ny) + 0.5) * self.hy
        return np.meshgrid(xc, yc, indexing="ij")

    def wrap(self, x, y, periodic_x: bool = True, periodic_y: bool = True):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if periodic_x:
            x = self.x0 + np.mod(x - self.x0, self.lx)
        if periodic_y:
            y = self.y0 + np.mod(y - self.y0, self.ly)
        return x, y

    def cells_of_points(self, x, y):
        """Vectorised :func:`cell_of_point` without the domain check."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        i = _edge_index(x, self.x0, self.hx, self.nx)
        j = _edge_index(y, self.y0, self.hy, self.ny)
        return i, j

    def to_dict(self):
        return asdict(self)

    @classmethod
    def parse(cls, spec: str, domain=(0.0, 4.0, 0.0, 2.0)) -> "CoarseGrid":
        """Build a grid from a string like ``"48x24"``."""
        try:
            nx, ny = (int(p) for p in spec.lower().split("x"))
        except ValueError:
            raise ConfigurationError(f"grid must look like 48x24, got {spec!r}") from None
        x0, x1, y0, y1 = domain
        return cls(x0, x1, y0, y1, nx, ny)


def _edge_index(x, x0, h, n):
    # floor of the quotient can land one off near an edge; edges are
    # re-derived exactly as cell_box does (x0 + i*h) before the tie-break.
    i = np.floor((x - x0) / h).astype(np.int64)
    i = np.where(x >= x0 + (i + 1) * h, i + 1, i)
    i = np.where(x < x0 + i * h, i - 1, i)
    return np.clip(i, 0, n - 1)


def cell_of_point(grid: CoarseGrid, x: float, y: float, wrap: bool = False) -> tuple[int, int]:
    """Index of the coarse cell containing ``(x, y)``.

    Points on an interior edge belong to the higher-index cell; the far
    domain edges are clamped into the last cell. With ``wrap=True`` the point
    is first mapped into the domain periodically.
    """
    if wrap:
        x, y = grid.wrap(x, y)
        x, y = float(x), float(y)
    if not (grid.x0 <= x <= grid.x1 and grid.y0 <= y <= grid.y1):
        raise OutOfDomainError(f"point ({x}, {y}) outside [{grid.x0},{grid.x1}]x[{grid.y0},{grid.y1}]")
    i, j = grid.cells_of_points(x, y)
    return int(i), int(j)
