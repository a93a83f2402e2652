"""Benchmark scenarios, the full-DEM reference model, and error measures."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .continuum import BoundaryCondition
from .core import CoarseGrid, OceanField, PhysParams
from .coupling import SNAPSHOT_FIELDS, RunResult
from .dem import CellBatch, DemCell
from .errors import ConfigurationError

log = logging.getLogger(__name__)

DOMAIN = (0.0, 4.0, 0.0, 2.0)
BASE_LATTICE = (480, 240)
SCENARIOS = ("s41", "s42", "s43", "s44")
PI = math.pi


def _const_ocean():
    def vel(x, y):
        return np.full(np.shape(x), 0.3), np.zeros(np.shape(x))
    return OceanField(vel, lambda x, y: np.zeros(np.shape(x)), "uniform 0.3")


def _gather_ocean():
    def vel(x, y):
        return 0.3 - 0.1 * np.cos(PI * x), np.zeros(np.shape(x))
    return OceanField(vel, lambda x, y: np.zeros(np.shape(x)), "0.3 - 0.1 cos(pi x)")


def _compressible_ocean():
    def vel(x, y):
        sx, cx = np.sin(0.1 * PI * x), np.cos(0.1 * PI * x)
        return 0.3 - 0.1 * sx * np.cos(PI * y), 0.05 * cx * np.sin(PI * y)

    def curl(x, y):
        # d/dx uy - d/dy ux
        return -0.105 * PI * np.sin(0.1 * PI * x) * np.sin(PI * y)
    return OceanField(vel, curl, "mild compressible current")


@dataclass(frozen=True)
class ScenarioSpec:
    id: str
    scale: float
    nfx: int
    nfy: int
    r_c: float
    ocean: OceanField = field(compare=False)
    bc: BoundaryCondition
    domain: tuple = DOMAIN

    @property
    def periodic(self) -> tuple[bool, bool]:
        return self.bc.periodic_x, self.bc.periodic_y

    @property
    def nfloes(self) -> int:
        return self.nfx * self.nfy

    def radius(self, x):
        return self.r_c * (0.2 + 0.8 * np.sin(0.25 * PI * x))

    def floes(self) -> dict:
        """Initial lattice: one floe at the centre of every lattice cell."""
        x0, x1, y0, y1 = self.domain
        hx = (x1 - x0) / self.nfx
        hy = (y1 - y0) / self.nfy
        xs = x0 + (np.arange(self.nfx) + 0.5) * hx
        ys = y0 + (np.arange(self.nfy) + 0.5) * hy
        x, y = (a.ravel() for a in np.meshgrid(xs, ys, indexing="ij"))
        vx, vy = self.ocean.velocity(x, y)
        n = len(x)
        return {"r": self.radius(x), "x": x, "y": y,
                "vx": np.array(np.broadcast_to(vx, (n,)), dtype=float),
                "vy": np.array(np.broadcast_to(vy, (n,)), dtype=float),
                "theta": np.zeros(n), "omega": np.zeros(n)}

    def check_grid(self, grid: CoarseGrid):
        """Each coarse cell must hold a whole number of lattice floes."""
        if self.nfx % grid.nx or self.nfy % grid.ny:
            raise ConfigurationError(
                f"grid {grid.nx}x{grid.ny} does not divide the {self.nfx}x{self.nfy} floe lattice")

    def to_dict(self):
        return {"id": self.id, "scale": self.scale, "lattice": [self.nfx, self.nfy],
                "r_c": self.r_c, "ocean": self.ocean.name, "bc": self.bc.to_dict(),
                "domain": list(self.domain)}


def make_scenario(scenario_id: str, scale: float = 0.5) -> ScenarioSpec:
    """Build one of the four benchmark scenarios on a lattice shrunk by ``scale``.

    Any scale that keeps the lattice integral is accepted; 1, 1/2 and 1/4 are
    the usual ones.
    """
    if scenario_id not in SCENARIOS:
        raise ConfigurationError(f"unknown scenario {scenario_id!r}; choose from {', '.join(SCENARIOS)}")
    if not scale > 0:
        raise ConfigurationError(f"scale must be positive, got {scale}")
    nfx, nfy = (BASE_LATTICE[0] * scale, BASE_LATTICE[1] * scale)
    if abs(nfx - round(nfx)) > 1e-9 or abs(nfy - round(nfy)) > 1e-9 or round(nfy) < 1:
        raise ConfigurationError(f"scale {scale} does not give an integer floe lattice")
    nfx, nfy = int(round(nfx)), int(round(nfy))
    # lattice spacing is 2/nfy in both directions; r_c is half of it
    r_c = 1.0 / nfy
    if scenario_id == "s41":
        ocean, bc = _const_ocean(), BoundaryCondition()
    elif scenario_id == "s42":
        ocean, bc = _gather_ocean(), BoundaryCondition()
    elif scenario_id == "s43":
        ocean, bc = _compressible_ocean(), BoundaryCondition()
    else:
        ocean = _const_ocean()
        bc = BoundaryCondition(x_lo="dirichlet0", x_hi="wall", y_lo="periodic", y_hi="periodic")
    return ScenarioSpec(scenario_id, float(scale), nfx, nfy, r_c, ocean, bc)


# --- full DEM reference -----------------------------------------------------

def _apply_walls(batch: CellBatch, spec: ScenarioSpec):
    # velocity clamp for non-periodic x sides; floes are kept inside the domain
    if spec.bc.periodic_x:
        return
    x0, x1 = spec.domain[0], spec.domain[1]
    x, r, vx = batch.x, batch.r, batch.vx
    right = x + r >= x1
    if right.any():
        vx[right] = np.minimum(vx[right], 0.0)
        x[right] = np.minimum(x[right], x1 - r[right])
    left = x - r <= x0
    if left.any():
        vx[left] = np.maximum(vx[left], 0.0)
        x[left] = np.maximum(x[left], x0 + r[left])


def run_full_dem(spec: ScenarioSpec, T: float, params: PhysParams, dt: float = 1e-4,
                 times: Sequence[float] = (), strict: bool = True,
                 semi_implicit: bool = True) -> RunResult:
    """Integrate the whole domain as one DEM and snapshot floes at ``times``."""
    if T < 0:
        raise ConfigurationError("T must be >= 0")
    t_start = time.perf_counter()
    nsteps = int(round(T / dt))
    if abs(nsteps * dt - T) > 1e-9 * max(T, dt):
        raise ConfigurationError(f"T={T} is not a multiple of dt={dt}")
    times = sorted(set(float(t) for t in times) | {float(T)})
    want = {}
    for t in times:
        k = int(round(t / dt))
        if abs(k * dt - t) > 1e-9 * max(t, dt) or k > nsteps:
            raise ConfigurationError(f"snapshot time {t} is not a fine step in [0, T]")
        want[k] = t
    f = spec.floes()
    x0, x1, y0, y1 = spec.domain
    cell = DemCell.from_arrays(r=f["r"], x=f["x"], y=f["y"], vx=f["vx"], vy=f["vy"],
                               theta=f["theta"], omega=f["omega"], box=(x0, y0, x1, y1),
                               params=params, periodic=spec.periodic)
    batch = cell.as_batch()
    result = RunResult(model="dem", grid=None, times=times)

    def record(k):
        if k in want:
            result.floes[want[k]] = {n: batch.arrays[n].copy() for n in SNAPSHOT_FIELDS}
            result.max_abs_omega[want[k]] = float(np.max(np.abs(batch.omega)))

    record(0)
    peak = float(np.max(np.abs(batch.omega)))
    for k in range(1, nsteps + 1):
        batch.step(spec.ocean, params, dt, strict=strict, semi_implicit=semi_implicit)
        _apply_walls(batch, spec)
        peak = max(peak, float(np.max(np.abs(batch.omega))))
        record(k)
    result.timings["total_s"] = time.perf_counter() - t_start
    result.meta = {"floes": batch.nfloes, "steps": nsteps, "max_abs_omega_run": peak}
    return result


def truth_key(spec: ScenarioSpec, T: float, params: PhysParams, dt: float, times, **extra) -> str:
    blob = json.dumps({"scenario": spec.to_dict(), "T": T, "params": params.to_dict(), "dt": dt,
                       "times": sorted(float(t) for t in times), "fields": SNAPSHOT_FIELDS,
                       **extra}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


class TruthSet(dict):
    """Floe snapshots ``{t: arrays}`` plus the run-wide peak |omega|."""

    max_abs_omega_run: float = float("nan")


def cached_truth(spec: ScenarioSpec, T: float, params: PhysParams, dt: float = 1e-4,
                 times: Sequence[float] = (), cache_dir: str | Path | None = None,
                 semi_implicit: bool = True) -> TruthSet:
    """Full-DEM floe snapshots, cached on disk by config hash."""
    times = sorted(set(float(t) for t in times) | {float(T)})
    out = TruthSet()
    path = None
    if cache_dir is not None:
        key = truth_key(spec, T, params, dt, times, semi_implicit=semi_implicit)
        path = Path(cache_dir) / f"truth-{spec.id}-{key}.npz"
        if path.exists():
            with np.load(path) as data:
                # files without the run peak predate it and are rebuilt
                if "meta/max_abs_omega_run" in data.files:
                    for t in times:
                        out[t] = {n: data[f"{t!r}/{n}"] for n in SNAPSHOT_FIELDS}
                    out.max_abs_omega_run = float(data["meta/max_abs_omega_run"])
                    return out
    res = run_full_dem(spec, T, params, dt, times=times, semi_implicit=semi_implicit)
    out.update(res.floes)
    out.max_abs_omega_run = res.meta["max_abs_omega_run"]
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp.npz")
        np.savez(tmp, **{f"{t!r}/{n}": a for t, snap in res.floes.items() for n, a in snap.items()},
                 **{"meta/max_abs_omega_run": np.float64(out.max_abs_omega_run)})
        tmp.replace(path)
    return out


# --- analysis -----------------------------------------------------------------

@dataclass
class ConcField:
    grid: CoarseGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ConfigurationError(f"field shape {self.values.shape} != grid {self.grid.shape}")
        if np.any(self.values < 0):
            raise ConfigurationError("concentration must be non-negative")


def concentration_field(floes: dict, grid: CoarseGrid) -> ConcField:
    """Credit each floe's full area to the cell holding its centre."""
    x, y = grid.wrap(np.asarray(floes["x"], float), np.asarray(floes["y"], float))
    i, j = grid.cells_of_points(x, y)
    r = np.asarray(floes["r"], float)
    area = np.zeros(grid.shape)
    np.add.at(area, (i, j), np.pi * r * r)
    return ConcField(grid, area / grid.cell_area)


def mean_velocity_field(floes: dict, grid: CoarseGrid, rho_ice: float = 1.0) -> np.ndarray:
    """Mass-weighted mean vx per cell (zero in empty cells)."""
    x, y = grid.wrap(np.asarray(floes["x"], float), np.asarray(floes["y"], float))
    i, j = grid.cells_of_points(x, y)
    m = rho_ice * np.pi * np.asarray(floes["r"], float) ** 2
    mv = np.zeros(grid.shape)
    ms = np.zeros(grid.shape)
    np.add.at(mv, (i, j), m * np.asarray(floes["vx"], float))
    np.add.at(ms, (i, j), m)
    return np.divide(mv, ms, out=np.zeros(grid.shape), where=ms > 0)


def l2_error(a, b) -> float:
    """Discrete L2 norm of ``a - b``: sqrt(sum (a-b)^2 hx hy)."""
    if a.grid != b.grid:
        raise ConfigurationError("l2_error needs fields on the same grid")
    d = a.values - b.values
    return float(np.sqrt(np.sum(d * d) * a.grid.hx * a.grid.hy))


def convergence_rate(pairs) -> float:
    """Least-squares slope of log(error) against log(dX)."""
    pairs = list(pairs)
    if len(pairs) < 2:
        raise ConfigurationError("need at least two (dX, error) pairs to fit a rate")
    dx = np.array([p[0] for p in pairs], dtype=float)
    err = np.array([p[1] for p in pairs], dtype=float)
    if np.any(dx <= 0) or np.any(err <= 0):
        raise ConfigurationError("convergence fit needs positive dX and errors")
    if np.unique(dx).size < 2:
        raise ConfigurationError("convergence fit needs at least two distinct dX")
    slope, _ = np.polyfit(np.log(dx), np.log(err), 1)
    return float(slope)
