"""Two-way particle/continuum coupling (the msDEM driver).

Each coarse cell owns a doubly-periodic local DEM with a fixed set of floes.
Time is split into coarse windows of ``N0`` fine steps. During a window the
local DEMs step independently; at the window boundary their statistics
(mean velocity, drag sums) freeze the coefficients of the moment equations,
the continuum is advanced by one coarse step, and during the following window
every cell is nudged, every ``n_t`` fine steps, toward the continuum values
so that it matches them exactly at the window end.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .continuum import BoundaryCondition, ContinuumState, solve_coarse_step
from .core import CoarseGrid, OceanField, PhysParams
from .dem import CellBatch, DemCell
from .errors import ConfigurationError, DegenerateCellError, MsdemError

log = logging.getLogger(__name__)

DEFAULT_R_MIN = 1e-6
SNAPSHOT_FIELDS = ("r", "x", "y", "theta", "vx", "vy", "omega")


@dataclass(frozen=True)
class CouplingSchedule:
    dt: float = 1e-4
    dT: float = 0.01
    n_t: int = 10
    N1: int = 1
    T: float = 0.0

    def __post_init__(self):
        if not (self.dt > 0 and self.dT > 0):
            raise ConfigurationError("dt and dT must be positive")
        ratio = self.dT / self.dt
        if abs(ratio - round(ratio)) > 1e-9 * ratio or round(ratio) < 1:
            raise ConfigurationError(f"dT/dt must be a positive integer, got {ratio}")
        if self.n_t < 1 or self.N0 % self.n_t:
            raise ConfigurationError(f"n_t={self.n_t} must divide N0={self.N0}")
        if self.N1 < 1:
            raise ConfigurationError("N1 must be >= 1")
        if self.T < 0:
            raise ConfigurationError("T must be >= 0")
        windows = self.T / self.dT
        if abs(windows - round(windows)) > 1e-9 * max(windows, 1.0):
            raise ConfigurationError(f"T={self.T} must be a multiple of dT={self.dT}")

    @property
    def N0(self) -> int:
        return int(round(self.dT / self.dt))

    @property
    def substeps(self) -> int:
        """Gradual updates per coarse window."""
        return self.N0 // self.n_t

    @property
    def windows(self) -> int:
        return int(round(self.T / self.dT))

    @property
    def Nt(self) -> int:
        return self.windows * self.N0

    def window_of(self, t: float) -> int:
        k = t / self.dT
        if abs(k - round(k)) > 1e-9 * max(k, 1.0):
            raise ConfigurationError(f"time {t} is not on a coarse step boundary")
        return int(round(k))

    def to_dict(self):
        return {"dt": self.dt, "dT": self.dT, "n_t": self.n_t, "N1": self.N1, "T": self.T,
                "N0": self.N0, "Nt": self.Nt}


@dataclass
class CellStats:
    """Per-cell window statistics (flat arrays over cells)."""

    mean_vx: np.ndarray
    mean_vy: np.ndarray
    mean_w: np.ndarray
    conc: np.ndarray
    drag_x: np.ndarray
    drag_y: np.ndarray
    drag_w: np.ndarray


def cell_concentration(batch: CellBatch) -> np.ndarray:
    """Area fraction of every cell's box covered by its floes."""
    area = np.pi * batch.r * batch.r
    return _cell_sum(batch, area) / batch.areas


def _cell_sum(batch: CellBatch, values: np.ndarray) -> np.ndarray:
    out = np.zeros(batch.ncells)
    np.add.at(out, batch.cell_index, values)
    return out


def accumulate_stats(batch: CellBatch, acc: np.ndarray, nsteps: int) -> CellStats:
    """Turn per-cell window sums from :meth:`CellBatch.step` into statistics.

    ``acc[:, 0:3]`` hold sums of vx, vy, omega over floes and steps;
    ``acc[:, 3:6]`` hold sums of drag force and torque over floes and steps.
    """
    if isinstance(batch, DemCell):
        batch = batch.as_batch()
    counts = batch.counts
    if np.any(counts == 0):
        raise DegenerateCellError(f"cell {int(np.argmin(counts))} has no floes")
    if nsteps < 1:
        raise ConfigurationError("statistics window is empty")
    samples = counts * nsteps
    areas = batch.areas
    return CellStats(
        mean_vx=acc[:, 0] / samples,
        mean_vy=acc[:, 1] / samples,
        mean_w=acc[:, 2] / samples,
        conc=cell_concentration(batch),
        drag_x=acc[:, 3] / nsteps / areas,
        drag_y=acc[:, 4] / nsteps / areas,
        drag_w=acc[:, 5] / nsteps / areas,
    )


def run_window(batch: CellBatch, ocean: OceanField, params: PhysParams, dt: float, nsteps: int,
               lo: int = 0, hi: int | None = None, acc: np.ndarray | None = None,
               on_substep=None, n_t: int = 1, peak: np.ndarray | None = None,
               **step_kw) -> np.ndarray:
    """Step cells ``lo:hi`` for ``nsteps`` fine steps, accumulating statistics.

    ``on_substep(lo, hi, k)`` is called after every ``n_t``-th step with the
    substep number ``k``. ``peak[0]``, if given, tracks the largest |omega|
    seen after any step.
    """
    hi = batch.ncells if hi is None else hi
    if acc is None:
        acc = np.zeros((hi - lo, 6))
    s, e = int(batch.offsets[lo]), int(batch.offsets[hi])
    omega = batch.omega[s:e]
    for step in range(1, nsteps + 1):
        batch.step(ocean, params, dt, lo, hi, acc=acc, **step_kw)
        if on_substep is not None and step % n_t == 0:
            on_substep(lo, hi, step // n_t)
        if peak is not None and e > s:
            peak[0] = max(peak[0], float(np.max(np.abs(omega))))
    return acc


# --- gradual updates --------------------------------------------------------

@dataclass
class WindowSnapshot:
    """Cell state at the start of a coarse window, the anchor of the nudges."""

    r0: np.ndarray
    sum_r0: np.ndarray
    n: np.ndarray
    px0: np.ndarray
    py0: np.ndarray
    pw0: np.ndarray
    conc0: np.ndarray

    @classmethod
    def take(cls, batch: CellBatch) -> "WindowSnapshot":
        if isinstance(batch, DemCell):
            batch = batch.as_batch()
        return cls(
            r0=batch.r.copy(),
            sum_r0=_cell_sum(batch, batch.r),
            n=batch.counts.astype(float),
            px0=_cell_sum(batch, batch.m * batch.vx),
            py0=_cell_sum(batch, batch.m * batch.vy),
            pw0=_cell_sum(batch, batch.inertia * batch.omega),
            conc0=cell_concentration(batch),
        )

    @property
    def rbar0(self) -> np.ndarray:
        return self.sum_r0 / self.n


def target_mean_radius(conc_target, cell, conc_current=None):
    """Mean radius that makes the cell reach ``conc_target`` by uniform scaling.

    Works on a :class:`DemCell` (scalar result) or a :class:`CellBatch`
    (per-cell array).
    """
    single = isinstance(cell, DemCell)
    batch = cell.as_batch() if single else cell
    conc_target = np.asarray(conc_target, dtype=float)
    if np.any(conc_target < 0):
        raise ConfigurationError("target concentration must be >= 0")
    current = cell_concentration(batch) if conc_current is None else np.asarray(conc_current, float)
    if np.any(current <= 0):
        raise DegenerateCellError("cell with zero concentration cannot be rescaled")
    rbar0 = _cell_sum(batch, batch.r) / batch.counts
    out = np.sqrt(conc_target / current) * rbar0
    return float(out[0]) if single else out


def _fraction(k: int, substeps: int) -> float:
    if not 1 <= k <= substeps:
        raise ConfigurationError(f"substep {k} outside 1..{substeps}")
    return k / substeps


def _per_floe(batch: CellBatch, per_cell, lo: int, hi: int):
    return np.repeat(np.asarray(per_cell)[lo:hi], batch.counts[lo:hi])


def gradual_update_radii(cell, snapshot: WindowSnapshot, rbar_target, k: int, substeps: int,
                         params: PhysParams, r_min: float = DEFAULT_R_MIN, lo: int = 0, hi=None):
    """Move radii a fraction ``k/substeps`` of the way from the snapshot to the target.

    Each floe gets its share of ``n (rbar - rbar0)`` in proportion to its
    snapshot radius; masses and inertias follow the new radii.
    """
    batch = cell.as_batch() if isinstance(cell, DemCell) else cell
    hi = batch.ncells if hi is None else hi
    frac = _fraction(k, substeps)
    s, e = int(batch.offsets[lo]), int(batch.offsets[hi])
    rbar_target = np.broadcast_to(np.asarray(rbar_target, float), (batch.ncells,))
    rbar0 = snapshot.rbar0
    gain = _per_floe(batch, snapshot.n * (rbar_target - rbar0) / snapshot.sum_r0, lo, hi)
    r0 = snapshot.r0[s:e]
    new = r0 + gain * r0 * frac
    small = new <= 0
    if small.any():
        log.warning("clamping %d radius/radii to r_min=%g", int(small.sum()), r_min)
        new = np.where(small, r_min, new)
    batch.r[s:e] = new
    batch.refresh_mass(params, lo, hi)
    return cell


def _track(batch, weights, values, start_total, target_total, frac, lo, hi):
    # uniform increment restoring the interpolated cell total
    s, e = int(batch.offsets[lo]), int(batch.offsets[hi])
    w = weights[s:e]
    sub = slice(lo, hi)
    counts = batch.counts[sub]
    cell = np.repeat(np.arange(hi - lo), counts)
    current = np.zeros(hi - lo)
    np.add.at(current, cell, w * values[s:e])
    wsum = np.zeros(hi - lo)
    np.add.at(wsum, cell, w)
    desired = start_total[sub] + (target_total[sub] - start_total[sub]) * frac
    inc = (desired - current) / wsum
    values[s:e] += inc[cell]


def gradual_update_momentum(cell, snapshot: WindowSnapshot, px_target, py_target, k: int,
                            substeps: int, lo: int = 0, hi=None):
    """Shift all velocities of a cell uniformly so that its total momentum sits
    the fraction ``k/substeps`` of the way from the snapshot to the target.

    Targets are cell totals (sum of m v).
    """
    batch = cell.as_batch() if isinstance(cell, DemCell) else cell
    hi = batch.ncells if hi is None else hi
    frac = _fraction(k, substeps)
    n = batch.ncells
    px_target = np.broadcast_to(np.asarray(px_target, float), (n,))
    py_target = np.broadcast_to(np.asarray(py_target, float), (n,))
    _track(batch, batch.m, batch.vx, snapshot.px0, px_target, frac, lo, hi)
    _track(batch, batch.m, batch.vy, snapshot.py0, py_target, frac, lo, hi)
    return cell


def gradual_update_angular(cell, snapshot: WindowSnapshot, pw_target, k: int, substeps: int,
                           lo: int = 0, hi=None):
    batch = cell.as_batch() if isinstance(cell, DemCell) else cell
    hi = batch.ncells if hi is None else hi
    frac = _fraction(k, substeps)
    pw_target = np.broadcast_to(np.asarray(pw_target, float), (batch.ncells,))
    _track(batch, batch.inertia, batch.omega, snapshot.pw0, pw_target, frac, lo, hi)
    return cell


# --- driver -----------------------------------------------------------------

class Setup(Protocol):
    """What :func:`run_msdem` needs from a scenario."""

    ocean: OceanField
    bc: BoundaryCondition
    domain: tuple[float, float, float, float]

    def floes(self) -> dict: ...


@dataclass
class RunResult:
    model: str
    grid: CoarseGrid | None
    times: list
    conc: dict = field(default_factory=dict)
    vx: dict = field(default_factory=dict)
    max_abs_omega: dict = field(default_factory=dict)
    floes: dict = field(default_factory=dict)
    fields: dict = field(default_factory=dict)
    diagnostics: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


def build_cells(floes: dict, grid: CoarseGrid, params: PhysParams) -> CellBatch:
    """Distribute floes over coarse cells by centre; one periodic DEM per cell.

    Cells are ordered ``c = i * ny + j`` to match ``(nx, ny)`` field arrays.
    """
    i, j = grid.cells_of_points(floes["x"], floes["y"])
    owner = i * grid.ny + j
    order = np.argsort(owner, kind="stable")
    counts = np.bincount(owner, minlength=grid.ncells)
    if np.any(counts == 0):
        c = int(np.argmin(counts))
        raise ConfigurationError(f"coarse cell {divmod(c, grid.ny)} contains no floes")
    cells = []
    offsets = np.concatenate(([0], np.cumsum(counts)))
    for c in range(grid.ncells):
        sel = order[offsets[c]:offsets[c + 1]]
        ci, cj = divmod(c, grid.ny)
        cells.append(DemCell.from_arrays(
            r=floes["r"][sel], x=floes["x"][sel], y=floes["y"][sel],
            theta=floes.get("theta", np.zeros_like(floes["r"]))[sel],
            vx=floes["vx"][sel], vy=floes["vy"][sel],
            omega=floes.get("omega", np.zeros_like(floes["r"]))[sel],
            box=grid.cell_box(ci, cj), params=params, periodic=(True, True)))
    return CellBatch.from_cells(cells)


def chunk_bounds(batch: CellBatch, workers: int) -> list[tuple[int, int]]:
    """Contiguous cell ranges with roughly equal floe counts."""
    workers = max(1, min(workers, batch.ncells))
    targets = np.linspace(0, batch.nfloes, workers + 1)
    cuts = np.searchsorted(batch.offsets, targets[1:-1], side="left")
    edges = np.unique(np.concatenate(([0], cuts, [batch.ncells])))
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def _field(grid: CoarseGrid, flat) -> np.ndarray:
    return np.asarray(flat, dtype=float).reshape(grid.nx, grid.ny).copy()


def _wall_mask(grid: CoarseGrid, bc: BoundaryCondition) -> np.ndarray:
    mask = np.zeros(grid.shape, dtype=bool)
    if bc.x_lo == "wall":
        mask[0, :] = True
    if bc.x_hi == "wall":
        mask[-1, :] = True
    if bc.y_lo == "wall":
        mask[:, 0] = True
    if bc.y_hi == "wall":
        mask[:, -1] = True
    return mask


def run_msdem(setup: Setup, grid: CoarseGrid, schedule: CouplingSchedule, params: PhysParams,
              times: Sequence[float] = (), workers: int = 1, strict: bool = True,
              semi_implicit: bool = True, r_min: float = DEFAULT_R_MIN,
              conc_max: float | None = None, on_window=None,
              floe_times: Sequence[float] = ()) -> RunResult:
    """Run the coupled model to ``schedule.T`` and snapshot cell fields at ``times``.

    ``times`` must fall on coarse step boundaries. Floe arrays are copied at
    ``floe_times`` (and always at ``T``). ``on_window(k, batch, state)`` is an
    optional hook called after every coarse window.
    """
    t_start = time.perf_counter()
    times = sorted(set(float(t) for t in times) | {schedule.T})
    want = {schedule.window_of(t): t for t in times}
    want_floes = {schedule.window_of(float(t)): float(t) for t in floe_times}
    want_floes[schedule.windows] = float(schedule.T)
    if any(k > schedule.windows for k in want):
        raise ConfigurationError("snapshot time beyond T")

    batch = build_cells(setup.floes(), grid, params)
    areas = batch.areas
    n_windows = schedule.windows
    J = schedule.substeps
    wall = _wall_mask(grid, setup.bc)
    chunks = chunk_bounds(batch, workers)
    step_kw = {"strict": strict, "semi_implicit": semi_implicit}
    result = RunResult(model="msdem", grid=grid, times=times)
    result.meta = {"cells": batch.ncells, "floes": batch.nfloes, "workers": workers,
                   "chunks": chunks}

    def record(k):
        if k in want:
            t = want[k]
            result.conc[t] = _field(grid, cell_concentration(batch))
            mx = _cell_sum(batch, batch.m * batch.vx)
            result.vx[t] = _field(grid, mx / _cell_sum(batch, batch.m))
            result.fields[t] = {
                "conc": result.conc[t],
                "px": _field(grid, mx / areas),
                "py": _field(grid, _cell_sum(batch, batch.m * batch.vy) / areas),
                "pw": _field(grid, _cell_sum(batch, batch.inertia * batch.omega) / areas),
            }
            result.max_abs_omega[t] = float(np.max(np.abs(batch.omega)))
        if k in want_floes:
            result.floes[want_floes[k]] = {name: batch.arrays[name].copy() for name in SNAPSHOT_FIELDS}

    peaks = np.zeros((len(chunks), 1))

    def window(k, update=None):
        acc = np.zeros((batch.ncells, 6))

        def work(c):
            lo, hi = chunks[c]
            try:
                run_window(batch, setup.ocean, params, schedule.dt, schedule.N0, lo, hi,
                           acc=acc[lo:hi], on_substep=update, n_t=schedule.n_t, peak=peaks[c],
                           **step_kw)
            except MsdemError as exc:
                if hasattr(exc, "coarse_step"):
                    exc.coarse_step = k
                raise
        if len(chunks) == 1:
            work(0)
        else:
            with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
                for fut in [pool.submit(work, c) for c in range(len(chunks))]:
                    fut.result()
        return accumulate_stats(batch, acc, schedule.N0)

    record(0)
    if n_windows == 0:
        result.meta["max_abs_omega_run"] = float(np.max(np.abs(batch.omega), initial=0.0))
        result.timings["total_s"] = time.perf_counter() - t_start
        return result

    # warm-up window, then initialise the continuum from the local DEMs
    stats = window(0)
    state = ContinuumState(
        conc=_field(grid, cell_concentration(batch)),
        px=_field(grid, _cell_sum(batch, batch.m * batch.vx) / areas),
        py=_field(grid, _cell_sum(batch, batch.m * batch.vy) / areas),
        pw=_field(grid, _cell_sum(batch, batch.inertia * batch.omega) / areas),
        vbar_x=np.zeros(grid.shape), vbar_y=np.zeros(grid.shape),
        src_x=np.zeros(grid.shape), src_y=np.zeros(grid.shape), src_w=np.zeros(grid.shape),
    )
    if conc_max is not None:
        state.conc_max = conc_max
    record(1)
    _diagnose(result, 1, schedule, batch, state, grid)

    for k in range(1, n_windows):
        state.vbar_x = np.where(wall, 0.0, _field(grid, stats.mean_vx))
        state.vbar_y = np.where(wall, 0.0, _field(grid, stats.mean_vy))
        state.src_x = _field(grid, stats.drag_x)
        state.src_y = _field(grid, stats.drag_y)
        state.src_w = _field(grid, stats.drag_w)
        try:
            target = solve_coarse_step(state, grid, setup.bc, schedule.dT, schedule.N1)
        except MsdemError as exc:
            raise type(exc)(f"{exc} (coarse step {k})") from exc

        snap = WindowSnapshot.take(batch)
        rbar_t = target_mean_radius(target.conc.ravel(), batch, conc_current=snap.conc0)
        px_t = target.px.ravel() * areas
        py_t = target.py.ravel() * areas
        pw_t = target.pw.ravel() * areas

        def update(lo, hi, sub):
            gradual_update_radii(batch, snap, rbar_t, sub, J, params, r_min=r_min, lo=lo, hi=hi)
            gradual_update_momentum(batch, snap, px_t, py_t, sub, J, lo=lo, hi=hi)
            gradual_update_angular(batch, snap, pw_t, sub, J, lo=lo, hi=hi)

        stats = window(k, update)
        state = target
        record(k + 1)
        _diagnose(result, k + 1, schedule, batch, state, grid)
        if on_window is not None:
            on_window(k + 1, batch, state)

    result.final_state = state
    result.meta["max_abs_omega_run"] = max(float(np.max(np.abs(batch.omega))), float(peaks.max()))
    result.timings["total_s"] = time.perf_counter() - t_start
    return result


def _diagnose(result: RunResult, k, schedule, batch, state, grid):
    result.diagnostics.append({
        "step": k,
        "t": k * schedule.dT,
        "total_conc_area": float(np.sum(state.conc) * grid.cell_area),
        "total_px": float(np.sum(state.px) * grid.cell_area),
        "total_py": float(np.sum(state.py) * grid.cell_area),
        "max_abs_omega": float(np.max(np.abs(batch.omega))),
        "max_conc": float(np.max(state.conc)),
        "clamped_cells": int(state.clamped),
    })
