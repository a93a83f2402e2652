from dataclasses import dataclass

import numpy as np
import pytest

from msdem.continuum import BoundaryCondition
from msdem.core import CoarseGrid, OceanField, PhysParams
from msdem.coupling import (CellBatch, CouplingSchedule, WindowSnapshot, accumulate_stats, build_cells,
                            cell_concentration, chunk_bounds, gradual_update_angular,
                            gradual_update_momentum, gradual_update_radii, run_msdem, run_window,
                            target_mean_radius)
from msdem.dem import DemCell
from msdem.errors import ConfigurationError, DegenerateCellError
from msdem.harness import concentration_field, make_scenario, run_full_dem

from conftest import uniform_ocean_field

BIG = (0.0, 0.0, 100.0, 100.0)


def loose_cell(r, params=None, **kw):
    r = np.asarray(r, float)
    x = 10.0 + 10.0 * np.arange(len(r))
    return DemCell.from_arrays(r=r, x=x, y=np.full(len(r), 50.0), box=BIG,
                               params=params or PhysParams(), **kw)


# --- schedule -------------------------------------------------------------------

def test_schedule_derived_counts():
    s = CouplingSchedule(dt=1e-4, dT=0.01, n_t=10, T=0.2)
    assert (s.N0, s.substeps, s.windows, s.Nt) == (100, 10, 20, 2000)
    assert s.window_of(0.06) == 6


@pytest.mark.parametrize("kw", [dict(dT=0.01005), dict(n_t=7), dict(N1=0), dict(T=0.015), dict(dt=0.0)])
def test_schedule_rejects_inconsistent_values(kw):
    with pytest.raises(ConfigurationError):
        CouplingSchedule(**{"T": 0.2, **kw})


def test_window_of_off_boundary():
    with pytest.raises(ConfigurationError):
        CouplingSchedule(T=0.2).window_of(0.015)


# --- statistics -----------------------------------------------------------------

def test_cell_concentration_example():
    cell = DemCell.from_arrays(r=[0.1, 0.2], x=[0.25, 0.75], y=[0.5, 0.5], box=(0, 0, 1, 1),
                               params=PhysParams())
    assert cell_concentration(cell.as_batch())[0] == pytest.approx(np.pi * 0.05)


def test_window_statistics_of_free_drift(uniform_ocean, params):
    cell = loose_cell([1.0, 0.5], params, vx=[0.3, 0.3], omega=[0.0, 0.0])
    batch = cell.as_batch()
    acc = run_window(batch, uniform_ocean, params, 1e-3, 10)
    st = accumulate_stats(batch, acc, 10)
    assert st.mean_vx[0] == pytest.approx(0.3)
    assert st.mean_vy[0] == 0.0
    assert st.drag_x[0] == 0.0


def test_window_drag_is_area_normalised(still_ocean, params):
    cell = loose_cell([1.0], params, vx=[-1.0])
    batch = cell.as_batch()
    acc = run_window(batch, still_ocean, params, 1e-6, 1)
    st = accumulate_stats(batch, acc, 1)
    assert st.drag_x[0] == pytest.approx(np.pi / 100.0 ** 2)


def test_empty_window_or_cell_is_rejected(params):
    batch = loose_cell([1.0], params).as_batch()
    with pytest.raises(ConfigurationError):
        accumulate_stats(batch, np.zeros((1, 6)), 0)
    empty = CellBatch.from_cells([loose_cell([1.0], params), DemCell.from_arrays(
        r=[], x=[], y=[], box=BIG, params=params)])
    with pytest.raises(DegenerateCellError):
        accumulate_stats(empty, np.zeros((2, 6)), 1)


# --- target radius and gradual updates --------------------------------------------

def test_target_radius_examples():
    cell = loose_cell([1.0, 3.0])
    c = cell_concentration(cell.as_batch())[0]
    assert target_mean_radius(c, cell) == pytest.approx(2.0)
    assert target_mean_radius(4 * c, cell) == pytest.approx(4.0)
    assert target_mean_radius(0.0, cell) == 0.0
    with pytest.raises(ConfigurationError):
        target_mean_radius(-0.1, cell)


def test_radius_update_worked_example(params):
    cell = loose_cell([1.0, 3.0], params)
    snap = WindowSnapshot.take(cell)
    gradual_update_radii(cell, snap, 2.4, 10, 10, params)
    assert cell.r == pytest.approx([1.2, 3.6], rel=1e-15)
    assert cell.r.mean() - 2.0 == pytest.approx(0.4, rel=1e-14)
    assert cell.m == pytest.approx(np.pi * cell.r ** 2)
    assert cell.inertia == pytest.approx(cell.m * cell.r ** 2)


def test_radius_update_interpolates_from_snapshot(params):
    cell = loose_cell([1.0, 3.0], params)
    snap = WindowSnapshot.take(cell)
    seen = []
    for k in range(1, 11):
        gradual_update_radii(cell, snap, 2.4, k, 10, params)
        seen.append(cell.r.copy())
    steps = np.diff(np.array(seen), axis=0)
    assert np.all(steps > 0)
    assert seen[4] == pytest.approx([1.1, 3.3])


def test_radius_update_fixed_when_on_target(params):
    cell = loose_cell([0.5, 0.7, 0.9], params)
    snap = WindowSnapshot.take(cell)
    for k in range(1, 6):
        gradual_update_radii(cell, snap, snap.rbar0, k, 5, params)
        assert list(cell.r) == [0.5, 0.7, 0.9]


def test_single_floe_hits_target_radius(params):
    cell = loose_cell([0.37], params)
    snap = WindowSnapshot.take(cell)
    gradual_update_radii(cell, snap, 0.52, 4, 4, params)
    assert cell.r[0] == pytest.approx(0.52, rel=1e-15)


def test_negative_radius_clamped(params, caplog):
    cell = loose_cell([0.1, 1.0], params)
    snap = WindowSnapshot.take(cell)
    with caplog.at_level("WARNING"):
        gradual_update_radii(cell, snap, 0.0, 1, 1, params, r_min=1e-6)
    assert list(cell.r) == [1e-6, 1e-6]
    assert "r_min" in caplog.text


def test_substep_index_checked(params):
    cell = loose_cell([1.0], params)
    snap = WindowSnapshot.take(cell)
    with pytest.raises(ConfigurationError):
        gradual_update_radii(cell, snap, 1.0, 0, 10, params)
    with pytest.raises(ConfigurationError):
        gradual_update_momentum(cell, snap, 0.0, 0.0, 11, 10)


def test_momentum_update_equal_masses(params):
    cell = loose_cell([1.0, 1.0], params, vx=[0.1, -0.3], vy=[0.2, 0.0])
    snap = WindowSnapshot.take(cell)
    m = cell.m[0]
    gradual_update_momentum(cell, snap, snap.px0 + 2 * m * 0.2, snap.py0, 10, 10)
    assert cell.vx == pytest.approx([0.3, -0.1], rel=1e-14)
    assert cell.vy == pytest.approx([0.2, 0.0], abs=1e-15)


def test_momentum_update_keeps_relative_velocity(params):
    cell = loose_cell([0.5, 1.0, 2.0], params, vx=[0.1, -0.3, 0.7])
    snap = WindowSnapshot.take(cell)
    rel = np.diff(cell.vx)
    for k in range(1, 5):
        gradual_update_momentum(cell, snap, snap.px0 + 3.0, snap.py0 - 1.0, k, 4)
        np.testing.assert_allclose(np.diff(cell.vx), rel, atol=1e-14)


def test_angular_update_mixed_inertia(params):
    cell = loose_cell([0.5, 1.0, 2.0], params, omega=[1.0, 0.0, -1.0])
    snap = WindowSnapshot.take(cell)
    before = cell.omega.copy()
    gradual_update_angular(cell, snap, snap.pw0 + 5.0, 2, 4)
    d = cell.omega - before
    expected = 5.0 / np.sum(cell.inertia) * 0.5
    np.testing.assert_allclose(d, expected, rtol=1e-13)


def test_angular_single_floe_hits_target(params):
    cell = loose_cell([0.8], params, omega=[0.3])
    snap = WindowSnapshot.take(cell)
    gradual_update_angular(cell, snap, 2.0, 3, 3)
    assert cell.omega[0] == pytest.approx(2.0 / cell.inertia[0], rel=1e-15)


def _two_cell_batch(params):
    rng = np.random.default_rng(0)
    cells = []
    for c in range(2):
        n = 5 + c
        cells.append(DemCell.from_arrays(
            r=rng.uniform(0.2, 0.5, n), x=c * 100 + 10 + 10.0 * np.arange(n), y=np.full(n, 50.0),
            vx=rng.normal(size=n), vy=rng.normal(size=n), omega=rng.normal(size=n),
            box=(c * 100.0, 0.0, c * 100.0 + 100.0, 100.0), params=params))
    return CellBatch.from_cells(cells)


def test_exact_target_attainment(params):
    batch = _two_cell_batch(params)
    snap = WindowSnapshot.take(batch)
    conc_t = snap.conc0 * np.array([1.3, 0.8])
    rbar = target_mean_radius(conc_t, batch)
    px_t, py_t, pw_t = np.array([2.0, -1.0]), np.array([0.5, 0.25]), np.array([-3.0, 4.0])
    J = 10
    for k in range(1, J + 1):
        gradual_update_radii(batch, snap, rbar, k, J, params)
        gradual_update_momentum(batch, snap, px_t, py_t, k, J)
        gradual_update_angular(batch, snap, pw_t, k, J)
    idx = batch.cell_index
    tot = lambda v: np.bincount(idx, v, minlength=2)  # noqa: E731
    np.testing.assert_allclose(tot(batch.r) / batch.counts, rbar, rtol=1e-12)
    np.testing.assert_allclose(cell_concentration(batch), conc_t, rtol=1e-12)
    np.testing.assert_allclose(tot(batch.m * batch.vx), px_t, rtol=1e-12)
    np.testing.assert_allclose(tot(batch.m * batch.vy), py_t, rtol=1e-12)
    np.testing.assert_allclose(tot(batch.inertia * batch.omega), pw_t, rtol=1e-12)


def test_updates_respect_cell_range(params):
    batch = _two_cell_batch(params)
    snap = WindowSnapshot.take(batch)
    before = batch.vx.copy()
    gradual_update_momentum(batch, snap, snap.px0 + 1.0, snap.py0, 1, 1, lo=1, hi=2)
    n0 = batch.counts[0]
    np.testing.assert_array_equal(batch.vx[:n0], before[:n0])
    assert np.all(batch.vx[n0:] != before[n0:])


# --- driver ---------------------------------------------------------------------

@dataclass
class Lattice:
    ocean: OceanField
    bc: BoundaryCondition
    domain: tuple = (0.0, 4.0, 0.0, 2.0)
    n: int = 24
    r: float = 0.03
    v: float = 0.3

    def floes(self):
        xs = (np.arange(2 * self.n) + 0.5) * 4.0 / (2 * self.n)
        ys = (np.arange(self.n) + 0.5) * 2.0 / self.n
        x, y = (a.ravel() for a in np.meshgrid(xs, ys, indexing="ij"))
        k = len(x)
        return {"r": np.full(k, self.r), "x": x, "y": y, "vx": np.full(k, self.v),
                "vy": np.zeros(k), "theta": np.zeros(k), "omega": np.zeros(k)}


def test_build_cells_orders_by_cell():
    spec = make_scenario("s41", 0.125)
    g = CoarseGrid(0, 4, 0, 2, 12, 6)
    batch = build_cells(spec.floes(), g, PhysParams())
    assert batch.ncells == 72
    assert set(batch.counts) == {25}
    c = 1 * 6 + 4
    view = batch.cell(c)
    assert np.all((view.x >= g.hx) & (view.x < 2 * g.hx) & (view.y >= 4 * g.hy) & (view.y < 5 * g.hy))


def test_build_cells_rejects_empty_cell():
    spec = make_scenario("s41", 0.125)
    with pytest.raises(ConfigurationError):
        build_cells(spec.floes(), CoarseGrid(0, 4, 0, 2, 120, 60), PhysParams())


def test_chunk_bounds_cover_all_cells():
    spec = make_scenario("s41", 0.125)
    batch = build_cells(spec.floes(), CoarseGrid(0, 4, 0, 2, 12, 6), PhysParams())
    for w in (1, 2, 3, 8, 500):
        chunks = chunk_bounds(batch, w)
        assert chunks[0][0] == 0 and chunks[-1][1] == 72
        assert all(a[1] == b[0] for a, b in zip(chunks, chunks[1:]))
        assert len(chunks) == min(w, 72)


def test_uniform_drift_is_a_fixed_point(params):
    setup = Lattice(uniform_ocean_field(0.3), BoundaryCondition())
    g = CoarseGrid(0, 4, 0, 2, 12, 6)
    res = run_msdem(setup, g, CouplingSchedule(T=0.05), params, times=[0.0, 0.02, 0.05])
    c0 = res.conc[0.0]
    for t in (0.02, 0.05):
        np.testing.assert_allclose(res.conc[t], c0, rtol=1e-10)
        np.testing.assert_allclose(res.vx[t], 0.3, rtol=1e-10)


def test_s41_pattern_advects_right(params):
    spec = make_scenario("s41", 0.25)
    g = CoarseGrid(0, 4, 0, 2, 24, 12)
    res = run_msdem(spec, g, CouplingSchedule(T=0.2, N1=2), params, times=[0.2])
    xc = (np.arange(g.nx) + 0.5) * g.hx

    def mode(c):
        # first Fourier mode of the column means over the 4-periodic x range
        return np.sum(c.mean(axis=1) * np.exp(-0.5j * np.pi * xc))

    z0 = mode(concentration_field(spec.floes(), g).values)
    z1 = mode(res.conc[0.2])
    shift = (-np.angle(z1 / z0) * 2 / np.pi + 2) % 4 - 2
    assert abs(shift - 0.06) <= g.hx / 2
    # LF smears the pattern but must not amplify it
    assert abs(z1) < abs(z0)


def test_one_cell_run_equals_global_dem():
    params = PhysParams(drag=False, mu=0.0)
    spec = make_scenario("s42", 0.125)
    g = CoarseGrid(0, 4, 0, 2, 1, 1)
    sched = CouplingSchedule(T=0.03)
    ms = run_msdem(spec, g, sched, params, floe_times=[0.03])
    dem = run_full_dem(spec, 0.03, params, times=[0.03])
    a, b = ms.floes[0.03], dem.floes[0.03]
    for name in ("r", "x", "y", "vx", "vy", "omega"):
        np.testing.assert_allclose(a[name], b[name], rtol=1e-10, atol=1e-12, err_msg=name)
    assert np.any(a["vx"] != spec.floes()["vx"])


def test_run_is_bit_identical_across_workers(params):
    spec = make_scenario("s42", 0.125)
    g = CoarseGrid(0, 4, 0, 2, 12, 6)
    sched = CouplingSchedule(T=0.03, N1=2)
    runs = [run_msdem(spec, g, sched, params, times=[0.03], workers=w, floe_times=[0.03])
            for w in (1, 2, 8, 1)]
    base = runs[0]
    for other in runs[1:]:
        assert np.array_equal(base.conc[0.03], other.conc[0.03])
        for name, arr in base.floes[0.03].items():
            assert np.array_equal(arr, other.floes[0.03][name]), name


def test_snapshot_time_must_be_on_boundary(params):
    spec = make_scenario("s41", 0.125)
    g = CoarseGrid(0, 4, 0, 2, 12, 6)
    with pytest.raises(ConfigurationError):
        run_msdem(spec, g, CouplingSchedule(T=0.02), params, times=[0.015])
    with pytest.raises(ConfigurationError):
        run_msdem(spec, g, CouplingSchedule(T=0.02), params, times=[0.05])


def test_diagnostics_and_hook(params):
    spec = make_scenario("s41", 0.125)
    g = CoarseGrid(0, 4, 0, 2, 12, 6)
    seen = []
    res = run_msdem(spec, g, CouplingSchedule(T=0.03), params,
                    on_window=lambda k, batch, state: seen.append(k))
    assert seen == [2, 3]
    assert [d["step"] for d in res.diagnostics] == [1, 2, 3]
    m0 = res.diagnostics[0]["total_conc_area"]
    assert all(d["total_conc_area"] == pytest.approx(m0, rel=1e-12) for d in res.diagnostics)
