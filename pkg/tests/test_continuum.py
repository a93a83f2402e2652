import math

import numpy as np
import pytest

from msdem.continuum import (BoundaryCondition, ContinuumState, cfl_bound, lf_field, lf_substep,
                             solve_coarse_step)
from msdem.core import CoarseGrid
from msdem.errors import ConfigurationError, DivergenceError, StabilityError

from oracles import lf_reference_1d

PERIODIC = BoundaryCondition.periodic()


def grid(nx=48, ny=24):
    return CoarseGrid(0, 4, 0, 2, nx, ny)


def random_state(g, seed=0, v=0.3, src=True):
    rng = np.random.default_rng(seed)
    s = ContinuumState.zeros(g, conc=rng.uniform(0.2, 0.8, g.shape), px=rng.normal(size=g.shape),
                             py=rng.normal(size=g.shape), pw=rng.normal(size=g.shape),
                             vbar_x=rng.uniform(-v, v, g.shape), vbar_y=rng.uniform(-v, v, g.shape))
    if src:
        s.src_x = rng.normal(size=g.shape)
        s.src_y = rng.normal(size=g.shape)
        s.src_w = rng.normal(size=g.shape)
    return s


def test_cfl_worked_example():
    assert cfl_bound(grid(64, 32), 1.0) == pytest.approx(math.sqrt(2) / 16, abs=1e-12)


def test_cfl_slow_ice_and_resolution():
    g = grid(64, 32)
    assert cfl_bound(g, 0.3) == pytest.approx(math.sqrt(2) / 4.8, abs=1e-12)
    assert cfl_bound(grid(128, 64), 0.3) == pytest.approx(cfl_bound(g, 0.3) / 2, rel=1e-14)


def test_cfl_still_ice_is_unbounded():
    assert cfl_bound(grid(), 0.0) == math.inf
    with pytest.raises(ConfigurationError):
        cfl_bound(grid(), -1.0)


def test_boundary_rejects_half_periodic():
    with pytest.raises(ConfigurationError):
        BoundaryCondition(x_lo="periodic", x_hi="wall")
    with pytest.raises(ConfigurationError):
        BoundaryCondition(x_lo="sticky", x_hi="wall")


def test_uniform_state_is_fixed():
    g = grid()
    s = ContinuumState.zeros(g, conc=0.5, px=0.2, vbar_x=0.3, vbar_y=-0.1)
    out = lf_substep(s, g, PERIODIC, 0.01)
    np.testing.assert_allclose(out.conc, 0.5, rtol=1e-15)
    np.testing.assert_allclose(out.px, 0.2, rtol=1e-15)


def test_substep_does_not_alias_input():
    g = grid(12, 6)
    s = random_state(g)
    before = s.copy()
    lf_substep(s, g, PERIODIC, 0.01)
    for k in ("conc", "px", "py", "pw"):
        np.testing.assert_array_equal(getattr(s, k), getattr(before, k))


def test_periodic_mass_conservation():
    g = grid()
    s = random_state(g, src=False)
    m0 = s.totals(g)["conc"]
    for _ in range(20):
        s = lf_substep(s, g, PERIODIC, 0.01)
        assert s.totals(g)["conc"] == pytest.approx(m0, rel=1e-12)


def test_momentum_budget_matches_source():
    g = grid()
    s = random_state(g)
    tau = 0.01
    for _ in range(5):
        p0 = math.fsum(s.px.ravel()) * g.cell_area
        budget = tau * math.fsum(s.src_x.ravel()) * g.cell_area
        s = lf_substep(s, g, PERIODIC, tau)
        assert math.fsum(s.px.ravel()) * g.cell_area - p0 == pytest.approx(budget, rel=1e-11, abs=1e-13)


def test_max_principle():
    g = grid()
    s = random_state(g, src=False)
    s.vbar_x[:] = 0.5
    s.vbar_y[:] = -0.2
    lo, hi = s.conc.min(), s.conc.max()
    # every stencil weight is non-negative once tau |v| / h <= 1/2 on each axis
    tau = 0.5 * g.hx / 0.5
    for _ in range(50):
        s = lf_substep(s, g, PERIODIC, tau)
        assert s.conc.min() >= lo - 1e-14 and s.conc.max() <= hi + 1e-14


def test_linearity_in_q():
    g = grid(24, 12)
    rng = np.random.default_rng(4)
    q1, q2 = rng.normal(size=(2, *g.shape))
    vx, vy = rng.uniform(-0.3, 0.3, (2, *g.shape))
    a, b = 1.5, -0.25
    lhs = lf_field(a * q1 + b * q2, vx, vy, None, g, PERIODIC, 0.01)
    rhs = a * lf_field(q1, vx, vy, None, g, PERIODIC, 0.01) + b * lf_field(q2, vx, vy, None, g, PERIODIC, 0.01)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-13, atol=1e-14)


def test_square_pulse_against_scalar_reference():
    g = grid(48, 4)
    row = np.zeros(48)
    row[10:16] = 0.6
    s = ContinuumState.zeros(g, conc=np.repeat(row[:, None], 4, axis=1), vbar_x=0.3)
    tau = 0.01
    for _ in range(20):
        s = lf_substep(s, g, PERIODIC, tau)
    ref = lf_reference_1d(row, 0.3, g.hx, tau, 20)
    np.testing.assert_allclose(s.conc[:, 0], ref, rtol=1e-12, atol=1e-15)
    xc = (np.arange(48) + 0.5) * g.hx
    shift = np.sum(xc * s.conc[:, 0]) / np.sum(s.conc[:, 0]) - np.sum(xc * row) / np.sum(row)
    assert abs(shift - 0.06) <= g.hx
    assert s.conc.max() < 0.6


def test_cfl_violation_refuses_to_step():
    g = grid(64, 32)
    s = ContinuumState.zeros(g, conc=0.5, vbar_x=1.0)
    with pytest.raises(StabilityError):
        lf_substep(s, g, PERIODIC, 0.1)
    with pytest.raises(ConfigurationError):
        lf_substep(s, g, PERIODIC, 0.0)


def test_nonfinite_is_divergence():
    g = grid(12, 6)
    s = ContinuumState.zeros(g, conc=0.5)
    s.px[3, 3] = np.nan
    with pytest.raises(DivergenceError):
        lf_substep(s, g, PERIODIC, 0.01)


def test_concentration_clamped_with_warning(caplog):
    g = grid(12, 6)
    s = ContinuumState.zeros(g, conc=0.5, conc_max=0.55)
    s.conc[4, 3] = 0.9
    with caplog.at_level("WARNING"):
        out = lf_substep(s, g, PERIODIC, 0.01)
    assert out.conc.max() <= 0.55
    assert out.clamped > 0
    assert "clamping" in caplog.text


def test_n1_one_is_one_substep():
    g = grid(24, 12)
    s = random_state(g)
    a = solve_coarse_step(s, g, PERIODIC, 0.01, 1)
    b = lf_substep(s, g, PERIODIC, 0.01)
    np.testing.assert_array_equal(a.conc, b.conc)
    np.testing.assert_array_equal(a.px, b.px)


def test_n1_four_chains_substeps():
    g = grid(24, 12)
    s = random_state(g)
    a = solve_coarse_step(s, g, PERIODIC, 0.01, 4)
    b = s
    for _ in range(4):
        b = lf_substep(b, g, PERIODIC, 0.0025)
    for k in ("conc", "px", "py", "pw"):
        np.testing.assert_array_equal(getattr(a, k), getattr(b, k))
    with pytest.raises(ConfigurationError):
        solve_coarse_step(s, g, PERIODIC, 0.01, 0)


def test_still_ice_only_diffuses():
    g = grid(24, 12)
    s = random_state(g, v=0.0, src=False)
    m0 = s.totals(g)["conc"]
    out = solve_coarse_step(s, g, PERIODIC, 0.01, 3)
    assert out.totals(g)["conc"] == pytest.approx(m0, rel=1e-13)
    assert np.std(out.conc) < np.std(s.conc)


def test_wall_blocks_flux():
    g = grid(12, 6)
    bc = BoundaryCondition(x_lo="wall", x_hi="wall")
    s = random_state(g, src=False)
    m0 = s.totals(g)["conc"]
    for _ in range(10):
        s = lf_substep(s, g, bc, 0.01)
    assert s.totals(g)["conc"] == pytest.approx(m0, rel=1e-12)


def test_dirichlet_drains_mass():
    g = grid(12, 6)
    bc = BoundaryCondition(x_lo="dirichlet0", x_hi="dirichlet0")
    s = ContinuumState.zeros(g, conc=0.5)
    out = lf_substep(s, g, bc, 0.01)
    assert out.conc[0, 0] == pytest.approx(0.375)
    assert out.conc[5, 0] == 0.5
