import numpy as np
import pytest
from hypothesis import given, strategies as st

from muskat.brinkman import lift_boundary, sample_force, solve_brinkman
from muskat.errors import CFLViolation
from muskat.fields import velocity_from_function
from muskat.grid import build_grid, classify_boundary
from muskat.transport import (TraceRecord, admissible_dt, advect, cfl_dt, mass_ledger, renormalization_step_defect,
                              renormalized_advect, total_mass)


def uniform(ux, vy):
    return lambda t, x, y: (ux + 0 * x, vy + 0 * y)


def rotation(t, x, y):
    return -(y - 0.5), x - 0.5


def setup(grid, b):
    return velocity_from_function(grid, b), classify_boundary(grid, b, 0.0)


def test_cfl_examples():
    g = build_grid((0, 0), (1, 1), 10, 10)
    assert cfl_dt(g, velocity_from_function(g, uniform(1, 0)), 0.5) == pytest.approx(0.05)
    assert cfl_dt(g, velocity_from_function(g, uniform(0, 0)), 0.5, dt_max=0.3) == 0.3
    assert cfl_dt(g, velocity_from_function(g, uniform(2, 1)), 1.0) == pytest.approx(0.05)


@pytest.mark.parametrize("cfl", [0.25, 0.5, 1.0])
def test_upwind_strip_by_hand(cfl):
    # a strip of 4 cells in x; a second identical row because grids need two cells per direction
    g = build_grid((0, 0), (1, 0.5), 4, 2)
    vp, part = setup(g, uniform(1, 0))
    rho = np.zeros((4, 2))
    rho[1] = 1.0
    new, inc = advect(g, rho, vp, cfl * g.hx, 0.0, part)
    prev = np.concatenate([[0.0], rho[:-1, 0]])
    expected = rho[:, 0] - cfl * (rho[:, 0] - prev)
    for j in range(2):
        np.testing.assert_allclose(new[:, j], expected, rtol=0, atol=1e-15)
    assert inc.outflow.mass == 0.0 and inc.inflow.mass == 0.0


def test_constant_field_invariant_under_divergence_free_flow():
    g = build_grid((0, 0), (1, 1), 12, 12)
    for b in (uniform(1, 0.5), rotation):
        vp = lift_boundary(g, b)
        part = classify_boundary(g, b, 0.0)
        dt = 0.9 * admissible_dt(g, vp, part)
        new, _ = advect(g, np.full((12, 12), 2.5), vp, dt, 2.5, part)
        np.testing.assert_allclose(new, 2.5, rtol=1e-12)


def test_rest_is_identity(unit4, rng):
    vp, part = setup(unit4, uniform(0, 0))
    rho = rng.uniform(1, 2, (4, 4))
    new, inc = advect(unit4, rho, vp, 10.0, 1.0, part)
    assert np.array_equal(new, rho)
    assert inc.outflow.face_ids.size == 0 and inc.inflow.face_ids.size == 0


def test_cfl_violation_carries_admissible_dt(unit4):
    vp, part = setup(unit4, uniform(1, 0))
    with pytest.raises(CFLViolation) as exc:
        advect(unit4, np.ones((4, 4)), vp, 0.3, 1.0, part)
    assert exc.value.admissible_dt == pytest.approx(0.25)


def test_renormalized_identity_and_constant(unit4, rng):
    vp, part = setup(unit4, uniform(1, 0))
    rho = rng.uniform(1, 2, (4, 4))
    a, _ = advect(unit4, rho, vp, 0.2, 1.5, part)
    b, _ = renormalized_advect(lambda r: r, unit4, rho, vp, 0.2, 1.5, part)
    assert np.array_equal(a, b)
    c, _ = renormalized_advect(lambda r: np.full_like(r, 3.0), unit4, rho, vp, 0.2, 1.5, part)
    np.testing.assert_allclose(c, 3.0, rtol=1e-15)
    assert renormalization_step_defect(lambda r: r, unit4, rho, vp, 0.2, 1.5, part) == 0.0


def march(grid, rho, b, rb, steps, cfl=0.9):
    vp = lift_boundary(grid, b)
    dt = cfl * admissible_dt(grid, vp, classify_boundary(grid, b, 0.0))
    out, inn = TraceRecord(), TraceRecord()
    r = rho
    for k in range(steps):
        part = classify_boundary(grid, b, k * dt)
        r, inc = advect(grid, r, vp, dt, rb, part)
        out.append(inc.outflow)
        inn.append(inc.inflow)
    return r, out, inn


def test_closed_box_ledger(rng):
    g = build_grid((0, 0), (1, 1), 10, 10)
    rho = rng.uniform(1, 2, (10, 10))
    f = sample_force(g, lambda t, x, y: (-(y - 0.5), x - 0.5))
    vp = solve_brinkman(g, np.ones((10, 10)), 1.0, f, uniform(0, 0))
    part = classify_boundary(g, uniform(0, 0), 0.0)
    dt = 0.9 * admissible_dt(g, vp, part)
    out, inn = TraceRecord(), TraceRecord()
    final = rho
    for _ in range(30):
        final, inc = advect(g, final, vp, dt, 1.0, part)
        out.append(inc.outflow)
        inn.append(inc.inflow)
    assert vp.max_speed()[0] > 0
    assert out.total_mass() == 0 and inn.total_mass() == 0
    assert abs(total_mass(g, final) - total_mass(g, rho)) < 1e-13


def test_channel_constant_in_out_balance():
    g = build_grid((0, 0), (1, 1), 8, 8)
    final, out, inn = march(g, np.full((8, 8), 2.0), uniform(1, 0), 2.0, 20)
    for so, si in zip(out.steps, inn.steps):
        assert so.mass == pytest.approx(si.mass, rel=1e-14)
    assert mass_ledger(np.full((8, 8), 2.0), final, out, inn, g) < 1e-14


@given(st.floats(0.1, 1.0), st.floats(-1, 1), st.integers(0, 10 ** 6))
def test_monotone_and_bounded(cfl, tilt, seed):
    g = build_grid((0, 0), (1, 1), 6, 6)
    b = uniform(1, tilt)
    vp, part = setup(g, b)
    dt = cfl * admissible_dt(g, vp, part)
    r = np.random.default_rng(seed)
    lo = r.uniform(1, 2, (6, 6))
    hi = lo + r.uniform(0, 1, (6, 6))
    a, _ = advect(g, lo, vp, dt, 1.0, part)
    c, _ = advect(g, hi, vp, dt, 1.5, part)
    assert np.all(a <= c + 1e-14)
    assert a.min() >= 1.0 - 1e-14 and c.max() <= 3.0 + 1e-14
