import numpy as np
import pytest

from muskat.brinkman import (assemble, drag_energy, force_work, lift_boundary, sample_force, solve, solve_brinkman,
                             solve_dense, strain_energy, strain_operators, symmetric_gradient, velocity_vector)
from muskat.errors import CoercivityError, DataError
from muskat.fields import velocity_from_function
from muskat.grid import build_grid
from muskat.studies import mms_error

TAU_SOLVE = 1e-9


def zero_force(g):
    return np.zeros((g.nx + 1, g.ny)), np.zeros((g.nx, g.ny + 1))


def random_force(g, rng):
    return rng.standard_normal((g.nx + 1, g.ny)), rng.standard_normal((g.nx, g.ny + 1))


def stack(vp):
    return np.concatenate([vp.u.ravel(), vp.v.ravel(), vp.p.ravel()])


def rot(t, x, y):
    return -(y - 0.5), x - 0.5


def test_homogeneous_system_has_zero_solution(unit4):
    vp = solve_brinkman(unit4, np.ones((4, 4)), 1.0, zero_force(unit4), lambda t, x, y: (0 * x, 0 * y))
    assert np.all(vp.u == 0) and np.all(vp.v == 0) and np.all(vp.p == 0)


@pytest.mark.parametrize("linear,D", [
    (lambda t, x, y: (2 + 0 * x, -1 + 0 * y), np.zeros((2, 2))),
    (lambda t, x, y: (y, 0 * x), np.array([[0, 0.5], [0.5, 0]])),
    (lambda t, x, y: (-y, x), np.zeros((2, 2))),
])
def test_symmetric_gradient_of_linear_fields(unit4, linear, D):
    out = symmetric_gradient(unit4, velocity_from_function(unit4, linear))
    np.testing.assert_allclose(out, np.broadcast_to(D, out.shape), atol=1e-14)


def test_shear_strain_energy_by_hand(unit4):
    w = velocity_vector(unit4, velocity_from_function(unit4, lambda t, x, y: (y, 0 * x)))
    # mu |Dv|^2 integrated: 2 * (1/2)^2 over the unit square
    assert strain_energy(unit4, np.ones((4, 4)), w, w) == pytest.approx(0.5, rel=1e-13)
    assert strain_energy(unit4, np.full((4, 4), 3.0), w, w) == pytest.approx(1.5, rel=1e-13)


def test_momentum_block_by_hand_on_2x2():
    # unknowns: u(1,0), u(1,1), v(0,1), v(1,1); unit viscosity, no drag, h = 1/2.
    # u(1,0) diagonal: normal strain 2 cells * (1/h)^2 * h^2 = 2; shear at the wall node
    # (one-sided, coefficient 2) 2 * 4 * h^2/2 = 1; shear at the centre node 2 * 1 * h^2 = 0.5.
    # Off-diagonals come from the single centre node, coefficients +-1, weight 2 * h^2.
    g = build_grid((0, 0), (1, 1), 2, 2)
    sys_ = assemble(g, np.ones((2, 2)), 0.0, zero_force(g), lambda t, x, y: (0 * x, 0 * y))
    expected = np.array([[3.5, -0.5, 0.5, -0.5],
                         [-0.5, 3.5, -0.5, 0.5],
                         [0.5, -0.5, 3.5, -0.5],
                         [-0.5, 0.5, -0.5, 3.5]])
    np.testing.assert_allclose(sys_.A.toarray(), expected, rtol=0, atol=1e-14)


def test_darcy_limit_is_face_mass_matrix(unit4):
    c = 2.5
    sys_ = assemble(unit4, np.full((4, 4), 1e-14), np.full((4, 4), c), zero_force(unit4),
                    lambda t, x, y: (0 * x, 0 * y))
    ops = strain_operators(unit4)
    n_f = unit4.n_faces
    mass = np.concatenate([c * ops.face_weight, np.zeros(ops.Sxx.shape[1] - n_f)])[ops.unknown]
    np.testing.assert_allclose(sys_.A.toarray(), np.diag(mass), atol=1e-12)


def test_symmetric_assembly_with_variable_coefficients(unit4, rng):
    mu = rng.uniform(0.5, 3, (4, 4))
    h = rng.uniform(0, 2, (4, 4))
    for harmonic in (False, True):
        A = assemble(unit4, mu, h, zero_force(unit4), rot, harmonic=harmonic).A
        assert abs(A - A.T).max() == 0


def test_coercivity_errors(unit4):
    mu = np.ones((4, 4))
    mu[1, 2] = 0.0
    with pytest.raises(CoercivityError):
        assemble(unit4, mu, 1.0, zero_force(unit4), rot)
    with pytest.raises(CoercivityError):
        assemble(unit4, np.ones((4, 4)), -1.0, zero_force(unit4), rot)


def test_compatibility_violation_raises(unit4):
    with pytest.raises(DataError) as exc:
        assemble(unit4, np.ones((4, 4)), 1.0, zero_force(unit4), lambda t, x, y: (x, 0 * y))
    assert exc.value.label == "compatibility"
    assert exc.value.magnitude == pytest.approx(1.0)


def test_dense_oracle(unit4, rng):
    sys_ = assemble(unit4, rng.uniform(0.5, 2, (4, 4)), rng.uniform(0, 2, (4, 4)), random_force(unit4, rng), rot)
    for kind in ("direct", "pcg"):
        a, b = solve(sys_, velocity_solver=kind), solve_dense(sys_)
        assert np.max(np.abs(stack(a) - stack(b))) < 1e-10


def test_zero_drag_is_solvable(unit4, rng):
    vp = solve_brinkman(unit4, np.ones((4, 4)), 0.0, random_force(unit4, rng), rot)
    assert vp.divergence_residual <= 1e-8
    assert abs(vp.p.mean()) < 1e-14


def test_superposition(unit4, rng):
    mu, h = rng.uniform(0.5, 2, (4, 4)), rng.uniform(0, 2, (4, 4))
    f1, f2 = random_force(unit4, rng), random_force(unit4, rng)
    b1 = rot

    def b2(t, x, y):
        return 1 + 0 * x, np.sin(np.pi * x)

    s1 = solve_brinkman(unit4, mu, h, f1, b1)
    s2 = solve_brinkman(unit4, mu, h, f2, b2)
    f12 = (2 * f1[0] - 0.5 * f2[0], 2 * f1[1] - 0.5 * f2[1])
    s12 = solve_brinkman(unit4, mu, h, f12, lambda t, x, y: tuple(2 * a - 0.5 * c for a, c in
                                                                  zip(b1(t, x, y), b2(t, x, y))))
    ref = 2 * stack(s1) - 0.5 * stack(s2)
    assert np.max(np.abs(stack(s12) - ref)) <= 10 * TAU_SOLVE * max(1.0, np.max(np.abs(ref)))


def test_energy_identity_without_boundary_data(unit4, rng):
    mu, h = rng.uniform(0.5, 2, (4, 4)), rng.uniform(0, 2, (4, 4))
    f = random_force(unit4, rng)
    vp = solve_brinkman(unit4, mu, h, f, lambda t, x, y: (0 * x, 0 * y))
    w = velocity_vector(unit4, vp)
    lhs = strain_energy(unit4, mu, w, w) + drag_energy(unit4, h, w, w)
    assert abs(lhs - force_work(unit4, f, w)) <= 10 * TAU_SOLVE * abs(lhs)
    vp0 = solve_brinkman(unit4, mu, h, zero_force(unit4), lambda t, x, y: (0 * x, 0 * y))
    w0 = velocity_vector(unit4, vp0)
    assert strain_energy(unit4, mu, w0, w0) == 0 and force_work(unit4, zero_force(unit4), w0) == 0


def test_lift(unit4):
    z = lift_boundary(unit4, lambda t, x, y: (0 * x, 0 * y))
    assert np.all(z.u == 0) and np.all(z.v == 0)
    one = lift_boundary(unit4, lambda t, x, y: (1 + 0 * x, 0 * y))
    np.testing.assert_allclose(one.u, 1, atol=1e-12)
    np.testing.assert_allclose(one.v, 0, atol=1e-12)
    a = lift_boundary(unit4, rot)
    b = lift_boundary(unit4, lambda t, x, y: (1 + 0 * x, 0 * y))
    s = lift_boundary(unit4, lambda t, x, y: (-(y - 0.5) + 1, x - 0.5))
    assert np.max(np.abs(s.u - a.u - b.u)) <= 10 * TAU_SOLVE
    assert np.max(np.abs(s.v - a.v - b.v)) <= 10 * TAU_SOLVE


def test_stability_constant_across_refinement():
    consts = []
    for n in (8, 16, 32):
        g = build_grid((0, 0), (1, 1), n, n)
        f = sample_force(g, lambda t, x, y: (np.sin(np.pi * y), np.cos(np.pi * x)))
        vp = solve_brinkman(g, np.ones((n, n)), 1.0, f, rot)
        vnorm = np.sqrt((np.sum(vp.u ** 2) + np.sum(vp.v ** 2)) * g.cell_area)
        consts.append(vnorm)
    assert max(consts) / min(consts) < 1.2


def test_mms_second_order_small_levels():
    e1, e2 = mms_error(16), mms_error(32)
    assert e1.velocity_error / e2.velocity_error > 3.4
