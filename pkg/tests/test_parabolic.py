import math

import numpy as np
import pytest

from neumann_green.coeffs import identity_field, make_checkerboard, make_time_oscillatory
from neumann_green.fem import DiscreteSpace
from neumann_green.mesh import build_interval_mesh, build_rectangle_mesh
from neumann_green.parabolic import (
    Stepper,
    energy_inequality_check,
    solve_backward,
    solve_forward,
    time_grid,
    triple_norm,
)


def test_constant_is_steady():
    sp = DiscreteSpace(build_rectangle_mesh(0, 1, 0, 1, 0.25))
    u = solve_forward(sp, make_checkerboard(0.2, 1.0, 4), sp.constant(0, 2.0), steps=10)
    np.testing.assert_allclose(u.values[-1], 2.0, atol=1e-12)


def test_cosine_mode_decays_at_the_exact_rate():
    sp = DiscreteSpace(build_interval_mesh(0, 1, 256))
    psi = sp.interpolate(lambda x: np.cos(math.pi * x[:, 0]))
    u = solve_forward(sp, identity_field(1), psi, t_end=0.1, steps=1000)
    got = u.sample([[0.0]], 0.1)[0, 0]
    assert got == pytest.approx(math.exp(-math.pi ** 2 * 0.1), rel=0.01)


def test_mass_conserved_with_time_dependent_field():
    sp = DiscreteSpace(build_rectangle_mesh(0, 1, 0, 1, 0.25))
    f = make_time_oscillatory(make_checkerboard(0.5, 2.0, 2), 0.3, 5.0)
    psi = sp.interpolate(lambda x: np.exp(x[:, 0]) * x[:, 1])
    u = solve_forward(sp, f, psi, steps=20)
    m = [sp.integral(v)[0] for v in u.values]
    np.testing.assert_allclose(m, m[0], rtol=1e-12)


def test_forward_backward_duality():
    sp = DiscreteSpace(build_rectangle_mesh(0, 1, 0, 1, 0.25))
    f = make_time_oscillatory(make_checkerboard(0.5, 2.0, 2), 0.3, 5.0)
    rng = np.random.default_rng(3)
    a, b = rng.standard_normal((2, sp.num_dofs))
    u = solve_forward(sp, f, a, steps=15).values[-1]
    w = solve_backward(sp, f, b, steps=15).values[0]
    M = sp.mass
    assert abs(b @ (M @ u) - a @ (M @ w)) < 1e-10 * abs(b @ (M @ u))


def test_triple_norm_of_constant_and_mode():
    sp = DiscreteSpace(build_interval_mesh(0, 1, 64))
    u = solve_forward(sp, identity_field(1), sp.constant(0), steps=4)
    assert triple_norm(u) == pytest.approx(1.0)
    # static mode x -> cos(pi x) on a unit window: pi^2/2 + 1/2
    static = solve_forward(sp, identity_field(1), np.zeros(sp.num_dofs), steps=4)
    static.values[:] = sp.interpolate(lambda x: np.cos(math.pi * x[:, 0]))
    assert triple_norm(static) == pytest.approx(math.sqrt(math.pi ** 2 / 2 + 0.5), rel=2e-3)


def test_energy_ratio_obeys_the_energy_identity():
    # sup |u|^2 + 2 int |Du|^2 <= |psi|^2, so the ratio is at most sqrt(3/2)
    sp = DiscreteSpace(build_interval_mesh(0, 1, 64))
    psi = sp.interpolate(lambda x: np.cos(3 * math.pi * x[:, 0]))
    u = solve_forward(sp, identity_field(1), psi, t_end=0.5, steps=200)
    r = energy_inequality_check(u, psi)
    assert 1.0 <= r <= math.sqrt(1.5) + 1e-12


def test_stepper_and_grid_validation():
    sp = DiscreteSpace(build_interval_mesh(0, 1, 4))
    with pytest.raises(ValueError):
        Stepper(sp, identity_field(1), 0.0)
    with pytest.raises(ValueError):
        time_grid(0.0, 1.0, 0)
    with pytest.raises(ValueError):
        time_grid(1.0, 1.0, 3)


def test_iterative_path_matches_direct():
    sp = DiscreteSpace(build_rectangle_mesh(0, 1, 0, 1, 0.125))
    f = make_checkerboard(0.2, 1.0, 4)
    psi = sp.interpolate(lambda x: x[:, 0] ** 2)
    a = solve_forward(sp, f, psi, steps=5).values[-1]
    b = solve_forward(sp, f, psi, steps=5, direct_threshold=0).values[-1]
    np.testing.assert_allclose(a, b, atol=1e-8)
