import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from neumann_green.coeffs import identity_field, make_checkerboard, make_nonsymmetric_system
from neumann_green.errors import CoercivityViolation
from neumann_green.fem import (
    DiscreteSpace,
    Quadrature,
    assemble_mass,
    assemble_stiffness,
    assemble_weighted_mass,
    coercivity_check,
    reference_rule,
)
from neumann_green.mesh import build_interval_mesh, build_rectangle_mesh


def test_single_cell_matrices():
    sp = DiscreteSpace(build_interval_mesh(0, 1, 1))
    np.testing.assert_allclose(assemble_mass(sp).toarray(), [[1 / 3, 1 / 6], [1 / 6, 1 / 3]])
    np.testing.assert_allclose(sp.laplace.toarray(), [[1, -1], [-1, 1]])


@pytest.mark.parametrize("N", [1, 2])
def test_constants_in_kernel_and_mass_total(N):
    sp = DiscreteSpace(build_rectangle_mesh(0, 1, 0, 1, 0.25), N)
    K = assemble_stiffness(sp, make_nonsymmetric_system(2, 0.1) if N == 2 else identity_field(2))
    for k in range(N):
        np.testing.assert_allclose(K @ sp.constant(k), 0.0, atol=1e-12)
        assert sp.integral(sp.constant(k))[k] == pytest.approx(1.0)


def test_symmetric_field_gives_symmetric_matrix():
    sp = DiscreteSpace(build_rectangle_mesh(0, 1, 0, 1, 0.25))
    K = assemble_stiffness(sp, make_checkerboard(0.2, 1.0, 4))
    assert abs(K - K.T).max() < 1e-13
    M = sp.mass
    assert abs(M - M.T).max() < 1e-15


def test_stiffness_energy_of_linear_function():
    sp = DiscreteSpace(build_rectangle_mesh(0, 2, 0, 1, 0.25))
    u = sp.interpolate(lambda x: 3 * x[:, 0] - x[:, 1])
    # |grad u|^2 * area = 10 * 2
    assert u @ (sp.laplace @ u) == pytest.approx(20.0)


def test_weighted_mass_with_unit_weight_is_mass():
    sp = DiscreteSpace(build_rectangle_mesh(0, 1, 0, 1, 0.25))
    W = assemble_weighted_mass(sp, np.ones(sp.num_nodes))
    assert abs(W - sp.mass).max() < 1e-14


@pytest.mark.parametrize("n,sub", [(1, 1), (1, 3), (2, 1), (2, 2)])
def test_reference_rule_weights_and_exactness(n, sub):
    bary, w = reference_rule(n, sub)
    assert w.sum() == pytest.approx(1.0)
    # mean of l_0^2 over the reference simplex
    expected = 2.0 / ((n + 1) * (n + 2))
    assert np.sum(w * bary[:, 0] ** 2) == pytest.approx(expected)


def test_quadrature_integrates_p1_field():
    sp = DiscreteSpace(build_rectangle_mesh(0, 1, 0, 1, 0.25))
    q = Quadrature(sp, 2)
    u = sp.interpolate(lambda x: 1 + x[:, 0] + 2 * x[:, 1])
    assert q.integrate(q.values(u)[..., 0]) == pytest.approx(2.5)


def test_coercivity_ratio():
    sp = DiscreteSpace(build_rectangle_mesh(0, 1, 0, 1, 0.25))
    f = make_checkerboard(0.2, 1.0, 4)
    r = coercivity_check(sp, f, samples=50)
    assert r >= f.lam


def test_coercivity_violation_raised():
    sp = DiscreteSpace(build_rectangle_mesh(0, 1, 0, 1, 0.25))
    base = make_checkerboard(0.2, 1.0, 4)
    lying = type(base)(base.n, base.N, base.evaluator, 0.99, name="lying")
    with pytest.raises(CoercivityViolation):
        coercivity_check(sp, lying, samples=50)


def test_field_space_mismatch():
    sp = DiscreteSpace(build_interval_mesh(0, 1, 4))
    with pytest.raises(ValueError):
        assemble_stiffness(sp, identity_field(2))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_stiffness_is_positive_semidefinite(seed):
    sp = DiscreteSpace(build_rectangle_mesh(0, 1, 0, 1, 0.34), 2)
    K = assemble_stiffness(sp, make_nonsymmetric_system(2, 0.2))
    u = np.random.default_rng(seed).standard_normal(sp.num_dofs)
    assert u @ (K @ u) >= -1e-12
