import math

import numpy as np
import pytest
from scipy import integrate

from neumann_green.coeffs import identity_field, make_nonsymmetric_system
from neumann_green.errors import GridMismatch, MollifierUnresolvable, OutOfWindow
from neumann_green.fem import DiscreteSpace
from neumann_green.green import (
    build_adjoint_green,
    build_mollified_green,
    build_mollifier,
    bump_constant,
    bump_profile,
    check_representation,
    check_symmetry,
    conservation_error,
    cosine_series_kernel,
    evaluate,
    load_table,
    save_table,
    tilde_normalize,
)
from neumann_green.mesh import build_interval_mesh, build_rectangle_mesh


@pytest.fixture(scope="module")
def square():
    return DiscreteSpace(build_rectangle_mesh(0, 1, 0, 1, 1 / 16))


def test_bump_constants():
    assert bump_constant(1) == pytest.approx(2.2522836, rel=1e-6)
    assert bump_constant(2) == pytest.approx(2.1436, rel=1e-4)
    val, _ = integrate.quad(lambda z: bump_profile(np.array([[z]]), 1)[0], -1, 1)
    assert val == pytest.approx(1.0, rel=1e-10)
    with pytest.raises(ValueError):
        bump_constant(3)


def test_mollifier_unit_mass_and_sign(square):
    m = build_mollifier(square.mesh, (0.4, 0.55), 1 / 8)
    assert np.all(m.nodal >= 0)
    assert square.integral(m.dofs(square))[0] == pytest.approx(1.0, abs=1e-13)


def test_mollifier_resolution_limit(square):
    with pytest.raises(MollifierUnresolvable):
        build_mollifier(square.mesh, (0.5, 0.5), 1 / 16)
    with pytest.raises(MollifierUnresolvable):
        build_mollifier(square.mesh, (3.0, 3.0), 1 / 8)


def test_forward_table_matches_cosine_series():
    sp = DiscreteSpace(build_interval_mesh(0, 1, 256))
    tab = build_mollified_green(sp, identity_field(1), ((0.3,), 0.0), 1 / 64,
                                horizon=0.1, tau=1e-4)
    x = np.linspace(0, 1, 11)
    got = np.array([evaluate(tab, [xi], 0.05)[0, 0] for xi in x])
    want = cosine_series_kernel(x, 0.05, 0.3)
    assert np.max(np.abs(got - want)) / np.max(np.abs(want)) < 0.01


def test_conservation_and_tilde(square):
    f = make_nonsymmetric_system(2, 0.1)
    sp = DiscreteSpace(square.mesh, 2)
    tab = build_mollified_green(sp, f, ((0.5, 0.5), 0.0), 1 / 8, horizon=0.05, tau=1 / 256)
    assert conservation_error(tab) < 1e-12
    til = tilde_normalize(tab)
    np.testing.assert_allclose(til.integrals()[-1], 0.0, atol=1e-12)
    with pytest.raises(ValueError):
        tilde_normalize(til)


def test_evaluate_before_pole_vanishes_and_window_guard(square):
    tab = build_mollified_green(square, identity_field(2), ((0.5, 0.5), 1.0), 1 / 8,
                                horizon=0.05, tau=1 / 256)
    assert np.all(evaluate(tab, (0.5, 0.5), 0.5) == 0.0)
    with pytest.raises(OutOfWindow):
        evaluate(tab, (0.5, 0.5), 2.0)


def test_forward_adjoint_symmetry(square):
    f = make_nonsymmetric_system(2, 0.15)
    sp = DiscreteSpace(square.mesh, 2)
    tau = 1 / 256
    fwd = build_mollified_green(sp, f, ((0.3, 0.4), 0.0), 1 / 8, steps=12, tau=tau,
                                horizon=12 * tau)
    adj = build_adjoint_green(sp, f, ((0.6, 0.7), 8 * tau), 1 / 8, steps=8, horizon=8 * tau)
    assert check_symmetry(fwd, adj) < 1e-12
    other = build_adjoint_green(sp, f, ((0.6, 0.7), 0.05), 1 / 8, steps=3, horizon=0.05)
    with pytest.raises(GridMismatch):
        check_symmetry(fwd, other)


def test_representation_with_source(square):
    tab = build_mollified_green(square, identity_field(2), ((0.5, 0.5), 0.0), 1 / 8,
                                horizon=0.1, steps=20)
    f = lambda t: square.interpolate(lambda x: np.sin(3 * x[:, 0]) * (1 + t))
    assert check_representation(tab, f) < 1e-9
    assert check_representation(tab, lambda t: np.zeros(square.num_dofs)) == 0.0


def test_save_load_round_trip(tmp_path, square):
    tab = build_mollified_green(square, identity_field(2), ((0.5, 0.5), 0.0), 1 / 8,
                                horizon=0.02, tau=1 / 256)
    save_table(tab, tmp_path / "t.ngt")
    back = load_table(tmp_path / "t.ngt")
    np.testing.assert_allclose(back.values, tab.values)
    np.testing.assert_allclose(back.times, tab.times)
    assert back.eps == tab.eps


def test_cosine_series_integrates_to_one():
    x = np.linspace(0, 1, 2001)
    k = cosine_series_kernel(x, 0.01, 0.4)
    assert integrate.trapezoid(k, x) == pytest.approx(1.0, rel=1e-6)
    assert np.all(k > -1e-12)
    assert math.isclose(cosine_series_kernel([0.1], 5.0, 0.4)[0], 1.0, rel_tol=1e-12)
