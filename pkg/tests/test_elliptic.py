import math

import numpy as np
import pytest

from neumann_green.coeffs import identity_field, make_nonsymmetric_system
from neumann_green.elliptic import (
    build_elliptic_neumann,
    check_elliptic_symmetry,
    elliptic_to_csv,
    load_elliptic,
    oracle_1d,
    poincare_constant,
    relaxation_rate,
    save_elliptic,
)
from neumann_green.errors import GridMismatch
from neumann_green.fem import DiscreteSpace
from neumann_green.mesh import build_interval_mesh, build_rectangle_mesh


@pytest.fixture(scope="module")
def interval_table():
    sp = DiscreteSpace(build_interval_mesh(0, 1, 256))
    return build_elliptic_neumann(sp, identity_field(1), (0.3,), 1 / 64)


def test_poincare_interval_converges_to_one_over_pi():
    errs = []
    for cells in (16, 32, 64):
        rho = poincare_constant(DiscreteSpace(build_interval_mesh(0, 1, cells)))
        errs.append(abs(rho * math.pi - 1.0))
    assert errs[-1] < 0.005
    assert errs[0] > errs[1] > errs[2]


def test_poincare_rectangle_uses_longest_side():
    rho = poincare_constant(DiscreteSpace(build_rectangle_mesh(0, 2, 0, 1, 1 / 8)))
    assert rho == pytest.approx(2 / math.pi, rel=0.005)


def test_oracle_is_zero_mean_and_solves_the_equation():
    x = np.linspace(0, 1, 20001)
    g = oracle_1d(x, 0.3)
    assert np.trapezoid(g, x) == pytest.approx(0.0, abs=1e-8)
    # slope jumps by -1 at the pole, curvature is 1/|Omega| elsewhere
    d = np.gradient(g, x)
    assert d[x < 0.29][-1] - d[x > 0.31][0] == pytest.approx(1.0, abs=0.03)


def test_interval_table_matches_oracle(interval_table):
    x = np.linspace(0, 1, 41)
    x = x[np.abs(x - 0.3) >= 4 / 64][:, None]
    got = interval_table.sample(x)[:, 0, 0]
    want = oracle_1d(x[:, 0], 0.3)
    assert np.max(np.abs(got - want)) / np.max(np.abs(want)) < 0.01


def test_table_has_zero_mean(interval_table):
    assert abs(interval_table.integrals()[0, 0]) < 1e-8


def test_relaxation_rate_is_the_spectral_gap(interval_table):
    rate = relaxation_rate(interval_table)
    assert rate == pytest.approx(math.pi ** 2, rel=0.05)


def test_symmetry_for_a_nonsymmetric_system():
    f = make_nonsymmetric_system(2, 0.1)
    sp = DiscreteSpace(build_rectangle_mesh(0, 1, 0, 1, 1 / 16), 2)
    kw = dict(tau=0.01, steps=150)
    fwd = build_elliptic_neumann(sp, f, (0.3, 0.4), 1 / 8, kind="forward", **kw)
    adj = build_elliptic_neumann(sp, f.adjoint(), (0.6, 0.7), 1 / 8, kind="adjoint", **kw)
    assert check_elliptic_symmetry(fwd, adj) < 1e-8
    same = build_elliptic_neumann(sp, f.adjoint(), (0.3, 0.4), 1 / 8, kind="adjoint", **kw)
    with pytest.raises(ValueError):
        check_elliptic_symmetry(fwd, same)
    other = build_elliptic_neumann(sp, f.adjoint(), (0.6, 0.7), 1 / 8, kind="adjoint", tau=0.02, steps=75)
    with pytest.raises(GridMismatch):
        check_elliptic_symmetry(fwd, other)


def test_save_load_and_csv(tmp_path, interval_table):
    save_elliptic(interval_table, tmp_path / "g.ngt")
    back = load_elliptic(tmp_path / "g.ngt")
    np.testing.assert_allclose(back.values, interval_table.values)
    elliptic_to_csv(back, tmp_path / "g.csv")
    lines = (tmp_path / "g.csv").read_text().splitlines()
    assert len(lines) == 1 + back.values.size
