import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from neumann_green import estimates as est
from neumann_green.coeffs import identity_field, make_checkerboard
from neumann_green.errors import FitFailure, LipschitzViolation, PreconditionError
from neumann_green.fem import DiscreteSpace
from neumann_green.green import build_mollified_green
from neumann_green.mesh import build_interval_mesh, build_rectangle_mesh
from neumann_green.parabolic import solve_forward


@pytest.fixture(scope="module")
def square():
    return DiscreteSpace(build_rectangle_mesh(0, 1, 0, 1, 1 / 16))


def _static(space, u, steps=4):
    f = solve_forward(space, identity_field(space.n), np.zeros(space.num_dofs), steps=steps)
    f.values[:] = u
    return f


def test_lqr_norm_of_constant_and_mode():
    sp = DiscreteSpace(build_interval_mesh(0, 1, 128))
    one = _static(sp, sp.constant(0))
    assert est.lqr_norm(one, 2, 2) == pytest.approx(1.0)
    assert est.lqr_norm(one, 3, math.inf) == pytest.approx(1.0)
    mode = _static(sp, sp.interpolate(lambda x: np.cos(math.pi * x[:, 0])))
    assert est.lqr_norm(mode, 2, math.inf, subdivisions=2) == pytest.approx(math.sqrt(0.5), rel=1e-4)
    with pytest.raises(ValueError):
        est.lqr_norm(one, 0.5, 2)


def test_holder_seminorm_of_linear_function(square):
    u = _static(square, square.interpolate(lambda x: x[:, 0]))
    assert est.parabolic_holder_seminorm(u, 1.0, sample_pairs=3000) == pytest.approx(1.0, rel=1e-9)
    with pytest.raises(ValueError):
        est.parabolic_holder_seminorm(u, 1.5)


def test_embedding_ratio_closed_form():
    sp = DiscreteSpace(build_rectangle_mesh(0, 1, 0, 1, 1 / 64))
    u = sp.interpolate(lambda x: np.cos(math.pi * x[:, 0]))
    # ||u||_4 / (||Du||^{1/2} ||u||^{1/2}) with int cos^4 = 3/8
    want = (3 / 8) ** 0.25 / ((math.pi ** 2 / 2) ** 0.25 * 0.5 ** 0.25)
    assert est.embedding_ratio(sp, u) == pytest.approx(want, rel=2e-3)
    with pytest.raises(ValueError):
        est.embedding_ratio(sp, sp.constant(0))


def test_loglog_slope_recovers_power():
    x = np.array([0.1, 0.2, 0.4, 0.8])
    slope, rms = est.loglog_slope(x, 3 * x ** -1.5)
    assert slope == pytest.approx(-1.5)
    assert rms < 1e-12
    with pytest.raises(FitFailure):
        est.loglog_slope([1.0], [1.0])


def test_report_csv_and_verdicts():
    rep = est.EstimateReport()
    rep.add("a", 1.0, 2.0, "<=", seed=3)
    rep.add("b", 5.0, relation="finite")
    rep.add("c", 3.0, 2.0, "<=")
    rep.add("d", 1.0, relation="finite", stability=0.3, stability_threshold=0.1)
    assert [r.verdict for r in rep.rows] == [True, True, False, False]
    lines = rep.csv_text().splitlines()
    assert lines[0] == "quantity,value,threshold,verdict,stability,seed"
    assert lines[1] == "a,1.0,<= 2.0,pass,,3"
    assert lines[2] == "b,5.0,finite,pass,,"
    assert not rep.passed and [r.quantity for r in rep.failures()] == ["c", "d"]


def test_lipschitz_cone(square):
    psi = est.truncated_cone(square, (0.5, 0.5), 2.0, 0.3)
    assert est.check_lipschitz(square, psi, 2.0) == pytest.approx(2.0)
    with pytest.raises(LipschitzViolation):
        est.check_lipschitz(square, psi, 1.0)


def test_twisted_evolution_without_weight_is_a_contraction(square):
    rep = est.davies_experiment(square, make_checkerboard(0.2, 1.0, 4), [1.0, 4.0], 0.0, 0.01,
                                10, center=(0.3, 0.4), radius=0.5)
    assert rep.passed, rep.summary()
    assert rep.value("norm_psi_zero") <= 1 + 1e-10


def test_local_boundedness_volume_ratio(square):
    rep = est.estimate_local_boundedness_A3(square, identity_field(2), 0.25, trials=2,
                                            refinements=0)
    assert math.isfinite(rep.value("B1_hat"))
    # the constant trial alone forces B1^2 theta >= 1
    assert rep["inverse_B1_squared"].verdict
    with pytest.raises(ValueError):
        est.estimate_local_boundedness_A3(square, identity_field(2), 1.5)


def test_converse_requires_a_successful_fit(square):
    bad = est.EstimateReport()
    bad.add("kappa_hat", 0.1, 0.05, ">=")
    bad.add("C_hat", 1.0, relation="finite")
    bad.add("bound_violations", 3, 0, "<=")
    with pytest.raises(PreconditionError):
        est.verify_converse(bad, square, identity_field(2), 0.25)
    with pytest.raises(PreconditionError):
        est.verify_converse(est.EstimateReport(), square, identity_field(2), 0.25)


def test_pointwise_constant_is_mesh_stable():
    tabs = []
    for cells in (128, 256):
        sp = DiscreteSpace(build_interval_mesh(0, 1, cells))
        tabs.append(build_mollified_green(sp, identity_field(1), ((0.5,), 0.0), 1 / 32,
                                          horizon=0.2, tau=1 / 4096))
    rep = est.verify_pointwise_bound(tabs)
    assert rep.passed, rep.summary()


def test_embedding_constant_is_finite(square):
    rep = est.verify_embedding_A1(square, random_fields=4, refinements=1)
    assert rep.passed, rep.summary()
    assert 0.3 < rep.value("gamma_hat") < 3.0


@settings(max_examples=15, deadline=None)
@given(st.floats(0.1, 5.0), st.floats(0.05, 0.7))
def test_cone_is_lipschitz_with_its_slope(M, radius):
    sp = DiscreteSpace(build_rectangle_mesh(0, 1, 0, 1, 0.25))
    psi = est.truncated_cone(sp, (0.4, 0.6), M, radius)
    assert est.check_lipschitz(sp, psi, M) <= M * (1 + 1e-12)
    assert psi.max() <= M * radius + 1e-12
