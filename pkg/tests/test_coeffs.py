import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from neumann_green.coeffs import (
    identity_field,
    make_checkerboard,
    make_field,
    make_nonsymmetric_system,
    make_smooth_scalar,
    make_time_oscillatory,
    validate_ellipticity,
)
from neumann_green.errors import EllipticityViolation


def test_identity_extremes_are_one():
    lo, hi = validate_ellipticity(identity_field(2, 2), space_time_samples=20)
    assert lo == pytest.approx(1.0)
    assert hi == pytest.approx(1.0)


def test_checkerboard_lambda_is_low():
    f = make_checkerboard(0.2, 1.0, 4)
    assert f.lam == 0.2
    lo, hi = validate_ellipticity(f, space_time_samples=200)
    assert lo == pytest.approx(0.2)
    assert hi <= 5.0


def test_checkerboard_pattern_alternates():
    f = make_checkerboard(0.5, 2.0, 2)
    a = f.evaluate([[0.25, 0.25], [0.75, 0.25], [0.75, 0.75]])[:, 0, 0, 0, 0]
    assert a == pytest.approx([0.5, 2.0, 0.5])


def test_checkerboard_too_high_contrast():
    with pytest.raises(EllipticityViolation):
        make_checkerboard(0.2, 6.0, 4)


def test_time_oscillatory_reduces_lambda():
    f = make_time_oscillatory(identity_field(2), 0.3, 2.0)
    assert f.time_dependent
    assert f.lam == pytest.approx(0.7)
    validate_ellipticity(f, space_time_samples=100)


def test_amplitude_must_leave_margin():
    with pytest.raises(ValueError):
        make_time_oscillatory(make_checkerboard(0.2, 1.0, 4), 0.2, 1.0)


def test_large_skew_is_rejected():
    with pytest.raises(EllipticityViolation):
        make_nonsymmetric_system(2, 2.0)


def test_nonsymmetric_default():
    f = make_nonsymmetric_system(2, 0.1)
    assert not f.symmetric
    assert f.lam == pytest.approx(0.9)
    mats = f.as_matrices([[0.3, 0.3]])[0]
    assert not np.allclose(mats, mats.T)


def test_adjoint_transposes_frame_matrix():
    f = make_nonsymmetric_system(2, 0.15)
    x = np.array([[0.1, 0.2]])
    np.testing.assert_allclose(f.adjoint().as_matrices(x)[0], f.as_matrices(x)[0].T)


def test_validator_reports_witness():
    base = make_checkerboard(0.5, 2.0, 2)
    bad = type(base)(base.n, base.N, base.evaluator, 0.8, name="overclaimed")
    with pytest.raises(EllipticityViolation) as info:
        validate_ellipticity(bad, space_time_samples=50)
    x, t, xi, eta = info.value.witness
    assert len(x) == 2


def test_make_field_rejects_unknown():
    with pytest.raises(KeyError):
        make_field("marble", 2)
    with pytest.raises(KeyError):
        make_field("identity", 2, low=0.3)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.1, 1.0), st.floats(0.0, 1.0), st.integers(1, 6))
def test_checkerboard_satisfies_declared_bounds(low, frac, cells):
    high = low + frac * (1.0 / low - low)
    f = make_checkerboard(low, high, cells)
    lo, hi = validate_ellipticity(f, space_time_samples=60, frame_samples=20)
    assert lo >= f.lam * (1 - 1e-9)
    assert hi <= 1.0 / f.lam * (1 + 1e-9)


@settings(max_examples=20, deadline=None)
@given(st.floats(-0.2, 0.2))
def test_nonsymmetric_is_elliptic_in_the_allowed_range(skew):
    f = make_nonsymmetric_system(2, skew)
    lo, hi = validate_ellipticity(f, space_time_samples=5, frame_samples=50)
    assert lo >= f.lam * (1 - 1e-9)


def test_smooth_scalar_lambda():
    f = make_smooth_scalar(0.5, 1.5)
    assert f.lam == pytest.approx(min(0.5, 1 / 1.5))
    validate_ellipticity(f, space_time_samples=200)
