"""Exit criteria of the build, one test per criterion.

Each test runs the bundled configs for its criterion, confirms the row
thresholds carry the required tolerances, prints one PASS/FAIL line and
asserts that every verdict passes.
"""
import fnmatch
import math
from functools import lru_cache

import pytest

from neumann_green import cli

from conftest import ACCEPTANCE_LINES

pytestmark = pytest.mark.acceptance


@lru_cache(maxsize=None)
def _run(name):
    return cli.run_experiment(name, write=False)


def _rows(names):
    out = []
    for n in names:
        out.extend((n, r) for r in _run(n).report.rows)
    return out


def _params(config, check):
    return dict(cli.load_config(config).checks)[check]


def _pinned(rows, pattern, relation=None, threshold=None, stability=None):
    hit = [(n, r) for n, r in rows if fnmatch.fnmatchcase(r.quantity, pattern)]
    assert hit, f"no row matches {pattern}"
    for n, r in hit:
        if relation is not None:
            assert r.relation == relation, (n, r.quantity, r.relation)
        if threshold is not None:
            assert r.threshold == pytest.approx(threshold, rel=1e-12), (n, r.quantity)
        if stability is not None:
            assert r.stability_threshold <= stability * (1 + 1e-12), (n, r.quantity)
            assert not math.isnan(r.stability), (n, r.quantity)
    return hit


def _verdict(number, title, rows):
    fails = [f"{n}:{r.quantity}={r.value:.4g}" for n, r in rows if not r.verdict]
    tag = "PASS" if not fails else "FAIL"
    line = f"criterion {number:>2} {tag}  {title}"
    if fails:
        line += "  [" + ", ".join(fails) + "]"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert not fails, line


def test_criterion_01_parabolic_oracle():
    rows = _rows(["interval_identity"])
    _pinned(rows, "oracle.rel_linf_*", "<=", 0.02)
    cfg = _run("interval_identity").config
    assert cfg.h == pytest.approx(1 / 256) and cfg.eps == pytest.approx(1 / 64)
    assert cfg.tau_for(cfg.eps) == pytest.approx(1e-4)
    assert _run("interval_identity").status == 0
    _verdict(1, "cosine-series oracle within 2% on (0,1)", rows)


def test_criterion_02_conservation():
    rows = _rows(["conservation_fields", "interval_identity"])
    hit = _pinned(rows, "conservation.max_error_*", "<=", 1e-8)
    assert any("time_oscillatory_nonsymmetric" in r.quantity for _, r in hit)
    _verdict(2, "spatial integral equals the identity to 1e-8 on every field", rows)


def test_criterion_03_duality():
    rows = _rows(["symmetry_fields"])
    hit = _pinned(rows, "symmetry.max_gap_*", "<=", 1e-9)
    assert any("nonsymmetric" in r.quantity for _, r in hit)
    assert _params("symmetry_fields", "symmetry")["pairs"] == 20
    _verdict(3, "mollified forward/adjoint pairings agree to 1e-9 over 20 pairs", rows)


GAUSSIAN = ["gaussian_identity_interval", "gaussian_checkerboard_interval",
            "gaussian_identity_square", "gaussian_checkerboard_square", "saturation_interval"]


def test_criterion_04_gaussian_bound():
    rows = _rows(GAUSSIAN)
    _pinned(rows, "gaussian.bound_violations", "<=", 0)
    _pinned(rows, "gaussian.saturation_deviation", "<=")
    for name in GAUSSIAN[:4]:
        assert _params(name, "gaussian")["slack"] == pytest.approx(1.02)
    _verdict(4, "Gaussian bound with 1.02 x fitted constant, saturation past R_M^2", rows)


def test_criterion_05_davies():
    rows = _rows(["davies_identity", "davies_checkerboard"])
    _pinned(rows, "davies.norm_psi_zero", "<=", 1 + 1e-10)
    _pinned(rows, "davies.duality_gap_*", "<=", 1e-9)
    norms = _pinned(rows, "davies.norm_M=*", "<=")
    assert len(norms) == 10
    for name in ("davies_identity", "davies_checkerboard"):
        assert _params(name, "davies")["slack"] == pytest.approx(0.05)
    _verdict(5, "twisted evolution norms below exp(theta M^2 (t-s)) (1.05)", rows)


def test_criterion_06_scalings():
    rows = _rows(["scalings_identity", "scalings_checkerboard"])
    for q in ("slope_energy_outside", "slope_N_p1", "slope_DN_p1", "slope_superlevel"):
        _pinned(rows, f"scalings.{q}")
    for name in ("scalings_identity", "scalings_checkerboard"):
        p = _params(name, "scalings")
        assert p["tol"] == pytest.approx(0.2) and len(p["radii"]) >= 4
    _verdict(6, "norm and superlevel exponents within 0.2 over a dyadic sweep", rows)


def test_criterion_07_pointwise_and_holder():
    names = ["pointwise_identity", "pointwise_checkerboard", "holder_identity",
             "holder_checkerboard"]
    rows = _rows(names)
    _pinned(rows, "pointwise.C_hat_pointwise", "finite", stability=0.25)
    _pinned(rows, "holder.C_hat_holder", "finite", stability=0.25)
    _verdict(7, "pointwise and Holder constants finite and refinement-stable", rows)


def test_criterion_08_conditions():
    names = ["embedding_square", "embedding_l_shape", "interior_holder_checkerboard",
             "local_boundedness_identity", "local_boundedness_checkerboard"]
    rows = _rows(names)
    _pinned(rows, "embedding.gamma_hat", "finite", stability=0.10)
    _pinned(rows, "interior_holder.mu0_hat", ">", 0.05)
    _pinned(rows, "local_boundedness.B1_hat", "finite", stability=0.20)
    _pinned(rows, "local_boundedness.theta_hat", "<=")
    _verdict(8, "embedding, interior Holder and local boundedness constants", rows)


def test_criterion_09_elliptic():
    names = ["elliptic_interval", "elliptic_square", "elliptic_log_stability",
             "elliptic_symmetry", "relaxation_checkerboard", "timebar_identity",
             "timebar_checkerboard"]
    rows = _rows(names)
    _pinned(rows, "*.max_abs_integral", "<=", 1e-8)
    _pinned(rows, "elliptic_oracle.rel_l2_*", "<=", 0.01)
    _pinned(rows, "log_bound.slope_relative_error", "<=", 0.1)
    _pinned(rows, "elliptic_symmetry.max_relative_gap", "<=", 1e-8)
    _pinned(rows, "relaxation.rate_relative_error", "<=", 0.15)
    _pinned(rows, "poincare.rho_relative_error", "<=", 0.005)
    _pinned(rows, "timebar.slope_*_deviation", "<=", 0.25)
    _verdict(9, "elliptic Neumann function: mean, oracle, log bound, symmetry, relaxation", rows)


def test_criterion_10_determinism():
    rows = []
    for name in ("symmetry_fields", "davies_checkerboard", "embedding_l_shape"):
        a = cli.run_experiment(name, write=False).report.csv_text()
        b = cli.run_experiment(name, write=False).report.csv_text()
        same = a == b
        rows.append((name, _Row(f"identical_csv_{name}", same)))
    _verdict(10, "repeated runs give identical report CSVs", rows)


class _Row:
    def __init__(self, quantity, ok):
        self.quantity, self.verdict, self.value = quantity, ok, float(ok)
