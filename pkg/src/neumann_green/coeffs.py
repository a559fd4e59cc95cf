"""Coefficient tensors a^{ab}_{ij}(x, t) and the example families used here.

An evaluator maps points ``x`` of shape (k, n) and a scalar time ``t`` to an
array of shape (k, n, n, N, N) indexed ``[k, alpha, beta, i, j]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import EllipticityViolation

__all__ = [
    "CoefficientField",
    "validate_ellipticity",
    "identity_field",
    "make_checkerboard",
    "make_smooth_scalar",
    "make_time_oscillatory",
    "make_nonsymmetric_system",
    "extremal_ratios",
    "make_field",
    "FAMILIES",
]

Evaluator = Callable[[np.ndarray, float], np.ndarray]

_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class CoefficientField:
    n: int
    N: int
    evaluator: Evaluator = field(repr=False)
    lam: float
    time_dependent: bool = False
    symmetric: bool = True
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"ellipticity constant must be positive, got {self.lam}")

    def evaluate(self, x, t: float = 0.0) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1, self.n)
        a = np.asarray(self.evaluator(x, float(t)), dtype=float)
        return a.reshape(len(x), self.n, self.n, self.N, self.N)

    def adjoint(self) -> "CoefficientField":
        """Coefficients of the adjoint operator, (A^{ba})^T."""
        base = self.evaluator

        def ev(x, t):
            return np.swapaxes(np.swapaxes(base(x, t), 1, 2), 3, 4)

        return CoefficientField(self.n, self.N, ev, self.lam, self.time_dependent,
                                self.symmetric, f"adjoint({self.name})", dict(self.params))

    def as_matrices(self, x, t: float = 0.0) -> np.ndarray:
        """(k, nN, nN) matrices with row (alpha, i) and column (beta, j)."""
        a = self.evaluate(x, t)
        k, n, N = a.shape[0], self.n, self.N
        return a.transpose(0, 1, 3, 2, 4).reshape(k, n * N, n * N)


def extremal_ratios(mats: np.ndarray):
    """Pointwise min Rayleigh quotient and max bilinear ratio of frame matrices.

    Returns the two ratio arrays plus the extremal frames realising them.
    """
    sym = 0.5 * (mats + np.swapaxes(mats, 1, 2))
    w, v = np.linalg.eigh(sym)
    u, s, vt = np.linalg.svd(mats)
    return w[:, 0], s[:, 0], v[:, :, 0], vt[:, 0, :], u[:, :, 0]


def validate_ellipticity(field_: CoefficientField, space_time_samples: int = 1000,
                         frame_samples: int = 200, seed: int = 0,
                         bounds=(0.0, 1.0), time_bounds=(0.0, 1.0)):
    """Check both ellipticity inequalities on deterministic pseudo-random samples.

    At each sampled (x, t) the random frames are supplemented with the exact
    extremal frames (lowest eigenvector of the symmetric part, top singular
    pair), so the returned values are the true extrema over the sampled points.

    Returns
    -------
    (lambda_lower, lambda_upper_inv) : tuple of float
        Minimum of xi.A xi / |xi|^2 and maximum of |eta.A xi| / (|xi||eta|).
    """
    if space_time_samples < 1 or frame_samples < 1:
        raise ValueError("sample counts must be at least 1")
    rng = np.random.default_rng(seed)
    n, N = field_.n, field_.N
    lo, hi = bounds
    x = lo + (hi - lo) * rng.random((space_time_samples, n))
    t = time_bounds[0] + (time_bounds[1] - time_bounds[0]) * rng.random(space_time_samples)
    if not field_.time_dependent:
        t[:] = 0.0
    mats = np.concatenate([field_.as_matrices(x[k:k + 1], t[k]) for k in range(space_time_samples)])

    d = n * N
    xi = rng.standard_normal((frame_samples, d))
    eta = rng.standard_normal((frame_samples, d))
    Axi = np.einsum("kab,fb->kfa", mats, xi)
    rayleigh = np.einsum("fa,kfa->kf", xi, Axi) / np.einsum("fa,fa->f", xi, xi)
    bilinear = np.abs(np.einsum("fa,kfa->kf", eta, Axi)) / (
        np.linalg.norm(xi, axis=1) * np.linalg.norm(eta, axis=1))

    wmin, smax, vmin, right, left = extremal_ratios(mats)
    low_k = int(np.argmin(wmin))
    high_k = int(np.argmax(smax))
    lambda_lower = min(float(rayleigh.min()), float(wmin[low_k]))
    lambda_upper_inv = max(float(bilinear.max()), float(smax[high_k]))

    lam = field_.lam
    if lambda_lower < lam * (1 - _TOL) - _TOL:
        k = low_k if wmin[low_k] <= rayleigh.min() else int(np.argmin(rayleigh.min(axis=1)))
        frame = vmin[k] if k == low_k else xi[int(np.argmin(rayleigh[k]))]
        raise EllipticityViolation(
            f"coercivity fails: min quotient {lambda_lower:.6g} < lambda = {lam:.6g}",
            witness=(x[k], t[k], frame.reshape(n, N).T, frame.reshape(n, N).T))
    if lambda_upper_inv > (1 + _TOL) / lam + _TOL:
        k = high_k
        raise EllipticityViolation(
            f"boundedness fails: max ratio {lambda_upper_inv:.6g} > 1/lambda = {1 / lam:.6g}",
            witness=(x[k], t[k], right[k].reshape(n, N).T, left[k].reshape(n, N).T))
    return lambda_lower, lambda_upper_inv


# ---------------------------------------------------------------------------
# families

def _scalar_evaluator(n: int, values: Callable[[np.ndarray, float], np.ndarray]) -> Evaluator:
    eye = np.eye(n)

    def ev(x, t):
        a = values(x, t)
        return a[:, None, None, None, None] * eye[None, :, :, None, None]

    return ev


def identity_field(n: int = 1, N: int = 1) -> CoefficientField:
    tensor = np.einsum("ab,ij->abij", np.eye(n), np.eye(N))

    def ev(x, t):
        return np.broadcast_to(tensor, (len(x),) + tensor.shape).copy()

    return CoefficientField(n, N, ev, 1.0, False, True, "identity", {"n": n, "N": N})


def make_checkerboard(low: float, high: float, cells_per_side: int, n: int = 2,
                      origin: float = 0.0, length: float = 1.0) -> CoefficientField:
    """Scalar piecewise-constant coefficient alternating ``low``/``high``.

    Cells are axis-aligned squares of side ``length / cells_per_side`` starting at
    ``origin``. The declared constant is ``low``, so ``high`` must not exceed
    ``1 / low``.
    """
    if not low > 0:
        raise ValueError(f"low must be positive, got {low}")
    if high < low:
        raise ValueError(f"need low <= high, got {low}, {high}")
    k = int(cells_per_side)
    if k < 1:
        raise ValueError("cells_per_side must be at least 1")
    if high > 1.0 / low * (1 + _TOL):
        raise EllipticityViolation(
            f"high = {high} exceeds 1/low = {1 / low:.6g}; rescale the field",
            witness=None)

    def values(x, t):
        cell = np.floor((x - origin) / length * k).astype(np.int64)
        parity = cell.sum(axis=1) % 2
        return np.where(parity == 0, low, high)

    return CoefficientField(n, 1, _scalar_evaluator(n, values), float(low), False, True,
                            "checkerboard",
                            {"low": low, "high": high, "cells_per_side": k, "n": n})


def make_smooth_scalar(low: float = 0.5, high: float = 1.5, n: int = 2,
                       wavenumber: float = 1.0) -> CoefficientField:
    """a(x) = mid + amp * prod sin(2 pi k x_d); smooth, scalar."""
    mid, amp = 0.5 * (low + high), 0.5 * (high - low)
    lam = min(low, 1.0 / high)

    def values(x, t):
        return mid + amp * np.prod(np.sin(2 * np.pi * wavenumber * x), axis=1)

    return CoefficientField(n, 1, _scalar_evaluator(n, values), lam, False, True,
                            "smooth", {"low": low, "high": high, "n": n})


def make_time_oscillatory(base: CoefficientField, amplitude: float,
                          frequency: float) -> CoefficientField:
    """Multiply ``base`` by 1 + amplitude * sin(frequency * t)."""
    if amplitude < 0:
        raise ValueError("amplitude must be non-negative")
    if amplitude >= base.lam:
        raise ValueError(
            f"amplitude {amplitude} leaves no ellipticity margin (lambda = {base.lam})")
    inner = base.evaluator

    def ev(x, t):
        return (1.0 + amplitude * np.sin(frequency * t)) * inner(x, t)

    return CoefficientField(base.n, base.N, ev, base.lam * (1.0 - amplitude),
                            amplitude > 0 or base.time_dependent, base.symmetric,
                            f"time_oscillatory({base.name})",
                            {**base.params, "amplitude": amplitude, "frequency": frequency})


_SKEW_CAP = 0.2


def _skew_pattern(n: int, N: int) -> np.ndarray:
    """Fixed coupling pattern S[alpha, beta, i, j].

    A rotation between components inside each direction (antisymmetric under
    (alpha, i) <-> (beta, j)) plus a symmetric all-direction coupling of
    distinct components with weight 1/2.
    """
    S = np.zeros((n, n, N, N))
    for i in range(N):
        for j in range(N):
            if i == j:
                continue
            for a in range(n):
                S[a, a, i, j] += 1.0 if i < j else -1.0
                for b in range(n):
                    S[a, b, i, j] += 0.5
    return S


def make_nonsymmetric_system(N: int = 2, skew: float = 0.1, n: int = 2) -> CoefficientField:
    """delta_ab delta_ij + skew * S with S a fixed component-coupling pattern.

    The ellipticity constant is computed from the eigenvalues of the symmetric
    part and the top singular value. Raises ``EllipticityViolation`` if the
    result is not elliptic and ``ValueError`` if |skew| exceeds the 0.2 cap.
    """
    if N < 2:
        raise ValueError("a coupled system needs N >= 2")
    tensor = np.einsum("ab,ij->abij", np.eye(n), np.eye(N)) + skew * _skew_pattern(n, N)
    mat = tensor.transpose(0, 2, 1, 3).reshape(n * N, n * N)
    wmin = np.linalg.eigvalsh(0.5 * (mat + mat.T))[0]
    smax = np.linalg.svd(mat, compute_uv=False)[0]
    lam = min(wmin, 1.0 / smax)
    if lam <= _TOL:
        raise EllipticityViolation(
            f"skew = {skew} destroys ellipticity (symmetric-part eigenvalue {wmin:.4g})",
            witness=(None, None, None, None))
    if abs(skew) > _SKEW_CAP:
        raise ValueError(f"|skew| must be <= {_SKEW_CAP}, got {skew}")

    def ev(x, t):
        return np.broadcast_to(tensor, (len(x),) + tensor.shape).copy()

    field_ = CoefficientField(n, N, ev, float(lam), False, skew == 0, "nonsymmetric",
                              {"N": N, "skew": skew, "n": n})
    validate_ellipticity(field_, space_time_samples=4, frame_samples=50)
    return field_


FAMILIES = {
    "identity": identity_field,
    "checkerboard": make_checkerboard,
    "smooth": make_smooth_scalar,
    "nonsymmetric": make_nonsymmetric_system,
}


def make_field(family: str, n: int, **params) -> CoefficientField:
    """Build a named family; ``amplitude``/``frequency`` wrap it in a time oscillation."""
    amplitude = params.pop("amplitude", None)
    frequency = params.pop("frequency", None)
    if family == "identity":
        f = identity_field(n, int(params.pop("N", 1)))
    elif family == "checkerboard":
        f = make_checkerboard(float(params.pop("low")), float(params.pop("high")),
                              int(params.pop("cells_per_side", 4)), n=n)
    elif family == "smooth":
        f = make_smooth_scalar(float(params.pop("low", 0.5)), float(params.pop("high", 1.5)), n=n)
    elif family == "nonsymmetric":
        f = make_nonsymmetric_system(int(params.pop("N", 2)), float(params.pop("skew", 0.1)), n=n)
    else:
        raise KeyError(f"unknown coefficient family {family!r}")
    if params:
        raise KeyError(f"unused parameters for {family}: {sorted(params)}")
    if amplitude is not None:
        f = make_time_oscillatory(f, float(amplitude), float(frequency if frequency is not None else 1.0))
    return f
