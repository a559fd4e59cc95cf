"""Backward-Euler weak solvers for the forward and adjoint Neumann problems.

Forward step (coefficients at the new level)::

    (M + tau K(t_{m+1})) u_{m+1} = M u_m + tau M f_{m+1}

Adjoint step, the exact algebraic transpose of the forward scheme::

    (M + tau K(t_m)^T) w_{m-1} = M w_m + tau M f_m

so that ``u_M^T M g == u_0^T M w_0`` for ``w_M = g`` and zero sources.
"""
from __future__ import annotations

import csv
import math
from collections import OrderedDict
from typing import Callable, Optional

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from .coeffs import CoefficientField
from .errors import LinearSolveFailure
from .fem import DiscreteSpace, assemble_stiffness

__all__ = [
    "SpaceTimeField",
    "Stepper",
    "solve_forward",
    "solve_backward",
    "triple_norm",
    "energy_inequality_check",
    "DIRECT_DOF_THRESHOLD",
]

DIRECT_DOF_THRESHOLD = 50_000
SOLVER_RTOL = 1e-12


class SpaceTimeField:
    """Nodal values of an ``N``-component field on a uniform time grid.

    Parameters
    ----------
    space : DiscreteSpace
    times : ndarray, shape (M+1,)
        Increasing, uniformly spaced.
    values : ndarray, shape (M+1, dofs)
    direction : {"forward", "backward"}
    """

    def __init__(self, space: DiscreteSpace, times, values, direction: str = "forward"):
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=float)
        if values.shape != (times.size, space.num_dofs):
            raise ValueError(f"values shape {values.shape} does not match "
                             f"({times.size}, {space.num_dofs})")
        if direction not in ("forward", "backward"):
            raise ValueError("direction must be 'forward' or 'backward'")
        self.space = space
        self.times = times
        self.values = values
        self.direction = direction

    @property
    def tau(self) -> float:
        return float(self.times[1] - self.times[0]) if self.times.size > 1 else 0.0

    @property
    def steps(self) -> int:
        return self.times.size - 1

    def index_of(self, t: float) -> int:
        """Nearest grid index to ``t``."""
        return int(np.clip(np.rint((t - self.times[0]) / self.tau), 0, self.steps)) \
            if self.steps else 0

    def at(self, t: float) -> np.ndarray:
        return self.values[self.index_of(t)]

    def sample(self, x, t: float) -> np.ndarray:
        """P1 interpolation in space at the nearest time slice; shape (k, N)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.space.n == 1 and x.shape[0] == 1 and x.shape[1] != 1:
            x = x.T
        I = self.space.mesh.interpolation_matrix(x)
        u = self.space.components(self.at(t))                    # (N, P)
        return np.asarray(I @ u.T)

    def window_indices(self, window=None) -> np.ndarray:
        if window is None:
            return np.arange(self.times.size)
        a, b = window
        tol = 1e-9 * max(self.tau, 1e-300)
        return np.flatnonzero((self.times >= a - tol) & (self.times <= b + tol))

    def to_csv(self, path, steps=None) -> None:
        """Write columns t, node_index, x coordinates, component, value."""
        idx = range(self.times.size) if steps is None else steps
        nodes = self.space.mesh.nodes
        n, N, P = self.space.n, self.space.N, self.space.num_nodes
        coord_names = ["x", "y"][:n]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "node_index", *coord_names, "component", "value"])
            for m in idx:
                uc = self.space.components(self.values[m])
                for i in range(N):
                    for p in range(P):
                        w.writerow([repr(float(self.times[m])), p,
                                    *(repr(float(c)) for c in nodes[p]), i,
                                    repr(float(uc[i, p]))])


class _Solver:
    """Factorized or iterative solve for one system matrix and its transpose."""

    def __init__(self, A: sparse.csr_matrix, direct: bool):
        self.A = A.tocsc() if direct else A.tocsr()
        self.direct = direct
        if direct:
            self.lu = spla.splu(self.A)
        else:
            d = self.A.diagonal()
            self.dinv = 1.0 / d

    def solve(self, b: np.ndarray, transpose: bool = False) -> np.ndarray:
        if self.direct:
            return self.lu.solve(b, trans="T" if transpose else "N")
        A = self.A.T.tocsr() if transpose else self.A
        dinv = self.dinv
        P = spla.LinearOperator(A.shape, matvec=lambda v: dinv * v, dtype=float)
        cols = b.reshape(b.shape[0], -1)
        out = np.empty_like(cols)
        for c in range(cols.shape[1]):
            rhs = cols[:, c]
            nb = np.linalg.norm(rhs)
            if nb == 0.0:
                out[:, c] = 0.0
                continue
            x, info = spla.gmres(A, rhs, M=P, rtol=SOLVER_RTOL, atol=0.0,
                                 restart=60, maxiter=2000)
            res = np.linalg.norm(A @ x - rhs) / nb
            if info != 0 or res > 10 * SOLVER_RTOL:
                raise LinearSolveFailure(
                    f"iterative solve stalled at relative residual {res:.3e}")
            out[:, c] = x
        return out.reshape(b.shape)


class Stepper:
    """Backward-Euler system matrices ``M + tau K(t)`` with a factorization cache.

    Time-independent fields are factorized once.  For time-dependent fields a
    small LRU cache keeps recent slices.
    """

    def __init__(self, space: DiscreteSpace, field_: CoefficientField, tau: float,
                 direct_threshold: int = DIRECT_DOF_THRESHOLD, cache_size: int = 8):
        if not tau > 0:
            raise ValueError("tau must be positive")
        self.space = space
        self.field = field_
        self.tau = float(tau)
        self.direct = space.num_dofs <= direct_threshold
        self.M = space.mass
        self._cache: OrderedDict = OrderedDict()
        self._cache_size = cache_size

    def _key(self, t: float):
        return None if not self.field.time_dependent else round(float(t), 12)

    def system(self, t: float) -> _Solver:
        key = self._key(t)
        if key in self._cache:
            self._cache.move_to_end(key)
            return self._cache[key]
        K = assemble_stiffness(self.space, self.field, t)
        s = _Solver((self.M + self.tau * K).tocsr(), self.direct)
        self._cache[key] = s
        if len(self._cache) > self._cache_size:
            self._cache.popitem(last=False)
        return s

    def forward(self, u: np.ndarray, t_new: float, f_new=None) -> np.ndarray:
        rhs = self.M @ (u if f_new is None else u + self.tau * f_new)
        return self.system(t_new).solve(rhs)

    def backward(self, w: np.ndarray, t_old: float, f_old=None) -> np.ndarray:
        rhs = self.M @ (w if f_old is None else w + self.tau * f_old)
        return self.system(t_old).solve(rhs, transpose=True)


def _source(f, times, dofs) -> Callable[[int], Optional[np.ndarray]]:
    if f is None:
        return lambda m: None
    if callable(f):
        return lambda m: np.asarray(f(times[m]), dtype=float)
    arr = np.asarray(f, dtype=float)
    if arr.shape[0] != times.size:
        raise ValueError("source array must have one slice per grid time")
    return lambda m: arr[m]


def time_grid(t_start: float, t_end: float, steps: int) -> np.ndarray:
    if steps < 1:
        raise ValueError("steps must be at least 1")
    if not t_end > t_start:
        raise ValueError("t_end must exceed t_start")
    return t_start + (t_end - t_start) * np.arange(steps + 1) / steps


def march_forward(stepper: Stepper, u0: np.ndarray, times: np.ndarray, f=None,
                  store: bool = True, callback=None):
    """Step ``u0`` (dofs,) or (dofs, c) forward; return stacked slices if ``store``."""
    src = _source(f, times, u0.shape[0])
    u = np.array(u0, dtype=float)
    out = [u.copy()] if store else None
    if callback is not None:
        callback(0, u)
    for m in range(1, times.size):
        u = stepper.forward(u, times[m], src(m))
        if store:
            out.append(u)
        if callback is not None:
            callback(m, u)
    return np.stack(out) if store else u


def march_backward(stepper: Stepper, wT: np.ndarray, times: np.ndarray, f=None,
                   store: bool = True):
    src = _source(f, times, wT.shape[0])
    M = times.size - 1
    w = np.array(wT, dtype=float)
    out = [None] * (M + 1) if store else None
    if store:
        out[M] = w.copy()
    for m in range(M, 0, -1):
        w = stepper.backward(w, times[m], src(m))
        if store:
            out[m - 1] = w
    return np.stack(out) if store else w


def solve_forward(space: DiscreteSpace, field_: CoefficientField, psi, f=None,
                  t_start: float = 0.0, t_end: float = 1.0, steps: int = 100,
                  direct_threshold: int = DIRECT_DOF_THRESHOLD,
                  stepper: Stepper | None = None) -> SpaceTimeField:
    """Backward-Euler solution of the Neumann initial-value problem.

    Parameters
    ----------
    psi : ndarray, shape (dofs,)
        Initial data at ``t_start``.
    f : None, callable ``t -> (dofs,)`` or ndarray (steps+1, dofs)
        Volume source, sampled at the new time level.
    """
    times = time_grid(t_start, t_end, steps)
    tau = times[1] - times[0]
    st = stepper or Stepper(space, field_, tau, direct_threshold)
    vals = march_forward(st, np.asarray(psi, dtype=float), times, f)
    return SpaceTimeField(space, times, vals, "forward")


def solve_backward(space: DiscreteSpace, field_: CoefficientField, psi, f=None,
                   t_start: float = 0.0, t_end: float = 1.0, steps: int = 100,
                   direct_threshold: int = DIRECT_DOF_THRESHOLD,
                   stepper: Stepper | None = None) -> SpaceTimeField:
    """Adjoint solve from terminal data ``psi`` at ``t_end`` down to ``t_start``."""
    times = time_grid(t_start, t_end, steps)
    tau = times[1] - times[0]
    st = stepper or Stepper(space, field_, tau, direct_threshold)
    vals = march_backward(st, np.asarray(psi, dtype=float), times, f)
    return SpaceTimeField(space, times, vals, "backward")


def triple_norm(u: SpaceTimeField, window=None) -> float:
    """Discrete energy norm: gradient energy summed over steps plus peak L2 mass."""
    idx = u.window_indices(window)
    if idx.size == 0:
        raise ValueError("window contains no grid times")
    L, M = u.space.laplace, u.space.mass
    V = u.values[idx]
    grad = np.einsum("md,md->m", V, (L @ V.T).T)
    mass = np.einsum("md,md->m", V, (M @ V.T).T)
    return float(math.sqrt(u.tau * grad[1:].sum() + mass.max()))


def energy_inequality_check(u: SpaceTimeField, psi) -> float:
    """Ratio of the energy norm of ``u`` to the L2 norm of its initial data."""
    nrm = u.space.l2_norm(np.asarray(psi, dtype=float))
    if nrm == 0.0:
        raise ValueError("initial data must be nonzero")
    r = triple_norm(u) / nrm
    if not math.isfinite(r):
        raise ArithmeticError("energy ratio is not finite")
    return r
