"""P1 Galerkin discretization: spaces, mass and stiffness assembly, quadrature.

Degrees of freedom are ordered component-major: dof ``i * P + p`` carries
component ``i`` at node ``p``.
"""
from __future__ import annotations

import math
from functools import cached_property

import numpy as np
from scipy import sparse

from .coeffs import CoefficientField, identity_field
from .errors import CoercivityViolation
from .mesh import Mesh

__all__ = [
    "DiscreteSpace",
    "assemble_mass",
    "assemble_stiffness",
    "assemble_weighted_mass",
    "laplace_stiffness",
    "coercivity_check",
    "reference_rule",
    "Quadrature",
]


def reference_rule(n: int, subdivisions: int = 1):
    """Quadrature on the reference simplex in barycentric coordinates.

    Uses 4-point Gauss-Legendre per segment in 1D and the 7-point degree-5 rule
    per triangle in 2D, composed over a uniform ``subdivisions`` split.
    Weights sum to one.
    """
    s = int(subdivisions)
    if n == 1:
        g, w = np.polynomial.legendre.leggauss(4)
        g, w = 0.5 * (g + 1.0), 0.5 * w
        pts = np.concatenate([(k + g) / s for k in range(s)])
        wts = np.tile(w / s, s)
        return np.column_stack([1.0 - pts, pts]), wts

    r15 = math.sqrt(15.0)
    a, b = (6 - r15) / 21, (9 + 2 * r15) / 21
    c, d = (6 + r15) / 21, (9 - 2 * r15) / 21
    bary = np.array([
        [1 / 3, 1 / 3, 1 / 3],
        [a, a, b], [a, b, a], [b, a, a],
        [c, c, d], [c, d, c], [d, c, c],
    ])
    w = np.array([9 / 40] + [(155 - r15) / 1200] * 3 + [(155 + r15) / 1200] * 3)
    # reference triangle (0,0), (1,0), (0,1): point = l1 * e1 + l2 * e2
    ref = bary[:, 1:]
    sub = []
    for i in range(s):
        for j in range(s - i):
            p0 = np.array([i, j]) / s
            sub.append((p0, p0 + [1 / s, 0], p0 + [0, 1 / s]))
            if i + j < s - 1:
                q0 = p0 + [1 / s, 1 / s]
                sub.append((q0, q0 - [0, 1 / s], q0 - [1 / s, 0]))
    pts = []
    for v0, v1, v2 in sub:
        pts.append(v0 + ref[:, :1] * (v1 - v0) + ref[:, 1:] * (v2 - v0))
    pts = np.concatenate(pts)
    wts = np.tile(w, len(sub)) / len(sub)
    return np.column_stack([1.0 - pts.sum(axis=1), pts]), wts


class DiscreteSpace:
    """Continuous piecewise-linear vector fields with ``N`` components."""

    def __init__(self, mesh: Mesh, N: int = 1):
        if N < 1:
            raise ValueError("N must be at least 1")
        self.mesh = mesh
        self.N = int(N)

    @property
    def n(self) -> int:
        return self.mesh.dimension

    @property
    def num_nodes(self) -> int:
        return self.mesh.num_nodes

    @property
    def num_dofs(self) -> int:
        return self.N * self.mesh.num_nodes

    def dof(self, component: int, node) -> np.ndarray:
        return component * self.num_nodes + np.asarray(node)

    @cached_property
    def element_dofs(self) -> np.ndarray:
        """(E, N, n+1) global dof indices per element."""
        el = self.mesh.elements
        return np.stack([i * self.num_nodes + el for i in range(self.N)], axis=1)

    @cached_property
    def basis_gradients(self) -> np.ndarray:
        """(E, n+1, n) constant gradients of the barycentric hat functions."""
        verts = self.mesh.nodes[self.mesh.elements]
        B = np.swapaxes(verts[:, 1:, :] - verts[:, :1, :], 1, 2)   # columns v_k - v_0
        Binv = np.linalg.inv(B)                                      # rows: grad lambda_k
        g = np.concatenate([-Binv.sum(axis=1, keepdims=True), Binv], axis=1)
        return g

    def constant(self, component: int, value: float = 1.0) -> np.ndarray:
        v = np.zeros(self.num_dofs)
        v[component * self.num_nodes:(component + 1) * self.num_nodes] = value
        return v

    def interpolate(self, func) -> np.ndarray:
        """Nodal interpolant of ``func(x) -> (P,) or (P, N)``."""
        vals = np.asarray(func(np.array(self.mesh.nodes)), dtype=float)
        if vals.ndim == 1:
            vals = np.tile(vals[:, None], (1, self.N)) if self.N > 1 else vals[:, None]
        return vals.T.reshape(-1)

    def components(self, u: np.ndarray) -> np.ndarray:
        """View (N, P) of a dof vector (or (N, P, k) for a (dofs, k) array)."""
        u = np.asarray(u)
        return u.reshape((self.N, self.num_nodes) + u.shape[1:])

    def element_gradients(self, u: np.ndarray) -> np.ndarray:
        """(E, N, n) gradients of a dof vector on each element; (E, N, n, c) for (dofs, c)."""
        uc = self.components(u)[:, self.mesh.elements]              # (N, E, n+1, ...)
        return np.einsum("iek...,ekd->eid...", uc, self.basis_gradients)

    @cached_property
    def mass(self) -> sparse.csr_matrix:
        return assemble_mass(self)

    @cached_property
    def laplace(self) -> sparse.csr_matrix:
        return laplace_stiffness(self)

    def integral(self, u: np.ndarray) -> np.ndarray:
        """Per-component integral of a dof vector (or columns of a dof array)."""
        Mu = self.mass @ u
        return self.components(Mu).sum(axis=1)

    def l2_norm(self, u: np.ndarray) -> float:
        return float(np.sqrt(max(u @ (self.mass @ u), 0.0)))


def _blockwise(space: DiscreteSpace, local: np.ndarray) -> sparse.csr_matrix:
    """Assemble local (E, N, n+1, N, n+1) blocks into a global sparse matrix."""
    dofs = space.element_dofs                                       # (E, N, k)
    E, N, k = dofs.shape
    rows = np.broadcast_to(dofs[:, :, :, None, None], (E, N, k, N, k))
    cols = np.broadcast_to(dofs[:, None, None, :, :], (E, N, k, N, k))
    A = sparse.coo_matrix((local.ravel(), (rows.ravel(), cols.ravel())),
                          shape=(space.num_dofs, space.num_dofs))
    return A.tocsr()


def _scalar_local_mass(mesh: Mesh) -> np.ndarray:
    n = mesh.dimension
    ref = (np.ones((n + 1, n + 1)) + np.eye(n + 1)) / ((n + 1) * (n + 2))
    return mesh.element_measures[:, None, None] * ref[None]


def assemble_mass(space: DiscreteSpace) -> sparse.csr_matrix:
    """Consistent P1 mass matrix, block-diagonal over components."""
    loc = _scalar_local_mass(space.mesh)
    eye = np.eye(space.N)
    local = np.einsum("epq,ij->eipjq", loc, eye)
    return _blockwise(space, local)


def assemble_weighted_mass(space: DiscreteSpace, weight: np.ndarray) -> sparse.csr_matrix:
    """Matrix of int w phi_p phi_q for a nodal (P,) weight ``w`` interpolated in P1."""
    mesh = space.mesh
    n = mesh.dimension
    k = n + 1
    T = np.empty((k, k, k))
    for p in range(k):
        for q in range(k):
            for r in range(k):
                mult = np.bincount([p, q, r], minlength=k)
                T[p, q, r] = math.factorial(n) * np.prod([math.factorial(m) for m in mult]) \
                    / math.factorial(n + 3)
    w = np.asarray(weight, dtype=float)[mesh.elements]              # (E, k)
    loc = mesh.element_measures[:, None, None] * np.einsum("pqr,er->epq", T, w)
    local = np.einsum("epq,ij->eipjq", loc, np.eye(space.N))
    return _blockwise(space, local)


def assemble_stiffness(space: DiscreteSpace, field_: CoefficientField, t: float = 0.0) -> sparse.csr_matrix:
    """Stiffness matrix of the bilinear form with coefficients frozen at time ``t``.

    Coefficients are sampled once per element at the barycenter; entry
    (i p, j q) is ``|T| a^{ab}_{ij} d_b phi_q d_a phi_p``.
    """
    if field_.n != space.n or field_.N != space.N:
        raise ValueError(f"field is (n={field_.n}, N={field_.N}) but space is "
                         f"(n={space.n}, N={space.N})")
    A = field_.evaluate(space.mesh.barycenters, t)                 # (E, n, n, N, N)
    G = space.basis_gradients                                       # (E, k, n)
    vol = space.mesh.element_measures
    local = np.einsum("e,eabij,epa,eqb->eipjq", vol, A, G, G, optimize=True)
    return _blockwise(space, local)


def laplace_stiffness(space: DiscreteSpace) -> sparse.csr_matrix:
    return assemble_stiffness(space, identity_field(space.n, space.N), 0.0)


def coercivity_check(space: DiscreteSpace, field_: CoefficientField, t: float = 0.0,
                     samples: int = 200, seed: int = 0) -> float:
    """Minimum of u.K(t)u / u.K_lap u over random non-constant dof vectors."""
    K = assemble_stiffness(space, field_, t)
    L = space.laplace
    rng = np.random.default_rng(seed)
    worst = math.inf
    for _ in range(samples):
        u = rng.standard_normal(space.num_dofs)
        uc = space.components(u)
        uc -= uc.mean(axis=1, keepdims=True)
        den = u @ (L @ u)
        if den <= 1e-300:
            continue
        r = (u @ (K @ u)) / den
        if r < worst:
            worst, witness = r, u.copy()
        if r < field_.lam - 1e-10:
            raise CoercivityViolation(
                f"discrete coercivity ratio {r:.6g} below lambda = {field_.lam:.6g}",
                witness=u)
    return worst


class Quadrature:
    """Element quadrature points with barycentric interpolation of P1 fields."""

    def __init__(self, space: DiscreteSpace, subdivisions: int = 1):
        self.space = space
        mesh = space.mesh
        bary, w = reference_rule(mesh.dimension, subdivisions)
        verts = mesh.nodes[mesh.elements]                           # (E, k, n)
        self.bary = bary
        self.points = np.einsum("qk,ekd->eqd", bary, verts)         # (E, Q, n)
        self.weights = mesh.element_measures[:, None] * w[None, :]  # (E, Q)

    @property
    def flat_points(self) -> np.ndarray:
        return self.points.reshape(-1, self.space.n)

    def values(self, u: np.ndarray) -> np.ndarray:
        """(E, Q, N) values of dof vector ``u``; (E, Q, N, c) for a (dofs, c) array."""
        uc = self.space.components(u)[:, self.space.mesh.elements]  # (N, E, k, ...)
        out = np.einsum("qk,iek...->eqi...", self.bary, uc)
        return out

    @cached_property
    def interpolation(self) -> sparse.csr_matrix:
        """Sparse (E*Q, P) map from scalar nodal values to quadrature-point values."""
        el = self.space.mesh.elements
        E, k = el.shape
        Q = self.bary.shape[0]
        rows = np.repeat(np.arange(E * Q), k)
        cols = np.repeat(el, Q, axis=0).ravel()
        vals = np.tile(self.bary, (E, 1)).ravel()
        return sparse.csr_matrix((vals, (rows, cols)), shape=(E * Q, self.space.num_nodes))

    def masked_mass(self, mask: np.ndarray) -> sparse.csr_matrix:
        """Scalar (P, P) matrix of the quadrature form ``sum_q w_q mask_q phi_a phi_b``."""
        B = self.interpolation
        W = sparse.diags((self.weights * mask).ravel())
        return (B.T @ W @ B).tocsr()

    def integrate(self, f_vals: np.ndarray, mask: np.ndarray | None = None) -> float:
        w = self.weights if mask is None else self.weights * mask
        return float(np.sum(w * f_vals))
