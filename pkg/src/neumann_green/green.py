"""Mollified Neumann Green's functions and their adjoints.

A forward table with pole ``(y, s)`` stores, for each column ``k``, the
backward-Euler evolution of ``Phi_{y,eps} e_k`` on ``[s, s + T]``.  Entry
``values[m, i*P + p, k]`` is ``N^eps_{ik}(x_p, t_m, y, s)``.

An adjoint table with pole ``(x, t)`` stores the adjoint evolution of
``Phi_{x,eps} e_l`` on ``[t - T, t]``.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field as dc_field, replace
from functools import lru_cache

import numpy as np
from scipy import integrate

from .coeffs import CoefficientField
from .errors import (ConservationViolation, GridMismatch, MollifierUnresolvable,
                     OutOfWindow)
from .fem import DiscreteSpace, Quadrature
from .mesh import Mesh, dump_mesh, load_mesh
from .parabolic import (DIRECT_DOF_THRESHOLD, SpaceTimeField, Stepper, march_backward,
                        march_forward, time_grid)

__all__ = [
    "bump_constant",
    "bump_profile",
    "Mollifier",
    "build_mollifier",
    "GreenTable",
    "build_mollified_green",
    "build_adjoint_green",
    "tilde_normalize",
    "check_symmetry",
    "check_representation",
    "evaluate",
    "conservation_error",
    "save_table",
    "load_table",
    "cosine_series_kernel",
]

CONSERVATION_TOL = 1e-8


@lru_cache(maxsize=None)
def bump_constant(n: int) -> float:
    """Normalization ``c_n`` making ``c_n exp(-1/(1-|z|^2))`` integrate to one."""
    if n == 1:
        val, _ = integrate.quad(lambda x: math.exp(-1.0 / (1.0 - x * x)), -1.0, 1.0,
                                epsabs=1e-14, epsrel=1e-13)
    elif n == 2:
        val, _ = integrate.quad(lambda u: math.exp(-1.0 / u), 0.0, 1.0,
                                epsabs=1e-14, epsrel=1e-13)
        val *= math.pi
    else:
        raise ValueError("only n = 1, 2 are supported")
    return 1.0 / val


def bump_profile(z: np.ndarray, n: int) -> np.ndarray:
    """Unit-mass smooth bump evaluated at points ``z`` of shape (k, n)."""
    r2 = np.sum(np.asarray(z, dtype=float) ** 2, axis=-1)
    out = np.zeros_like(r2)
    inside = r2 < 1.0
    out[inside] = bump_constant(n) * np.exp(-1.0 / (1.0 - r2[inside]))
    return out


@dataclass(frozen=True, eq=False)
class Mollifier:
    """Scaled bump ``eps^{-n} Phi((x - y)/eps)`` and its nodal P1 representative.

    Attributes
    ----------
    center, eps
    points, profile : ndarray
        Quadrature points inside the support and the scaled bump values there.
    nodal : ndarray, shape (P,)
        Nonnegative nodal coefficients with discrete integral exactly one.
    """

    center: np.ndarray
    eps: float
    points: np.ndarray
    profile: np.ndarray
    nodal: np.ndarray

    def dofs(self, space: DiscreteSpace, component: int = 0) -> np.ndarray:
        v = np.zeros(space.num_dofs)
        v[component * space.num_nodes:(component + 1) * space.num_nodes] = self.nodal
        return v

    def block(self, space: DiscreteSpace) -> np.ndarray:
        """(dofs, N) matrix whose column ``k`` is ``Phi e_k``."""
        return np.column_stack([self.dofs(space, k) for k in range(space.N)])


def build_mollifier(mesh: Mesh, y, eps: float) -> Mollifier:
    """Project the scaled bump onto P1 and renormalize to unit discrete mass.

    The projection uses the row-summed (lumped) mass, so coefficients are
    ``int Phi phi_p / int phi_p``.  They stay nonnegative and their discrete
    integral equals the exact load sum before renormalization.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    n = mesh.dimension
    if y.shape != (n,):
        raise ValueError(f"pole must have {n} coordinates")
    h = mesh.mesh_size
    if eps < 2.0 * h * (1 - 1e-12):
        raise MollifierUnresolvable(f"eps = {eps:g} is below 2h = {2 * h:g}")
    verts = mesh.nodes[mesh.elements]
    near = np.linalg.norm(verts - y, axis=2).min(axis=1) <= eps + h
    if not near.any():
        raise MollifierUnresolvable("the mollifier support misses the domain")
    sub = max(2, int(math.ceil(8.0 * h / eps)))
    space = DiscreteSpace(mesh, 1)
    q = Quadrature(space, subdivisions=sub)
    pts = q.points[near]                                           # (e, Q, n)
    vals = bump_profile((pts - y) / eps, n) * eps ** (-n)
    wts = q.weights[near]
    load = np.zeros(mesh.num_nodes)
    contrib = (wts * vals)[:, :, None] * q.bary[None, :, :]        # (e, Q, k)
    np.add.at(load, mesh.elements[near], contrib.sum(axis=1))
    total = load.sum()
    if not total > 0:
        raise MollifierUnresolvable("the mollifier has no mass on the mesh")
    lumped = np.asarray(space.mass.sum(axis=1)).ravel()
    nodal = load / lumped
    nodal /= float(nodal @ lumped)
    keep = vals > 0
    return Mollifier(center=y, eps=float(eps), points=pts[keep], profile=vals[keep],
                     nodal=nodal)


@dataclass(eq=False)
class GreenTable:
    """Tabulated mollified Green's function for a single pole, all columns."""

    space: DiscreteSpace
    pole: tuple
    eps: float
    times: np.ndarray
    values: np.ndarray
    field_name: str
    lam: float
    variant: str = "raw"
    kind: str = "forward"
    field: CoefficientField | None = None
    mollifier: Mollifier | None = None
    meta: dict = dc_field(default_factory=dict)

    @property
    def y(self) -> np.ndarray:
        return np.asarray(self.pole[0], dtype=float)

    @property
    def s(self) -> float:
        return float(self.pole[1])

    @property
    def tau(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def N(self) -> int:
        return self.space.N

    @property
    def horizon(self) -> float:
        return float(self.times[-1] - self.times[0])

    def column(self, k: int) -> SpaceTimeField:
        return SpaceTimeField(self.space, self.times, self.values[:, :, k],
                              "forward" if self.kind == "forward" else "backward")

    def integrals(self) -> np.ndarray:
        """(M+1, N, N) spatial integrals; entry [m, i, k] integrates component i of column k."""
        lumped = np.asarray(self.space.mass.sum(axis=0)).ravel()   # 1^T M
        ints = np.einsum("d,mdk->mdk", lumped, self.values)
        return ints.reshape(self.times.size, self.N, self.space.num_nodes, self.N).sum(axis=2)

    def slice_matrix(self, m: int, points) -> np.ndarray:
        """(k, N, N) interpolated values at grid slice ``m``."""
        I = self.space.mesh.interpolation_matrix(points)
        V = self.values[m].reshape(self.N, self.space.num_nodes, self.N)
        return np.stack([np.asarray(I @ V[i]) for i in range(self.N)], axis=1)


def conservation_error(table: GreenTable) -> float:
    """Largest entrywise deviation of the spatial integral from its target."""
    target = np.eye(table.N) if table.variant == "raw" else np.zeros((table.N, table.N))
    return float(np.abs(table.integrals() - target).max())


def _default_horizon(space: DiscreteSpace, lam: float) -> float:
    from .elliptic import poincare_constant
    rho = poincare_constant(space)
    return 8.0 * rho ** 2 / lam


def _grid(eps, horizon, steps, tau):
    if steps is None:
        tau = eps ** 2 if tau is None else tau
        steps = max(1, int(math.ceil(horizon / tau - 1e-9)))
    return steps


def build_mollified_green(space: DiscreteSpace, field_: CoefficientField, Y, eps: float,
                          horizon: float | None = None, steps: int | None = None,
                          tau: float | None = None, stepper: Stepper | None = None,
                          direct_threshold: int = DIRECT_DOF_THRESHOLD,
                          check: bool = True) -> GreenTable:
    """Forward table for the pole ``Y = (y, s)``.

    Parameters
    ----------
    horizon : float, optional
        Window length ``T``; defaults to ``8 rho^2 / lambda``.
    steps, tau : optional
        Either fixes the grid; the default step is ``eps**2``.
    """
    y, s = np.atleast_1d(np.asarray(Y[0], dtype=float)), float(Y[1])
    if horizon is None:
        horizon = _default_horizon(space, field_.lam)
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    steps = _grid(eps, horizon, steps, tau)
    moll = build_mollifier(space.mesh, y, eps)
    times = time_grid(s, s + horizon, steps)
    st = stepper or Stepper(space, field_, times[1] - times[0], direct_threshold)
    if abs(st.tau - (times[1] - times[0])) > 1e-14 * max(1.0, st.tau):
        raise GridMismatch("stepper time step does not match the table grid")
    vals = march_forward(st, moll.block(space), times)
    table = GreenTable(space=space, pole=(tuple(y), s), eps=float(eps), times=times,
                       values=vals, field_name=field_.name, lam=field_.lam,
                       variant="raw", kind="forward", field=field_, mollifier=moll)
    if check:
        err = conservation_error(table)
        if err > CONSERVATION_TOL:
            raise ConservationViolation(
                f"spatial integral deviates from the identity by {err:.3e}")
    return table


def build_adjoint_green(space: DiscreteSpace, field_: CoefficientField, X, eps: float,
                        horizon: float | None = None, steps: int | None = None,
                        tau: float | None = None, stepper: Stepper | None = None,
                        direct_threshold: int = DIRECT_DOF_THRESHOLD,
                        check: bool = True) -> GreenTable:
    """Adjoint table for the pole ``X = (x, t)`` on the window ``[t - T, t]``."""
    x, t = np.atleast_1d(np.asarray(X[0], dtype=float)), float(X[1])
    if horizon is None:
        horizon = _default_horizon(space, field_.lam)
    steps = _grid(eps, horizon, steps, tau)
    moll = build_mollifier(space.mesh, x, eps)
    times = time_grid(t - horizon, t, steps)
    st = stepper or Stepper(space, field_, times[1] - times[0], direct_threshold)
    if abs(st.tau - (times[1] - times[0])) > 1e-14 * max(1.0, st.tau):
        raise GridMismatch("stepper time step does not match the table grid")
    vals = march_backward(st, moll.block(space), times)
    table = GreenTable(space=space, pole=(tuple(x), t), eps=float(eps), times=times,
                       values=vals, field_name=field_.name, lam=field_.lam,
                       variant="raw", kind="adjoint", field=field_, mollifier=moll)
    if check:
        err = conservation_error(table)
        if err > CONSERVATION_TOL:
            raise ConservationViolation(
                f"spatial integral deviates from the identity by {err:.3e}")
    return table


def tilde_normalize(table: GreenTable) -> GreenTable:
    """Subtract the steady state ``I / |Omega|`` on every tabulated slice."""
    if table.variant != "raw":
        raise ValueError("table is already tilde-normalized")
    sp = table.space
    steady = np.zeros((sp.num_dofs, sp.N))
    for k in range(sp.N):
        steady[k * sp.num_nodes:(k + 1) * sp.num_nodes, k] = 1.0 / sp.mesh.domain_measure
    return replace(table, values=table.values - steady[None], variant="tilde",
                   meta=dict(table.meta))


def _grid_index(times: np.ndarray, t: float) -> int:
    tau = times[1] - times[0]
    m = (t - times[0]) / tau
    k = int(round(m))
    if abs(m - k) > 1e-6 or not 0 <= k < times.size:
        raise GridMismatch(f"time {t:g} is not on the table grid")
    return k


def check_symmetry(fwd: GreenTable, adj: GreenTable) -> float:
    """Largest discrepancy between mollified pairings of a forward and an adjoint table.

    Compares ``<Phi_x e_l, N^eps(., t; y, s) e_k>`` with
    ``<Phi_y e_k, N*^eps(., s; x, t) e_l>`` for all ``k, l``.
    """
    if fwd.kind != "forward" or adj.kind != "adjoint":
        raise ValueError("expected a forward and an adjoint table")
    if fwd.space is not adj.space and fwd.space.mesh is not adj.space.mesh:
        raise GridMismatch("tables live on different meshes")
    if abs(fwd.tau - adj.tau) > 1e-12 * fwd.tau or abs(fwd.eps - adj.eps) > 1e-15:
        raise GridMismatch("tables use different time steps or mollifier radii")
    s, t = fwd.s, adj.s
    sp = fwd.space
    M = sp.mass
    if t < s:
        return 0.0
    u = fwd.values[_grid_index(fwd.times, t)]                      # (dofs, N)
    w = adj.values[_grid_index(adj.times, s)]
    Phi_x = adj.mollifier.block(sp)
    Phi_y = fwd.mollifier.block(sp)
    lhs = Phi_x.T @ (M @ u)                                        # [l, k]
    rhs = (Phi_y.T @ (M @ w)).T                                    # [l, k]
    return float(np.abs(lhs - rhs).max())


def check_representation(table: GreenTable, f, stepper: Stepper | None = None) -> float:
    """Relative gap in the identity pairing the table against a volume source.

    ``f`` is an array (M+1, dofs) on the table grid, or a callable ``t -> (dofs,)``.
    The left side pairs the mollifier with the adjoint solution driven by ``f``
    and vanishing at the end of the window; the right side is the space-time
    pairing of the table with ``f`` using right-endpoint time weights.
    """
    if table.kind != "forward" or table.variant != "raw":
        raise ValueError("representation requires a raw forward table")
    if table.field is None:
        raise ValueError("table carries no coefficient field")
    sp, times = table.space, table.times
    F = np.stack([np.asarray(f(t), dtype=float) for t in times]) if callable(f) \
        else np.asarray(f, dtype=float)
    if F.shape != (times.size, sp.num_dofs):
        raise GridMismatch("source does not match the table grid")
    M, tau = sp.mass, table.tau
    fnorm = math.sqrt(tau * sum(float(F[m] @ (M @ F[m])) for m in range(1, times.size)))
    if fnorm == 0.0:
        return 0.0
    st = stepper or Stepper(sp, table.field, tau)
    w0 = march_backward(st, np.zeros(sp.num_dofs), times, F, store=False)
    lhs = table.mollifier.block(sp).T @ (M @ w0)                  # (N,)
    rhs = tau * np.einsum("mdk,md->k", table.values[1:],
                          np.stack([M @ F[m] for m in range(1, times.size)]))
    return float(np.abs(lhs - rhs).max() / fnorm)


def evaluate(table: GreenTable, x, t: float) -> np.ndarray:
    """N x N value at ``(x, t)``: P1 in space, nearest slice in time."""
    t0, t1 = table.times[0], table.times[-1]
    tol = 1e-9 * table.tau
    pts = np.atleast_2d(np.asarray(x, dtype=float)).reshape(1, -1)
    if table.kind == "forward":
        if t < t0 - tol:
            return np.zeros((table.N, table.N))
        if t > t1 + tol:
            raise OutOfWindow(f"t = {t:g} is past the tabulated window ending at {t1:g}")
    else:
        if t > t1 + tol:
            return np.zeros((table.N, table.N))
        if t < t0 - tol:
            raise OutOfWindow(f"t = {t:g} precedes the tabulated window starting at {t0:g}")
    m = int(np.clip(np.rint((t - t0) / table.tau), 0, table.times.size - 1))
    return table.slice_matrix(m, pts)[0]


def cosine_series_kernel(x, t: float, y: float, terms: int = 200, length: float = 1.0):
    """Neumann heat kernel of the interval ``(0, L)`` for the unit-diffusion operator."""
    x = np.asarray(x, dtype=float)
    k = np.arange(1, terms + 1)
    w = np.exp(-(k * math.pi / length) ** 2 * t) * np.cos(k * math.pi * y / length)
    return (1.0 + 2.0 * np.cos(np.multiply.outer(x, k) * math.pi / length) @ w) / length


# persistence -----------------------------------------------------------------

_MAGIC = "NEUMANN-GREEN-TABLE 1"


def _mesh_file(path) -> str:
    return os.fspath(path) + ".mesh"


def save_table(table: GreenTable, path, tag: str = "parabolic") -> None:
    """Text header followed by little-endian float64 payload over (step, dof, column)."""
    sp = table.space
    header = {
        "tag": tag,
        "n": sp.n,
        "N": sp.N,
        "pole_x": " ".join(repr(float(c)) for c in table.y),
        "pole_t": repr(table.s),
        "eps": repr(table.eps),
        "t0": repr(float(table.times[0])),
        "t1": repr(float(table.times[-1])),
        "steps": table.times.size - 1,
        "dofs": sp.num_dofs,
        "field": table.field_name,
        "lambda": repr(table.lam),
        "variant": table.variant,
        "kind": table.kind,
    }
    text = _MAGIC + "\n" + "".join(f"{k} = {v}\n" for k, v in header.items()) + "END\n"
    payload = np.ascontiguousarray(table.values, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(text.encode("ascii"))
        fh.write(payload.tobytes())
    dump_mesh(sp.mesh, _mesh_file(path))


def _read_header(fh) -> dict:
    first = fh.readline().decode("ascii").strip()
    if first != _MAGIC:
        raise ValueError("not a Green table file")
    out = {}
    while True:
        line = fh.readline().decode("ascii")
        if not line:
            raise ValueError("truncated table header")
        line = line.strip()
        if line == "END":
            return out
        k, _, v = line.partition(" = ")
        out[k] = v


def load_table(path, mesh: Mesh | None = None) -> GreenTable:
    with open(path, "rb") as fh:
        hdr = _read_header(fh)
        raw = fh.read()
    mesh = mesh or load_mesh(_mesh_file(path))
    sp = DiscreteSpace(mesh, int(hdr["N"]))
    steps, dofs, N = int(hdr["steps"]), int(hdr["dofs"]), int(hdr["N"])
    if dofs != sp.num_dofs:
        raise GridMismatch("table does not match the supplied mesh")
    vals = np.frombuffer(raw, dtype="<f8").reshape(steps + 1, dofs, N).astype(float)
    times = time_grid(float(hdr["t0"]), float(hdr["t1"]), steps)
    pole = (tuple(float(c) for c in hdr["pole_x"].split()), float(hdr["pole_t"]))
    eps = float(hdr["eps"])
    moll = build_mollifier(mesh, pole[0], eps) if eps >= 2 * mesh.mesh_size * (1 - 1e-12) else None
    return GreenTable(space=sp, pole=pole, eps=eps, times=times, values=vals,
                      field_name=hdr["field"], lam=float(hdr["lambda"]),
                      variant=hdr["variant"], kind=hdr["kind"], mollifier=moll,
                      meta={"tag": hdr["tag"]})


def table_to_csv(table: GreenTable, path, steps=None) -> None:
    """Columns t, node_index, x coordinates, component, column, value."""
    import csv
    sp = table.space
    coord_names = ["x", "y"][:sp.n]
    idx = range(table.times.size) if steps is None else steps
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "node_index", *coord_names, "component", "column", "value"])
        for m in idx:
            V = table.values[m].reshape(sp.N, sp.num_nodes, sp.N)
            for i in range(sp.N):
                for p in range(sp.num_nodes):
                    xs = [repr(float(c)) for c in sp.mesh.nodes[p]]
                    for k in range(sp.N):
                        w.writerow([repr(float(table.times[m])), p, *xs, i, k,
                                    repr(float(V[i, p, k]))])
