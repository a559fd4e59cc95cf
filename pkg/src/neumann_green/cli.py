"""Experiment runner: config parsing, check pipeline, reports and persisted tables.

A config is a flat ``key = value`` file split into bracketed sections::

    [experiment]
    name = interval_identity
    description = ...
    seed = 0

    [domain]
    shape = interval

    [field]
    family = identity

    [discretization]
    h = 1/256
    tau = 1e-4
    eps = 1/64

    [poles]
    points = 0.5; 0.3

    [verify]
    checks = oracle, conservation

    [oracle]            # optional per-check parameters
    tol = 0.02

Numbers accept fractions (``1/64``).  Lists are comma separated; point
lists separate points by ``;`` and coordinates by whitespace.
"""
from __future__ import annotations

import argparse
import logging
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field
from fractions import Fraction
from pathlib import Path
from typing import Callable

import numpy as np

from . import elliptic as ell
from . import estimates as est
from . import green
from .coeffs import FAMILIES, CoefficientField, make_field
from .errors import ConfigError, NeumannGreenError
from .estimates import EstimateReport
from .fem import DiscreteSpace
from .mesh import (Mesh, build_interval_mesh, build_l_shape_mesh, build_polygon_mesh,
                   build_rectangle_mesh)
from .parabolic import DIRECT_DOF_THRESHOLD

__all__ = [
    "ExperimentConfig",
    "CHECKS",
    "OUTPUT_ENV",
    "parse_config",
    "parse_config_text",
    "load_config",
    "bundled_configs",
    "list_bundled",
    "run_experiment",
    "run",
    "export",
    "main",
]

log = logging.getLogger(__name__)

OUTPUT_ENV = "NEUMANN_GREEN_OUTPUT"
CONFIG_DIR = Path(__file__).with_name("configs")


# value parsers ---------------------------------------------------------------

def _number(text: str) -> float:
    t = text.strip().lower()
    if t in ("inf", "+inf", "infinity"):
        return math.inf
    return float(Fraction(t))


def _integer(text: str) -> int:
    v = _number(text)
    if v != int(v):
        raise ValueError(f"expected an integer, got {text!r}")
    return int(v)


def _floats(text: str) -> list:
    return [_number(p) for p in text.replace(",", " ").split()]


def _points(text: str) -> list:
    return [tuple(_floats(p)) for p in text.split(";") if p.strip()]


def _point(text: str) -> tuple:
    pts = _points(text)
    if len(pts) != 1:
        raise ValueError("expected a single point")
    return pts[0]


def _boolean(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _names(text: str) -> list:
    return [p.strip() for p in text.split(",") if p.strip()]


def _text(text: str) -> str:
    return text.strip()


def _field_specs(text: str) -> list:
    """``family key=value ...; family ...`` into a list of parameter dicts."""
    out = []
    for chunk in text.split(";"):
        words = chunk.split()
        if not words:
            continue
        spec = {"family": words[0]}
        for w in words[1:]:
            k, sep, v = w.partition("=")
            if not sep:
                raise ValueError(f"expected key=value in field spec, got {w!r}")
            spec[k] = v
        out.append(spec)
    return out


_SCHEMA = {
    "experiment": {"name": _text, "description": _text, "seed": _integer,
                   "workers": _integer, "output": _text, "save_tables": _boolean},
    "domain": {"shape": _text, "a": _number, "b": _number, "x0": _number, "x1": _number,
               "y0": _number, "y1": _number, "vertices": _points},
    "field": {"family": _text, "n": _integer, "low": _number, "high": _number,
              "cells_per_side": _integer, "skew": _number, "amplitude": _number,
              "frequency": _number},
    "discretization": {"h": _number, "cells": _integer, "tau": _number,
                       "tau_factor": _number, "eps": _number, "horizon": _number,
                       "direct_threshold": _integer},
    "poles": {"points": _points, "time": _number, "random": _integer, "margin": _number},
    "verify": {"checks": _names},
}

_SHAPES = ("interval", "rectangle", "square", "l_shape", "polygon")


# check registry ----------------------------------------------------------------

@dataclass(frozen=True)
class Check:
    name: str
    bound: str
    params: dict
    func: Callable


CHECKS: dict = {}


def _check(name: str, bound: str, **params):
    """Register ``func(ctx, params) -> EstimateReport`` with ``(parser, default)`` params."""
    def deco(func):
        CHECKS[name] = Check(name, bound, params, func)
        return func
    return deco


# config ---------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    """Validated experiment description."""

    name: str
    description: str
    seed: int
    domain: dict
    field_params: dict
    h: float
    eps: float
    poles: list
    checks: list                       # [(name, params)]
    tau: float | None = None
    tau_factor: float | None = None
    horizon: float | None = None
    cells: int | None = None
    pole_time: float = 0.0
    workers: int = 1
    output: str | None = None
    save_tables: bool = False
    direct_threshold: int = DIRECT_DOF_THRESHOLD
    source: str = "<config>"
    text: str = ""

    @property
    def dimension(self) -> int:
        return 1 if self.domain["shape"] == "interval" else 2

    def tau_for(self, eps: float) -> float:
        if self.tau is not None:
            return self.tau
        return (self.tau_factor if self.tau_factor is not None else 1.0) * eps ** 2

    def build_field(self) -> CoefficientField:
        return _make_field(self.field_params, self.dimension)


def _make_field(params: dict, n: int) -> CoefficientField:
    p = dict(params)
    family = p.pop("family")
    if "n" in p:
        p["N"] = p.pop("n")
    return make_field(family, n, **p)


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Split raw text into ``{section: {key: (value, line)}}``."""
    sections: dict = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError("unterminated section header", lineno)
            current = line[1:-1].strip().lower()
            if not current:
                raise ConfigError("empty section name", lineno)
            if current in sections:
                raise ConfigError(f"duplicate section [{current}]", lineno)
            sections[current] = {}
            continue
        if current is None:
            raise ConfigError("key outside of any section", lineno)
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"expected 'key = value', got {line!r}", lineno)
        key = key.strip().lower()
        if not key:
            raise ConfigError("empty key", lineno)
        if key in sections[current]:
            raise ConfigError(f"duplicate key {key!r} in [{current}]", lineno)
        sections[current][key] = (value.strip(), lineno)
    return sections


def _convert(section: str, key: str, raw, parser):
    value, line = raw
    try:
        return parser(value)
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"[{section}] {key}: {exc}", line) from None


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    """Parse and validate a config; raises ConfigError with the offending line."""
    raw = parse_config_text(text, source)
    for sec, entries in raw.items():
        if sec in _SCHEMA:
            allowed = _SCHEMA[sec]
        elif sec in CHECKS:
            allowed = {k: v[0] for k, v in CHECKS[sec].params.items()}
        else:
            first = min((ln for _, ln in entries.values()), default=None)
            raise ConfigError(f"unknown section [{sec}]", first)
        for key, (_, line) in entries.items():
            if key not in allowed:
                raise ConfigError(f"unknown key {key!r} in [{sec}]", line)

    def get(sec, key, default=None, required=False):
        entry = raw.get(sec, {}).get(key)
        if entry is None:
            if required:
                raise ConfigError(f"missing required key [{sec}] {key}")
            return default
        return _convert(sec, key, entry, _SCHEMA[sec][key])

    def line_of(sec, key):
        entry = raw.get(sec, {}).get(key)
        return entry[1] if entry else None

    name = get("experiment", "name", required=True)
    seed = get("experiment", "seed", required=True)
    workers = get("experiment", "workers", 1)
    if workers < 1:
        raise ConfigError("workers must be at least 1", line_of("experiment", "workers"))

    shape = get("domain", "shape", required=True)
    if shape not in _SHAPES:
        raise ConfigError(f"unknown domain shape {shape!r}", line_of("domain", "shape"))
    domain = {"shape": shape}
    for k in ("a", "b", "x0", "x1", "y0", "y1", "vertices"):
        v = get("domain", k)
        if v is not None:
            domain[k] = v
    if shape == "polygon" and "vertices" not in domain:
        raise ConfigError("polygon domains need vertices")

    field_params = {k: v[0] for k, v in raw.get("field", {}).items()}
    family = field_params.get("family")
    if family is None:
        raise ConfigError("missing required key [field] family")
    if family not in FAMILIES:
        raise ConfigError(f"unknown coefficient family {family!r}", line_of("field", "family"))
    for k in list(field_params):
        if k != "family":
            field_params[k] = get("field", k)
    n = 1 if shape == "interval" else 2
    try:
        _make_field(field_params, n)
    except (KeyError, ValueError, NeumannGreenError) as exc:
        raise ConfigError(f"invalid field: {exc}", line_of("field", "family")) from None

    cells = get("discretization", "cells")
    h = get("discretization", "h")
    if h is None and cells is not None and shape == "interval":
        h = (domain.get("b", 1.0) - domain.get("a", 0.0)) / cells
    if h is None or not h > 0:
        raise ConfigError("discretization needs a positive mesh size h",
                          line_of("discretization", "h"))
    eps = get("discretization", "eps", required=True)
    if eps < 2 * h * (1 - 1e-12):
        raise ConfigError(f"eps = {eps:.6g} is below twice the mesh size h = {h:.6g}",
                          line_of("discretization", "eps"))
    tau = get("discretization", "tau")
    tau_factor = get("discretization", "tau_factor")
    if tau is not None and tau_factor is not None:
        raise ConfigError("give either tau or tau_factor, not both",
                          line_of("discretization", "tau_factor"))
    if tau is not None and not 0 < tau <= eps ** 2 * (1 + 1e-12):
        raise ConfigError(f"tau = {tau:.6g} must lie in (0, eps^2 = {eps ** 2:.6g}]",
                          line_of("discretization", "tau"))
    if tau_factor is not None and not 0 < tau_factor <= 1:
        raise ConfigError("tau_factor must lie in (0, 1]", line_of("discretization", "tau_factor"))
    horizon = get("discretization", "horizon")
    if horizon is not None and not horizon > 0:
        raise ConfigError("horizon must be positive", line_of("discretization", "horizon"))

    points = get("poles", "points", [])
    for p in points:
        if len(p) != n:
            raise ConfigError(f"pole {p} needs {n} coordinates", line_of("poles", "points"))
    nrand = get("poles", "random", 0)
    margin = get("poles", "margin", eps)
    if nrand:
        points = points + [tuple(p) for p in _random_points(domain, n, nrand, seed, margin)]

    names = get("verify", "checks", required=True)
    checks = []
    for c in names:
        if c not in CHECKS:
            raise ConfigError(f"unknown check {c!r}", line_of("verify", "checks"))
        params = {}
        for key, (parser, default) in CHECKS[c].params.items():
            entry = raw.get(c, {}).get(key)
            params[key] = default if entry is None else _convert(c, key, entry, parser)
        checks.append((c, params))
    for sec in raw:
        if sec in CHECKS and sec not in names:
            first = min(ln for _, ln in raw[sec].values()) if raw[sec] else None
            raise ConfigError(f"parameters given for unselected check [{sec}]", first)
    for c, params in checks:
        for e in params.get("eps_values") or ():
            if e < 2 * h * (1 - 1e-12):
                raise ConfigError(f"[{c}] eps_values entry {e:.6g} is below twice h",
                                  line_of(c, "eps_values"))
            if tau is not None and tau > e ** 2 * (1 + 1e-12):
                raise ConfigError(f"[{c}] tau exceeds eps^2 for eps = {e:.6g}",
                                  line_of(c, "eps_values"))

    return ExperimentConfig(
        name=name, description=get("experiment", "description", ""), seed=seed,
        domain=domain, field_params=field_params, h=h, eps=eps, poles=points,
        checks=checks, tau=tau, tau_factor=tau_factor, horizon=horizon, cells=cells,
        pole_time=get("poles", "time", 0.0), workers=workers,
        output=get("experiment", "output"), save_tables=get("experiment", "save_tables", False),
        direct_threshold=get("discretization", "direct_threshold", DIRECT_DOF_THRESHOLD),
        source=source, text=text)


def _resolve(path) -> Path:
    p = Path(path)
    if p.is_file():
        return p
    cand = CONFIG_DIR / f"{path}.cfg"
    if cand.is_file():
        return cand
    raise ConfigError(f"no config file or bundled config named {str(path)!r}")


def load_config(path) -> ExperimentConfig:
    p = _resolve(path)
    return parse_config(p.read_text(), str(p))


# geometry helpers --------------------------------------------------------------------

def build_domain(cfg: ExperimentConfig) -> Mesh:
    d = cfg.domain
    shape = d["shape"]
    if shape == "interval":
        a, b = d.get("a", 0.0), d.get("b", 1.0)
        cells = cfg.cells or max(1, int(round((b - a) / cfg.h)))
        return build_interval_mesh(a, b, cells)
    if shape in ("rectangle", "square"):
        return build_rectangle_mesh(d.get("x0", 0.0), d.get("x1", 1.0),
                                    d.get("y0", 0.0), d.get("y1", 1.0), cfg.h)
    if shape == "l_shape":
        return build_l_shape_mesh(cfg.h)
    return build_polygon_mesh(d["vertices"], cfg.h)


def _domain_box(domain: dict, n: int):
    if n == 1:
        return np.array([domain.get("a", 0.0)]), np.array([domain.get("b", 1.0)])
    if domain["shape"] == "polygon":
        v = np.asarray(domain["vertices"], dtype=float)
        return v.min(axis=0), v.max(axis=0)
    if domain["shape"] == "l_shape":
        return np.zeros(2), np.ones(2)
    return (np.array([domain.get("x0", 0.0), domain.get("y0", 0.0)]),
            np.array([domain.get("x1", 1.0), domain.get("y1", 1.0)]))


def _inside(domain: dict, p: np.ndarray, margin: float) -> bool:
    lo, hi = _domain_box(domain, p.size)
    if np.any(p < lo + margin) or np.any(p > hi - margin):
        return False
    if domain["shape"] == "l_shape":
        # the unit square minus its upper-right quarter
        return not (p[0] > 0.5 - margin and p[1] > 0.5 - margin)
    return True


def _random_points(domain: dict, n: int, count: int, seed: int, margin: float) -> np.ndarray:
    """Rejection-sampled points at least ``margin`` from the box boundary."""
    rng = np.random.default_rng([seed, 7])
    lo, hi = _domain_box(domain, n)
    out = []
    for _ in range(1000 * count):
        p = lo + (hi - lo) * rng.random(n)
        if _inside(domain, p, margin):
            out.append(p)
            if len(out) == count:
                return np.array(out)
    raise ConfigError("could not place random poles inside the domain")


# run context -----------------------------------------------------------------------

class Context:
    """Shared immutable inputs plus a table cache filled on the main thread."""

    def __init__(self, cfg: ExperimentConfig, pool: ThreadPoolExecutor):
        self.cfg = cfg
        self.pool = pool
        self.field = cfg.build_field()
        self.mesh = build_domain(cfg)
        self.space = DiscreteSpace(self.mesh, self.field.N)
        self.results: dict = {}
        self._tables: dict = {}
        self._meshes = [self.mesh]

    @property
    def seed(self) -> int:
        return self.cfg.seed

    @property
    def n(self) -> int:
        return self.mesh.dimension

    @property
    def poles(self) -> list:
        if not self.cfg.poles:
            raise ConfigError("this check needs at least one pole in [poles]")
        return self.cfg.poles

    def refined(self, level: int) -> Mesh:
        while len(self._meshes) <= level:
            self._meshes.append(self._meshes[-1].refine())
        return self._meshes[level]

    def map(self, fn, items) -> list:
        items = list(items)
        if len(items) <= 1 or self.pool is None:
            return [fn(x) for x in items]
        return list(self.pool.map(fn, items))

    def forward_tables(self, poles=None, space=None, field_=None, eps=None, tau=None,
                       horizon=None, s=None) -> list:
        space = space or self.space
        field_ = field_ or self.field
        eps = self.cfg.eps if eps is None else eps
        tau = self.cfg.tau_for(eps) if tau is None else tau
        horizon = self.cfg.horizon if horizon is None else horizon
        s = self.cfg.pole_time if s is None else s
        poles = self.poles if poles is None else poles
        keys = [("forward", id(space.mesh), space.N, id(field_), tuple(p), s, eps, tau, horizon)
                for p in poles]
        missing = [(k, p) for k, p in zip(keys, poles) if k not in self._tables]

        def build(item):
            _, p = item
            return green.build_mollified_green(space, field_, (np.asarray(p), s), eps,
                                               horizon=horizon, tau=tau,
                                               direct_threshold=self.cfg.direct_threshold,
                                               check=False)
        for (k, _), tb in zip(missing, self.map(build, missing)):
            self._tables[k] = tb
        return [self._tables[k] for k in keys]

    def elliptic_tables(self, poles=None, space=None, field_=None, eps=None, tau=None,
                        tol=1e-6) -> list:
        space = space or self.space
        field_ = field_ or self.field
        eps = self.cfg.eps if eps is None else eps
        poles = self.poles if poles is None else poles
        keys = [("elliptic", id(space.mesh), space.N, id(field_), tuple(p), eps, tau, tol)
                for p in poles]
        missing = [(k, p) for k, p in zip(keys, poles) if k not in self._tables]
        # the Poincare constant is cached per mesh; compute it once before fanning out
        ell.poincare_constant(space)

        def build(item):
            _, p = item
            return ell.build_elliptic_neumann(space, field_, p, eps, tol=tol, tau=tau,
                                              direct_threshold=self.cfg.direct_threshold)
        for (k, _), tb in zip(missing, self.map(build, missing)):
            self._tables[k] = tb
        return [self._tables[k] for k in keys]

    def persisted(self) -> list:
        return list(self._tables.values())


def _label(i: int, f: CoefficientField) -> str:
    return f"{i}_" + "".join(c if c.isalnum() else "_" for c in f.name).strip("_")


def _fields(ctx: Context, specs) -> list:
    if not specs:
        return [ctx.field]
    out = []
    for spec in specs:
        try:
            out.append(_make_field(spec, ctx.n))
        except (KeyError, ValueError, NeumannGreenError) as exc:
            raise ConfigError(f"invalid field spec {spec}: {exc}") from None
    return out


def _space_for(ctx: Context, f: CoefficientField) -> DiscreteSpace:
    return ctx.space if f.N == ctx.space.N else DiscreteSpace(ctx.mesh, f.N)


# checks ----------------------------------------------------------------------------

@_check("oracle", "agreement of the tabulated kernel with the interval cosine series",
        t_min=(_number, 0.01), t_max=(_number, 0.5), tol=(_number, 0.02),
        terms=(_integer, 200))
def _oracle(ctx: Context, p: dict) -> EstimateReport:
    if ctx.n != 1 or ctx.field.name != "identity" or ctx.space.N != 1:
        raise ConfigError("the oracle check needs the scalar identity field on an interval")
    lo, hi = ctx.mesh.bounding_box
    length = float(hi[0] - lo[0])
    x = ctx.mesh.nodes[:, 0] - lo[0]
    rep = EstimateReport(title="cosine-series oracle")
    for i, tb in enumerate(ctx.forward_tables()):
        lag = tb.times - tb.s
        idx = np.flatnonzero((lag >= p["t_min"] - 1e-12) & (lag <= p["t_max"] + 1e-12))
        if idx.size == 0:
            raise ConfigError("oracle window holds no tabulated times")
        worst = 0.0
        for m in idx:
            K = green.cosine_series_kernel(x, lag[m], tb.y[0] - lo[0], p["terms"], length)
            worst = max(worst, float(np.abs(tb.values[m][:, 0] - K).max() / np.abs(K).max()))
        rep.add(f"rel_linf_pole{i}", worst, p["tol"], "<=", seed=ctx.seed)
    return rep


@_check("conservation", "conservation of the kernel's spatial integral",
        fields=(_field_specs, None), tol=(_number, green.CONSERVATION_TOL))
def _conservation(ctx: Context, p: dict) -> EstimateReport:
    rep = EstimateReport(title="mass conservation")
    for i, f in enumerate(_fields(ctx, p["fields"])):
        tabs = ctx.forward_tables(space=_space_for(ctx, f), field_=f)
        err = max(green.conservation_error(t) for t in tabs)
        rep.add(f"max_error_{_label(i, f)}", err, p["tol"], "<=")
    return rep


@_check("saturation", "uniform convergence of the kernel to the inverse volume",
        factor=(_number, 20.0), tol=(_number, 1e-3))
def _saturation(ctx: Context, p: dict) -> EstimateReport:
    if ctx.space.N != 1:
        raise ConfigError("the saturation check needs a scalar field")
    rho = ell.poincare_constant(ctx.space)
    horizon = p["factor"] * rho ** 2 / ctx.field.lam
    vol = ctx.mesh.domain_measure
    rep = EstimateReport(title="long-time saturation")
    for i, tb in enumerate(ctx.forward_tables(horizon=horizon)):
        dev = float(np.abs(tb.values[-1] * vol - 1.0).max())
        rep.add(f"deviation_pole{i}", dev, p["tol"], "<=")
    return rep


@_check("symmetry", "duality between forward and adjoint mollified kernels",
        pairs=(_integer, 20), fields=(_field_specs, None), max_steps=(_integer, 40),
        tol=(_number, 1e-9))
def _symmetry(ctx: Context, p: dict) -> EstimateReport:
    rep = EstimateReport(title="forward/adjoint duality")
    cfg = ctx.cfg
    tau = cfg.tau_for(cfg.eps)
    for i, f in enumerate(_fields(ctx, p["fields"])):
        sp = _space_for(ctx, f)
        rng = np.random.default_rng([ctx.seed, 11, i])
        draws = []
        for _ in range(p["pairs"]):
            y, x = _random_points(cfg.domain, ctx.n, 2, int(rng.integers(2 ** 31)), cfg.eps)
            s = float(rng.integers(0, 10)) * tau
            k = int(rng.integers(1, p["max_steps"] + 1))
            draws.append((y, x, s, k))

        def gap(d):
            y, x, s, k = d
            fw = green.build_mollified_green(sp, f, (y, s), cfg.eps, horizon=k * tau, steps=k,
                                             check=False)
            ad = green.build_adjoint_green(sp, f, (x, s + k * tau), cfg.eps, horizon=k * tau,
                                           steps=k, check=False)
            return green.check_symmetry(fw, ad)
        gaps = ctx.map(gap, draws)
        rep.add(f"max_gap_{_label(i, f)}", max(gaps), p["tol"], "<=", seed=ctx.seed)
    return rep


@_check("representation", "representation of solutions by pairing the kernel with a source",
        steps=(_integer, 50), tol=(_number, 1e-9))
def _representation(ctx: Context, p: dict) -> EstimateReport:
    cfg = ctx.cfg
    tau = cfg.tau_for(cfg.eps)
    rep = EstimateReport(title="source representation")
    rng = np.random.default_rng([ctx.seed, 13])
    gaps = []
    for y in ctx.poles:
        tb = green.build_mollified_green(ctx.space, ctx.field, (np.asarray(y), cfg.pole_time),
                                         cfg.eps, horizon=p["steps"] * tau, steps=p["steps"],
                                         check=False)
        F = rng.standard_normal((tb.times.size, ctx.space.num_dofs))
        gaps.append(green.check_representation(tb, F))
    rep.add("max_relative_gap", max(gaps), p["tol"], "<=", seed=ctx.seed)
    return rep


@_check("gaussian", "Gaussian upper bound on the kernel",
        t_window=(_number, None), slack=(_number, 1.02), refine=(_boolean, True),
        stability_tol=(_number, 0.15), saturation_tol=(_number, 0.05),
        rel_floor=(_number, 1e-10))
def _gaussian(ctx: Context, p: dict) -> EstimateReport:
    tabs = ctx.forward_tables()
    refined = None
    if p["refine"]:
        refined = ctx.forward_tables(space=DiscreteSpace(ctx.refined(1), ctx.field.N))
    return est.fit_gaussian_bound(tabs, t_window=p["t_window"], lam=ctx.field.lam,
                                  rel_floor=p["rel_floor"], slack=p["slack"],
                                  saturation_tol=p["saturation_tol"], refined=refined,
                                  stability_tol=p["stability_tol"], seed=ctx.seed)


@_check("davies", "exponentially twisted evolution bound",
        m_values=(_floats, [0.5, 1.0, 2.0, 4.0, 8.0]), s=(_number, 0.0), t=(_number, 0.1),
        steps=(_integer, 50), center=(_point, None), radius=(_number, 0.5),
        slack=(_number, 0.05), iterations=(_integer, 30), pointwise=(_boolean, False),
        use_b1=(_boolean, False))
def _davies(ctx: Context, p: dict) -> EstimateReport:
    center = p["center"] if p["center"] is not None else ctx.poles[0]
    table = B1 = None
    if p["pointwise"]:
        table = ctx.forward_tables(poles=[center], tau=(p["t"] - p["s"]) / p["steps"],
                                   horizon=p["t"] - p["s"], s=p["s"])[0]
    if p["use_b1"]:
        if "local_boundedness" not in ctx.results:
            raise ConfigError("use_b1 needs the local_boundedness check to run first")
        B1 = ctx.results["local_boundedness"].value("B1_hat")
    return est.davies_experiment(ctx.space, ctx.field, p["m_values"], p["s"], p["t"],
                                 p["steps"], center=center, radius=p["radius"],
                                 slack=p["slack"], iterations=p["iterations"], seed=ctx.seed,
                                 table=table, B1=B1)


@_check("scalings", "scaling laws of kernel norms in the radius",
        radii=(_floats, [0.05, 0.1, 0.2, 0.4]), levels=(_floats, None), tol=(_number, 0.2),
        subdivisions=(_integer, 2))
def _scalings(ctx: Context, p: dict) -> EstimateReport:
    return est.verify_lp_scalings(ctx.forward_tables(), p["radii"], p["levels"], tol=p["tol"],
                                  subdivisions=p["subdivisions"])


def _sweep_tables(ctx: Context, refinements: int, eps_values) -> list:
    eps_values = eps_values or [ctx.cfg.eps]
    out = []
    for level in range(refinements + 1):
        sp = DiscreteSpace(ctx.refined(level), ctx.field.N)
        for e in eps_values:
            out.extend(ctx.forward_tables(space=sp, eps=e))
    return out


@_check("pointwise", "pointwise size bound on the kernel",
        refinements=(_integer, 2), eps_values=(_floats, None), samples=(_integer, None),
        stability_tol=(_number, 0.15), oracle=(_boolean, False), oracle_tol=(_number, 0.25))
def _pointwise(ctx: Context, p: dict) -> EstimateReport:
    tabs = _sweep_tables(ctx, p["refinements"], p["eps_values"])
    rep = est.verify_pointwise_bound(tabs, p["samples"], ctx.seed, p["stability_tol"])
    if p["oracle"]:
        if ctx.n != 1 or ctx.field.name != "identity" or ctx.space.N != 1:
            raise ConfigError("the pointwise oracle needs the scalar identity field on an interval")
        gaps = []
        for tb in tabs:
            ref = est.pointwise_constant(tb, p["samples"], ctx.seed, values=_cosine_values(tb))
            gaps.append(abs(est.pointwise_constant(tb, p["samples"], ctx.seed) / ref - 1.0))
        rep.add("oracle_relative_gap", max(gaps), p["oracle_tol"], "<=", seed=ctx.seed)
    return rep


def _cosine_values(tb, terms: int = 200) -> np.ndarray:
    """|K| of the interval cosine series on the table grid; zero on the pole slice."""
    lo, hi = tb.space.mesh.bounding_box
    x = tb.space.mesh.nodes[:, 0] - lo[0]
    out = np.zeros((tb.times.size, x.size))
    for m, lag in enumerate(tb.times - tb.s):
        if lag > 0:
            out[m] = np.abs(green.cosine_series_kernel(x, lag, tb.y[0] - lo[0], terms,
                                                       float(hi[0] - lo[0])))
    return out


@_check("holder", "Hoelder continuity bound on the kernel",
        refinements=(_integer, 2), eps_values=(_floats, None), mu=(_number, 1.0),
        fitted_mu=(_boolean, False), samples=(_integer, 4000), stability_tol=(_number, 0.15))
def _holder(ctx: Context, p: dict) -> EstimateReport:
    mu = p["mu"]
    if p["fitted_mu"]:
        if "interior_holder" not in ctx.results:
            raise ConfigError("fitted_mu needs the interior_holder check to run first")
        mu = ctx.results["interior_holder"].value("mu0_hat")
    tabs = _sweep_tables(ctx, p["refinements"], p["eps_values"])
    return est.verify_holder_bound(tabs, mu, p["samples"], ctx.seed, p["stability_tol"])


@_check("embedding", "multiplicative embedding inequality",
        random_fields=(_integer, 12), refinements=(_integer, 1), growth_tol=(_number, 0.10))
def _embedding(ctx: Context, p: dict) -> EstimateReport:
    return est.verify_embedding_A1(DiscreteSpace(ctx.mesh), p["random_fields"], ctx.seed,
                                   p["refinements"], p["growth_tol"])


@_check("interior_holder", "interior Hoelder continuity of weak solutions",
        r=(_number, 0.25), trials=(_integer, 6), tau=(_number, None),
        monotone_tol=(_number, 0.5), base_count=(_integer, 300), level=(_integer, 0))
def _interior_holder(ctx: Context, p: dict) -> EstimateReport:
    sp = DiscreteSpace(ctx.refined(p["level"]), ctx.field.N)
    return est.estimate_interior_holder_A2(sp, ctx.field, p["r"], p["trials"], ctx.seed,
                                           p["tau"], p["monotone_tol"], p["base_count"])


@_check("local_boundedness", "local boundedness of weak solutions up to the boundary",
        r=(_number, 0.25), trials=(_integer, 4), tau=(_number, None),
        refinements=(_integer, 1), stability_tol=(_number, 0.20))
def _local_boundedness(ctx: Context, p: dict) -> EstimateReport:
    return est.estimate_local_boundedness_A3(ctx.space, ctx.field, p["r"], p["trials"],
                                             ctx.seed, p["tau"], p["refinements"],
                                             p["stability_tol"])


@_check("converse", "local boundedness recovered from the Gaussian bound",
        r=(_number, 0.25), trials=(_integer, 4), refinements=(_integer, 1))
def _converse(ctx: Context, p: dict) -> EstimateReport:
    if "gaussian" not in ctx.results:
        raise ConfigError("the converse check must follow the gaussian check")
    return est.verify_converse(ctx.results["gaussian"], ctx.space, ctx.field, p["r"],
                                       p["trials"], ctx.seed, p["refinements"])


@_check("poincare", "Poincare constant of the domain",
        expected=(_number, None), tol=(_number, 0.005))
def _poincare(ctx: Context, p: dict) -> EstimateReport:
    rho = ell.poincare_constant(ctx.space)
    expected = p["expected"]
    if expected is None:
        if ctx.cfg.domain["shape"] not in ("interval", "rectangle", "square"):
            raise ConfigError("give [poincare] expected for this domain")
        lo, hi = ctx.mesh.bounding_box
        expected = float(np.max(hi - lo)) / math.pi
    rep = EstimateReport(title="Poincare constant")
    rep.add("rho", rho)
    rep.add("rho_expected", expected)
    rep.add("rho_relative_error", abs(rho / expected - 1.0), p["tol"], "<=")
    return rep


def _integral_rows(rep: EstimateReport, tabs, tol: float) -> None:
    worst = max(float(np.abs(t.integrals()).max()) for t in tabs)
    rep.add("max_abs_integral", worst, tol, "<=")


@_check("elliptic_oracle", "agreement of the elliptic kernel with the interval closed form",
        tol=(_number, 0.01), integral_tol=(_number, 1e-8), tau=(_number, None))
def _elliptic_oracle(ctx: Context, p: dict) -> EstimateReport:
    if ctx.n != 1 or ctx.field.name != "identity" or ctx.space.N != 1:
        raise ConfigError("the elliptic oracle needs the scalar identity field on an interval")
    lo, hi = ctx.mesh.bounding_box
    length = float(hi[0] - lo[0])
    x = ctx.mesh.nodes[:, 0] - lo[0]
    M = ctx.space.mass
    tabs = ctx.elliptic_tables(tau=p["tau"])
    rep = EstimateReport(title="elliptic closed-form oracle")
    for i, tb in enumerate(tabs):
        g = ell.oracle_1d(x, float(tb.y[0] - lo[0]), length)
        d = tb.values[:, 0] - g
        rep.add(f"rel_l2_pole{i}", math.sqrt(d @ (M @ d) / (g @ (M @ g))), p["tol"], "<=")
    _integral_rows(rep, tabs, p["integral_tol"])
    return rep


@_check("log_bound", "logarithmic bound on the two-dimensional elliptic kernel",
        refine=(_boolean, False), fit_window=(_floats, [4.0, 8.0]), slack=(_number, 1.05),
        stability_tol=(_number, 0.15), expected_slope=(_number, None),
        integral_tol=(_number, 1e-8), tau=(_number, None), check_slope=(_boolean, True))
def _log_bound(ctx: Context, p: dict) -> EstimateReport:
    if ctx.n != 2:
        raise ConfigError("the logarithmic bound is a planar check")
    tabs = ctx.elliptic_tables(tau=p["tau"])
    refined = None
    if p["refine"]:
        refined = ctx.elliptic_tables(space=DiscreteSpace(ctx.refined(1), ctx.field.N),
                                      tau=p["tau"])
    expected = p["expected_slope"]
    if expected is None and ctx.field.name == "identity":
        expected = 1.0 / (2.0 * math.pi)
    if not p["check_slope"]:
        expected = None
    rep = ell.verify_log_bound(tabs, refined, tuple(p["fit_window"]), p["slack"],
                               p["stability_tol"], expected)
    _integral_rows(rep, tabs, p["integral_tol"])
    return rep


@_check("elliptic_symmetry", "symmetry of the elliptic kernel under adjoint exchange",
        pairs=(_integer, 10), steps=(_integer, 600), tol=(_number, 1e-8), tau=(_number, None))
def _elliptic_symmetry(ctx: Context, p: dict) -> EstimateReport:
    cfg = ctx.cfg
    rho = ell.poincare_constant(ctx.space)
    tau = p["tau"] if p["tau"] is not None else 0.05 * rho ** 2 / ctx.field.lam
    adj_field = ctx.field.adjoint()
    rng = np.random.default_rng([ctx.seed, 17])
    draws = [_random_points(cfg.domain, ctx.n, 2, int(rng.integers(2 ** 31)), cfg.eps)
             for _ in range(p["pairs"])]

    def gap(d):
        y, x = d
        kw = dict(tau=tau, steps=p["steps"], direct_threshold=cfg.direct_threshold)
        fw = ell.build_elliptic_neumann(ctx.space, ctx.field, y, cfg.eps, **kw)
        ad = ell.build_elliptic_neumann(ctx.space, adj_field, x, cfg.eps, kind="adjoint", **kw)
        return ell.check_elliptic_symmetry(fw, ad)
    rep = EstimateReport(title="elliptic symmetry")
    rep.add("max_relative_gap", max(ctx.map(gap, draws)), p["tol"], "<=", seed=ctx.seed)
    return rep


@_check("relaxation", "exponential relaxation at the spectral-gap rate",
        tol=(_number, 0.15), two_sided=(_boolean, None), window=(_floats, [0.25, 1.0]),
        tau=(_number, None), poles=(_points, None))
def _relaxation(ctx: Context, p: dict) -> EstimateReport:
    # poles on a symmetry axis of the domain miss the slowest mode; allow an override
    tabs = ctx.elliptic_tables(poles=p["poles"], tau=p["tau"])
    two_sided = p["two_sided"]
    if two_sided is None:
        two_sided = ctx.field.name == "identity"
    ratios = [ell.relaxation_rate(t, tuple(p["window"])) * t.rho ** 2 / t.lam for t in tabs]
    rep = EstimateReport(title="relaxation rate")
    for i, r in enumerate(ratios):
        rep.add(f"rate_ratio_pole{i}", r)
    if two_sided:
        rep.add("rate_relative_error", max(abs(r - 1.0) for r in ratios), p["tol"], "<=")
    else:
        rep.add("rate_ratio_min", min(ratios), 1.0 - p["tol"], ">=")
    return rep


@_check("timebar", "bounds on the time-integrated kernel near the boundary",
        distances=(_floats, [0.4, 0.2, 0.1, 0.05]), y=(_number, 0.5), tol=(_number, 0.25),
        rate_tol=(_number, 0.15), tau=(_number, None), horizon=(_number, None))
def _timebar(ctx: Context, p: dict) -> EstimateReport:
    if ctx.n != 2:
        raise ConfigError("the time-integrated spot checks are planar")
    poles = [(d, p["y"]) for d in p["distances"]]
    return ell.verify_timebar_estimates(ctx.space, ctx.field, poles, ctx.cfg.eps, p["tau"],
                                        p["horizon"], p["tol"], p["rate_tol"])


# running -------------------------------------------------------------------------------

@dataclass
class RunResult:
    config: ExperimentConfig
    report: EstimateReport
    run_dir: Path | None
    status: int
    sections: list = dc_field(default_factory=list)


def _output_root(cfg: ExperimentConfig, override=None) -> Path:
    if override is not None:
        return Path(override)
    env = os.environ.get(OUTPUT_ENV)
    if env:
        return Path(env)
    return Path(cfg.output) if cfg.output else Path("runs")


def _run_dir(root: Path, name: str) -> Path:
    stamp = time.strftime("%Y%m%d-%H%M%S")
    base = root / f"{name}-{stamp}"
    d, k = base, 1
    while d.exists():
        d = Path(f"{base}-{k}")
        k += 1
    d.mkdir(parents=True)
    return d


def _summary_text(cfg: ExperimentConfig, sections: list, report: EstimateReport) -> str:
    lines = [f"experiment: {cfg.name}", f"description: {cfg.description}", f"seed: {cfg.seed}",
             ""]
    for name, rep in sections:
        lines.append(f"== {name}: {CHECKS[name].bound}")
        lines.append(rep.summary())
        lines.append("")
    fails = report.failures()
    lines.append(f"overall: {'PASS' if not fails else 'FAIL'} "
                 f"({len(report.rows) - len(fails)}/{len(report.rows)} rows pass)")
    return "\n".join(lines) + "\n"


def _failure_message(row) -> str:
    name = row.quantity.split(".", 1)[0]
    thr = "" if row.relation in ("info", "finite") else f" {row.relation} {row.threshold:.6g}"
    stab = "" if math.isnan(row.stability) else \
        f", stability {row.stability:.4g} vs {row.stability_threshold:.4g}"
    return (f"FAIL {row.quantity} = {row.value:.6g}{thr}{stab} "
            f"[{CHECKS[name].bound}]")


def run_experiment(config, output_root=None, write: bool = True) -> RunResult:
    """Execute every selected check in config order and persist the results.

    ``config`` is a path, a bundled config name or an ExperimentConfig.
    NeumannGreenError raised by a check propagates after being annotated
    with the check's bound.
    """
    cfg = config if isinstance(config, ExperimentConfig) else load_config(config)
    report = EstimateReport(title=cfg.name)
    sections = []
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        ctx = Context(cfg, pool if cfg.workers > 1 else None)
        for name, params in cfg.checks:
            check = CHECKS[name]
            log.info("running %s", name)
            try:
                rep = check.func(ctx, params)
            except ConfigError:
                raise
            except NeumannGreenError as exc:
                exc.check = name
                exc.bound = check.bound
                raise
            ctx.results[name] = rep
            sections.append((name, rep))
            report.extend(rep, prefix=f"{name}.")
    status = 0 if report.passed else 1
    run_dir = None
    if write:
        run_dir = _run_dir(_output_root(cfg, output_root), cfg.name)
        report.to_csv(run_dir / "report.csv")
        (run_dir / "summary.txt").write_text(_summary_text(cfg, sections, report))
        (run_dir / "config.cfg").write_text(cfg.text)
        if cfg.save_tables:
            tdir = run_dir / "tables"
            tdir.mkdir()
            for i, tb in enumerate(ctx.persisted()):
                if isinstance(tb, ell.EllipticNeumannTable):
                    ell.save_elliptic(tb, tdir / f"elliptic_{i:03d}.ngt")
                else:
                    green.save_table(tb, tdir / f"parabolic_{i:03d}.ngt")
    return RunResult(cfg, report, run_dir, status, sections)


def run(config, output_root=None) -> int:
    """Run a config and return the process exit status (0 pass, 1 fail, 2 error)."""
    try:
        res = run_experiment(config, output_root)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NeumannGreenError as exc:
        check = getattr(exc, "check", "?")
        bound = getattr(exc, "bound", "unknown bound")
        print(f"error: check {check!r} aborted while testing the {bound}: "
              f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    for row in res.report.failures():
        print(_failure_message(row), file=sys.stderr)
    print(f"{res.config.name}: {'PASS' if res.status == 0 else 'FAIL'} -> {res.run_dir}")
    return res.status


# bundled configs ------------------------------------------------------------------------

def bundled_configs() -> list:
    """``(name, description)`` for every bundled config, sorted by name."""
    out = []
    for p in sorted(CONFIG_DIR.glob("*.cfg")):
        raw = parse_config_text(p.read_text(), str(p))
        exp = raw.get("experiment", {})
        out.append((exp.get("name", (p.stem,))[0], exp.get("description", ("",))[0]))
    return out


def list_bundled(filter_text: str | None = None) -> str:
    """One line per bundled config whose name or description contains the filter."""
    needle = (filter_text or "").lower()
    rows = [(n, d) for n, d in bundled_configs()
            if needle in n.lower() or needle in d.lower()]
    if not rows:
        return ""
    width = max(len(n) for n, _ in rows)
    return "\n".join(f"{n:<{width}}  {d}" for n, d in rows) + "\n"


# export ---------------------------------------------------------------------------------

def export(table_path, csv_path) -> None:
    """Write a persisted parabolic or elliptic table as CSV."""
    with open(table_path, "rb") as fh:
        tag = green._read_header(fh).get("tag")
    if tag == "elliptic":
        ell.elliptic_to_csv(ell.load_elliptic(table_path), csv_path)
    elif tag == "parabolic":
        green.table_to_csv(green.load_table(table_path), csv_path)
    else:
        raise ValueError(f"unknown table tag {tag!r}")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="neumann-green",
                                     description="Mollified Neumann Green's function lab.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run an experiment config")
    p_run.add_argument("config", help="config path or bundled config name")
    p_run.add_argument("--output", help=f"output root (overrides ${OUTPUT_ENV})")
    p_list = sub.add_parser("list", help="list bundled configs")
    p_list.add_argument("filter", nargs="?", default=None)
    p_exp = sub.add_parser("export", help="export a persisted table to CSV")
    p_exp.add_argument("table")
    p_exp.add_argument("csv")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s: %(message)s")

    if args.command == "run":
        return run(args.config, args.output)
    if args.command == "list":
        sys.stdout.write(list_bundled(args.filter))
        return 0
    try:
        export(args.table, args.csv)
    except (OSError, ValueError, NeumannGreenError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
