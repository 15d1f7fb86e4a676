"""Surface functionals ``K(v) = sum_i int_{J_i} density(v+, v-, nu) dH^{N-1}``.

The density is one of ``E1`` (optimal one-dimensional profiles), ``Eper``
(periodic cell problems) or ``KernelLimit`` (the limit density of the
mollified sequence).  Each interface is a graph over the cross-section ``U``;
the surface integral uses tensor Gauss-Legendre nodes on ``U`` with the area
factor ``sqrt(1 + |grad g|^2)``.  In one dimension the surface measure is the
counting measure.  Densities are cached on the quantized jump data, so
planar interfaces cost a single cell solve.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from . import cell1d, cellnd
from .fields import PiecewiseField, trace_pair
from .mollifier import Kernel, limit_surface_density, profile_p

KINDS = ("E1", "Eper", "KernelLimit")
DEFAULT_NODES = 8
CACHE_QUANTUM = 1e-12


@dataclass
class SurfaceReport:
    kind: str
    value: float
    per_interface: list
    measures: list
    evaluations: int
    cache_hits: int
    partial: bool
    nodes: int
    details: list = dc_field(default_factory=list)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "value": self.value, "per_interface": self.per_interface,
                "measures": self.measures, "evaluations": self.evaluations, "cache_hits": self.cache_hits,
                "partial": self.partial, "nodes_per_axis": self.nodes, "details": self.details}


class DensityCache:
    """Memoizes interface densities on jump data rounded to ``CACHE_QUANTUM``."""

    def __init__(self, quantum: float = CACHE_QUANTUM):
        self.quantum = quantum
        self.store: dict = {}
        self.hits = 0
        self.misses = 0

    def key(self, kind, jump) -> tuple:
        parts = [jump.v_plus, jump.v_minus, jump.nu, jump.f_plus, jump.f_minus]
        q = tuple(tuple(np.round(np.asarray(a, dtype=float).ravel() / self.quantum).astype(np.int64))
                  for a in parts)
        return (kind,) + q

    def get(self, kind, jump, compute):
        k = self.key(kind, jump)
        if k in self.store:
            self.hits += 1
            return self.store[k]
        self.misses += 1
        out = compute()
        self.store[k] = out
        return out


def _density_fn(kind, density, kernel, options):
    opts = dict(options or {})
    N = density.layout.N
    if kind == "E1":
        kw = {k: opts[k] for k in ("grid_n", "l_grid", "ramp", "cls", "gtol", "maxiter", "workers") if k in opts}

        def fn(jump):
            try:
                r = cell1d.optimize_e1(density, jump, **kw)
            except cell1d.UnconvergedError as exc:
                r = exc.result
            return r.value, r.converged
        return fn
    if kind == "Eper":
        kw = {k: opts[k] for k in ("grid", "l_grid", "ramp", "cls", "gtol", "maxiter", "workers", "kick", "seed")
              if k in opts}

        def fn(jump):
            if N == 1:
                kw1 = {k: v for k, v in kw.items() if k not in ("grid", "kick", "seed")}
                try:
                    r = cell1d.optimize_e1(density, jump, **kw1)
                except cell1d.UnconvergedError as exc:
                    r = exc.result
                return r.value, r.converged
            r = cellnd.optimize_eper(density, jump, **kw)
            return r.value, r.converged
        return fn
    if kind == "KernelLimit":
        kernel = kernel if kernel is not None else Kernel("bump", N)
        if isinstance(kernel, str):
            kernel = Kernel(kernel, N)
        if kernel.N != N:
            raise ValueError("kernel dimension does not match the density")
        profile = profile_p(kernel, int(opts.get("profile_resolution", 2048)))
        quad = int(opts.get("quadrature", 2048))

        def fn(jump):
            return limit_surface_density(density, profile, jump, quad), True
        return fn
    raise ValueError(f"unknown surface density {kind!r}; expected one of {KINDS}")


def surface_rule(field: PiecewiseField, index: int, nodes: int = DEFAULT_NODES):
    """Nodes ``x'`` on ``U`` and weights including the area factor."""
    N = field.layout.N
    if N == 1:
        return np.zeros((1, 0)), np.ones(1)
    U = field.cross_section
    x, w = np.polynomial.legendre.leggauss(int(nodes))
    axes, wts = [], []
    for lo, hi in zip(U.lo, U.hi):
        axes.append(0.5 * (hi - lo) * x + 0.5 * (hi + lo))
        wts.append(0.5 * (hi - lo) * w)
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    W = np.ones(len(pts))
    for m in np.meshgrid(*wts, indexing="ij"):
        W = W * m.ravel()
    g = field.interfaces[index]
    grad = g.gradient(pts)
    area = np.sqrt(1.0 + np.sum(grad ** 2, axis=-1))
    return pts, W * area


def k_functional(field: PiecewiseField, density, kind: str = "E1", kernel=None, nodes: int = DEFAULT_NODES,
                 cache: DensityCache | None = None, **options) -> SurfaceReport:
    """Surface functional of a layered field with the chosen interface density."""
    if kind not in KINDS:
        raise ValueError(f"unknown surface density {kind!r}; expected one of {KINDS}")
    lay = density.layout
    if field.layout.size != lay.size or field.layout.N != lay.N or field.layout.q != lay.q:
        raise ValueError("field layout does not match the density")
    cache = cache if cache is not None else DensityCache()
    fn = _density_fn(kind, density, kernel, options)
    hits0, miss0 = cache.hits, cache.misses
    per, measures, details = [], [], []
    partial = False
    for i in range(len(field.interfaces)):
        pts, wts = surface_rule(field, i, nodes)
        total = 0.0
        for xp, w in zip(pts, wts):
            jump = trace_pair(field, i, xp)
            val, ok = cache.get(kind, jump, lambda j=jump: fn(j))
            partial |= not ok
            total += w * val
        per.append(float(total))
        measures.append(float(np.sum(wts)))
        details.append({"interface": i, "value": float(total), "measure": float(np.sum(wts)),
                        "nodes": int(len(pts))})
    return SurfaceReport(kind, float(sum(per)), per, measures, cache.misses - miss0, cache.hits - hits0,
                         bool(partial), int(nodes), details)
