"""Piecewise-constant composite fields, interfaces and one-sided jump data.

The composite state at a point is the stacked vector

    v = (grad u, h, psi)  with  grad u in R^{k x N},  h in R^{d x N},  psi in R^m,

flattened row-major in that order, so the state has ``k*N + d*N + m``
components.  The gradient block is curl-free, the ``h`` block is
divergence-free row by row, and ``psi`` is unconstrained.  An additional
inhomogeneity ``f`` with ``q`` components is carried alongside.

Fields are layered along one stacking axis: interfaces are graphs
``x_a = g_i(x')`` over the cross-section of an axis-aligned box, ordered
``g_1 < g_2 < ...``, and the regions between them carry constant values.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class ConstraintKind(enum.Enum):
    """Differential constraint attached to a block of the composite state."""

    UNCONSTRAINED = "unconstrained"
    CURL_FREE = "curl_free"
    DIV_FREE = "div_free"


class FieldError(ValueError):
    """Raised for malformed or inadmissible field descriptions."""


@dataclass(frozen=True)
class Layout:
    """Block sizes of the composite state.

    ``N`` is the space dimension, ``k`` the number of curl-free rows (the
    state stores ``grad u``), ``d`` the number of divergence-free rows, ``m``
    the number of unconstrained scalars and ``q`` the size of ``f``.
    """

    N: int
    k: int = 0
    d: int = 0
    m: int = 0
    q: int = 0

    def __post_init__(self):
        if self.N not in (1, 2, 3):
            raise FieldError(f"dimension N must be 1, 2 or 3, got {self.N}")
        if min(self.k, self.d, self.m, self.q) < 0:
            raise FieldError("block sizes must be nonnegative")
        if self.size == 0:
            raise FieldError("composite state is empty")

    @property
    def size(self) -> int:
        return self.k * self.N + self.d * self.N + self.m

    @property
    def grad_slice(self) -> slice:
        return slice(0, self.k * self.N)

    @property
    def div_slice(self) -> slice:
        return slice(self.k * self.N, (self.k + self.d) * self.N)

    @property
    def psi_slice(self) -> slice:
        return slice((self.k + self.d) * self.N, self.size)

    def kinds(self) -> list[ConstraintKind]:
        """Constraint kind of every flattened state component."""
        return ([ConstraintKind.CURL_FREE] * (self.k * self.N)
                + [ConstraintKind.DIV_FREE] * (self.d * self.N)
                + [ConstraintKind.UNCONSTRAINED] * self.m)

    def split(self, v):
        """Return ``(G, H, psi)`` views with shapes ``(..., k, N)``, ``(..., d, N)``, ``(..., m)``."""
        v = np.asarray(v)
        lead = v.shape[:-1]
        G = v[..., self.grad_slice].reshape(lead + (self.k, self.N))
        H = v[..., self.div_slice].reshape(lead + (self.d, self.N))
        return G, H, v[..., self.psi_slice]

    def join(self, G, H, psi):
        G, H, psi = np.asarray(G), np.asarray(H), np.asarray(psi)
        lead = psi.shape[:-1]
        return np.concatenate([G.reshape(lead + (-1,)), H.reshape(lead + (-1,)), psi], axis=-1)

    def to_dict(self) -> dict:
        return {"N": self.N, "k": self.k, "d": self.d, "m": self.m, "q": self.q}


def _frozen(a, shape=None) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if shape is not None:
        arr = arr.reshape(shape)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class CompositeJump:
    """One-sided data at an interface point.

    ``v_plus`` is the value on the side ``nu`` points into.  ``no_jump`` is set
    when both sides coincide (a degenerate trace).
    """

    layout: Layout
    nu: np.ndarray
    v_plus: np.ndarray
    v_minus: np.ndarray
    f_plus: np.ndarray = field(default=None)
    f_minus: np.ndarray = field(default=None)
    x: np.ndarray = field(default=None)
    no_jump: bool = False

    def __post_init__(self):
        lay = self.layout
        object.__setattr__(self, "nu", _frozen(self.nu, (lay.N,)))
        object.__setattr__(self, "v_plus", _frozen(self.v_plus, (lay.size,)))
        object.__setattr__(self, "v_minus", _frozen(self.v_minus, (lay.size,)))
        fp = np.zeros(lay.q) if self.f_plus is None else self.f_plus
        fm = np.zeros(lay.q) if self.f_minus is None else self.f_minus
        object.__setattr__(self, "f_plus", _frozen(fp, (lay.q,)))
        object.__setattr__(self, "f_minus", _frozen(fm, (lay.q,)))
        x = np.zeros(lay.N) if self.x is None else self.x
        object.__setattr__(self, "x", _frozen(x, (lay.N,)))
        if abs(np.linalg.norm(self.nu) - 1.0) > 1e-12:
            raise FieldError(f"normal must have unit length, |nu| = {np.linalg.norm(self.nu)!r}")

    @classmethod
    def build(cls, layout, nu, v_plus, v_minus, f_plus=None, f_minus=None, x=None,
              check=True, tol=1e-10) -> "CompositeJump":
        """Construct a jump and, unless ``check`` is false, enforce compatibility."""
        jump = cls(layout, nu, v_plus, v_minus, f_plus, f_minus, x,
                   no_jump=bool(np.array_equal(np.asarray(v_plus, float), np.asarray(v_minus, float))
                                and np.array_equal(np.asarray(f_plus if f_plus is not None else [], float),
                                                   np.asarray(f_minus if f_minus is not None else [], float))))
        if check:
            res = jump.compatibility_residuals()
            bad = {k: r for k, r in res.items() if r > tol}
            if bad:
                raise FieldError(f"incompatible jump: {bad}")
        return jump

    @property
    def delta(self) -> np.ndarray:
        """State jump ``v_plus - v_minus``."""
        return self.v_plus - self.v_minus

    def compatibility_residuals(self) -> dict:
        """Magnitudes of the rank-one and normal-trace defects (zero if admissible)."""
        G, H, _ = self.layout.split(self.delta)
        nu = self.nu
        out = {}
        if self.layout.k:
            # a jump of a gradient is a (x) nu: the tangential part must vanish
            a = G @ nu
            out["rank_one"] = float(np.abs(G - np.outer(a, nu)).max())
        if self.layout.d:
            out["normal_trace"] = float(np.abs(H @ nu).max())
        return out

    def flipped(self) -> "CompositeJump":
        """Same interface point described with the opposite orientation."""
        return CompositeJump(self.layout, -self.nu, self.v_minus, self.v_plus,
                             self.f_minus, self.f_plus, self.x, self.no_jump)

    def to_dict(self) -> dict:
        return {
            "nu": self.nu.tolist(), "v_plus": self.v_plus.tolist(), "v_minus": self.v_minus.tolist(),
            "f_plus": self.f_plus.tolist(), "f_minus": self.f_minus.tolist(), "x": self.x.tolist(),
        }


class GraphInterface:
    """Interface ``x_axis = g(x')`` with polynomial ``g`` over the cross-section.

    ``terms`` is a list of ``(coef, exponents)`` with one exponent per
    tangential coordinate (none when N = 1, where the interface is a point).
    The tangential coordinates are the remaining axes in increasing order.
    """

    def __init__(self, N: int, terms: Sequence):
        self.N = N
        parsed = []
        for coef, exps in terms:
            exps = tuple(int(e) for e in exps)
            if len(exps) != N - 1 or min(exps, default=0) < 0:
                raise FieldError(f"interface term exponents {exps} do not match N-1 = {N - 1}")
            parsed.append((float(coef), exps))
        if not parsed:
            parsed = [(0.0, (0,) * (N - 1))]
        self.terms = tuple(parsed)

    @classmethod
    def from_coefficients(cls, N: int, coeffs) -> "GraphInterface":
        """N = 1: ``[c]``; N = 2: ``[c0, c1, ...]`` for ``sum c_j x'^j``."""
        if N == 1:
            return cls(1, [(float(np.ravel(coeffs)[0]), ())])
        if N == 2:
            return cls(2, [(c, (j,)) for j, c in enumerate(coeffs)])
        raise FieldError("use explicit terms for N = 3 interfaces")

    @classmethod
    def flat(cls, N: int, height: float = 0.0) -> "GraphInterface":
        return cls(N, [(height, (0,) * (N - 1))])

    def _monomials(self, xp, exps, deriv=()):
        xp = np.asarray(xp, dtype=float)
        out = np.ones(xp.shape[:-1])
        coef = 1.0
        e = list(exps)
        for ax in deriv:
            coef *= e[ax]
            e[ax] -= 1
            if e[ax] < 0:
                return np.zeros(xp.shape[:-1])
        for ax, p in enumerate(e):
            if p:
                out = out * xp[..., ax] ** p
        return coef * out

    def value(self, xp) -> np.ndarray:
        """g at tangential points ``xp`` of shape ``(..., N-1)``."""
        xp = np.asarray(xp, dtype=float)
        return sum(c * self._monomials(xp, e) for c, e in self.terms)

    def gradient(self, xp) -> np.ndarray:
        xp = np.asarray(xp, dtype=float)
        n = self.N - 1
        out = np.zeros(xp.shape[:-1] + (n,))
        for ax in range(n):
            out[..., ax] = sum(c * self._monomials(xp, e, (ax,)) for c, e in self.terms)
        return out

    def hessian(self, xp) -> np.ndarray:
        xp = np.asarray(xp, dtype=float)
        n = self.N - 1
        out = np.zeros(xp.shape[:-1] + (n, n))
        for a in range(n):
            for b in range(n):
                out[..., a, b] = sum(c * self._monomials(xp, e, (a, b)) for c, e in self.terms)
        return out

    def is_planar(self) -> bool:
        return all(sum(e) <= 1 for c, e in self.terms if c != 0.0)

    def to_terms(self) -> list:
        return [[c, list(e)] for c, e in self.terms]


@dataclass(frozen=True)
class Box:
    """Axis-aligned box ``prod (lo_i, hi_i)``."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(a) for a in self.lo)
        hi = tuple(float(b) for b in self.hi)
        if len(lo) != len(hi) or any(b <= a for a, b in zip(lo, hi)):
            raise FieldError(f"degenerate box {lo} x {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def volume(self) -> float:
        return float(np.prod(np.subtract(self.hi, self.lo)))

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lo) & (x <= self.hi), axis=-1)


class PiecewiseField:
    """Layered piecewise-constant composite field on a box.

    ``values`` has shape ``(J+1, S)`` and ``f_values`` ``(J+1, q)`` for ``J``
    interfaces; region ``j`` lies between interfaces ``j-1`` and ``j`` along
    ``axis``.  Interfaces span the whole cross-section of the box.
    """

    def __init__(self, layout: Layout, box: Box, axis: int, interfaces: Sequence[GraphInterface],
                 values, f_values=None, check: bool = True):
        self.layout = layout
        self.box = box
        self.axis = int(axis)
        self.interfaces = tuple(interfaces)
        N = layout.N
        if box.dim != N:
            raise FieldError(f"box dimension {box.dim} does not match N = {N}")
        if not 0 <= self.axis < N:
            raise FieldError(f"stacking axis {axis} out of range")
        J = len(self.interfaces)
        self.values = _frozen(values, (J + 1, layout.size))
        f = np.zeros((J + 1, layout.q)) if f_values is None else f_values
        self.f_values = _frozen(f, (J + 1, layout.q))
        for g in self.interfaces:
            if g.N != N:
                raise FieldError("interface dimension does not match the field")
        self.tangential_axes = tuple(i for i in range(N) if i != self.axis)
        if check:
            self._check_geometry()

    # geometry -----------------------------------------------------------
    @property
    def cross_section(self) -> Box | None:
        """Cross-section box ``U`` of every interface (None when N = 1)."""
        if self.layout.N == 1:
            return None
        t = self.tangential_axes
        return Box(tuple(self.box.lo[i] for i in t), tuple(self.box.hi[i] for i in t))

    def _sample_cross_section(self, n: int = 65) -> np.ndarray:
        U = self.cross_section
        if U is None:
            return np.zeros((1, 0))
        axes = [np.linspace(lo, hi, n) for lo, hi in zip(U.lo, U.hi)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def _check_geometry(self):
        xs = self._sample_cross_section()
        lo, hi = self.box.lo[self.axis], self.box.hi[self.axis]
        prev = None
        for i, g in enumerate(self.interfaces):
            gv = g.value(xs)
            if np.any(gv <= lo) or np.any(gv >= hi):
                raise FieldError(f"interface {i} leaves the box along the stacking axis")
            if prev is not None and np.any(gv <= prev):
                raise FieldError(f"interfaces {i - 1} and {i} touch or are out of order")
            prev = gv

    def split_point(self, x):
        """Return ``(x_a, x')`` for points of shape ``(..., N)``."""
        x = np.asarray(x, dtype=float)
        return x[..., self.axis], x[..., list(self.tangential_axes)]

    def region_index(self, x) -> np.ndarray:
        """Index of the region containing each point (points on interfaces go above)."""
        xa, xp = self.split_point(x)
        idx = np.zeros(xa.shape, dtype=int)
        for g in self.interfaces:
            idx += (xa >= g.value(xp)).astype(int)
        return idx

    def evaluate(self, x):
        """Field value and ``f`` at points (outside the box the layers are extended)."""
        idx = self.region_index(x)
        return self.values[idx], self.f_values[idx]

    def normal(self, i: int, xp) -> np.ndarray:
        """Unit normal of interface ``i`` at tangential points, pointing to increasing x_axis."""
        xp = np.asarray(xp, dtype=float).reshape(-1, self.layout.N - 1)
        grad = self.interfaces[i].gradient(xp)
        nrm = np.sqrt(1.0 + np.sum(grad ** 2, axis=-1))
        nu = np.zeros((xp.shape[0], self.layout.N))
        nu[:, self.axis] = 1.0 / nrm
        for j, ax in enumerate(self.tangential_axes):
            nu[:, ax] = -grad[:, j] / nrm
        return nu

    def with_values(self, values, f_values=None) -> "PiecewiseField":
        return PiecewiseField(self.layout, self.box, self.axis, self.interfaces, values,
                              self.f_values if f_values is None else f_values, check=False)

    def to_dict(self) -> dict:
        return {
            "layout": self.layout.to_dict(),
            "box": {"lo": list(self.box.lo), "hi": list(self.box.hi)},
            "axis": self.axis,
            "interfaces": [{"terms": g.to_terms()} for g in self.interfaces],
            "values": self.values.tolist(),
            "f_values": self.f_values.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PiecewiseField":
        try:
            lay = Layout(**{k: int(v) for k, v in d["layout"].items()})
            box = Box(tuple(d["box"]["lo"]), tuple(d["box"]["hi"]))
            ifaces = []
            for spec in d.get("interfaces", []):
                if "terms" in spec:
                    ifaces.append(GraphInterface(lay.N, [(t[0], t[1]) for t in spec["terms"]]))
                else:
                    ifaces.append(GraphInterface.from_coefficients(lay.N, spec["coefficients"]))
            vals = np.array(d["values"], dtype=float).reshape(len(ifaces) + 1, lay.size)
            fv = d.get("f_values")
            if fv is not None and lay.q:
                fv = np.array(fv, dtype=float).reshape(len(ifaces) + 1, lay.q)
            else:
                fv = None
            return cls(lay, box, int(d.get("axis", 0)), ifaces, vals, fv)
        except (KeyError, TypeError, IndexError) as exc:
            raise FieldError(f"malformed field description: {exc}") from exc


def trace_pair(field: PiecewiseField, interface: int, x_prime=()) -> CompositeJump:
    """One-sided values across interface ``interface`` above tangential point ``x_prime``."""
    N = field.layout.N
    if not 0 <= interface < len(field.interfaces):
        raise FieldError(f"no interface with index {interface}")
    xp = np.asarray(x_prime, dtype=float).reshape(N - 1)
    U = field.cross_section
    if U is not None and not bool(U.contains(xp)):
        raise FieldError(f"point {xp.tolist()} outside the interface domain")
    g = field.interfaces[interface]
    x = np.zeros(N)
    x[field.axis] = float(g.value(xp.reshape(1, -1))[0]) if N > 1 else float(g.value(np.zeros((1, 0)))[0])
    for j, ax in enumerate(field.tangential_axes):
        x[ax] = xp[j]
    nu = field.normal(interface, xp)[0] if N > 1 else np.ones(1)
    return CompositeJump.build(field.layout, nu, field.values[interface + 1], field.values[interface],
                               field.f_values[interface + 1], field.f_values[interface], x, check=False)


def validate(field: PiecewiseField, density, n_samples: int = 9) -> list[dict]:
    """List every violated admissibility condition (empty when admissible).

    Checks that every region value lies on the density zero set, and that the
    curl-free and divergence-free blocks satisfy their jump conditions at a
    tensor grid of sample points on each interface.
    """
    report = []
    lay = field.layout
    if density is not None:
        zeros = np.zeros((1, lay.size, lay.N))
        for j, (v, f) in enumerate(zip(field.values, field.f_values)):
            d2 = np.zeros((1, lay.size, lay.N, lay.N)) if density.order == 2 else None
            w = float(density.value(v[None, :], zeros, f[None, :], d2)[0])
            if w > 1e-12:
                report.append({"check": "zero_set", "region": j, "magnitude": w})
    xs = field._sample_cross_section(n_samples)
    for i in range(len(field.interfaces)):
        for xp in xs:
            jump = trace_pair(field, i, xp)
            for name, r in jump.compatibility_residuals().items():
                if r > 1e-10:
                    report.append({"check": name, "interface": i, "x_prime": xp.tolist(), "magnitude": r})
    return report
