"""Radial mollifiers, their hyperplane profiles and mollified piecewise-constant fields.

A kernel is ``eta(z) = omega(|z|)`` supported in the ball of radius 1/2 with
unit mass.  Its hyperplane profile ``p(t)`` integrates ``eta`` over the slice
``{z . nu = t}`` (independent of ``nu`` because ``eta`` is radial) and
``P(t) = int_{-inf}^t p``.  Across an interface with normal ``nu`` the
mollified field behaves like ``Gamma(t) = P(t) v- + (1 - P(t)) v+`` with
``t = -nu . (x - x0) / eps``, which yields the limit surface density

    int F(p(t) Delta (x) nu, Gamma(t), zeta(t, f-, f+)) dt,   Delta = v+ - v-.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.interpolate import CubicHermiteSpline
from scipy.special import roots_legendre

from . import kernels
from .fields import CompositeJump, PiecewiseField

KERNELS = {"bump": kernels.BUMP, "poly": kernels.POLY}
NORMALIZATION_NODES = 4096
SLICE_NODES = 256
DEFAULT_PROFILE_RESOLUTION = 2048
PROFILE_MASS_NODES = 512


def _gl(n, a=-1.0, b=1.0):
    x, w = roots_legendre(int(n))
    return a + (b - a) * (x + 1.0) / 2.0, w * (b - a) / 2.0


def _sphere_area(N):
    return 2.0 * math.pi ** (N / 2.0) / math.gamma(N / 2.0)


@dataclass(frozen=True)
class Kernel:
    """Radial kernel ``omega(r) = c * base(r)`` on ``r < 1/2`` in ``R^N``.

    ``name='bump'``: ``base = exp(-1 / (1/4 - r^2))`` (smooth);
    ``name='poly'``: ``base = (1/4 - r^2)^2``.  The constant ``c`` normalizes
    the mass with a Gauss-Legendre rule of 4096 radial nodes.
    """

    name: str = "bump"
    N: int = 1
    c: float = dc_field(init=False, default=0.0)

    def __post_init__(self):
        if self.name not in KERNELS:
            raise ValueError(f"unknown kernel {self.name!r}; choose from {sorted(KERNELS)}")
        if self.N not in (1, 2, 3):
            raise ValueError("kernel dimension must be 1, 2 or 3")
        r, w = _gl(NORMALIZATION_NODES, 0.0, 0.5)
        base = kernels.radial(r, self.code, 1.0)
        mass = _sphere_area(self.N) * float(np.sum(w * base * r ** (self.N - 1)))
        if not mass > 0:
            raise ValueError("kernel has zero mass")
        object.__setattr__(self, "c", 1.0 / mass)

    @property
    def code(self) -> int:
        return KERNELS[self.name]

    def omega(self, r):
        return kernels.radial(np.abs(np.asarray(r, dtype=float)), self.code, self.c)

    def omega_over_r(self, r):
        """``omega'(r) / r`` (finite at ``r = 0``)."""
        r = np.asarray(r, dtype=float)
        s = 0.25 - r * r
        out = np.zeros_like(r)
        m = s > 0
        if self.code == kernels.BUMP:
            out[m] = -2.0 * self.c * np.exp(-1.0 / s[m]) / s[m] ** 2
        else:
            out[m] = -4.0 * self.c * s[m]
        return out

    def domega(self, r):
        r = np.asarray(r, dtype=float)
        return r * self.omega_over_r(r)

    def eta(self, z):
        """Kernel at points of shape ``(..., N)``."""
        z = np.asarray(z, dtype=float)
        return self.omega(np.sqrt(np.sum(z * z, axis=-1)))

    def mass(self, n: int = NORMALIZATION_NODES) -> float:
        r, w = _gl(n, 0.0, 0.5)
        return _sphere_area(self.N) * float(np.sum(w * self.omega(r) * r ** (self.N - 1)))

    def to_dict(self) -> dict:
        return {"name": self.name, "N": self.N, "c": self.c}


def _slice(kernel: Kernel, t, deriv: bool, n: int = SLICE_NODES):
    """``p(t)`` (or ``p'(t)``) by Gauss-Legendre quadrature over the slice."""
    t = np.abs(np.asarray(t, dtype=float))
    sgn = 1.0
    N = kernel.N
    if N == 1:
        return kernel.domega(t) if deriv else kernel.omega(t)
    a = np.sqrt(np.maximum(0.25 - t * t, 0.0))
    x, w = _gl(n, 0.0, 1.0)
    sig = a[..., None] * x
    r = np.sqrt(t[..., None] ** 2 + sig ** 2)
    vals = (t[..., None] * kernel.omega_over_r(r)) if deriv else kernel.omega(r)
    if N == 2:
        return sgn * 2.0 * a * np.sum(w * vals, axis=-1)
    return sgn * 2.0 * math.pi * a * np.sum(w * vals * sig, axis=-1)


@dataclass(frozen=True)
class KernelProfile:
    """Tabulated hyperplane profile ``p`` and its cumulative ``P`` on ``[-1/2, 1/2]``.

    Nodes are ``t_i = (i - n/2) / n``; ``p`` is evaluated at ``|t_i|`` so it is
    exactly even, and ``P`` is the cumulative (end-corrected) trapezoid of ``p`` symmetrized
    and divided by its own total so that ``P(-1/2) = 0``, ``P(0) = 1/2`` and
    ``P(1/2) = 1`` hold exactly.
    """

    kernel: Kernel
    t: np.ndarray
    p: np.ndarray
    P_table: np.ndarray
    mass: float

    @property
    def resolution(self) -> int:
        return len(self.t) - 1

    def p_at(self, t):
        """``p`` at arbitrary points (direct slice quadrature, zero for ``|t| >= 1/2``)."""
        return _slice(self.kernel, t, False)

    def dp_at(self, t):
        """``p'`` at arbitrary points."""
        t = np.asarray(t, dtype=float)
        return np.sign(t) * _slice(self.kernel, t, True)

    def P(self, t):
        """Cumulative profile, clamped to 0 below ``-1/2`` and 1 above ``1/2``."""
        t = np.asarray(t, dtype=float)
        out = np.asarray(self._spline(np.clip(t, -0.5, 0.5)), dtype=float)
        out = np.where(t <= -0.5, 0.0, np.where(t >= 0.5, 1.0, out))
        return out

    @property
    def _spline(self):
        sp = self.__dict__.get("_sp")
        if sp is None:
            sp = CubicHermiteSpline(self.t, self.P_table, self.p / self.mass)
            object.__setattr__(self, "_sp", sp)
        return sp

    def table(self) -> list:
        return [[float(a), float(b), float(c)] for a, b, c in zip(self.t, self.p, self.P_table)]


def profile_p(kernel: Kernel, resolution: int = DEFAULT_PROFILE_RESOLUTION) -> KernelProfile:
    """Tabulate ``p`` and ``P`` on ``resolution + 1`` uniform nodes."""
    n = int(resolution)
    if n < 64 or n % 2:
        raise ValueError("profile resolution must be even and at least 64")
    t = (np.arange(n + 1) - n // 2) / n
    p = _slice(kernel, np.abs(t), False)
    p[0] = p[-1] = 0.0
    h = 1.0 / n
    # trapezoid with the Euler-Maclaurin end correction: fourth order for the
    # partial integrals; the corrections telescope, so the total is the plain
    # composite trapezoid value
    dp = np.sign(t) * _slice(kernel, np.abs(t), True)
    dp[0] = dp[-1] = 0.0
    seg = 0.5 * h * (p[1:] + p[:-1]) + h * h / 12.0 * (dp[:-1] - dp[1:])
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = float(cum[-1])
    sym = 0.5 * (cum + (total - cum[::-1]))
    P = sym / total
    P[0], P[n // 2], P[-1] = 0.0, 0.5, 1.0
    # the normalizing mass of p is resolution independent (Gauss-Legendre on
    # the half line, exact for polynomial slices), so p / mass integrates to
    # one even on coarse tables
    r, w = _gl(PROFILE_MASS_NODES, 0.0, 0.5)
    mass = 2.0 * float(np.sum(w * _slice(kernel, r, False)))
    return KernelProfile(kernel, t, p, P, mass)


def gamma_profile(profile: KernelProfile, jump: CompositeJump):
    """``t -> Gamma(t) = P(t) v- + (1 - P(t)) v+`` (shape ``(..., S)``)."""
    vp, vm = jump.v_plus, jump.v_minus

    def gamma(t):
        P = profile.P(t)[..., None]
        return P * vm + (1.0 - P) * vp

    return gamma


def zeta(t, a, b):
    """``a`` for ``t > 0``, ``b`` for ``t < 0``; ``t = 0`` takes the ``a`` branch."""
    t = np.asarray(t, dtype=float)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    sel = (t >= 0)[..., None] if a.ndim else (t >= 0)
    return np.where(sel, a, b)


def limit_surface_density(density, profile: KernelProfile, jump: CompositeJump,
                          quadrature: int = DEFAULT_PROFILE_RESOLUTION) -> float:
    """Composite-trapezoid value of the kernel limit density on ``[-1/2, 1/2]``.

    Second-order densities receive ``-p'(t) Delta (x) nu (x) nu`` in their
    second-derivative slot.
    """
    lay = density.layout
    if jump.layout.size != lay.size or jump.layout.N != lay.N or jump.layout.q != lay.q:
        raise ValueError("jump layout does not match the density")
    n = int(quadrature)
    if n < 2 or n % 2:
        raise ValueError("quadrature must be a positive even integer")
    t = (np.arange(n + 1) - n // 2) / n
    p = profile.p_at(t) / profile.mass
    gam = gamma_profile(profile, jump)(t)
    delta = jump.delta
    nu = jump.nu
    D1 = p[:, None, None] * np.einsum("c,a->ca", delta, nu)[None]
    D2 = None
    if density.order == 2:
        dp = profile.dp_at(t) / profile.mass
        D2 = -dp[:, None, None, None] * np.einsum("c,a,b->cab", delta, nu, nu)[None]
    f = zeta(t, np.broadcast_to(jump.f_minus, (n + 1, lay.q)), np.broadcast_to(jump.f_plus, (n + 1, lay.q)))
    F = density.value(gam, D1, f, D2)
    return float(np.sum(0.5 * (F[1:] + F[:-1])) / n)


# ----------------------------------------------------------------------------
# mollified fields
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class GridSpec:
    """Cell-centred uniform grid on the box ``[lo, hi]`` with ``shape`` cells."""

    lo: tuple
    hi: tuple
    shape: tuple

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(float(a) for a in self.lo))
        object.__setattr__(self, "hi", tuple(float(a) for a in self.hi))
        object.__setattr__(self, "shape", tuple(int(n) for n in self.shape))
        if not (len(self.lo) == len(self.hi) == len(self.shape)):
            raise ValueError("grid lo, hi and shape must have equal length")
        if any(n < 1 for n in self.shape) or any(b <= a for a, b in zip(self.lo, self.hi)):
            raise ValueError("degenerate grid")

    @classmethod
    def covering(cls, lo, hi, spacing: float) -> "GridSpec":
        shape = tuple(max(1, int(math.ceil((b - a) / spacing - 1e-9))) for a, b in zip(lo, hi))
        return cls(lo, hi, shape)

    @property
    def spacing(self) -> np.ndarray:
        return (np.array(self.hi) - np.array(self.lo)) / np.array(self.shape)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def axes(self) -> list:
        h = self.spacing
        return [self.lo[i] + (np.arange(n) + 0.5) * h[i] for i, n in enumerate(self.shape)]

    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def to_dict(self) -> dict:
        return {"lo": list(self.lo), "hi": list(self.hi), "shape": list(self.shape)}


@dataclass
class MollifiedField:
    """Mollified state on points with scaled derivative slots.

    ``D1 = eps grad psi`` with shape ``(P, S, N)``; ``D2 = eps^2 grad^2 psi``
    (only when requested); ``f`` is the (unmollified) inhomogeneity.
    """

    points: np.ndarray
    values: np.ndarray
    D1: np.ndarray
    D2: np.ndarray | None
    f: np.ndarray
    epsilon: float
    grid: GridSpec | None = None


def _tangential_rule(N: int, n: int):
    """Nodes ``z'`` in the ball of radius 1/2 of ``R^{N-1}``, weights, radii."""
    if N == 2:
        z, w = _gl(n, -0.5, 0.5)
        return z[:, None], w, np.abs(z)
    r, wr = _gl(n, 0.0, 0.5)
    nt = 2 * n
    th = 2.0 * math.pi * np.arange(nt) / nt
    R, TH = np.meshgrid(r, th, indexing="ij")
    W = (wr * r)[:, None] * np.full(nt, 2.0 * math.pi / nt)[None, :]
    Z = np.stack([(R * np.cos(TH)).ravel(), (R * np.sin(TH)).ravel()], axis=-1)
    return Z, W.ravel(), R.ravel()


def _check_separation(field: PiecewiseField, epsilon: float):
    if len(field.interfaces) < 2:
        return
    xs = field._sample_cross_section()
    vals = np.array([g.value(xs) for g in field.interfaces])
    gap = float(np.min(np.diff(vals, axis=0)))
    if gap <= epsilon:
        warnings.warn(f"interface separation {gap:.3g} does not exceed eps = {epsilon:.3g}; "
                      "transition layers overlap", RuntimeWarning, stacklevel=3)


def _lipschitz(field: PiecewiseField, g, epsilon):
    U = field.cross_section
    axes = [np.linspace(lo - epsilon, hi + epsilon, 129) for lo, hi in zip(U.lo, U.hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    xs = np.stack([m.ravel() for m in mesh], axis=-1)
    return float(np.sqrt(np.max(np.sum(g.gradient(xs) ** 2, axis=-1))))


def _interface_band(kernel, g, xa, xp, epsilon, order, rule, full, workers, inner):
    """Fraction above the interface and scaled derivatives for band points."""
    Z, wq, rho = rule
    P = xa.shape[0]
    n = Z.shape[1]
    frac = np.empty(P)
    d1 = np.empty((P, n + 1))
    d2 = np.empty((P, n + 1, n + 1)) if order == 2 else None
    gx, gw = inner

    def work(sl):
        y = xp[sl, None, :] + epsilon * Z[None]
        gv = g.value(y)
        b = (gv - xa[sl, None]) / epsilon
        C = kernels.slice_mass(b, rho, kernel.code, kernel.c, gx, gw)
        frac[sl] = 1.0 - (C @ wq) / full
        r = np.sqrt(b * b + rho[None] ** 2)
        om = kernel.omega(r) * wq[None] / full
        grad = g.gradient(y)
        nvec = np.concatenate([np.ones(b.shape + (1,)), -grad], axis=-1)
        d1[sl] = np.einsum("pq,pqa->pa", om, nvec)
        if order == 2:
            cs = b * kernel.omega_over_r(r) * wq[None] / full
            hess = g.hessian(y)
            out = -np.einsum("pq,pqa,pqb->pab", cs, nvec, nvec)
            out[:, 1:, 1:] -= epsilon * np.einsum("pq,pqab->pab", om, hess)
            d2[sl] = out

    chunk = 4096
    slices = [slice(s, min(P, s + chunk)) for s in range(0, P, chunk)]
    if workers and workers > 1 and len(slices) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            list(ex.map(work, slices))
    else:
        for sl in slices:
            work(sl)
    return frac, d1, d2


def mollify(field: PiecewiseField, kernel: Kernel, epsilon: float, grid, order: int = 1,
            profile: KernelProfile | None = None, n_quad: int = 48, n_inner: int = 48,
            workers: int = 1) -> MollifiedField:
    """Convolve a piecewise-constant field with ``eps^-N eta(x / eps)``.

    ``grid`` is a :class:`GridSpec` or an array of points ``(P, N)``.  In one
    dimension the convolution is exact up to the tabulated ``P``; for N >= 2
    each interface contributes a sliced quadrature (Gauss-Legendre over the
    tangential ball, exact chord masses along the stacking axis) restricted
    to the points within reach of the kernel.  The quadrature is normalized
    by its own total mass so constants are reproduced exactly.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    lay = field.layout
    N = lay.N
    if kernel.N != N:
        raise ValueError(f"kernel dimension {kernel.N} does not match field dimension {N}")
    spec = grid if isinstance(grid, GridSpec) else None
    pts = grid.points() if spec is not None else np.asarray(grid, dtype=float).reshape(-1, N)
    _check_separation(field, epsilon)
    idx = field.region_index(pts)
    base, f = field.values[idx], field.f_values[idx]
    Pn = pts.shape[0]
    values = np.array(base, dtype=float)
    D1 = np.zeros((Pn, lay.size, N))
    D2 = np.zeros((Pn, lay.size, N, N)) if order == 2 else None
    xa, xp = field.split_point(pts)
    perm = [field.axis] + list(field.tangential_axes)
    if N > 1:
        rule = _tangential_rule(N, n_quad)
        inner = _gl(n_inner)
        full = float(kernels.slice_mass(np.full((1, len(rule[2])), 1.0), rule[2], kernel.code,
                                        kernel.c, *inner)[0] @ rule[1])
    elif profile is None or profile.kernel != kernel:
        profile = profile_p(kernel, 4096)
    for i, g in enumerate(field.interfaces):
        delta = field.values[i + 1] - field.values[i]
        if not np.any(delta):
            continue
        gx_ = g.value(xp)
        above = (xa >= gx_).astype(float)
        if N == 1:
            s = (gx_ - xa) / epsilon
            band = np.abs(s) < 0.5
            sb = s[band]
            frac = 1.0 - profile.P(sb)
            d1 = (profile.p_at(sb) / profile.mass)[:, None]
            d2 = (-profile.dp_at(sb) / profile.mass)[:, None, None] if order == 2 else None
        else:
            reach = 0.5 * epsilon * (1.0 + _lipschitz(field, g, epsilon)) * (1.0 + 1e-9) + 1e-14
            band = np.abs(xa - gx_) < reach
            frac, d1, d2 = _interface_band(kernel, g, xa[band], xp[band], epsilon, order, rule, full, workers, inner)
        values[band] += (frac - above[band])[:, None] * delta
        # local order is (stacking axis, tangential axes); map back to x axes
        inv = np.argsort(perm)
        D1[band] += delta[None, :, None] * d1[:, inv][:, None, :]
        if order == 2:
            D2[band] += delta[None, :, None, None] * d2[:, inv][:, :, inv][:, None, :, :]
    return MollifiedField(pts, values, D1, D2, np.array(f, dtype=float), float(epsilon), spec)
