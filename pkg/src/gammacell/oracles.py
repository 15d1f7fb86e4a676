"""Independent reference computations used by tests and the ``check`` command.

Nothing here shares numerical kernels with the solvers it checks:

* :func:`brute_force_e1` discretizes the one-dimensional transition problem
  on a long physical interval with a trapezoid-in-state quadrature and
  minimizes it by fixed-step accelerated projected gradient descent;
* :func:`fd_gradient_check` compares an analytic gradient with central
  differences;
* :func:`operator_self_test` re-derives the discrete divergence / curl of the
  cell reconstructions with its own index arithmetic;
* closed forms for a few transition energies.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .fields import CompositeJump


@dataclass
class OracleReport:
    """Outcome of one oracle comparison; ``passed`` iff the relative test holds."""

    name: str
    reference: float
    test: float
    tolerance: float
    passed: bool = field(init=False)
    runtime: float = 0.0
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        self.passed = bool(abs(self.reference - self.test) <= self.tolerance * (1.0 + abs(self.reference)))

    def to_dict(self) -> dict:
        return {"name": self.name, "reference": self.reference, "test": self.test,
                "tolerance": self.tolerance, "passed": self.passed, "details": self.details}


# closed forms -------------------------------------------------------------------

def geodesic_e1_scalar(W, a: float, b: float, n: int = 8192) -> float:
    """``int_a^b 2 sqrt(W(u)) du`` by composite Simpson (independent of the trapezoid in cell1d)."""
    if a == b:
        return 0.0
    if n % 2:
        n += 1
    u = np.linspace(min(a, b), max(a, b), n + 1)
    w = np.asarray(W(u), dtype=float)
    if w.min() < 0:
        raise ValueError("well function is negative")
    y = 2.0 * np.sqrt(w)
    h = (u[-1] - u[0]) / n
    return float(h / 3.0 * (y[0] + y[-1] + 4.0 * y[1:-1:2].sum() + 2.0 * y[2:-1:2].sum()))


def aviles_giga_e1(alpha: float) -> float:
    """Transition energy of Aviles-Giga for tangential-gradient jump ``+-alpha`` (|grad u| = 1)."""
    return 8.0 * abs(alpha) ** 3 / 3.0


def two_well_e1(A, B) -> float:
    """Transition energy of ``|D G|^2 + |G-A|^2 |G-B|^2`` between rank-one connected wells."""
    return float(np.linalg.norm(np.asarray(A, float) - np.asarray(B, float))) ** 3 / 3.0


# brute force E1 -----------------------------------------------------------------

def _project(jump: CompositeJump, X):
    """Project node states onto the affine set of admissible one-dimensional profiles."""
    lay = jump.layout
    nu = jump.nu
    out = X.copy()
    if lay.k:
        G = out[:, lay.grad_slice].reshape(-1, lay.k, lay.N)
        G0 = jump.v_minus[lay.grad_slice].reshape(lay.k, lay.N)
        a = np.einsum("pkn,n->pk", G - G0, nu)
        out[:, lay.grad_slice] = (G0 + a[:, :, None] * nu).reshape(len(X), -1)
    if lay.d:
        H = out[:, lay.div_slice].reshape(-1, lay.d, lay.N)
        H0 = jump.v_minus[lay.div_slice].reshape(lay.d, lay.N)
        c = np.einsum("pdn,n->pd", H - H0, nu)
        out[:, lay.div_slice] = (H - c[:, :, None] * nu).reshape(len(X), -1)
    return out


def _tangent(jump, D):
    """Component of a direction field tangent to the admissible affine set."""
    return _project(jump, D + jump.v_minus) - jump.v_minus


class _BruteProblem:
    def __init__(self, density, jump, n, half_width):
        self.density, self.jump = density, jump
        self.n, self.T = n, half_width
        self.h = 2.0 * half_width / n
        lay = density.layout
        self.S, self.N = lay.size, lay.N
        # f on each interval from the sign of its midpoint
        self.f_left = np.tile(np.array(jump.f_minus), (n, 1))
        mids = -half_width + (np.arange(n) + 0.5) * self.h
        self.f_left[mids > 0] = jump.f_plus
        self.nu = jump.nu

    def full(self, Y):
        return np.vstack([self.jump.v_minus, Y, self.jump.v_plus])

    def energy_grad(self, Y):
        dens, h, nu = self.density, self.h, self.nu
        X = self.full(Y)
        n = self.n
        d = (X[1:] - X[:-1]) / h
        D1 = d[:, :, None] * nu[None, None, :]
        D2l = D2r = None
        if dens.order == 2:
            Xg = np.vstack([X[:1], X, X[-1:]])
            sec = (Xg[2:] - 2 * Xg[1:-1] + Xg[:-2]) / h ** 2
            nn = np.outer(nu, nu)
            D2l = sec[:-1, :, None, None] * nn
            D2r = sec[1:, :, None, None] * nn
        Fl = dens.value(X[:-1], D1, self.f_left, D2l)
        Fr = dens.value(X[1:], D1, self.f_left, D2r)
        E = float(0.5 * h * (np.sum(Fl) + np.sum(Fr)))
        gl = dens.grad(X[:-1], D1, self.f_left, D2l)
        gr = dens.grad(X[1:], D1, self.f_left, D2r)
        G = np.zeros_like(X)
        G[:-1] += 0.5 * h * gl[0]
        G[1:] += 0.5 * h * gr[0]
        gd = 0.5 * h * np.einsum("psn,n->ps", gl[1] + gr[1], nu) / h
        G[1:] += gd
        G[:-1] -= gd
        if dens.order == 2:
            nn = np.outer(nu, nu)
            gsec = np.zeros((n + 1, self.S))
            gsec[:-1] += 0.5 * h * np.einsum("psab,ab->ps", gl[2], nn)
            gsec[1:] += 0.5 * h * np.einsum("psab,ab->ps", gr[2], nn)
            gsec /= h ** 2
            Gg = np.zeros((n + 3, self.S))
            Gg[2:] += gsec
            Gg[1:-1] -= 2 * gsec
            Gg[:-2] += gsec
            Gg[1] += Gg[0]
            Gg[-2] += Gg[-1]
            G += Gg[1:-1]
        return E, G[1:-1]


def brute_force_e1(density, jump: CompositeJump, n: int = 4096, half_width: float = 10.0,
                   start_n: int = 64, max_iter: int = 40000, tol: float = 1e-9) -> float:
    """Fine-grid one-dimensional transition energy on ``[-T, T]`` (physical scaling).

    Uses full node states projected onto the admissible rank-one / normal-trace
    set, a trapezoid quadrature in the state argument and accelerated projected
    gradient descent with a fixed step found by power iteration, on a cascade of
    nested grids from ``start_n`` to ``n`` intervals.
    """
    if n < 4096:
        raise ValueError("brute force reference needs n >= 4096")
    if jump.no_jump:
        return 0.0
    levels = []
    m = start_n
    while m < n:
        levels.append(m)
        m *= 2
    levels.append(n)
    Y = None
    E = np.inf
    for lev in levels:
        prob = _BruteProblem(density, jump, lev, half_width)
        xs = -half_width + np.arange(1, lev) * prob.h
        if Y is None:
            t = np.clip(xs / half_width * 2.0, -1.0, 1.0) * 0.5 + 0.5
            Y = (1 - t)[:, None] * jump.v_minus + t[:, None] * jump.v_plus
        else:
            xo = -half_width + np.arange(0, lev // 2 + 1) * (2 * prob.h)
            Xo = np.vstack([jump.v_minus, Y, jump.v_plus])
            Y = np.stack([np.interp(xs, xo, Xo[:, c]) for c in range(Xo.shape[1])], axis=1)
        Y = _project(jump, Y)
        E, Y = _accelerated_descent(prob, Y, max_iter, tol)
    return float(E)


def _accelerated_descent(prob, Y, max_iter, tol):
    jump = prob.jump
    rng = np.random.default_rng(12345)
    # largest curvature by power iteration on finite-difference Hessian products
    vec = _tangent(jump, rng.standard_normal(Y.shape))
    lam = 1.0
    E0, g0 = prob.energy_grad(Y)
    for _ in range(30):
        nv = np.linalg.norm(vec)
        if nv == 0:
            break
        vec = vec / nv
        eps = 1e-6
        _, gp = prob.energy_grad(Y + eps * vec)
        Hv = _tangent(jump, (gp - g0) / eps)
        lam = float(np.linalg.norm(Hv))
        vec = Hv
    step = 1.0 / (1.5 * lam + 1e-300)
    X, Xprev = Y.copy(), Y.copy()
    E, g = E0, g0
    k = 0
    window_E = E
    for it in range(1, max_iter + 1):
        Z = X + (k / (k + 3.0)) * (X - Xprev)
        _, gz = prob.energy_grad(Z)
        Xn = _project(jump, Z - step * gz)
        En, gn = prob.energy_grad(Xn)
        if not np.isfinite(En):
            raise FloatingPointError("brute force descent diverged")
        if En > E:
            k = 0  # adaptive restart
            Xprev = X
        else:
            Xprev, X = X, Xn
            E, g = En, gn
            k += 1
        if it % 500 == 0:
            pg = _tangent(jump, g)
            if np.abs(pg).max() / prob.h <= tol or window_E - E <= tol * 1e-4 * max(1.0, abs(E)):
                break
            window_E = E
    return E, X


# gradient checks -----------------------------------------------------------------

def fd_gradient_check(objective, point, step: float = 1e-6, gradient=None, coords=None,
                      name: str = "fd_gradient", tolerance: float = 1e-5) -> OracleReport:
    """Compare an analytic gradient with central differences.

    ``objective(x)`` returns either a value or ``(value, gradient)``; a separate
    ``gradient`` callable may be given.  ``coords`` restricts the comparison to
    a subset of coordinates.  The reported test value is the worst
    ``|g - fd| / (1 + |g|)``; the report passes when it is at most ``tolerance``.
    """
    if not 1e-8 <= step <= 1e-4:
        raise ValueError("finite difference step must lie in [1e-8, 1e-4]")
    t0 = time.perf_counter()
    x = np.array(point, dtype=float)

    def val(z):
        r = objective(z)
        return r[0] if isinstance(r, tuple) else r

    if gradient is not None:
        g = np.asarray(gradient(x), dtype=float)
    else:
        g = np.asarray(objective(x)[1], dtype=float)
    flat = x.ravel()
    gflat = g.ravel()
    idx = range(flat.size) if coords is None else coords
    worst = 0.0
    for i in idx:
        e = np.zeros_like(flat)
        e[i] = step
        fd = (val((flat + e).reshape(x.shape)) - val((flat - e).reshape(x.shape))) / (2 * step)
        worst = max(worst, abs(gflat[i] - fd) / (1.0 + abs(gflat[i])))
    rep = OracleReport(name, 0.0, worst, tolerance)
    rep.passed = worst <= tolerance
    rep.runtime = time.perf_counter() - t0
    return rep


def density_gradient_check(density, n_points: int = 1000, seed: int = 0, step: float = 1e-6,
                           scale: float = 1.5) -> OracleReport:
    """Central-difference check of a density's analytic slot gradients at random points."""
    rng = np.random.default_rng(seed)
    lay = density.layout
    S, N, q = lay.size, lay.N, lay.q
    P = n_points
    v = rng.uniform(-scale, scale, (P, S))
    D1 = rng.uniform(-scale, scale, (P, S, N))
    f = rng.uniform(-scale, scale, (P, q))
    D2 = rng.uniform(-scale, scale, (P, S, N, N)) if density.order == 2 else None
    gv, g1, g2 = density.grad(v, D1, f, D2)
    worst = 0.0
    t0 = time.perf_counter()
    slots = [("v", v, gv), ("D1", D1, g1)] + ([("D2", D2, g2)] if D2 is not None else [])
    for name, arr, g in slots:
        flat = arr.reshape(P, -1)
        gflat = g.reshape(P, -1)
        for j in range(flat.shape[1]):
            plus = flat.copy()
            minus = flat.copy()
            plus[:, j] += step
            minus[:, j] -= step
            args = {"v": v, "D1": D1, "D2": D2}
            args[name] = plus.reshape(arr.shape)
            fp = density.value(args["v"], args["D1"], f, args["D2"])
            args[name] = minus.reshape(arr.shape)
            fm = density.value(args["v"], args["D1"], f, args["D2"])
            fd = (fp - fm) / (2 * step)
            err = np.abs(gflat[:, j] - fd) / (1.0 + np.abs(gflat[:, j]))
            worst = max(worst, float(err.max()))
    rep = OracleReport(f"density_gradient[{density.name}]", 0.0, worst, 1e-5,
                       runtime=time.perf_counter() - t0, details={"points": P})
    rep.passed = worst <= 1e-5
    return rep


# kernel slice profile --------------------------------------------------------------

_KERNEL_BASES = {
    "bump": lambda r: np.exp(-1.0 / (0.25 - r * r)) if r * r < 0.25 else 0.0,
    "poly": lambda r: (0.25 - r * r) ** 2 if r * r < 0.25 else 0.0,
}


def slice_profile_reference(name: str, N: int, t: float = 0.0) -> float:
    """``p(t)`` from adaptive radial quadrature: slice integral over polar mass.

    The slice is integrated in polar coordinates of the hyperplane ``{x_1 = t}``
    and the mass in polar coordinates of ``R^N``.
    """
    from math import gamma, pi
    from scipy.integrate import quad

    base = _KERNEL_BASES[name]
    area = lambda n: 2.0 * pi ** (n / 2.0) / gamma(n / 2.0)
    mass = area(N) * quad(lambda r: base(r) * r ** (N - 1), 0.0, 0.5, epsabs=1e-15, epsrel=1e-13, limit=200)[0]
    if N == 1:
        return base(abs(t)) / mass
    a2 = 0.25 - t * t
    if a2 <= 0:
        return 0.0
    num = area(N - 1) * quad(lambda s: base(np.sqrt(t * t + s * s)) * s ** (N - 2), 0.0, np.sqrt(a2),
                             epsabs=1e-15, epsrel=1e-13, limit=200)[0]
    return num / mass


def slice_profile_check(name: str = "poly", N: int = 2, resolution: int = 2048,
                        tolerance: float = 1e-8) -> OracleReport:
    """Compare the mollifier's tabulated ``p(0)`` with :func:`slice_profile_reference`."""
    from .mollifier import Kernel, profile_p

    t0 = time.perf_counter()
    ref = slice_profile_reference(name, N, 0.0)
    prof = profile_p(Kernel(name, N), resolution)
    test = float(prof.p_at(np.array([0.0]))[0] / prof.mass)
    rep = OracleReport(f"slice_profile[{name},N={N}]", ref, test, tolerance,
                       runtime=time.perf_counter() - t0, details={"resolution": resolution})
    return rep


# discrete operator identities -----------------------------------------------------------

def _cd(X, ax, h, zero_ghost):
    """Central difference written out with explicit index shifts."""
    n = X.shape[ax]
    out = np.empty_like(X)
    idx = np.arange(n)
    if ax == 0:
        up = np.take(X, np.minimum(idx + 1, n - 1), axis=0)
        dn = np.take(X, np.maximum(idx - 1, 0), axis=0)
        if zero_ghost:
            up = up.copy()
            dn = dn.copy()
            up[-1] = 0.0
            dn[0] = 0.0
    else:
        up = np.take(X, (idx + 1) % n, axis=ax)
        dn = np.take(X, (idx - 1) % n, axis=ax)
    out[...] = (up - dn) / (2.0 * h)
    return out


def operator_self_test(grid=(64, 64), seed: int = 0, tolerance: float = 1e-12) -> OracleReport:
    """Structural identities of the cell reconstructions on ``grid`` cells.

    * the divergence (contravariant, central differences) of divergence-free
      reconstructions from random stream potentials vanishes;
    * the covariant curl of curl-free reconstructions from random scalar
      potentials vanishes;
    * tangential translation commutes with the reconstruction (periodic wrap)
      and shifting by a full period is the identity;
    * every stencil and the parametrization satisfy ``<D x, y> = <x, D^T y>``.

    The identities are re-derived here with their own index arithmetic.  The
    reported test value is the worst normalized violation.
    """
    from . import stencils
    from .cellnd import LatticeBasis
    from .fields import Layout

    t0 = time.perf_counter()
    grid = tuple(int(n) for n in grid)
    nl = len(grid)
    if nl not in (2, 3):
        raise ValueError("operator self test needs a 2D or 3D grid")
    rng = np.random.default_rng(seed)
    shape = (grid[0] + 1,) + grid[1:]
    h = [1.0 / n for n in grid]
    nu = np.zeros(nl)
    nu[0] = 1.0
    tangents = np.eye(nl)[1:].copy()
    tangents[0, 0] = 0.0
    tangents[-1] = tangents[-1] + tangents[0]
    basis = LatticeBasis(nu, tangents)
    lay = Layout(N=nl, k=1, d=1, m=1)
    checks = {}
    for cls in ("relaxed", "clamped"):
        par = stencils.Parametrization(lay, shape, nu, M=basis.M, cls=cls)
        x = rng.standard_normal(par.size)
        W = par.apply(x)
        G = W[..., lay.grad_slice].reshape(shape + (nl,))
        H = W[..., lay.div_slice].reshape(shape + (nl,))
        con = np.einsum("an,...n->...a", np.linalg.inv(basis.M), H)
        div = sum(_cd(con[..., a], a, h[a], False) for a in range(nl))
        cov = np.einsum("na,...n->...a", basis.M, G)
        curl = 0.0
        for a in range(nl):
            for b in range(a + 1, nl):
                r = _cd(cov[..., b], a, h[a], False) - _cd(cov[..., a], b, h[b], False)
                curl = max(curl, float(np.abs(r).max()))
        scale = max(1.0, float(np.abs(W).max()))
        checks[f"div[{cls}]"] = float(np.abs(div).max()) / scale
        checks[f"curl[{cls}]"] = curl / scale
        # periodic wrap: shift unknowns along each tangential axis
        parts = par.unpack(x)
        wrap = 0.0
        period = 0.0
        for ax in range(1, nl):
            rolled = {k: (np.roll(v, 1, axis=ax) if v.ndim >= nl and k in ("sigma", "phi", "chi", "vecA") else v)
                      for k, v in parts.items()}
            Wr = par.apply(par.pack(rolled))
            wrap = max(wrap, float(np.abs(Wr - np.roll(W, 1, axis=ax)).max()))
            full = {k: (np.roll(v, grid[ax], axis=ax) if v.ndim >= nl and k in ("sigma", "phi", "chi", "vecA")
                        else v) for k, v in parts.items()}
            period = max(period, float(np.abs(par.apply(par.pack(full)) - W).max()))
        checks[f"wrap[{cls}]"] = wrap / scale
        checks[f"period[{cls}]"] = period
        y = rng.standard_normal(W.shape)
        lhs = float(np.sum(W * y))
        rhs = float(np.dot(x, par.adjoint(y)))
        checks[f"adjoint_param[{cls}]"] = abs(lhs - rhs) / (1.0 + abs(lhs))
    pairs = [("avg", stencils.avg, stencils.avg_T, {}),
             ("diff", lambda X, ax: stencils.diff(X, ax, 0.37), lambda C, ax: stencils.diff_T(C, ax, 0.37), {}),
             ("second", lambda X, ax: stencils.second(X, ax, 0.37),
              lambda C, ax: stencils.second_T(C, ax, 0.37), {}),
             ("central_const", lambda X, ax: stencils.central(X, ax, 0.37, "const"),
              lambda C, ax: stencils.central_T(C, ax, 0.37, "const"), {}),
             ("central_zero", lambda X, ax: stencils.central(X, ax, 0.37, "zero"),
              lambda C, ax: stencils.central_T(C, ax, 0.37, "zero"), {})]
    for name, D, DT, _ in pairs:
        worst = 0.0
        for ax in range(nl):
            X = rng.standard_normal(shape)
            DX = D(X, ax)
            Y = rng.standard_normal(DX.shape)
            lhs = float(np.sum(DX * Y))
            rhs = float(np.sum(X * DT(Y, ax)))
            worst = max(worst, abs(lhs - rhs) / (1.0 + abs(lhs)))
        checks[f"adjoint_{name}"] = worst
    X = rng.standard_normal(shape)
    Y = rng.standard_normal(stencils.cell_mean(X, nl).shape)
    checks["adjoint_cell_mean"] = abs(float(np.sum(stencils.cell_mean(X, nl) * Y))
                                      - float(np.sum(X * stencils.cell_mean_T(Y, nl)))) / (1.0 + float(np.abs(Y).sum()))
    worst = max(checks.values())
    rep = OracleReport(f"operator_self_test[{'x'.join(map(str, grid))}]", 0.0, worst, tolerance,
                       runtime=time.perf_counter() - t0, details=checks)
    rep.passed = worst <= tolerance
    return rep


def profile_property_check(name: str = "bump", N: int = 1, resolution: int = 2048) -> OracleReport:
    """Unit mass, evenness and support of ``p`` and clamping of ``P`` / ``Gamma``.

    The mass is integrated with adaptive quadrature of the tabulated ``p``;
    the test value is the worst of ``|int p - 1|``, ``max |p(t) - p(-t)|``,
    ``max |p|`` outside ``[-1/2, 1/2]`` and the clamp errors of ``P``.
    """
    from scipy.integrate import quad

    from .mollifier import Kernel, profile_p

    t0 = time.perf_counter()
    prof = profile_p(Kernel(name, N), resolution)
    p = lambda t: float(prof.p_at(np.array([t]))[0] / prof.mass)
    mass = quad(p, -0.5, 0.5, epsabs=1e-14, epsrel=1e-13, limit=400, points=[0.0])[0]
    rng = np.random.default_rng(0)
    t = rng.uniform(0.0, 0.6, 2000)
    even = float(np.abs(prof.p_at(t) - prof.p_at(-t)).max())
    outside = np.concatenate([rng.uniform(0.5, 3.0, 500), -rng.uniform(0.5, 3.0, 500), [0.5, -0.5]])
    supp = float(np.abs(prof.p_at(outside)).max())
    hi = outside[outside >= 0.5]
    lo = outside[outside <= -0.5]
    clamp = max(float(np.abs(prof.P(hi) - 1.0).max()), float(np.abs(prof.P(lo)).max()))
    checks = {"mass_error": abs(mass - 1.0), "evenness": even, "support": supp, "clamp": clamp}
    worst = max(checks["mass_error"] / 1e-8, even / 1e-12, supp, clamp)
    rep = OracleReport(f"profile_properties[{name},N={N}]", 0.0, worst, 1.0,
                       runtime=time.perf_counter() - t0, details=checks)
    rep.passed = checks["mass_error"] <= 1e-8 and even <= 1e-12 and supp == 0.0 and clamp == 0.0
    return rep
