"""One-dimensional optimal transition profiles.

For a fixed ``L`` the discrete cell energy

    R_L(theta) = (1/L) int_{-1/2}^{1/2} F(L^n theta^(n) (x) nu^n, ..., L theta' (x) nu, theta, f) dt

is minimized over profiles pinned to ``v-`` at ``t = -1/2`` and ``v+`` at
``t = 1/2``.  A profile is a ramp ``(1 - theta(t/L)) v- + theta(t/L) v+``
plus a perturbation on the interior nodes; the curl-free block moves along
the rank-one line ``a(t) (x) nu`` and the divergence-free block keeps its
normal component.  E1 is the minimum of ``R_L`` over a geometric L grid.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .fields import CompositeJump
from .functionals import curvature_scales
from .optim import lbfgs
from .stencils import CellEngine, Parametrization, Preconditioner, ramp_values

DEFAULT_GRID_N = 2048
DEFAULT_L_GRID = tuple(2.0 ** -k for k in range(0, 9))


class UnconvergedError(RuntimeError):
    """The optimizer failed everywhere; ``result`` carries the best effort."""

    def __init__(self, message, result):
        super().__init__(message)
        self.result = result


@dataclass
class Profile1D:
    """Node values of a transition profile on ``t_i = -1/2 + i/n``."""

    t: np.ndarray
    values: np.ndarray
    L: float

    def to_rows(self):
        return [[float(t)] + [float(x) for x in row] for t, row in zip(self.t, self.values)]


@dataclass
class E1Result:
    value: float
    L_star: float
    profile: Profile1D
    iterations: int
    converged: bool
    grad_norm: float
    grid_n: int
    table: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"value": self.value, "L_star": self.L_star, "iterations": self.iterations,
                "converged": self.converged, "grad_norm": self.grad_norm, "grid_n": self.grid_n,
                "l_scan": self.table}


def analytic_e1_modica(W, a: float, b: float, quadrature_n: int = 8192) -> float:
    """Geodesic value ``int_a^b 2 sqrt(W(u)) du`` by the composite trapezoid rule."""
    if a == b:
        return 0.0
    u = np.linspace(a, b, quadrature_n + 1)
    w = np.asarray(W(u), dtype=float)
    if np.any(w < 0):
        raise ValueError("W is negative at a quadrature node")
    return float(abs(np.trapezoid(2.0 * np.sqrt(w), u)))


class CellProblem1D:
    """Discrete one-dimensional cell problem at fixed ``L``."""

    def __init__(self, density, jump: CompositeJump, n: int, L: float, ramp: str = "quintic",
                 cls: str = "relaxed", profile=None, scales=None):
        if n < 8 or n % 2:
            raise ValueError("grid_n must be even and at least 8")
        self.density, self.jump, self.n, self.L = density, jump, int(n), float(L)
        self.ramp, self.cls = ramp, cls
        th = ramp_values(n, L, ramp, profile)
        W0 = (1.0 - th)[:, None] * jump.v_minus + th[:, None] * jump.v_plus
        self.param = Parametrization(density.layout, (n + 1,), jump.nu, cls=cls, W0=W0)
        self.engine = CellEngine(density, (n + 1,), jump.nu.reshape(-1, 1), L, jump.f_minus, jump.f_plus)
        if scales is None:
            scales = curvature_scales(density, [jump.v_minus, jump.v_plus], [jump.f_minus, jump.f_plus])
        self.scales = scales
        self.precond = Preconditioner(self.param, L, *scales)

    def objective(self, x):
        E, G = self.engine.energy_grad(self.param.apply(x))
        return E, self.param.adjoint(G)

    def state(self, x):
        return self.param.apply(x)

    def fit(self, W) -> np.ndarray:
        """Unknowns reproducing an admissible node state ``W`` (pointwise inverse)."""
        return fit_pointwise(self.param, W)

    def solve(self, x0=None, gtol=1e-8, maxiter=10000):
        x0 = np.zeros(self.param.size) if x0 is None else x0
        return lbfgs(self.objective, x0, self.precond, gtol=gtol, maxiter=maxiter,
                     norm="precond")


def fit_pointwise(param: Parametrization, W) -> np.ndarray:
    """Invert the pointwise (non-potential) groups of a parametrization.

    ``W`` must differ from ``param.W0`` only on the free rows, by a field of
    the admissible one-dimensional form (tangentially constant for the
    curl-free and divergence-free blocks).
    """
    lay = param.layout
    D = np.asarray(W, dtype=float) - param.W0
    parts = {}
    names = [g[0] for g in param.groups]
    first = (slice(None),) + (0,) * len(param.tang)
    if "sigma" in names:
        parts["sigma"] = D[param.rows][..., lay.psi_slice]
    if "a1d" in names:
        G = D[first][:, lay.grad_slice].reshape(-1, lay.k, lay.N)
        parts["a1d"] = (G @ param.nu)[param.rows]
    if "b1d" in names:
        H = D[first][:, lay.div_slice].reshape(-1, lay.d, lay.N)
        parts["b1d"] = (H @ param.T)[param.rows]
    return param.pack(parts)


def compress_rows(W, K: int) -> np.ndarray:
    """Place a node array into the central ``1/K`` of a ``K``-times finer row grid.

    Rows outside the copied block repeat the boundary rows; tangential axes
    are tiled ``K`` times.  This realizes ``w(s) -> w(K s)`` exactly on nodes.
    """
    K = int(K)
    n1 = W.shape[0] - 1
    if (K - 1) * n1 % 2:
        raise ValueError("compression needs (K-1) * n1 even")
    off = (K - 1) * n1 // 2
    out = np.empty((K * n1 + 1,) + W.shape[1:])
    out[:off] = W[0]
    out[off:off + n1 + 1] = W
    out[off + n1 + 1:] = W[-1]
    return out


def _solve_task(args):
    density, jump, n, L, ramp, cls, gtol, maxiter, x0 = args
    prob = CellProblem1D(density, jump, n, L, ramp, cls)
    res = prob.solve(x0, gtol, maxiter)
    return {"L": L, "value": res.fun, "converged": res.converged, "grad_norm": res.grad_norm,
            "iterations": res.iterations, "n": n, "W": prob.state(res.x), "message": res.message}


def _run(tasks, workers):
    if workers and workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(_solve_task, tasks))
    return [_solve_task(t) for t in tasks]


def _result_from_rows(rows, grid_n) -> E1Result:
    vals = np.array([r["value"] for r in rows])
    vmin = vals.min()
    # tie-break: smallest L within 1e-9 of the minimum
    cands = [r for r in rows if r["value"] <= vmin + 1e-9]
    best = min(cands, key=lambda r: r["L"])
    n = best["n"]
    prof = Profile1D(-0.5 + np.arange(n + 1) / n, best["W"], best["L"])
    table = [{k: r[k] for k in ("L", "value", "converged", "grad_norm", "iterations", "n")} for r in rows]
    return E1Result(float(best["value"]), float(best["L"]), prof, int(sum(r["iterations"] for r in rows)),
                    bool(best["converged"]), float(best["grad_norm"]), grid_n, table)


def optimize_e1(density, jump: CompositeJump, grid_n: int = DEFAULT_GRID_N, l_grid=DEFAULT_L_GRID,
                ramp: str = "quintic", cls: str = "relaxed", gtol: float = 1e-8, maxiter: int = 10000,
                workers: int = 1, warm_start: Profile1D | None = None) -> E1Result:
    """Minimize the discrete one-dimensional cell energy over profiles and the L grid.

    ``warm_start`` (a profile on a grid dividing ``grid_n``) is interpolated to
    the new grid and used as the initial guess at its own L.
    """
    if grid_n < 128:
        raise ValueError("grid_n must be at least 128")
    l_grid = sorted({float(L) for L in l_grid}, reverse=True)
    if not l_grid or min(l_grid) <= 0:
        raise ValueError("L grid must contain positive values")
    tasks = []
    for L in l_grid:
        x0 = None
        if warm_start is not None and np.isclose(warm_start.L, L):
            prob = CellProblem1D(density, jump, grid_n, L, ramp, cls)
            t = -0.5 + np.arange(grid_n + 1) / grid_n
            Wi = np.stack([np.interp(t, warm_start.t, warm_start.values[:, c])
                           for c in range(warm_start.values.shape[1])], axis=1)
            x0 = prob.fit(Wi)
        tasks.append((density, jump, grid_n, L, ramp, cls, gtol, maxiter, x0))
    rows = _run(tasks, workers)
    result = _result_from_rows(rows, grid_n)
    if not any(r["converged"] for r in rows):
        raise UnconvergedError("optimizer did not converge at any L", result)
    return result


def l_scan_report(density, jump: CompositeJump, grid_n: int = DEFAULT_GRID_N, l_grid=DEFAULT_L_GRID,
                  mode: str = "fixed", ramp: str = "quintic", cls: str = "relaxed", gtol: float = 1e-8,
                  maxiter: int = 10000, workers: int = 1) -> list[dict]:
    """Table of ``(L, R_L)`` over a geometric L grid with integer ratio.

    ``mode='fixed'`` solves every L on the same grid.  ``mode='scaled'`` keeps
    the resolution per transition width fixed: going from ``K L`` to ``L`` the
    grid is refined ``K`` times and the previous optimum, compressed by ``K``,
    is the warm start, so the discrete values satisfy ``R_L <= R_{KL}`` by
    construction.
    """
    l_grid = sorted({float(L) for L in l_grid}, reverse=True)
    if mode == "fixed":
        tasks = [(density, jump, grid_n, L, ramp, cls, gtol, maxiter, None) for L in l_grid]
        rows = _run(tasks, workers)
    elif mode == "scaled":
        rows = []
        prev = None
        n = grid_n
        for L in l_grid:
            x0 = None
            if prev is not None:
                K = int(round(prev["L"] / L))
                if not np.isclose(prev["L"], K * L):
                    raise ValueError("scaled mode needs an integer ratio between consecutive L")
                n = prev["n"] * K
                prob = CellProblem1D(density, jump, n, L, ramp, cls)
                x0 = prob.fit(compress_rows(prev["W"], K))
            prev = _solve_task((density, jump, n, L, ramp, cls, gtol, maxiter, x0))
            rows.append(prev)
    else:
        raise ValueError(f"unknown scan mode {mode!r}")
    return [{k: r[k] for k in ("L", "value", "converged", "grad_norm", "iterations", "n")} for r in rows]
