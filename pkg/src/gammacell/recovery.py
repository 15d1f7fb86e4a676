"""Recovery sequences: mollified fields, their interface modification and energy scans.

The primary sequence is ``psi_eps = eta_eps * v``.  The modified sequence adds
a cell perturbation across one planar interface,

    u_eps(x) = psi_eps(x) + sigma(L M^{-1} (x - x0) / eps),

where ``sigma`` is the optimal perturbation of the periodic cell problem at
scale ``L`` around the kernel ramp ``P(s_1 / L)``.  For a planar interface
``psi_eps`` coincides with that ramp, so ``u_eps`` is the cell field rescaled
and its energy per unit area approaches the cell value ``R_L``.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.fft as sfft

from .cell1d import CellProblem1D
from .cellnd import CellProblemND, LatticeBasis
from .fields import PiecewiseField, trace_pair
from .mollifier import GridSpec, Kernel, MollifiedField, mollify, profile_p

DEFAULT_EPSILONS = (0.1, 0.05, 0.025, 0.0125)


@dataclass(frozen=True)
class RecoveryConfig:
    kernel: str = "bump"
    epsilons: tuple = DEFAULT_EPSILONS
    spacing_ratio: float = 16.0
    L: float = 0.125
    cell_grid: tuple | None = None
    n_quad: int = 48
    mean_correction: bool = False
    workers: int = 1

    def __post_init__(self):
        eps = tuple(float(e) for e in self.epsilons)
        object.__setattr__(self, "epsilons", eps)
        if not eps or any(e <= 0 for e in eps):
            raise ValueError("epsilons must be positive")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ValueError("epsilons must be strictly decreasing")
        if self.spacing_ratio < 16:
            raise ValueError("grid spacing must be at most eps / 16")
        if not 0 < self.L <= 1:
            raise ValueError("L must lie in (0, 1]")

    def grid(self, box, epsilon) -> GridSpec:
        return GridSpec.covering(box.lo, box.hi, epsilon / self.spacing_ratio)

    def to_dict(self) -> dict:
        return {"kernel": self.kernel, "epsilons": list(self.epsilons), "spacing_ratio": self.spacing_ratio,
                "L": self.L, "cell_grid": None if self.cell_grid is None else list(self.cell_grid),
                "n_quad": self.n_quad, "mean_correction": self.mean_correction}


@dataclass
class EnergyTrace:
    rows: list
    extrapolated: float
    predicted: float
    rate: float | None
    monotone: bool
    mode: str
    details: dict = dc_field(default_factory=dict)

    @property
    def relative_gap(self) -> float:
        return abs(self.extrapolated - self.predicted) / max(abs(self.predicted), 1e-300)

    def to_dict(self) -> dict:
        return {"mode": self.mode, "rows": self.rows, "extrapolated": self.extrapolated,
                "predicted": self.predicted, "relative_gap": self.relative_gap if self.predicted else None,
                "rate": self.rate, "monotone": self.monotone, "details": self.details}


# ----------------------------------------------------------------------------
# primary sequence and energy
# ----------------------------------------------------------------------------

def _bump_weight(grid: GridSpec, pts):
    """Smooth ``lambda >= 0`` vanishing on the box boundary with unit grid integral."""
    lo, hi = np.array(grid.lo), np.array(grid.hi)
    ln = hi - lo
    u = np.pi * (pts - lo) / ln
    s, c = np.sin(u), np.cos(u)
    lam_f = s * s
    d_f = 2.0 * s * c * np.pi / ln
    dd_f = 2.0 * (c * c - s * s) * (np.pi / ln) ** 2
    N = pts.shape[1]
    lam = np.prod(lam_f, axis=1)
    norm = float(np.sum(lam) * grid.cell_volume)
    grad = np.empty_like(pts)
    hess = np.empty(pts.shape + (N,))
    for a in range(N):
        others = [lam_f[:, b] for b in range(N) if b != a]
        grad[:, a] = d_f[:, a] * (np.prod(others, axis=0) if others else 1.0)
        for b in range(N):
            if a == b:
                rest = [lam_f[:, c] for c in range(N) if c != a]
                hess[:, a, a] = dd_f[:, a] * (np.prod(rest, axis=0) if rest else 1.0)
            else:
                rest = [lam_f[:, c] for c in range(N) if c not in (a, b)]
                hess[:, a, b] = d_f[:, a] * d_f[:, b] * (np.prod(rest, axis=0) if rest else 1.0)
    return lam / norm, grad / norm, hess / norm


def mean_correct(mf: MollifiedField, field: PiecewiseField) -> tuple[MollifiedField, np.ndarray]:
    """Add ``lambda d_eps`` to the unconstrained block so its grid mean matches the field.

    ``d_eps`` is the difference of the grid integrals of the field and of the
    mollified block; returns the corrected field and ``d_eps``.
    """
    grid = mf.grid
    if grid is None:
        raise ValueError("mean correction needs a grid")
    lay = field.layout
    if not lay.m:
        return mf, np.zeros(0)
    sl = lay.psi_slice
    vol = grid.cell_volume
    exact = field.evaluate(mf.points)[0][:, sl]
    d = (np.sum(exact, axis=0) - np.sum(mf.values[:, sl], axis=0)) * vol
    lam, g, H = _bump_weight(grid, mf.points)
    eps = mf.epsilon
    values = mf.values.copy()
    values[:, sl] += lam[:, None] * d
    D1 = mf.D1.copy()
    D1[:, sl, :] += eps * d[None, :, None] * g[:, None, :]
    D2 = None
    if mf.D2 is not None:
        D2 = mf.D2.copy()
        D2[:, sl] += eps * eps * d[None, :, None, None] * H[:, None]
    return MollifiedField(mf.points, values, D1, D2, mf.f, eps, grid), d


def build_primary(field: PiecewiseField, kernel: Kernel, epsilon: float, grid: GridSpec, order: int = 1,
                  n_quad: int = 48, workers: int = 1, mean_correction: bool = False) -> MollifiedField:
    """Mollified field with derivative slots (see :func:`mollify`)."""
    mf = mollify(field, kernel, epsilon, grid, order=order, n_quad=n_quad, workers=workers)
    if mean_correction:
        mf, _ = mean_correct(mf, field)
    return mf


def energy(mf: MollifiedField, density, epsilon: float | None = None, grid: GridSpec | None = None,
           domain=None) -> float:
    """Midpoint-rule value of ``(1/eps) int_Omega F(eps^n D^n u, ..., eps D u, u, f)``."""
    grid = grid if grid is not None else mf.grid
    if grid is None:
        raise ValueError("energy needs the grid the field was sampled on")
    eps = mf.epsilon if epsilon is None else float(epsilon)
    if domain is not None:
        lo, hi = np.asarray(domain.lo), np.asarray(domain.hi)
        if np.any(np.array(grid.lo) > lo + 1e-12) or np.any(np.array(grid.hi) < hi - 1e-12):
            raise ValueError("grid does not cover the domain")
    if mf.values.shape[0] != int(np.prod(grid.shape)):
        raise ValueError("field samples do not match the grid")
    D2 = mf.D2 if density.order == 2 else None
    if density.order == 2 and D2 is None:
        raise ValueError("second-order density needs the second-derivative slot")
    F = density.value(mf.values, mf.D1, mf.f, D2)
    return float(np.sum(F) * grid.cell_volume / eps)


# ----------------------------------------------------------------------------
# modified sequence
# ----------------------------------------------------------------------------

@dataclass
class CellPerturbation:
    """Periodic cell perturbation ``sigma`` on lattice coordinates with a spectral interpolant.

    ``sigma`` has shape ``(n1 + 1, n2, ..., S)`` with zero boundary rows; it
    is expanded in sines along ``s_1`` and Fourier modes along the periodic
    axes, so it can be evaluated (with derivatives) at arbitrary ``s``.
    """

    L: float
    nu: np.ndarray
    M: np.ndarray | None
    sigma: np.ndarray
    value: float
    converged: bool

    def __post_init__(self):
        sig = np.asarray(self.sigma, dtype=float)
        n1 = sig.shape[0] - 1
        inner = sig[1:-1]
        B = sfft.dst(inner, type=1, axis=0) / n1
        tang_axes = tuple(range(1, sig.ndim - 1))
        if tang_axes:
            B = sfft.fftn(B, axes=tang_axes) / np.prod([sig.shape[a] for a in tang_axes])
        self._coef = B
        self._n1 = n1
        self._tang = tuple(sig.shape[a] for a in tang_axes)

    @property
    def J(self) -> np.ndarray:
        if self.M is None:
            return self.nu.reshape(-1, 1)
        return np.linalg.inv(self.M).T

    def evaluate(self, s, order: int = 1):
        """``sigma``, lattice gradient ``(P, S, nl)`` and Hessian at points ``s`` (P, nl)."""
        s = np.asarray(s, dtype=float)
        P, nl = s.shape
        K = self._n1 - 1
        k = np.arange(1, K + 1)
        arg = np.pi * np.outer(s[:, 0] + 0.5, k)
        inside = np.abs(s[:, 0]) < 0.5
        Sn, Cs = np.sin(arg), np.cos(arg) * (np.pi * k)
        Sdd = -Sn * (np.pi * k) ** 2
        C = self._coef.reshape(K, -1, self.sigma.shape[-1])
        if nl == 1:
            E = np.ones((P, 1))
            freqs = np.zeros((1, 0))
        else:
            freqs = np.stack(np.meshgrid(*[sfft.fftfreq(n, 1.0 / n) for n in self._tang], indexing="ij"),
                             axis=-1).reshape(-1, nl - 1)
            ph = 2.0 * np.pi * ((s[:, 1:] + 0.5) @ freqs.T)
            E = np.exp(1j * ph)
        SC = np.einsum("pk,kms->pms", Sn, C)
        val = np.real(np.einsum("pms,pm->ps", SC, E))
        grad = np.zeros((P, C.shape[-1], nl))
        grad[..., 0] = np.real(np.einsum("pms,pm->ps", np.einsum("pk,kms->pms", Cs, C), E))
        for a in range(1, nl):
            w = 2j * np.pi * freqs[:, a - 1]
            grad[..., a] = np.real(np.einsum("pms,pm->ps", SC, E * w))
        hess = None
        if order == 2:
            hess = np.zeros((P, C.shape[-1], nl, nl))
            CC = np.einsum("pk,kms->pms", Cs, C)
            hess[..., 0, 0] = np.real(np.einsum("pms,pm->ps", np.einsum("pk,kms->pms", Sdd, C), E))
            for a in range(1, nl):
                wa = 2j * np.pi * freqs[:, a - 1]
                hess[..., 0, a] = hess[..., a, 0] = np.real(np.einsum("pms,pm->ps", CC, E * wa))
                for b in range(1, nl):
                    wb = 2j * np.pi * freqs[:, b - 1]
                    hess[..., a, b] = np.real(np.einsum("pms,pm->ps", SC, E * wa * wb))
        val[~inside] = 0.0
        grad[~inside] = 0.0
        if hess is not None:
            hess[~inside] = 0.0
        return val, grad, hess


def optimal_perturbation(density, jump, L: float, kernel: Kernel, grid=None, gtol: float = 1e-8,
                         maxiter: int = 10000, profile=None) -> CellPerturbation:
    """Optimal cell perturbation around the kernel ramp at scale ``L``."""
    profile = profile if profile is not None else profile_p(kernel, 4096)
    N = density.layout.N
    if N == 1:
        n = 256 if grid is None else int(np.ravel(grid)[0])
        prob = CellProblem1D(density, jump, n, L, ramp="kernel", profile=profile)
        res = prob.solve(None, gtol, maxiter)
        sigma = prob.state(res.x) - prob.param.W0
        return CellPerturbation(L, np.asarray(jump.nu), None, sigma, res.fun, res.converged)
    basis = LatticeBasis.orthonormal(jump.nu)
    grid = grid if grid is not None else (64,) * N
    prob = CellProblemND(density, jump, basis, grid, L, ramp="kernel", profile=profile)
    p1 = prob.one_d()
    r1 = p1.solve(None, gtol, maxiter)
    res, _ = prob.solve(prob.embed_1d(p1.state(r1.x)), gtol, maxiter)
    sigma = prob.state(res.x) - prob.param.W0
    return CellPerturbation(L, np.asarray(jump.nu), basis.M, sigma, res.fun, res.converged)


def _interface_origin(field: PiecewiseField, index: int):
    N = field.layout.N
    g = field.interfaces[index]
    x0 = np.zeros(N)
    xp0 = np.zeros(N - 1)
    x0[field.axis] = float(g.value(xp0[None])[0]) if N > 1 else float(g.value(np.zeros((1, 0)))[0])
    return x0


def build_modified(field: PiecewiseField, index: int, perturbation: CellPerturbation | None, kernel: Kernel,
                   epsilon: float, grid: GridSpec, order: int = 1, n_quad: int = 48, workers: int = 1,
                   mean_correction: bool = False) -> MollifiedField:
    """Primary field plus the rescaled cell perturbation across planar interface ``index``.

    Outside the slab ``|nu . (x - x0)| < eps / (2 L)`` the result equals the
    primary field exactly.
    """
    mf = build_primary(field, kernel, epsilon, grid, order, n_quad, workers, mean_correction)
    if perturbation is None:
        return mf
    g = field.interfaces[index]
    if not g.is_planar():
        raise ValueError("the modified sequence is implemented for planar interfaces")
    L = perturbation.L
    half = epsilon / (2.0 * L)
    N = field.layout.N
    xs = field._sample_cross_section()
    gi = g.value(xs)
    for j, other in enumerate(field.interfaces):
        if j != index and np.min(np.abs(other.value(xs) - gi)) <= half + epsilon / 2:
            raise ValueError("the modification slab overlaps another interface layer")
    jump = trace_pair(field, index, np.zeros(N - 1))
    if not np.allclose(jump.nu, perturbation.nu, atol=1e-12):
        raise ValueError("perturbation normal does not match the interface")
    x0 = _interface_origin(field, index)
    Minv = np.linalg.inv(perturbation.M) if perturbation.M is not None else perturbation.nu.reshape(1, -1)
    s = L * (mf.points - x0) @ Minv.T / epsilon
    band = np.abs(s[:, 0]) < 0.5
    val, gs, hs = perturbation.evaluate(s[band], order)
    J = perturbation.J
    values = mf.values.copy()
    values[band] += val
    D1 = mf.D1.copy()
    D1[band] += L * np.einsum("psa,na->psn", gs, J)
    D2 = None
    if mf.D2 is not None:
        D2 = mf.D2.copy()
        D2[band] += L * L * np.einsum("na,psab,mb->psnm", J, hs, J)
    return MollifiedField(mf.points, values, D1, D2, mf.f, mf.epsilon, grid)


# ----------------------------------------------------------------------------
# scans
# ----------------------------------------------------------------------------

def extrapolate(eps, values):
    """Order-1 Richardson on the last three points: least-squares fit ``I0 + a eps``.

    Also returns the observed rate ``log2(|I1 - I2| / |I2 - I3|) / log2(eps1 / eps2)``
    (None when the differences are at rounding level).
    """
    e = np.asarray(eps[-3:], dtype=float)
    v = np.asarray(values[-3:], dtype=float)
    if len(e) == 1:
        return float(v[0]), None
    A = np.column_stack([np.ones_like(e), e])
    coef, *_ = np.linalg.lstsq(A, v, rcond=None)
    rate = None
    if len(e) == 3:
        d1, d2 = abs(v[0] - v[1]), abs(v[1] - v[2])
        floor = 1e-10 * max(1.0, float(np.abs(v).max()))
        if d1 > floor and d2 > floor:
            rate = float(math.log(d1 / d2) / math.log(e[0] / e[1]))
    return float(coef[0]), rate


def _scan_task(args):
    field, density, kernel, eps, cfg, mode, index, pert = args
    grid = cfg.grid(field.box, eps)
    if mode == "primary":
        mf = build_primary(field, kernel, eps, grid, density.order, cfg.n_quad, 1, cfg.mean_correction)
    else:
        mf = build_modified(field, index, pert, kernel, eps, grid, density.order, cfg.n_quad, 1,
                            cfg.mean_correction)
    return energy(mf, density, eps, grid, field.box), list(grid.shape)


def epsilon_scan(field: PiecewiseField, density, config: RecoveryConfig | None = None, mode: str = "primary",
                 index: int = 0, perturbation: CellPerturbation | None = None, predicted: float | None = None,
                 surface_options: dict | None = None) -> EnergyTrace:
    """Energies along the epsilon list with a predicted limit and an extrapolation.

    ``mode='primary'`` predicts the kernel-limit surface functional;
    ``mode='modified'`` predicts the cell value ``R_L`` times the area of the
    modified interface plus the kernel-limit contribution of the others.
    """
    from .surface import k_functional

    cfg = config or RecoveryConfig()
    N = field.layout.N
    kernel = Kernel(cfg.kernel, N)
    if mode not in ("primary", "modified"):
        raise ValueError("mode must be 'primary' or 'modified'")
    details = {}
    if not field.interfaces:
        rows = [{"epsilon": e, "energy": 0.0, "predicted": 0.0, "gap": 0.0} for e in cfg.epsilons]
        return EnergyTrace(rows, 0.0, 0.0, None, True, mode, details)
    opts = dict(surface_options or {})
    if predicted is None:
        rep = k_functional(field, density, "KernelLimit", kernel=kernel, **opts)
        predicted = rep.value
        details["per_interface_kernel_limit"] = rep.per_interface
        if mode == "modified":
            if perturbation is None:
                raise ValueError("modified mode needs a cell perturbation")
            area = rep.measures[index]
            predicted = predicted - rep.per_interface[index] + perturbation.value * area
            details["cell_value"] = perturbation.value
            details["cell_converged"] = perturbation.converged
            details["L"] = perturbation.L
    tasks = [(field, density, kernel, e, cfg, mode, index, perturbation) for e in cfg.epsilons]
    if cfg.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
            out = list(ex.map(_scan_task, tasks))
    else:
        out = [_scan_task(t) for t in tasks]
    vals = [o[0] for o in out]
    rows = []
    for e, v, o in zip(cfg.epsilons, vals, out):
        gap = (v - predicted) / predicted if predicted else 0.0
        rows.append({"epsilon": e, "energy": v, "predicted": predicted, "gap": gap, "grid": o[1]})
    ext, rate = extrapolate(cfg.epsilons, vals)
    diffs = np.diff(vals)
    monotone = bool(np.all(diffs <= 1e-12 * max(1.0, max(abs(x) for x in vals))) or
                    np.all(diffs >= -1e-12 * max(1.0, max(abs(x) for x in vals))))
    return EnergyTrace(rows, ext, float(predicted), rate, monotone, mode, details)
