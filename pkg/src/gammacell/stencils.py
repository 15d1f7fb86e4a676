"""Discrete cell energy, constrained parametrizations and preconditioners.

A cell field lives on nodes of the unit cell ``I = (-1/2, 1/2)^n`` in
lattice coordinates ``s``: axis 0 is the normal direction with ``n1 + 1``
nodes including both boundary rows, the remaining axes are periodic with
``n_a`` nodes.  Node arrays have shape ``(n1 + 1, n2, ..., S)``.

Energies use the cell (midpoint) rule: the state and its lattice gradient are
evaluated at cell centres from the ``2^n`` surrounding nodes, which avoids the
zero-energy checkerboard modes of collocated central differences.  Every
operator comes with its adjoint so objective gradients are exact.

The physical gradient is ``J @ grad_s`` with ``J = M^{-T}`` for the lattice
matrix ``M = [nu, a_2, ..., a_N]`` (for one-dimensional profiles ``J = nu``).
"""

from __future__ import annotations

import numpy as np
import scipy.fft as sfft

from .fields import Layout


# elementary operators on node arrays --------------------------------------------

def avg(X, ax):
    if ax == 0:
        return 0.5 * (X[:-1] + X[1:])
    return 0.5 * (X + np.roll(X, -1, axis=ax))


def avg_T(C, ax):
    if ax == 0:
        G = np.zeros((C.shape[0] + 1,) + C.shape[1:])
        G[:-1] += 0.5 * C
        G[1:] += 0.5 * C
        return G
    return 0.5 * (C + np.roll(C, 1, axis=ax))


def diff(X, ax, h):
    if ax == 0:
        return (X[1:] - X[:-1]) / h
    return (np.roll(X, -1, axis=ax) - X) / h


def diff_T(C, ax, h):
    if ax == 0:
        G = np.zeros((C.shape[0] + 1,) + C.shape[1:])
        G[1:] += C / h
        G[:-1] -= C / h
        return G
    return (np.roll(C, 1, axis=ax) - C) / h


def _pad0(X):
    """Constant extension by one ghost row on each side of axis 0."""
    return np.concatenate([X[:1], X, X[-1:]], axis=0)


def _fold0(Gp):
    G = Gp[1:-1].copy()
    G[0] += Gp[0]
    G[-1] += Gp[-1]
    return G


def second(X, ax, h):
    """Nodal second difference; constant-extension ghosts along axis 0."""
    if ax == 0:
        Xp = _pad0(X)
        return (Xp[2:] - 2 * Xp[1:-1] + Xp[:-2]) / h ** 2
    return (np.roll(X, -1, axis=ax) - 2 * X + np.roll(X, 1, axis=ax)) / h ** 2


def second_T(C, ax, h):
    if ax == 0:
        Gp = np.zeros((C.shape[0] + 2,) + C.shape[1:])
        Gp[2:] += C
        Gp[1:-1] -= 2 * C
        Gp[:-2] += C
        return _fold0(Gp) / h ** 2
    return (np.roll(C, 1, axis=ax) - 2 * C + np.roll(C, -1, axis=ax)) / h ** 2


def central(X, ax, h, ghost="const"):
    """Nodal central difference; along axis 0 the ghosts are constant ('const') or zero ('zero')."""
    if ax == 0:
        if ghost == "const":
            Xp = _pad0(X)
        else:
            z = np.zeros((1,) + X.shape[1:])
            Xp = np.concatenate([z, X, z], axis=0)
        return (Xp[2:] - Xp[:-2]) / (2 * h)
    return (np.roll(X, -1, axis=ax) - np.roll(X, 1, axis=ax)) / (2 * h)


def central_T(C, ax, h, ghost="const"):
    if ax == 0:
        Gp = np.zeros((C.shape[0] + 2,) + C.shape[1:])
        Gp[2:] += C / (2 * h)
        Gp[:-2] -= C / (2 * h)
        if ghost == "const":
            return _fold0(Gp)
        return Gp[1:-1]
    return (np.roll(C, 1, axis=ax) - np.roll(C, -1, axis=ax)) / (2 * h)


def cell_mean(X, nl, skip=None):
    for ax in range(nl):
        if ax != skip:
            X = avg(X, ax)
    return X


def cell_mean_T(C, nl, skip=None):
    for ax in reversed(range(nl)):
        if ax != skip:
            C = avg_T(C, ax)
    return C


# the discrete cell energy ----------------------------------------------------------

class CellEngine:
    """Discrete ``(1/L) int_I F(L^n grad^n w, ..., L grad w, w, f) ds`` on a node grid."""

    def __init__(self, density, shape, J, L, f_minus, f_plus):
        self.density = density
        self.shape = tuple(int(n) for n in shape)
        self.nl = len(self.shape)
        self.J = np.asarray(J, dtype=float).reshape(density.layout.N, self.nl)
        self.L = float(L)
        n1 = self.shape[0] - 1
        self.h = np.array([1.0 / n1] + [1.0 / n for n in self.shape[1:]])
        self.vol = float(np.prod(self.h))
        lay = density.layout
        self.S = lay.size
        centers = -0.5 + (np.arange(n1) + 0.5) / n1
        self.cell_shape = (n1,) + self.shape[1:]
        self.n_cells = int(np.prod(self.cell_shape))
        fm = np.asarray(f_minus, float).reshape(lay.q)
        fp = np.asarray(f_plus, float).reshape(lay.q)
        frow = np.where((centers > 0)[:, None], fp[None, :], fm[None, :])
        self.f_cells = np.broadcast_to(frow.reshape((n1,) + (1,) * (self.nl - 1) + (lay.q,)),
                                       self.cell_shape + (lay.q,)).reshape(self.n_cells, lay.q)

    def slots(self, W):
        """Cell-centre state and physical derivative slots for node array ``W``."""
        nl, h, L = self.nl, self.h, self.L
        v = cell_mean(W, nl)
        gs = np.stack([cell_mean(diff(W, a, h[a]), nl, skip=a) for a in range(nl)], axis=-1)
        D1 = L * np.einsum("...sa,na->...sn", gs, self.J)
        D2 = None
        if self.density.order == 2:
            H = np.empty(W.shape + (nl, nl))
            for a in range(nl):
                for b in range(a, nl):
                    if a == b:
                        H[..., a, a] = second(W, a, h[a])
                    else:
                        H[..., a, b] = central(central(W, a, h[a]), b, h[b])
                        H[..., b, a] = H[..., a, b]
            Hc = cell_mean(H, nl)
            D2 = L * L * np.einsum("na,...sab,mb->...snm", self.J, Hc, self.J)
        return v, D1, D2

    def _flat(self, v, D1, D2):
        P = self.n_cells
        S, N = self.S, self.density.layout.N
        return (v.reshape(P, S), D1.reshape(P, S, N), None if D2 is None else D2.reshape(P, S, N, N))

    def energy(self, W) -> float:
        v, D1, D2 = self._flat(*self.slots(W))
        F = self.density.value(v, D1, self.f_cells, D2)
        return float(np.sum(F) * self.vol / self.L)

    def cell_density(self, W) -> np.ndarray:
        v, D1, D2 = self._flat(*self.slots(W))
        return self.density.value(v, D1, self.f_cells, D2).reshape(self.cell_shape)

    def energy_grad(self, W):
        nl, h, L = self.nl, self.h, self.L
        v, D1, D2 = self.slots(W)
        vf, D1f, D2f = self._flat(v, D1, D2)
        F = self.density.value(vf, D1f, self.f_cells, D2f)
        E = float(np.sum(F) * self.vol / self.L)
        gv, g1, g2 = self.density.grad(vf, D1f, self.f_cells, D2f)
        w = self.vol / self.L
        cs = self.cell_shape
        G = cell_mean_T(gv.reshape(cs + (self.S,)) * w, nl)
        gs = L * np.einsum("...sn,na->...sa", g1.reshape(D1.shape) * w, self.J)
        for a in range(nl):
            G += diff_T(cell_mean_T(gs[..., a], nl, skip=a), a, h[a])
        if D2 is not None:
            gH = L * L * np.einsum("na,...snm,mb->...sab", self.J, g2.reshape(D2.shape) * w, self.J)
            gHn = cell_mean_T(gH, nl)
            for a in range(nl):
                for b in range(a, nl):
                    if a == b:
                        G += second_T(gHn[..., a, a], a, h[a])
                    else:
                        c = gHn[..., a, b] + gHn[..., b, a]
                        G += central_T(central_T(c, b, h[b]), a, h[a])
        return E, G


# ramps -----------------------------------------------------------------------------

def quintic_step(tau):
    """Smooth step: 0 for tau <= -1/2, 1 for tau >= 1/2, C^2 in between."""
    u = np.clip(np.asarray(tau, dtype=float) + 0.5, 0.0, 1.0)
    return u * u * u * (10.0 - 15.0 * u + 6.0 * u * u)


def ramp_values(n1, L, ramp="quintic", profile=None):
    """Ramp ``theta(s1 / L)`` at the node rows ``s1 = -1/2 + i / n1``."""
    s1 = -0.5 + np.arange(n1 + 1) / n1
    if ramp == "quintic":
        th = quintic_step(s1 / L)
    elif ramp == "kernel":
        if profile is None:
            raise ValueError("kernel ramp needs a kernel profile")
        th = profile.P(s1 / L)
    else:
        raise ValueError(f"unknown ramp {ramp!r}")
    th = np.asarray(th, dtype=float)
    th[0], th[-1] = 0.0, 1.0
    return th


# parametrizations --------------------------------------------------------------------

def tangent_basis(nu) -> np.ndarray:
    """Orthonormal basis of the complement of ``nu`` as columns, shape ``(N, N-1)``."""
    nu = np.asarray(nu, dtype=float)
    N = nu.size
    if N == 1:
        return np.zeros((1, 0))
    _, _, Vt = np.linalg.svd(nu[None, :])
    T = Vt[1:].T
    # fixed orientation for determinism
    for j in range(T.shape[1]):
        i = int(np.argmax(np.abs(T[:, j])))
        if T[i, j] < 0:
            T[:, j] = -T[:, j]
    return T


class Parametrization:
    """Linear map from optimizer unknowns to node states, ``W = W0 + B x``.

    Unknown groups, each stored on the free node rows:

    * ``sigma``: unconstrained block, full grid;
    * ``a1d`` / ``b1d``: one-dimensional rank-one path of the curl-free block
      (``a(s1) (x) nu``) and tangential profile of the divergence-free block;
    * ``phi``: scalar potentials of the curl-free rows (state ``J D phi``);
    * ``chi`` (two lattice axes) / ``vecA`` (three axes): potentials of the
      divergence-free rows (contravariant components ``(D2 chi, -D1 chi)`` or
      ``curl A``, mapped by ``M / det M``).

    ``cls='relaxed'`` leaves rows ``1..n1-1`` free, ``cls='clamped'`` also pins
    rows 1 and ``n1-1`` so the perturbation is flat at the cell boundary.
    """

    def __init__(self, layout: Layout, shape, nu, M=None, cls: str = "relaxed", W0=None):
        self.layout = layout
        self.shape = tuple(shape)
        self.nl = len(self.shape)
        self.n1 = self.shape[0] - 1
        self.tang = self.shape[1:]
        self.nu = np.asarray(nu, dtype=float)
        self.cls = cls
        if cls not in ("relaxed", "clamped"):
            raise ValueError("class must be 'relaxed' or 'clamped'")
        pad = 1 if cls == "relaxed" else 2
        self.rows = np.arange(pad, self.n1 + 1 - pad)
        self.prows = np.arange(pad + 1, self.n1 - pad)
        if len(self.rows) < 1:
            raise ValueError("grid too coarse for the perturbation class")
        N = layout.N
        self.h = np.array([1.0 / self.n1] + [1.0 / n for n in self.tang])
        if self.nl > 1:
            self.M = np.asarray(M, dtype=float)
            self.Minv = np.linalg.inv(self.M)
            self.J = self.Minv.T
            self.det = float(np.linalg.det(self.M))
        else:
            self.M = None
            self.J = self.nu.reshape(N, 1)
        self.T = tangent_basis(self.nu)
        self.W0 = W0
        groups = []
        r, rp = len(self.rows), len(self.prows)
        if layout.m:
            groups.append(("sigma", (r,) + self.tang + (layout.m,)))
        if layout.k:
            groups.append(("a1d", (r, layout.k)))
            if self.nl > 1 and rp > 0:
                groups.append(("phi", (rp,) + self.tang + (layout.k,)))
        if layout.d:
            if N > 1:
                groups.append(("b1d", (r, layout.d, N - 1)))
            if self.nl == 2 and rp > 0:
                groups.append(("chi", (rp,) + self.tang + (layout.d,)))
            elif self.nl == 3 and rp > 0:
                groups.append(("vecA", (rp,) + self.tang + (layout.d, 3)))
        self.groups = []
        off = 0
        for name, shp in groups:
            size = int(np.prod(shp))
            self.groups.append((name, shp, off, size))
            off += size
        self.size = off

    # unknown vector helpers ------------------------------------------------------------
    def unpack(self, x):
        return {name: x[o:o + s].reshape(shp) for name, shp, o, s in self.groups}

    def pack(self, parts: dict):
        x = np.zeros(self.size)
        for name, shp, o, s in self.groups:
            if name in parts:
                x[o:o + s] = np.asarray(parts[name]).reshape(-1)
        return x

    def _bshape(self, arr, extra):
        """Broadcast a per-row array over the tangential axes."""
        return arr.reshape((arr.shape[0],) + (1,) * len(self.tang) + extra)

    def _full_rows(self, part, rows):
        out = np.zeros((self.n1 + 1,) + part.shape[1:])
        out[rows] = part
        return out

    # forward map -----------------------------------------------------------------------
    def apply(self, x) -> np.ndarray:
        lay = self.layout
        N, k, d = lay.N, lay.k, lay.d
        W = np.zeros(self.shape + (lay.size,)) if self.W0 is None else np.array(self.W0, copy=True)
        parts = self.unpack(x)
        if "sigma" in parts:
            W[self.rows, ..., lay.psi_slice] += parts["sigma"]
        Gp = np.zeros(self.shape + (k, N)) if k else None
        Hp = np.zeros(self.shape + (d, N)) if d else None
        if "a1d" in parts:
            a = self._full_rows(parts["a1d"], self.rows)
            Gp += self._bshape(a[:, :, None] * self.nu, (k, N))
        if "phi" in parts:
            phi = self._full_rows(parts["phi"], self.prows)
            Dphi = np.stack([central(phi, ax, self.h[ax], "zero") for ax in range(self.nl)], axis=-1)
            Gp += np.einsum("na,...ka->...kn", self.J, Dphi)
        if "b1d" in parts:
            b = self._full_rows(parts["b1d"], self.rows)
            Hp += self._bshape(np.einsum("rdj,nj->rdn", b, self.T), (d, N))
        if "chi" in parts:
            chi = self._full_rows(parts["chi"], self.prows)
            c = np.stack([central(chi, 1, self.h[1]), -central(chi, 0, self.h[0], "zero")], axis=-1)
            Hp += np.einsum("na,...da->...dn", self.M, c) / self.det
        if "vecA" in parts:
            A = self._full_rows(parts["vecA"], self.prows)
            c = self._curl(A)
            Hp += np.einsum("na,...da->...dn", self.M, c) / self.det
        if k:
            W[..., lay.grad_slice] += Gp.reshape(self.shape + (k * N,))
        if d:
            W[..., lay.div_slice] += Hp.reshape(self.shape + (d * N,))
        return W

    def _D(self, X, ax):
        return central(X, ax, self.h[ax], "zero" if ax == 0 else "const")

    def _DT(self, X, ax):
        return central_T(X, ax, self.h[ax], "zero" if ax == 0 else "const")

    def _curl(self, A):
        D = self._D
        c0 = D(A[..., 2], 1) - D(A[..., 1], 2)
        c1 = D(A[..., 0], 2) - D(A[..., 2], 0)
        c2 = D(A[..., 1], 0) - D(A[..., 0], 1)
        return np.stack([c0, c1, c2], axis=-1)

    def _curl_T(self, C):
        DT = self._DT
        A0 = DT(C[..., 1], 2) - DT(C[..., 2], 1)
        A1 = DT(C[..., 2], 0) - DT(C[..., 0], 2)
        A2 = DT(C[..., 0], 1) - DT(C[..., 1], 0)
        return np.stack([A0, A1, A2], axis=-1)

    # adjoint map -----------------------------------------------------------------------
    def adjoint(self, G) -> np.ndarray:
        lay = self.layout
        N, k, d = lay.N, lay.k, lay.d
        tang_axes = tuple(range(1, self.nl))
        out = {}
        names = [g[0] for g in self.groups]
        if "sigma" in names:
            out["sigma"] = G[self.rows][..., lay.psi_slice]
        if k:
            Gg = G[..., lay.grad_slice].reshape(self.shape + (k, N))
            if "a1d" in names:
                s = Gg.sum(axis=tang_axes) if tang_axes else Gg
                out["a1d"] = np.einsum("rkn,n->rk", s, self.nu)[self.rows]
            if "phi" in names:
                gD = np.einsum("na,...kn->...ka", self.J, Gg)
                gphi = sum(central_T(gD[..., ax], ax, self.h[ax], "zero") for ax in range(self.nl))
                out["phi"] = gphi[self.prows]
        if d:
            Hg = G[..., lay.div_slice].reshape(self.shape + (d, N))
            if "b1d" in names:
                s = Hg.sum(axis=tang_axes) if tang_axes else Hg
                out["b1d"] = np.einsum("rdn,nj->rdj", s, self.T)[self.rows]
            if "chi" in names:
                gc = np.einsum("na,...dn->...da", self.M, Hg) / self.det
                gchi = central_T(gc[..., 0], 1, self.h[1]) - central_T(gc[..., 1], 0, self.h[0], "zero")
                out["chi"] = gchi[self.prows]
            if "vecA" in names:
                gc = np.einsum("na,...dn->...da", self.M, Hg) / self.det
                out["vecA"] = self._curl_T(gc)[self.prows]
        return self.pack(out)

    # structural checks -----------------------------------------------------------------
    def curl_residual(self, W) -> float:
        """Max |discrete curl| of the curl-free block in covariant lattice form."""
        lay = self.layout
        if not lay.k or self.nl < 2:
            return 0.0
        G = W[..., lay.grad_slice].reshape(self.shape + (lay.k, lay.N))
        cov = np.einsum("na,...kn->...ka", self.M, G)
        worst = 0.0
        for a in range(self.nl):
            for b in range(a + 1, self.nl):
                r = central(cov[..., b], a, self.h[a]) - central(cov[..., a], b, self.h[b])
                worst = max(worst, float(np.abs(r).max()))
        return worst

    def div_residual(self, W) -> float:
        """Max |discrete divergence| of the divergence-free block in contravariant form."""
        lay = self.layout
        if not lay.d or self.nl < 2:
            return 0.0
        H = W[..., lay.div_slice].reshape(self.shape + (lay.d, lay.N))
        con = np.einsum("an,...dn->...da", self.Minv, H)
        r = sum(central(con[..., a], a, self.h[a]) for a in range(self.nl))
        return float(np.abs(r).max())


# preconditioning ------------------------------------------------------------------------

def _symbols(n_rows, tang, h):
    """Difference and averaging symbols on a Dirichlet (rows) x periodic grid.

    Returns ``(s, c)`` with ``s[a]`` the squared first-difference symbol along
    axis ``a`` and ``c[a] = cos^2(theta_a / 2)`` the symbol of the two-point
    average that maps nodes to cells.
    """
    th = [np.pi * np.arange(1, n_rows + 1) / (n_rows + 1)]
    for n in tang:
        th.append(2.0 * np.pi * np.arange(n) / n)
    s1 = [(2.0 / h[a] * np.sin(t / 2.0)) ** 2 for a, t in enumerate(th)]
    c1 = [np.cos(t / 2.0) ** 2 for t in th]
    return np.meshgrid(*s1, indexing="ij"), np.meshgrid(*c1, indexing="ij")


class Preconditioner:
    """Approximate inverse Hessian of the quadratic part of the cell energy.

    Each unknown group is diagonalized by a sine transform along the normal
    rows and a Fourier transform along the periodic axes; the symbol combines
    gradient, second-gradient and well curvatures ``(alpha1, alpha2, c_w)``.
    """

    def __init__(self, param: Parametrization, L, alpha1, alpha2, c_w):
        self.param = param
        self.inv = {}
        p = param
        h = p.h
        vol = float(np.prod(h))
        G = p.J.T @ p.J
        for name, shp, _, _ in p.groups:
            grid_group = name in ("sigma", "phi", "chi", "vecA")
            n_rows = shp[0]
            tang = p.tang if grid_group else ()
            syms, avgs = _symbols(n_rows, tang, h)
            nd = len(syms)
            # cell values average the corners, which damps the checkerboard
            # modes of the value and second-difference slots
            cav = np.prod(avgs, axis=0)
            grad_part = sum(G[a, a] * syms[a] * np.prod([avgs[b] for b in range(nd) if b != a], axis=0)
                            for a in range(nd))
            lap = sum(G[a, a] * syms[a] for a in range(nd))
            v = vol if grid_group else h[0]
            base = v * (2 * alpha1 * L * grad_part + 2 * alpha2 * L ** 3 * lap ** 2 * cav + 2 * c_w / L * cav)
            base = np.maximum(base, 1e-3 * v * (2 * alpha1 * L * lap))
            if name == "phi":
                sym = lap * base
            elif name == "chi":
                MtM = p.M.T @ p.M
                sym = (MtM[0, 0] * syms[1] + MtM[1, 1] * syms[0]) / p.det ** 2 * base
            elif name == "vecA":
                MtM = p.M.T @ p.M
                sym = np.trace(MtM) / 3.0 * sum(syms) / p.det ** 2 * base
            else:
                sym = base
            self.inv[name] = 1.0 / sym

    def __call__(self, g):
        p = self.param
        parts = p.unpack(g)
        out = {}
        for name, shp, _, _ in p.groups:
            X = parts[name]
            inv = self.inv[name]
            nax = inv.ndim
            Y = sfft.dst(X, type=1, axis=0, norm="ortho")
            if nax > 1:
                axes = tuple(range(1, nax))
                Yc = sfft.fftn(Y, axes=axes, norm="ortho")
                Yc *= inv.reshape(inv.shape + (1,) * (X.ndim - nax))
                Y = np.real(sfft.ifftn(Yc, axes=axes, norm="ortho"))
            else:
                Y = Y * inv.reshape(inv.shape + (1,) * (X.ndim - 1))
            out[name] = sfft.dst(Y, type=1, axis=0, norm="ortho")
        return p.pack(out)
