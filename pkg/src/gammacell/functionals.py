"""Energy densities ``F(D2, D1, v, f) = G(...) + W(v, f)`` and their gradients.

Every density works on batches: ``v`` has shape ``(P, S)``, the first
derivative slot ``D1`` has shape ``(P, S, N)`` (``D1[p, c, a]`` is the
derivative of state component ``c`` along axis ``a``), the optional second
slot ``D2`` has shape ``(P, S, N, N)`` and ``f`` has shape ``(P, q)``.

The catalog holds Modica-Mortola, Aviles-Giga (written as a first-order
density of the curl-free state ``grad u``), a two-gradient-well density and
user supplied nonnegative polynomials.
"""

from __future__ import annotations

import numpy as np

from .fields import Layout


class DensityError(ValueError):
    """Raised for invalid density parameters or mismatched slot shapes."""


class EnergyDensity:
    """Base class: subclasses implement ``_value`` and ``_grad``."""

    name = "density"
    order = 1

    def __init__(self, layout: Layout):
        self.layout = layout

    # public batch API ---------------------------------------------------
    def _check(self, v, D1, f, D2):
        lay = self.layout
        v = np.asarray(v, dtype=float)
        D1 = np.asarray(D1, dtype=float)
        if v.ndim != 2 or v.shape[1] != lay.size:
            raise DensityError(f"{self.name}: state slot must have shape (P, {lay.size}), got {v.shape}")
        P = v.shape[0]
        if D1.shape != (P, lay.size, lay.N):
            raise DensityError(f"{self.name}: first-derivative slot must have shape {(P, lay.size, lay.N)}, got {D1.shape}")
        if f is None:
            f = np.zeros((P, lay.q))
        f = np.asarray(f, dtype=float)
        if f.shape != (P, lay.q):
            raise DensityError(f"{self.name}: f slot must have shape {(P, lay.q)}, got {f.shape}")
        if self.order == 2:
            if D2 is None:
                D2 = np.zeros((P, lay.size, lay.N, lay.N))
            D2 = np.asarray(D2, dtype=float)
            if D2.shape != (P, lay.size, lay.N, lay.N):
                raise DensityError(f"{self.name}: second-derivative slot has shape {D2.shape}")
        else:
            D2 = None
        return v, D1, f, D2

    def value(self, v, D1, f=None, D2=None) -> np.ndarray:
        """Density values, shape ``(P,)``."""
        return self._value(*self._check(v, D1, f, D2))

    def grad(self, v, D1, f=None, D2=None):
        """Partial derivatives ``(dF/dv, dF/dD1, dF/dD2 or None)``."""
        return self._grad(*self._check(v, D1, f, D2))

    def zero_set(self, v, f=None, tol: float = 1e-12) -> np.ndarray:
        """True where ``F(0, ..., 0, v, f) <= tol`` (the well set)."""
        v = np.atleast_2d(np.asarray(v, dtype=float))
        P = v.shape[0]
        lay = self.layout
        D1 = np.zeros((P, lay.size, lay.N))
        fv = None if f is None else np.atleast_2d(np.asarray(f, dtype=float))
        return self.value(v, D1, fv) <= tol

    def to_dict(self) -> dict:
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}({self.to_dict()})"


def _sq(D):
    return np.sum(D.reshape(D.shape[0], -1) ** 2, axis=1)


class ModicaMortola(EnergyDensity):
    """``|D1|^2 + scale * (1 - |psi|^2)^2`` for an unconstrained ``psi`` in R^m."""

    name = "modica_mortola"

    def __init__(self, N: int = 1, m: int = 1, scale: float = 1.0, q: int = 0):
        super().__init__(Layout(N=N, m=m, q=q))
        if scale <= 0:
            raise DensityError("scale must be positive")
        self.scale = float(scale)

    def _value(self, v, D1, f, D2):
        r = 1.0 - np.sum(v * v, axis=1)
        return _sq(D1) + self.scale * r * r

    def _grad(self, v, D1, f, D2):
        r = 1.0 - np.sum(v * v, axis=1)
        gv = (-4.0 * self.scale * r)[:, None] * v
        return gv, 2.0 * D1, None

    def to_dict(self):
        return {"name": self.name, "N": self.layout.N, "m": self.layout.m, "scale": self.scale,
                "q": self.layout.q}


class AvilesGiga(EnergyDensity):
    """``|D1|^2 + (1 - |grad u|^2)^2`` on the curl-free state ``grad u`` (k = 1).

    As a density of ``u`` this is the second-order functional
    ``eps |D^2 u|^2 + (1 - |Du|^2)^2 / eps``; in the composite state it is first order.
    """

    name = "aviles_giga"

    def __init__(self, N: int = 2, q: int = 0):
        if N < 2:
            raise DensityError("Aviles-Giga needs N >= 2")
        super().__init__(Layout(N=N, k=1, q=q))

    def _value(self, v, D1, f, D2):
        r = 1.0 - np.sum(v * v, axis=1)
        return _sq(D1) + r * r

    def _grad(self, v, D1, f, D2):
        r = 1.0 - np.sum(v * v, axis=1)
        return (-4.0 * r)[:, None] * v, 2.0 * D1, None

    def to_dict(self):
        return {"name": self.name, "N": self.layout.N, "q": self.layout.q}


class TwoGradientWell(EnergyDensity):
    """``|D1|^2 + |G - A|^2 |G - B|^2`` on a curl-free ``G in R^{k x N}`` with rank(A - B) = 1."""

    name = "two_gradient_well"

    def __init__(self, N: int, A, B, q: int = 0):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        B = np.atleast_2d(np.asarray(B, dtype=float))
        if A.shape != B.shape or A.shape[1] != N:
            raise DensityError(f"wells must be k x N matrices with N = {N}")
        s = np.linalg.svd(A - B, compute_uv=False)
        if not (s[0] > 1e-12 and (len(s) == 1 or s[1] <= 1e-12 * s[0])):
            raise DensityError("wells A and B must be rank-one connected")
        super().__init__(Layout(N=N, k=A.shape[0], q=q))
        self.A = A
        self.B = B

    def _value(self, v, D1, f, D2):
        a = np.sum((v - self.A.ravel()) ** 2, axis=1)
        b = np.sum((v - self.B.ravel()) ** 2, axis=1)
        return _sq(D1) + a * b

    def _grad(self, v, D1, f, D2):
        dA = v - self.A.ravel()
        dB = v - self.B.ravel()
        a = np.sum(dA * dA, axis=1)
        b = np.sum(dB * dB, axis=1)
        gv = 2.0 * b[:, None] * dA + 2.0 * a[:, None] * dB
        return gv, 2.0 * D1, None

    def to_dict(self):
        return {"name": self.name, "N": self.layout.N, "A": self.A.tolist(), "B": self.B.tolist(),
                "q": self.layout.q}


def custom_variable_names(layout: Layout, order: int) -> list[str]:
    """Variable names of a custom polynomial, in slot order.

    ``v{c}`` state components, ``d{c}_{a}`` first derivatives,
    ``dd{c}_{a}_{b}`` second derivatives (order 2 only) and ``f{i}``.
    """
    S, N = layout.size, layout.N
    names = [f"v{c}" for c in range(S)]
    names += [f"d{c}_{a}" for c in range(S) for a in range(N)]
    if order == 2:
        names += [f"dd{c}_{a}_{b}" for c in range(S) for a in range(N) for b in range(N)]
    names += [f"f{i}" for i in range(layout.q)]
    return names


class PolynomialCustom(EnergyDensity):
    """Nonnegative polynomial in all slots, given as monomials.

    ``terms`` is a list of ``(coef, {variable: exponent})``.  Nonnegativity is
    sampled at seeded random points (and at the supplied ``check_points``); a
    negative sample rejects the density.
    """

    name = "polynomial"

    def __init__(self, layout: Layout, order: int, terms, n_samples: int = 4000,
                 sample_radius: float = 2.0, seed: int = 0):
        if order not in (1, 2):
            raise DensityError("derivative order must be 1 or 2")
        super().__init__(layout)
        self.order = order
        self.variables = custom_variable_names(layout, order)
        index = {n: i for i, n in enumerate(self.variables)}
        parsed = []
        for coef, powers in terms:
            mono = []
            for var, e in sorted(powers.items(), key=lambda kv: index.get(kv[0], -1)):
                if var not in index:
                    raise DensityError(f"unknown polynomial variable {var!r}")
                e = int(e)
                if e < 0:
                    raise DensityError("negative exponent")
                if e:
                    mono.append((index[var], e))
            parsed.append((float(coef), tuple(mono)))
        self.terms = tuple(parsed)
        self._check_nonnegative(n_samples, sample_radius, seed)

    def _flat(self, v, D1, f, D2):
        P = v.shape[0]
        parts = [v, D1.reshape(P, -1)]
        if self.order == 2:
            parts.append(D2.reshape(P, -1))
        parts.append(f)
        return np.concatenate(parts, axis=1)

    def _eval_flat(self, Z):
        out = np.zeros(Z.shape[0])
        for coef, mono in self.terms:
            t = np.full(Z.shape[0], coef)
            for j, e in mono:
                t = t * Z[:, j] ** e
            out = out + t
        return out

    def _grad_flat(self, Z):
        g = np.zeros_like(Z)
        for coef, mono in self.terms:
            for pos, (j, e) in enumerate(mono):
                t = np.full(Z.shape[0], coef * e)
                for pos2, (j2, e2) in enumerate(mono):
                    if pos2 == pos:
                        if e > 1:
                            t = t * Z[:, j2] ** (e - 1)
                    else:
                        t = t * Z[:, j2] ** e2
                g[:, j] += t
        return g

    def _check_nonnegative(self, n, radius, seed):
        rng = np.random.default_rng(seed)
        Z = rng.uniform(-radius, radius, size=(n, len(self.variables)))
        vals = self._eval_flat(Z)
        if vals.min() < -1e-10:
            raise DensityError(f"polynomial density is negative at a sample point (min {vals.min():.3e})")

    def _value(self, v, D1, f, D2):
        return self._eval_flat(self._flat(v, D1, f, D2))

    def _grad(self, v, D1, f, D2):
        P = v.shape[0]
        lay = self.layout
        g = self._grad_flat(self._flat(v, D1, f, D2))
        S, N = lay.size, lay.N
        gv = g[:, :S]
        gD1 = g[:, S:S + S * N].reshape(P, S, N)
        gD2 = None
        if self.order == 2:
            o = S + S * N
            gD2 = g[:, o:o + S * N * N].reshape(P, S, N, N)
        return gv, gD1, gD2

    def to_dict(self):
        terms = []
        for coef, mono in self.terms:
            terms.append({"coef": coef, "powers": {self.variables[j]: e for j, e in mono}})
        return {"name": self.name, "layout": self.layout.to_dict(), "order": self.order, "terms": terms}


def evaluate(density: EnergyDensity, v, D1, f=None, D2=None) -> np.ndarray:
    """Evaluate ``density`` on a batch of slots (see module docstring for shapes)."""
    return density.value(v, D1, f, D2)


def gradient(density: EnergyDensity, v, D1, f=None, D2=None):
    """Per-slot partial derivatives of ``density``."""
    return density.grad(v, D1, f, D2)


def make_density(spec: dict) -> EnergyDensity:
    """Build a catalog density from a parameter table (as read from a config file)."""
    spec = dict(spec)
    try:
        name = spec.pop("name")
    except KeyError as exc:
        raise DensityError("density table needs a 'name'") from exc
    try:
        if name == "modica_mortola":
            return ModicaMortola(N=int(spec.get("N", 1)), m=int(spec.get("m", 1)),
                                 scale=float(spec.get("scale", 1.0)), q=int(spec.get("q", 0)))
        if name == "aviles_giga":
            return AvilesGiga(N=int(spec.get("N", 2)), q=int(spec.get("q", 0)))
        if name == "two_gradient_well":
            A = np.asarray(spec["A"], dtype=float)
            return TwoGradientWell(N=A.shape[-1], A=A, B=spec["B"], q=int(spec.get("q", 0)))
        if name == "polynomial":
            lay = Layout(**{k: int(v) for k, v in spec["layout"].items()})
            terms = [(t["coef"], t.get("powers", {})) for t in spec["terms"]]
            return PolynomialCustom(lay, int(spec.get("order", 1)), terms)
    except (KeyError, TypeError) as exc:
        raise DensityError(f"bad parameters for density {name!r}: {exc}") from exc
    raise DensityError(f"unknown density {name!r}")


def curvature_scales(density: EnergyDensity, states, fs, h: float = 1e-4):
    """Rough quadratic coefficients ``(alpha1, alpha2, c_w)`` near the given well states.

    They are half the largest diagonal second derivatives of ``F`` in the
    first-derivative slot, the second-derivative slot and the state, found by
    central differences of the analytic gradient.  Only used to scale
    optimizer preconditioners.
    """
    lay = density.layout
    S, N = lay.size, lay.N
    a1 = a2 = cw = 0.0
    for v, f in zip(states, fs):
        v = np.asarray(v, float)[None, :]
        f = np.asarray(f, float).reshape(1, lay.q)
        D1 = np.zeros((1, S, N))
        D2 = np.zeros((1, S, N, N)) if density.order == 2 else None
        for c in range(S):
            e = np.zeros_like(v)
            e[0, c] = h
            gp = density.grad(v + e, D1, f, D2)[0]
            gm = density.grad(v - e, D1, f, D2)[0]
            cw = max(cw, 0.5 * (gp[0, c] - gm[0, c]) / (2 * h))
            for a in range(N):
                E = np.zeros_like(D1)
                E[0, c, a] = h
                gp = density.grad(v, D1 + E, f, D2)[1]
                gm = density.grad(v, D1 - E, f, D2)[1]
                a1 = max(a1, 0.5 * (gp[0, c, a] - gm[0, c, a]) / (2 * h))
                if D2 is not None:
                    for b in range(N):
                        E2 = np.zeros_like(D2)
                        E2[0, c, a, b] = h
                        gp = density.grad(v, D1, f, D2 + E2)[2]
                        gm = density.grad(v, D1, f, D2 - E2)[2]
                        a2 = max(a2, 0.5 * (gp[0, c, a, b] - gm[0, c, a, b]) / (2 * h))
    return max(a1, 1e-3), a2, max(cw, 0.25)
