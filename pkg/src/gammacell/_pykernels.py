"""Pure NumPy implementation of the mollifier hot loops (reference backend)."""

from __future__ import annotations

import numpy as np

BUMP, POLY = 0, 1
_CHUNK = 1 << 21


def radial(r, code: int, c: float):
    """Kernel profile ``omega(r)``; zero for ``r >= 1/2``."""
    r = np.asarray(r, dtype=float)
    s = 0.25 - r * r
    out = np.zeros_like(r)
    m = s > 0
    if code == BUMP:
        out[m] = c * np.exp(-1.0 / s[m])
    else:
        out[m] = c * s[m] ** 2
    return out


def slice_mass(b, rho, code: int, c: float, gx, gw):
    """Mass of the chord ``{(sigma, rho): -a <= sigma <= min(b, a)}``.

    ``b`` has shape ``(P, Q)`` and ``rho`` shape ``(Q,)``; ``a = sqrt(1/4 - rho^2)``.
    The chord integral of ``omega(sqrt(sigma^2 + rho^2))`` uses the
    Gauss-Legendre rule ``(gx, gw)`` on ``[-1, 1]`` mapped to ``[-a, min(b, a)]``.
    """
    b = np.asarray(b, dtype=float)
    rho = np.asarray(rho, dtype=float)
    P, Q = b.shape
    a = np.sqrt(np.maximum(0.25 - rho * rho, 0.0))
    out = np.zeros((P, Q))
    rows = max(1, _CHUNK // max(1, Q * len(gx)))
    for s in range(0, P, rows):
        bb = b[s:s + rows]
        hi = np.minimum(bb, a)
        lo = -a
        half = 0.5 * np.maximum(hi - lo, 0.0)
        mid = lo + half
        sig = mid[..., None] + half[..., None] * gx
        r = np.sqrt(sig * sig + (rho * rho)[None, :, None])
        out[s:s + rows] = half * (radial(r, code, c) @ gw)
    return out
