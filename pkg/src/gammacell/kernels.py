"""Backend selection for the mollifier hot loops.

The compiled extension ``_ckernels`` is used when it was built; otherwise the
NumPy implementation in ``_pykernels`` is used.  Setting the environment
variable ``GAMMACELL_BACKEND`` to ``python`` forces the fallback, ``cython``
makes a missing extension an import error.
"""

from __future__ import annotations

import os

from . import _pykernels

radial = _pykernels.radial
BUMP, POLY = _pykernels.BUMP, _pykernels.POLY


def _select():
    choice = os.environ.get("GAMMACELL_BACKEND", "auto").strip().lower()
    if choice not in ("auto", "python", "cython"):
        raise ImportError(f"GAMMACELL_BACKEND must be auto, python or cython, got {choice!r}")
    if choice == "python":
        return "python", _pykernels.slice_mass
    try:
        from . import _ckernels
    except ImportError:
        if choice == "cython":
            raise
        return "python", _pykernels.slice_mass
    return "cython", _ckernels.slice_mass


BACKEND, slice_mass = _select()
