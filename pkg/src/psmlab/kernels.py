"""Hot-loop kernels, compiled when available.

The Cython extension ``psmlab._ckernels`` is used if it was built; otherwise
the numpy implementations in ``psmlab._pykernels`` are used. Set
``PSMLAB_PURE_PYTHON=1`` to force the fallback.
"""
import os

import numpy as np

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("PSMLAB_PURE_PYTHON") != "1":
    try:
        from . import _ckernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels


def lj_energy_forces(x, r_m, tau, oscillator, min_distance=1e-10):
    """Lennard-Jones (+ optional centre-of-mass oscillator) energy and forces for one frame.

    Returns ``(energy, forces, i, j, distance)``; ``i == -1`` unless a pair is
    closer than ``min_distance``, in which case energy and forces are invalid.
    """
    x = np.ascontiguousarray(x, dtype=np.float64).reshape(-1, 3)
    return _impl.lj_energy_forces(x, float(r_m), float(tau), bool(oscillator), float(min_distance))


def pair_distances(frames):
    """All i<j distances, shape ``(n_frames, n*(n-1)/2)``, for frames of shape ``(S, n, dim)``."""
    frames = np.ascontiguousarray(frames, dtype=np.float64)
    return _impl.pair_distances(frames)


def use_backend(name):
    """Switch implementation at runtime (``"cython"`` or ``"python"``); used by benchmarks and parity tests."""
    global _impl, BACKEND
    if name == "python":
        _impl = _pykernels
    elif name == "cython":
        from . import _ckernels

        _impl = _ckernels
    else:
        raise ValueError(f"unknown kernel backend {name!r}")
    BACKEND = name
