"""Hot-loop kernels: compiled extension when available, NumPy otherwise.

The compiled backend is selected at import time; set ``VPPRECODE_PURE=1`` to
force the NumPy implementation (used by the parity tests and the benchmark).
Both backends implement identical arithmetic, in the same order, so results
are bit-for-bit interchangeable.
"""

from __future__ import annotations

import os

import numpy as np

from . import _numpy

__all__ = ["BACKEND", "demap_select", "lattice_points"]

if os.environ.get("VPPRECODE_PURE"):
    _impl = _numpy
    BACKEND = "numpy"
else:
    try:
        from . import _speedups as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _numpy
        BACKEND = "numpy"


def lattice_points(bound: int) -> np.ndarray:
    """Bounded Gaussian integers ordered by (real, imag) ascending."""
    if bound < 1:
        raise ValueError("bound must be >= 1")
    span = np.arange(-bound, bound + 1, dtype=float)
    re, im = np.meshgrid(span, span, indexing="ij")
    return (re + 1j * im).ravel()


def demap_select(rtilde, ytilde, ranks, tau, bound, acc_step=0.0, acc_max=0.0):
    """Per column of ``ytilde``, demap every candidate path and keep the best.

    See :func:`vpprecode.kernels._numpy.demap_select` for the contract; this
    dispatches to the selected backend.
    """
    return _impl.demap_select(rtilde, ytilde, ranks, tau, bound, acc_step, acc_max)
