"""Pure-NumPy reference implementation of the candidate-selection kernel.

Vectorized over candidates and data vectors but with the exact same
per-element operation order as the compiled backend, so outputs match bit
for bit.
"""

from __future__ import annotations

import numpy as np


def _lattice(bound: int) -> np.ndarray:
    if bound < 1:
        raise ValueError("bound must be >= 1")
    span = np.arange(-bound, bound + 1, dtype=float)
    re, im = np.meshgrid(span, span, indexing="ij")
    return (re + 1j * im).ravel()


def demap_select(rtilde, ytilde, ranks, tau, bound, acc_step=0.0, acc_max=0.0):
    """Demap every candidate rank path and keep the smallest-PED one per vector.

    Levels run bottom-up.  At level ``k`` each path converts its neighbour
    rank into a bounded Gaussian integer: the rank-th closest to the
    effective point, with closeness compared through
    ``|acc - tau*rtilde[k,k]*point|^2`` (same ordering as dividing by the
    diagonal, without the division) and ties going to the smaller real then
    smaller imaginary part.  The residual magnitude accumulates into the
    path's PED; ``acc_step > 0`` quantizes the accumulator after every level
    (round to nearest even at ``acc_step``, saturate at ``acc_max``).

    Parameters
    ----------
    rtilde : (n, n) complex
        Upper-triangular inverse factor.
    ytilde : (n, m) complex
        ``rtilde @ v`` for the m data vectors.
    ranks : (K, n) integer
        1-based neighbour ranks per candidate path and level.
    tau : float
        Perturbation interval.
    bound : int
        Per-axis bound on perturbation entries.

    Returns
    -------
    t : (n, m) complex
        Best perturbation per data vector.
    ped : (m,) float
        Its accumulated PED.
    chosen : (m,) int
        Index of the winning candidate (lowest index on ties).
    saturations : int
        Accumulator saturation count (0 when quantization is off).
    """
    rtilde = np.asarray(rtilde, dtype=np.complex128)
    ytilde = np.asarray(ytilde, dtype=np.complex128)
    ranks = np.asarray(ranks, dtype=np.int64)
    n = rtilde.shape[0]
    n_cand, m = ranks.shape[0], ytilde.shape[1]
    if rtilde.shape != (n, n) or ytilde.shape[0] != n or ranks.shape[1] != n:
        raise ValueError("inconsistent kernel operand shapes")
    if n_cand < 1:
        raise ValueError("empty candidate set")
    lat = _lattice(bound)
    nb = lat.shape[0]
    if ranks.min() < 1 or ranks.max() > nb:
        raise ValueError(f"ranks must lie in 1..{nb}")

    t_all = np.zeros((n_cand, n, m), dtype=np.complex128)
    ped = np.zeros((n_cand, m))
    saturations = 0
    quantize = acc_step > 0.0
    for k in range(n - 1, -1, -1):
        acc = np.broadcast_to(ytilde[k], (n_cand, m)).copy()
        for l in range(k + 1, n):
            acc -= rtilde[k, l] * (tau * t_all[:, l, :])
        w = tau * rtilde[k, k]
        u = acc[:, :, None] - w * lat[None, None, :]
        d2 = u.real**2 + u.imag**2
        order = np.argsort(d2, axis=-1, kind="stable")
        idx = np.broadcast_to((ranks[:, k] - 1)[:, None, None], (n_cand, m, 1))
        best = np.take_along_axis(order, idx, axis=-1)[:, :, 0]
        tk = lat[best]
        t_all[:, k, :] = tk
        resid = acc - w * tk
        ped += resid.real**2 + resid.imag**2
        if quantize:
            ped = np.rint(ped / acc_step) * acc_step
            saturations += int(np.count_nonzero(np.abs(ped) > acc_max))
            np.clip(ped, -acc_max, acc_max, out=ped)

    chosen = np.argmin(ped, axis=0)
    cols = np.arange(m)
    return (
        np.ascontiguousarray(t_all[chosen, :, cols].T),
        ped[chosen, cols].copy(),
        chosen.astype(np.int64),
        saturations,
    )
