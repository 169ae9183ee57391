"""Dense complex linear algebra for the downlink precoders.

The workhorse is :func:`sorted_rq`, a greedily row-sorted RQ factorization of
the column-extended channel ``[H  lam*I]``.  Sorting processes the
best-conditioned row first, which helps the tree searches downstream, and the
extension block hands back the inverse of the triangular factor essentially
for free (a column shuffle and one scalar division) instead of an explicit
triangular inversion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "FactorizationError",
    "SortedRQ",
    "sorted_rq",
    "invert_upper_triangular",
    "regularized_pinv",
]

# Residual-norm underflow threshold, relative to the largest initial squared
# row norm.  Flags genuine rank collapse without tripping on double-precision
# cancellation for well-posed inputs.
RANK_EPS = 1e-12


class FactorizationError(ValueError):
    """Raised when a factorization input is ill-posed or its rank collapses."""


def as_complex_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce to a 2-D complex128 array and reject empty or non-finite input."""
    m = np.ascontiguousarray(a, dtype=np.complex128)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ValueError(f"{name} must be a nonempty 2-D array, got shape {m.shape}")
    if not np.isfinite(m).all():
        raise ValueError(f"{name} contains non-finite entries")
    return m


def as_complex_vector(a, name: str = "vector") -> np.ndarray:
    """Coerce to a 1-D complex128 array and reject empty or non-finite input."""
    v = np.ascontiguousarray(a, dtype=np.complex128)
    if v.ndim != 1 or v.shape[0] < 1:
        raise ValueError(f"{name} must be a nonempty 1-D array, got shape {v.shape}")
    if not np.isfinite(v).all():
        raise ValueError(f"{name} contains non-finite entries")
    return v


@dataclass(frozen=True)
class SortedRQ:
    """Sorted RQ factors of the extended channel ``[H  lam*I]``.

    Satisfies ``rbar @ qbar == hbar[perm]`` where ``qbar`` has orthonormal
    rows, ``rbar`` is upper triangular with positive real diagonal, and
    ``rtilde`` is the inverse of ``rbar``.  ``perm[i]`` is the original row
    (user) index that ended up at position ``i``.
    """

    qbar: np.ndarray  # (n_r, n_t + n_r), orthonormal rows
    rbar: np.ndarray  # (n_r, n_r), upper triangular, positive real diagonal
    rtilde: np.ndarray  # (n_r, n_r), inverse of rbar
    perm: np.ndarray  # (n_r,), row ordering applied to [H lam*I]
    lam: float

    @property
    def n_rows(self) -> int:
        return self.rbar.shape[0]

    @property
    def q1(self) -> np.ndarray:
        """Columns of ``qbar`` facing the physical channel."""
        return self.qbar[:, : self.qbar.shape[1] - self.qbar.shape[0]]

    @property
    def q2(self) -> np.ndarray:
        """Columns of ``qbar`` facing the regularization block."""
        return self.qbar[:, self.qbar.shape[1] - self.qbar.shape[0] :]


def sorted_rq(h, lam: float) -> SortedRQ:
    """Row-sorted RQ factorization of ``[h  lam*I]``.

    Rows are orthonormalized by modified Gram-Schmidt in a greedy order: at
    every step the remaining row with the smallest residual norm is processed
    next (ties go to the lowest original row index).  The raw sweep fills the
    triangular factor below the diagonal; flipping row and column order
    afterwards restores the upper-triangular convention the tree searches
    expect, with the flip folded into ``perm``.

    With ``lam > 0`` the inverse of the triangular factor costs no extra
    arithmetic: the extension block satisfies ``rbar @ q2 = lam * P``, so
    ``rtilde = q2[:, perm] / lam``.  At ``lam == 0`` (square or tall channels
    only) it falls back to back-substitution.
    """
    h = as_complex_matrix(h, "channel matrix")
    lam = float(lam)
    if lam < 0.0:
        raise ValueError("lam must be nonnegative")
    n_r, n_t = h.shape
    if lam == 0.0 and n_r > n_t:
        raise FactorizationError("lam must be positive when n_r > n_t")

    q = np.concatenate([h, lam * np.eye(n_r, dtype=np.complex128)], axis=1)
    low = np.zeros((n_r, n_r), dtype=np.complex128)
    perm = np.arange(n_r)
    norms = np.einsum("ij,ij->i", q, q.conj()).real
    floor = RANK_EPS * norms.max()

    for i in range(n_r):
        # Greedy pick: smallest residual norm; lowest original index on ties.
        rel = int(np.lexsort((perm[i:], norms[i:]))[0]) + i
        if rel != i:
            q[[i, rel]] = q[[rel, i]]
            low[[i, rel]] = low[[rel, i]]
            perm[[i, rel]] = perm[[rel, i]]
            norms[[i, rel]] = norms[[rel, i]]
        if norms[i] <= floor:
            raise FactorizationError(
                f"residual norm underflow at step {i}: rank collapse "
                f"(norm {norms[i]:.3e} vs floor {floor:.3e})"
            )
        # Recompute the pivot norm exactly; the running update is only used
        # for selection and can drift over many subtractions.
        rii = np.sqrt(np.einsum("i,i->", q[i], q[i].conj()).real)
        low[i, i] = rii
        q[i] /= rii
        if i + 1 < n_r:
            proj = q[i + 1 :] @ q[i].conj()
            low[i + 1 :, i] = proj
            q[i + 1 :] -= np.outer(proj, q[i])
            norms[i + 1 :] -= np.abs(proj) ** 2
            np.maximum(norms[i + 1 :], 0.0, out=norms[i + 1 :])

    qbar = np.ascontiguousarray(q[::-1])
    rbar = np.ascontiguousarray(low[::-1, ::-1])
    perm = np.ascontiguousarray(perm[::-1])
    if lam > 0.0:
        rtilde = np.ascontiguousarray(qbar[:, n_t:][:, perm]) / lam
    else:
        rtilde = invert_upper_triangular(rbar)
    return SortedRQ(qbar=qbar, rbar=rbar, rtilde=rtilde, perm=perm, lam=lam)


def invert_upper_triangular(r) -> np.ndarray:
    """Invert an upper-triangular matrix column by column by back-substitution."""
    r = as_complex_matrix(r, "triangular matrix")
    n = r.shape[0]
    if r.shape[1] != n:
        raise ValueError(f"matrix must be square, got shape {r.shape}")
    if np.any(np.tril(r, -1) != 0):
        raise ValueError("matrix must be upper triangular")
    diag = np.diagonal(r)
    if np.any(diag == 0):
        raise ValueError("zero diagonal element")
    out = np.zeros_like(r)
    for j in range(n):
        out[j, j] = 1.0 / diag[j]
        for i in range(j - 1, -1, -1):
            out[i, j] = -(r[i, i + 1 : j + 1] @ out[i + 1 : j + 1, j]) / diag[i]
    return out


def regularized_pinv(h, lam: float) -> np.ndarray:
    """Ridge-regularized right pseudo-inverse ``h^H (h h^H + lam^2 I)^-1``.

    Stays well defined for wide channels (more rows than columns) whenever
    ``lam > 0``; at ``lam == 0`` it reduces to the plain right pseudo-inverse
    and requires full row rank.
    """
    h = as_complex_matrix(h, "channel matrix")
    lam = float(lam)
    if lam < 0.0:
        raise ValueError("lam must be nonnegative")
    gram = h @ h.conj().T + (lam * lam) * np.eye(h.shape[0])
    try:
        return np.linalg.solve(gram, h).conj().T
    except np.linalg.LinAlgError as exc:
        raise FactorizationError("singular regularized Gram matrix") from exc
