"""Downlink precoders: MMSE baseline, candidate-search VP, exhaustive oracle.

The nonlinear precoder splits into a channel-only stage
(:func:`vp_preprocess`: regularized factorization plus a K-best ranking of
perturbation tree paths by a data-independent lower bound) and a per-vector
stage (:func:`vp_precode`: demap each surviving path into an actual bounded
perturbation, score it by its exact distance, keep the winner).  The
exhaustive :func:`vp_oracle` searches every bounded perturbation and is the
optimality reference for tests and audits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .constellation import Constellation
from .linalg import SortedRQ, as_complex_matrix, as_complex_vector, sorted_rq

__all__ = [
    "ComplexityCount",
    "PrecodeOutput",
    "VpPre",
    "complexity_count",
    "demap",
    "mmse_matrix",
    "mmse_precode",
    "mop",
    "mop_kbest",
    "oracle_precode_batch",
    "ped",
    "vp_oracle",
    "vp_precode",
    "vp_precode_batch",
    "vp_preprocess",
]

ORACLE_GUARD = 10**7
NORMALIZE_MODES = ("alg2", "transmit-portion")


@dataclass(frozen=True)
class VpPre:
    """Channel-only precomputation shared by every data vector.

    ``candidates[i]`` holds the 1-based neighbour ranks of the i-th surviving
    tree path; ``mop_values`` are their (nondecreasing) channel-only bounds.
    """

    factors: SortedRQ
    candidates: np.ndarray  # (K, n_r) int64
    mop_values: np.ndarray  # (K,)
    k: int
    bound: int


@dataclass(frozen=True)
class PrecodeOutput:
    """One precoded transmit vector plus its bookkeeping."""

    x: np.ndarray  # (n_t,) transmit signal
    gamma: float  # normalization actually applied
    t: np.ndarray  # (n_r,) Gaussian-integer perturbation (zeros for mmse)
    perm: np.ndarray  # row ordering the precoder worked in
    scheme: str


@dataclass(frozen=True)
class ComplexityCount:
    """Per-vector complex multiplication counts."""

    mmse: float
    vp: float


def mmse_matrix(h, sigma2: float) -> np.ndarray:
    """Regularized channel inverse ``h^H (h h^H + sigma2*n_r*I)^-1``."""
    h = as_complex_matrix(h, "channel matrix")
    if sigma2 < 0.0:
        raise ValueError("sigma2 must be nonnegative")
    alpha = sigma2 * h.shape[0]
    gram = h @ h.conj().T + alpha * np.eye(h.shape[0])
    return np.linalg.solve(gram, h).conj().T


def mmse_precode(h, v, sigma2: float, pt: float) -> PrecodeOutput:
    """Linear MMSE precoding with per-vector power normalization."""
    v = as_complex_vector(v, "data vector")
    if pt <= 0.0:
        raise ValueError("pt must be positive")
    g = mmse_matrix(h, sigma2)
    if g.shape[1] != v.shape[0]:
        raise ValueError("data vector length does not match the channel")
    u = g @ v
    gamma = float(np.real(u.conj() @ u))
    if gamma <= 0.0:
        raise ValueError("zero-energy precoded vector")
    n_r = v.shape[0]
    return PrecodeOutput(
        x=np.sqrt(pt / gamma) * u,
        gamma=gamma,
        t=np.zeros(n_r, dtype=np.complex128),
        perm=np.arange(n_r),
        scheme="mmse",
    )


def mop(p, rtilde) -> float:
    """Channel-only lower bound for the path with neighbour ranks ``p``.

    A separable sum over levels: the squared diagonal magnitude times
    (rank - 1).  Rank 1 at every level (take the closest neighbour
    everywhere) scores exactly zero.
    """
    p = np.asarray(p, dtype=np.int64)
    w = np.abs(np.diagonal(np.asarray(rtilde))) ** 2
    if p.shape != w.shape:
        raise ValueError("rank vector length does not match the matrix")
    return float(w @ (p - 1))


def mop_kbest(rtilde, k: int, bound: int = 1) -> list[tuple[np.ndarray, float]]:
    """The ``k`` rank paths with the smallest channel-only bound, ascending.

    Breadth-first K-best over levels: every survivor expands into
    ``(2*bound+1)**2`` children and the ``k`` smallest partial sums survive.
    Exact because per-level increments are nonnegative; ties order
    lexicographically on the rank vector.
    """
    rtilde = np.asarray(rtilde)
    n = rtilde.shape[0]
    nb = (2 * bound + 1) ** 2
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > nb**n:
        raise ValueError(f"k={k} exceeds the {nb**n} available paths")
    w = np.abs(np.diagonal(rtilde)) ** 2
    survivors: list[tuple[float, tuple[int, ...]]] = [(0.0, ())]
    for level in range(n):
        children = [
            (metric + w[level] * (r - 1), ranks + (r,))
            for metric, ranks in survivors
            for r in range(1, nb + 1)
        ]
        children.sort()
        survivors = children[:k]
    return [(np.array(ranks, dtype=np.int64), metric) for metric, ranks in survivors]


def demap(p, rtilde, v_perm, tau: float, bound: int = 1) -> np.ndarray:
    """Convert neighbour ranks into an actual bounded perturbation vector.

    Levels run bottom-up.  At level ``k`` the effective point is
    ``(ytilde_k - sum_{l>k} rtilde[k,l]*tau*t_l) / (rtilde[k,k]*tau)`` with
    ``ytilde = rtilde @ v_perm``; the rank ``p[k]`` picks the p[k]-th closest
    bounded Gaussian integer.  Closeness is compared through
    ``|acc - tau*rtilde[k,k]*point|^2``, the same ordering without the
    division; ties go to the smaller real part, then the smaller imaginary
    part.
    """
    rtilde = as_complex_matrix(rtilde, "rtilde")
    v_perm = as_complex_vector(v_perm, "data vector")
    p = np.asarray(p, dtype=np.int64)
    if tau <= 0.0:
        raise ValueError("tau must be positive")
    n = rtilde.shape[0]
    if p.shape[0] != n or v_perm.shape[0] != n:
        raise ValueError("inconsistent demap operand shapes")
    if np.any(np.diagonal(rtilde) == 0):
        raise ValueError("zero diagonal entry")
    lat = kernels.lattice_points(bound)
    if p.min() < 1 or p.max() > lat.shape[0]:
        raise ValueError(f"ranks must lie in 1..{lat.shape[0]}")
    ytilde = rtilde @ v_perm
    t = np.zeros(n, dtype=np.complex128)
    for k in range(n - 1, -1, -1):
        acc = ytilde[k]
        for l in range(k + 1, n):
            acc -= rtilde[k, l] * (tau * t[l])
        w = tau * rtilde[k, k]
        u = acc - w * lat
        order = np.argsort(u.real**2 + u.imag**2, kind="stable")
        t[k] = lat[order[p[k] - 1]]
    return t


def ped(rtilde, v_perm, t, tau: float) -> float:
    """Partial-Euclidean-distance recursion for ``||rtilde (v - tau t)||^2``.

    Accumulates per-level residual magnitudes bottom-up, exploiting the
    upper-triangular structure; equals the direct matrix-vector norm.
    """
    rtilde = as_complex_matrix(rtilde, "rtilde")
    v_perm = as_complex_vector(v_perm, "data vector")
    t = np.asarray(t, dtype=np.complex128)
    n = rtilde.shape[0]
    if v_perm.shape[0] != n or t.shape[0] != n:
        raise ValueError("inconsistent ped operand shapes")
    stilde = rtilde @ v_perm
    d = 0.0
    for k in range(n - 1, -1, -1):
        u = stilde[k] - tau * (rtilde[k, k:] @ t[k:])
        d += float(u.real**2 + u.imag**2)
    return d


def vp_preprocess(h, sigma: float, c: Constellation, k: int, bound: int = 1) -> VpPre:
    """Channel-only stage: regularize, factor, rank candidate tree paths.

    Depends only on the channel, the noise level, and the constellation; the
    result is reused verbatim for every data vector sent over this channel.
    """
    if sigma < 0.0:
        raise ValueError("sigma must be nonnegative")
    lam = sigma / math.sqrt(c.mean_energy)
    factors = sorted_rq(h, lam)
    cand = mop_kbest(factors.rtilde, k, bound)
    ranks = np.stack([r for r, _ in cand])
    values = np.array([m for _, m in cand])
    return VpPre(factors=factors, candidates=ranks, mop_values=values, k=k, bound=bound)


def vp_precode_batch(
    pre: VpPre,
    v_cols,
    tau: float,
    pt: float,
    normalize: str = "alg2",
    fxp=None,
    stats=None,
):
    """Precode a block of data vectors sharing one channel.

    ``v_cols`` is (n_r, m).  Returns ``(x_cols, gamma, t_cols)`` with shapes
    (n_t, m), (m,), (n_r, m).  ``normalize="alg2"`` divides by the full
    extended-vector norm (transmit power at most ``pt``);
    ``"transmit-portion"`` divides by the norm of the transmitted slice
    (transmit power exactly ``pt``).

    With ``fxp`` set (a :class:`vpprecode.fxp.FixedFormat`), stage outputs of
    the datapath are quantized: triangular-inverse entries and the
    transformed data vectors in the base format, PED accumulators, the
    transformed output and the normalization in the wide accumulator format.
    """
    if normalize not in NORMALIZE_MODES:
        raise ValueError(f"normalize must be one of {NORMALIZE_MODES}")
    if pre.candidates.shape[0] < 1:
        raise ValueError("empty candidate set")
    if tau <= 0.0 or pt <= 0.0:
        raise ValueError("tau and pt must be positive")
    f = pre.factors
    v_cols = np.asarray(v_cols, dtype=np.complex128)
    if v_cols.ndim != 2 or v_cols.shape[0] != f.n_rows:
        raise ValueError("v_cols must be (n_r, m)")
    n_t = f.qbar.shape[1] - f.n_rows

    rt = f.rtilde
    acc_step = 0.0
    acc_max = 0.0
    if fxp is not None:
        from .fxp import quantize  # local import to avoid a cycle

        wide = fxp.accumulator()
        rt = quantize(rt, fxp, stats)
        acc_step, acc_max = wide.step, wide.max_value
    vp = v_cols[f.perm, :]
    ytilde = rt @ vp
    if fxp is not None:
        ytilde = quantize(ytilde, fxp, stats)

    t, d, _, nsat = kernels.demap_select(
        rt, np.ascontiguousarray(ytilde), pre.candidates, tau, pre.bound, acc_step, acc_max
    )
    if stats is not None:
        stats.saturations += nsat

    z = ytilde - rt @ (tau * t)
    w = f.qbar.conj().T @ z
    if fxp is not None:
        w = quantize(w, wide, stats)
    if normalize == "alg2":
        gamma = d
    else:
        w_tx = w[:n_t]
        gamma = np.einsum("ij,ij->j", w_tx, w_tx.conj()).real
    if fxp is not None:
        gamma = quantize(gamma, wide, stats)
    if np.any(gamma <= 0.0):
        raise ValueError("nonpositive normalization factor")
    x = w[:n_t] * np.sqrt(pt / gamma)
    return x, np.asarray(gamma, dtype=float), t


def vp_precode(pre: VpPre, v, tau: float, pt: float, normalize: str = "alg2") -> PrecodeOutput:
    """Precode one data vector: demap all candidates, keep the smallest PED.

    Ties between equal PEDs go to the lowest candidate index (candidates are
    already ordered by ascending channel-only bound).
    """
    v = as_complex_vector(v, "data vector")
    x, gamma, t = vp_precode_batch(pre, v[:, None], tau, pt, normalize)
    return PrecodeOutput(
        x=x[:, 0].copy(),
        gamma=float(gamma[0]),
        t=t[:, 0].copy(),
        perm=pre.factors.perm,
        scheme="vp",
    )


def _enumeration_chunks(bound: int, n: int, chunk: int = 1 << 14):
    """Yield (start, block) over all bounded perturbations in lexicographic order.

    Entry 0 is the most significant digit; each entry runs over the bounded
    Gaussian integers ordered by (real, imag).
    """
    lat = kernels.lattice_points(bound)
    nb = lat.shape[0]
    total = nb**n
    powers = nb ** np.arange(n - 1, -1, -1, dtype=np.int64)
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total), dtype=np.int64)
        digits = (idx[:, None] // powers[None, :]) % nb
        yield start, lat[digits]  # (block, n)


def oracle_guard(n_r: int, bound: int) -> int:
    """Size of the exhaustive search space; must stay within ORACLE_GUARD."""
    return (2 * bound + 1) ** (2 * n_r)


def vp_oracle(h, sigma: float, c: Constellation, v, tau: float, bound: int = 1):
    """Exhaustively minimize ``||rtilde (v_perm - tau t)||^2`` over bounded t.

    Uses the same regularized factors as the candidate-search precoder so the
    two minima are directly comparable.  Ties go to the first minimizer in
    lexicographic enumeration order.  Returns ``(t, gamma)``.
    """
    h = as_complex_matrix(h, "channel matrix")
    v = as_complex_vector(v, "data vector")
    if oracle_guard(h.shape[0], bound) > ORACLE_GUARD:
        raise ValueError(
            f"oracle guard exceeded: {(2 * bound + 1) ** 2}^{h.shape[0]} candidate "
            f"vectors is more than {ORACLE_GUARD}"
        )
    lam = sigma / math.sqrt(c.mean_energy)
    factors = sorted_rq(h, lam)
    vp = v[factors.perm]
    ref = factors.rtilde @ vp
    best_d = math.inf
    best_t = None
    for _, block in _enumeration_chunks(bound, h.shape[0]):
        resid = ref[:, None] - factors.rtilde @ (tau * block.T)
        d = np.einsum("ij,ij->j", resid, resid.conj()).real
        j = int(np.argmin(d))
        if d[j] < best_d:
            best_d = float(d[j])
            best_t = block[j].copy()
    return best_t, best_d


def oracle_precode_batch(
    factors: SortedRQ, v_cols, tau: float, pt: float, bound: int = 1, normalize: str = "alg2"
):
    """Exhaustive-search counterpart of :func:`vp_precode_batch`.

    Meant for small systems (the guard limits the search space); scores
    candidates through the Gram expansion so each chunk is one BLAS call.
    """
    if normalize not in NORMALIZE_MODES:
        raise ValueError(f"normalize must be one of {NORMALIZE_MODES}")
    n_r = factors.n_rows
    if oracle_guard(n_r, bound) > ORACLE_GUARD:
        raise ValueError("oracle guard exceeded")
    v_cols = np.asarray(v_cols, dtype=np.complex128)
    m = v_cols.shape[1]
    n_t = factors.qbar.shape[1] - n_r
    vp = v_cols[factors.perm, :]
    a = factors.rtilde @ vp  # (n_r, m)
    a2 = np.einsum("ij,ij->j", a, a.conj()).real
    best_d = np.full(m, np.inf)
    best_t = np.zeros((n_r, m), dtype=np.complex128)
    for _, block in _enumeration_chunks(bound, n_r):
        bmat = factors.rtilde @ (tau * block.T)  # (n_r, blk)
        b2 = np.einsum("ij,ij->j", bmat, bmat.conj()).real
        cross = np.real(bmat.conj().T @ a)  # (blk, m)
        d = np.maximum(a2[None, :] + b2[:, None] - 2.0 * cross, 0.0)
        j = np.argmin(d, axis=0)
        dmin = d[j, np.arange(m)]
        better = dmin < best_d
        if np.any(better):
            best_d[better] = dmin[better]
            best_t[:, better] = block[j[better]].T
    z = a - factors.rtilde @ (tau * best_t)
    w = factors.qbar.conj().T @ z
    if normalize == "alg2":
        gamma = np.einsum("ij,ij->j", w, w.conj()).real
    else:
        w_tx = w[:n_t]
        gamma = np.einsum("ij,ij->j", w_tx, w_tx.conj()).real
    if np.any(gamma <= 0.0):
        raise ValueError("nonpositive normalization factor")
    x = w[:n_t] * np.sqrt(pt / gamma)
    return x, gamma, best_t


def complexity_count(n_r: int, n_t: int, k: int) -> ComplexityCount:
    """Per-vector complex multiplications: linear baseline vs candidate search."""
    if n_r < 1 or n_t < 1 or k < 0:
        raise ValueError("dimensions must be positive and k nonnegative")
    mmse = float(n_r * n_t)
    vp = float(n_r * n_t + n_t**2 + k * n_t * (1 + (n_t + 1) / 2))
    return ComplexityCount(mmse=mmse, vp=vp)
