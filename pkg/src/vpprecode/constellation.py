"""Gray-mapped square QAM, the perturbation interval, and the modulo receiver.

Constellations live on the odd-integer grid per real axis and are scaled to
unit mean symbol energy.  The perturbation interval ``tau`` is chosen as
``2 * (cmax + spacing/2)`` so that translates of the constellation by
``tau`` times a Gaussian integer tile the plane without overlap; the
receiver undoes any such translate with a componentwise modulo.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Constellation",
    "make_constellation",
    "modulate",
    "demodulate",
    "modulo_receive",
]

SUPPORTED_ORDERS = (4, 16, 64, 256)


@dataclass(frozen=True)
class Constellation:
    """Unit-energy Gray-mapped square QAM.

    ``points[i]`` carries the bit label ``labels[i]`` (I bits first, then Q
    bits).  ``spacing``, ``cmax`` and ``tau`` are in the normalized (unit
    mean energy) scale; divide by ``scale`` for grid units.
    """

    order: int
    points: np.ndarray  # (order,) complex symbols
    labels: np.ndarray  # (order, bits_per_symbol) 0/1 rows
    spacing: float  # distance between adjacent points per axis
    cmax: float  # largest coordinate magnitude
    tau: float  # perturbation interval (lattice period)
    mean_energy: float  # 1.0 by construction
    scale: float  # grid-to-normalized factor

    @property
    def bits_per_symbol(self) -> int:
        return int(math.log2(self.order))

    @property
    def side(self) -> int:
        return int(round(math.sqrt(self.order)))


def _gray_levels(side: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-axis amplitude levels (descending) and their Gray labels.

    ``levels[r]`` is the r-th level from the top; adjacent ranks differ in
    exactly one bit of ``codes[r]``, and the all-zero label sits on the most
    positive level.
    """
    ranks = np.arange(side)
    codes = ranks ^ (ranks >> 1)
    levels = (side - 1 - 2 * ranks).astype(float)
    return levels, codes


def make_constellation(order: int) -> Constellation:
    """Build the unit-energy Gray-mapped constellation for a square QAM order."""
    if order not in SUPPORTED_ORDERS:
        raise ValueError(f"unsupported QAM order {order}; pick one of {SUPPORTED_ORDERS}")
    side = int(round(math.sqrt(order)))
    k = side.bit_length() - 1  # bits per axis
    levels, codes = _gray_levels(side)
    energy = 2.0 * np.mean(levels**2)  # per complex symbol, grid units
    scale = 1.0 / math.sqrt(energy)

    ri, qi = np.divmod(np.arange(order), side)
    points = (levels[ri] + 1j * levels[qi]) * scale
    shifts = np.arange(k - 1, -1, -1)
    bits_i = (codes[ri][:, None] >> shifts) & 1
    bits_q = (codes[qi][:, None] >> shifts) & 1
    labels = np.concatenate([bits_i, bits_q], axis=1).astype(np.uint8)

    cmax = float(side - 1)
    tau = 2.0 * (cmax + 1.0)  # == 2*sqrt(order) in grid units
    return Constellation(
        order=order,
        points=points,
        labels=labels,
        spacing=2.0 * scale,
        cmax=cmax * scale,
        tau=tau * scale,
        mean_energy=1.0,
        scale=scale,
    )


def modulate(bits, c: Constellation) -> np.ndarray:
    """Map a bit array to a flat symbol vector, one per ``bits_per_symbol`` bits.

    Bits are consumed in row-major order and their count must be a multiple
    of ``bits_per_symbol``.  I bits come first within a symbol, then Q bits.
    """
    bits = np.asarray(bits)
    bps = c.bits_per_symbol
    if bits.size % bps != 0:
        raise ValueError(f"bit count {bits.size} not divisible by {bps}")
    b = bits.reshape(-1, bps)
    k = bps // 2
    weights = 1 << np.arange(k - 1, -1, -1)
    code_i = b[:, :k] @ weights
    code_q = b[:, k:] @ weights
    levels, codes = _gray_levels(c.side)
    rank_of = np.empty(c.side, dtype=np.int64)
    rank_of[codes] = np.arange(c.side)
    return (levels[rank_of[code_i]] + 1j * levels[rank_of[code_q]]) * c.scale


def _nearest_ranks(coord: np.ndarray, c: Constellation) -> np.ndarray:
    """Per-axis nearest level rank; ties resolve to the smaller rank."""
    levels, _ = _gray_levels(c.side)
    scaled = levels * c.scale
    d = np.abs(coord.reshape(-1, 1) - scaled[None, :])
    return d.argmin(axis=1)  # first occurrence == smaller rank


def demodulate(y, c: Constellation) -> np.ndarray:
    """Hard-decision demap: nearest constellation point, labels out.

    Ties between equidistant points resolve to the lowest point index,
    which per axis means the more positive level.
    Output shape is ``y.shape + (bits_per_symbol,)``.
    """
    y = np.asarray(y)
    _, codes = _gray_levels(c.side)
    ri = _nearest_ranks(np.real(y).astype(float), c)
    qi = _nearest_ranks(np.imag(y).astype(float), c)
    k = c.bits_per_symbol // 2
    shifts = np.arange(k - 1, -1, -1)
    bits_i = (codes[ri][:, None] >> shifts) & 1
    bits_q = (codes[qi][:, None] >> shifts) & 1
    bits = np.concatenate([bits_i, bits_q], axis=1).astype(np.uint8)
    return bits.reshape(y.shape + (c.bits_per_symbol,))


def modulo_receive(y, gamma, pt: float, tau: float) -> np.ndarray:
    """Fold the rescaled receive signal back into the fundamental square.

    Computes ``mod(sqrt(gamma/pt) * y)`` with ``mod(x) = x - tau *
    floor((x + tau/2)/tau)`` applied independently to real and imaginary
    parts; outputs lie in ``[-tau/2, tau/2)`` (the high edge wraps).
    ``gamma`` may be an array broadcastable against ``y`` for per-vector
    normalization factors.
    """
    gamma = np.asarray(gamma, dtype=float)
    if np.any(gamma <= 0.0):
        raise ValueError("gamma must be positive")
    if pt <= 0.0 or tau <= 0.0:
        raise ValueError("pt and tau must be positive")
    z = np.sqrt(gamma / pt) * np.asarray(y)
    re = np.real(z)
    im = np.imag(z)
    re = re - tau * np.floor((re + 0.5 * tau) / tau)
    im = im - tau * np.floor((im + 0.5 * tau) / tau)
    return re + 1j * im
