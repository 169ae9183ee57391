"""Fixed-point emulation of the nonlinear precoding datapath.

Models a signed fixed-point datapath at stage boundaries rather than per
arithmetic operation: values are re-quantized where the hardware would
register them.  Multiply-accumulate results (PED accumulators, the
transformed output vector, the normalization factor) live in a wide
accumulator with the same fractional step but twice the total width, the
usual DSP sizing.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

__all__ = ["FixedFormat", "QuantStats", "quantize", "quantize_pipeline"]


@dataclass(frozen=True)
class FixedFormat:
    """Signed fixed-point format: ``total_bits`` wide, ``frac_bits`` fractional."""

    total_bits: int = 16
    frac_bits: int = 8

    def __post_init__(self):
        if not 0 < self.frac_bits < self.total_bits:
            raise ValueError(
                f"need 0 < frac_bits < total_bits, got {self.frac_bits}/{self.total_bits}"
            )

    @property
    def step(self) -> float:
        return 2.0**-self.frac_bits

    @property
    def max_value(self) -> float:
        return (2 ** (self.total_bits - 1) - 1) * self.step

    def accumulator(self) -> "FixedFormat":
        """Wide multiply-accumulate format: same step, double the width."""
        return FixedFormat(total_bits=2 * self.total_bits, frac_bits=self.frac_bits)


@dataclass
class QuantStats:
    """Running saturation count across quantization calls."""

    saturations: int = 0


def quantize(x, fmt: FixedFormat, stats: QuantStats | None = None):
    """Round to the nearest representable value (ties to even) and saturate.

    Applies componentwise to complex input.  Saturation is silent; pass
    ``stats`` to count clipped components.
    """
    x = np.asarray(x)
    if np.iscomplexobj(x):
        return quantize(x.real, fmt, stats) + 1j * quantize(x.imag, fmt, stats)
    step = fmt.step
    mx = fmt.max_value
    q = np.rint(x / step) * step
    if stats is not None:
        stats.saturations += int(np.count_nonzero(np.abs(q) > mx))
    return np.clip(q, -mx, mx)


def quantize_pipeline(obj, fmt: FixedFormat, stats: QuantStats | None = None):
    """Quantized copy of a precoding input: arrays directly, factor bundles per stage.

    For a :class:`vpprecode.precoders.VpPre` only the triangular-inverse
    entries are replaced (the search and demap read nothing else from the
    factors); arrays quantize componentwise.  With generous ``frac_bits`` the
    output converges to the float input.
    """
    from .precoders import VpPre  # local import to avoid a cycle

    if isinstance(obj, VpPre):
        factors = replace(obj.factors, rtilde=quantize(obj.factors.rtilde, fmt, stats))
        return replace(obj, factors=factors)
    return quantize(obj, fmt, stats)
