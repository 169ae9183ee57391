"""Monte Carlo link-level simulation over i.i.d. Rayleigh channels.

One *trial* is one packet: a fresh channel draw plus ``vectors_per_packet``
precoded data vectors through it; a packet errs if any of its bits err.
All randomness derives from the configured master seed through a documented
splitting rule, so results are reproducible and independent of worker
scheduling.
"""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .constellation import (
    SUPPORTED_ORDERS,
    Constellation,
    demodulate,
    make_constellation,
    modulate,
    modulo_receive,
)
from .fxp import FixedFormat, QuantStats
from .linalg import sorted_rq
from .precoders import (
    NORMALIZE_MODES,
    ORACLE_GUARD,
    mmse_matrix,
    oracle_guard,
    oracle_precode_batch,
    vp_precode_batch,
    vp_preprocess,
)

__all__ = [
    "CSV_COLUMNS",
    "SCHEMES",
    "LinkStats",
    "SimConfig",
    "SnrStats",
    "TrialResult",
    "rayleigh_channel",
    "read_csv",
    "run_sweep",
    "run_trial",
    "stats_rows",
    "trial_rng",
    "write_csv",
]

SCHEMES = ("mmse", "vp", "oracle")

CSV_COLUMNS = ["snr_db", "scheme", "nT", "nR", "qam", "K", "ber", "ser", "per", "trials", "seed"]


@dataclass(frozen=True)
class SimConfig:
    """One link-level experiment: system size, scheme, SNR sweep, seeding."""

    n_t: int
    n_r: int
    qam_order: int
    snr_db: tuple[float, ...]
    seed: int
    scheme: str = "vp"
    k: int = 8
    bound: int = 1
    pt: float = 1.0
    trials: int = 100
    vectors_per_packet: int = 96
    normalize: str = "alg2"
    fxp: FixedFormat | None = None

    def __post_init__(self):
        object.__setattr__(self, "snr_db", tuple(float(s) for s in self.snr_db))

    def validate(self) -> None:
        if self.n_t < 1 or self.n_r < 1:
            raise ValueError("antenna/user counts must be positive")
        if self.qam_order not in SUPPORTED_ORDERS:
            raise ValueError(f"unsupported QAM order {self.qam_order}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if not self.snr_db:
            raise ValueError("snr_db must be nonempty")
        if self.k < 1 or self.bound < 1:
            raise ValueError("k and bound must be >= 1")
        if self.pt <= 0.0:
            raise ValueError("pt must be positive")
        if self.trials < 1 or self.vectors_per_packet < 1:
            raise ValueError("trials and vectors_per_packet must be >= 1")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ValueError("seed must be a nonnegative integer")
        if self.normalize not in NORMALIZE_MODES:
            raise ValueError(f"normalize must be one of {NORMALIZE_MODES}")
        if self.scheme == "oracle" and oracle_guard(self.n_r, self.bound) > ORACLE_GUARD:
            raise ValueError(
                f"oracle scheme refused: {(2 * self.bound + 1) ** 2}^{self.n_r} "
                f"candidate vectors exceeds the {ORACLE_GUARD} guard"
            )
        if self.fxp is not None and self.scheme != "vp":
            raise ValueError("fixed-point emulation models the vp datapath only")


@dataclass
class SnrStats:
    """Error counters for one SNR point."""

    snr_db: float
    bit_errors: int = 0
    bits: int = 0
    sym_errors: int = 0
    syms: int = 0
    pkt_errors: int = 0
    packets: int = 0
    seconds: float = 0.0
    saturations: int = 0

    @property
    def ber(self) -> float:
        return self.bit_errors / self.bits if self.bits else math.nan

    @property
    def ser(self) -> float:
        return self.sym_errors / self.syms if self.syms else math.nan

    @property
    def per(self) -> float:
        return self.pkt_errors / self.packets if self.packets else math.nan


@dataclass
class LinkStats:
    """Sweep result: one :class:`SnrStats` per configured SNR point."""

    config: SimConfig
    points: list[SnrStats] = field(default_factory=list)


@dataclass
class TrialResult:
    """Per-user error counts for one packet."""

    bit_errors: np.ndarray  # (n_r,)
    sym_errors: np.ndarray  # (n_r,)
    bits_per_user: int
    syms_per_user: int
    packet_error: bool
    saturations: int = 0


def rayleigh_channel(n_r: int, n_t: int, rng: np.random.Generator) -> np.ndarray:
    """i.i.d. complex Gaussian channel, zero mean, unit entry variance."""
    re = rng.standard_normal((n_r, n_t))
    im = rng.standard_normal((n_r, n_t))
    return math.sqrt(0.5) * (re + 1j * im)


def trial_rng(seed: int, snr_index: int, trial_index: int) -> np.random.Generator:
    """Generator for one (SNR point, trial) cell.

    Splitting rule: ``default_rng(SeedSequence([seed, snr_index,
    trial_index]))``.  Streams for distinct cells are independent and do not
    depend on scheduling order.
    """
    return np.random.default_rng(np.random.SeedSequence([seed, snr_index, trial_index]))


def run_trial(
    cfg: SimConfig,
    h: np.ndarray,
    rng: np.random.Generator,
    snr_db: float,
    c: Constellation | None = None,
) -> TrialResult:
    """Send one packet over ``h``: draw bits, precode, add noise, receive.

    Draw order from ``rng`` is bits first, then noise.  The receiver knows
    the per-vector normalization factor exactly: the linear scheme rescales
    by ``sqrt(gamma/pt)`` and slices to the nearest point; the perturbed
    schemes apply the modulo fold first.
    """
    if c is None:
        c = make_constellation(cfg.qam_order)
    sigma2 = cfg.pt / 10.0 ** (snr_db / 10.0)
    sigma = math.sqrt(sigma2)
    m = cfg.vectors_per_packet
    bps = c.bits_per_symbol

    bits = rng.integers(0, 2, size=(m, cfg.n_r, bps), dtype=np.uint8)
    v = modulate(bits, c).reshape(m, cfg.n_r).T  # (n_r, m)

    qstats = QuantStats()
    if cfg.scheme == "mmse":
        g = mmse_matrix(h, sigma2)
        u = g @ v
        gamma = np.einsum("ij,ij->j", u, u.conj()).real
        if np.any(gamma <= 0.0):
            raise ValueError("zero-energy precoded vector")
        x = u * np.sqrt(cfg.pt / gamma)
    elif cfg.scheme == "vp":
        pre = vp_preprocess(h, sigma, c, cfg.k, cfg.bound)
        x, gamma, _ = vp_precode_batch(
            pre, v, c.tau, cfg.pt, cfg.normalize, fxp=cfg.fxp, stats=qstats
        )
    else:  # oracle
        factors = sorted_rq(h, sigma / math.sqrt(c.mean_energy))
        x, gamma, _ = oracle_precode_batch(factors, v, c.tau, cfg.pt, cfg.bound, cfg.normalize)

    noise = sigma * math.sqrt(0.5) * (
        rng.standard_normal((cfg.n_r, m)) + 1j * rng.standard_normal((cfg.n_r, m))
    )
    y = h @ x + noise

    if cfg.scheme == "mmse":
        y_hat = y * np.sqrt(gamma / cfg.pt)[None, :]
    else:
        y_hat = modulo_receive(y, gamma[None, :], cfg.pt, c.tau)
    bits_hat = demodulate(y_hat.T, c)  # (m, n_r, bps)

    diff = bits_hat != bits
    return TrialResult(
        bit_errors=diff.sum(axis=(0, 2)),
        sym_errors=diff.any(axis=2).sum(axis=0),
        bits_per_user=m * bps,
        syms_per_user=m,
        packet_error=bool(diff.any()),
        saturations=qstats.saturations,
    )


def _accumulate(agg: SnrStats, res: TrialResult) -> None:
    agg.bit_errors += int(res.bit_errors.sum())
    agg.bits += res.bits_per_user * res.bit_errors.shape[0]
    agg.sym_errors += int(res.sym_errors.sum())
    agg.syms += res.syms_per_user * res.sym_errors.shape[0]
    agg.pkt_errors += int(res.packet_error)
    agg.packets += 1
    agg.saturations += res.saturations
    assert agg.bit_errors <= agg.bits and agg.sym_errors <= agg.syms


def _run_chunk(cfg: SimConfig, snr_index: int, start: int, stop: int) -> SnrStats:
    c = make_constellation(cfg.qam_order)
    snr = cfg.snr_db[snr_index]
    agg = SnrStats(snr_db=snr)
    for trial in range(start, stop):
        rng = trial_rng(cfg.seed, snr_index, trial)
        h = rayleigh_channel(cfg.n_r, cfg.n_t, rng)
        _accumulate(agg, run_trial(cfg, h, rng, snr, c))
    return agg


def _merge(agg: SnrStats, part: SnrStats) -> None:
    agg.bit_errors += part.bit_errors
    agg.bits += part.bits
    agg.sym_errors += part.sym_errors
    agg.syms += part.syms
    agg.pkt_errors += part.pkt_errors
    agg.packets += part.packets
    agg.saturations += part.saturations


def run_sweep(cfg: SimConfig, workers: int = 1) -> LinkStats:
    """Run every SNR point of the sweep; trials are the unit of parallelism.

    Counters are exact integers summed in a fixed order, so the result is
    byte-identical for any worker count.
    """
    cfg.validate()
    points: list[SnrStats] = []
    if workers > 1:
        chunk = max(1, -(-cfg.trials // (workers * 4)))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for si in range(len(cfg.snr_db)):
                t0 = time.perf_counter()
                agg = SnrStats(snr_db=cfg.snr_db[si])
                futures = [
                    pool.submit(_run_chunk, cfg, si, start, min(start + chunk, cfg.trials))
                    for start in range(0, cfg.trials, chunk)
                ]
                for fut in futures:  # submission order => deterministic merge order
                    _merge(agg, fut.result())
                agg.seconds = time.perf_counter() - t0
                points.append(agg)
    else:
        for si in range(len(cfg.snr_db)):
            t0 = time.perf_counter()
            agg = _run_chunk(cfg, si, 0, cfg.trials)
            agg.seconds = time.perf_counter() - t0
            points.append(agg)
    return LinkStats(config=cfg, points=points)


def stats_rows(stats: LinkStats) -> list[dict]:
    """Flatten sweep results into CSV-schema rows."""
    cfg = stats.config
    rows = []
    for p in stats.points:
        rows.append(
            {
                "snr_db": p.snr_db,
                "scheme": cfg.scheme,
                "nT": cfg.n_t,
                "nR": cfg.n_r,
                "qam": cfg.qam_order,
                "K": cfg.k,
                "ber": p.ber,
                "ser": p.ser,
                "per": p.per,
                "trials": cfg.trials,
                "seed": cfg.seed,
            }
        )
    return rows


def write_csv(path, rows: list[dict]) -> None:
    """Emit rows in the documented schema; column order is fixed."""
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in CSV_COLUMNS})


_CSV_TYPES = {
    "snr_db": float,
    "scheme": str,
    "nT": int,
    "nR": int,
    "qam": int,
    "K": int,
    "ber": float,
    "ser": float,
    "per": float,
    "trials": int,
    "seed": int,
}


def read_csv(path) -> list[dict]:
    """Parse a results file back into typed rows (round-trips with write_csv)."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_COLUMNS:
            raise ValueError(f"unexpected CSV columns {reader.fieldnames}")
        return [{k: _CSV_TYPES[k](row[k]) for k in CSV_COLUMNS} for row in reader]
