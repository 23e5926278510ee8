"""Blockwise information reconciliation over the sifted key.

The sifted key is cut into fixed blocks (tail rounded down to a multiple
of 1800, scraps discarded); each block picks a code rate from its
equivalent QBER, decodes the syndrome difference with per-bit LLRs, and
walks down the rate ladder on failure.  Eight LLR strategies are
supported, from ignoring channel knowledge entirely (NoLLR) to per-bit
LLRs with optional vacuum exclusion, quantized variants, deliberate
noise, and a shuffle that homogenizes block statistics.

Descent is bounded by an inefficiency cap: rungs whose predicted
f = (1-R)/h2(phi) would exceed ``f_cap`` are never attempted, so a
pathological block is dropped (leaking nothing) rather than reconciled
at wasteful cost.  Leakage of an attempted block counts the final
syndrome plus the verification tag, whether or not decoding succeeded.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .detection import INT_VACUUM, SiftedData
from .ldpc import LLR_CLAMP, CodeLibrary, decode, syndrome
from .passlink import ConfigError

VERIFY_TAG_BITS = 50    # ceil(log2(1/eps_cor)) at eps_cor = 1e-15
TAIL_UNIT = 1800        # tail blocks round down to a multiple of this
LIFT_UNIT = 180         # protograph width; every block length divides it

LLR_MODES = ("NoLLR", "FullLLR", "ThreeLevel", "TwoLevelNoVacuum",
             "FullLLRNoVacuum", "NoisyLLR", "Randomized")
SELECTION_MODES = ("MeanQBER", "MeanCapacity")


@dataclass(frozen=True)
class Strategy:
    """One LLR construction plus one code-selection mode."""

    llr_mode: str = "FullLLR"
    selection: str = "MeanQBER"
    noise_sigma: float = 0.125

    def __post_init__(self) -> None:
        if self.llr_mode not in LLR_MODES:
            raise ConfigError(f"unknown llr_mode {self.llr_mode!r}")
        if self.selection not in SELECTION_MODES:
            raise ConfigError(f"unknown selection {self.selection!r}")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be non-negative")

    @property
    def excludes_vacuum(self) -> bool:
        return self.llr_mode in ("TwoLevelNoVacuum", "FullLLRNoVacuum")

    @property
    def shuffles(self) -> bool:
        return self.llr_mode == "Randomized"


def binary_entropy(p):
    """h2(p) in bits, elementwise, with h2(0) = h2(1) = 0."""
    p = np.asarray(p, dtype=float)
    if np.any(p < 0) or np.any(p > 1):
        raise ConfigError("probability outside [0, 1]")
    out = np.zeros_like(p)
    inner = (p > 0) & (p < 1)
    q = p[inner]
    out[inner] = -q * np.log2(q) - (1 - q) * np.log2(1 - q)
    return float(out) if out.ndim == 0 else out


def inverse_entropy(c: float) -> float:
    """BSC crossover phi with capacity c: solve 1 - h2(phi) = c by
    bisection on [0, 0.5] to absolute tolerance 1e-9."""
    if not 0.0 <= c <= 1.0:
        raise ConfigError("capacity outside [0, 1]")
    target = 1.0 - c
    lo, hi = 0.0, 0.5
    while hi - lo > 1e-9:
        mid = 0.5 * (lo + hi)
        if binary_entropy(mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def select_phi(q: np.ndarray, mode: str) -> float:
    """Equivalent block QBER for code selection.

    MeanQBER averages the per-bit error probabilities; MeanCapacity
    averages the per-bit BSC capacities and converts back.  Concavity of
    h2 makes the capacity-equivalent phi the smaller of the two, which is
    the information-theoretically matched choice (it supports higher code
    rates on non-uniform blocks).
    """
    q = np.asarray(q, dtype=float)
    if q.size == 0:
        raise ConfigError("empty block")
    if mode == "MeanQBER":
        return float(q.mean())
    if mode == "MeanCapacity":
        return inverse_entropy(float(np.mean(1.0 - binary_entropy(q))))
    raise ConfigError(f"unknown selection {mode!r}")


def build_llrs(strategy: Strategy, q: np.ndarray, labels: np.ndarray,
               phi_sel: float, rng: np.random.Generator | None = None) -> np.ndarray:
    """Per-bit LLRs of the error vector for one block.

    Vacuum-excluding strategies expect a block already stripped of vacuum
    bits (exclusion happens before block formation, so lengths stay
    multiples of the lift unit).
    """
    q = np.asarray(q, dtype=float)
    labels = np.asarray(labels)
    if np.any(q <= 0) or np.any(q > 0.5):
        # q = 0 would be +inf; the caller clamps estimates into (0, 0.5]
        raise ConfigError("per-bit q must lie in (0, 0.5]")
    mode = strategy.llr_mode
    if strategy.excludes_vacuum and np.any(labels == INT_VACUUM):
        raise ConfigError("vacuum bits present in a vacuum-excluding block")
    if mode == "NoLLR":
        llr = np.full(q.shape, np.log((1.0 - phi_sel) / phi_sel))
    elif mode in ("FullLLR", "FullLLRNoVacuum", "Randomized"):
        llr = np.log((1.0 - q) / q)
    elif mode in ("ThreeLevel", "TwoLevelNoVacuum"):
        llr = np.empty_like(q)
        for lab in np.unique(labels):
            sel = labels == lab
            qbar = q[sel].mean()
            llr[sel] = np.log((1.0 - qbar) / qbar)
    elif mode == "NoisyLLR":
        if rng is None:
            raise ConfigError("NoisyLLR needs an rng")
        llr = np.log((1.0 - q) / q) + rng.normal(0.0, strategy.noise_sigma, q.shape)
    else:
        raise ConfigError(f"unknown llr_mode {mode!r}")
    return np.clip(llr, -LLR_CLAMP, LLR_CLAMP)


@dataclass(frozen=True)
class BlockPlan:
    """Index ranges cutting a key of ``total_bits`` into blocks."""

    n_block: int
    ranges: tuple[tuple[int, int], ...]
    tail_len: int
    discarded: int


def plan_blocks(total_bits: int, n_block: int = 460800) -> BlockPlan:
    if n_block % LIFT_UNIT:
        raise ConfigError(f"block length must be a multiple of {LIFT_UNIT}")
    if total_bits < 0:
        raise ConfigError("negative key length")
    full = total_bits // n_block
    ranges = [(i * n_block, (i + 1) * n_block) for i in range(full)]
    rem = total_bits - full * n_block
    tail = (rem // TAIL_UNIT) * TAIL_UNIT
    if tail:
        ranges.append((full * n_block, full * n_block + tail))
    return BlockPlan(n_block=n_block, ranges=tuple(ranges),
                     tail_len=tail, discarded=rem - tail)


@dataclass
class Block:
    bits_a: np.ndarray
    bits_b: np.ndarray
    q: np.ndarray
    labels: np.ndarray

    @property
    def n(self) -> int:
        return len(self.bits_a)


@dataclass
class ReconcileOutcome:
    """Per-block result; ``attempted`` distinguishes a block dropped for
    want of an admissible rung (zero leakage) from a decode failure."""

    block_idx: int
    n: int
    phi_sel: float
    phi_actual: float
    mode: str
    strategy: str
    rate_initial: float
    rate_final: float
    m_bits: int
    verify_bits: int
    success: bool
    attempted: bool
    f: float

    @property
    def leakage(self) -> int:
        return self.m_bits + self.verify_bits


def _verify_tag(bits: np.ndarray, seed: int, block_idx: int) -> int:
    """50-bit keyed hash standing in for the eps_cor universal hash."""
    h = hashlib.blake2b(np.packbits(bits).tobytes(), digest_size=16,
                        key=f"{seed}:{block_idx}".encode())
    return int.from_bytes(h.digest()[:8], "big") >> (64 - VERIFY_TAG_BITS)


def reconcile_block(block: Block, strategy: Strategy, library: CodeLibrary,
                    rng: np.random.Generator | None = None, *,
                    f_margin: float = 1.05, f_cap: float = 1.30,
                    max_iters: int = 150, patience: int = 40,
                    verify_seed: int = 0, block_idx: int = 0) -> ReconcileOutcome:
    """Rate-ladder reconciliation of one block.

    The initial rung is the highest rate R with R <= 1 - h2(phi)*f_margin;
    descent stops at the last rung still inside the inefficiency cap.
    Leakage counts the final syndrome only (descent re-decodes the same
    bits; an implementation with incremental syndromes would transmit
    exactly the final rung's check bits in total).
    """
    phi_sel = select_phi(block.q, strategy.selection)
    phi_actual = float(np.mean(block.bits_a != block.bits_b))
    llr = build_llrs(strategy, block.q, block.labels, phi_sel, rng)
    h_sel = binary_entropy(phi_sel)
    # f uses the empirical block QBER; a constructed error-free block falls
    # back to the selection phi so f stays finite
    h_f = binary_entropy(phi_actual) if phi_actual > 0 else h_sel

    def outcome(rate_i, rate_f, m, ok, attempted):
        f = (1.0 - rate_f) / h_f if attempted else float("nan")
        return ReconcileOutcome(
            block_idx=block_idx, n=block.n, phi_sel=phi_sel,
            phi_actual=phi_actual, mode=strategy.selection,
            strategy=strategy.llr_mode, rate_initial=rate_i, rate_final=rate_f,
            m_bits=m, verify_bits=VERIFY_TAG_BITS if attempted else 0,
            success=ok, attempted=attempted, f=f)

    start = library.initial_index(1.0 - h_sel * f_margin)
    rate_initial = library.rates[start]
    tag_a = _verify_tag(block.bits_a, verify_seed, block_idx)
    last_rate, last_m, attempted = float("nan"), 0, False
    for idx in range(start, len(library)):
        rate = library.rates[idx]
        if (1.0 - rate) > f_cap * h_sel:
            break       # deeper rungs only get worse
        code = library.code_for_length(idx, block.n)
        if code is None:
            continue    # no 4-cycle-free lift at this length; skip the rung
        target = syndrome(code, block.bits_a) ^ syndrome(code, block.bits_b)
        res = decode(code, target, llr, max_iters=max_iters, patience=patience)
        last_rate, last_m, attempted = rate, code.m, True
        if res.success:
            corrected = block.bits_b ^ res.error_pattern
            if _verify_tag(corrected, verify_seed, block_idx) == tag_a:
                return outcome(rate_initial, rate, code.m, True, True)
    return outcome(rate_initial, last_rate, last_m, False, attempted)


@dataclass
class ReconcileReport:
    strategy: Strategy
    outcomes: list[ReconcileOutcome]
    sifted_bits: int
    reconciled_bits: int      # bits covered by blocks (post exclusion/cut)
    corrected_bits: int       # successful blocks only
    leakage_bits: int
    scrap_bits: int           # leftover below the rounding units, never coded
    excluded_bits: int        # vacuum bits dropped by NoVacuum strategies
    shuffle_seed: int | None

    @property
    def n_blocks(self) -> int:
        return len(self.outcomes)

    @property
    def n_success(self) -> int:
        return sum(o.success for o in self.outcomes)

    @property
    def mean_rate(self) -> float:
        rates = [o.rate_final for o in self.outcomes if o.success]
        return float(np.mean(rates)) if rates else float("nan")


def run_pass(sifted: SiftedData, strategy: Strategy, library: CodeLibrary,
             n_block: int = 460800, seed: int = 0, *,
             f_margin: float = 1.05, f_cap: float = 1.30,
             max_iters: int = 150, patience: int = 40,
             q_floor: float = 1e-7) -> ReconcileReport:
    """Reconcile a whole sifted key under one strategy.

    The Randomized shuffle (a seeded permutation applied identically to
    bits, q, and labels) happens before block formation.  Per-bit q
    estimates are clamped into [q_floor, 0.5] before LLR construction.
    """
    if len(sifted) == 0:
        raise ConfigError("empty sifted key")
    bits_a = sifted.alice_bits
    bits_b = sifted.bob_bits
    q = np.clip(sifted.q, q_floor, 0.5)
    labels = sifted.intensity
    shuffle_seed = None
    if strategy.shuffles:
        shuffle_seed = seed
        perm = np.random.Generator(np.random.Philox([seed, 7])).permutation(len(bits_a))
        bits_a, bits_b = bits_a[perm], bits_b[perm]
        q, labels = q[perm], labels[perm]

    # block boundaries always come from the unfiltered key, so per-block
    # results stay comparable across strategies; vacuum exclusion then
    # shortens each block in place, rounded down to the lift unit
    plan = plan_blocks(len(bits_a), n_block)
    outcomes = []
    scrap = plan.discarded
    excluded = 0
    for idx, (lo, hi) in enumerate(plan.ranges):
        ba, bb = bits_a[lo:hi], bits_b[lo:hi]
        qb, lb = q[lo:hi], labels[lo:hi]
        if strategy.excludes_vacuum:
            keep = lb != INT_VACUUM
            excluded += int(len(lb) - keep.sum())
            ba, bb, qb, lb = ba[keep], bb[keep], qb[keep], lb[keep]
            n_use = (len(ba) // LIFT_UNIT) * LIFT_UNIT
            scrap += len(ba) - n_use
            if n_use == 0:
                continue
            ba, bb, qb, lb = ba[:n_use], bb[:n_use], qb[:n_use], lb[:n_use]
        rng = np.random.Generator(np.random.Philox([seed, 11, idx]))
        outcomes.append(reconcile_block(
            Block(ba, bb, qb, lb), strategy, library, rng,
            f_margin=f_margin, f_cap=f_cap, max_iters=max_iters,
            patience=patience, verify_seed=seed, block_idx=idx))
    return ReconcileReport(
        strategy=strategy, outcomes=outcomes, sifted_bits=len(sifted),
        reconciled_bits=sum(o.n for o in outcomes),
        corrected_bits=sum(o.n for o in outcomes if o.success),
        leakage_bits=sum(o.leakage for o in outcomes),
        scrap_bits=scrap, excluded_bits=excluded, shuffle_seed=shuffle_seed)


def write_block_csv(path, report: ReconcileReport) -> None:
    with open(path, "w") as fh:
        fh.write("block_idx,n,phi_sel,mode,strategy,rate_initial,rate_final,"
                 "m_bits,success,f\n")
        for o in report.outcomes:
            fh.write(f"{o.block_idx},{o.n},{o.phi_sel:.9g},{o.mode},"
                     f"{o.strategy},{o.rate_initial:.9g},{o.rate_final:.9g},"
                     f"{o.m_bits},{int(o.success)},{o.f:.9g}\n")
