"""Finite-key decoy-state bounds and the secret key length.

Bounds follow the consolidated two-decoy finite-key analysis of Lim,
Curty, Walenta, Xu and Zbinden (Phys. Rev. A 89, 022307, 2014): Hoeffding
deviations on per-intensity counts, vacuum intensity treated exactly at
alpha = 0, and the epsilon-secrecy budget split into the standard factor
21.  The virtual X-basis single-photon error rate comes from the
aggregated whole-pass statistics; per-bit channel knowledge enters the
key length only through the reconciliation leakage term.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .passlink import ConfigError
from .reconcile import binary_entropy

N_INTENSITIES = 3   # signal, decoy, vacuum in detection label order


@dataclass(frozen=True)
class SecurityParams:
    eps_cor: float = 1e-15
    eps_sec: float = 1e-9

    def __post_init__(self) -> None:
        for name in ("eps_cor", "eps_sec"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ConfigError(f"{name} must lie in (0, 1)")


def penalty_bits(params: SecurityParams) -> float:
    """Constant correctness + secrecy terms of the key-length formula."""
    return (math.log2(2.0 / params.eps_cor)
            + 6.0 * math.log2(21.0 / params.eps_sec))


@dataclass
class DecoyObservations:
    """Per-intensity tallies for both bases, label order signal/decoy/vacuum."""

    sent_z: np.ndarray
    clicks_z: np.ndarray
    errors_z: np.ndarray
    sent_x: np.ndarray
    clicks_x: np.ndarray
    errors_x: np.ndarray

    def __post_init__(self) -> None:
        for name in ("sent_z", "clicks_z", "errors_z",
                     "sent_x", "clicks_x", "errors_x"):
            arr = np.asarray(getattr(self, name), dtype=np.int64)
            object.__setattr__(self, name, arr)
            if arr.shape != (N_INTENSITIES,):
                raise ConfigError(f"{name} must have one entry per intensity")
            if np.any(arr < 0):
                raise ConfigError(f"{name} must be non-negative")
        for basis in ("z", "x"):
            sent = getattr(self, f"sent_{basis}")
            clk = getattr(self, f"clicks_{basis}")
            err = getattr(self, f"errors_{basis}")
            if np.any(clk > sent) or np.any(err > clk):
                raise ConfigError("need errors <= clicks <= sent per intensity")


@dataclass
class DecoyBounds:
    s_z0_lower: float
    s_z1_lower: float
    phi_x1_upper: float
    clamped: bool    # some bound hit its physical limit (thin statistics)


def _tau(n: int, intensities, probabilities) -> float:
    # probability that a transmitted pulse contains exactly n photons
    return sum(p * math.exp(-a) * a ** n / math.factorial(n)
               for a, p in zip(intensities, probabilities))


def _gamma(a: float, b: float, c: float, d: float) -> float:
    """Finite-size correction for the phase error rate (random sampling
    without replacement between the Z and X single-photon populations)."""
    if not 0.0 < b < 1.0 or c <= 0.0 or d <= 0.0:
        return 0.5
    term = (c + d) / (c * d * b * (1.0 - b)) / (a * a)
    if term <= 1.0:
        return 0.0
    return math.sqrt((c + d) * (1.0 - b) * b / (c * d) / math.log(2.0)
                     * math.log2(term))


def decoy_bounds(obs: DecoyObservations, params: SecurityParams,
                 intensities, probabilities) -> DecoyBounds:
    """Hoeffding-corrected vacuum/single-photon lower bounds and the
    virtual QBER upper bound.

    ``intensities`` must be strictly decreasing with the last entry 0
    (vacuum); ``probabilities`` are the matching selection probabilities.
    Negative intermediate bounds clamp to 0 and set the ``clamped`` flag.
    """
    mu = [float(x) for x in intensities]
    pr = [float(x) for x in probabilities]
    if len(mu) != N_INTENSITIES or len(pr) != N_INTENSITIES:
        raise ConfigError("need exactly three intensities and probabilities")
    if not (mu[0] > mu[1] > mu[2] == 0.0):
        raise ConfigError("intensities must be strictly decreasing to vacuum 0")
    if abs(sum(pr) - 1.0) > 1e-9 or min(pr) <= 0.0:
        raise ConfigError("intensity probabilities must be positive and sum to 1")

    eps1 = params.eps_sec / 21.0
    n_z = int(obs.clicks_z.sum())
    n_x = int(obs.clicks_x.sum())
    m_x = int(obs.errors_x.sum())
    if n_z == 0:
        return DecoyBounds(0.0, 0.0, 0.0, clamped=True)

    def scaled(counts, total):
        # Hoeffding band, then the e^mu/p rescaling of the cited analysis
        delta = math.sqrt(total / 2.0 * math.log(1.0 / eps1)) if total else 0.0
        lo = [math.exp(mu[k]) / pr[k] * (counts[k] - delta) for k in range(3)]
        hi = [math.exp(mu[k]) / pr[k] * (counts[k] + delta) for k in range(3)]
        return lo, hi

    nz_lo, nz_hi = scaled(obs.clicks_z, n_z)
    nx_lo, nx_hi = scaled(obs.clicks_x, n_x)
    mx_lo, mx_hi = scaled(obs.errors_x, m_x)

    tau0 = _tau(0, mu, pr)
    tau1 = _tau(1, mu, pr)
    clamped = False

    def vacuum_bound(lo, hi):
        return tau0 * (mu[1] * lo[2] - mu[2] * hi[1]) / (mu[1] - mu[2])

    def single_bound(lo, hi, s0):
        denom = mu[0] * (mu[1] - mu[2]) - mu[1] ** 2 + mu[2] ** 2
        core = (lo[1] - hi[2]
                - (mu[1] ** 2 - mu[2] ** 2) / mu[0] ** 2 * (hi[0] - s0 / tau0))
        return tau1 * mu[0] * core / denom

    s_z0 = vacuum_bound(nz_lo, nz_hi)
    if s_z0 < 0.0:
        s_z0, clamped = 0.0, True
    s_z1 = single_bound(nz_lo, nz_hi, s_z0)
    if s_z1 < 0.0:
        s_z1, clamped = 0.0, True
    if s_z1 > n_z:
        s_z1, clamped = float(n_z), True

    s_x0 = max(vacuum_bound(nx_lo, nx_hi), 0.0)
    s_x1 = single_bound(nx_lo, nx_hi, s_x0)
    v_x1 = tau1 * (mx_hi[1] - mx_lo[2]) / (mu[1] - mu[2])
    if s_x1 <= 0.0:
        return DecoyBounds(s_z0, s_z1, 0.5, clamped=True)
    ratio = v_x1 / s_x1
    if ratio <= 0.0:
        phi = _gamma(eps1, 1e-12, s_z1, s_x1) if s_z1 > 0 else 0.0
    else:
        phi = ratio + _gamma(eps1, min(ratio, 1.0 - 1e-12), s_z1, s_x1)
    if phi > 0.5:
        phi, clamped = 0.5, True
    return DecoyBounds(s_z0, s_z1, phi, clamped)


@dataclass
class SKLResult:
    s_z0_lower: float
    s_z1_lower: float
    phi_x1_upper: float
    leakage_bits: float
    length_bits: float


def skl(bounds: DecoyBounds, leakage_bits: float,
        params: SecurityParams) -> SKLResult:
    """Extractable key length: vacuum + single-photon credit, minus the
    single-photon phase-error entropy, reconciliation leakage, and the
    constant correctness/secrecy penalties; clamped at zero."""
    ell = (bounds.s_z0_lower
           + bounds.s_z1_lower * (1.0 - binary_entropy(bounds.phi_x1_upper))
           - leakage_bits - penalty_bits(params))
    return SKLResult(bounds.s_z0_lower, bounds.s_z1_lower,
                     bounds.phi_x1_upper, leakage_bits, max(ell, 0.0))


def asymptotic_rate(phi_x: float, phi_z: float) -> float:
    """Devetak-Winter rate 1 - h2(phi_x) - h2(phi_z); may be negative."""
    if not (0.0 <= phi_x <= 0.5 and 0.0 <= phi_z <= 0.5):
        raise ConfigError("QBER inputs must lie in [0, 0.5]")
    return 1.0 - float(binary_entropy(phi_x)) - float(binary_entropy(phi_z))


def blockwise_leakage_bound(blocks) -> tuple[float, float]:
    """(sum of n_j h2(phi_j), n h2(mean phi)); the first never exceeds the
    second (concavity of h2), quantifying what per-block adaptation saves."""
    if not blocks:
        raise ConfigError("empty block list")
    ns = np.array([float(n) for n, _ in blocks])
    phis = np.array([float(p) for _, p in blocks])
    if np.any(ns <= 0) or np.any((phis < 0) | (phis > 0.5)):
        raise ConfigError("blocks need positive length and phi in [0, 0.5]")
    exact = float(np.sum(ns * binary_entropy(phis)))
    pooled = float(ns.sum() * binary_entropy(float(np.sum(ns * phis) / ns.sum())))
    return exact, pooled
