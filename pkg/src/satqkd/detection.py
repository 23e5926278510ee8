"""Click-level detection model and sifting.

Detection events are sampled with a geometric skip sampler over the pulse-slot
grid: the per-slot click probability is constant within each transmittance
window, so the gap to the next click is geometric and whole windows can be
skipped in one draw.  Dead time after each click is enforced by construction.
Basis, intensity, bit and error metadata are assigned a posteriori, so only
clicked slots are ever materialised.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .passlink import ConfigError

SIFTED_MAGIC = b"QSFT"
SIFTED_VERSION = 1

INT_SIGNAL, INT_DECOY, INT_VACUUM = 0, 1, 2
INTENSITY_NAMES = ("signal", "decoy", "vacuum")


@dataclass(frozen=True)
class DetectorConfig:
    """Source, basis and detector parameters."""

    pulse_rate_hz: float = 1e9
    window_rate_hz: float = 40e3
    p_z: float = 0.85
    mu_signal: float = 0.59
    mu_decoy: float = 0.21
    p_signal: float = 0.80
    p_decoy: float = 0.14
    misalignment_deg: float = 5.0
    noise_rate_per_slot: float = 3e-6
    holdoff_s: float = 100e-9

    def __post_init__(self) -> None:
        if not 0.5 <= self.p_z < 1.0:
            raise ConfigError("p_z must be in [0.5, 1)")
        if not 0.0 < self.mu_decoy < self.mu_signal:
            raise ConfigError("need 0 < decoy intensity < signal intensity")
        if not (0.0 < self.p_signal and 0.0 < self.p_decoy
                and self.p_signal + self.p_decoy < 1.0):
            raise ConfigError("intensity probabilities must be positive and sum below 1")
        if self.noise_rate_per_slot < 0.0:
            raise ConfigError("noise rate must be non-negative")
        n_win = self.pulse_rate_hz / self.window_rate_hz
        if abs(n_win - round(n_win)) > 1e-6 or round(n_win) < 1:
            raise ConfigError("pulse rate must be an integer multiple of the window rate")
        n_hold = self.holdoff_s * self.pulse_rate_hz
        if abs(n_hold - round(n_hold)) > 1e-6 or round(n_hold) < 1:
            raise ConfigError("hold-off must be an integer number of slots")

    @property
    def p_vacuum(self) -> float:
        return 1.0 - self.p_signal - self.p_decoy

    @property
    def n_window(self) -> int:
        return round(self.pulse_rate_hz / self.window_rate_hz)

    @property
    def n_holdoff(self) -> int:
        return round(self.holdoff_s * self.pulse_rate_hz)

    @property
    def intensities(self) -> tuple[float, float, float]:
        return (self.mu_signal, self.mu_decoy, 0.0)

    @property
    def intensity_probs(self) -> tuple[float, float, float]:
        return (self.p_signal, self.p_decoy, self.p_vacuum)


@dataclass
class SiftedData:
    """Z-basis sifted key with per-bit metadata, plus X-basis tallies."""

    slots: np.ndarray        # u64 slot index of each sifted bit
    intensity: np.ndarray    # u8 codes: 0 signal, 1 decoy, 2 vacuum
    alice_bits: np.ndarray   # u8
    errors: np.ndarray       # u8, Bob bit = alice ^ error
    q: np.ndarray            # per-bit error probability
    total_slots: int
    total_clicks: int
    z_clicks_by_int: np.ndarray   # length 3
    z_errors_by_int: np.ndarray
    x_clicks_by_int: np.ndarray
    x_errors_by_int: np.ndarray

    @property
    def bob_bits(self) -> np.ndarray:
        return self.alice_bits ^ self.errors

    def __len__(self) -> int:
        return len(self.slots)


def expected_counts(eta: float, intensity: float, dcfg: DetectorConfig) -> tuple[float, float]:
    """Mean photocount in the correct and wrong detector for one pulse."""
    if eta < 0.0 or intensity < 0.0:
        raise ConfigError("transmittance and intensity must be non-negative")
    delta = math.radians(dcfg.misalignment_deg)
    lam = eta * intensity
    tau_ok = lam * math.cos(delta) ** 2 + dcfg.noise_rate_per_slot
    tau_err = lam * math.sin(delta) ** 2 + dcfg.noise_rate_per_slot
    return tau_ok, tau_err


def click_and_qber(eta, intensity: float, dcfg: DetectorConfig):
    """Click probability and conditional QBER for pulses of one intensity.

    Vectorised over ``eta``.  Double clicks are resolved by a fair coin, which
    is what the half-weight cross term accounts for; with no light and only
    noise the QBER is exactly one half.
    """
    eta_arr = np.asarray(eta, dtype=float)
    delta = math.radians(dcfg.misalignment_deg)
    lam = eta_arr * intensity
    tau_ok = lam * math.cos(delta) ** 2 + dcfg.noise_rate_per_slot
    tau_err = lam * math.sin(delta) ** 2 + dcfg.noise_rate_per_slot
    p_ok = -np.expm1(-tau_ok)
    p_err = -np.expm1(-tau_err)
    p_click = p_ok + p_err - p_ok * p_err
    with np.errstate(invalid="ignore"):
        qber = np.where(p_click > 0.0, (p_err - 0.5 * p_ok * p_err) / np.maximum(p_click, 1e-300), 0.5)
    if np.isscalar(eta):
        return float(p_click), float(qber)
    return p_click, qber


def window_click_probability(eta_windows: np.ndarray, dcfg: DetectorConfig) -> np.ndarray:
    """Per-slot click probability marginalised over the intensity mix, per window."""
    eta_w = np.asarray(eta_windows, dtype=float)
    total = np.zeros_like(eta_w)
    for p_int, intensity in zip(dcfg.intensity_probs, dcfg.intensities):
        pc, _ = click_and_qber(eta_w, intensity, dcfg)
        total += p_int * pc
    return total


def sample_clicks(p_click_windows: np.ndarray, dcfg: DetectorConfig, seed: int) -> np.ndarray:
    """Slot indices of detector clicks over the whole pass.

    Skip sampling: from the first live slot after dead time, the number of
    slots to the next click is geometric with the current window's click
    probability.  A draw that lands past the end of the window is discarded
    and redrawn from the next window boundary, which is exact because the
    geometric distribution is memoryless.
    """
    p = np.asarray(p_click_windows, dtype=float)
    if np.any((p < 0.0) | (p > 1.0)):
        raise ConfigError("click probabilities must lie in [0, 1]")
    n_window = dcfg.n_window
    n_holdoff = dcfg.n_holdoff
    total_slots = len(p) * n_window
    rng = np.random.Generator(np.random.Philox(seed))

    parts: list[np.ndarray] = []
    theta = 0
    while theta < total_slots:
        w = theta // n_window
        end = (w + 1) * n_window
        pw = p[w]
        if pw <= 0.0:
            theta = end
            continue
        # batch the gap draws for this window; candidates are
        # theta + cumsum(gap - 1) shifted by the accumulated hold-off
        space = end - theta
        mean_n = pw * space
        batch = int(mean_n + 6.0 * math.sqrt(mean_n) + 8.0)
        gaps = rng.geometric(pw, size=batch).astype(np.int64)
        pos = theta + np.cumsum(gaps - 1 + n_holdoff) - n_holdoff
        inside = pos < end
        if inside.all():
            # undersized batch (rare): keep what we have, stay in this window
            parts.append(pos)
            theta = int(pos[-1]) + n_holdoff
            continue
        k = int(np.argmin(inside))
        if k == 0:
            theta = end
        else:
            kept = pos[:k]
            parts.append(kept)
            # the next candidate crossed the boundary, so redraw there;
            # discarded draws are independent, so this stays exact
            theta = max(end, int(kept[-1]) + n_holdoff)
    if not parts:
        return np.empty(0, dtype=np.int64)
    return np.concatenate(parts)


def assign_metadata(click_slots: np.ndarray, eta_windows: np.ndarray,
                    dcfg: DetectorConfig, seed: int) -> SiftedData:
    """A-posteriori metadata for each click, then basis sifting.

    Bases for both sides are drawn independently; both-Z clicks become key
    bits, both-X clicks feed parameter estimation, mixed-basis clicks are
    dropped (their dead time already happened in the sampler).  The intensity
    label is drawn from the posterior given a click in that window, and the
    per-bit error probability is the conditional QBER for that label.
    """
    eta_w = np.asarray(eta_windows, dtype=float)
    n = len(click_slots)
    rng = np.random.Generator(np.random.Philox(seed))

    # conditional click probability and QBER per (intensity, window)
    p_click = np.empty((3, len(eta_w)))
    qber = np.empty((3, len(eta_w)))
    for k, intensity in enumerate(dcfg.intensities):
        p_click[k], qber[k] = click_and_qber(eta_w, intensity, dcfg)

    win = (np.asarray(click_slots, dtype=np.int64) // dcfg.n_window).astype(np.intp)
    weights = np.asarray(dcfg.intensity_probs)[:, None] * p_click[:, win]  # (3, n)
    cdf = np.cumsum(weights, axis=0)
    cdf /= cdf[-1]
    u = rng.random(n)
    label = (u[None, :] > cdf[:2]).sum(axis=0).astype(np.uint8)

    alice_z = rng.random(n) < dcfg.p_z
    bob_z = rng.random(n) < dcfg.p_z
    alice_bits = rng.integers(0, 2, size=n, dtype=np.uint8)
    q = qber[label, win]
    errors = (rng.random(n) < q).astype(np.uint8)

    both_z = alice_z & bob_z
    both_x = ~alice_z & ~bob_z

    def tallies(mask):
        c = np.zeros(3, dtype=np.int64)
        e = np.zeros(3, dtype=np.int64)
        for k in range(3):
            sel = mask & (label == k)
            c[k] = int(sel.sum())
            e[k] = int((errors[sel] == 1).sum())
        return c, e

    zc, ze = tallies(both_z)
    xc, xe = tallies(both_x)

    return SiftedData(
        slots=click_slots[both_z].astype(np.uint64),
        intensity=label[both_z],
        alice_bits=alice_bits[both_z],
        errors=errors[both_z],
        q=q[both_z],
        total_slots=len(eta_w) * dcfg.n_window,
        total_clicks=n,
        z_clicks_by_int=zc,
        z_errors_by_int=ze,
        x_clicks_by_int=xc,
        x_errors_by_int=xe,
    )


def simulate_detection(eta_windows: np.ndarray, dcfg: DetectorConfig,
                       click_seed: int, metadata_seed: int) -> SiftedData:
    """Clicks plus metadata in one call."""
    p = window_click_probability(eta_windows, dcfg)
    clicks = sample_clicks(p, dcfg, click_seed)
    return assign_metadata(clicks, eta_windows, dcfg, metadata_seed)


_RECORD_DTYPE = np.dtype([("slot", "<u8"), ("intensity", "u1"), ("alice_bit", "u1"),
                          ("error", "u1"), ("q", "<f4")])


def write_sifted(path, data: SiftedData) -> None:
    """Binary sifted-key records with a count header."""
    with open(path, "wb") as fh:
        fh.write(SIFTED_MAGIC)
        fh.write(struct.pack("<IQ", SIFTED_VERSION, len(data)))
        rec = np.empty(len(data), dtype=_RECORD_DTYPE)
        rec["slot"] = data.slots
        rec["intensity"] = data.intensity
        rec["alice_bit"] = data.alice_bits
        rec["error"] = data.errors
        rec["q"] = data.q
        fh.write(rec.tobytes())
        tail = np.stack([data.z_clicks_by_int, data.z_errors_by_int,
                         data.x_clicks_by_int, data.x_errors_by_int]).astype("<i8")
        fh.write(struct.pack("<QQ", data.total_slots, data.total_clicks))
        fh.write(tail.tobytes())


def read_sifted(path) -> SiftedData:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != SIFTED_MAGIC:
            raise ConfigError(f"{path}: not a sifted-key file")
        version, count = struct.unpack("<IQ", fh.read(12))
        if version != SIFTED_VERSION:
            raise ConfigError(f"{path}: unsupported version {version}")
        rec = np.frombuffer(fh.read(count * _RECORD_DTYPE.itemsize), dtype=_RECORD_DTYPE)
        if len(rec) != count:
            raise ConfigError(f"{path}: truncated records")
        total_slots, total_clicks = struct.unpack("<QQ", fh.read(16))
        tail = np.frombuffer(fh.read(4 * 3 * 8), dtype="<i8").reshape(4, 3)
    return SiftedData(
        slots=rec["slot"].astype(np.uint64),
        intensity=rec["intensity"].copy(),
        alice_bits=rec["alice_bit"].copy(),
        errors=rec["error"].copy(),
        q=rec["q"].astype(float),
        total_slots=total_slots,
        total_clicks=total_clicks,
        z_clicks_by_int=tail[0].copy(),
        z_errors_by_int=tail[1].copy(),
        x_clicks_by_int=tail[2].copy(),
        x_errors_by_int=tail[3].copy(),
    )


DETECTION_CSV_HEADER = "t_s,clicks,sifted_z,mean_qber"


def write_detection_csv(path, data: SiftedData, all_click_slots: np.ndarray,
                        dcfg: DetectorConfig, n_seconds: int) -> None:
    """Per-second click and sifted counts with the mean sifted QBER."""
    slots_per_s = round(dcfg.pulse_rate_hz)
    click_sec = np.asarray(all_click_slots, dtype=np.int64) // slots_per_s
    sift_sec = data.slots.astype(np.int64) // slots_per_s
    clicks = np.bincount(click_sec, minlength=n_seconds)
    sifted = np.bincount(sift_sec, minlength=n_seconds)
    qsum = np.bincount(sift_sec, weights=data.q, minlength=n_seconds)
    with open(path, "w") as fh:
        fh.write(DETECTION_CSV_HEADER + "\n")
        for t in range(n_seconds):
            mean_q = qsum[t] / sifted[t] if sifted[t] else 0.0
            fh.write(f"{t},{clicks[t]},{sifted[t]},{mean_q:.9g}\n")
