"""Time-resolved scintillation synthesis.

A unit-variance Gaussian process with the right bandwidth is produced by FIR
filtering of white noise, then pushed through a zero-memory lognormal
transform so each output sample has unit mean and the per-second scintillation
index dictated by the turbulence state.  The filter is a linear-phase FIR
matching a fourth-order Butterworth magnitude with cutoff at the Greenwood
frequency, truncated at the maximum correlation time.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve
from scipy.signal.windows import tukey

from .passlink import ConfigError
from .turbulence import TurbulenceState

TRACE_MAGIC = b"QSCN"
TRACE_VERSION = 1


@dataclass(frozen=True)
class ScintConfig:
    """Sampling and filter parameters for the scintillation series."""

    sample_rate_hz: int = 40000
    tau_corr_max_s: float = 0.03
    update_interval_s: int = 1
    butterworth_order: int = 4

    def __post_init__(self) -> None:
        if self.sample_rate_hz <= 0:
            raise ConfigError("sample rate must be positive")
        n_taps = self.sample_rate_hz * self.tau_corr_max_s
        if abs(n_taps - round(n_taps)) > 1e-9 or round(n_taps) < 2:
            raise ConfigError("sample_rate * tau_corr_max must be an integer >= 2")
        if self.update_interval_s < 1:
            raise ConfigError("filter update interval must be at least one second")
        if self.butterworth_order < 1:
            raise ConfigError("filter order must be at least 1")

    @property
    def n_taps(self) -> int:
        return round(self.sample_rate_hz * self.tau_corr_max_s)


@dataclass
class ScintSeries:
    """Synthesised per-slot transmittance fluctuation, unit mean."""

    samples: np.ndarray
    sample_rate_hz: int

    def __len__(self) -> int:
        return len(self.samples)


def filter_taps(f_greenwood_hz: float, scfg: ScintConfig) -> np.ndarray:
    """Linear-phase FIR whose magnitude follows the Butterworth shape.

    Taps are normalised to unit energy so unit-variance white noise keeps unit
    variance after filtering; the absolute gain therefore differs from one,
    but the shape relative to DC matches the target.  A light taper on the
    outer quarter of the taps suppresses truncation ripple.
    """
    fs = scfg.sample_rate_hz
    if not 0.0 < f_greenwood_hz < fs / 2.0:
        raise ConfigError(f"Greenwood frequency {f_greenwood_hz} Hz outside (0, Nyquist)")
    n = scfg.n_taps
    nfft = 1 << 17
    f = np.fft.rfftfreq(nfft, 1.0 / fs)
    mag = (1.0 + (f / f_greenwood_hz) ** (2 * scfg.butterworth_order)) ** -0.5
    delay = (n - 1) / (2.0 * fs)
    h = np.fft.irfft(mag * np.exp(-2j * np.pi * f * delay), nfft)[:n]
    h *= tukey(n, 0.2)
    return h / np.sqrt(np.dot(h, h))


def lognormal_transform(v: np.ndarray, scint_index: float) -> np.ndarray:
    """Map unit-variance Gaussian samples to unit-mean lognormal transmittance."""
    if scint_index < 0.0:
        raise ConfigError("scintillation index must be non-negative")
    big_sigma2 = np.log1p(scint_index)
    return np.exp(v * np.sqrt(big_sigma2) - big_sigma2 / 2.0)


def synthesize(states: list[TurbulenceState], scfg: ScintConfig, seed: int) -> ScintSeries:
    """Generate the full-rate scintillation series for a pass.

    One second of output per turbulence state.  The FIR is regenerated every
    ``update_interval_s`` seconds from that window's Greenwood frequency; the
    white-noise history runs continuously across window boundaries so the
    output has no seams.  Fully deterministic given the seed.
    """
    if not states:
        raise ConfigError("no turbulence states given")
    fs = scfg.sample_rate_hz
    n_taps = scfg.n_taps
    n_sec = len(states)
    total = n_sec * fs

    rng = np.random.Generator(np.random.Philox(seed))
    # extra history so the first output sample already sees a full filter span
    noise = rng.standard_normal(total + n_taps - 1)

    v = np.empty(total)
    taps = None
    for w in range(n_sec):
        if w % scfg.update_interval_s == 0:
            taps = filter_taps(states[w].f_greenwood_hz, scfg)
        seg = noise[w * fs: (w + 1) * fs + n_taps - 1]
        v[w * fs: (w + 1) * fs] = fftconvolve(seg, taps, mode="valid")

    eta = np.empty(total)
    for w, st in enumerate(states):
        sl = slice(w * fs, (w + 1) * fs)
        eta[sl] = lognormal_transform(v[sl], st.scint_index)
    return ScintSeries(samples=eta, sample_rate_hz=fs)


def combine(eta_static: np.ndarray, series: ScintSeries) -> np.ndarray:
    """Per-slot transmittance: static budget held per second times scintillation."""
    fs = series.sample_rate_hz
    if len(series.samples) != len(eta_static) * fs:
        raise ConfigError(
            f"length mismatch: {len(series.samples)} scintillation samples vs "
            f"{len(eta_static)} static seconds at {fs} Hz")
    return np.repeat(np.asarray(eta_static, dtype=float), fs) * series.samples


def write_trace(path, series: ScintSeries) -> None:
    """Binary trace: 16-byte header then little-endian float32 samples."""
    count = len(series.samples)
    if count >= 1 << 32:
        raise ConfigError("trace too long for the u32 count field")
    with open(path, "wb") as fh:
        fh.write(TRACE_MAGIC)
        fh.write(struct.pack("<III", TRACE_VERSION, series.sample_rate_hz, count))
        fh.write(series.samples.astype("<f4").tobytes())


def read_trace(path) -> ScintSeries:
    with open(path, "rb") as fh:
        header = fh.read(16)
        if len(header) != 16 or header[:4] != TRACE_MAGIC:
            raise ConfigError(f"{path}: not a scintillation trace")
        version, fs, count = struct.unpack("<III", header[4:])
        if version != TRACE_VERSION:
            raise ConfigError(f"{path}: unsupported trace version {version}")
        data = np.frombuffer(fh.read(4 * count), dtype="<f4")
        if len(data) != count:
            raise ConfigError(f"{path}: truncated trace")
    return ScintSeries(samples=data.astype(float), sample_rate_hz=fs)


def write_decimated_csv(path, series: ScintSeries, stride: int | None = None) -> None:
    """Thin CSV view of the trace for plotting."""
    if stride is None:
        stride = max(1, series.sample_rate_hz // 40)
    samples = series.samples[::stride]
    fs = series.sample_rate_hz
    with open(path, "w") as fh:
        fh.write("t_s,eta_scint\n")
        for i, val in enumerate(samples):
            fh.write(f"{i * stride / fs:.9g},{val:.9g}\n")
