"""Pass geometry and static link budget for a LEO-to-ground optical downlink.

The satellite is modelled on a circular orbit; the ground station sits at a
fixed geocentric position (earth rotation during a single pass is neglected).
All loss terms are returned in dB and combined into a per-second static
transmittance profile.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import quad

GM_EARTH = 3.986004418e14  # m^3/s^2


class ConfigError(ValueError):
    """Raised when a configuration fails validation."""


def db(linear: float) -> float:
    """Convert linear transmittance to dB."""
    return 10.0 * math.log10(linear)


def from_db(value_db: float) -> float:
    """Convert dB to linear transmittance."""
    return 10.0 ** (value_db / 10.0)


@dataclass(frozen=True)
class PassConfig:
    """Geometry and optics for one ground station overflight."""

    wavelength_m: float = 1550e-9
    pulse_rate_hz: float = 1e9
    sat_altitude_m: float = 567e3
    ogs_altitude_m: float = 602.0
    divergence_rad: float = 5e-6
    rx_diameter_m: float = 0.8
    rx_obstruction_m: float = 0.3
    min_elevation_deg: float = 20.0
    max_elevation_deg: float = 80.0
    pass_duration_s: int = 330
    earth_radius_m: float = 6371e3

    def __post_init__(self) -> None:
        if not 0.0 < self.min_elevation_deg < self.max_elevation_deg <= 90.0:
            raise ConfigError("need 0 < min_elevation < max_elevation <= 90 deg")
        if self.sat_altitude_m <= self.ogs_altitude_m:
            raise ConfigError("satellite must be above the ground station")
        if not 0.0 <= self.rx_obstruction_m < self.rx_diameter_m:
            raise ConfigError("receiver obstruction must be smaller than the aperture")
        if self.divergence_rad <= 0.0:
            raise ConfigError("divergence must be positive")
        if self.wavelength_m <= 0.0 or self.pulse_rate_hz <= 0.0:
            raise ConfigError("wavelength and pulse rate must be positive")
        if self.pass_duration_s <= 0:
            raise ConfigError("pass duration must be positive")

    @property
    def orbit_radius_m(self) -> float:
        return self.earth_radius_m + self.sat_altitude_m

    @property
    def ogs_radius_m(self) -> float:
        return self.earth_radius_m + self.ogs_altitude_m


@dataclass(frozen=True)
class AttenuationProfile:
    """Exponential clear-air absorption profile, alpha(h) = a0 * exp(-h/h_scale).

    ``alpha0_db_per_km`` is the sea-level extinction in dB/km.  Defaults give a
    zenith loss of about -0.48 dB at 1550 nm, typical for clear sky.
    """

    alpha0_db_per_km: float = 0.08
    scale_height_m: float = 6600.0

    def __post_init__(self) -> None:
        if self.alpha0_db_per_km < 0.0 or self.scale_height_m <= 0.0:
            raise ConfigError("attenuation profile parameters must be non-negative")

    def alpha_db_per_m(self, h: float) -> float:
        return self.alpha0_db_per_km * 1e-3 * math.exp(-h / self.scale_height_m)


@dataclass
class LinkSample:
    """One per-second sample of the pass geometry and loss budget."""

    t_s: int
    elevation_deg: float
    zenith_deg: float
    range_m: float
    v_perp_mps: float
    eta_coll_db: float = 0.0
    eta_point_db: float = 0.0
    eta_atm_db: float = 0.0
    eta_rx_db: float = 0.0
    eta_det_db: float = 0.0

    @property
    def eta_static_db(self) -> float:
        return (self.eta_coll_db + self.eta_point_db + self.eta_atm_db
                + self.eta_rx_db + self.eta_det_db)


def slant_range(elevation_deg: float, cfg: PassConfig) -> float:
    """Line-of-sight distance from ground station to satellite at a given elevation."""
    if not 0.0 <= elevation_deg <= 90.0:
        raise ConfigError(f"elevation {elevation_deg} deg outside [0, 90]")
    r = cfg.orbit_radius_m
    rg = cfg.ogs_radius_m
    theta = math.radians(elevation_deg)
    return math.sqrt(r * r - (rg * math.cos(theta)) ** 2) - rg * math.sin(theta)


def _central_angle(elevation_deg: float, cfg: PassConfig) -> float:
    # geocentric angle between OGS and satellite at the given elevation
    L = slant_range(elevation_deg, cfg)
    theta = math.radians(elevation_deg)
    return math.atan2(L * math.cos(theta), cfg.ogs_radius_m + L * math.sin(theta))


def pass_profile(cfg: PassConfig) -> list[LinkSample]:
    """Per-second geometry of a symmetric overflight peaking at max_elevation.

    The orbital ground track is offset sideways just enough that the closest
    approach reaches ``max_elevation_deg``.  Samples are evaluated at window
    centres, one per second, centred on the peak.
    """
    r = cfg.orbit_radius_m
    rg = cfg.ogs_radius_m
    omega = math.sqrt(GM_EARTH / r**3)

    beta = _central_angle(cfg.max_elevation_deg, cfg)
    psi_edge = _central_angle(cfg.min_elevation_deg, cfg)
    # orbit phase at which elevation falls to the minimum
    cos_ratio = math.cos(psi_edge) / math.cos(beta)
    if cos_ratio > 1.0:
        raise ConfigError("geometry cannot reach the requested peak elevation")
    t_edge = math.acos(cos_ratio) / omega
    if cfg.pass_duration_s / 2.0 > t_edge + 15.0:
        raise ConfigError(
            f"pass duration {cfg.pass_duration_s} s exceeds the visibility window "
            f"above {cfg.min_elevation_deg} deg ({2.0 * t_edge:.1f} s)")

    n = cfg.pass_duration_s
    t_rel = np.arange(n) + 0.5 - n / 2.0  # window centres, symmetric about the peak
    phi = omega * t_rel

    sat = np.stack([r * np.cos(phi), r * np.sin(phi), np.zeros(n)], axis=1)
    vel = np.stack([-r * omega * np.sin(phi), r * omega * np.cos(phi), np.zeros(n)], axis=1)
    ogs = rg * np.array([math.cos(beta), 0.0, math.sin(beta)])

    los = sat - ogs
    dist = np.linalg.norm(los, axis=1)
    up = ogs / rg
    elev = np.degrees(np.arcsin(los @ up / dist))
    along = np.einsum("ij,ij->i", vel, los / dist[:, None])
    v_perp = np.sqrt(np.maximum(np.einsum("ij,ij->i", vel, vel) - along**2, 0.0))

    return [
        LinkSample(t_s=int(t), elevation_deg=float(elev[t]), zenith_deg=90.0 - float(elev[t]),
                   range_m=float(dist[t]), v_perp_mps=float(v_perp[t]))
        for t in range(n)
    ]


def collection_efficiency_db(range_m: float, cfg: PassConfig) -> float:
    """Diffraction-limited collection efficiency, Friis form, in dB.

    Transmit gain 8/theta_div^2, receive gain (pi^2/lambda^2)(D_rx^2 - D_obs^2),
    free-space factor (lambda / 4 pi L)^2.
    """
    if range_m <= 0.0:
        raise ConfigError("range must be positive")
    area_term = cfg.rx_diameter_m**2 - cfg.rx_obstruction_m**2
    if area_term <= 0.0:
        raise ConfigError("receiver aperture fully obstructed")
    g_tx = 8.0 / cfg.divergence_rad**2
    g_rx = math.pi**2 / cfg.wavelength_m**2 * area_term
    free_space = (cfg.wavelength_m / (4.0 * math.pi * range_m)) ** 2
    return db(g_tx * g_rx * free_space)


def pointing_loss_db(divergence_rad: float, jitter_rad: float, bias_rad: float = 0.0) -> float:
    """Mean pointing-error loss for Gaussian jitter plus a constant bias, in dB."""
    if divergence_rad <= 0.0:
        raise ConfigError("divergence must be positive")
    if jitter_rad < 0.0:
        raise ConfigError("jitter must be non-negative")
    denom = divergence_rad**2 + 4.0 * jitter_rad**2
    # stay in the log domain so extreme bias cannot underflow to -inf
    bias_db = 10.0 * math.log10(math.e) * 2.0 * bias_rad**2 / denom
    return 10.0 * math.log10(divergence_rad**2 / denom) - bias_db


def atmospheric_loss_db(zenith_deg: float, cfg: PassConfig,
                        profile: AttenuationProfile | None = None) -> float:
    """Absorption loss along the slant path in dB (negative)."""
    if not 0.0 <= zenith_deg < 90.0:
        raise ConfigError(f"zenith angle {zenith_deg} deg outside [0, 90)")
    profile = profile if profile is not None else AttenuationProfile()
    integral, _ = quad(profile.alpha_db_per_m, cfg.ogs_altitude_m, cfg.sat_altitude_m,
                       epsrel=1e-6, epsabs=1e-12, limit=200)
    return -integral / math.cos(math.radians(zenith_deg))


def static_budget(samples: list[LinkSample], cfg: PassConfig,
                  profile: AttenuationProfile | None = None,
                  jitter_rad: float = 2.5e-6, bias_rad: float = 0.0,
                  eta_rx_db: float = -1.5, eta_det_db: float = -7.0) -> np.ndarray:
    """Fill per-term losses on each sample and return the linear static transmittance.

    The returned array has one entry per second; scintillation is applied on
    top of it downstream.
    """
    point = pointing_loss_db(cfg.divergence_rad, jitter_rad, bias_rad)
    eta = np.empty(len(samples))
    for i, s in enumerate(samples):
        s.eta_coll_db = collection_efficiency_db(s.range_m, cfg)
        s.eta_point_db = point
        s.eta_atm_db = atmospheric_loss_db(s.zenith_deg, cfg, profile)
        s.eta_rx_db = eta_rx_db
        s.eta_det_db = eta_det_db
        eta[i] = from_db(s.eta_static_db)
    return eta


PASS_CSV_HEADER = "t_s,elev_deg,range_m,eta_coll_db,eta_point_db,eta_atm_db,eta_static_db,v_perp_mps"


def write_pass_csv(path, samples: list[LinkSample]) -> None:
    with open(path, "w") as fh:
        fh.write(PASS_CSV_HEADER + "\n")
        for s in samples:
            fh.write(f"{s.t_s},{s.elevation_deg:.9g},{s.range_m:.9g},{s.eta_coll_db:.9g},"
                     f"{s.eta_point_db:.9g},{s.eta_atm_db:.9g},{s.eta_static_db:.9g},"
                     f"{s.v_perp_mps:.9g}\n")
