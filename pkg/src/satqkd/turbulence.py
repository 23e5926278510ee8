"""Optical turbulence along the downlink path.

Refractive-index structure profile, Rytov variance, aperture averaging and the
aperture-averaged scintillation index, plus the Greenwood frequency that sets
the bandwidth of the fading process.  Altitude integrals are evaluated once
per profile and reused for every elevation sample.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import quad

from .passlink import ConfigError, LinkSample, PassConfig


@dataclass(frozen=True)
class TurbulenceProfile:
    """Hufnagel-Valley style structure profile with a ground-layer term.

    ``wind_speed_mps`` is the upper-air RMS wind of the classic model,
    ``ground_cn2`` the surface structure constant, and ``clear_air_factor``
    scales the ground term amplitude.  The ground term decays on a 100 m
    scale height above the station altitude.
    """

    wind_speed_mps: float = 21.0
    ground_cn2: float = 1.7e-14
    clear_air_factor: float = 0.93
    ogs_altitude_m: float = 602.0

    def __post_init__(self) -> None:
        if self.wind_speed_mps < 0 or self.ground_cn2 < 0:
            raise ConfigError("profile parameters must be non-negative")


@dataclass
class TurbulenceState:
    """Per-second turbulence summary feeding the scintillation synthesis."""

    t_s: int
    sigma_ry2: float
    l_eff_m: float
    d_aa: float
    f_aa: float
    scint_index: float
    f_greenwood_hz: float


def cn2(h_m, profile: TurbulenceProfile):
    """Structure constant Cn^2(h) in m^(-2/3); h is altitude above sea level."""
    h = np.asarray(h_m, dtype=float)
    if np.any(h < profile.ogs_altitude_m):
        raise ConfigError("altitude below the ground station")
    w = profile.wind_speed_mps
    t1 = 0.00594 * (w / 27.0) ** 2 * (h * 1e-5) ** 10 * np.exp(-h / 1000.0)
    t2 = 2.7e-16 * np.exp(-h / 1500.0)
    t3 = profile.ground_cn2 * profile.clear_air_factor**2 \
        * np.exp(-(h - profile.ogs_altitude_m) / 100.0)
    out = t1 + t2 + t3
    return float(out) if np.isscalar(h_m) else out


@lru_cache(maxsize=32)
def _altitude_moments(profile: TurbulenceProfile, h_top: float) -> tuple[float, float, float, float]:
    """Zenith-path integrals of Cn^2 weighted by the four kernels in use.

    Returns (path-weighted 5/6 moment above the station, absolute h^2 moment,
    absolute h^(5/6) moment, normalised 5/3 wind-weight moment).
    """
    h0 = profile.ogs_altitude_m
    span = h_top - h0
    inner = [p for p in (h0 + 50.0, h0 + 300.0, 2e3, 6e3, 2e4, 6e4) if h0 < p < h_top]

    def integrate(weight):
        val, _ = quad(lambda h: cn2(h, profile) * weight(h), h0, h_top,
                      points=inner, epsrel=1e-8, epsabs=1e-30, limit=400)
        return val

    i_ry = integrate(lambda h: (h - h0) ** (5.0 / 6.0))
    i_h2 = integrate(lambda h: h * h)
    i_h56 = integrate(lambda h: h ** (5.0 / 6.0))
    i_wind = integrate(lambda h: ((h - h0) / span) ** (5.0 / 3.0))
    return i_ry, i_h2, i_h56, i_wind


def _wavenumber(wavelength_m: float) -> float:
    return 2.0 * math.pi / wavelength_m


def _check_zenith(zenith_deg: float) -> float:
    if not 0.0 <= zenith_deg < 90.0:
        raise ConfigError(f"zenith angle {zenith_deg} deg outside [0, 90)")
    return math.cos(math.radians(zenith_deg))


def rytov_variance(zenith_deg: float, profile: TurbulenceProfile, cfg: PassConfig) -> float:
    """Plane-wave Rytov variance for the downlink at the given zenith angle."""
    cosz = _check_zenith(zenith_deg)
    i_ry = _altitude_moments(profile, cfg.sat_altitude_m)[0]
    k = _wavenumber(cfg.wavelength_m)
    return 2.25 * k ** (7.0 / 6.0) / cosz ** (11.0 / 6.0) * i_ry


def effective_length(zenith_deg: float, profile: TurbulenceProfile, cfg: PassConfig) -> float:
    """Turbulence-weighted effective path length used for aperture averaging."""
    cosz = _check_zenith(zenith_deg)
    _, i_h2, i_h56, _ = _altitude_moments(profile, cfg.sat_altitude_m)
    return (18.0 * i_h2 / (11.0 * i_h56)) ** (6.0 / 7.0) / cosz


def aperture_parameter(zenith_deg: float, profile: TurbulenceProfile, cfg: PassConfig) -> float:
    """Normalised aperture diameter d = D * sqrt(k / 4 L_eff)."""
    l_eff = effective_length(zenith_deg, profile, cfg)
    k = _wavenumber(cfg.wavelength_m)
    return cfg.rx_diameter_m * math.sqrt(k / (4.0 * l_eff))


def aperture_averaging_factor(d_param: float) -> float:
    """Fraction of point-receiver scintillation surviving a finite aperture."""
    if d_param < 0.0:
        raise ConfigError("aperture parameter must be non-negative")
    return (1.0 + 1.062 * d_param**2) ** (-7.0 / 6.0)


def scintillation_index(rytov_var: float, d_param: float) -> float:
    """Aperture-averaged power scintillation index.

    Extended Rytov form valid from weak through strong fluctuations; reduces
    to f_aa * sigma_Ry^2 in the weak limit.
    """
    if rytov_var < 0.0:
        raise ConfigError("Rytov variance must be non-negative")
    if rytov_var == 0.0:
        return 0.0
    s2 = rytov_var
    d2 = d_param * d_param
    s65 = s2 ** (6.0 / 5.0)
    t1 = 0.49 * s2 / (1.0 + 0.65 * d2 + 1.11 * s65) ** (7.0 / 6.0)
    t2 = 0.51 * s2 * (1.0 + 0.69 * s65) ** (-5.0 / 6.0) / (1.0 + 0.9 * d2 + 0.62 * d2 * s65)
    return math.exp(t1 + t2) - 1.0


def greenwood_frequency(zenith_deg: float, v_perp_mps: float,
                        profile: TurbulenceProfile, cfg: PassConfig) -> float:
    """Greenwood frequency for a slew-dominated wind profile.

    The transverse wind is taken to grow linearly from zero at the station to
    the satellite's cross-line-of-sight speed at orbit altitude, which makes
    the result proportional to ``v_perp_mps``.
    """
    cosz = _check_zenith(zenith_deg)
    if v_perp_mps < 0.0:
        raise ConfigError("transverse speed must be non-negative")
    i_wind = _altitude_moments(profile, cfg.sat_altitude_m)[3]
    lam = cfg.wavelength_m
    return 2.31 * lam ** (-6.0 / 5.0) * (i_wind / cosz) ** (3.0 / 5.0) * v_perp_mps


def pass_turbulence(samples: list[LinkSample], profile: TurbulenceProfile,
                    cfg: PassConfig) -> list[TurbulenceState]:
    """Evaluate the per-second turbulence state along a pass profile."""
    states = []
    for s in samples:
        s_ry2 = rytov_variance(s.zenith_deg, profile, cfg)
        d_aa = aperture_parameter(s.zenith_deg, profile, cfg)
        states.append(TurbulenceState(
            t_s=s.t_s,
            sigma_ry2=s_ry2,
            l_eff_m=effective_length(s.zenith_deg, profile, cfg),
            d_aa=d_aa,
            f_aa=aperture_averaging_factor(d_aa),
            scint_index=scintillation_index(s_ry2, d_aa),
            f_greenwood_hz=greenwood_frequency(s.zenith_deg, s.v_perp_mps, profile, cfg),
        ))
    return states


TURB_CSV_HEADER = "t_s,sigma_ry2,l_eff_m,d_aa,f_aa,psi,f_greenwood_hz"


def write_turbulence_csv(path, states: list[TurbulenceState]) -> None:
    with open(path, "w") as fh:
        fh.write(TURB_CSV_HEADER + "\n")
        for st in states:
            fh.write(f"{st.t_s},{st.sigma_ry2:.9g},{st.l_eff_m:.9g},{st.d_aa:.9g},"
                     f"{st.f_aa:.9g},{st.scint_index:.9g},{st.f_greenwood_hz:.9g}\n")
