"""Run configuration: defaults, flat dotted-key files, scale handling.

Config files are plain text, one ``section.field = value`` per line with
``#`` comments.  Unknown keys are rejected by name so typos surface at
parse time instead of silently running on defaults.
"""
from __future__ import annotations

import dataclasses
import hashlib
import typing
from dataclasses import dataclass, replace

from .detection import DetectorConfig
from .keyrate import SecurityParams
from .passlink import AttenuationProfile, ConfigError, PassConfig
from .scintseries import ScintConfig
from .turbulence import TurbulenceProfile

BASE_SAMPLE_RATE_HZ = 40000   # scale multiplies this and both detector rates


@dataclass(frozen=True)
class ReconcileParams:
    n_block: int = 460800
    f_margin: float = 1.05
    f_cap: float = 1.30
    max_iters: int = 150
    patience: int = 40
    noise_sigma: float = 0.125

    def __post_init__(self) -> None:
        if self.n_block <= 0 or self.n_block % 180:
            raise ConfigError("reconcile.n_block must be a positive multiple of 180")
        if not 1.0 <= self.f_margin <= self.f_cap:
            raise ConfigError("need 1 <= reconcile.f_margin <= reconcile.f_cap")
        if self.max_iters <= 0 or self.patience < 0:
            raise ConfigError("reconcile iteration limits must be positive")
        if self.noise_sigma < 0.0:
            raise ConfigError("reconcile.noise_sigma must be non-negative")


@dataclass(frozen=True)
class RunConfig:
    link: PassConfig = PassConfig()
    attenuation: AttenuationProfile = AttenuationProfile()
    turbulence: TurbulenceProfile = TurbulenceProfile()
    scint: ScintConfig = ScintConfig()
    detector: DetectorConfig = DetectorConfig()
    security: SecurityParams = SecurityParams()
    reconcile: ReconcileParams = ReconcileParams()
    seed: int = 20260822
    scale: float = 1.0
    out_dir: str = "runs/pass"
    # optional per-stage seed overrides; None derives from the master seed
    seed_scint: int | None = None
    seed_clicks: int | None = None
    seed_meta: int | None = None
    seed_reconcile: int | None = None

    def __post_init__(self) -> None:
        if not 0.0 < self.scale <= 1.0:
            raise ConfigError("run.scale must lie in (0, 1]")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("run.seed must fit in an unsigned 64-bit integer")
        rate = self.scint.sample_rate_hz * self.scale
        if abs(rate - round(rate)) > 1e-9 or round(rate) < 1:
            raise ConfigError("run.scale must keep scint.sample_rate_hz an integer")

    @property
    def stage_seeds(self) -> dict[str, int]:
        s = self.seed
        return {
            "scint": self.seed_scint if self.seed_scint is not None else s,
            "clicks": self.seed_clicks if self.seed_clicks is not None else s + 1,
            "meta": self.seed_meta if self.seed_meta is not None else s + 2,
            "reconcile": self.seed_reconcile if self.seed_reconcile is not None else s + 3,
        }

    # scaled views: pulse and window rates shrink together so the
    # windows-per-slot ratio (and hence the QBER model) is unchanged
    def effective_link(self) -> PassConfig:
        return replace(self.link, pulse_rate_hz=self.link.pulse_rate_hz * self.scale)

    def effective_scint(self) -> ScintConfig:
        return replace(self.scint,
                       sample_rate_hz=round(self.scint.sample_rate_hz * self.scale))

    def effective_detector(self) -> DetectorConfig:
        return replace(self.detector,
                       pulse_rate_hz=self.detector.pulse_rate_hz * self.scale,
                       window_rate_hz=self.detector.window_rate_hz * self.scale)


_SECTIONS = {
    "link": (PassConfig, "link"),
    "atten": (AttenuationProfile, "attenuation"),
    "turb": (TurbulenceProfile, "turbulence"),
    "scint": (ScintConfig, "scint"),
    "detector": (DetectorConfig, "detector"),
    "security": (SecurityParams, "security"),
    "reconcile": (ReconcileParams, "reconcile"),
}

_RUN_FIELDS = {"seed": int, "scale": float, "out_dir": str,
               "seed_scint": int, "seed_clicks": int, "seed_meta": int,
               "seed_reconcile": int}


def parse_config_text(text: str) -> dict[str, str]:
    pairs: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or not value:
            raise ConfigError(f"line {lineno}: empty key or value")
        if key in pairs:
            raise ConfigError(f"duplicate key {key}")
        pairs[key] = value
    return pairs


def _coerce(key: str, value: str, target: type):
    try:
        if target is int:
            return int(value)
        if target is float:
            return float(value)
        if target is bool:
            if value.lower() in ("true", "1"):
                return True
            if value.lower() in ("false", "0"):
                return False
            raise ValueError(value)
        return value
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {value!r}") from exc


def build_run_config(pairs: dict[str, str]) -> RunConfig:
    """Overlay dotted-key pairs on the defaults; reject unknown keys by name."""
    section_kwargs: dict[str, dict] = {name: {} for name in _SECTIONS}
    run_kwargs: dict = {}
    hints: dict[str, dict[str, type]] = {}
    for key, value in pairs.items():
        if "." not in key:
            raise ConfigError(f"unknown config key {key}")
        section, field = key.split(".", 1)
        if section == "run":
            if field not in _RUN_FIELDS:
                raise ConfigError(f"unknown config key {key}")
            run_kwargs[field] = _coerce(key, value, _RUN_FIELDS[field])
            continue
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config key {key}")
        cls, _ = _SECTIONS[section]
        if section not in hints:
            hints[section] = typing.get_type_hints(cls)
        names = {f.name for f in dataclasses.fields(cls)}
        if field not in names:
            raise ConfigError(f"unknown config key {key}")
        section_kwargs[section][field] = _coerce(key, value, hints[section][field])

    kwargs = dict(run_kwargs)
    for section, (cls, attr) in _SECTIONS.items():
        if section_kwargs[section]:
            kwargs[attr] = cls(**section_kwargs[section])
    return RunConfig(**kwargs)


def load_config(path: str) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return build_run_config(parse_config_text(fh.read()))


def render_config(rc: RunConfig) -> str:
    """Canonical full rendering (defaults included) used for hashing."""
    lines = []
    for section, (cls, attr) in sorted(_SECTIONS.items()):
        obj = getattr(rc, attr)
        for f in dataclasses.fields(cls):
            lines.append(f"{section}.{f.name} = {getattr(obj, f.name)!r}")
    for field in sorted(_RUN_FIELDS):
        lines.append(f"run.{field} = {getattr(rc, field)!r}")
    return "\n".join(lines) + "\n"


def config_hash(rc: RunConfig) -> str:
    return hashlib.sha256(render_config(rc).encode()).hexdigest()
