"""Frozen platform parameterization shared by every simulation backend.

All quantities are stored in a single internal unit system: time in ns,
angular frequency in rad/ns, temperature in K.  Conversions from the
human-facing config units (GHz, MHz, mK) happen exactly once, inside
:func:`load_platform`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import yaml

TWO_PI = 2.0 * math.pi

# GHz -> rad/ns: 1 GHz = 1 cycle/ns = 2*pi rad/ns
GHZ_TO_RAD_PER_NS = TWO_PI
MHZ_TO_RAD_PER_NS = TWO_PI * 1e-3


class ConfigError(ValueError):
    """Raised for parse failures or invariant violations in a platform file."""


@dataclass(frozen=True)
class BathSpec:
    """1/f bath parameterization: S(w) = 2*pi*A0/|w| with soft cutoffs."""

    amplitude_a0: float  # rad/ns
    low_cutoff: float  # rad/ns
    high_cutoff: float  # rad/ns
    temperature: float  # K
    coupling_diag: tuple[int, ...]

    def __post_init__(self):
        if not (0.0 < self.low_cutoff < self.high_cutoff):
            raise ConfigError(
                "bath cutoffs must satisfy 0 < low_cutoff < high_cutoff, got "
                f"low_cutoff={self.low_cutoff}, high_cutoff={self.high_cutoff}"
            )
        if self.amplitude_a0 < 0.0:
            raise ConfigError(f"bath.amplitude_a0 must be >= 0, got {self.amplitude_a0}")
        if self.temperature <= 0.0:
            raise ConfigError(f"bath.temperature must be > 0, got {self.temperature}")


@dataclass(frozen=True)
class DriveSpec:
    """Pulse realization: fixed-duration envelope pulses, amplitude-scaled.

    ``drive_scale`` maps the normalized sweep amplitude a in [0, 1] to the
    peak Rabi rate Omega = drive_scale * a (rad/ns).  The raised-cosine
    (hann) default keeps leakage out of the computational subspace below
    1e-3 at the pi amplitude; square is retained for analytic cross-checks.
    """

    pulse_duration: float = 10.5  # ns
    drive_scale: float = 0.97190  # rad/ns per unit normalized amplitude
    shape: str = "hann"
    # AC-Stark compensation: drive frequency offset stark_comp * Omega_pk^2
    # (rad/ns) applied while the pulse is on, calibrated against the
    # third-level repulsion of |1>.  Zero disables compensation.
    stark_comp: float = 0.18246

    def __post_init__(self):
        if self.pulse_duration <= 0.0:
            raise ConfigError(f"drive.pulse_duration must be > 0, got {self.pulse_duration}")
        if self.drive_scale <= 0.0:
            raise ConfigError(f"drive.drive_scale must be > 0, got {self.drive_scale}")
        if self.shape not in ("square", "hann"):
            raise ConfigError(f"drive.shape must be 'square' or 'hann', got {self.shape!r}")


@dataclass(frozen=True)
class PlatformConfig:
    """Validated device + bath parameterization, immutable after load."""

    qubit_freq: float  # rad/ns
    anharmonicity: float  # rad/ns, negative
    t1_char: float  # ns
    t2_char: float  # ns
    levels: int
    bath: BathSpec
    drive: DriveSpec = field(default_factory=DriveSpec)

    def __post_init__(self):
        if self.qubit_freq <= 0.0:
            raise ConfigError(f"platform.qubit_freq must be > 0, got {self.qubit_freq}")
        if self.anharmonicity >= 0.0:
            raise ConfigError(
                f"platform.anharmonicity must be < 0, got {self.anharmonicity}"
            )
        if self.levels < 2:
            raise ConfigError(f"platform.levels must be >= 2, got {self.levels}")
        if self.t1_char <= 0.0 or self.t2_char <= 0.0:
            raise ConfigError(
                f"platform T1/T2 must be > 0, got t1={self.t1_char}, t2={self.t2_char}"
            )
        if self.t2_char > 2.0 * self.t1_char:
            raise ConfigError(
                "platform.t2_char must satisfy t2 <= 2*t1, got "
                f"t2={self.t2_char}, 2*t1={2.0 * self.t1_char}"
            )
        if len(self.bath.coupling_diag) != self.levels:
            raise ConfigError(
                "bath.coupling_diag length must equal platform.levels, got "
                f"{len(self.bath.coupling_diag)} != {self.levels}"
            )


def _section(doc: dict, name: str) -> dict:
    if name not in doc or not isinstance(doc[name], dict):
        raise ConfigError(f"config is missing required section '{name}'")
    return doc[name]


def _get(sec: dict, secname: str, key: str, default=None):
    if key not in sec:
        if default is not None:
            return default
        raise ConfigError(f"config section '{secname}' is missing key '{key}'")
    return sec[key]


def load_platform(path) -> PlatformConfig:
    """Load and validate a platform config file.

    The file is YAML with named sections; frequencies are given in the
    units embedded in the key names (GHz/MHz) and converted here, once,
    into the internal rad/ns system.
    """
    with open(path, "r") as fh:
        try:
            doc = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"could not parse config file {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config file {path} does not contain a mapping")
    return platform_from_dict(doc)


def platform_from_dict(doc: dict) -> PlatformConfig:
    """Build a PlatformConfig from an already-parsed config mapping."""
    plat = _section(doc, "platform")
    bath_sec = _section(doc, "bath")

    bath = BathSpec(
        amplitude_a0=float(_get(bath_sec, "bath", "amplitude_a0_ghz")) * GHZ_TO_RAD_PER_NS,
        low_cutoff=float(_get(bath_sec, "bath", "low_cutoff_mhz")) * MHZ_TO_RAD_PER_NS,
        high_cutoff=float(_get(bath_sec, "bath", "high_cutoff_ghz")) * GHZ_TO_RAD_PER_NS,
        temperature=float(_get(bath_sec, "bath", "temperature_mk")) * 1e-3,
        coupling_diag=tuple(int(q) for q in _get(bath_sec, "bath", "coupling_diag")),
    )
    drive_sec = doc.get("drive") or {}
    drive = DriveSpec(
        pulse_duration=float(drive_sec.get("pulse_duration_ns", 10.5)),
        drive_scale=float(drive_sec.get("drive_scale", 0.97190)),
        shape=str(drive_sec.get("shape", "hann")),
        stark_comp=float(drive_sec.get("stark_comp", 0.18246)),
    )
    return PlatformConfig(
        qubit_freq=float(_get(plat, "platform", "qubit_freq_ghz")) * GHZ_TO_RAD_PER_NS,
        anharmonicity=float(_get(plat, "platform", "anharmonicity_ghz")) * GHZ_TO_RAD_PER_NS,
        t1_char=float(_get(plat, "platform", "t1_ns")),
        t2_char=float(_get(plat, "platform", "t2_ns")),
        levels=int(_get(plat, "platform", "levels")),
        bath=bath,
        drive=drive,
    )


def platform_to_dict(cfg: PlatformConfig) -> dict:
    """Serialize back to the config-file unit system (inverse of load)."""
    return {
        "platform": {
            "qubit_freq_ghz": cfg.qubit_freq / GHZ_TO_RAD_PER_NS,
            "anharmonicity_ghz": cfg.anharmonicity / GHZ_TO_RAD_PER_NS,
            "t1_ns": cfg.t1_char,
            "t2_ns": cfg.t2_char,
            "levels": cfg.levels,
        },
        "bath": {
            "amplitude_a0_ghz": cfg.bath.amplitude_a0 / GHZ_TO_RAD_PER_NS,
            "low_cutoff_mhz": cfg.bath.low_cutoff / MHZ_TO_RAD_PER_NS,
            "high_cutoff_ghz": cfg.bath.high_cutoff / GHZ_TO_RAD_PER_NS,
            "temperature_mk": cfg.bath.temperature * 1e3,
            "coupling_diag": list(cfg.bath.coupling_diag),
        },
        "drive": {
            "pulse_duration_ns": cfg.drive.pulse_duration,
            "drive_scale": cfg.drive.drive_scale,
            "shape": cfg.drive.shape,
            "stark_comp": cfg.drive.stark_comp,
        },
    }


def load_sections(path) -> dict:
    """Return the raw parsed config mapping (all sections) for option lookup."""
    with open(path, "r") as fh:
        try:
            doc = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"could not parse config file {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config file {path} does not contain a mapping")
    return doc


def derive_lindblad_rates(cfg: PlatformConfig) -> tuple[float, float]:
    """(gamma1, gamma_phi) in 1/ns from the characterized T1/T2.

    gamma_phi = 1/T2 - 1/(2*T1) is guaranteed >= 0 by the t2 <= 2*t1
    config invariant.
    """
    gamma1 = 1.0 / cfg.t1_char
    gamma_phi = 1.0 / cfg.t2_char - 0.5 * gamma1
    return gamma1, gamma_phi
