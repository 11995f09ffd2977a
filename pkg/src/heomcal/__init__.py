"""Calibration-loop simulator with bath-structure diagnostics.

Runs a Rabi -> {Ramsey || T1} protocol graph against unitary, Lindblad,
and hierarchical (HEOM) backends and reports backend-to-backend residuals
as machine-readable artifacts.
"""

__version__ = "0.1.0"

from .platform import BathSpec, DriveSpec, PlatformConfig, load_platform
from .protocols import HeomOptions, default_heom_options

__all__ = [
    "BathSpec",
    "DriveSpec",
    "PlatformConfig",
    "load_platform",
    "HeomOptions",
    "default_heom_options",
    "__version__",
]
