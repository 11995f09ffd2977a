import pathlib

import pytest

from heomcal.platform import load_platform, load_sections
from heomcal.protocols import default_heom_options

CONFIG = pathlib.Path(__file__).resolve().parents[1] / (
    "src/heomcal/configs/tier1.yaml"
)


@pytest.fixture(scope="session")
def cfg():
    return load_platform(CONFIG)


@pytest.fixture(scope="session")
def sections():
    return load_sections(CONFIG)


@pytest.fixture(scope="session")
def config_path():
    return CONFIG


@pytest.fixture(scope="session")
def heom_opts(cfg):
    """Shared bath decomposition; expensive, so built once per session."""
    return default_heom_options(cfg)


@pytest.fixture(scope="session")
def pi_amp(cfg, heom_opts):
    from heomcal.audits import heom_pi_amp

    return heom_pi_amp(cfg, heom_opts)
