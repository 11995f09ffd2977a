import dataclasses
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from heomcal.platform import (
    ConfigError, PlatformConfig, derive_lindblad_rates, load_platform,
    platform_from_dict, platform_to_dict,
)

GHZ = 2.0 * math.pi  # rad/ns per GHz


def test_tier1_unit_conversion(cfg):
    assert cfg.qubit_freq == pytest.approx(5.528 * GHZ)
    assert cfg.anharmonicity == pytest.approx(-0.293 * GHZ)
    assert cfg.t1_char == 24800.0
    assert cfg.t2_char == 34200.0
    assert cfg.levels == 3
    assert cfg.bath.amplitude_a0 == pytest.approx(1.8e-6 * GHZ)
    assert cfg.bath.low_cutoff == pytest.approx(5.0e-3 * GHZ)
    assert cfg.bath.high_cutoff == pytest.approx(3.0 * GHZ)
    assert cfg.bath.temperature == pytest.approx(0.050)
    assert cfg.bath.coupling_diag == (0, 1, 2)


def test_drive_defaults(cfg):
    assert cfg.drive.shape == "hann"
    assert cfg.drive.pulse_duration == pytest.approx(10.5)
    assert cfg.drive.drive_scale > 0


def test_round_trip(cfg):
    doc = platform_to_dict(cfg)
    again = platform_from_dict(doc)
    assert again == cfg


def test_missing_section_rejected(cfg):
    doc = platform_to_dict(cfg)
    del doc["bath"]
    with pytest.raises(ConfigError):
        platform_from_dict(doc)


def test_invalid_values_rejected(cfg):
    with pytest.raises(ConfigError):
        dataclasses.replace(cfg, anharmonicity=+0.1)
    with pytest.raises(ConfigError):
        dataclasses.replace(cfg, levels=1)
    with pytest.raises(ConfigError):
        # T2 may not exceed twice T1
        dataclasses.replace(cfg, t2_char=3.0 * cfg.t1_char)
    with pytest.raises(ConfigError):
        dataclasses.replace(cfg.drive, shape="gauss")


def test_coupling_diag_length_must_match_levels(cfg):
    bad = dataclasses.replace(cfg.bath, coupling_diag=(0, 1))
    with pytest.raises(ConfigError):
        dataclasses.replace(cfg, bath=bad)


def test_malformed_file_rejected(tmp_path):
    path = tmp_path / "broken.yaml"
    path.write_text("platform: [not, a, mapping]\n")
    with pytest.raises(ConfigError):
        load_platform(path)


def test_lindblad_rates(cfg):
    gamma1, gamma_phi = derive_lindblad_rates(cfg)
    assert gamma1 == pytest.approx(1.0 / cfg.t1_char)
    # 1/T2 = 1/(2 T1) + gamma_phi
    assert gamma_phi == pytest.approx(1.0 / cfg.t2_char - 0.5 / cfg.t1_char)
    assert gamma_phi >= 0.0


@settings(max_examples=25, deadline=None)
@given(
    freq=st.floats(1.0, 20.0),
    anh=st.floats(-1.0, -0.01),
    t1=st.floats(1e3, 1e6),
    ratio=st.floats(0.1, 2.0),
)
def test_round_trip_property(freq, anh, t1, ratio):
    cfg = PlatformConfig(
        qubit_freq=freq, anharmonicity=anh, t1_char=t1, t2_char=ratio * t1,
        levels=3, bath=_tier1_bath(),
    )
    again = platform_from_dict(platform_to_dict(cfg))
    assert again.qubit_freq == pytest.approx(cfg.qubit_freq, rel=1e-14)
    assert again.anharmonicity == pytest.approx(cfg.anharmonicity, rel=1e-14)
    assert again.t1_char == cfg.t1_char
    assert again.t2_char == cfg.t2_char
    assert again.bath.coupling_diag == cfg.bath.coupling_diag
    assert again.drive == cfg.drive


def _tier1_bath():
    from heomcal.platform import BathSpec

    return BathSpec(
        amplitude_a0=1.8e-6 * GHZ, low_cutoff=5e-3 * GHZ,
        high_cutoff=3.0 * GHZ, temperature=0.05, coupling_diag=(0, 1, 2),
    )
