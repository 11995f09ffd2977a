import dataclasses

import numpy as np
import pytest

from heomcal.bath import (
    correlation_function, default_correlation_grid, double_integral,
    exp_decompose,
)


@pytest.fixture(scope="module")
def corr(cfg):
    return correlation_function(cfg.bath, default_correlation_grid())


@pytest.fixture(scope="module")
def decomp(corr):
    return exp_decompose(corr, k=3, real_decay=True)


def test_grid_shape():
    times = default_correlation_grid()
    assert times[0] == 0.0
    assert times[-1] == pytest.approx(2000.0)
    assert np.all(np.diff(times) > 0)


def test_correlation_zero_time_positive(corr):
    # classical-limit variance: C(0) is dominated by its real part
    c0 = corr.values[0]
    assert c0.real > 0
    assert abs(c0.imag) < 0.1 * c0.real


def test_correlation_linear_in_amplitude(cfg):
    """Oracle: C(t) is linear in the noise amplitude by construction."""
    times = np.linspace(0.0, 50.0, 6)
    base = correlation_function(cfg.bath, times)
    double = correlation_function(
        dataclasses.replace(cfg.bath, amplitude_a0=2.0 * cfg.bath.amplitude_a0),
        times,
    )
    assert np.allclose(double.values, 2.0 * base.values, rtol=1e-6)


def test_decomposition_residual(decomp):
    assert decomp.rel_rms_residual <= 1e-3


def test_decomposition_real_rates(decomp):
    for _, nu in decomp.modes:
        assert nu.imag == 0.0
        assert nu.real > 0.0


def test_decomposition_reconstruction(corr, decomp):
    t = corr.times
    model = sum(c * np.exp(-nu * t) for c, nu in decomp.modes)
    scale = np.sqrt(np.mean(np.abs(corr.values) ** 2))
    err = np.sqrt(np.mean(np.abs(model - corr.values) ** 2)) / scale
    assert err == pytest.approx(decomp.rel_rms_residual, rel=1e-6)


def test_scaled_decomposition(decomp):
    half = decomp.scaled(0.5)
    for (c0, nu0), (c1, nu1) in zip(decomp.modes, half.modes):
        assert c1 == pytest.approx(0.5 * c0)
        assert nu1 == nu0


def test_double_integral_against_quadrature(decomp):
    """Oracle: brute-force nested trapezoid of the mode sum."""
    t_end = 400.0
    s = np.linspace(0.0, t_end, 4001)
    c_model = sum(c * np.exp(-nu * s) for c, nu in decomp.modes)
    inner = np.concatenate([[0.0], np.cumsum(
        0.5 * (c_model[1:] + c_model[:-1]) * np.diff(s))])
    outer = np.trapz(inner, s)
    assert double_integral(decomp, t_end) == pytest.approx(outer, rel=1e-4)


def test_double_integral_monotone_real(decomp):
    ts = [10.0, 50.0, 200.0, 1000.0]
    vals = [double_integral(decomp, t).real for t in ts]
    assert all(b > a for a, b in zip(vals, vals[1:]))
