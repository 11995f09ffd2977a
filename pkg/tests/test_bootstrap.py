import numpy as np
import pytest
from scipy.stats import norm

from heomcal.bootstrap import (
    BootstrapError, BootstrapSpec, CiRecord, _bca_edges, _jackknife,
    _resample_stats, _rng, bca_ci, independent_gap, paired_delta_ci,
)


def _mean(xs, ys):
    return float(np.mean(ys))


def test_spec_validation():
    with pytest.raises(ValueError):
        BootstrapSpec(resamples=50)
    with pytest.raises(ValueError):
        BootstrapSpec(method="percentile")


def test_ci_record_invariants():
    with pytest.raises(ValueError):
        CiRecord(point=1.0, lo=2.0, hi=1.0)
    with pytest.raises(ValueError):
        CiRecord(point=1.0, lo=0.0, hi=2.0, valid_rate=1.5)


def test_zero_width_on_constant_data():
    x = np.arange(20.0)
    y = np.full(20, 3.25)
    ci = bca_ci((x, y), _mean, BootstrapSpec(resamples=300, seed=9))
    assert ci.lo == ci.hi == ci.point == 3.25


def test_bitwise_reproducibility():
    rng = np.random.default_rng(3)
    x = np.arange(40.0)
    y = rng.normal(1.0, 0.3, 40)
    spec = BootstrapSpec(resamples=500, seed=77)
    a = bca_ci((x, y), _mean, spec)
    b = bca_ci((x, y), _mean, spec)
    assert (a.lo, a.hi, a.point, a.valid_rate) == (b.lo, b.hi, b.point,
                                                   b.valid_rate)


def test_valid_rate_accounting():
    """Dropped resamples are counted: valid_rate * B + dropped = B."""
    x = np.arange(30.0)
    y = np.linspace(0.0, 1.0, 30)

    def flaky(xs, ys):
        if np.max(ys) < 0.99:  # fails whenever the last case is left out
            raise RuntimeError("refit failed")
        return float(np.mean(ys))

    spec = BootstrapSpec(resamples=400, seed=5)
    ci = bca_ci((x, y), flaky, spec)
    assert 0.0 < ci.valid_rate < 1.0
    n_valid = round(ci.valid_rate * spec.resamples)
    stats, got_valid, total = _resample_stats(
        x, y, flaky, spec, _rng(spec.seed))
    assert got_valid == n_valid
    assert got_valid + (total - got_valid) == spec.resamples


def test_all_failures_raise():
    def unique_only(xs, ys):
        # succeeds on the original sample and jackknife subsets, fails on
        # (essentially) every with-replacement resample
        if len(np.unique(ys)) < len(ys):
            raise RuntimeError("no fit")
        return float(np.mean(ys))

    with pytest.raises(BootstrapError):
        bca_ci((np.arange(20.0), np.arange(20.0)), unique_only,
               BootstrapSpec(resamples=200, seed=1))


def test_bca_reduces_to_percentile_when_symmetric():
    """With z0 = 0 and zero acceleration the BCa edges are percentiles."""
    stats = np.linspace(-1.0, 1.0, 2001)  # symmetric around the point 0
    jack = np.zeros(10)  # zero skew -> acceleration 0
    lo, hi = _bca_edges(stats, 0.0, jack, 0.95)
    p_lo, p_hi = np.quantile(stats, [0.025, 0.975])
    # z0 is estimated from a finite resample count, so the reduction holds
    # to Monte-Carlo resolution, not exactly
    assert lo == pytest.approx(p_lo, abs=2e-3)
    assert hi == pytest.approx(p_hi, abs=2e-3)


def test_bca_skew_shifts_from_percentile():
    """Oracle: on a skewed resample distribution, BCa moves the edges in the
    direction of the skew relative to plain percentiles."""
    rng = np.random.default_rng(11)
    x = np.arange(30.0)
    y = rng.lognormal(0.0, 1.0, 30)
    spec = BootstrapSpec(resamples=4000, seed=13)
    ci = bca_ci((x, y), _mean, spec)
    stats, _, _ = _resample_stats(x, y, _mean, spec, _rng(spec.seed))
    p_lo, p_hi = np.quantile(stats, [0.025, 0.975])
    # right-skewed data: both BCa edges sit above the percentile edges
    assert ci.lo > p_lo
    assert ci.hi > p_hi


def test_coverage_small():
    hits = 0
    trials = 120
    for t in range(trials):
        g = np.random.default_rng(2000 + t)
        y = g.normal(0.0, 1.0, 30)
        ci = bca_ci((np.arange(30.0), y), _mean,
                    BootstrapSpec(resamples=400, seed=t))
        hits += ci.lo <= 0.0 <= ci.hi
    assert 0.88 <= hits / trials <= 1.0


def test_paired_identical_data():
    x = np.arange(25.0)
    y = np.sin(x / 3.0)
    ci = paired_delta_ci((x, y), (x, y), _mean,
                         BootstrapSpec(resamples=300, seed=2))
    assert ci.point == ci.lo == ci.hi == 0.0
    assert ci.p_value == 1.0


def test_paired_known_offset():
    x = np.arange(30.0)
    y = np.linspace(0.2, 0.9, 30)
    delta = 0.125
    ci = paired_delta_ci((x, y), (x, y + delta), _mean,
                         BootstrapSpec(resamples=500, seed=4))
    assert ci.point == pytest.approx(delta, abs=1e-12)
    assert ci.lo == pytest.approx(delta, abs=1e-9)
    assert ci.hi == pytest.approx(delta, abs=1e-9)
    assert ci.p_value < 0.05


def test_paired_requires_shared_grid():
    x = np.arange(10.0)
    with pytest.raises(ValueError):
        paired_delta_ci((x, x), (x + 1.0, x), _mean,
                        BootstrapSpec(resamples=200, seed=0))


def test_independent_gap_modes():
    a = CiRecord(point=9944.0, lo=9944.0, hi=9944.0)
    b = CiRecord(point=400.0, lo=137.0, hi=755.0)
    assert independent_gap(a, b, "ratio_lower_bound") == pytest.approx(
        13.17, abs=0.01)
    one = CiRecord(point=1.0, lo=1.0, hi=1.0)
    assert independent_gap(one, one, "ratio_lower_bound") == 1.0
    amp_m = CiRecord(point=1.0, lo=0.999, hi=1.001)
    amp_h = CiRecord(point=0.89, lo=0.879, hi=0.900)
    assert independent_gap(amp_m, amp_h, "difference_lower_bound") == (
        pytest.approx(0.099))
    with pytest.raises(ValueError):
        independent_gap(a, CiRecord(point=0.0, lo=-1.0, hi=0.0),
                        "ratio_lower_bound")
    with pytest.raises(ValueError):
        independent_gap(a, b, "overlap")
