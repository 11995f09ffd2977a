import numpy as np
import pytest

from heomcal.protocols import (
    canonical_backend, default_rabi_plan, default_ramsey_plan,
    default_t1_plan, run_rabi, run_ramsey, run_t1,
)


def test_backend_aliases():
    assert canonical_backend("sesolve") == "unitary"
    assert canonical_backend("mesolve") == "lindblad"
    assert canonical_backend("heom") == "heom"
    with pytest.raises(ValueError):
        canonical_backend("qutip")


def test_default_plans(cfg):
    rabi = default_rabi_plan(cfg)
    assert len(rabi.amplitudes) == 30
    assert rabi.amplitudes[0] == pytest.approx(0.01)
    assert rabi.amplitudes[-1] == pytest.approx(0.99)

    standard = default_ramsey_plan()
    assert len(standard.delays) == 30
    assert standard.delays[0] == pytest.approx(10.0)
    assert standard.delays[-1] == pytest.approx(2000.0)

    dense = default_ramsey_plan(grid="dense")
    assert len(dense.delays) == 50
    assert all(b > a for a, b in zip(dense.delays, dense.delays[1:]))
    # early-time half of the dense grid resolves the fast envelope
    assert sum(1 for d in dense.delays if d < 500.0) == 30

    for n in (8, 16):
        t1 = default_t1_plan(variant=n)
        assert len(t1.delays) == n
    with pytest.raises(ValueError):
        default_ramsey_plan(grid="log")


def test_rabi_unitary_measured_range(cfg):
    res = run_rabi("unitary", cfg, default_rabi_plan(cfg, points=10))
    y = np.asarray(res.measured)
    assert res.protocol == "rabi"
    assert np.all((y >= -1e-9) & (y <= 1.0 + 1e-9))
    assert np.max(y) > 0.9  # the sweep crosses the pi pulse


def test_ramsey_unitary_flat(cfg):
    """Without dissipation the equator coherence survives every delay."""
    plan = default_ramsey_plan()
    short = type(plan)(delays=plan.delays[:6], detuning=0.0, grid="standard")
    res = run_ramsey("unitary", cfg, short, pi_amp=0.6312)
    y = np.asarray(res.measured)
    assert np.max(y) - np.min(y) < 5e-3


def test_t1_lindblad_probe_states(cfg):
    plan = default_t1_plan(variant=8)
    res = run_t1("lindblad", cfg, plan, pi_amp=0.6312, probes=(1.0, 50.0))
    assert len(res.probe_states) == 2
    for t, rho in res.probe_states:
        assert np.trace(rho).real == pytest.approx(1.0, abs=1e-8)
    y = np.asarray(res.measured)
    assert np.all(np.diff(y) < 0)  # monotone relaxation


def test_wall_time_recorded(cfg):
    res = run_rabi("unitary", cfg, default_rabi_plan(cfg, points=5))
    assert res.wall_time > 0.0
