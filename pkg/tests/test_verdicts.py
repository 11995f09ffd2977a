"""Tests for verdict labeling and the comparison matrix."""

import json
from types import SimpleNamespace

import pytest

from heomcal.fits import FitResult, make_guard
from heomcal.platform import load_sections
from heomcal.verdicts import (
    REQUIRED_CELLS, MatrixCell, Verdict, VerdictError, VerdictThresholds,
    assemble_matrix, rabi_verdict, ramsey_verdict, t1_interpretation,
)


def _ramsey_fit(t2_star, tau_aw=None, guard=None):
    return FitResult(
        family="biexp_revival" if guard is not None else "exp_ceiling",
        params={},
        r_squared=0.999,
        guard=guard,
        derived={"t2_star": t2_star, "tau_aw": tau_aw or t2_star},
    )


def _rabi_fit(pi_amp, p_max):
    return FitResult(family="rabi_cosine", params={}, r_squared=0.999,
                     derived={"pi_amp": pi_amp, "p_max": p_max})


def _t1_fit(t1, beta, a):
    return FitResult(family="stretched_exp", params={},
                     r_squared=0.999,
                     derived={"t1": t1, "beta": beta, "a": a})


def _probe(branch):
    return SimpleNamespace(branch=branch)


PASS_GUARD = make_guard(amp_ratio=0.9, tc_ratio=1.0)
FAIL_GUARD = make_guard(amp_ratio=0.01, tc_ratio=1.0)


# ----------------------------------------------------------------- ramsey


def test_ramsey_gap_with_passed_guard():
    v = ramsey_verdict(_ramsey_fit(352.0, tau_aw=20.0, guard=PASS_GUARD),
                       _ramsey_fit(9950.0))
    assert v.label == "non_markov_gap"
    assert v.evidence["t2_ratio"] == pytest.approx(9950.0 / 352.0)
    assert v.evidence["tau_aw_gap"] == pytest.approx(9930.0)
    assert v.evidence["guard_passed"] is True


def test_ramsey_identical_fits_degraded():
    v = ramsey_verdict(_ramsey_fit(9950.0, guard=PASS_GUARD),
                       _ramsey_fit(9950.0))
    assert v.label == "degraded"
    assert v.evidence["rel_t2_diff"] == 0.0


def test_ramsey_large_gap_failed_guard_is_not_a_gap():
    v = ramsey_verdict(_ramsey_fit(352.0, guard=FAIL_GUARD),
                       _ramsey_fit(9950.0))
    assert v.label == "degraded"
    assert v.evidence["guard_passed"] is False


def test_ramsey_requires_guard():
    with pytest.raises(VerdictError, match="guard"):
        ramsey_verdict(_ramsey_fit(352.0), _ramsey_fit(9950.0))


def test_ramsey_threshold_boundary():
    # exactly at the threshold is not above it
    th = VerdictThresholds(ramsey_rel_t2=0.001)
    v = ramsey_verdict(_ramsey_fit(999.0, guard=PASS_GUARD),
                       _ramsey_fit(1000.0), thresholds=th)
    assert v.label == "degraded"
    v = ramsey_verdict(_ramsey_fit(998.0, guard=PASS_GUARD),
                       _ramsey_fit(1000.0), thresholds=th)
    assert v.label == "non_markov_gap"


# ------------------------------------------------------------------- rabi


def test_rabi_pi_amp_shift_distinguishable():
    v = rabi_verdict(_rabi_fit(0.6060, 0.95), _rabi_fit(0.6000, 0.99))
    assert v.label == "distinguishable"
    assert v.evidence["rel_pi_amp_diff"] == pytest.approx(0.01)


def test_rabi_contrast_loss_marginal_visibility():
    # pi-amp shift of 0.44% is below threshold, contrast loss 2.2% is not
    v = rabi_verdict(_rabi_fit(0.60264, 0.968), _rabi_fit(0.6000, 0.990))
    assert v.label == "marginal_visibility"
    assert v.evidence["delta_p_max"] == pytest.approx(-0.022)


def test_rabi_small_differences_degraded():
    v = rabi_verdict(_rabi_fit(0.6006, 0.988), _rabi_fit(0.6000, 0.990))
    assert v.label == "degraded"


# --------------------------------------------------------------------- t1


def test_t1_shape_match_with_contamination():
    v = t1_interpretation(_t1_fit(24800.0, 0.879, 0.94),
                          _t1_fit(24800.0, 0.8795, 1.0),
                          probe=_probe("physical"))
    assert v.label == "shape_match_with_contamination"
    assert v.evidence["branch"] == "physical"


def test_t1_large_gap_on_representation_branch_withheld():
    v = t1_interpretation(_t1_fit(24800.0, 0.879, 0.90),
                          _t1_fit(24800.0, 0.879, 1.0),
                          probe=_probe("representation"))
    assert v.label == "withheld"
    assert v.evidence["flagged_for_audit"] is True


def test_t1_shape_mismatch_degraded():
    v = t1_interpretation(_t1_fit(24800.0, 0.95, 0.90),
                          _t1_fit(24800.0, 0.879, 1.0),
                          probe=_probe("physical"))
    assert v.label == "degraded"


def test_t1_small_amplitude_gap_degraded():
    v = t1_interpretation(_t1_fit(24800.0, 0.879, 0.97),
                          _t1_fit(24800.0, 0.879, 1.0),
                          probe=_probe("physical"))
    assert v.label == "degraded"


def test_t1_requires_probe():
    with pytest.raises(VerdictError, match="probe"):
        t1_interpretation(_t1_fit(1.0, 0.9, 0.9), _t1_fit(1.0, 0.9, 1.0),
                          probe=None)


# ------------------------------------------------------------- structure


def test_unknown_label_rejected():
    with pytest.raises(VerdictError, match="unknown verdict label"):
        Verdict("rabi", "excellent", {})


def test_cell_rejects_undeclared_observable():
    with pytest.raises(VerdictError, match="not declared"):
        MatrixCell("rabi", "heom", {"pi_amp": 0.6, "t2_star": 100.0})


def test_thresholds_from_config(config_path):
    th = VerdictThresholds.from_config(load_sections(config_path))
    assert th.ramsey_rel_t2 == 0.001
    assert th.rabi_pi_amp == 0.005
    assert th.rabi_p_max == 0.01
    assert th.t1_beta_tol == 0.001
    assert th.t1_a_gap == 0.05


def _full_cells():
    obs = {
        "rabi": {"pi_amp": 0.6, "p_max": 0.99},
        "ramsey": {"t2_star": 5000.0, "tau_aw": 5000.0},
        "t1": {"t1": 24800.0, "beta": 0.88, "a": 1.0},
    }
    return [MatrixCell(p, b, dict(obs[p])) for p, b in REQUIRED_CELLS]


def test_matrix_equal_cells_zero_deltas():
    matrix = assemble_matrix(_full_cells())
    deltas = matrix["delta_heom_minus_mesolve"]
    assert deltas["rabi"] == {"delta_pi_amp": 0.0, "delta_p_max": 0.0}
    assert deltas["ramsey"]["t2_star_ratio"] == pytest.approx(1.0)
    assert deltas["t1"] == {"delta_t1": 0.0, "delta_a": 0.0}
    assert len(matrix["cells"]) == 8
    # JSON round-trip preserves the record exactly
    assert json.loads(json.dumps(matrix)) == matrix


def test_matrix_missing_cell_names_it():
    cells = [c for c in _full_cells()
             if (c.protocol, c.backend) != ("t1", "heom")]
    with pytest.raises(VerdictError, match="t1/heom"):
        assemble_matrix(cells)


def test_matrix_has_no_unitary_t1_cell():
    assert ("t1", "unitary") not in REQUIRED_CELLS
    assert len(REQUIRED_CELLS) == 8
