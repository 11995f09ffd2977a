"""Backend-comparison verdicts over the protocol matrix.

Each verdict maps point estimates from two backends' fits onto a small
label vocabulary; bootstrap intervals are attached as annotations but
never change a label.  Thresholds come from the platform config so the
decision logic stays free of embedded constants.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .fits import FitResult

VERDICT_LABELS = (
    "non_markov_gap",
    "distinguishable",
    "marginal_visibility",
    "degraded",
    "shape_match_with_contamination",
    "withheld",
)

PROTOCOL_OBSERVABLES = {
    "rabi": ("pi_amp", "p_max"),
    "ramsey": ("t2_star", "tau_aw", "decay_shape"),
    "t1": ("t1", "beta", "a"),
}


class VerdictError(ValueError):
    pass


@dataclass(frozen=True)
class VerdictThresholds:
    ramsey_rel_t2: float = 0.001
    rabi_pi_amp: float = 0.005
    rabi_p_max: float = 0.01
    t1_beta_tol: float = 0.001
    t1_a_gap: float = 0.05

    @classmethod
    def from_config(cls, sections: dict) -> "VerdictThresholds":
        sec = sections.get("verdicts") or {}
        return cls(
            ramsey_rel_t2=float(sec.get("ramsey_rel_t2_threshold", 0.001)),
            rabi_pi_amp=float(sec.get("rabi_pi_amp_threshold", 0.005)),
            rabi_p_max=float(sec.get("rabi_p_max_threshold", 0.01)),
            t1_beta_tol=float(sec.get("t1_beta_tol", 0.001)),
            t1_a_gap=float(sec.get("t1_a_gap", 0.05)),
        )


@dataclass(frozen=True)
class MatrixCell:
    protocol: str
    backend: str
    observables: dict
    fit: FitResult | None = None

    def __post_init__(self):
        allowed = set(PROTOCOL_OBSERVABLES[self.protocol])
        extra = set(self.observables) - allowed
        if extra:
            raise VerdictError(
                f"observables {sorted(extra)} not declared for {self.protocol}"
            )

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "backend": self.backend,
            "observables": dict(self.observables),
        }


@dataclass(frozen=True)
class Verdict:
    protocol: str
    label: str
    evidence: dict
    annotations: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.label not in VERDICT_LABELS:
            raise VerdictError(f"unknown verdict label {self.label!r}")

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "label": self.label,
            "evidence": dict(self.evidence),
            "annotations": {k: v.to_dict() for k, v in self.annotations.items()},
        }


def _scalar(fit: FitResult, key: str) -> float:
    if key in fit.derived:
        return float(fit.derived[key])
    if key in fit.params:
        return float(fit.params[key])
    raise VerdictError(f"fit lacks required output {key!r}")


def ramsey_verdict(heom: FitResult, mesolve: FitResult,
                   thresholds: VerdictThresholds | None = None,
                   annotations: dict | None = None) -> Verdict:
    """Label the Ramsey gap between the hierarchical and Lindblad fits.

    non_markov_gap requires both a relative T2* difference above threshold
    and a passed physical-revival guard on the hierarchical fit; a large
    gap with a failed guard stays unlabeled as a gap.
    """
    th = thresholds or VerdictThresholds()
    if heom.guard is None:
        raise VerdictError("hierarchical fit carries no revival guard outcome")
    t2_h = _scalar(heom, "t2_star")
    t2_m = _scalar(mesolve, "t2_star")
    rel = abs(t2_h - t2_m) / t2_m
    gap = rel > th.ramsey_rel_t2 and heom.guard.passed
    evidence = {
        "t2_star_heom": t2_h,
        "t2_star_mesolve": t2_m,
        "rel_t2_diff": rel,
        "t2_ratio": t2_m / t2_h if t2_h > 0 else float("inf"),
        "tau_aw_gap": t2_m - _scalar(heom, "tau_aw"),
        "guard_passed": heom.guard.passed,
        "guard_amp_ratio": heom.guard.amp_ratio,
        "guard_tc_ratio": heom.guard.tc_ratio,
    }
    label = "non_markov_gap" if gap else "degraded"
    return Verdict("ramsey", label, evidence, annotations or {})


def rabi_verdict(heom: FitResult, ref: FitResult,
                 thresholds: VerdictThresholds | None = None,
                 annotations: dict | None = None) -> Verdict:
    """Tiered Rabi comparison: pi-amplitude shift, then contrast loss.

    The contrast threshold is in absolute population points.
    """
    th = thresholds or VerdictThresholds()
    pi_h, pi_r = _scalar(heom, "pi_amp"), _scalar(ref, "pi_amp")
    pm_h, pm_r = _scalar(heom, "p_max"), _scalar(ref, "p_max")
    d_pi_rel = abs(pi_h - pi_r) / pi_r
    d_pm = abs(pm_h - pm_r)
    if d_pi_rel >= th.rabi_pi_amp:
        label = "distinguishable"
    elif d_pm >= th.rabi_p_max:
        label = "marginal_visibility"
    else:
        label = "degraded"
    evidence = {
        "pi_amp_heom": pi_h, "pi_amp_ref": pi_r,
        "delta_pi_amp": pi_h - pi_r, "rel_pi_amp_diff": d_pi_rel,
        "p_max_heom": pm_h, "p_max_ref": pm_r, "delta_p_max": pm_h - pm_r,
    }
    return Verdict("rabi", label, evidence, annotations or {})


def t1_interpretation(heom: FitResult, mesolve: FitResult, probe,
                      thresholds: VerdictThresholds | None = None,
                      annotations: dict | None = None) -> Verdict:
    """Classify the T1 discrepancy as initial-state contamination.

    Requires matching decay shape (beta), a depressed hierarchical initial
    amplitude, and a physical-branch partial-trace probe; a large amplitude
    gap on the representation branch is withheld and flagged for audit.
    """
    th = thresholds or VerdictThresholds()
    if probe is None:
        raise VerdictError("partial-trace probe record is required")
    beta_h, beta_m = _scalar(heom, "beta"), _scalar(mesolve, "beta")
    a_h, a_m = _scalar(heom, "a"), _scalar(mesolve, "a")
    shape_match = abs(beta_h - beta_m) <= th.t1_beta_tol
    a_gap = a_h < a_m - th.t1_a_gap
    evidence = {
        "beta_heom": beta_h, "beta_mesolve": beta_m,
        "delta_beta": beta_h - beta_m,
        "a_heom": a_h, "a_mesolve": a_m, "delta_a": a_h - a_m,
        "branch": probe.branch,
    }
    if shape_match and a_gap and probe.branch == "physical":
        label = "shape_match_with_contamination"
    elif a_gap and probe.branch == "representation":
        label = "withheld"
        evidence["flagged_for_audit"] = True
    else:
        label = "degraded"
    return Verdict("t1", label, evidence, annotations or {})


REQUIRED_CELLS = (
    ("rabi", "unitary"), ("rabi", "lindblad"), ("rabi", "heom"),
    ("ramsey", "unitary"), ("ramsey", "lindblad"), ("ramsey", "heom"),
    ("t1", "lindblad"), ("t1", "heom"),
)


def assemble_matrix(cells, verdicts=(), annotations=None) -> dict:
    """Protocol x backend comparison record with per-protocol delta columns.

    All eight populated cells must be present; the unitary backend has no
    relaxation channel, so its T1 cell is structurally absent.
    """
    index = {(c.protocol, c.backend): c for c in cells}
    for key in REQUIRED_CELLS:
        if key not in index:
            raise VerdictError(f"missing matrix cell {key[0]}/{key[1]}")

    def delta(protocol, name):
        h = index[(protocol, "heom")].observables[name]
        m = index[(protocol, "lindblad")].observables[name]
        return h - m

    ram_h = index[("ramsey", "heom")].observables["t2_star"]
    ram_m = index[("ramsey", "lindblad")].observables["t2_star"]
    deltas = {
        "rabi": {
            "delta_pi_amp": delta("rabi", "pi_amp"),
            "delta_p_max": delta("rabi", "p_max"),
        },
        "ramsey": {
            "t2_star_ratio": ram_m / ram_h if ram_h > 0 else float("inf"),
            "delta_tau_aw": delta("ramsey", "tau_aw"),
        },
        "t1": {
            "delta_t1": delta("t1", "t1"),
            "delta_a": delta("t1", "a"),
        },
    }
    return {
        "cells": [index[k].to_dict() for k in REQUIRED_CELLS],
        "delta_heom_minus_mesolve": deltas,
        "verdicts": [v.to_dict() for v in verdicts],
        "annotations": {
            k: v.to_dict() for k, v in (annotations or {}).items()
        },
    }
