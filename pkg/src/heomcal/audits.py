"""Convergence and control audits for the hierarchical backend.

Four suites: the hierarchy-depth sweep, the bath-amplitude sensitivity
sweep, the deeper-hierarchy sanity refits, and the post-pulse partial
trace control.  Each emits a machine-readable JSON artifact; all solver
and fit settings are pinned, so reruns are bitwise reproducible.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bath import correlation_function, default_correlation_grid, exp_decompose
from .fits import (
    fit_biexp_revival, fit_exp_ceiling, fit_rabi_cosine, fit_stretched,
    fit_t1, fit_triexp_sanity,
)
from .platform import PlatformConfig
from .protocols import (
    HeomOptions, default_heom_options, default_rabi_plan, default_ramsey_plan,
    default_t1_plan, run_rabi, run_ramsey, run_t1,
)

PROBE_TIMES = (1.0, 2.0, 5.0, 10.0, 50.0, 100.0)
BRANCH_PHYSICAL_MIN = 0.05
BRANCH_REPRESENTATION_MAX = 0.001
TAU_AW_ROBUST_TOL = 0.05


class AuditError(RuntimeError):
    pass


def write_json(path, payload: dict) -> None:
    """Deterministic JSON dump: sorted keys, fixed layout, trailing newline."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def classify_branch(discrepancy_at_1ns: float) -> str:
    if discrepancy_at_1ns >= BRANCH_PHYSICAL_MIN:
        return "physical"
    if discrepancy_at_1ns <= BRANCH_REPRESENTATION_MAX:
        return "representation"
    return "indeterminate"


@dataclass(frozen=True)
class LSweepRecord:
    depths: tuple
    trace_residuals: tuple
    t1_trace_residuals: tuple
    tau_aw_by_l: tuple
    guard_by_l: tuple  # GuardOutcome per depth
    fallback_used: tuple
    bath_residual: float
    case_b_tau_aw_robust: bool
    t1_points: int

    def __post_init__(self):
        if list(self.depths) != sorted(self.depths):
            raise ValueError("depths must be increasing")
        if len(self.trace_residuals) != len(self.depths) - 1:
            raise ValueError("need one trace residual per adjacent depth pair")

    def to_dict(self) -> dict:
        return {
            "depths": list(self.depths),
            "trace_residuals": list(self.trace_residuals),
            "t1_trace_residuals": list(self.t1_trace_residuals),
            "tau_aw_by_l": list(self.tau_aw_by_l),
            "guard_by_l": [
                {"amp_ratio": g.amp_ratio, "tc_ratio": g.tc_ratio,
                 "passed": g.passed}
                for g in self.guard_by_l
            ],
            "fallback_used": list(self.fallback_used),
            "bath_residual": self.bath_residual,
            "case_b_tau_aw_robust": self.case_b_tau_aw_robust,
            "t1_points": self.t1_points,
        }


@dataclass(frozen=True)
class PartialTraceRecord:
    probe_times: tuple
    rho11_heom: tuple
    rho11_mesolve: tuple
    discrepancy_per_delay: tuple
    branch: str
    plateau_flatness: float

    def __post_init__(self):
        want = classify_branch(self.discrepancy_per_delay[0])
        if self.branch != want:
            raise ValueError("branch label contradicts the threshold predicate")

    def to_dict(self) -> dict:
        return {
            "probe_times_ns": list(self.probe_times),
            "rho11_heom": list(self.rho11_heom),
            "rho11_mesolve": list(self.rho11_mesolve),
            "discrepancy_per_delay": list(self.discrepancy_per_delay),
            "branch": self.branch,
            "plateau_flatness": self.plateau_flatness,
        }


def _max_residual(a, b) -> float:
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))


def heom_pi_amp(cfg: PlatformConfig, heom: HeomOptions) -> float:
    """Calibrate the pi amplitude on the hierarchical backend itself."""
    res = run_rabi("heom", cfg, default_rabi_plan(cfg), heom=heom)
    fit = fit_rabi_cosine(res.sweep_values, res.measured)
    return float(fit.derived["pi_amp"])


def run_l_sweep(cfg: PlatformConfig, depths=(2, 3, 4, 5), pi_amp=None,
                heom: HeomOptions | None = None, t1_points: int = 8,
                ramsey_grid: str = "standard") -> LSweepRecord:
    """Hierarchy-depth convergence audit on the common Ramsey grid.

    Runs the Ramsey and T1 sweeps at each depth, records adjacent-depth
    max-norm trace residuals, and refits the revival envelope per depth.
    case_b_tau_aw_robust asks whether the weighted timescale has settled
    across the deepest pair.
    """
    if sorted(depths) != list(depths) or len(depths) < 2:
        raise ValueError("depths must be sorted with at least two entries")
    heom = heom or default_heom_options(cfg)
    if pi_amp is None:
        pi_amp = heom_pi_amp(cfg, heom)
    plan = default_ramsey_plan(grid=ramsey_grid)
    t1_plan = default_t1_plan(variant=t1_points)

    ramsey_traces, t1_traces = [], []
    tau_aw, guards, fallback = [], [], []
    for depth in depths:
        opts = HeomOptions(decomposition=heom.decomposition, depth=depth,
                           terminator=heom.terminator)
        try:
            ram = run_ramsey("heom", cfg, plan, pi_amp, heom=opts)
            t1 = run_t1("heom", cfg, t1_plan, pi_amp, heom=opts)
        except Exception as exc:
            raise AuditError(f"evolution failed at depth L={depth}: {exc}") from exc
        ramsey_traces.append(np.asarray(ram.measured))
        t1_traces.append(np.asarray(t1.measured))
        fit = fit_biexp_revival(ram.sweep_values, ram.measured)
        tau_aw.append(float(fit.derived["tau_aw"]))
        guards.append(fit.guard)
        fallback.append(bool(fit.fallback_used))

    residuals = tuple(
        _max_residual(a, b) for a, b in zip(ramsey_traces, ramsey_traces[1:])
    )
    t1_residuals = tuple(
        _max_residual(a, b) for a, b in zip(t1_traces, t1_traces[1:])
    )
    deep = [t for d, t in zip(depths, tau_aw) if d >= 4]
    robust = bool(
        len(deep) >= 2
        and (max(deep) - min(deep)) / max(abs(max(deep)), 1e-30) <= TAU_AW_ROBUST_TOL
    )
    return LSweepRecord(
        depths=tuple(depths),
        trace_residuals=residuals,
        t1_trace_residuals=t1_residuals,
        tau_aw_by_l=tuple(tau_aw),
        guard_by_l=tuple(guards),
        fallback_used=tuple(fallback),
        bath_residual=float(heom.decomposition.rel_rms_residual),
        case_b_tau_aw_robust=robust,
        t1_points=t1_points,
    )


def run_a_sweep(cfg: PlatformConfig, scales=(0.5, 1.0, 2.0), pi_amp=None,
                heom: HeomOptions | None = None,
                ramsey_grid: str = "dense") -> dict:
    """Bath-amplitude sensitivity sweep of the revival timescale.

    The correlation function is linear in the noise amplitude, so each
    scale reuses the base decomposition scaled in place; one refit from
    the rescaled bath runs at the largest scale as a cross-check.
    """
    if any(s <= 0 for s in scales):
        raise ValueError("scales must be positive")
    scales = tuple(float(s) for s in scales)
    heom = heom or default_heom_options(cfg)
    if pi_amp is None:
        pi_amp = heom_pi_amp(cfg, heom)
    plan = default_ramsey_plan(grid=ramsey_grid)

    # Markovian reference ceiling for the gap sign
    mes = run_ramsey("lindblad", cfg, plan, pi_amp)
    mes_fit = fit_exp_ceiling(mes.sweep_values, mes.measured)
    ceiling_t2 = float(mes_fit.derived["t2_star"])

    entries = []
    for scale in sorted(scales):
        opts = HeomOptions(
            decomposition=heom.decomposition.scaled(scale),
            depth=heom.depth, terminator=heom.terminator,
        )
        ram = run_ramsey("heom", cfg, plan, pi_amp, heom=opts)
        fit = fit_biexp_revival(ram.sweep_values, ram.measured)
        t_aw = float(fit.derived["tau_aw"])
        entries.append({
            "scale": scale,
            "tau_aw": t_aw,
            "t2_star": float(fit.derived["t2_star"]),
            "guard_passed": bool(fit.guard.passed),
            "gap_sign": int(np.sign(t_aw - ceiling_t2)),
            "trace": [float(v) for v in ram.measured],
        })

    # refit cross-check at the largest scale: decompose the rescaled bath
    # from scratch and compare traces against the linear-scaling shortcut
    check_scale = max(scales)
    bath2 = dataclasses.replace(
        cfg.bath, amplitude_a0=cfg.bath.amplitude_a0 * check_scale
    )
    corr2 = correlation_function(bath2, default_correlation_grid())
    decomp2 = exp_decompose(corr2, k=len(heom.decomposition.modes),
                            real_decay=True)
    opts2 = HeomOptions(decomposition=decomp2, depth=heom.depth,
                        terminator=heom.terminator)
    ram2 = run_ramsey("heom", cfg, plan, pi_amp, heom=opts2)
    fit2 = fit_biexp_revival(ram2.sweep_values, ram2.measured)
    scaled_entry = next(e for e in entries if e["scale"] == check_scale)
    crosscheck = {
        "scale": check_scale,
        "tau_aw_refit": float(fit2.derived["tau_aw"]),
        "tau_aw_scaled": scaled_entry["tau_aw"],
        "max_trace_diff": _max_residual(scaled_entry["trace"], ram2.measured),
    }
    return {
        "delays_ns": [float(t) for t in plan.delays],
        "grid": ramsey_grid,
        "mesolve_ceiling_t2_star": ceiling_t2,
        "entries": entries,
        "refit_crosscheck": crosscheck,
        "gap_sign_constant": len({e["gap_sign"] for e in entries}) == 1,
        "tau_aw_monotone_decreasing": all(
            a["tau_aw"] > b["tau_aw"] for a, b in zip(entries, entries[1:])
        ),
    }


def run_l5_sanity(cfg: PlatformConfig, l5_trace=None, pi_amp=None,
                  heom: HeomOptions | None = None,
                  ramsey_grid: str = "dense") -> dict:
    """Refit the deepest-hierarchy Ramsey trace with richer decay families.

    A third exponential mode must come back negligible and a stretched
    exponential must not beat the biexponential, otherwise the two-mode
    reading of the revival is suspect.
    """
    if l5_trace is None:
        heom = heom or default_heom_options(cfg)
        if pi_amp is None:
            pi_amp = heom_pi_amp(cfg, heom)
        opts = HeomOptions(decomposition=heom.decomposition, depth=5,
                           terminator=heom.terminator)
        plan = default_ramsey_plan(grid=ramsey_grid)
        ram = run_ramsey("heom", cfg, plan, pi_amp, heom=opts)
        x, y = ram.sweep_values, ram.measured
    else:
        x, y = (np.asarray(v, dtype=float) for v in l5_trace)
    base = fit_biexp_revival(x, y)
    if not base.converged:
        raise AuditError("base biexponential fit did not converge")
    tri = fit_triexp_sanity(x, y, base=base)
    stretched = fit_stretched(x, y)
    return {
        "depth": 5,
        "a3_ratio": float(tri.derived["a3_ratio"]),
        "delta_r2": float(tri.derived["delta_r2"]),
        "tau_aw_ghost_gated": float(tri.derived["tau_aw"]),
        "tau_aw_biexp": float(base.derived["tau_aw"]),
        "biexp_r_squared": float(base.r_squared),
        "triexp_fallback_used": bool(tri.fallback_used),
        "stretched_beta": float(stretched.derived["beta"]),
        "stretched_r_squared": float(stretched.r_squared),
    }


def run_partial_trace_check(cfg: PlatformConfig, pi_amp=None,
                            heom: HeomOptions | None = None) -> PartialTraceRecord:
    """Post-pulse excited-population probes on both dissipative backends.

    A large 1 ns discrepancy puts the T1 amplitude deficit on the physical
    branch (bath-dressed initial state); a negligible one makes it a
    representation artifact.
    """
    heom = heom or default_heom_options(cfg)
    if pi_amp is None:
        pi_amp = heom_pi_amp(cfg, heom)
    plan = default_t1_plan()
    kw = {"probes": PROBE_TIMES}
    try:
        res_h = run_t1("heom", cfg, plan, pi_amp, heom=heom, **kw)
        res_m = run_t1("lindblad", cfg, plan, pi_amp, **kw)
    except Exception as exc:
        raise AuditError(f"probe evaluation failed: {exc}") from exc
    rho11_h = tuple(float(rho[1, 1].real) for _, rho in res_h.probe_states)
    rho11_m = tuple(float(rho[1, 1].real) for _, rho in res_m.probe_states)
    disc = tuple(abs(a - b) for a, b in zip(rho11_h, rho11_m))
    window = [v for t, v in zip(PROBE_TIMES, rho11_h) if 1.0 <= t <= 100.0]
    flat = float((max(window) - min(window)) / np.mean(window))
    return PartialTraceRecord(
        probe_times=PROBE_TIMES,
        rho11_heom=rho11_h,
        rho11_mesolve=rho11_m,
        discrepancy_per_delay=disc,
        branch=classify_branch(disc[0]),
        plateau_flatness=flat,
    )
