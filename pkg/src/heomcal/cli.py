"""Command-line driver: end-to-end runs, audits, and reporting.

Subcommands
-----------
run-dag        full protocol DAG over the selected backends, with fits,
               verdict matrix, bootstrap annotations, timing record, and
               per-figure CSV data
audit          convergence and control audits (depth sweep, amplitude
               sweep, deep-hierarchy sanity refits, partial-trace check)
bath-audit     bath correlation decomposition quality report
report         human-readable summary of a previous run directory

All scientific JSON is written deterministically (sorted keys, fixed
layout); wall-clock information lives only in dag_timing.json and the
run manifest, so reruns with the same seed are byte-identical elsewhere.
"""

from __future__ import annotations

import csv
import dataclasses
import datetime
import json
import sys
import traceback
from importlib import resources
from pathlib import Path

import click
import numpy as np

from . import __version__
from .audits import (
    run_a_sweep, run_l5_sanity, run_l_sweep, run_partial_trace_check,
    write_json,
)
from .bath import correlation_function, default_correlation_grid, exp_decompose
from .bootstrap import BootstrapSpec, bca_ci, independent_gap, paired_delta_ci
from .dag import GateRule, default_backend_dag, execute_dag
from .fits import fit_biexp_revival, fit_exp_ceiling, fit_t1
from .platform import ConfigError, load_platform, load_sections
from .protocols import canonical_backend, default_heom_options
from .schemas import validate_artifact
from .verdicts import (
    MatrixCell, VerdictThresholds, assemble_matrix, rabi_verdict,
    ramsey_verdict, t1_interpretation,
)

DEFAULT_PLATFORM = "tier1"
ALL_BACKENDS = ("unitary", "lindblad", "heom")


def _default_platform_path() -> Path:
    return Path(str(resources.files("heomcal").joinpath("configs/tier1.yaml")))


def _fail(out_dir: Path, command: str, exc: Exception) -> None:
    """Write a structured error artifact and exit nonzero."""
    payload = {
        "command": command,
        "error_type": type(exc).__name__,
        "message": str(exc),
        "traceback": traceback.format_exc().splitlines(),
    }
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "error.json", "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError:
        pass
    click.echo(f"error [{type(exc).__name__}]: {exc}", err=True)
    sys.exit(1)


def _manifest(command: str, platform_path, out_dir: Path, seed,
              artifacts, started: str) -> None:
    payload = {
        "command": command,
        "platform_path": str(platform_path),
        "out_dir": str(out_dir),
        "seed": seed,
        "tool_version": __version__,
        "started": started,
        "finished": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "artifacts": sorted(str(a) for a in artifacts),
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _round_floats(obj, digits=12):
    """Clamp float noise so deterministic reruns serialize identically."""
    if isinstance(obj, dict):
        return {k: _round_floats(v, digits) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v, digits) for v in obj]
    if isinstance(obj, float):
        return round(obj, digits)
    return obj


@click.group()
@click.version_option(version=__version__)
def main():
    """Calibration-loop simulator with bath-structure diagnostics."""


platform_opt = click.option(
    "--platform", "platform_path", type=click.Path(exists=True, dir_okay=False),
    default=None, help="Platform config YAML (default: shipped tier1).",
)
out_opt = click.option(
    "--out", "out_dir", type=click.Path(file_okay=False), default="out",
    show_default=True, help="Output directory for artifacts.",
)
seed_opt = click.option("--seed", type=int, default=1234, show_default=True)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([f"{v:.12g}" if isinstance(v, float) else v
                             for v in row])


def _cell_observables(protocol: str, fits: dict) -> dict:
    if protocol == "rabi":
        fit = fits["rabi_cosine"]
        return {"pi_amp": fit.derived["pi_amp"], "p_max": fit.derived["p_max"]}
    if protocol == "ramsey":
        fit = next(iter(fits.values()))
        obs = {"t2_star": fit.derived["t2_star"]}
        obs["tau_aw"] = fit.derived.get("tau_aw", fit.derived["t2_star"])
        obs["decay_shape"] = 1.0 if fit.family == "exp_ceiling" else 2.0
        return obs
    fit = fits["constrained_a_free"]
    return {"t1": fit.derived["t1"], "a": fit.derived["a"],
            "beta": fit.derived["beta"]}


def _bootstrap_annotations(records, seed: int, b: int) -> tuple[dict, dict]:
    """Bootstrap CIs on the headline scalars, keyed by annotation name."""
    spec = lambda off: BootstrapSpec(resamples=b, seed=seed + off)  # noqa: E731
    ann: dict = {}
    gaps: dict = {}

    def data(nid):
        rec = records[nid]
        return (np.asarray(rec.result.sweep_values, float),
                np.asarray(rec.result.measured, float))

    def stat_ceiling(xs, ys):
        return fit_exp_ceiling(xs, ys).derived["t2_star"]

    def stat_biexp_t2(xs, ys):
        fit = fit_biexp_revival(xs, ys, restarts="fast")
        if fit.guard is None or not fit.guard.passed:
            raise RuntimeError("guard rejected resample")
        return fit.derived["t2_star"]

    def stat_a(xs, ys):
        return fit_t1(xs, ys, mode="constrained_a_free").derived["a"]

    have = lambda nid: nid in records and records[nid].status == "done"  # noqa: E731

    if have("lindblad.ramsey"):
        ann["ramsey_t2_mesolve"] = bca_ci(
            data("lindblad.ramsey"), stat_ceiling, spec(1))
    if have("heom.ramsey_dense"):
        ann["ramsey_t2_heom"] = bca_ci(
            data("heom.ramsey_dense"), stat_biexp_t2, spec(2))
    if "ramsey_t2_mesolve" in ann and "ramsey_t2_heom" in ann:
        gaps["t2_ratio_lower_bound"] = independent_gap(
            ann["ramsey_t2_mesolve"], ann["ramsey_t2_heom"],
            "ratio_lower_bound")
    if have("lindblad.t1"):
        ann["t1_a_mesolve"] = bca_ci(data("lindblad.t1"), stat_a, spec(3))
    if have("heom.t1"):
        ann["t1_a_heom"] = bca_ci(data("heom.t1"), stat_a, spec(4))
    if "t1_a_mesolve" in ann and "t1_a_heom" in ann:
        gaps["a_difference_lower_bound"] = independent_gap(
            ann["t1_a_mesolve"], ann["t1_a_heom"], "difference_lower_bound")

    if have("lindblad.rabi") and have("heom.rabi"):
        from .fits import fit_rabi_cosine

        def stat_pi(xs, ys):
            return fit_rabi_cosine(xs, ys).derived["pi_amp"]

        def stat_pmax(xs, ys):
            return fit_rabi_cosine(xs, ys).derived["p_max"]

        ann["rabi_delta_pi_amp"] = paired_delta_ci(
            data("lindblad.rabi"), data("heom.rabi"), stat_pi, spec(5))
        ann["rabi_delta_p_max"] = paired_delta_ci(
            data("lindblad.rabi"), data("heom.rabi"), stat_pmax, spec(6))
    return ann, gaps


@main.command("run-dag")
@platform_opt
@out_opt
@seed_opt
@click.option("--backend", "backends", multiple=True,
              help="Restrict to one or more backends "
                   "(unitary/sesolve, lindblad/mesolve, heom).")
@click.option("--executor", type=click.Choice(["thread", "process", "inline"]),
              default="thread", show_default=True)
@click.option("--bootstrap-b", type=int, default=500, show_default=True,
              help="Bootstrap resamples per interval.")
@click.option("--dump-traces", is_flag=True,
              help="Embed raw sweep traces in the run record.")
def cmd_run_dag(platform_path, out_dir, seed, backends, executor,
                bootstrap_b, dump_traces):
    """Run the calibration DAG and emit the full comparison record."""
    out = Path(out_dir)
    started = _now()
    try:
        path = Path(platform_path) if platform_path else _default_platform_path()
        cfg = load_platform(path)
        sections = load_sections(path)
        thresholds = VerdictThresholds.from_config(sections)
        gate_r2 = float(
            (sections.get("dag") or {}).get("gate_min_r_squared", 0.9))
        depth = int((sections.get("heom") or {}).get("depth", 3))
        modes = int((sections.get("heom") or {}).get("modes", 3))
        tags = tuple(dict.fromkeys(
            canonical_backend(t) for t in backends)) or ALL_BACKENDS

        heom_opts = (default_heom_options(cfg, depth=depth, k=modes)
                     if "heom" in tags else None)
        nodes = []
        for tag in tags:
            for node in default_backend_dag(tag):
                if node.gate is not None:
                    node = dataclasses.replace(node, gate=GateRule(
                        min_r_squared=gate_r2,
                        required_outputs=node.gate.required_outputs))
                nodes.append(node)
        run = execute_dag(nodes, cfg, heom=heom_opts, executor_mode=executor)
        records = run.records

        cells = []
        for nid, rec in sorted(records.items()):
            if rec.status != "done" or rec.node.node_id.endswith("ramsey_dense"):
                continue
            cells.append(MatrixCell(
                protocol=rec.node.protocol, backend=rec.node.backend,
                observables=_cell_observables(rec.node.protocol, rec.fits),
            ))

        ann, gaps = _bootstrap_annotations(records, seed, bootstrap_b)

        record: dict = {
            "seed": seed,
            "backends": list(tags),
            "cells": [c.to_dict() for c in cells],
            "annotations": {k: v.to_dict() for k, v in ann.items()},
            "gaps": gaps,
            "node_status": {nid: records[nid].status for nid in sorted(records)},
        }

        if set(tags) == set(ALL_BACKENDS) and all(
                records[n].status == "done" for n in records):
            probe = run_partial_trace_check(
                cfg, pi_amp=float(
                    next(iter(records["heom.rabi"].fits.values()))
                    .derived["pi_amp"]),
                heom=heom_opts)
            heom_dense_fit = next(
                iter(records["heom.ramsey_dense"].fits.values()))
            mes_ramsey_fit = next(
                iter(records["lindblad.ramsey"].fits.values()))
            heom_common_fit = next(
                iter(records["heom.ramsey"].fits.values()))
            verdicts = [
                ramsey_verdict(heom_dense_fit, mes_ramsey_fit, thresholds),
                rabi_verdict(
                    next(iter(records["heom.rabi"].fits.values())),
                    next(iter(records["lindblad.rabi"].fits.values())),
                    thresholds),
                t1_interpretation(
                    records["heom.t1"].fits["constrained_a_free"],
                    records["lindblad.t1"].fits["constrained_a_free"],
                    probe, thresholds),
            ]
            matrix = assemble_matrix(cells, verdicts)
            record["delta_heom_minus_mesolve"] = matrix["delta_heom_minus_mesolve"]
            record["verdicts"] = matrix["verdicts"]
            # common-grid hierarchical T2* logged alongside the dense fit
            record["verdicts"][0]["evidence"]["t2_star_heom_common_grid"] = (
                float(heom_common_fit.derived["t2_star"]))
            record["partial_trace"] = probe.to_dict()

        if dump_traces:
            record["traces"] = {
                nid: {
                    "sweep": [float(v) for v in rec.result.sweep_values],
                    "measured": [float(v) for v in rec.result.measured],
                }
                for nid, rec in sorted(records.items()) if rec.status == "done"
            }

        record = _round_floats(record)
        timing = run.timing.to_dict()
        validate_artifact("run_record.json", record)
        validate_artifact("dag_timing.json", timing)

        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "run_record.json", record)
        write_json(out / "dag_timing.json", timing)
        artifacts = [out / "run_record.json", out / "dag_timing.json"]
        artifacts += _figure_csvs(out, records)
        _manifest("run-dag", path, out, seed, artifacts + [out / "manifest.json"],
                  started)
        click.echo(f"run-dag complete: {len(cells)} matrix cells -> {out}")
    except Exception as exc:  # noqa: BLE001 - converted to structured error
        _fail(out, "run-dag", exc)


def _figure_csvs(out: Path, records) -> list:
    """Plot-ready CSVs: one file per figure, first column is the x axis."""
    written = []

    def collect(protocol, suffix=""):
        cols = {}
        x = None
        for nid, rec in sorted(records.items()):
            if rec.status != "done" or rec.node.protocol != protocol:
                continue
            if bool(nid.endswith("ramsey_dense")) != bool(suffix):
                continue
            x = np.asarray(rec.result.sweep_values, float)
            cols[f"pop1_{rec.node.backend}"] = np.asarray(
                rec.result.measured, float)
        return x, cols

    specs = [
        ("fig_rabi_scan.csv", "rabi", "amplitude", ""),
        ("fig_ramsey_comparison.csv", "ramsey", "delay_ns", ""),
        ("fig_ramsey_dense_heom.csv", "ramsey", "delay_ns", "dense"),
        ("fig_t1_occupation.csv", "t1", "delay_ns", ""),
    ]
    for fname, protocol, xname, suffix in specs:
        x, cols = collect(protocol, suffix)
        if x is None:
            continue
        header = [xname] + list(cols)
        rows = [[float(x[i])] + [float(c[i]) for c in cols.values()]
                for i in range(len(x))]
        _write_csv(out / fname, header, rows)
        written.append(out / fname)
    return written


def _parse_depths(text: str) -> tuple:
    depths = tuple(int(v) for v in text.replace(",", " ").split())
    if len(depths) < 2:
        raise click.BadParameter("depth sweep needs at least two depths")
    return depths


@main.command("audit")
@platform_opt
@out_opt
@seed_opt
@click.option("--l-sweep", "l_sweep", default=None,
              help="Comma-separated hierarchy depths, e.g. 2,3,4,5.")
@click.option("--depths", "depths_alias", default=None,
              help="Alias for --l-sweep.")
@click.option("--a-sweep", is_flag=True, help="Bath-amplitude sweep.")
@click.option("--l5-sanity", is_flag=True, help="Deep-hierarchy refit checks.")
@click.option("--partial-trace", is_flag=True, help="Post-pulse probe control.")
@click.option("--t1-points", type=click.Choice(["8", "16"]), default="8",
              show_default=True)
def cmd_audit(platform_path, out_dir, seed, l_sweep, depths_alias, a_sweep,
              l5_sanity, partial_trace, t1_points):
    """Run convergence and control audits; emit their JSON artifacts."""
    out = Path(out_dir)
    started = _now()
    try:
        path = Path(platform_path) if platform_path else _default_platform_path()
        cfg = load_platform(path)
        sections = load_sections(path)
        depth = int((sections.get("heom") or {}).get("depth", 3))
        modes = int((sections.get("heom") or {}).get("modes", 3))
        depth_text = l_sweep or depths_alias
        if not any((depth_text, a_sweep, l5_sanity, partial_trace)):
            raise click.UsageError(
                "select at least one audit: --l-sweep/--depths, --a-sweep, "
                "--l5-sanity, --partial-trace")
        depths = _parse_depths(depth_text) if depth_text else None
        heom = default_heom_options(cfg, depth=depth, k=modes)
        from .audits import heom_pi_amp

        pi_amp = heom_pi_amp(cfg, heom)
        out.mkdir(parents=True, exist_ok=True)
        artifacts = []
        if depth_text:
            rec = run_l_sweep(cfg, depths=depths,
                              pi_amp=pi_amp, heom=heom,
                              t1_points=int(t1_points))
            payload = _round_floats(rec.to_dict())
            validate_artifact("heom_L_sweep.json", payload)
            write_json(out / "heom_L_sweep.json", payload)
            artifacts.append(out / "heom_L_sweep.json")
        if a_sweep:
            payload = _round_floats(run_a_sweep(cfg, pi_amp=pi_amp, heom=heom))
            validate_artifact("ramsey_A_sweep.json", payload)
            write_json(out / "ramsey_A_sweep.json", payload)
            artifacts.append(out / "ramsey_A_sweep.json")
        if l5_sanity:
            payload = _round_floats(run_l5_sanity(cfg, pi_amp=pi_amp, heom=heom))
            validate_artifact("L5_sanity_refit.json", payload)
            write_json(out / "L5_sanity_refit.json", payload)
            artifacts.append(out / "L5_sanity_refit.json")
        if partial_trace:
            rec = run_partial_trace_check(cfg, pi_amp=pi_amp, heom=heom)
            payload = _round_floats(rec.to_dict())
            validate_artifact("t1_partial_trace_check.json", payload)
            write_json(out / "t1_partial_trace_check.json", payload)
            artifacts.append(out / "t1_partial_trace_check.json")
        _manifest("audit", path, out, seed,
                  artifacts + [out / "manifest.json"], started)
        click.echo(f"audit complete: {len(artifacts)} artifacts -> {out}")
    except click.UsageError:
        raise
    except Exception as exc:  # noqa: BLE001
        _fail(out, "audit", exc)


@main.command("bath-audit")
@platform_opt
@out_opt
@click.option("--modes", "k", type=int, default=None,
              help="Number of decomposition modes (default: config).")
def cmd_bath_audit(platform_path, out_dir, k):
    """Decompose the bath correlation and report the fit residual."""
    out = Path(out_dir)
    started = _now()
    try:
        path = Path(platform_path) if platform_path else _default_platform_path()
        cfg = load_platform(path)
        sections = load_sections(path)
        if k is None:
            k = int((sections.get("heom") or {}).get("modes", 3))
        times = default_correlation_grid()
        corr = correlation_function(cfg.bath, times)
        decomp = exp_decompose(corr, k=k, real_decay=True)
        payload = _round_floats({
            "k": k,
            "rel_rms_residual": float(decomp.rel_rms_residual),
            "modes": [
                {"amplitude_re": float(c.real), "amplitude_im": float(c.imag),
                 "rate_re": float(nu.real), "rate_im": float(nu.imag)}
                for c, nu in decomp.modes
            ],
            "grid_t_max_ns": float(times[-1]),
            "grid_points": int(len(times)),
        })
        validate_artifact("bath_audit.json", payload)
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "bath_audit.json", payload)
        _write_csv(
            out / "fig_bath_correlation.csv",
            ["t_ns", "corr_re", "corr_im"],
            [[float(t), float(c.real), float(c.imag)]
             for t, c in zip(corr.times, corr.values)],
        )
        _manifest("bath-audit", path, out, None,
                  [out / "bath_audit.json", out / "fig_bath_correlation.csv",
                   out / "manifest.json"], started)
        click.echo(f"bath-audit complete: residual "
                   f"{decomp.rel_rms_residual:.3e} -> {out}")
    except Exception as exc:  # noqa: BLE001
        _fail(out, "bath-audit", exc)


@main.command("report")
@click.option("--out", "out_dir", type=click.Path(file_okay=False),
              default="out", show_default=True,
              help="Run directory containing run_record.json.")
def cmd_report(out_dir):
    """Print a human-readable summary of a completed run directory."""
    out = Path(out_dir)
    record_path = out / "run_record.json"
    if not record_path.exists():
        click.echo(f"no run record at {record_path}", err=True)
        sys.exit(1)
    with open(record_path) as fh:
        record = json.load(fh)
    click.echo(f"run record: {record_path}")
    click.echo(f"backends: {', '.join(record['backends'])}  "
               f"seed: {record['seed']}")
    click.echo("matrix cells:")
    for cell in record["cells"]:
        obs = "  ".join(f"{k}={v:.6g}" for k, v in cell["observables"].items())
        click.echo(f"  {cell['protocol']:<7} {cell['backend']:<9} {obs}")
    for verdict in record.get("verdicts", []):
        click.echo(f"verdict[{verdict['protocol']}]: {verdict['label']}")
    for name, ci in record.get("annotations", {}).items():
        p = f"  p={ci['p_value']:.3g}" if ci.get("p_value") is not None else ""
        click.echo(f"ci[{name}]: {ci['point']:.6g} "
                   f"[{ci['lo']:.6g}, {ci['hi']:.6g}] "
                   f"valid_rate={ci['valid_rate']:.2f}{p}")
    for name, value in record.get("gaps", {}).items():
        click.echo(f"gap[{name}]: {value:.6g}")
    timing_path = out / "dag_timing.json"
    if timing_path.exists():
        with open(timing_path) as fh:
            timing = json.load(fh)
        click.echo(
            f"timing: parallel {timing['parallel_s']:.2f}s "
            f"serial {timing['serial_s']:.2f}s "
            f"critical path {timing['critical_path_s']:.2f}s "
            f"avg latency {timing['avg_latency_us']:.0f}us")


if __name__ == "__main__":
    main()
