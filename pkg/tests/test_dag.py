"""Tests for DAG scheduling, gating, and timing aggregation."""

import dataclasses

import pytest

from heomcal.dag import (
    INVOCATION_COUNTS, DagNode, GateRule, default_backend_dag, execute_dag,
    timing_metrics,
)
from heomcal.fits import FitResult


def _fit(r_squared=0.99, derived=None):
    return FitResult(
        family="rabi_cosine",
        params={"a": 1.0},
        r_squared=r_squared,
        derived=derived if derived is not None else {"pi_amp": 0.6},
    )


# ---------------------------------------------------------------- timing


def test_timing_metrics_reference_arithmetic():
    walls = {"rabi": 6.56, "ramsey": 36.85, "t1": 41.48}
    deps = {"rabi": (), "ramsey": ("rabi",), "t1": ("rabi",)}
    lats = {"rabi": 120.0, "ramsey": 150.0, "t1": 90.0}
    rec = timing_metrics(walls, deps, lats, parallel_time=48.042)
    assert rec.serial_time == pytest.approx(6.56 + 36.85 + 41.48)
    assert rec.critical_path_time == pytest.approx(6.56 + 41.48)
    assert rec.overhead_fraction == pytest.approx(
        (48.042 - 48.04) / 84.89, rel=1e-9
    )
    assert rec.avg_latency_us == pytest.approx(120.0)
    assert rec.max_latency_us == pytest.approx(150.0)


def test_timing_metrics_single_node():
    rec = timing_metrics({"a": 2.5}, {"a": ()}, {"a": 10.0}, parallel_time=2.6)
    assert rec.serial_time == pytest.approx(2.5)
    assert rec.critical_path_time == pytest.approx(2.5)
    assert rec.overhead_fraction == pytest.approx(0.1 / 2.5)


def test_timing_metrics_two_equal_branches():
    walls = {"a": 1.0, "b": 10.0, "c": 10.0}
    deps = {"a": (), "b": ("a",), "c": ("a",)}
    rec = timing_metrics(walls, deps, {}, parallel_time=11.0)
    assert rec.critical_path_time == pytest.approx(11.0)
    assert rec.serial_time == pytest.approx(21.0)
    assert rec.overhead_fraction == pytest.approx(0.0, abs=1e-12)
    assert rec.avg_latency_us == 0.0


def test_timing_metrics_empty():
    rec = timing_metrics({}, {}, {}, parallel_time=0.0)
    assert rec.serial_time == 0.0
    assert rec.overhead_fraction == 0.0


def test_timing_record_serialization_shape():
    walls = {"b": 2.0, "a": 1.0}
    rec = timing_metrics(walls, {"a": (), "b": ("a",)}, {"a": 5.0, "b": 7.0},
                         parallel_time=3.0, executor_mode="inline",
                         max_workers=1)
    d = rec.to_dict()
    assert [n["id"] for n in d["nodes"]] == ["a", "b"]
    assert d["nodes"][0] == {"id": "a", "wall_s": 1.0, "sched_latency_us": 5.0}
    assert set(d) == {
        "nodes", "serial_s", "parallel_s", "critical_path_s",
        "overhead_fraction", "avg_latency_us", "max_latency_us",
        "executor_mode", "max_workers",
    }


# --------------------------------------------------------------- topology


def test_default_dag_shapes():
    uni = default_backend_dag("unitary")
    assert [n.node_id for n in uni] == ["unitary.rabi", "unitary.ramsey"]
    lind = default_backend_dag("lindblad")
    assert [n.node_id for n in lind] == [
        "lindblad.rabi", "lindblad.ramsey", "lindblad.t1",
    ]
    heom = default_backend_dag("heom")
    assert [n.node_id for n in heom] == [
        "heom.rabi", "heom.ramsey", "heom.t1", "heom.ramsey_dense",
    ]
    dense = heom[-1]
    assert dense.plan_kwargs == {"grid": "dense"}
    t1 = heom[2]
    assert len(t1.probe_times) == 6


def test_unknown_protocol_rejected():
    with pytest.raises(ValueError, match="unknown protocol"):
        DagNode("x", "ghz", "unitary")


def test_unknown_dependency_rejected(cfg):
    nodes = [DagNode("a", "rabi", "unitary", deps=("missing",))]
    with pytest.raises(ValueError, match="unknown"):
        execute_dag(nodes, cfg, executor_mode="inline")


def test_invalid_executor_mode_rejected(cfg):
    nodes = [DagNode("a", "rabi", "unitary")]
    with pytest.raises(ValueError, match="executor mode"):
        execute_dag(nodes, cfg, executor_mode="mpi")


# ------------------------------------------------------------------ gates


def test_gate_rule_passes_good_fit():
    ok, reasons = GateRule().check(_fit())
    assert ok and reasons == []


def test_gate_rule_rejects_low_r_squared():
    ok, reasons = GateRule(min_r_squared=0.999).check(_fit(r_squared=0.5))
    assert not ok
    assert any("r_squared" in r for r in reasons)


def test_gate_rule_rejects_missing_output():
    ok, reasons = GateRule().check(_fit(derived={}))
    assert not ok
    assert any("pi_amp" in r for r in reasons)


# --------------------------------------------------------------- execution


@pytest.fixture(scope="module")
def unitary_run(cfg):
    INVOCATION_COUNTS.clear()
    return execute_dag(default_backend_dag("unitary"), cfg,
                       executor_mode="inline")


def test_unitary_dag_all_done(unitary_run):
    statuses = {nid: r.status for nid, r in unitary_run.records.items()}
    assert statuses == {"unitary.rabi": "done", "unitary.ramsey": "done"}
    rabi = unitary_run.records["unitary.rabi"]
    assert "pi_amp" in rabi.fits["rabi_cosine"].derived
    assert unitary_run.timing.parallel_time > 0.0
    assert unitary_run.timing.executor_mode == "inline"


def test_gate_failure_short_circuits_downstream(cfg):
    # an unattainable gate must skip the Ramsey node without invoking it
    strict = GateRule(min_r_squared=1.0 + 1e-9)
    nodes = [
        dataclasses.replace(n, gate=strict) if n.gate is not None else n
        for n in default_backend_dag("unitary")
    ]
    nodes = [dataclasses.replace(n, node_id=f"gated_{n.node_id}",
                                 deps=tuple(f"gated_{d}" for d in n.deps))
             for n in nodes]
    INVOCATION_COUNTS.clear()
    run = execute_dag(nodes, cfg, executor_mode="inline")
    assert run.records["gated_unitary.rabi"].status == "done"
    ram = run.records["gated_unitary.ramsey"]
    assert ram.status == "gated_skip"
    assert ram.gate_reasons
    assert INVOCATION_COUNTS["gated_unitary.ramsey"] == 0
    assert INVOCATION_COUNTS["gated_unitary.rabi"] == 1


def test_gated_skip_cascades_to_dependents(cfg):
    strict = GateRule(min_r_squared=1.0 + 1e-9)
    nodes = [
        DagNode("c.rabi", "rabi", "unitary"),
        DagNode("c.ramsey", "ramsey", "unitary", deps=("c.rabi",),
                gate=strict),
        DagNode("c.ramsey2", "ramsey", "unitary", deps=("c.ramsey",)),
    ]
    INVOCATION_COUNTS.clear()
    run = execute_dag(nodes, cfg, executor_mode="inline")
    assert run.records["c.ramsey"].status == "gated_skip"
    assert run.records["c.ramsey2"].status == "gated_skip"
    assert INVOCATION_COUNTS["c.ramsey2"] == 0


def test_failed_node_skips_dependents(cfg):
    # an impossible plan makes the upstream node fail at execution time
    nodes = [
        DagNode("f.rabi", "rabi", "no_such_backend"),
        DagNode("f.ramsey", "ramsey", "unitary", deps=("f.rabi",)),
    ]
    run = execute_dag(nodes, cfg, executor_mode="inline")
    assert run.records["f.rabi"].status == "failed"
    assert run.records["f.rabi"].gate_reasons
    assert run.records["f.ramsey"].status == "skipped"


def test_scientific_output_independent_of_executor(cfg, unitary_run):
    run_thread = execute_dag(default_backend_dag("unitary"), cfg,
                             executor_mode="thread", max_workers=2)
    for nid, rec in unitary_run.records.items():
        other = run_thread.records[nid]
        assert other.status == rec.status
        for fam, fit in rec.fits.items():
            assert other.fits[fam].params == fit.params
            assert other.fits[fam].derived == fit.derived
