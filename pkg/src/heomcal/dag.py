"""Dependency-aware execution of the calibration protocol graph.

The default per-backend graph is a Rabi amplitude sweep feeding a Ramsey
delay sweep and a T1 relaxation sweep in parallel.  Downstream nodes are
gated on the quality of the upstream calibration fit: a gate failure skips
the dependents instead of running them against a bad pi-pulse amplitude.

Simulation work runs in a worker pool (process, thread, or inline) while
all fitting happens deterministically in the parent, so the scientific
output is independent of the executor and only the timing record varies.
"""

from __future__ import annotations

import collections
import os
import time
from concurrent.futures import (
    FIRST_COMPLETED, Future, ProcessPoolExecutor, ThreadPoolExecutor, wait,
)
from dataclasses import dataclass, field

from .fits import (
    FitResult, fit_biexp_revival, fit_exp_ceiling, fit_rabi_cosine, fit_t1,
)
from .protocols import (
    ProtocolResult, default_rabi_plan, default_ramsey_plan, default_t1_plan,
    run_rabi, run_ramsey, run_t1,
)

EXECUTOR_MODES = ("process", "thread", "inline")
WORKERS_ENV_VAR = "HEOMCAL_WORKERS"
DEFAULT_PROBE_TIMES = (1.0, 2.0, 5.0, 10.0, 50.0, 100.0)

# per-process tally of protocol invocations, keyed by node id; with the
# inline or thread executor this is visible to the caller and lets tests
# assert that gated nodes were never launched
INVOCATION_COUNTS: collections.Counter = collections.Counter()


@dataclass(frozen=True)
class GateRule:
    """Quality gate evaluated on every upstream fit before a node runs."""

    min_r_squared: float = 0.9
    required_outputs: tuple = ("pi_amp",)

    def check(self, fit: FitResult) -> tuple[bool, list]:
        reasons = []
        if fit.r_squared < self.min_r_squared:
            reasons.append(
                f"r_squared {fit.r_squared:.4f} below {self.min_r_squared}"
            )
        known = dict(fit.params) | dict(fit.derived)
        for key in self.required_outputs:
            if key not in known:
                reasons.append(f"missing required output {key!r}")
        return (not reasons), reasons


@dataclass(frozen=True)
class DagNode:
    node_id: str
    protocol: str  # rabi | ramsey | t1
    backend: str
    deps: tuple = ()
    gate: GateRule | None = None
    plan_kwargs: dict = field(default_factory=dict)
    probe_times: tuple = ()

    def __post_init__(self):
        if self.protocol not in ("rabi", "ramsey", "t1"):
            raise ValueError(f"unknown protocol {self.protocol!r}")


@dataclass(frozen=True)
class TimingRecord:
    per_node_wall: dict
    sched_latencies_us: dict
    serial_time: float
    parallel_time: float
    critical_path_time: float
    overhead_fraction: float
    avg_latency_us: float
    max_latency_us: float
    executor_mode: str
    max_workers: int

    def to_dict(self) -> dict:
        return {
            "nodes": [
                {"id": nid, "wall_s": wall,
                 "sched_latency_us": self.sched_latencies_us.get(nid, 0.0)}
                for nid, wall in sorted(self.per_node_wall.items())
            ],
            "serial_s": self.serial_time,
            "parallel_s": self.parallel_time,
            "critical_path_s": self.critical_path_time,
            "overhead_fraction": self.overhead_fraction,
            "avg_latency_us": self.avg_latency_us,
            "max_latency_us": self.max_latency_us,
            "executor_mode": self.executor_mode,
            "max_workers": self.max_workers,
        }


@dataclass
class NodeRecord:
    node: DagNode
    status: str = "pending"  # pending | done | gated_skip | failed | skipped
    result: ProtocolResult | None = None
    fits: dict = field(default_factory=dict)
    gate_reasons: list = field(default_factory=list)
    wall: float = 0.0
    sched_latency_us: float = 0.0


@dataclass
class DagRunRecord:
    records: dict
    timing: TimingRecord


def default_backend_dag(backend: str) -> list:
    """Rabi -> {Ramsey || T1} graph for one backend.

    The unitary backend has no relaxation channel, so its T1 node is
    omitted.  The hierarchical backend carries an extra dense-grid Ramsey
    node whose fine early-time sampling anchors the revival fit.
    """
    gate = GateRule()
    nodes = [
        DagNode(f"{backend}.rabi", "rabi", backend),
        DagNode(f"{backend}.ramsey", "ramsey", backend,
                deps=(f"{backend}.rabi",), gate=gate),
    ]
    if backend != "unitary":
        nodes.append(DagNode(
            f"{backend}.t1", "t1", backend, deps=(f"{backend}.rabi",),
            gate=gate, probe_times=DEFAULT_PROBE_TIMES,
        ))
    if backend == "heom":
        nodes.append(DagNode(
            f"{backend}.ramsey_dense", "ramsey", backend,
            deps=(f"{backend}.rabi",), gate=gate,
            plan_kwargs={"grid": "dense"},
        ))
    return nodes


def resolve_workers(max_workers=None) -> int:
    if max_workers is not None:
        return int(max_workers)
    env = os.environ.get(WORKERS_ENV_VAR)
    if env:
        return max(1, int(env))
    # the default graphs have at most four concurrently ready nodes; a
    # mild thread oversubscription beats queue-wait on small hosts
    return max(4, os.cpu_count() or 1)


def _node_plan(node: DagNode, cfg):
    if node.protocol == "rabi":
        return default_rabi_plan(cfg, **node.plan_kwargs)
    if node.protocol == "ramsey":
        return default_ramsey_plan(**node.plan_kwargs)
    return default_t1_plan(**node.plan_kwargs)


def _worker_run(payload):
    """Run one protocol sweep; executes inside the worker pool."""
    node, cfg, plan, pi_amp, heom = payload
    INVOCATION_COUNTS[node.node_id] += 1
    t_start = time.perf_counter()
    if node.protocol == "rabi":
        result = run_rabi(node.backend, cfg, plan, heom=heom)
    elif node.protocol == "ramsey":
        result = run_ramsey(node.backend, cfg, plan, pi_amp, heom=heom)
    else:
        result = run_t1(node.backend, cfg, plan, pi_amp,
                        probes=node.probe_times, heom=heom)
    t_end = time.perf_counter()
    return result, t_start, t_end


def fit_node(node: DagNode, result: ProtocolResult) -> dict:
    """Parent-side fits for a completed node, keyed by fit family."""
    x = result.sweep_values
    y = result.measured
    if node.protocol == "rabi":
        return {"rabi_cosine": fit_rabi_cosine(x, y)}
    if node.protocol == "ramsey":
        if node.backend == "heom":
            return {"biexp_revival": fit_biexp_revival(x, y)}
        return {"exp_ceiling": fit_exp_ceiling(x, y)}
    return {
        "constrained_a_free": fit_t1(x, y, mode="constrained_a_free"),
        "constrained_a_pinned": fit_t1(x, y, mode="constrained_a_pinned"),
        "free_beta_a_pinned": fit_t1(x, y, mode="free_beta_a_pinned"),
    }


def _primary_fit(record: NodeRecord) -> FitResult:
    return next(iter(record.fits.values()))


def _make_executor(mode: str, workers: int):
    if mode == "process":
        return ProcessPoolExecutor(max_workers=workers)
    if mode == "thread":
        return ThreadPoolExecutor(max_workers=workers)
    return None


def _noop():
    return None


def execute_dag(nodes, cfg, heom=None, executor_mode="thread",
                max_workers=None) -> DagRunRecord:
    """Execute a protocol DAG and return results, fits, and timing.

    Nodes become ready when all dependencies are done and every gated
    dependency fit passes the node's gate rule; gate failures mark the
    node gated_skip without invoking its protocol.  Scientific outputs
    are identical across executor modes.
    """
    if executor_mode not in EXECUTOR_MODES:
        raise ValueError(f"unknown executor mode {executor_mode!r}")
    byid = {n.node_id: n for n in nodes}
    for n in nodes:
        for d in n.deps:
            if d not in byid:
                raise ValueError(f"node {n.node_id} depends on unknown {d!r}")
    records = {n.node_id: NodeRecord(node=n) for n in nodes}
    workers = resolve_workers(max_workers)
    pool = _make_executor(executor_mode, workers)
    if executor_mode == "process":
        # fault the workers in before timing starts
        wait([pool.submit(_noop) for _ in range(workers)])

    pending = {n.node_id for n in nodes}
    running: dict[Future, tuple[str, float]] = {}
    t0 = time.perf_counter()

    def pi_amp_for(node: DagNode):
        for d in node.deps:
            rec = records[d]
            if rec.node.protocol == "rabi" and rec.status == "done":
                return float(_primary_fit(rec).derived["pi_amp"])
        return None

    def try_launch():
        for nid in sorted(pending):
            node = byid[nid]
            dep_status = [records[d].status for d in node.deps]
            if any(s in ("failed", "skipped") for s in dep_status):
                records[nid].status = "skipped"
                pending.discard(nid)
                continue
            if any(s == "gated_skip" for s in dep_status):
                records[nid].status = "gated_skip"
                records[nid].gate_reasons = ["upstream node was gated"]
                pending.discard(nid)
                continue
            if not all(s == "done" for s in dep_status):
                continue
            if node.gate is not None:
                reasons = []
                for d in node.deps:
                    ok, why = node.gate.check(_primary_fit(records[d]))
                    if not ok:
                        reasons.extend(f"{d}: {w}" for w in why)
                if reasons:
                    records[nid].status = "gated_skip"
                    records[nid].gate_reasons = reasons
                    pending.discard(nid)
                    continue
            payload = (node, cfg, _node_plan(node, cfg), pi_amp_for(node), heom)
            pending.discard(nid)
            ready_at = time.perf_counter()
            if pool is None:
                fut = Future()
                try:
                    fut.set_result(_worker_run(payload))
                except Exception as exc:  # noqa: BLE001 - mirrors pool path
                    fut.set_exception(exc)
            else:
                fut = pool.submit(_worker_run, payload)
            running[fut] = (nid, ready_at)

    try_launch()
    while running:
        done_set, _ = wait(list(running), return_when=FIRST_COMPLETED)
        for fut in done_set:
            nid, ready_at = running.pop(fut)
            rec = records[nid]
            try:
                result, t_start, t_end = fut.result()
            except Exception as exc:  # noqa: BLE001 - recorded, not raised
                rec.status = "failed"
                rec.gate_reasons = [f"execution error: {exc}"]
                continue
            rec.result = result
            rec.wall = t_end - t_start
            rec.sched_latency_us = max(0.0, (t_start - ready_at) * 1e6)
            rec.fits = fit_node(rec.node, result)
            rec.status = "done"
        try_launch()
    parallel_time = time.perf_counter() - t0
    if pool is not None:
        pool.shutdown()

    walls = {nid: r.wall for nid, r in records.items() if r.status == "done"}
    lats = {nid: r.sched_latency_us
            for nid, r in records.items() if r.status == "done"}
    deps = {nid: byid[nid].deps for nid in walls}
    timing = timing_metrics(walls, deps, lats, parallel_time,
                            executor_mode=executor_mode, max_workers=workers)
    return DagRunRecord(records=records, timing=timing)


def timing_metrics(walls: dict, deps: dict, latencies_us: dict,
                   parallel_time: float, executor_mode: str = "thread",
                   max_workers: int = 1) -> TimingRecord:
    """Aggregate raw per-node timestamps into the timing record.

    serial time is the sum of node walls, the critical path is the longest
    dependency-weighted chain, and the overhead fraction is
    (parallel - critical path) / serial.
    """
    serial = sum(walls.values())
    crit = _critical_path_from(deps, walls)
    overhead = (parallel_time - crit) / serial if serial > 0 else 0.0
    lat_vals = list(latencies_us.values())
    return TimingRecord(
        per_node_wall=dict(walls),
        sched_latencies_us=dict(latencies_us),
        serial_time=serial,
        parallel_time=parallel_time,
        critical_path_time=crit,
        overhead_fraction=overhead,
        avg_latency_us=(sum(lat_vals) / len(lat_vals)) if lat_vals else 0.0,
        max_latency_us=max(lat_vals) if lat_vals else 0.0,
        executor_mode=executor_mode,
        max_workers=max_workers,
    )


def _critical_path_from(deps: dict, walls: dict) -> float:
    memo: dict = {}

    def finish(nid: str) -> float:
        if nid in memo:
            return memo[nid]
        base = max((finish(d) for d in deps.get(nid, ()) if d in walls),
                   default=0.0)
        memo[nid] = base + walls.get(nid, 0.0)
        return memo[nid]

    return max((finish(nid) for nid in walls), default=0.0)
