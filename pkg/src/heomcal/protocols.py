"""Calibration protocols (Rabi, Ramsey, T1) as backend-agnostic sweep plans.

Each protocol builds square-pulse sequences from the platform drive spec and
runs them on one of the three dynamical backends.  Sampling grids are fixed
across backends; all plans are generated from the documented defaults.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import backends as be
from .bath import ExpDecomposition
from .platform import PlatformConfig, derive_lindblad_rates

BACKEND_TAGS = ("unitary", "lindblad", "heom")
BACKEND_ALIASES = {"sesolve": "unitary", "mesolve": "lindblad"}


def canonical_backend(tag: str) -> str:
    tag = BACKEND_ALIASES.get(tag, tag)
    if tag not in BACKEND_TAGS:
        raise ValueError(f"unknown backend tag: {tag}")
    return tag


@dataclass(frozen=True)
class RabiPlan:
    amplitudes: tuple[float, ...]
    pulse_duration: float
    readout: str = "pop1"

    def __post_init__(self):
        amps = np.asarray(self.amplitudes)
        if np.any(np.diff(amps) <= 0):
            raise ValueError("amplitudes must be strictly increasing")


@dataclass(frozen=True)
class RamseyPlan:
    delays: tuple[float, ...]
    detuning: float = 0.0  # rad/ns
    grid: str = "standard"

    def __post_init__(self):
        if np.any(np.diff(np.asarray(self.delays)) <= 0):
            raise ValueError("delays must be strictly increasing")


@dataclass(frozen=True)
class T1Plan:
    delays: tuple[float, ...]
    variant: int = 8

    def __post_init__(self):
        if self.variant not in (8, 16):
            raise ValueError("T1 plan variant must be 8 or 16")
        if np.any(np.diff(np.asarray(self.delays)) <= 0):
            raise ValueError("delays must be strictly increasing")


@dataclass(frozen=True)
class ProtocolResult:
    protocol: str
    backend: str
    sweep_values: tuple[float, ...]
    measured: tuple[float, ...]
    traces_meta: dict
    wall_time: float
    probe_states: tuple = ()  # ((t_after_pulse, rho), ...) for T1 controls

    def __post_init__(self):
        if len(self.sweep_values) != len(self.measured):
            raise ValueError("sweep/measured length mismatch")
        m = np.asarray(self.measured)
        if np.any(m < -1e-6) or np.any(m > 1.0 + 1e-6):
            raise ValueError("measured populations out of [0, 1] tolerance band")


def default_rabi_plan(cfg: PlatformConfig, points: int = 30,
                      amp_min: float = 0.01, amp_max: float = 0.99) -> RabiPlan:
    return RabiPlan(
        amplitudes=tuple(np.linspace(amp_min, amp_max, points)),
        pulse_duration=cfg.drive.pulse_duration,
    )


def default_ramsey_plan(grid: str = "standard", detuning: float = 0.0) -> RamseyPlan:
    if grid == "standard":
        delays = np.linspace(10.0, 2000.0, 30)
    elif grid == "dense":
        delays = np.concatenate([
            np.linspace(10.0, 500.0, 30, endpoint=False),
            np.linspace(500.0, 2000.0, 20),
        ])
    else:
        raise ValueError(f"unknown Ramsey grid: {grid}")
    return RamseyPlan(delays=tuple(delays), detuning=detuning, grid=grid)


def default_t1_plan(variant: int = 8) -> T1Plan:
    return T1Plan(delays=tuple(np.linspace(100.0, 2000.0, variant)), variant=variant)


@dataclass(frozen=True)
class HeomOptions:
    """HEOM context shared by all protocol runs of one backend instance."""

    decomposition: ExpDecomposition
    depth: int = 3
    terminator: str = "truncate"


def default_heom_options(cfg: PlatformConfig, depth: int | None = None,
                         k: int = 3) -> HeomOptions:
    """Decompose the platform bath correlation and bundle hierarchy options.

    Real decay rates are enforced so that hermiticity propagates down the
    hierarchy.
    """
    from .bath import correlation_function, default_correlation_grid, exp_decompose

    times = default_correlation_grid()
    corr = correlation_function(cfg.bath, times)
    decomp = exp_decompose(corr, k=k, real_decay=True)
    return HeomOptions(decomposition=decomp, depth=depth if depth is not None else 3)


class BackendDriver:
    """Uniform pulse/free-evolution interface over the three backends."""

    def __init__(
        self,
        tag: str,
        cfg: PlatformConfig,
        heom: HeomOptions | None = None,
        rtol: float = be.DEFAULT_RTOL,
        atol: float = be.DEFAULT_ATOL,
    ):
        self.tag = canonical_backend(tag)
        self.cfg = cfg
        gamma1, gamma_phi = derive_lindblad_rates(cfg)
        d = cfg.levels
        if self.tag == "unitary":
            self._impl = be.UnitaryBackend(d, rtol=rtol, atol=atol)
        elif self.tag == "lindblad":
            self._impl = be.LindbladBackend(d, gamma1, gamma_phi, rtol=rtol, atol=atol)
        else:
            if heom is None:
                raise ValueError("heom backend requires HeomOptions")
            hc = be.HeomConfig(
                depth_l=heom.depth, modes=heom.decomposition, terminator=heom.terminator
            )
            self._impl = be.HeomBackend(
                d, hc, cfg.bath.coupling_diag, gamma1=gamma1, rtol=rtol, atol=atol
            )
        self.heom = heom

    def _static_diag(self, detuning: float) -> tuple[float, ...]:
        d = self.cfg.levels
        diag = [0.0] * d
        if d >= 2:
            diag[1] = -detuning
        for j in range(2, d):
            diag[j] = -j * detuning + (j * (j - 1) // 2) * self.cfg.anharmonicity
        return tuple(diag)

    def ground(self) -> np.ndarray:
        return self._impl.ground_state()

    def pulse(
        self,
        state: np.ndarray,
        norm_amplitude: float,
        duration: float | None = None,
        phase: float = 0.0,
        detuning: float = 0.0,
    ) -> np.ndarray:
        dur = self.cfg.drive.pulse_duration if duration is None else duration
        omega = self.cfg.drive.drive_scale * norm_amplitude
        if omega == 0.0:
            return self.free(state, np.array([dur]), detuning=detuning)[0]
        detuning = detuning + self.cfg.drive.stark_comp * omega * omega
        plan = be.HamiltonianPlan(
            static_diag=self._static_diag(detuning),
            drive_segments=(
                be.PulseSegment(0.0, dur, omega, phase, shape=self.cfg.drive.shape),
            ),
        )
        return self._impl.propagate(plan, state, np.array([0.0, dur]))[-1]

    def free(self, state: np.ndarray, t_eval: np.ndarray, detuning: float = 0.0) -> np.ndarray:
        """States after drive-free evolution for each duration in t_eval."""
        t_eval = np.asarray(t_eval, dtype=float)
        plan = be.HamiltonianPlan(static_diag=self._static_diag(detuning))
        prepend = t_eval[0] > 0.0
        pts = np.concatenate([[0.0], t_eval]) if prepend else t_eval
        states = self._impl.propagate(plan, state, pts)
        return states[1:] if prepend else states

    def density(self, state: np.ndarray) -> np.ndarray:
        return self._impl.system_density(state)

    def pop1(self, state: np.ndarray) -> float:
        return float(np.real(self.density(state)[1, 1]))


def make_driver(tag: str, cfg: PlatformConfig, heom: HeomOptions | None = None, **kw) -> BackendDriver:
    return BackendDriver(tag, cfg, heom=heom, **kw)


def _meta(driver: BackendDriver) -> dict:
    meta = {"rtol": driver._impl.rtol, "atol": driver._impl.atol}
    if driver.tag == "heom" and driver.heom is not None:
        meta["heom_depth"] = driver.heom.depth
        meta["heom_modes"] = len(driver.heom.decomposition.modes)
        meta["bath_residual"] = driver.heom.decomposition.rel_rms_residual
        meta["terminator"] = driver.heom.terminator
    return meta


def run_rabi(
    backend: str,
    cfg: PlatformConfig,
    plan: RabiPlan,
    heom: HeomOptions | None = None,
    driver: BackendDriver | None = None,
) -> ProtocolResult:
    """Sweep drive amplitudes with a fixed-duration pulse; record final pop1."""
    drv = driver or make_driver(backend, cfg, heom)
    t0 = time.perf_counter()
    measured = []
    for i, amp in enumerate(plan.amplitudes):
        try:
            state = drv.pulse(drv.ground(), amp, duration=plan.pulse_duration)
        except Exception as exc:
            raise RuntimeError(f"rabi backend failure at amplitude index {i} (a={amp})") from exc
        measured.append(drv.pop1(state))
    return ProtocolResult(
        protocol="rabi",
        backend=drv.tag,
        sweep_values=tuple(plan.amplitudes),
        measured=tuple(measured),
        traces_meta=_meta(drv),
        wall_time=time.perf_counter() - t0,
    )


def run_ramsey(
    backend: str,
    cfg: PlatformConfig,
    plan: RamseyPlan,
    pi_amp: float,
    heom: HeomOptions | None = None,
    driver: BackendDriver | None = None,
) -> ProtocolResult:
    """pi/2 - free(delay) - pi/2 sweep; the free segment is propagated once."""
    drv = driver or make_driver(backend, cfg, heom)
    t0 = time.perf_counter()
    half = 0.5 * pi_amp
    delays = np.asarray(plan.delays)
    after_first = drv.pulse(drv.ground(), half, detuning=plan.detuning)
    mid_states = drv.free(after_first, delays, detuning=plan.detuning)
    measured = []
    for i, mid in enumerate(mid_states):
        try:
            final = drv.pulse(mid, half, detuning=plan.detuning)
        except Exception as exc:
            raise RuntimeError(f"ramsey backend failure at delay index {i}") from exc
        measured.append(drv.pop1(final))
    return ProtocolResult(
        protocol="ramsey",
        backend=drv.tag,
        sweep_values=tuple(plan.delays),
        measured=tuple(measured),
        traces_meta={**_meta(drv), "detuning": plan.detuning, "grid": plan.grid},
        wall_time=time.perf_counter() - t0,
    )


def run_t1(
    backend: str,
    cfg: PlatformConfig,
    plan: T1Plan,
    pi_amp: float,
    probes: tuple[float, ...] = (),
    heom: HeomOptions | None = None,
    driver: BackendDriver | None = None,
) -> ProtocolResult:
    """pi pulse then free decay; optional density-matrix probes after the pulse."""
    drv = driver or make_driver(backend, cfg, heom)
    t0 = time.perf_counter()
    after_pi = drv.pulse(drv.ground(), pi_amp)
    delays = np.asarray(plan.delays)
    all_times = np.unique(np.concatenate([delays, np.asarray(probes, float)])) if len(probes) else delays
    states = drv.free(after_pi, all_times)
    by_time = {float(t): s for t, s in zip(all_times, states)}
    measured = [drv.pop1(by_time[float(d)]) for d in delays]
    probe_states = tuple((float(p), drv.density(by_time[float(p)])) for p in probes)
    return ProtocolResult(
        protocol="t1",
        backend=drv.tag,
        sweep_values=tuple(plan.delays),
        measured=tuple(measured),
        traces_meta={**_meta(drv), "variant": plan.variant},
        wall_time=time.perf_counter() - t0,
        probe_states=probe_states,
    )
