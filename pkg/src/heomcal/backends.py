"""Three dynamical backends sharing one pulse-level Hamiltonian description.

All backends propagate segmented drive plans (square or raised-cosine
envelopes) in the rotating frame with an adaptive embedded Runge-Kutta
integrator (DOP853) at tight tolerances.  The HEOM backend stacks auxiliary density operators (ADOs)
indexed by bath-mode occupation multi-indices, truncated at total order L,
into one flat sparse linear system.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product

import numpy as np
import scipy.sparse as sp
from scipy.integrate import solve_ivp

from .bath import ExpDecomposition

DEFAULT_RTOL = 1e-8
DEFAULT_ATOL = 1e-10


class IntegrationError(RuntimeError):
    """Propagation failed (step-size underflow or solver abort)."""


PULSE_SHAPES = ("square", "hann")


@dataclass(frozen=True)
class PulseSegment:
    """One drive segment; amplitude is the peak Rabi rate in rad/ns.

    ``square`` holds the amplitude constant over the segment; ``hann`` applies
    a raised-cosine envelope sin^2(pi (t - start)/duration), which keeps the
    drive spectrum narrow and suppresses leakage out of the qubit subspace.
    """

    start: float
    duration: float
    amplitude: float
    phase: float = 0.0
    shape: str = "hann"

    def __post_init__(self):
        if self.duration <= 0.0:
            raise ValueError("segment duration must be > 0")
        if not math.isfinite(self.amplitude):
            raise ValueError("segment amplitude must be finite")
        if self.shape not in PULSE_SHAPES:
            raise ValueError(f"unsupported pulse shape: {self.shape}")

    @property
    def end(self) -> float:
        return self.start + self.duration

    def envelope(self, t) -> float:
        """Dimensionless envelope value at absolute time t."""
        if self.shape == "square":
            return 1.0
        x = (t - self.start) / self.duration
        return math.sin(math.pi * x) ** 2


@dataclass(frozen=True)
class HamiltonianPlan:
    """Rotating-frame Hamiltonian: static diagonal plus drive segments."""

    static_diag: tuple[float, ...]
    drive_segments: tuple[PulseSegment, ...] = ()
    frame: str = "rotating"

    def __post_init__(self):
        segs = sorted(self.drive_segments, key=lambda s: s.start)
        for a, b in zip(segs, segs[1:]):
            if b.start < a.end - 1e-12:
                raise ValueError(f"overlapping drive segments at t={b.start}")

    @property
    def levels(self) -> int:
        return len(self.static_diag)


@dataclass(frozen=True)
class HeomConfig:
    """Hierarchy configuration: depth and decomposed bath modes."""

    depth_l: int
    modes: ExpDecomposition
    terminator: str = "truncate"
    ado_limit: int = 100_000

    def __post_init__(self):
        if self.depth_l < 1:
            raise ValueError("depth_l must be >= 1")
        if self.terminator not in ("truncate", "markovian"):
            raise ValueError(f"unknown terminator: {self.terminator}")

    @property
    def n_modes(self) -> int:
        return len(self.modes.modes)

    @property
    def ado_count(self) -> int:
        return math.comb(self.n_modes + self.depth_l, self.depth_l)


@dataclass(frozen=True)
class SimTrace:
    """Time series of named observables from one backend run."""

    times: np.ndarray
    observables: dict
    backend: str
    full_state_probe: tuple = ()  # ((t, rho), ...)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.observables[name]


def trace_residual(trace_a: SimTrace, trace_b: SimTrace, observable: str = "pop1") -> float:
    """Max-norm pointwise difference of a named observable on a shared grid."""
    if len(trace_a.times) != len(trace_b.times) or not np.allclose(
        trace_a.times, trace_b.times, rtol=0.0, atol=1e-12
    ):
        raise ValueError("trace grids do not match")
    return float(np.max(np.abs(trace_a[observable] - trace_b[observable])))


def ado_indices(n_modes: int, depth_l: int) -> list[tuple[int, ...]]:
    """All multi-indices n with |n| <= L, in lexicographic order."""
    out = [
        idx
        for idx in product(range(depth_l + 1), repeat=n_modes)
        if sum(idx) <= depth_l
    ]
    out.sort()
    return out


def drive_operator(levels: int) -> np.ndarray:
    """Ladder coupling |j><j+1| with transmon matrix elements sqrt(j+1)."""
    t_op = np.zeros((levels, levels), dtype=complex)
    for j in range(levels - 1):
        t_op[j, j + 1] = math.sqrt(j + 1)
    return t_op


def drive_hamiltonian(levels: int, phase: float) -> np.ndarray:
    """Unit-amplitude drive term (e^{i phi} T + h.c.)/2 in the rotating frame."""
    t_op = drive_operator(levels)
    return 0.5 * (
        np.exp(1j * phase) * t_op + np.exp(-1j * phase) * t_op.conj().T
    )


def hamiltonian_matrix(plan: HamiltonianPlan, t: float) -> np.ndarray:
    """Dense H(t) for the plan (rotating frame)."""
    d = plan.levels
    h = np.diag(np.asarray(plan.static_diag, dtype=complex))
    for seg in plan.drive_segments:
        if seg.start <= t < seg.end:
            h += seg.amplitude * seg.envelope(t) * drive_hamiltonian(d, seg.phase)
            break
    return h


def _segment_intervals(plan: HamiltonianPlan, t0: float, t1: float):
    """Yield (a, b, segment-or-None) covering [t0, t1] with constant drive."""
    bounds = {t0, t1}
    for seg in plan.drive_segments:
        for b in (seg.start, seg.end):
            if t0 < b < t1:
                bounds.add(b)
    cut = sorted(bounds)
    for a, b in zip(cut, cut[1:]):
        mid = 0.5 * (a + b)
        active = None
        for seg in plan.drive_segments:
            if seg.start <= mid < seg.end:
                active = seg
                break
        yield a, b, active


def _liouvillian(h: np.ndarray) -> sp.csr_matrix:
    """-i (H x I - I x H^T) acting on vec(rho) (row-major vec)."""
    d = h.shape[0]
    eye = sp.identity(d, dtype=complex, format="csr")
    return -1j * (sp.kron(sp.csr_matrix(h), eye) - sp.kron(eye, sp.csr_matrix(h.T)))


def _left_mult(op: np.ndarray) -> sp.csr_matrix:
    d = op.shape[0]
    return sp.kron(sp.csr_matrix(op), sp.identity(d, dtype=complex, format="csr"))


def _right_mult(op: np.ndarray) -> sp.csr_matrix:
    d = op.shape[0]
    return sp.kron(sp.identity(d, dtype=complex, format="csr"), sp.csr_matrix(op.T))


def _dissipator(op: np.ndarray, rate: float) -> sp.csr_matrix:
    """rate * (L . L^+ - {L^+ L, .}/2) on vec(rho)."""
    ld = sp.csr_matrix(op)
    ldag_l = op.conj().T @ op
    return rate * (
        sp.kron(ld, ld.conj())
        - 0.5 * (_left_mult(ldag_l) + _right_mult(ldag_l))
    )


def lindblad_dissipators(levels: int, gamma1: float, gamma_phi: float) -> sp.csr_matrix:
    """Relaxation ladder (gamma1 per excitation quantum) + pure dephasing."""
    d = levels
    total = sp.csr_matrix((d * d, d * d), dtype=complex)
    for j in range(d - 1):
        op = np.zeros((d, d), dtype=complex)
        op[j, j + 1] = 1.0
        total = total + _dissipator(op, (j + 1) * gamma1)
    if gamma_phi > 0.0:
        deph = np.diag(np.arange(d, dtype=complex))
        total = total + _dissipator(deph, 2.0 * gamma_phi)
    return total


def _integrate(rhs, y0, t0, t1, t_eval, rtol, atol):
    if t1 <= t0:
        raise ValueError("empty integration interval")
    sol = solve_ivp(
        rhs, (t0, t1), y0, method="DOP853", t_eval=t_eval,
        rtol=rtol, atol=atol, dense_output=False,
    )
    if not sol.success:
        raise IntegrationError(f"integration failed on [{t0}, {t1}]: {sol.message}")
    return sol


class _PiecewiseLinearPropagator:
    """Shared machinery: sparse generator propagation over drive segments.

    The generator on each inter-boundary interval is G0 + a*env(t)*G1 where
    G0 (static part) and G1 (unit-amplitude drive part) are cached sparse
    matrices.  Square segments collapse to a single constant matrix.
    """

    def __init__(self, rtol=DEFAULT_RTOL, atol=DEFAULT_ATOL):
        self.rtol = rtol
        self.atol = atol
        self._gen_cache = {}

    def static_generator(self, plan: HamiltonianPlan) -> sp.csr_matrix:
        raise NotImplementedError

    def drive_generator(self, plan: HamiltonianPlan, phase: float) -> sp.csr_matrix:
        raise NotImplementedError

    def generator(self, plan: HamiltonianPlan, segment: PulseSegment | None) -> sp.csr_matrix:
        """Constant generator for a square (or absent) drive segment."""
        key = (plan, None if segment is None else (segment.amplitude, segment.phase))
        if key not in self._gen_cache:
            gen = self.static_generator(plan)
            if segment is not None:
                gen = (gen + segment.amplitude * self.drive_generator(plan, segment.phase)).tocsr()
            self._gen_cache[key] = gen
        return self._gen_cache[key]

    def _segment_rhs(self, plan, seg):
        if seg is None or seg.shape == "square":
            gen = self.generator(plan, seg)
            return lambda t, v: gen.dot(v)
        g0 = self.static_generator(plan)
        g1 = self.drive_generator(plan, seg.phase)
        amp = seg.amplitude
        return lambda t, v: g0.dot(v) + (amp * seg.envelope(t)) * g1.dot(v)

    def propagate(self, plan: HamiltonianPlan, y0: np.ndarray, t_eval: np.ndarray) -> np.ndarray:
        """Propagate from t_eval-independent start time t=t_eval[0]."""
        t_eval = np.asarray(t_eval, dtype=float)
        if np.any(np.diff(t_eval) < 0):
            raise ValueError("t_eval must be non-decreasing")
        out = np.empty((len(t_eval), len(y0)), dtype=complex)
        y = np.asarray(y0, dtype=complex)
        t_start = t_eval[0]
        t_end = t_eval[-1]
        out[t_eval == t_start] = y
        if t_end == t_start:
            return out
        for a, b, seg in _segment_intervals(plan, t_start, t_end):
            rhs = self._segment_rhs(plan, seg)
            mask = (t_eval > a) & (t_eval <= b)
            inside = t_eval[mask]
            if len(inside) == 0 or inside[-1] < b:
                pts = np.concatenate([inside, [b]])
            else:
                pts = inside
            sol = _integrate(rhs, y, a, b, pts, self.rtol, self.atol)
            out[mask] = sol.y[:, : len(inside)].T
            y = sol.y[:, -1]
        return out


class UnitaryBackend(_PiecewiseLinearPropagator):
    """Closed-system Schrodinger propagation of the state vector."""

    name = "unitary"

    def __init__(self, levels: int, **kw):
        super().__init__(**kw)
        self.levels = levels

    def static_generator(self, plan):
        key = ("static", plan)
        if key not in self._gen_cache:
            h = np.diag(np.asarray(plan.static_diag, dtype=complex))
            self._gen_cache[key] = sp.csr_matrix(-1j * h)
        return self._gen_cache[key]

    def drive_generator(self, plan, phase):
        key = ("drive", plan, phase)
        if key not in self._gen_cache:
            self._gen_cache[key] = sp.csr_matrix(
                -1j * drive_hamiltonian(self.levels, phase)
            )
        return self._gen_cache[key]

    def ground_state(self) -> np.ndarray:
        psi = np.zeros(self.levels, dtype=complex)
        psi[0] = 1.0
        return psi

    def system_density(self, y: np.ndarray) -> np.ndarray:
        return np.outer(y, y.conj())


class LindbladBackend(_PiecewiseLinearPropagator):
    """Markovian master equation with relaxation + pure-dephasing dissipators."""

    name = "lindblad"

    def __init__(self, levels: int, gamma1: float, gamma_phi: float, **kw):
        super().__init__(**kw)
        self.levels = levels
        self.gamma1 = gamma1
        self.gamma_phi = gamma_phi
        self._diss = lindblad_dissipators(levels, gamma1, gamma_phi)

    def static_generator(self, plan):
        key = ("static", plan)
        if key not in self._gen_cache:
            h = np.diag(np.asarray(plan.static_diag, dtype=complex))
            self._gen_cache[key] = (_liouvillian(h) + self._diss).tocsr()
        return self._gen_cache[key]

    def drive_generator(self, plan, phase):
        key = ("drive", plan, phase)
        if key not in self._gen_cache:
            self._gen_cache[key] = _liouvillian(
                drive_hamiltonian(self.levels, phase)
            ).tocsr()
        return self._gen_cache[key]

    def ground_state(self) -> np.ndarray:
        rho = np.zeros((self.levels, self.levels), dtype=complex)
        rho[0, 0] = 1.0
        return rho.reshape(-1)

    def system_density(self, y: np.ndarray) -> np.ndarray:
        return y.reshape(self.levels, self.levels)


class HeomBackend(_PiecewiseLinearPropagator):
    """Bosonic HEOM over decomposed bath modes with diagonal coupling.

    The stacked ADO vector follows the standard (unscaled) hierarchy

        d rho_n/dt = -i[H, rho_n] - (sum_k n_k nu_k) rho_n
                     - i sum_k [Q, rho_{n+e_k}]
                     - i sum_k n_k (c_k Q rho_{n-e_k} - c_k* rho_{n-e_k} Q)

    truncated hard at |n| <= L.  An optional Lindblad relaxation channel
    (characterized gamma1) acts on every ADO; pure dephasing comes from the
    bath itself and is never double-counted.
    """

    name = "heom"

    def __init__(
        self,
        levels: int,
        heom: HeomConfig,
        coupling_diag: tuple[int, ...],
        gamma1: float = 0.0,
        **kw,
    ):
        super().__init__(**kw)
        self.levels = levels
        self.heom = heom
        self.coupling_diag = tuple(coupling_diag)
        self.gamma1 = gamma1
        self.indices = ado_indices(heom.n_modes, heom.depth_l)
        if len(self.indices) != heom.ado_count:
            raise RuntimeError("ADO enumeration does not match combinatorial count")
        if heom.ado_count * levels * levels > heom.ado_limit:
            raise MemoryError(
                f"ADO arena too large: {heom.ado_count} ADOs x {levels}^2"
            )
        self._index_of = {n: i for i, n in enumerate(self.indices)}
        self._static = self._build_static()

    # -- assembly ---------------------------------------------------------

    def _build_static(self) -> sp.csr_matrix:
        d = self.levels
        d2 = d * d
        n_ado = len(self.indices)
        q_op = np.diag(np.asarray(self.coupling_diag, dtype=complex))
        ql = _left_mult(q_op)
        qr = _right_mult(q_op)
        comm_q = -1j * (ql - qr)

        big = sp.lil_matrix((n_ado * d2, n_ado * d2), dtype=complex)
        modes = self.heom.modes.modes  # ((c, nu), ...)
        diss = lindblad_dissipators(d, self.gamma1, 0.0) if self.gamma1 > 0 else None

        for i, n in enumerate(self.indices):
            row = slice(i * d2, (i + 1) * d2)
            decay = sum(nk * modes[k][1] for k, nk in enumerate(n))
            block = -decay * sp.identity(d2, dtype=complex, format="csr")
            if diss is not None:
                block = block + diss
            big[row, row] = block
            for k in range(len(modes)):
                c_k, _ = modes[k]
                up = tuple(nk + (1 if j == k else 0) for j, nk in enumerate(n))
                if sum(up) <= self.heom.depth_l:
                    j = self._index_of[up]
                    big[row, j * d2 : (j + 1) * d2] = comm_q
                elif self.heom.terminator == "markovian":
                    # time-local closure of the dropped tier
                    _, nu_k = modes[k]
                    tl = -(c_k / nu_k) * ((ql - qr) @ (ql - qr))
                    big[row, row] = big[row, row] + tl
                if n[k] > 0:
                    down = tuple(nk - (1 if j == k else 0) for j, nk in enumerate(n))
                    j = self._index_of[down]
                    coupling = -1j * n[k] * (c_k * ql - np.conj(c_k) * qr)
                    big[row, j * d2 : (j + 1) * d2] = (
                        big[row, j * d2 : (j + 1) * d2] + coupling
                    )
        return big.tocsr()

    def _stacked(self, lh: sp.csr_matrix) -> sp.csr_matrix:
        return sp.kron(
            sp.identity(len(self.indices), dtype=complex, format="csr"), lh
        ).tocsr()

    def static_generator(self, plan):
        key = ("static", plan)
        if key not in self._gen_cache:
            h = np.diag(np.asarray(plan.static_diag, dtype=complex))
            self._gen_cache[key] = (self._static + self._stacked(_liouvillian(h))).tocsr()
        return self._gen_cache[key]

    def drive_generator(self, plan, phase):
        key = ("drive", plan, phase)
        if key not in self._gen_cache:
            lh = _liouvillian(drive_hamiltonian(self.levels, phase))
            self._gen_cache[key] = self._stacked(lh)
        return self._gen_cache[key]

    # -- state handling ----------------------------------------------------

    def ground_state(self) -> np.ndarray:
        return self.embed(self._ground_rho())

    def _ground_rho(self) -> np.ndarray:
        rho = np.zeros((self.levels, self.levels), dtype=complex)
        rho[0, 0] = 1.0
        return rho

    def embed(self, rho: np.ndarray) -> np.ndarray:
        """Factorized initial condition: system rho in the top ADO, rest zero."""
        y = np.zeros(len(self.indices) * self.levels**2, dtype=complex)
        y[: self.levels**2] = np.asarray(rho, dtype=complex).reshape(-1)
        return y

    def system_density(self, y: np.ndarray) -> np.ndarray:
        return y[: self.levels**2].reshape(self.levels, self.levels)


def _observables_from_rho(rhos: np.ndarray) -> dict:
    """Named observable series from an array of density matrices (n, d, d)."""
    pops = {f"pop{j}": np.real(rhos[:, j, j]).copy() for j in range(rhos.shape[1])}
    pops["coh01_re"] = np.real(rhos[:, 0, 1]).copy()
    pops["coh01_im"] = np.imag(rhos[:, 0, 1]).copy()
    return pops


def _check_density_series(rhos: np.ndarray, tol: float = 1e-6):
    herm = np.max(np.abs(rhos - np.conj(np.transpose(rhos, (0, 2, 1)))))
    if herm > 1e-8:
        raise IntegrationError(f"density matrix lost hermiticity: {herm:.2e}")
    traces = np.einsum("nii->n", rhos).real
    if np.max(np.abs(traces - 1.0)) > tol:
        raise IntegrationError(
            f"trace drifted by {np.max(np.abs(traces - 1.0)):.2e} (> {tol:g})"
        )


def evolve_unitary(
    plan: HamiltonianPlan,
    psi0: np.ndarray,
    times: np.ndarray,
    rtol: float = DEFAULT_RTOL,
    atol: float = DEFAULT_ATOL,
) -> SimTrace:
    """Schrodinger propagation; norm preserved to 1e-8 over the grid."""
    psi0 = np.asarray(psi0, dtype=complex)
    if abs(np.linalg.norm(psi0) - 1.0) > 1e-10:
        raise ValueError("psi0 must be normalized")
    be = UnitaryBackend(len(psi0), rtol=rtol, atol=atol)
    states = be.propagate(plan, psi0, times)
    norms = np.linalg.norm(states, axis=1)
    if np.max(np.abs(norms - 1.0)) > 1e-8:
        raise IntegrationError(f"norm drift {np.max(np.abs(norms - 1.0)):.2e} > 1e-8")
    rhos = np.einsum("ni,nj->nij", states, states.conj())
    return SimTrace(times=np.asarray(times, float), observables=_observables_from_rho(rhos), backend="unitary")


def evolve_lindblad(
    plan: HamiltonianPlan,
    rates: tuple[float, float],
    rho0: np.ndarray,
    times: np.ndarray,
    rtol: float = DEFAULT_RTOL,
    atol: float = DEFAULT_ATOL,
) -> SimTrace:
    """Lindblad propagation; trace preserved to 1e-8."""
    rho0 = np.asarray(rho0, dtype=complex)
    d = rho0.shape[0]
    be = LindbladBackend(d, rates[0], rates[1], rtol=rtol, atol=atol)
    states = be.propagate(plan, rho0.reshape(-1), times)
    rhos = states.reshape(len(times), d, d)
    _check_density_series(rhos, tol=1e-8)
    return SimTrace(times=np.asarray(times, float), observables=_observables_from_rho(rhos), backend="lindblad")


def evolve_heom(
    plan: HamiltonianPlan,
    heom: HeomConfig,
    coupling_diag: tuple[int, ...],
    rho0: np.ndarray,
    times: np.ndarray,
    probes: np.ndarray | None = None,
    gamma1: float = 0.0,
    rtol: float = DEFAULT_RTOL,
    atol: float = DEFAULT_ATOL,
) -> SimTrace:
    """HEOM propagation; top-ADO trace preserved to 1e-8.

    ``probes`` requests exact density-matrix snapshots at the given times.
    """
    rho0 = np.asarray(rho0, dtype=complex)
    d = rho0.shape[0]
    be = HeomBackend(d, heom, coupling_diag, gamma1=gamma1, rtol=rtol, atol=atol)
    times = np.asarray(times, dtype=float)
    probe_list = () if probes is None else tuple(float(p) for p in probes)
    t_all = np.unique(np.concatenate([times, np.asarray(probe_list, float)])) if probe_list else times
    states = be.propagate(plan, be.embed(rho0), t_all)
    tops = np.array([be.system_density(s) for s in states])
    _check_density_series(tops, tol=1e-8)
    sel = np.searchsorted(t_all, times)
    rhos = tops[sel]
    probe_pairs = tuple(
        (p, tops[int(np.searchsorted(t_all, p))]) for p in probe_list
    )
    return SimTrace(
        times=times,
        observables=_observables_from_rho(rhos),
        backend="heom",
        full_state_probe=probe_pairs,
    )
