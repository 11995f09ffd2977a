"""1/f bath: spectral density, correlation function, exponential decomposition.

The spectral density is S(w) = 2*pi*A0/|w| multiplied by a smooth rational
cutoff window; the finite-temperature correlation function

    C(t) = (1/pi) * int_0^inf dw S(w) w(w) [coth(hbar w / 2 kB T) cos(wt)
                                            - i sin(wt)]

is evaluated by adaptive quadrature and then decomposed into K complex
exponentials via matrix-pencil harmonic retrieval plus variable-projection
refinement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.linalg import lstsq, svd
from scipy.optimize import least_squares

from .platform import BathSpec

# hbar / (2 kB) in ns*K (CODATA 2018 values of hbar and kB)
HBAR_OVER_2KB_NS_K = 1.054571817e-34 / (2.0 * 1.380649e-23) * 1e9


class QuadratureError(RuntimeError):
    """Quadrature failed to reach the requested tolerance."""


class DecompositionError(RuntimeError):
    """Exponential decomposition failed to converge."""


@dataclass(frozen=True)
class CorrelationTrace:
    """Complex bath correlation samples C(t) with quadrature-error metadata."""

    times: np.ndarray
    values: np.ndarray
    abserr: np.ndarray  # per-sample quadrature error estimate (abs)
    epsrel: float

    def __post_init__(self):
        if self.times[0] != 0.0:
            raise ValueError("correlation grid must start at t = 0")
        if len(self.times) != len(self.values):
            raise ValueError("times/values length mismatch")


@dataclass(frozen=True)
class ExpDecomposition:
    """Sum-of-exponentials model C(t) ~ sum_k c_k * exp(-nu_k * t)."""

    modes: tuple[tuple[complex, complex], ...]  # (coeff c_k, decay nu_k)
    rel_rms_residual: float
    method_tag: str
    rank_deficient: bool = False

    def __post_init__(self):
        for _, nu in self.modes:
            if nu.real <= 0.0:
                raise ValueError(f"decay mode has non-positive real part: {nu}")

    def evaluate(self, times: np.ndarray) -> np.ndarray:
        t = np.asarray(times, dtype=float)
        out = np.zeros_like(t, dtype=complex)
        for c, nu in self.modes:
            out += c * np.exp(-nu * t)
        return out

    def scaled(self, factor: float) -> "ExpDecomposition":
        """Decomposition of factor*C(t); exact because C is linear in A0."""
        return ExpDecomposition(
            modes=tuple((c * factor, nu) for c, nu in self.modes),
            rel_rms_residual=self.rel_rms_residual,
            method_tag=self.method_tag + f"+scaled({factor:g})",
            rank_deficient=self.rank_deficient,
        )


def cutoff_window(bath: BathSpec, omega) -> np.ndarray:
    """Soft low/high cutoff window w(omega), symmetric in omega."""
    w = np.abs(np.asarray(omega, dtype=float))
    with np.errstate(divide="ignore"):
        low = np.where(w > 0.0, 1.0 / (1.0 + (bath.low_cutoff / np.where(w > 0, w, 1.0)) ** 2), 0.0)
    high = 1.0 / (1.0 + (w / bath.high_cutoff) ** 2)
    return low * high


def spectral_density(bath: BathSpec, omega):
    """Windowed 1/f spectral density, in rad/ns units; symmetric in omega.

    The low-cutoff window regularizes omega -> 0 (S*w -> 0 linearly).
    """
    w = np.abs(np.asarray(omega, dtype=float))
    win = cutoff_window(bath, w)
    with np.errstate(divide="ignore"):
        raw = np.where(w > 0.0, 2.0 * math.pi * bath.amplitude_a0 / np.where(w > 0, w, 1.0), 0.0)
    out = raw * win
    if np.isscalar(omega):
        return float(out)
    return out


def _thermal_weight(bath: BathSpec, omega: np.ndarray) -> np.ndarray:
    """coth(hbar*omega / 2 kB T) for omega > 0."""
    arg = HBAR_OVER_2KB_NS_K * np.asarray(omega) / bath.temperature
    return 1.0 / np.tanh(arg)


def _kernel_real_limit0(bath: BathSpec) -> float:
    """w -> 0 limit of S(w)*coth(hbar w/2kT)/pi (finite: window ~ w^2)."""
    a = HBAR_OVER_2KB_NS_K / bath.temperature
    return 2.0 * bath.amplitude_a0 / (a * bath.low_cutoff**2)


def correlation_function(
    bath: BathSpec,
    times: np.ndarray,
    epsrel: float = 1e-8,
    omega_max_factor: float = 200.0,
) -> CorrelationTrace:
    """Evaluate C(t) on the given grid by adaptive oscillatory quadrature.

    Uses QUADPACK's cos/sin-weighted rules per sample, with the support
    truncated at omega_max_factor * high_cutoff (the integrand decays as
    1/omega^3 beyond the high cutoff).
    """
    times = np.asarray(times, dtype=float)
    if times[0] != 0.0:
        raise ValueError("times[0] must be 0")
    omega_max = omega_max_factor * bath.high_cutoff

    k0 = _kernel_real_limit0(bath)

    def kernel_real(w):
        if w <= 0.0:
            return k0
        return spectral_density(bath, w) * _thermal_weight(bath, w) / math.pi

    def kernel_imag(w):
        return spectral_density(bath, w) / math.pi

    # scale for absolute tolerance: the t=0 real kernel integral
    c0, c0_err = quad(kernel_real, 0.0, omega_max, limit=400, epsrel=epsrel)
    epsabs = max(abs(c0) * epsrel, 1e-300)

    vals = np.empty(len(times), dtype=complex)
    errs = np.empty(len(times), dtype=float)
    for i, t in enumerate(times):
        if t == 0.0:
            re, re_err = c0, c0_err
            im, im_err = 0.0, 0.0
        else:
            re, re_err = quad(
                kernel_real, 0.0, omega_max, weight="cos", wvar=t,
                limit=400, epsabs=epsabs, epsrel=epsrel,
            )
            im, im_err = quad(
                kernel_imag, 0.0, omega_max, weight="sin", wvar=t,
                limit=400, epsabs=epsabs, epsrel=epsrel,
            )
        if re_err > 1e3 * epsabs + epsrel * abs(re):
            raise QuadratureError(
                f"correlation quadrature at t={t} ns reached only abserr={re_err:g} "
                f"(requested epsabs={epsabs:g}, epsrel={epsrel:g})"
            )
        vals[i] = re - 1j * im
        errs[i] = re_err + im_err
    return CorrelationTrace(times=times, values=vals, abserr=errs, epsrel=epsrel)


def default_correlation_grid(
    t_max: float = 2000.0, n_points: int = 2000, t_knee: float = 50.0
) -> np.ndarray:
    """Logarithmic-then-linear grid on [0, t_max] resolving sub-ns transients."""
    n_log = n_points // 3
    n_lin = n_points - n_log - 1
    log_part = np.geomspace(1e-2, t_knee, n_log, endpoint=False)
    lin_part = np.linspace(t_knee, t_max, n_lin)
    return np.concatenate(([0.0], log_part, lin_part))


def _lstsq_coeffs(times: np.ndarray, values: np.ndarray, nus: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Linear LS for the coefficients given fixed decay rates; returns (c, residvec)."""
    basis = np.exp(-np.outer(times, nus))
    c, *_ = lstsq(basis, values, lapack_driver="gelsd")
    resid = basis @ c - values
    return c, resid


def _matrix_pencil(times_u: np.ndarray, values_u: np.ndarray, k: int) -> np.ndarray:
    """Matrix-pencil estimate of decay rates on a uniform grid."""
    n = len(values_u)
    dt = times_u[1] - times_u[0]
    p = max(k + 2, n // 3)  # pencil parameter
    rows = n - p
    hank = np.empty((rows, p + 1), dtype=complex)
    for i in range(rows):
        hank[i, :] = values_u[i : i + p + 1]
    y0 = hank[:, :-1]
    y1 = hank[:, 1:]
    u, s, vh = svd(y0, full_matrices=False)
    rank = min(k, int(np.sum(s > s[0] * 1e-13))) if len(s) else 0
    if rank == 0:
        return np.empty(0, dtype=complex)
    u_k = u[:, :rank]
    s_k = s[:rank]
    v_k = vh[:rank, :].conj().T
    pencil = (u_k.conj().T @ y1 @ v_k) / s_k[:, None]
    z = np.linalg.eigvals(pencil)
    z = z[np.abs(z) > 1e-14]
    nus = -np.log(z) / dt
    return nus


def decomposition_residual(decomp: ExpDecomposition, corr: CorrelationTrace) -> float:
    """Relative RMS of the exponential model against the correlation samples."""
    model = decomp.evaluate(corr.times)
    num = np.linalg.norm(model - corr.values)
    den = np.linalg.norm(corr.values)
    if den == 0.0:
        return 0.0 if num == 0.0 else math.inf
    return float(num / den)


def exp_decompose(
    corr: CorrelationTrace,
    k: int = 3,
    n_uniform: int = 1200,
    refine: bool = True,
    real_decay: bool = False,
) -> ExpDecomposition:
    """Fit k complex exponential modes to the correlation trace.

    Matrix pencil on a uniformly resampled copy seeds the decay rates;
    coefficients come from linear least squares on the original grid; a
    variable-projection nonlinear refinement then polishes the rates.

    With ``real_decay`` the decay rates are constrained to the real axis
    (coefficients stay complex).  The hierarchy propagator preserves
    hermiticity exactly only for real decay rates, so the HEOM pipeline
    decomposes with this constraint.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    times = corr.times
    values = corr.values
    if len(times) < 10 * k:
        raise ValueError(f"need at least {10 * k} samples to fit {k} modes, got {len(times)}")

    t_u = np.linspace(times[0], times[-1], n_uniform)
    re_u = np.interp(t_u, times, values.real)
    im_u = np.interp(t_u, times, values.imag)
    v_u = re_u + 1j * im_u

    nus = _matrix_pencil(t_u, v_u, k)
    nus = nus[nus.real > 0.0]
    rank_deficient = len(nus) < k
    if len(nus) == 0:
        raise DecompositionError("matrix pencil found no decaying modes")
    if len(nus) > k:
        # keep the k modes carrying the largest integrated weight |c|/Re(nu)
        c_all, _ = _lstsq_coeffs(times, values, nus)
        weight = np.abs(c_all) / nus.real
        nus = nus[np.argsort(-weight)[:k]]

    scale = np.max(np.abs(values))

    if real_decay:
        nus = np.asarray(nus.real, dtype=complex)

        def pack(nu_arr):
            return np.asarray(nu_arr.real)

        def unpack(x):
            return np.asarray(x, dtype=complex)

        lo = np.full(len(nus), 1e-12)
        hi = np.full(len(nus), np.inf)
    else:

        def pack(nu_arr):
            return np.concatenate([nu_arr.real, nu_arr.imag])

        def unpack(x):
            m = len(x) // 2
            return x[:m] + 1j * x[m:]

        lo = np.concatenate([np.full(len(nus), 1e-12), np.full(len(nus), -np.inf)])
        hi = np.full(2 * len(nus), np.inf)

    def resid_fn(x):
        nu_arr = unpack(x)
        _, r = _lstsq_coeffs(times, values, nu_arr)
        return np.concatenate([r.real, r.imag]) / scale

    if refine:
        sol = least_squares(resid_fn, pack(nus), bounds=(lo, hi), xtol=1e-14, ftol=1e-14, gtol=1e-14)
        nus = unpack(sol.x)

    coeffs, _ = _lstsq_coeffs(times, values, nus)
    order = np.argsort(nus.real)
    nus = nus[order]
    coeffs = coeffs[order]
    decomp = ExpDecomposition(
        modes=tuple((complex(c), complex(nu)) for c, nu in zip(coeffs, nus)),
        rel_rms_residual=0.0,
        method_tag="matrix-pencil+varpro" if refine else "matrix-pencil",
        rank_deficient=rank_deficient,
    )
    resid = decomposition_residual(decomp, corr)
    return ExpDecomposition(
        modes=decomp.modes,
        rel_rms_residual=resid,
        method_tag=decomp.method_tag,
        rank_deficient=rank_deficient,
    )


def double_integral(decomp: ExpDecomposition, times: np.ndarray) -> np.ndarray:
    """int_0^t ds int_0^s du C(u) for the decomposed C, evaluated exactly.

    For a mode c*exp(-nu*u) the double integral is c*(exp(-nu t) - 1 + nu t)/nu^2.
    """
    t = np.asarray(times, dtype=float)
    out = np.zeros_like(t, dtype=complex)
    for c, nu in decomp.modes:
        out += c * (np.exp(-nu * t) - 1.0 + nu * t) / nu**2
    return out
