"""Curve-fit families for the calibration protocols.

Each family is a trust-region nonlinear least-squares fit (analytic
Jacobians) with a fixed, documented restart schedule so that repeated runs
are bitwise reproducible.  Derived scalars (T2*, tau_aw, pi-amp, ...) and
the spurious-revival guard live here as well.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares


class FitError(RuntimeError):
    """Fit failed to converge under the documented restart schedule."""


class NoInteriorMaximumError(FitError):
    """Fitted Rabi curve has no interior maximum over the sweep range."""


GUARD_AMP_MIN = 0.1
GUARD_TC_MAX = 2.0

# the largest time constant any bounded exponential family may report,
# as a multiple of the sweep span; hitting it signals unidentifiability
CEILING_SPAN_FACTOR = 5.0
CEILING_HIT_FRACTION = 0.995


@dataclass(frozen=True)
class GuardOutcome:
    """Spurious-revival guard on a biexponential envelope."""

    amp_ratio: float
    tc_ratio: float
    passed: bool

    def __post_init__(self):
        expect = self.amp_ratio >= GUARD_AMP_MIN and self.tc_ratio <= GUARD_TC_MAX
        if self.passed != expect:
            raise ValueError("guard flag contradicts its defining predicate")


def make_guard(amp_ratio: float, tc_ratio: float) -> GuardOutcome:
    return GuardOutcome(
        amp_ratio=amp_ratio,
        tc_ratio=tc_ratio,
        passed=amp_ratio >= GUARD_AMP_MIN and tc_ratio <= GUARD_TC_MAX,
    )


@dataclass(frozen=True)
class FitResult:
    family: str
    params: dict
    r_squared: float
    ceiling_hit: bool = False
    guard: GuardOutcome | None = None
    derived: dict = field(default_factory=dict)
    converged: bool = True
    fallback_used: bool = False

    def __post_init__(self):
        if self.r_squared > 1.0 + 1e-12:
            raise ValueError(f"r_squared {self.r_squared} > 1")
        for k, v in self.params.items():
            if not math.isfinite(v):
                raise ValueError(f"non-finite fit parameter {k}={v}")
        if self.ceiling_hit and self.family != "exp_ceiling":
            raise ValueError("ceiling_hit only applies to the exp_ceiling family")


def _r_squared(y: np.ndarray, resid: np.ndarray) -> float:
    ss_res = float(np.sum(resid**2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    if ss_tot == 0.0:
        return 1.0 if ss_res < 1e-20 else 0.0
    return min(1.0, 1.0 - ss_res / ss_tot)


def _prep(x, y, min_len: int, family: str):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-d arrays of equal length")
    if len(x) < min_len:
        raise ValueError(f"{family} needs >= {min_len} points, got {len(x)}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite input data")
    return x, y


def _best_fit(fun, jac, starts, bounds, x_scale=None, tol=1e-14, max_nfev=4000):
    """Run least_squares from every start; return the lowest-cost success."""
    best = None
    for p0 in starts:
        p0 = np.clip(np.asarray(p0, float), bounds[0], bounds[1])
        try:
            res = least_squares(
                fun, p0, jac=jac, bounds=bounds, method="trf",
                x_scale=x_scale if x_scale is not None else "jac",
                xtol=tol, ftol=tol, gtol=tol, max_nfev=max_nfev,
            )
        except Exception:
            continue
        if not np.all(np.isfinite(res.x)):
            continue
        if best is None or res.cost < best.cost:
            best = res
    if best is None:
        raise FitError("no restart converged")
    return best


def _log_linear_timescale(x: np.ndarray, y_env: np.ndarray, span: float) -> float:
    """Timescale seed from a log-linear regression of a positive envelope."""
    floor = max(np.max(y_env) * 1e-6, 1e-12)
    z = np.log(np.maximum(y_env, floor))
    slope = np.polyfit(x, z, 1)[0]
    if slope >= -1e-30:
        return span
    return float(np.clip(-1.0 / slope, span * 1e-4, span * CEILING_SPAN_FACTOR))


def _fft_frequency(x: np.ndarray, y: np.ndarray) -> float:
    """Dominant non-DC frequency on a uniform resampling of (x, y)."""
    n = max(len(x), 64)
    xu = np.linspace(x[0], x[-1], n)
    yu = np.interp(xu, x, y)
    yu = yu - np.mean(yu)
    spec = np.abs(np.fft.rfft(yu))
    freqs = np.fft.rfftfreq(n, d=(xu[1] - xu[0]))
    if len(spec) < 2:
        return 0.0
    k = 1 + int(np.argmax(spec[1:]))
    return float(freqs[k])


# ---------------------------------------------------------------------------
# exponential with numerical ceiling


def fit_exp_ceiling(x, y) -> FitResult:
    """Fit y = c + a*exp(-t/T) with T bounded by the family ceiling 5*span."""
    x, y = _prep(x, y, 4, "exp_ceiling")
    span = float(x[-1] - x[0])
    if span <= 0:
        raise ValueError("x must span a positive interval")
    # the sweep span is measured from the time origin (delay zero = pulse
    # end), so a [10, 2000] ns grid has a 10 000 ns family ceiling
    ceiling = CEILING_SPAN_FACTOR * float(np.max(x))

    def fun(p):
        c, a, t_c = p
        return c + a * np.exp(-x / t_c) - y

    def jac(p):
        c, a, t_c = p
        e = np.exp(-x / t_c)
        return np.column_stack([np.ones_like(x), e, a * e * x / t_c**2])

    c0 = float(y[-1])
    a0 = float(y[0] - y[-1])
    env = np.abs(y - c0)
    t0 = _log_linear_timescale(x, env, span) if np.max(env) > 0 else ceiling
    lo = np.array([-np.inf, -np.inf, span * 1e-6])
    hi = np.array([np.inf, np.inf, ceiling])
    starts = [
        (c0, a0, t0),
        (c0, a0, ceiling),
        (c0, a0, 0.2 * span),
        (np.mean(y), np.ptp(y), span),
    ]
    best = _best_fit(fun, jac, starts, (lo, hi))
    c, a, t_c = best.x
    scale = max(abs(np.ptp(y)), 1e-15)
    degenerate = abs(a) < 1e-6 * scale or np.ptp(y) == 0.0
    if degenerate:
        c, a, t_c = float(np.mean(y)), 0.0, ceiling
        resid = np.full_like(y, 0.0) + (c - y)
    else:
        resid = fun(best.x)
    hit = bool(t_c >= CEILING_HIT_FRACTION * ceiling)
    return FitResult(
        family="exp_ceiling",
        params={"c": float(c), "a": float(a), "t": float(t_c)},
        r_squared=_r_squared(y, resid),
        ceiling_hit=hit,
        derived={
            "t2_star": float(t_c),
            "ceiling": float(ceiling),
            "amp_degenerate": float(degenerate),
        },
    )


# ---------------------------------------------------------------------------
# biexponential revival envelope


def tau_aw(amplitudes, timescales) -> float:
    """Amplitude-weighted envelope timescale sum(|a||t|)/sum(|a|)."""
    a = np.abs(np.asarray(amplitudes, dtype=float))
    t = np.abs(np.asarray(timescales, dtype=float))
    if a.shape != t.shape:
        raise ValueError("amplitude/timescale length mismatch")
    total = float(np.sum(a))
    if total == 0.0:
        raise ValueError("tau_aw undefined for all-zero amplitudes")
    return float(np.sum(a * t) / total)


def _biexp_model(x, p):
    c, a1, t1, a2, t2, f, phi = p
    env = a1 * np.exp(-x / t1) + a2 * np.exp(-x / t2)
    return c + env * np.cos(2.0 * math.pi * f * x + phi)


def _biexp_starts(x, y, span):
    med = float(np.median(y))
    env = np.abs(y - med)
    t1s = _log_linear_timescale(x, env, span)
    f0 = _fft_frequency(x, y)
    a0 = float(y[0] - med)
    base = (med, a0, t1s, 0.5 * a0, 3.0 * t1s, f0, 0.0)
    starts = [base]
    # documented restart schedule: timescale rescalings and a zero-frequency
    # alternative, guarding against the known bad biexp basins
    for scale in (0.5, 2.0, 4.0):
        starts.append((med, a0, scale * t1s, 0.5 * a0, 3.0 * scale * t1s, f0, 0.0))
    for f_alt in (0.0, 0.5 * f0):
        starts.append((med, a0, t1s, 0.5 * a0, 3.0 * t1s, f_alt, 0.0))
    starts.append((med, a0, t1s, -0.5 * a0, 0.5 * t1s, f0, 0.0))
    return starts


def fit_biexp_revival(x, y, restarts: str = "full") -> FitResult:
    """7-parameter shared-frequency biexponential-times-cosine fit.

    Model: y = c + [a1 exp(-t/t1) + a2 exp(-t/t2)] cos(2 pi f t + phi).
    t1 is the primary time constant (reported as t2_star); mode labels
    follow the initialization basins, not a post-hoc reordering.
    """
    x, y = _prep(x, y, 9, "biexp_revival")
    span = float(x[-1] - x[0])
    nyq = 0.5 * (len(x) - 1) / span
    t_hi = CEILING_SPAN_FACTOR * float(np.max(x))

    def fun(p):
        return _biexp_model(x, p) - y

    def jac(p):
        c, a1, t1, a2, t2, f, phi = p
        e1 = np.exp(-x / t1)
        e2 = np.exp(-x / t2)
        w = 2.0 * math.pi * f * x + phi
        cw = np.cos(w)
        sw = np.sin(w)
        env = a1 * e1 + a2 * e2
        return np.column_stack([
            np.ones_like(x),
            e1 * cw,
            a1 * e1 * (x / t1**2) * cw,
            e2 * cw,
            a2 * e2 * (x / t2**2) * cw,
            -env * sw * 2.0 * math.pi * x,
            -env * sw,
        ])

    # timescales below the first sampled delay are unidentifiable and admit
    # spurious huge-amplitude basins, so they are excluded outright
    t_lo = max(span * 1e-4, float(np.min(x)))
    lo = np.array([-np.inf, -np.inf, t_lo, -np.inf, t_lo, 0.0, -math.pi])
    hi = np.array([np.inf, np.inf, t_hi, np.inf, t_hi, nyq, math.pi])
    starts = _biexp_starts(x, y, span)
    # the fast schedule trades basin coverage and terminal precision for
    # per-fit cost; meant for bootstrap refits, not point estimates
    extra = {}
    if restarts == "fast":
        starts = starts[:2]
        extra = {"tol": 1e-10, "max_nfev": 400}
    best = _best_fit(
        fun, jac, starts, (lo, hi),
        x_scale=[1, 1, span, 1, span, max(1.0 / span, 1e-12), 1],
        **extra,
    )
    c, a1, t1, a2, t2, f, phi = (float(v) for v in best.x)
    if a1 == 0.0:
        raise FitError("degenerate primary amplitude in biexp fit")
    guard = make_guard(abs(a2 / a1), t2 / t1)
    return FitResult(
        family="biexp_revival",
        params={"c": c, "a1": a1, "t1": t1, "a2": a2, "t2": t2, "f": f, "phi": phi},
        r_squared=_r_squared(y, fun(best.x)),
        guard=guard,
        derived={"t2_star": t1, "tau_aw": tau_aw([a1, a2], [t1, t2])},
    )


# ---------------------------------------------------------------------------
# stretched exponential


def fit_stretched(x, y) -> FitResult:
    """Fit y = c + a*exp(-(t/T)^beta) with beta in (0, 3]."""
    x, y = _prep(x, y, 5, "stretched")
    if np.any(x <= 0):
        raise ValueError("stretched-exponential fit needs strictly positive x")
    span = float(x[-1] - x[0])
    t_hi = CEILING_SPAN_FACTOR * float(np.max(x))

    def fun(p):
        c, a, t_c, beta = p
        return c + a * np.exp(-((x / t_c) ** beta)) - y

    def jac(p):
        c, a, t_c, beta = p
        g = (x / t_c) ** beta
        e = np.exp(-g)
        return np.column_stack([
            np.ones_like(x),
            e,
            a * e * g * beta / t_c,
            -a * e * g * np.log(x / t_c),
        ])

    c0 = float(y[-1])
    a0 = float(y[0] - y[-1])
    env = np.abs(y - c0)
    t0 = _log_linear_timescale(x, env, span) if np.max(env) > 0 else span
    lo = np.array([-np.inf, -np.inf, span * 1e-4, 1e-3])
    hi = np.array([np.inf, np.inf, t_hi, 3.0])
    starts = [
        (c0, a0, t0, 1.0),
        (c0, a0, t0, 0.5),
        (c0, a0, t0, 1.5),
        (c0, a0, 0.3 * t0, 1.0),
    ]
    best = _best_fit(fun, jac, starts, (lo, hi))
    c, a, t_c, beta = (float(v) for v in best.x)
    return FitResult(
        family="stretched",
        params={"c": c, "a": a, "t": t_c, "beta": beta},
        r_squared=_r_squared(y, fun(best.x)),
        derived={"tau": t_c, "beta": beta},
    )


# ---------------------------------------------------------------------------
# triexponential sanity refit

GHOST_MODE_RATIO = 1e-2


def fit_triexp_sanity(x, y, base: FitResult) -> FitResult:
    """Add a third envelope mode to a converged biexp fit.

    Reports the ghost-mode amplitude ratio |a3|/max(|a1|,|a2|) and the
    R^2 improvement; tau_aw excludes the third mode when its ratio is
    below GHOST_MODE_RATIO (it is then a numerical ghost, not physics).
    Falls back to the base fit (flagged) if the refit does not converge.
    """
    if base.family != "biexp_revival":
        raise ValueError("triexp sanity refit needs a biexp_revival base")
    x, y = _prep(x, y, 9, "triexp")
    span = float(x[-1] - x[0])
    nyq = 0.5 * (len(x) - 1) / span
    bp = base.params

    def fun(p):
        c, a1, t1, a2, t2, a3, t3, f, phi = p
        env = (
            a1 * np.exp(-x / t1) + a2 * np.exp(-x / t2) + a3 * np.exp(-x / t3)
        )
        return c + env * np.cos(2.0 * math.pi * f * x + phi) - y

    def jac(p):
        c, a1, t1, a2, t2, a3, t3, f, phi = p
        e1, e2, e3 = np.exp(-x / t1), np.exp(-x / t2), np.exp(-x / t3)
        w = 2.0 * math.pi * f * x + phi
        cw, sw = np.cos(w), np.sin(w)
        env = a1 * e1 + a2 * e2 + a3 * e3
        return np.column_stack([
            np.ones_like(x),
            e1 * cw, a1 * e1 * (x / t1**2) * cw,
            e2 * cw, a2 * e2 * (x / t2**2) * cw,
            e3 * cw, a3 * e3 * (x / t3**2) * cw,
            -env * sw * 2.0 * math.pi * x,
            -env * sw,
        ])

    t_lo, t_hi = span * 1e-4, CEILING_SPAN_FACTOR * float(np.max(x))
    t3_seed = float(np.clip(math.sqrt(bp["t1"] * bp["t2"]), t_lo, t_hi))
    p0 = (bp["c"], bp["a1"], bp["t1"], bp["a2"], bp["t2"],
          0.0, t3_seed, bp["f"], bp["phi"])
    lo = np.array([-np.inf, -np.inf, t_lo, -np.inf, t_lo, -np.inf, t_lo, 0.0, -math.pi])
    hi = np.array([np.inf, np.inf, t_hi, np.inf, t_hi, np.inf, t_hi, nyq, math.pi])
    try:
        best = _best_fit(
            fun, jac, [p0], (lo, hi),
            x_scale=[1, 1, span, 1, span, 1, span, max(1.0 / span, 1e-12), 1],
        )
    except FitError:
        return FitResult(
            family="triexp", params=dict(base.params),
            r_squared=base.r_squared, guard=base.guard,
            derived=dict(base.derived) | {"a3_ratio": 0.0, "delta_r2": 0.0},
            fallback_used=True,
        )
    c, a1, t1, a2, t2, a3, t3, f, phi = (float(v) for v in best.x)
    a3_ratio = abs(a3) / max(abs(a1), abs(a2), 1e-300)
    r2 = _r_squared(y, fun(best.x))
    if a3_ratio < GHOST_MODE_RATIO:
        gated_tau = tau_aw([a1, a2], [t1, t2])
    else:
        gated_tau = tau_aw([a1, a2, a3], [t1, t2, t3])
    return FitResult(
        family="triexp",
        params={"c": c, "a1": a1, "t1": t1, "a2": a2, "t2": t2,
                "a3": a3, "t3": t3, "f": f, "phi": phi},
        r_squared=r2,
        derived={
            "a3_ratio": a3_ratio,
            "delta_r2": r2 - base.r_squared,
            "tau_aw": gated_tau,
        },
    )


# ---------------------------------------------------------------------------
# T1 relaxation fits

T1_MODES = ("constrained_a_free", "constrained_a_pinned", "free_beta_a_pinned")


def fit_t1(x, y, mode: str = "constrained_a_free") -> FitResult:
    """Fit y = A*exp(-(t/T1)^beta) + B with mode-dependent constraints.

    constrained_a_free:   A free,  beta = 1, B = 0
    constrained_a_pinned: A = 1,   beta = 1, B = 0
    free_beta_a_pinned:   A = 1,   beta free, B = 0
    """
    if mode not in T1_MODES:
        raise ValueError(f"unknown T1 fit mode: {mode}")
    x, y = _prep(x, y, 4, "t1")
    if np.any(x <= 0):
        raise ValueError("T1 fit needs strictly positive delays")
    span = float(x[-1] - x[0])
    # no family ceiling here: relaxation times far beyond the sweep window
    # are legitimate (and expected for high-Q devices)
    t_hi = 1e4 * float(x[-1])
    t_lo = span * 1e-4

    free_a = mode == "constrained_a_free"
    free_beta = mode == "free_beta_a_pinned"

    def unpack(p):
        i = 0
        if free_a:
            a = p[i]; i += 1
        else:
            a = 1.0
        t_c = p[i]; i += 1
        beta = p[i] if free_beta else 1.0
        return a, t_c, beta

    def fun(p):
        a, t_c, beta = unpack(p)
        return a * np.exp(-((x / t_c) ** beta)) - y

    def jac(p):
        a, t_c, beta = unpack(p)
        g = (x / t_c) ** beta
        e = np.exp(-g)
        cols = []
        if free_a:
            cols.append(e)
        cols.append(a * e * g * beta / t_c)
        if free_beta:
            cols.append(-a * e * g * np.log(x / t_c))
        return np.column_stack(cols)

    # log-linear seed for (A, T1)
    ylog = np.log(np.maximum(y, 1e-12))
    slope, intercept = np.polyfit(x, ylog, 1)
    t_seed = float(np.clip(-1.0 / slope if slope < 0 else t_hi, t_lo, t_hi))
    a_seed = float(np.clip(math.exp(intercept), 1e-6, 2.0))

    p0, lo, hi = [], [], []
    if free_a:
        p0.append(a_seed); lo.append(1e-6); hi.append(2.0)
    p0.append(t_seed); lo.append(t_lo); hi.append(t_hi)
    if free_beta:
        p0.append(1.0); lo.append(1e-3); hi.append(3.0)
    starts = [tuple(p0)]
    alt = list(p0)
    alt[1 if free_a else 0] = 0.5 * t_seed
    starts.append(tuple(alt))
    if free_beta:
        alt2 = list(p0)
        alt2[-1] = 0.5
        starts.append(tuple(alt2))
    best = _best_fit(fun, jac, starts, (np.array(lo), np.array(hi)))
    a, t_c, beta = unpack(best.x)
    return FitResult(
        family="t1_free_beta" if free_beta else "t1_constrained",
        params={"a": float(a), "t1": float(t_c), "beta": float(beta)},
        r_squared=_r_squared(y, fun(best.x)),
        derived={"t1": float(t_c), "a": float(a), "beta": float(beta),
                 "mode": float(T1_MODES.index(mode))},
    )


# ---------------------------------------------------------------------------
# Rabi amplitude scan


def fit_rabi_cosine(amplitudes, y) -> FitResult:
    """Fit y = c + v*cos(2 pi f a + phi) over a normalized amplitude sweep.

    derived.pi_amp is the location of the first maximum of the fitted
    curve inside the sweep range; derived.p_max is the fitted value
    there, clamped to the observed data range.
    """
    x, y = _prep(amplitudes, y, 8, "rabi_cosine")
    span = float(x[-1] - x[0])
    nyq = 0.5 * (len(x) - 1) / span

    def fun(p):
        c, v, f, phi = p
        return c + v * np.cos(2.0 * math.pi * f * x + phi) - y

    def jac(p):
        c, v, f, phi = p
        w = 2.0 * math.pi * f * x + phi
        cw, sw = np.cos(w), np.sin(w)
        return np.column_stack([
            np.ones_like(x), cw, -v * sw * 2.0 * math.pi * x, -v * sw,
        ])

    c0 = float(np.mean(y))
    v0 = 0.5 * float(np.ptp(y))
    f0 = _fft_frequency(x, y)
    lo = np.array([-np.inf, 0.0, 1e-6 / span, -math.pi])
    hi = np.array([np.inf, np.inf, nyq, math.pi])
    starts = [(c0, v0, f0, math.pi), (c0, v0, f0, 0.0),
              (c0, v0, 0.5 * f0 if f0 > 0 else 1.0 / span, math.pi)]
    best = _best_fit(fun, jac, starts, (lo, hi))
    c, v, f, phi = (float(p) for p in best.x)

    # first maximum of c + v cos(2 pi f a + phi) inside [x0, x1]
    if v <= 0.0 or f <= 0.0:
        raise NoInteriorMaximumError("fitted curve is flat over the sweep")
    k = math.ceil((f * x[0] + phi / (2.0 * math.pi)))
    a_max = (k - phi / (2.0 * math.pi)) / f
    if a_max < x[0] - 1e-12 or a_max > x[-1] + 1e-12:
        raise NoInteriorMaximumError(
            f"first fitted maximum at {a_max:.4f} outside sweep range"
        )
    p_max = float(np.clip(c + v, np.min(y), np.max(y)))
    return FitResult(
        family="rabi_cosine",
        params={"c": c, "v": v, "f": f, "phi": phi},
        r_squared=_r_squared(y, fun(best.x)),
        derived={"pi_amp": float(a_max), "p_max": p_max},
    )
