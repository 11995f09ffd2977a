"""Bootstrap confidence machinery for fit-derived scalars.

Case-resampling BCa intervals, paired-difference bootstraps on matched
grids, and adversarial-corner gap bounds between independent intervals.
Randomness comes from a counter-based Philox generator so every record is
bitwise reproducible from its logged seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm


class BootstrapError(RuntimeError):
    pass


@dataclass(frozen=True)
class BootstrapSpec:
    resamples: int = 10_000
    method: str = "bca"
    seed: int = 0
    guard_filter: object = None  # optional predicate applied to each refit

    def __post_init__(self):
        if self.resamples < 100:
            raise ValueError("resamples must be >= 100")
        if self.method != "bca":
            raise ValueError(f"unsupported bootstrap method: {self.method}")


@dataclass(frozen=True)
class CiRecord:
    point: float
    lo: float
    hi: float
    level: float = 0.95
    valid_rate: float = 1.0
    p_value: float | None = None
    seed: int = 0
    b: int = 0
    unreliable: bool = False

    def __post_init__(self):
        if not 0.0 <= self.valid_rate <= 1.0:
            raise ValueError("valid_rate out of [0, 1]")
        if self.lo > self.hi + 1e-15:
            raise ValueError("interval edges inverted")

    def to_dict(self) -> dict:
        return {
            "point": self.point, "lo": self.lo, "hi": self.hi,
            "level": self.level, "valid_rate": self.valid_rate,
            "p_value": self.p_value, "seed": self.seed, "B": self.b,
            "unreliable": self.unreliable,
        }


MIN_VALID_RATE = 0.05


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def _resample_stats(x, y, statistic, spec, rng, y2=None):
    """Case-bootstrap statistics; failed fits and guard rejects are dropped.

    Returns (values, n_valid, n_total).  With ``y2`` given, the statistic
    difference statistic(x*, y2*) - statistic(x*, y*) is collected using the
    same case indices for both datasets (paired resampling).
    """
    n = len(x)
    out = []
    n_total = spec.resamples
    for _ in range(n_total):
        idx = rng.integers(0, n, n)
        idx.sort()  # fits see delays in sweep order
        try:
            s = statistic(x[idx], y[idx])
            if y2 is not None:
                s = statistic(x[idx], y2[idx]) - s
        except Exception:
            continue
        if s is None or not math.isfinite(s):
            continue
        out.append(float(s))
    return np.asarray(out), len(out), n_total


def _bca_edges(stats: np.ndarray, point: float, jack: np.ndarray, level: float):
    """BCa interval edges from resample statistics and jackknife values."""
    alpha = 0.5 * (1.0 - level)
    b_valid = len(stats)
    if b_valid == 0:
        raise BootstrapError("no valid resamples")
    if np.all(stats == stats[0]) and stats[0] == point:
        return point, point
    # bias correction: fraction of resample statistics below the point
    frac = np.count_nonzero(stats < point) / b_valid
    frac = min(max(frac, 0.5 / b_valid), 1.0 - 0.5 / b_valid)
    z0 = norm.ppf(frac)
    # acceleration from the jackknife skew
    jm = np.mean(jack)
    num = np.sum((jm - jack) ** 3)
    den = np.sum((jm - jack) ** 2) ** 1.5
    acc = num / (6.0 * den) if den > 0 else 0.0

    def adj(z_alpha):
        w = z0 + (z0 + z_alpha) / (1.0 - acc * (z0 + z_alpha))
        return norm.cdf(w)

    a1 = adj(norm.ppf(alpha))
    a2 = adj(norm.ppf(1.0 - alpha))
    lo, hi = np.quantile(stats, [a1, a2])
    return float(lo), float(hi)


def _jackknife(x, y, statistic, y2=None):
    n = len(x)
    vals = []
    for i in range(n):
        keep = np.arange(n) != i
        try:
            s = statistic(x[keep], y[keep])
            if y2 is not None:
                s = statistic(x[keep], y2[keep]) - s
        except Exception:
            continue
        if math.isfinite(s):
            vals.append(s)
    if not vals:
        raise BootstrapError("jackknife produced no valid values")
    return np.asarray(vals)


def bca_ci(data, statistic, spec: BootstrapSpec) -> CiRecord:
    """95% BCa case-bootstrap CI on a fit-derived scalar.

    ``data`` is an (x, y) pair of equal-length arrays; ``statistic`` maps
    (x, y) -> scalar and may raise on a failed refit (the resample is then
    dropped and accounted for in valid_rate).
    """
    x, y = (np.asarray(v, dtype=float) for v in data)
    if x.shape != y.shape:
        raise ValueError("x/y shape mismatch")
    stat = statistic
    if spec.guard_filter is not None:
        inner = statistic
        flt = spec.guard_filter

        def stat(xs, ys):
            v = inner(xs, ys)
            if not flt(xs, ys):
                raise BootstrapError("guard rejected resample")
            return v

    point = float(stat(x, y))
    rng = _rng(spec.seed)
    stats, n_valid, n_total = _resample_stats(x, y, stat, spec, rng)
    valid_rate = n_valid / n_total
    if n_valid == 0:
        raise BootstrapError("all resamples failed fit or guard")
    jack = _jackknife(x, y, stat)
    lo, hi = _bca_edges(stats, point, jack, 0.95)
    return CiRecord(
        point=point, lo=min(lo, hi), hi=max(lo, hi),
        valid_rate=valid_rate, seed=spec.seed, b=n_total,
        unreliable=valid_rate < MIN_VALID_RATE,
    )


def paired_delta_ci(data_a, data_b, statistic, spec: BootstrapSpec) -> CiRecord:
    """CI on statistic(b) - statistic(a) under shared-case resampling.

    Both datasets must live on the same x grid; each resample draws one set
    of case indices applied to both, preserving pairing.  The two-sided
    p-value uses the sign-crossing count with an add-one correction:
    p = min(1, 2 (1 + min(#{d <= 0}, #{d >= 0})) / (B_valid + 1)).
    """
    xa, ya = (np.asarray(v, dtype=float) for v in data_a)
    xb, yb = (np.asarray(v, dtype=float) for v in data_b)
    if not np.array_equal(xa, xb):
        raise ValueError("paired bootstrap requires a shared x grid")
    point = float(statistic(xb, yb) - statistic(xa, ya))
    rng = _rng(spec.seed)
    deltas, n_valid, n_total = _resample_stats(
        xa, ya, statistic, spec, rng, y2=yb
    )
    if n_valid == 0:
        raise BootstrapError("all paired resamples failed")
    jack = _jackknife(xa, ya, statistic, y2=yb)
    lo, hi = _bca_edges(deltas, point, jack, 0.95)
    n_le = int(np.count_nonzero(deltas <= 0.0))
    n_ge = int(np.count_nonzero(deltas >= 0.0))
    p = min(1.0, 2.0 * (1 + min(n_le, n_ge)) / (n_valid + 1))
    return CiRecord(
        point=point, lo=min(lo, point, hi), hi=max(hi, point, lo),
        valid_rate=n_valid / n_total, p_value=p, seed=spec.seed, b=n_total,
        unreliable=(n_valid / n_total) < MIN_VALID_RATE,
    )


GAP_MODES = ("ratio_lower_bound", "difference_lower_bound")


def independent_gap(ci_a: CiRecord, ci_b: CiRecord, mode: str) -> float:
    """Adversarial-corner bound between two independent intervals.

    ratio mode: ci_a.lo / ci_b.hi; difference mode: ci_a.lo - ci_b.hi.
    """
    if mode not in GAP_MODES:
        raise ValueError(f"unknown gap mode: {mode}")
    if mode == "ratio_lower_bound":
        if ci_b.hi <= 0:
            raise ValueError("ratio bound undefined for non-positive upper edge")
        return ci_a.lo / ci_b.hi
    return ci_a.lo - ci_b.hi
