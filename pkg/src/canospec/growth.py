"""Growth functions and sequence diagnostics.

A growth function g is a positive increasing comparison function whose
order rho = lim log g(r) / log r exists and is positive.  The engines in
:mod:`canospec.criteria` compare dyadic weight sequences against such
functions; this module also houses the deterministic trend and series
classifiers those engines rely on.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass

import numpy as np

__all__ = [
    "GrowthFunction",
    "lindelof",
    "growth_from_json",
    "rearrange_desc",
    "conv_exponent",
    "ExponentEstimate",
    "limsup_ratio",
    "LimsupRatioResult",
    "Trend",
    "classify_trend",
    "SeriesClass",
    "classify_series",
]

# Inverse is solved to this relative accuracy on the g-value.
_INVERSE_RTOL = 1e-12

# Minimum sequence length accepted by conv_exponent.
_MIN_EXPONENT_LENGTH = 16


def _iterated_log(r, m):
    """m-fold iterated natural log of r (m >= 1), elementwise."""
    out = np.log(r)
    for _ in range(m - 1):
        out = np.log(out)
    return out


@dataclass(frozen=True)
class GrowthFunction:
    """Comparison function of finite positive order.

    Two backing forms exist.  The ``lindelof`` form is
    ``g(r) = r**rho * log(r)**b1 * loglog(r)**b2 * ...`` for ``r >= r0``,
    extended below ``r0`` by the pure power ``g(r0) * (r / r0)**rho`` (the
    extension changes no tail verdict).  The ``table`` form interpolates a
    sampled increasing function monotonically in log-log coordinates and is
    marked approximate: criterion reports computed with it carry a warning.

    Attributes
    ----------
    rho : float
        Order of the growth function.
    betas : tuple of float
        Iterated-log exponents (lindelof form; empty for pure powers).
    r0 : float
        Lower cutoff of the exact expression.
    table : tuple of ndarray or None
        ``(r, g)`` samples for the table form.
    """

    rho: float
    betas: tuple = ()
    r0: float = float(np.exp(np.exp(1.0)))
    table: tuple | None = None

    def __post_init__(self):
        if self.table is None:
            if not self.rho > 0:
                raise ValueError("growth order must be positive")
            if self.r0 < 1.0:
                raise ValueError("r0 must be >= 1")

    @property
    def approximate(self) -> bool:
        """True for table-backed functions (verdicts using them are marked)."""
        return self.table is not None

    @property
    def order(self) -> float:
        return self.rho

    def __call__(self, r):
        return self.eval(r)

    def eval(self, r):
        """Value g(r), vectorized; r > 0 required."""
        r = np.asarray(r, dtype=float)
        if np.any(r <= 0):
            raise ValueError("growth functions are defined for r > 0")
        if self.table is not None:
            return self._eval_table(r)
        return self._eval_lindelof(r)

    def _eval_lindelof(self, r):
        scalar = r.ndim == 0
        r = np.atleast_1d(r)
        out = np.empty_like(r)
        low = r < self.r0
        if np.any(~low):
            rr = r[~low]
            val = self.rho * np.log(rr)
            for m, beta in enumerate(self.betas, start=1):
                if beta != 0.0:
                    val = val + beta * np.log(_iterated_log(rr, m))
            out[~low] = np.exp(val)
        if np.any(low):
            out[low] = self._g_r0() * (r[low] / self.r0) ** self.rho
        return out[0] if scalar else out

    def _g_r0(self):
        val = self.rho * np.log(self.r0)
        for m, beta in enumerate(self.betas, start=1):
            if beta != 0.0:
                val += beta * np.log(_iterated_log(np.asarray(self.r0), m))
        return float(np.exp(val))

    def _eval_table(self, r):
        rs, gs = self.table
        # monotone (linear in log-log) interpolation; power-law extrapolation
        logr = np.log(r)
        return np.exp(np.interp(logr, np.log(rs), np.log(gs)))

    def inverse(self, y):
        """Solve g(r) = y by monotone bisection in log r.

        Accurate to relative ``1e-12`` on the g-value.  Below-cutoff values
        are handled through the power extension; non-positive y is a range
        error.
        """
        y = np.asarray(y, dtype=float)
        scalar = y.ndim == 0
        y = np.atleast_1d(y)
        if np.any(y <= 0):
            raise ValueError("inverse requires y > 0")
        lo = np.full(y.shape, -700.0)
        hi = np.full(y.shape, 700.0)
        # expand upper bracket where needed (order > 0 makes g unbounded)
        for _ in range(8):
            bad = self.eval(np.exp(hi / 2)) < y  # mid-scale sanity only
            if not np.any(bad):
                break
            hi[bad] *= 2
        if np.any(self.eval(np.exp(hi)) < y):
            raise ValueError("inverse target outside bracketable range")
        for _ in range(100):
            mid = 0.5 * (lo + hi)
            high = self.eval(np.exp(mid)) > y
            hi = np.where(high, mid, hi)
            lo = np.where(high, lo, mid)
            val = self.eval(np.exp(0.5 * (lo + hi)))
            if np.all(np.abs(val - y) <= _INVERSE_RTOL * y):
                break
        out = np.exp(0.5 * (lo + hi))
        return float(out[0]) if scalar else out

    def orlicz_M(self, t):
        """Orlicz comparison function M(t) = 1 / g(1/t), normalised M(1) = 1.

        The normalisation rescales g by g(1); tails, and hence every
        criterion verdict, are unchanged.
        """
        t = np.asarray(t, dtype=float)
        if np.any(t <= 0):
            raise ValueError("orlicz_M requires t > 0")
        return self.eval(1.0) / self.eval(1.0 / t)

    def order_estimate(self, r=1e6, h=1e-3):
        """Finite-difference slope of log g vs log r at r (sanity check)."""
        lr = np.log(r)
        return float(
            (np.log(self.eval(np.exp(lr + h))) - np.log(self.eval(np.exp(lr - h))))
            / (2 * h)
        )

    def to_json(self) -> str:
        if self.table is not None:
            rs, gs = self.table
            return json.dumps(
                {"kind": "table", "r": list(map(float, rs)), "g": list(map(float, gs))},
                sort_keys=True,
            )
        return json.dumps(
            {"kind": "lindelof", "rho": self.rho, "betas": list(self.betas),
             "r0": self.r0},
            sort_keys=True,
        )


def lindelof(rho, betas=(), r0=None):
    """Growth function r**rho with iterated-log corrections."""
    if r0 is None:
        r0 = float(np.exp(np.exp(1.0)))
        # iterated logs beyond loglog need a higher cutoff to stay positive
        if len(betas) > 2:
            r0 = float(np.exp(np.exp(np.exp(1.0))))
    return GrowthFunction(rho=float(rho), betas=tuple(betas), r0=float(r0))


def growth_from_json(text):
    """Parse the growth-function JSON interchange format."""
    doc = json.loads(text)
    kind = doc.get("kind")
    if kind == "lindelof":
        return lindelof(doc["rho"], doc.get("betas", ()), doc.get("r0"))
    if kind == "table":
        r = np.asarray(doc["r"], dtype=float)
        g = np.asarray(doc["g"], dtype=float)
        if r.ndim != 1 or r.shape != g.shape or len(r) < 2:
            raise ValueError("table growth function needs matching r/g samples")
        if np.any(np.diff(r) <= 0) or np.any(np.diff(g) <= 0):
            raise ValueError("table growth function must be strictly increasing")
        if np.any(g <= 0) or np.any(r <= 0):
            raise ValueError("table growth function must be positive")
        # order from the top decade of samples
        k = max(2, len(r) // 4)
        rho = float(np.polyfit(np.log(r[-k:]), np.log(g[-k:]), 1)[0])
        return GrowthFunction(rho=rho, table=(r, g))
    raise ValueError(f"unknown growth function kind: {kind!r}")


# ----------------------------------------------------------------------------
# sequence utilities


def rearrange_desc(seq):
    """Nonincreasing rearrangement of |seq| (multiset preserved)."""
    arr = np.abs(np.asarray(seq, dtype=float))
    if arr.ndim != 1:
        raise ValueError("expected a one-dimensional sequence")
    if np.any(np.isnan(arr)):
        raise ValueError("sequence contains NaN")
    return np.sort(arr)[::-1]


@dataclass(frozen=True)
class ExponentEstimate:
    """Least-squares estimate of limsup log n / log s_n.

    ``slope`` is fitted on log n versus log s_n over the top half of the
    (ascending) sequence; ``residual`` is the RMS misfit of that regression,
    reported so callers can gate on fit quality.
    """

    slope: float
    intercept: float
    residual: float
    n_used: int

    def in_band(self, lo, hi):
        return lo <= self.slope <= hi


def conv_exponent(seq, fit_fraction=0.5):
    """Convergence-exponent estimate for an ascending positive sequence.

    Parameters
    ----------
    seq : array_like
        Moduli ``|s_n|`` sorted ascending, all positive, length >= 16.
    fit_fraction : float
        Trailing fraction of the sequence used in the regression.

    Returns
    -------
    ExponentEstimate
    """
    s = np.asarray(seq, dtype=float)
    if s.ndim != 1 or len(s) < _MIN_EXPONENT_LENGTH:
        raise ValueError("need at least 16 entries to estimate an exponent")
    if np.any(s <= 0):
        raise ValueError("entries must be positive")
    n = np.arange(1, len(s) + 1)
    start = int(len(s) * (1.0 - fit_fraction))
    x = np.log(s[start:])
    y = np.log(n[start:])
    slope, intercept = np.polyfit(x, y, 1)
    resid = float(np.sqrt(np.mean((y - (slope * x + intercept)) ** 2)))
    return ExponentEstimate(float(slope), float(intercept), resid, len(x))


class Trend(enum.Enum):
    """Tail behaviour of a positive trajectory."""

    VANISHING = "vanishing"
    BOUNDED = "bounded"
    DIVERGENT = "divergent"
    INCONCLUSIVE = "inconclusive"


# Trend thresholds.  VANISHING: the final third has decayed at least 10x
# from the trajectory peak.  DIVERGENT: the final third sits at least 10x
# above the first third.  BOUNDED additionally requires the level to have
# stabilised across the last two thirds (ratio within 5%), which keeps
# slowly decaying trajectories (e.g. 1/log n) out of BOUNDED and lets the
# engines extend the depth instead.
_DECAY_FACTOR = 10.0
_GROWTH_FACTOR = 10.0
_MEDIAN_BAND = 4.0
_PLATEAU_BAND = 0.05


def classify_trend(values) -> Trend:
    """Classify a positive trajectory as vanishing/bounded/divergent."""
    v = np.asarray(values, dtype=float)
    if v.ndim != 1 or len(v) < 6:
        return Trend.INCONCLUSIVE
    if np.any(np.isnan(v)) or np.any(v < 0):
        raise ValueError("trajectory must be nonnegative and NaN-free")
    v = np.minimum(v, 1e300)  # infinities count as (huge) divergence evidence
    third = len(v) // 3
    t1, t2, t3 = v[:third], v[third : 2 * third], v[2 * third :]
    peak = float(v.max())
    if peak == 0.0:
        return Trend.VANISHING
    if t3.max() <= peak / _DECAY_FACTOR:
        return Trend.VANISHING
    if t3.min() >= _GROWTH_FACTOR * max(t1.max(), 1e-300):
        return Trend.DIVERGENT
    med = float(np.median(v))
    lvl2, lvl3 = float(t2.max()), float(t3.max())
    if (
        med / _MEDIAN_BAND <= lvl3 <= med * _MEDIAN_BAND
        and lvl2 > 0
        and abs(lvl3 / lvl2 - 1.0) <= _PLATEAU_BAND
    ):
        return Trend.BOUNDED
    return Trend.INCONCLUSIVE


class SeriesClass(enum.Enum):
    """Convergence classification of a positive series."""

    CONVERGENT = "convergent"
    DIVERGENT = "divergent"
    INCONCLUSIVE = "inconclusive"


# Series classification works on sums over dyadic index windows
# I_k = sum_{2^(k-1) < n <= 2^k} t_n.  The series converges iff sum_k I_k
# does; the window sums turn slow power/log behaviour into a short, cleanly
# classifiable trajectory.  A geometric fit log I_k ~ a + q k detects
# ratio-test decay; otherwise a power fit log I_k ~ a + s log k separates
# sum 1/k^s at s < -1.15 (convergent) from s > -0.85 (divergent), leaving a
# deliberate inconclusive gap around the harmonic boundary.
_GEOMETRIC_LOG_RATIO = np.log(0.9)
_POWER_CONVERGENT = -1.15
_POWER_DIVERGENT = -0.85


def dyadic_window_sums(terms):
    """Sums of ``terms`` over index windows (2^(k-1), 2^k], k = 1.."""
    t = np.asarray(terms, dtype=float)
    sums = []
    k = 1
    while (1 << (k - 1)) < len(t):
        lo = 1 << (k - 1)
        hi = min(1 << k, len(t))
        if hi - lo < max(1, (hi - lo)):  # pragma: no cover - structural guard
            break
        sums.append(float(np.sum(t[lo:hi])))
        if hi == len(t):
            break
        k += 1
    return np.asarray(sums)


def classify_series(terms) -> SeriesClass:
    """Classify convergence of sum(terms) from a long positive prefix."""
    t = np.asarray(terms, dtype=float)
    if np.any(t < 0):
        raise ValueError("series terms must be nonnegative")
    sums = dyadic_window_sums(t)
    sums = np.minimum(sums, 1e300)
    if len(sums) < 6:
        return SeriesClass.INCONCLUSIVE
    trend = classify_trend(np.maximum(sums, 0.0))
    if trend is Trend.DIVERGENT or trend is Trend.BOUNDED:
        return SeriesClass.DIVERGENT
    if trend is not Trend.VANISHING:
        return SeriesClass.INCONCLUSIVE
    # window sums vanish; decide summability of I_k from its decay law
    if sums[-1] == 0.0:
        # terms underflowed to zero inside the sampled range: the numeric
        # series is finite, which only happens for strongly convergent tails
        return SeriesClass.CONVERGENT
    k = np.arange(1, len(sums) + 1, dtype=float)
    tail = slice(len(sums) // 3, None)
    lk = np.log(np.maximum(sums[tail], 1e-300))
    kk = k[tail]
    q = np.polyfit(kk, lk, 1)[0]
    if q <= _GEOMETRIC_LOG_RATIO:
        return SeriesClass.CONVERGENT
    s = np.polyfit(np.log(kk), lk, 1)[0]
    if s <= _POWER_CONVERGENT:
        return SeriesClass.CONVERGENT
    if s >= _POWER_DIVERGENT:
        return SeriesClass.DIVERGENT
    return SeriesClass.INCONCLUSIVE


@dataclass(frozen=True)
class LimsupRatioResult:
    """Trajectory r_n = n / g(1 / omega*_n) and its classification."""

    ratios: np.ndarray
    tail_running_max: np.ndarray
    trend: Trend


def limsup_ratio(omega_star, g: GrowthFunction) -> LimsupRatioResult:
    """Evaluate the limsup comparison trajectory for a rearranged sequence.

    Parameters
    ----------
    omega_star : array_like
        Nonincreasing positive sequence (a nonincreasing rearrangement).
    g : GrowthFunction

    Returns
    -------
    LimsupRatioResult
        The sequence ``r_n = n / g(1 / omega*_n)``, its running maximum over
        the final third, and the trend classification.
    """
    w = np.asarray(omega_star, dtype=float)
    if np.any(w <= 0):
        raise ValueError("rearranged sequence must be positive")
    if np.any(np.diff(w) > 1e-12 * w[:-1]):
        raise ValueError("sequence must be nonincreasing")
    n = np.arange(1, len(w) + 1, dtype=float)
    ratios = n / g.eval(1.0 / w)
    tail = ratios[2 * len(ratios) // 3 :]
    running = np.maximum.accumulate(tail)
    return LimsupRatioResult(ratios, running, classify_trend(ratios))
