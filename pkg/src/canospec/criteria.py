"""Criterion engines: discreteness, bounded invertibility, summability,
limit-superior distribution, and the weighted compactness products.

Each engine evaluates its criterion along the dyadic scales c_n in two
forms: the continuous product P(c_n) = tail_h1(c_n) * int_a^(c_n) h2 (the
square of the function whose decay decides the criterion) and the
sequential weights omega_n^2.  The two are tied by the exact convolution

    P(c_n) = sum_{k <= n} 2^(k-n) omega_k^2,

so both trajectories derive from the same stable cell integrals and remain
computable at depths far beyond double-precision t-coordinates.  Limits are
classified from finite trajectories with the deterministic trend rules of
:mod:`canospec.growth`; when a trajectory is inconclusive the engine
extends the depth (x4 per rung) up to a cap, and every report carries the
raw trajectory so a human can override the classification.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.signal import lfilter

from .errors import DomainError, PreconditionError, UnsupportedOrderError
from .growth import (
    GrowthFunction,
    SeriesClass,
    Trend,
    classify_series,
    classify_trend,
    limsup_ratio,
    rearrange_desc,
)
from .hamiltonian import LOG2, Hamiltonian

__all__ = [
    "Verdict",
    "CriterionReport",
    "trajectories",
    "discreteness",
    "bounded_invertibility",
    "summability",
    "limsup_distribution",
    "kac_F",
    "kac_membership",
    "KacMembership",
    "DEFAULT_MAX_DEPTH",
]

# Trajectory depth cap for the trend ladder.  Slowly varying weights
# (1/log n scale) need millions of dyadic cells before the 10x decay rule
# can see their limit; the stable cell integrals make that affordable.
DEFAULT_MAX_DEPTH = 1 << 21

_REPORT_POINTS = 257  # trajectories are downsampled to this many pairs


class Verdict:
    HOLDS = "holds"
    FAILS = "fails"
    INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class CriterionReport:
    """Outcome of one criterion engine.

    ``trajectory`` carries (n, value) pairs of the primary diagnostic
    (continuous product when both methods run); ``agreement`` is set when
    both the continuous and the sequential method were evaluated and
    records whether their classifications coincide.
    """

    criterion: str
    verdict: str
    method: str
    trajectory: list
    agreement: bool | None = None
    warning: str | None = None
    details: dict = field(default_factory=dict)

    def to_json(self) -> str:
        doc = {
            "criterion": self.criterion,
            "verdict": self.verdict,
            "method": self.method,
            "trajectory": self.trajectory,
            "agreement": self.agreement,
        }
        if self.warning:
            doc["warning"] = self.warning
        return json.dumps(doc, sort_keys=True)


def _downsample(n_idx, values, cap=_REPORT_POINTS):
    if len(values) <= cap:
        keep = np.arange(len(values))
    else:
        keep = np.unique(np.geomspace(1, len(values), cap).astype(int) - 1)
    return [[int(n_idx[i]), float(values[i])] for i in keep]


def trajectories(H: Hamiltonian, depth: int):
    """(n, omega_n^2, P(c_n)) for n = 1..depth via the cell convolution."""
    n = np.arange(1, depth + 1)
    w2 = H.omega_sq(n)
    w2 = np.where(np.isfinite(w2), w2, 1e300)
    # P_n = w2_n + P_{n-1} / 2, an order-1 IIR recurrence
    P = lfilter([1.0], [1.0, -0.5], w2)
    return n, w2, P


def _ladder(H, depth, max_depth, conclusive):
    """Extend depth x4 until ``conclusive`` holds or the cap is reached."""
    cap = min(max_depth, H.max_stable_depth)
    N = min(max(depth, 8), cap) if cap >= 8 else cap
    if N < 1:
        raise PreconditionError("Hamiltonian supports no dyadic depth")
    while True:
        data = trajectories(H, N)
        if conclusive(data) or N >= cap:
            return data
        N = min(4 * N, cap)


def _verdict_from_trends(trend_p, trend_w, holds_when, fails_when):
    if trend_p in holds_when and trend_w in holds_when:
        return Verdict.HOLDS
    if trend_p in fails_when or trend_w in fails_when:
        return Verdict.FAILS
    return Verdict.INCONCLUSIVE


def discreteness(H: Hamiltonian, depth: int = 40,
                 max_depth: int = DEFAULT_MAX_DEPTH) -> CriterionReport:
    """Is the spectrum discrete: does P(t) -> 0 at the singular endpoint?

    Equivalently (and tested simultaneously) omega_n -> 0.  Both the
    continuous product P(c_n) and the weights omega_n^2 must be classified
    vanishing for ``holds``; a bounded or divergent trajectory on either
    side gives ``fails``.
    """
    H._require_dyadic()

    def conclusive(data):
        _, w2, P = data
        return (classify_trend(w2) is not Trend.INCONCLUSIVE
                and classify_trend(P) is not Trend.INCONCLUSIVE)

    n, w2, P = _ladder(H, depth, max_depth, conclusive)
    trend_w = classify_trend(w2)
    trend_p = classify_trend(P)
    verdict = _verdict_from_trends(
        trend_p, trend_w,
        holds_when={Trend.VANISHING},
        fails_when={Trend.BOUNDED, Trend.DIVERGENT},
    )
    agreement = trend_p == trend_w
    if not agreement:
        verdict = Verdict.INCONCLUSIVE
    return CriterionReport(
        criterion="discreteness",
        verdict=verdict,
        method="both",
        trajectory=_downsample(n, P),
        agreement=agreement,
        details={
            "continuous_trend": trend_p.value,
            "sequential_trend": trend_w.value,
            "depth": int(n[-1]),
            "sequential_trajectory": _downsample(n, w2),
        },
    )


def bounded_invertibility(H: Hamiltonian, depth: int = 40,
                          max_depth: int = DEFAULT_MAX_DEPTH) -> CriterionReport:
    """Is 0 outside the spectrum: is P(t) bounded toward the endpoint?"""
    H._require_dyadic()

    def conclusive(data):
        _, w2, P = data
        return (classify_trend(w2) is not Trend.INCONCLUSIVE
                and classify_trend(P) is not Trend.INCONCLUSIVE)

    n, w2, P = _ladder(H, depth, max_depth, conclusive)
    trend_w = classify_trend(w2)
    trend_p = classify_trend(P)
    verdict = _verdict_from_trends(
        trend_p, trend_w,
        holds_when={Trend.VANISHING, Trend.BOUNDED},
        fails_when={Trend.DIVERGENT},
    )
    agreement = trend_p == trend_w
    if not agreement and verdict != Verdict.FAILS:
        verdict = Verdict.INCONCLUSIVE
    return CriterionReport(
        criterion="bounded_invertibility",
        verdict=verdict,
        method="both",
        trajectory=_downsample(n, P),
        agreement=agreement,
        details={
            "continuous_trend": trend_p.value,
            "sequential_trend": trend_w.value,
            "depth": int(n[-1]),
            "sequential_trajectory": _downsample(n, w2),
        },
    )


def _require_order(g: GrowthFunction):
    if not g.order > 1.0:
        raise UnsupportedOrderError(
            f"growth order {g.order} not supported (needs order > 1)")


def summability(H: Hamiltonian, g: GrowthFunction, depth: int = 1 << 12,
                max_depth: int = 1 << 18,
                assume_discrete: bool = False) -> CriterionReport:
    """Does sum 1/g(|lambda_n|) converge?

    Continuous method: the criterion integral with the substitution
    u = tail_h1(t)/total, under which the measure h1 dt / tail_h1(t) gives
    every dyadic cell weight log 2 exactly, so the integral becomes
    ``log 2 * sum_n g(P(c_n)^(-1/2))^(-1)``.  Sequential method: partial
    sums of ``sum_n 1/g(1/omega_n)``.  Convergence of both series is
    classified from sums over dyadic index windows.
    """
    _require_order(g)
    H._require_dyadic()
    if not assume_discrete:
        disc = discreteness(H)
        if disc.verdict != Verdict.HOLDS:
            raise PreconditionError(
                "summability requires a discrete spectrum "
                f"(discreteness verdict: {disc.verdict}); "
                "pass assume_discrete=True to evaluate anyway")

    def conclusive(data):
        _, w2, P = data
        return (_series_class_seq(w2, g) is not SeriesClass.INCONCLUSIVE
                and _series_class_cont(P, g) is not SeriesClass.INCONCLUSIVE)

    n, w2, P = _ladder(H, depth, max_depth, conclusive)
    cls_seq = _series_class_seq(w2, g)
    cls_cont = _series_class_cont(P, g)
    agreement = cls_seq == cls_cont
    if cls_cont is SeriesClass.CONVERGENT and agreement:
        verdict = Verdict.HOLDS
    elif cls_cont is SeriesClass.DIVERGENT and agreement:
        verdict = Verdict.FAILS
    elif not agreement and SeriesClass.INCONCLUSIVE not in (cls_seq, cls_cont):
        verdict = Verdict.INCONCLUSIVE
    else:
        conclusive_side = cls_seq if cls_cont is SeriesClass.INCONCLUSIVE else cls_cont
        verdict = {SeriesClass.CONVERGENT: Verdict.HOLDS,
                   SeriesClass.DIVERGENT: Verdict.FAILS,
                   SeriesClass.INCONCLUSIVE: Verdict.INCONCLUSIVE}[conclusive_side]
    terms = _cont_terms(P, g)
    return CriterionReport(
        criterion="summability",
        verdict=verdict,
        method="both",
        trajectory=_downsample(n, np.cumsum(terms)),
        agreement=agreement,
        warning="growth function is table-backed (approximate)" if g.approximate else None,
        details={
            "continuous_class": cls_cont.value,
            "sequential_class": cls_seq.value,
            "depth": int(n[-1]),
            "sequential_partial_sums": _downsample(n, np.cumsum(_seq_terms(w2, g))),
        },
    )


def _seq_terms(w2, g):
    w = np.sqrt(np.maximum(w2, 0.0))
    out = np.zeros_like(w)
    live = w > 0
    out[live] = 1.0 / g.eval(1.0 / w[live])
    return out


def _cont_terms(P, g):
    vals = np.sqrt(np.maximum(P, 0.0))
    out = np.zeros_like(vals)
    live = vals > 0
    out[live] = LOG2 / g.eval(1.0 / vals[live])
    return out


def _series_class_seq(w2, g):
    return classify_series(_seq_terms(w2, g))


def _series_class_cont(P, g):
    return classify_series(_cont_terms(P, g))


def limsup_distribution(H: Hamiltonian, g: GrowthFunction, depth: int = 40,
                        max_depth: int = 1 << 19,
                        assume_discrete: bool = False) -> CriterionReport:
    """Classify limsup_n n / g(1/omega*_n) (bounded) and its vanishing.

    The verdict refers to the boundedness statement; the report details
    carry the separate vanishing classification.  There is no continuous
    counterpart (the rearrangement is intrinsic), so method = sequential.
    """
    _require_order(g)
    H._require_dyadic()
    if not assume_discrete:
        disc = discreteness(H)
        if disc.verdict != Verdict.HOLDS:
            raise PreconditionError(
                "limsup distribution requires a discrete spectrum "
                f"(discreteness verdict: {disc.verdict}); "
                "pass assume_discrete=True to evaluate anyway")

    cap = min(max_depth, H.max_stable_depth)
    N = min(max(depth, 8), cap)
    while True:
        w = np.sqrt(np.maximum(H.omega_sq(np.arange(1, N + 1)), 0.0))
        w_star = rearrange_desc(w[w > 0])
        result = limsup_ratio(w_star, g)
        if result.trend is not Trend.INCONCLUSIVE or N >= cap:
            break
        N = min(4 * N, cap)

    trend = result.trend
    bounded = {Trend.VANISHING: Verdict.HOLDS, Trend.BOUNDED: Verdict.HOLDS,
               Trend.DIVERGENT: Verdict.FAILS,
               Trend.INCONCLUSIVE: Verdict.INCONCLUSIVE}[trend]
    vanishing = {Trend.VANISHING: Verdict.HOLDS, Trend.BOUNDED: Verdict.FAILS,
                 Trend.DIVERGENT: Verdict.FAILS,
                 Trend.INCONCLUSIVE: Verdict.INCONCLUSIVE}[trend]
    label = {Trend.VANISHING: "vanishing",
             Trend.BOUNDED: "bounded-nonvanishing",
             Trend.DIVERGENT: "divergent",
             Trend.INCONCLUSIVE: "inconclusive"}[trend]
    n = np.arange(1, len(result.ratios) + 1)
    return CriterionReport(
        criterion="limsup_distribution",
        verdict=bounded,
        method="sequential",
        trajectory=_downsample(n, result.ratios),
        agreement=None,
        warning="growth function is table-backed (approximate)" if g.approximate else None,
        details={
            "classification": label,
            "limsup_bounded": bounded,
            "limit_zero": vanishing,
            "depth": int(N),
            "tail_running_max": [float(x) for x in
                                 result.tail_running_max[:: max(1, len(result.tail_running_max) // 64)]],
        },
    )


# -------------------------------------------------------------------------
# weighted compactness products


def _weighted_section(H, lo, hi, lam, which):
    """quad of h_which(s) * exp(sign * 2 lam m3(s)) over [lo, hi];
    sign = +1 for which = 1 and -1 for which = 2."""
    if not hi > lo:
        return 0.0
    sign = 1.0 if which == 1 else -1.0
    b_safe = np.nextafter(H.b, H.a) if np.isfinite(H.b) else H.b

    def f(s):
        s = min(float(s), b_safe)
        h1, h2, _ = H.h_at(s)
        h = h1 if which == 1 else h2
        m3 = H.head_integral(3, s)
        return min(float(h) * math.exp(min(sign * 2.0 * lam * m3, 690.0)), 1e280)

    val, _ = quad(f, lo, hi, epsrel=1e-8, epsabs=1e-300, limit=100)
    return val


def _weighted_head(H, t, lam, which, rtol=1e-9):
    """int_a^t h_which e^(-+2 lam m3), sectioned geometrically toward t
    (where the integrand may concentrate)."""
    total = 0.0
    prev = H.a
    sections = [t - (t - H.a) * 2.0 ** (-k) for k in range(1, 52)] + [t]
    for nxt in sections:
        if nxt <= prev:
            continue
        total += _weighted_section(H, prev, nxt, lam, which)
        prev = nxt
    return total


def _weighted_tail(H, t, lam, which, rtol=1e-9):
    """int_t^b h_which e^(+-2 lam m3); +inf is a legal value."""
    b = H.b
    total = 0.0
    sec = 0.0
    if np.isfinite(b):
        prev = t
        grow = 0
        for k in range(1, 60):
            nxt = min(b - (b - t) * 2.0 ** (-k), np.nextafter(b, t))
            if nxt <= prev:
                break
            sec = _weighted_section(H, prev, nxt, lam, which)
            total += sec
            if total > 0 and sec <= rtol * total:
                return total
            grow = grow + 1 if sec >= 0.4 * total > 0 else 0
            if grow >= 10 or total > 1e200:
                return float("inf")
            prev = nxt
        return total if sec <= 0.25 * total else float("inf")
    prev = t
    for k in range(60):
        nxt = t + (2.0 ** (k + 1) - 1.0)
        sec = _weighted_section(H, prev, nxt, lam, which)
        total += sec
        if total > 0 and sec <= rtol * total:
            return total
        if total > 1e200:
            return float("inf")
        prev = nxt
    return total if sec <= 0.25 * total else float("inf")


def kac_F(H: Hamiltonian, t, lam) -> float:
    """Product int_t^b h1 e^(2 lam m3) * int_a^t h2 e^(-2 lam m3).

    For diagonal H (m3 = 0) this reduces to P(t) for every lam.  The value
    is invariant under reparametrization of the independent variable, so a
    trace-normalised caller and the original parametrization agree; +inf is
    returned when the tail factor diverges.
    """
    t = float(t)
    if not (H.a <= t < H.b):
        raise DomainError("t outside [a, b)")
    head = _weighted_head(H, t, float(lam), 2)
    tail = _weighted_tail(H, t, float(lam), 1)
    return tail * head if np.isfinite(tail) else float("inf")


def _kac_F_swapped(H, t, lam):
    """Companion product with the roles of h1 and h2 exchanged."""
    head = _weighted_head(H, float(t), lam, 1)
    tail = _weighted_tail(H, float(t), lam, 2)
    return tail * head if np.isfinite(tail) else float("inf")


@dataclass(frozen=True)
class KacMembership:
    """Membership decision for the weighted compactness sets.

    ``label`` is one of ``"A"`` (first product bounded by K / lam^2 along
    the tail), ``"B"`` (swapped product), ``"neither"``, ``"inconclusive"``.
    """

    label: str
    lam: float
    bound: float
    trajectory_a: list
    trajectory_b: list


def kac_membership(H: Hamiltonian, lam, K, depth: int = 24) -> KacMembership:
    """Estimate limsup_t F(t, lam) along dyadic scales against K / lam^2.

    The evaluation points are the h1 tail-halving scales; because both the
    products and those scales are reparametrization invariant, the result
    equals the one computed after trace normalisation.
    """
    lam = float(lam)
    if lam == 0.0:
        raise DomainError("lam must be nonzero")
    H._require_dyadic()
    bound = float(K) / (lam * lam)
    ns = np.arange(1, depth + 1)
    pts = np.array([H.inverse_tail(2.0 ** float(-n)) for n in ns])
    # accumulate the weighted masses cell by cell (one benign quad each)
    edges = np.concatenate([[H.a], pts])
    w1 = np.array([_weighted_section(H, lo, hi, lam, 1)
                   for lo, hi in zip(edges[:-1], edges[1:])])
    w2 = np.array([_weighted_section(H, lo, hi, lam, 2)
                   for lo, hi in zip(edges[:-1], edges[1:])])
    rest1 = _weighted_tail(H, pts[-1], lam, 1)
    rest2 = _weighted_tail(H, pts[-1], lam, 2)
    head1 = np.cumsum(w1)
    head2 = np.cumsum(w2)
    tail1 = rest1 + (head1[-1] - head1)
    tail2 = rest2 + (head2[-1] - head2)
    with np.errstate(invalid="ignore"):
        fa = np.where(np.isfinite(tail1), tail1 * head2, np.inf)
        fb = np.where(np.isfinite(tail2), tail2 * head1, np.inf)
    third = 2 * len(ns) // 3
    a_max = float(np.max(fa[third:]))
    b_max = float(np.max(fb[third:]))
    if a_max <= bound:
        label = "A"
    elif b_max <= bound:
        label = "B"
    elif (np.isfinite(a_max) and fa[-1] <= bound
          and a_max > 1.25 * max(fa[-1], 1e-300)):
        label = "inconclusive"  # still descending toward the bound
    else:
        label = "neither"
    traj_a = [[int(n), float(v)] for n, v in zip(ns, fa)]
    traj_b = [[int(n), float(v)] for n, v in zip(ns, fb)]
    return KacMembership(label=label, lam=lam, bound=bound,
                         trajectory_a=traj_a, trajectory_b=traj_b)
