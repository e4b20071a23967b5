"""Hamiltonians of two-dimensional canonical systems.

A Hamiltonian here is a positive-semidefinite 2x2 matrix function
``H = [[h1, h3], [h3, h2]]`` on an interval ``[a, b)`` with ``b <= inf``,
locally integrable, and in the limit point case at ``b`` (``int tr H = inf``).
Two representations are supported: named parametric families with closed-form
or quadrature-backed integrals, and piecewise-constant tables.

The criterion engines additionally need the Hamiltonian *deep inside* the
singular endpoint, far beyond where ``1 - t`` is representable in double
precision.  Families therefore expose their tail data in logarithmic
coordinates: ``omega_sq`` (dyadic cell weights at arbitrary depth) and
``dyadic_cells`` (stable resampling records).
"""

from __future__ import annotations

import json
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .errors import (
    DegenerateTailError,
    DomainError,
    InputError,
    PreconditionError,
)

__all__ = [
    "PSD_TOL",
    "LOG2",
    "SqrtTriple",
    "CellGrid",
    "Hamiltonian",
    "ConstantFamily",
    "DiagExpFamily",
    "PowerLogFamily",
    "RankOnePowerLogFamily",
    "StringRankOneFamily",
    "TableHamiltonian",
    "RotatedHamiltonian",
    "DiagonalPart",
    "ValidationReport",
    "hamiltonian_from_json",
    "sqrt_psd_2x2",
]

# Absolute tolerance on 1x1 and 2x2 minors when checking positive
# semidefiniteness (double-precision determinant noise floor).
PSD_TOL = 1e-12

LOG2 = math.log(2.0)

_QUAD_RTOL = 1e-10


def _quad_ab(f, a, b, rtol=_QUAD_RTOL, points=None):
    """Adaptive quadrature on [a, b]; b = inf via the substitution
    u = 1/(1 + t - a), which maps [a, inf) onto (0, 1]."""
    if not np.isfinite(b):
        def g(u):
            return f(a + (1.0 - u) / u) / (u * u)

        val, _ = quad(g, 0.0, 1.0, epsrel=rtol, epsabs=0.0, limit=200)
        return val
    kw = {}
    if points is not None:
        pts = [p for p in points if a < p < b]
        if pts:
            kw["points"] = pts
    val, _ = quad(f, a, b, epsrel=rtol, epsabs=0.0, limit=200, **kw)
    return val


def sqrt_psd_2x2(h1, h2, h3, tol=PSD_TOL):
    """Unique PSD square root of [[h1,h3],[h3,h2]] via the closed form
    (H + sqrt(det H) I) / sqrt(tr H + 2 sqrt(det H)); zero matrix for H = 0."""
    tr = h1 + h2
    det = h1 * h2 - h3 * h3
    if min(h1, h2) < -tol or det < -tol * max(1.0, tr * tr):
        raise DomainError("matrix is not positive semidefinite")
    if tr <= tol:
        return SqrtTriple(0.0, 0.0, 0.0)
    root = math.sqrt(max(det, 0.0))
    denom = math.sqrt(tr + 2.0 * root)
    return SqrtTriple((h1 + root) / denom, (h2 + root) / denom, h3 / denom)


@dataclass(frozen=True)
class SqrtTriple:
    """Entries (v1, v2, v3) of the PSD square root [[v1,v3],[v3,v2]]."""

    v1: float
    v2: float
    v3: float

    def as_matrix(self):
        return np.array([[self.v1, self.v3], [self.v3, self.v2]])


@dataclass(frozen=True)
class CellGrid:
    """Midpoint-sampled piecewise-constant resampling of a Hamiltonian.

    Values are stored logarithmically so grids can reach dyadic depths at
    which neither ``1 - t`` nor ``h2(t)`` is representable directly.
    ``h3_ratio`` is the dimensionless ``h3 / sqrt(h1 h2)`` (zero where the
    product vanishes), so ``|h3_ratio| <= 1`` for a valid Hamiltonian.

    ``t_edges`` carries the floating-point cell edges when they are
    representable (shallow grids) and is None otherwise.
    """

    log_length: np.ndarray
    log_h1: np.ndarray
    log_h2: np.ndarray
    h3_ratio: np.ndarray
    t_edges: np.ndarray | None = None

    def __len__(self):
        return len(self.log_length)

    @property
    def lengths(self):
        return np.exp(self.log_length)

    def ell_sqrt_det(self):
        """Cell length times sqrt(det H) at the midpoint (phase per unit z)."""
        r = self.h3_ratio
        disc = np.clip(1.0 - r * r, 0.0, None)
        return np.exp(self.log_length + 0.5 * (self.log_h1 + self.log_h2)) * np.sqrt(disc)

    def ell_offdiag(self):
        """Cell length times sqrt(h1 h2) and times h3 (scaled-frame data)."""
        base = np.exp(self.log_length + 0.5 * (self.log_h1 + self.log_h2))
        return base, base * self.h3_ratio

    def frame_ratios(self):
        """Ratios d_i/d_{i-1} of the Liouville scaling d = (h1/h2)^(1/4)."""
        logd = 0.25 * (self.log_h1 - self.log_h2)
        g = np.ones(len(self))
        g[1:] = np.exp(np.diff(logd))
        return g


@dataclass(frozen=True)
class CheckResult:
    passed: bool
    detail: str


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of the structural checks on a Hamiltonian.

    ``checks`` holds pass/fail for pointwise positive semidefiniteness,
    local integrability, and the limit-point condition at b.  The
    normalisation property (``int h1 < inf``), required by the criterion
    engines but not by the model itself, is reported separately.
    """

    checks: dict
    normalization: bool

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def as_dict(self):
        return {
            "checks": {k: {"passed": v.passed, "detail": v.detail}
                       for k, v in sorted(self.checks.items())},
            "normalization": self.normalization,
            "all_passed": self.all_passed,
        }


class Hamiltonian(ABC):
    """Base interface shared by families and tables.

    Subclasses provide pointwise entries plus head/tail integrals; every
    value is immutable after construction and all operations are pure.
    """

    a: float
    b: float

    # -- pointwise ---------------------------------------------------------

    @abstractmethod
    def h_at(self, t):
        """Entries (h1, h2, h3) at t, vectorized over arrays."""

    def eval(self, t):
        """Matrix H(t) as a 2x2 array; t must lie in [a, b)."""
        t = float(t)
        if not (self.a <= t < self.b):
            raise DomainError(f"t = {t} outside [{self.a}, {self.b})")
        h1, h2, h3 = self.h_at(t)
        return np.array([[float(h1), float(h3)], [float(h3), float(h2)]])

    def sqrt_at(self, t):
        """PSD square root of H(t) as a SqrtTriple."""
        t = float(t)
        if not (self.a <= t < self.b):
            raise DomainError(f"t = {t} outside [{self.a}, {self.b})")
        h1, h2, h3 = self.h_at(t)
        return sqrt_psd_2x2(float(h1), float(h2), float(h3))

    # -- integrals ---------------------------------------------------------

    @abstractmethod
    def head_integral(self, j, t):
        """int_a^t h_j for j in {1, 2, 3} (j = 3 is the off-diagonal mass)."""

    @abstractmethod
    def tail_h1(self, t):
        """int_t^b h1; requires the normalisation int_a^b h1 < inf."""

    @property
    def total_h1(self):
        return self.tail_h1(self.a)

    @abstractmethod
    def tr_head(self, t):
        """int_a^t tr H."""

    @abstractmethod
    def det_sqrt_integral(self, c):
        """int_a^c sqrt(det H)."""

    # -- structure flags ----------------------------------------------------

    @property
    @abstractmethod
    def normalization(self) -> bool:
        """True when int_a^b h1 < inf."""

    @property
    @abstractmethod
    def limit_point(self) -> bool:
        """True when int_a^b tr H = inf (analytic for families; for tables
        this is a heuristic and always False)."""

    @property
    def h1_positive_near_b(self) -> bool:
        """True when h1 does not vanish a.e. on any terminal subinterval."""
        return True

    @property
    def is_diagonal(self) -> bool:
        return False

    @property
    def is_rank_one(self) -> bool:
        """True when h3 = -sqrt(h1 h2) identically (det H = 0)."""
        return False

    # -- dyadic machinery ----------------------------------------------------

    @property
    def max_stable_depth(self) -> int:
        """Largest dyadic depth at which omega_sq stays accurate."""
        return 45

    def inverse_tail(self, frac):
        """Infimum of {t : tail_h1(t) <= frac * total_h1}.

        Generic implementation by monotone bisection; families override
        with closed forms.  ``frac = 1`` maps to a, ``frac = 0`` to b (or to
        the left edge of a terminal zero-mass region).
        """
        if not 0.0 <= frac <= 1.0:
            raise DomainError("tail fraction must lie in [0, 1]")
        total = self.total_h1
        if not np.isfinite(total) or total <= 0:
            raise PreconditionError("inverse_tail requires 0 < int h1 < inf")
        if frac == 1.0:
            return self.a
        target = frac * total
        lo, hi = self.a, self.b
        if not np.isfinite(hi):
            hi = self.a + 1.0
            while self.tail_h1(hi) > target and hi < 1e300:
                hi = self.a + 2.0 * (hi - self.a)
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if mid <= lo or mid >= hi:
                break
            if self.tail_h1(mid) > target:
                lo = mid
            else:
                hi = mid
            if target > 0 and abs(self.tail_h1(hi) - target) <= 1e-12 * target \
                    and hi - lo <= 1e-12 * max(1.0, abs(hi)):
                break
        return hi

    def omega_sq(self, n):
        """Squared dyadic weights omega_n^2 at indices n (1-based array).

        omega_n^2 = (2^-n * total_h1) * int_{J_n} h2 with J_n the n-th
        tail-halving cell of h1.  The generic fallback forms cells in t and
        is limited to shallow depths; families override with stable
        log-coordinate evaluation.
        """
        n = np.atleast_1d(np.asarray(n, dtype=np.int64))
        if np.any(n < 1):
            raise DomainError("dyadic indices start at 1")
        self._require_dyadic()
        total = self.total_h1
        out = np.empty(len(n), dtype=float)
        for i, k in enumerate(n):
            lo = self.inverse_tail(2.0 ** float(1 - k))
            hi = self.inverse_tail(2.0 ** float(-k))
            mass = self.head_integral(2, hi) - self.head_integral(2, lo)
            out[i] = (2.0 ** float(-k)) * total * mass
        return out

    def _require_dyadic(self):
        if not self.normalization:
            raise PreconditionError(
                "dyadic construction requires int h1 < inf")
        if not self.h1_positive_near_b:
            raise DegenerateTailError(
                "h1 vanishes a.e. near b; tail-halving points are undefined")

    # -- resampling ----------------------------------------------------------

    def resample(self, edges):
        """Midpoint CellGrid on explicit edges (shallow path)."""
        edges = np.asarray(edges, dtype=float)
        if edges.ndim != 1 or len(edges) < 2 or np.any(np.diff(edges) <= 0):
            raise DomainError("edges must be strictly increasing")
        mid = 0.5 * (edges[:-1] + edges[1:])
        h1, h2, h3 = self.h_at(mid)
        h1 = np.maximum(np.atleast_1d(np.asarray(h1, dtype=float)), 0.0)
        h2 = np.maximum(np.atleast_1d(np.asarray(h2, dtype=float)), 0.0)
        h3 = np.atleast_1d(np.asarray(h3, dtype=float))
        prod = h1 * h2
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(prod > 0, h3 / np.sqrt(np.where(prod > 0, prod, 1.0)), 0.0)
            ratio = np.clip(ratio, -1.0, 1.0)
            return CellGrid(
                log_length=np.log(np.diff(edges)),
                log_h1=np.log(h1),
                log_h2=np.log(h2),
                h3_ratio=ratio,
                t_edges=edges,
            )

    def dyadic_cells(self, depth, sub):
        """Stable CellGrid covering dyadic cells 1..depth, ``sub`` uniform
        subcells each.  Families with singular tails override; the generic
        version is limited by float representability of the edges."""
        edges = [self.a]
        for k in range(1, depth + 1):
            lo = self.inverse_tail(2.0 ** float(1 - k))
            hi = self.inverse_tail(2.0 ** float(-k))
            if not hi > lo:
                raise DegenerateTailError(
                    f"dyadic cell {k} collapses at double precision")
            for i in range(1, sub + 1):
                edges.append(lo + (hi - lo) * i / sub)
        return self.resample(np.asarray(edges))

    # -- transforms -----------------------------------------------------------

    def diag(self):
        """Hamiltonian with the off-diagonal entry dropped."""
        if self.is_diagonal:
            return self
        return DiagonalPart(self)

    def rotate(self, alpha):
        """Conjugation by the rotation through alpha (angle mod pi)."""
        return RotatedHamiltonian.make(self, alpha)

    def to_table(self, edges):
        """Piecewise-constant table sampled at cell midpoints."""
        edges = np.asarray(edges, dtype=float)
        mid = 0.5 * (edges[:-1] + edges[1:])
        h1, h2, h3 = self.h_at(mid)
        cells = np.column_stack([
            np.broadcast_to(h1, mid.shape), np.broadcast_to(h2, mid.shape),
            np.broadcast_to(h3, mid.shape),
        ])
        return TableHamiltonian(edges, cells)

    def reparametrize_trace(self, resolution=2048):
        """Change of variable x = int_a^t tr H, making tr = 1 a.e.

        Exact for tables; families are densely resampled first (dyadic
        geometry near b, ``resolution`` cells).  Cells with zero trace are
        dropped (they carry no measure).
        """
        depth = min(40, self.max_stable_depth)
        sub = max(1, resolution // max(depth, 1))
        grid = self.dyadic_cells(depth, sub)
        if grid.t_edges is None:
            raise PreconditionError("trace reparametrization needs shallow cells")
        table = self.to_table(grid.t_edges)
        return table.reparametrize_trace()

    # -- validation ------------------------------------------------------------

    def _psd_probe_points(self, count=64):
        b_eff = self.b if np.isfinite(self.b) else self.a + 64.0
        base = np.linspace(self.a, b_eff, count, endpoint=False)
        # approach the right endpoint geometrically as well
        geo = b_eff - (b_eff - self.a) * 2.0 ** (-np.arange(1, 24, dtype=float))
        return np.unique(np.concatenate([base, geo]))

    def validate(self) -> ValidationReport:
        """Structural checks; report-only (never raises on failure)."""
        checks = {}
        ts = self._psd_probe_points()
        h1, h2, h3 = (np.atleast_1d(np.asarray(x, dtype=float))
                      for x in self.h_at(ts))
        minors_ok = (h1.min() >= -PSD_TOL and h2.min() >= -PSD_TOL
                     and np.min(h1 * h2 - h3 * h3) >= -PSD_TOL * max(1.0, float(np.max(h1 + h2)) ** 2))
        checks["psd"] = CheckResult(bool(minors_ok),
                                    "pointwise minors nonnegative within 1e-12"
                                    if minors_ok else "negative minor detected")
        probe = ts[-1]
        heads = [self.head_integral(j, probe) for j in (1, 2, 3)]
        integ_ok = all(np.isfinite(v) for v in heads)
        checks["local_integrability"] = CheckResult(
            bool(integ_ok), f"head integrals at t={probe:.6g} finite"
            if integ_ok else "non-finite head integral")
        lp = self.limit_point
        checks["limit_point"] = CheckResult(
            bool(lp), "int tr H diverges at b" if lp
            else "int tr H appears finite (not limit point)")
        return ValidationReport(checks=checks, normalization=self.normalization)

    # -- serialization -----------------------------------------------------------

    def to_json(self) -> str:
        return json.dumps(self._json_dict(), sort_keys=True)

    def _json_dict(self):  # pragma: no cover - overridden where supported
        raise NotImplementedError(f"{type(self).__name__} has no JSON form")


# -------------------------------------------------------------------------
# power-log building blocks (u = log 1/(1-t) coordinates on [0, 1))


def _log_phi(u, a1, a2):
    """log of (1+u)^(-a1) (1 + log+ u)^(-a2)."""
    u = np.minimum(np.asarray(u, dtype=float), 1e300)  # keep 0*inf out
    out = -a1 * np.log1p(u)
    if a2 != 0.0:
        out = out - a2 * np.log1p(np.maximum(np.log(np.maximum(u, 1e-300)), 0.0))
    return out


def _u_of_t(t):
    """u = log 1/(1-t), stable for t near 1."""
    return -np.log1p(-np.asarray(t, dtype=float))


# 16-point Gauss-Legendre per dyadic cell; the integrands are analytic on
# the log-length-log2 cells, so the rule is accurate to machine precision.
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)


def _gl_panel(exponent_coef, a1, a2, shift, lo, hi):
    """Gauss-Legendre integral of exp(c u - shift) phi(u) over [lo, hi]."""
    u = lo + (_GL_NODES + 1.0) * ((hi - lo) / 2.0)
    logf = exponent_coef * u - shift + _log_phi(u, a1, a2)
    with np.errstate(over="ignore"):
        return float(np.exp(logf) @ _GL_WEIGHTS) * ((hi - lo) / 2.0)


def _cell_integrals_exp(exponent_coef, a1, a2, n, shift_per_n):
    """Vectorized Gauss-Legendre integrals over dyadic u-cells.

    Computes int over [(n-1) log2, n log2] of
    exp(exponent_coef * u - n * shift_per_n) * (1+u)^(-a1) (1+log+ u)^(-a2).
    The log+ factor has a kink at u = 1 inside cell n = 2; that cell is
    integrated in two panels so the rule keeps its accuracy.
    """
    narr = np.asarray(n, dtype=float)[:, None]
    lo = (narr - 1.0) * LOG2
    u = lo + (_GL_NODES[None, :] + 1.0) * (LOG2 / 2.0)
    logf = exponent_coef * u - narr * shift_per_n + _log_phi(u, a1, a2)
    with np.errstate(over="ignore"):
        vals = np.exp(logf)
    out = (vals @ _GL_WEIGHTS) * (LOG2 / 2.0)
    if a2 != 0.0:
        kinked = np.nonzero(np.asarray(n) == 2)[0]
        for i in kinked:
            out[i] = (_gl_panel(exponent_coef, a1, a2, 2.0 * shift_per_n, LOG2, 1.0)
                      + _gl_panel(exponent_coef, a1, a2, 2.0 * shift_per_n, 1.0, 2.0 * LOG2))
    return out


class _UnitIntervalFamily(Hamiltonian):
    """Shared plumbing for families on [0, 1) with h1 = 1."""

    a = 0.0
    b = 1.0

    @property
    def normalization(self):
        return True

    @property
    def limit_point(self):
        return True

    def tail_h1(self, t):
        if not (self.a <= t <= self.b):
            raise DomainError(f"t = {t} outside [0, 1]")
        return 1.0 - t

    def inverse_tail(self, frac):
        if not 0.0 <= frac <= 1.0:
            raise DomainError("tail fraction must lie in [0, 1]")
        return 1.0 - frac

    def _dyadic_cell_edges(self, depth, sub):
        n = np.repeat(np.arange(1, depth + 1), sub)
        k = np.tile(np.arange(sub), depth)
        log_length = -n * LOG2 - math.log(sub)
        u_mid = n * LOG2 - np.log(2.0 - (k + 0.5) / sub)
        t_edges = None
        if depth <= 45:
            edges = [0.0]
            for nn in range(1, depth + 1):
                lo = 1.0 - 2.0 ** float(1 - nn)
                hi = 1.0 - 2.0 ** float(-nn)
                for i in range(1, sub + 1):
                    edges.append(lo + (hi - lo) * i / sub)
            t_edges = np.asarray(edges)
        return log_length, u_mid, t_edges


class PowerLogFamily(_UnitIntervalFamily):
    """Diagonal family diag(1, h2) on [0, 1) with a power-log singular h2.

    ``h2(t) = (1-t)^-alpha * (1 + log 1/(1-t))^-alpha1
    * (1 + log+ log 1/(1-t))^-alpha2`` with alpha > 1, so int_0^1 h2 = inf
    and the system is limit point at 1.
    """

    def __init__(self, alpha, alpha1=0.0, alpha2=0.0):
        if not alpha > 1:
            raise InputError("power-log family requires alpha > 1")
        self.alpha = float(alpha)
        self.alpha1 = float(alpha1)
        self.alpha2 = float(alpha2)

    @property
    def is_diagonal(self):
        return True

    @property
    def max_stable_depth(self):
        return 1 << 22

    def h_at(self, t):
        t = np.asarray(t, dtype=float)
        u = _u_of_t(t)
        h2 = np.exp(self.alpha * u + _log_phi(u, self.alpha1, self.alpha2))
        return np.ones_like(h2), h2, np.zeros_like(h2)

    def head_integral(self, j, t):
        t = float(t)
        if not (self.a <= t < self.b):
            raise DomainError(f"t = {t} outside [0, 1)")
        if j == 1:
            return t
        if j == 3:
            return 0.0
        if j != 2:
            raise DomainError("entry index must be 1, 2 or 3")
        return self._head2_u(float(_u_of_t(t)))

    def _head2_u(self, big_u):
        if big_u == 0.0:
            return 0.0
        c = self.alpha - 1.0

        def f(u):
            return math.exp(c * u + float(_log_phi(u, self.alpha1, self.alpha2)))

        return _quad_ab(f, 0.0, big_u, points=[1.0])

    def tr_head(self, t):
        return self.head_integral(1, t) + self.head_integral(2, t)

    def det_sqrt_integral(self, c):
        c = float(c)
        if not (self.a <= c <= self.b):
            raise DomainError("c outside [0, 1]")
        big_u = float(_u_of_t(min(c, np.nextafter(1.0, 0.0))))
        coef = self.alpha / 2.0 - 1.0

        def f(u):
            return math.exp(coef * u
                            + 0.5 * float(_log_phi(u, self.alpha1, self.alpha2)))

        return _quad_ab(f, 0.0, big_u, points=[1.0])

    def omega_sq(self, n):
        n = np.atleast_1d(np.asarray(n, dtype=np.int64))
        if np.any(n < 1):
            raise DomainError("dyadic indices start at 1")
        return _cell_integrals_exp(self.alpha - 1.0, self.alpha1, self.alpha2,
                                   n, LOG2)

    def dyadic_cells(self, depth, sub):
        log_length, u_mid, t_edges = self._dyadic_cell_edges(depth, sub)
        log_h2 = self.alpha * u_mid + _log_phi(u_mid, self.alpha1, self.alpha2)
        zeros = np.zeros_like(u_mid)
        return CellGrid(log_length, zeros, log_h2, zeros, t_edges)

    def _json_dict(self):
        return {"interval": [0.0, 1.0], "kind": "family", "name": "power-log",
                "params": {"alpha": self.alpha, "alpha1": self.alpha1,
                           "alpha2": self.alpha2}}


class RankOnePowerLogFamily(_UnitIntervalFamily):
    """Rank-one family [[1, -sqrt(h2)], [-sqrt(h2), h2]] with the alpha = 2
    power-log h2; det H = 0 identically."""

    def __init__(self, alpha1, alpha2=0.0):
        if not alpha1 > 0:
            raise InputError("rank-one power-log family requires alpha1 > 0")
        self.alpha1 = float(alpha1)
        self.alpha2 = float(alpha2)
        self._diag = PowerLogFamily(2.0, alpha1, alpha2)

    @property
    def is_rank_one(self):
        return True

    @property
    def max_stable_depth(self):
        return self._diag.max_stable_depth

    def h_at(self, t):
        h1, h2, _ = self._diag.h_at(t)
        return h1, h2, -np.sqrt(h2)

    def head_integral(self, j, t):
        if j in (1, 2):
            return self._diag.head_integral(j, t)
        if j != 3:
            raise DomainError("entry index must be 1, 2 or 3")
        t = float(t)
        if not (self.a <= t < self.b):
            raise DomainError(f"t = {t} outside [0, 1)")
        big_u = float(_u_of_t(t))
        a1, a2 = self.alpha1, self.alpha2
        if a2 == 0.0:
            # closed form of -int_0^U (1+u)^(-a1/2) du
            if a1 == 2.0:
                return -math.log1p(big_u)
            p = 1.0 - a1 / 2.0
            return -((1.0 + big_u) ** p - 1.0) / p

        def f(u):
            return math.exp(0.5 * float(_log_phi(u, a1, a2)))

        return -_quad_ab(f, 0.0, big_u, points=[1.0])

    def tr_head(self, t):
        return self._diag.tr_head(t)

    def det_sqrt_integral(self, c):
        if not (self.a <= float(c) <= self.b):
            raise DomainError("c outside [0, 1]")
        return 0.0

    def omega_sq(self, n):
        # depends only on (h1, h2), shared with the diagonal part
        return self._diag.omega_sq(n)

    def diag(self):
        return self._diag

    def dyadic_cells(self, depth, sub):
        base = self._diag.dyadic_cells(depth, sub)
        return CellGrid(base.log_length, base.log_h1, base.log_h2,
                        np.full(len(base), -1.0), base.t_edges)

    def _json_dict(self):
        return {"interval": [0.0, 1.0], "kind": "family",
                "name": "rank-one-power-log",
                "params": {"alpha1": self.alpha1, "alpha2": self.alpha2}}


class DiagExpFamily(Hamiltonian):
    """diag(e^-t, 1) on [0, inf); every integral is elementary."""

    a = 0.0
    b = float("inf")

    @property
    def normalization(self):
        return True

    @property
    def limit_point(self):
        return True

    @property
    def is_diagonal(self):
        return True

    @property
    def max_stable_depth(self):
        return 1 << 22

    def h_at(self, t):
        t = np.asarray(t, dtype=float)
        h1 = np.exp(-t)
        return h1, np.ones_like(h1), np.zeros_like(h1)

    def head_integral(self, j, t):
        t = float(t)
        if not t >= 0.0:
            raise DomainError("t must be >= 0")
        if j == 1:
            return -math.expm1(-t)
        if j == 2:
            return t
        if j == 3:
            return 0.0
        raise DomainError("entry index must be 1, 2 or 3")

    def tail_h1(self, t):
        if not float(t) >= 0.0:
            raise DomainError("t must be >= 0")
        return math.exp(-float(t))

    def tr_head(self, t):
        return self.head_integral(1, t) + float(t)

    def det_sqrt_integral(self, c):
        return 2.0 * -math.expm1(-float(c) / 2.0)

    def inverse_tail(self, frac):
        if not 0.0 <= frac <= 1.0:
            raise DomainError("tail fraction must lie in [0, 1]")
        if frac == 0.0:
            return self.b
        return -math.log(frac)

    def omega_sq(self, n):
        n = np.atleast_1d(np.asarray(n, dtype=np.int64))
        if np.any(n < 1):
            raise DomainError("dyadic indices start at 1")
        # cells have length log 2 and h2 = 1
        with np.errstate(under="ignore"):
            return LOG2 * np.exp(-LOG2 * n.astype(float))

    def dyadic_cells(self, depth, sub):
        n = np.repeat(np.arange(1, depth + 1), sub)
        k = np.tile(np.arange(sub), depth)
        width = LOG2 / sub
        t_mid = (n - 1) * LOG2 + (k + 0.5) * width
        grid = CellGrid(
            log_length=np.full(len(n), math.log(width)),
            log_h1=-t_mid,
            log_h2=np.zeros(len(n)),
            h3_ratio=np.zeros(len(n)),
            t_edges=np.concatenate([[0.0], ((n - 1) * LOG2 + (k + 1) * width)]),
        )
        return grid

    def _json_dict(self):
        return {"interval": [0.0, "inf"], "kind": "family", "name": "diag-exp",
                "params": {}}


class ConstantFamily(Hamiltonian):
    """Constant matrix [[h1,h3],[h3,h2]] on [a, b), b <= inf."""

    def __init__(self, h1, h2, h3=0.0, a=0.0, b=1.0):
        if h1 < 0 or h2 < 0 or h3 * h3 > h1 * h2 + PSD_TOL:
            raise InputError("constant family must be positive semidefinite")
        if not a < b:
            raise InputError("need a < b")
        self.c1, self.c2, self.c3 = float(h1), float(h2), float(h3)
        self.a, self.b = float(a), float(b)

    @property
    def normalization(self):
        return self.c1 == 0.0 or np.isfinite(self.b)

    @property
    def limit_point(self):
        return not np.isfinite(self.b) and (self.c1 + self.c2) > 0

    @property
    def h1_positive_near_b(self):
        return self.c1 > 0

    @property
    def is_diagonal(self):
        return self.c3 == 0.0

    @property
    def is_rank_one(self):
        det = self.c1 * self.c2 - self.c3 * self.c3
        return abs(det) <= PSD_TOL and self.c3 <= 0.0 and self.c3 != 0.0

    @property
    def max_stable_depth(self):
        return 1 << 22 if self.normalization else 0

    def h_at(self, t):
        t = np.asarray(t, dtype=float)
        shape = np.broadcast_to(0.0, t.shape)
        return (np.full_like(shape, self.c1), np.full_like(shape, self.c2),
                np.full_like(shape, self.c3))

    def head_integral(self, j, t):
        t = float(t)
        if not (self.a <= t <= self.b):
            raise DomainError("t outside the interval")
        coef = {1: self.c1, 2: self.c2, 3: self.c3}.get(j)
        if coef is None:
            raise DomainError("entry index must be 1, 2 or 3")
        return coef * (t - self.a)

    def tail_h1(self, t):
        t = float(t)
        if not (self.a <= t <= self.b):
            raise DomainError("t outside the interval")
        if self.c1 == 0.0:
            return 0.0
        if not np.isfinite(self.b):
            return float("inf")
        return self.c1 * (self.b - t)

    def tr_head(self, t):
        return (self.c1 + self.c2) * (float(t) - self.a)

    def det_sqrt_integral(self, c):
        det = max(self.c1 * self.c2 - self.c3 * self.c3, 0.0)
        return math.sqrt(det) * (float(c) - self.a)

    def inverse_tail(self, frac):
        if not 0.0 <= frac <= 1.0:
            raise DomainError("tail fraction must lie in [0, 1]")
        self._require_dyadic()
        return self.b - frac * (self.b - self.a)

    def omega_sq(self, n):
        n = np.atleast_1d(np.asarray(n, dtype=np.int64))
        self._require_dyadic()
        span = self.b - self.a
        with np.errstate(under="ignore"):
            return self.c1 * self.c2 * span * span * np.exp(-2.0 * LOG2 * n.astype(float))

    def rotate(self, alpha):
        # closed under rotation: rotate the constant matrix itself
        c, s = math.cos(alpha), math.sin(alpha)
        h1 = c * c * self.c1 + 2 * c * s * self.c3 + s * s * self.c2
        h2 = s * s * self.c1 - 2 * c * s * self.c3 + c * c * self.c2
        h3 = c * s * (self.c2 - self.c1) + (c * c - s * s) * self.c3
        return ConstantFamily(max(h1, 0.0), max(h2, 0.0), h3, self.a, self.b)

    def diag(self):
        if self.is_diagonal:
            return self
        return ConstantFamily(self.c1, self.c2, 0.0, self.a, self.b)

    def _json_dict(self):
        return {"interval": [self.a, "inf" if not np.isfinite(self.b) else self.b],
                "kind": "family", "name": "constant",
                "params": {"h1": self.c1, "h2": self.c2, "h3": self.c3}}


class StringRankOneFamily(_UnitIntervalFamily):
    """String-form rank-one family [[1, -m], [-m, m^2]] on [0, 1) with
    m(t) = int_0^t h2 and h2 the alpha = 2 power-log weight.

    All integrals reduce to the cumulative system nu' = -nu + phi,
    z' = -z + nu^2, y' = nu in u = log 1/(1-t), where m = e^u nu(u),
    int_0^t m^2 = e^u z(u) and int_0^t m = y(u); the (nu, z, y) variables
    stay bounded however deep the evaluation goes.
    """

    _DU = LOG2 / 128.0  # RK4 step of the cumulative march

    def __init__(self, alpha1, alpha2=0.0):
        if not alpha1 > 0:
            raise InputError("string rank-one family requires alpha1 > 0")
        self.alpha1 = float(alpha1)
        self.alpha2 = float(alpha2)
        self._grid_u = np.zeros(1)
        self._state = np.zeros((1, 3))  # rows (nu, z, y)

    @property
    def is_rank_one(self):
        return True

    @property
    def max_stable_depth(self):
        return 1 << 16

    def _rhs(self, u, s):
        phi = math.exp(float(_log_phi(u, self.alpha1, self.alpha2)))
        nu, z, _ = s
        return np.array([phi - nu, nu * nu - z, nu])

    def _extend(self, u_max):
        u_have = self._grid_u[-1]
        if u_max <= u_have:
            return
        steps = int(math.ceil((u_max - u_have) / self._DU)) + 1
        us = [self._grid_u]
        states = [self._state]
        uate = u_have
        s = self._state[-1].copy()
        new_u = np.empty(steps)
        new_s = np.empty((steps, 3))
        h = self._DU
        for i in range(steps):
            k1 = self._rhs(u_have, s)
            k2 = self._rhs(u_have + h / 2, s + h / 2 * k1)
            k3 = self._rhs(u_have + h / 2, s + h / 2 * k2)
            k4 = self._rhs(u_have + h, s + h * k3)
            s = s + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
            u_have += h
            new_u[i] = u_have
            new_s[i] = s
        self._grid_u = np.concatenate([self._grid_u, new_u])
        self._state = np.vstack([self._state, new_s])

    def _state_at(self, u):
        u = np.atleast_1d(np.asarray(u, dtype=float))
        self._extend(float(u.max()) + self._DU)
        out = np.empty((len(u), 3))
        for j in range(3):
            out[:, j] = np.interp(u, self._grid_u, self._state[:, j])
        return out

    def _m_of_u(self, u):
        nu = self._state_at(u)[:, 0]
        with np.errstate(over="ignore"):
            return np.exp(np.asarray(u, dtype=float)) * nu

    def h_at(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        m = self._m_of_u(_u_of_t(t))
        return np.ones_like(m), m * m, -m

    def head_integral(self, j, t):
        t = float(t)
        if not (self.a <= t < self.b):
            raise DomainError(f"t = {t} outside [0, 1)")
        u = float(_u_of_t(t))
        if j == 1:
            return t
        state = self._state_at(u)[0]
        if j == 2:
            return math.exp(u) * state[1]
        if j == 3:
            return -state[2]
        raise DomainError("entry index must be 1, 2 or 3")

    def tr_head(self, t):
        return float(t) + self.head_integral(2, t)

    def det_sqrt_integral(self, c):
        if not (self.a <= float(c) <= self.b):
            raise DomainError("c outside [0, 1]")
        return 0.0

    def omega_sq(self, n):
        n = np.atleast_1d(np.asarray(n, dtype=np.int64))
        if np.any(n < 1):
            raise DomainError("dyadic indices start at 1")
        z_hi = self._state_at(n.astype(float) * LOG2)[:, 1]
        z_lo = self._state_at((n - 1).astype(float) * LOG2)[:, 1]
        return np.maximum(z_hi - 0.5 * z_lo, 0.0)

    def dyadic_cells(self, depth, sub):
        log_length, u_mid, t_edges = self._dyadic_cell_edges(depth, sub)
        nu = self._state_at(u_mid)[:, 0]
        log_h2 = 2.0 * (u_mid + np.log(np.maximum(nu, 1e-300)))
        return CellGrid(log_length, np.zeros_like(u_mid), log_h2,
                        np.full(len(u_mid), -1.0), t_edges)

    def _json_dict(self):
        return {"interval": [0.0, 1.0], "kind": "family",
                "name": "string-rank-one",
                "params": {"alpha1": self.alpha1, "alpha2": self.alpha2}}


class TableHamiltonian(Hamiltonian):
    """Piecewise-constant Hamiltonian on breakpoints t_0 < ... < t_N.

    Entries are right-continuous at breakpoints; the table is regular
    (finite total mass), so the limit-point check is reported as failed.
    """

    def __init__(self, breakpoints, cells):
        bp = np.asarray(breakpoints, dtype=float)
        cl = np.asarray(cells, dtype=float)
        if bp.ndim != 1 or len(bp) < 2 or np.any(np.diff(bp) <= 0):
            raise InputError("breakpoints must be strictly increasing")
        if cl.shape != (len(bp) - 1, 3):
            raise InputError("cells must be (len(breakpoints)-1, 3) of h1,h2,h3")
        self.breakpoints = bp
        self.cells = cl
        self.a = float(bp[0])
        self.b = float(bp[-1])
        widths = np.diff(bp)
        self._head = np.vstack([
            np.concatenate([[0.0], np.cumsum(cl[:, j] * widths)])
            for j in range(3)
        ])  # shape (3, N+1), heads at breakpoints

    @property
    def normalization(self):
        return True

    @property
    def limit_point(self):
        return False

    @property
    def h1_positive_near_b(self):
        return self.cells[-1, 0] > 0

    @property
    def is_diagonal(self):
        return bool(np.all(self.cells[:, 2] == 0.0))

    def _cell_index(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.breakpoints, t, side="right") - 1
        return np.clip(idx, 0, len(self.cells) - 1)

    def h_at(self, t):
        idx = self._cell_index(t)
        return (self.cells[idx, 0], self.cells[idx, 1], self.cells[idx, 2])

    def head_integral(self, j, t):
        t = float(t)
        if not (self.a <= t <= self.b):
            raise DomainError("t outside the table range")
        if j not in (1, 2, 3):
            raise DomainError("entry index must be 1, 2 or 3")
        idx = int(self._cell_index(t))
        base = self._head[j - 1, idx]
        return float(base + self.cells[idx, j - 1] * (t - self.breakpoints[idx]))

    def tail_h1(self, t):
        return self._head[0, -1] - self.head_integral(1, t)

    def tr_head(self, t):
        return self.head_integral(1, t) + self.head_integral(2, t)

    def det_sqrt_integral(self, c):
        c = float(c)
        if not (self.a <= c <= self.b):
            raise DomainError("c outside the table range")
        widths = np.minimum(self.breakpoints[1:], c) - np.minimum(self.breakpoints[:-1], c)
        det = np.maximum(self.cells[:, 0] * self.cells[:, 1] - self.cells[:, 2] ** 2, 0.0)
        return float(np.sum(np.sqrt(det) * np.maximum(widths, 0.0)))

    def inverse_tail(self, frac):
        """Infimum convention: the leftmost point with the requested tail."""
        if not 0.0 <= frac <= 1.0:
            raise DomainError("tail fraction must lie in [0, 1]")
        total = self._head[0, -1]
        if total <= 0:
            raise PreconditionError("table carries no h1 mass")
        target_head = (1.0 - frac) * total
        heads = self._head[0]
        idx = int(np.searchsorted(heads, target_head, side="left"))
        if idx == 0:
            return self.a
        idx -= 1
        h1 = self.cells[idx, 0]
        if h1 == 0.0:
            # flat stretch: infimum is its left edge unless already reached
            return float(self.breakpoints[idx if heads[idx] >= target_head else idx + 1])
        return float(self.breakpoints[idx] + (target_head - heads[idx]) / h1)

    def validate(self):
        report = super().validate()
        widths = np.diff(self.breakpoints)
        minors = self.cells[:, 0] * self.cells[:, 1] - self.cells[:, 2] ** 2
        scale = max(1.0, float(np.max(self.cells[:, 0] + self.cells[:, 1])) ** 2)
        psd_ok = (self.cells[:, 0].min() >= -PSD_TOL
                  and self.cells[:, 1].min() >= -PSD_TOL
                  and minors.min() >= -PSD_TOL * scale)
        report.checks["psd"] = CheckResult(
            bool(psd_ok), "per-cell minors nonnegative within 1e-12"
            if psd_ok else "negative minor on a cell")
        report.checks["local_integrability"] = CheckResult(
            bool(np.all(np.isfinite(self.cells)) and np.all(np.isfinite(widths))),
            "finite cell integrals")
        return report

    def diag(self):
        cells = self.cells.copy()
        cells[:, 2] = 0.0
        return TableHamiltonian(self.breakpoints, cells)

    def reparametrize_trace(self, resolution=None):
        tr = self.cells[:, 0] + self.cells[:, 1]
        widths = np.diff(self.breakpoints)
        keep = tr > 0
        x_widths = (tr * widths)[keep]
        new_bp = np.concatenate([[0.0], np.cumsum(x_widths)])
        new_cells = self.cells[keep] / tr[keep, None]
        return TableHamiltonian(new_bp, new_cells)

    def _json_dict(self):
        return {"interval": [self.a, self.b], "kind": "table",
                "breakpoints": [float(x) for x in self.breakpoints],
                "cells": [[float(v) for v in row] for row in self.cells]}


class RotatedHamiltonian(Hamiltonian):
    """Lazy conjugation N_alpha H N_alpha^{-1}; angles compose exactly.

    Storing the angle instead of resampling makes rotate-then-unrotate an
    exact identity (the composed angle returns to zero and the base object
    is handed back), so round-trip reports are bit-for-bit reproducible.
    """

    def __init__(self, base, alpha):
        self.base = base
        self.alpha = alpha
        self.a, self.b = base.a, base.b

    @staticmethod
    def make(base, alpha):
        if isinstance(base, RotatedHamiltonian):
            return RotatedHamiltonian.make(base.base, base.alpha + alpha)
        # conjugation has period pi
        alpha = math.fmod(alpha, math.pi)
        if alpha == 0.0:
            return base
        return RotatedHamiltonian(base, alpha)

    def _coeffs(self):
        c, s = math.cos(self.alpha), math.sin(self.alpha)
        return c, s

    def h_at(self, t):
        h1, h2, h3 = self.base.h_at(t)
        c, s = self._coeffs()
        r1 = c * c * h1 + 2 * c * s * h3 + s * s * h2
        r2 = s * s * h1 - 2 * c * s * h3 + c * c * h2
        r3 = c * s * (h2 - h1) + (c * c - s * s) * h3
        return r1, r2, r3

    def tail_h1(self, t):
        c, s = self._coeffs()
        if s == 0.0:
            return self.base.tail_h1(t)
        t1 = self.base.tail_h1(t)
        if not self.base.limit_point and np.isfinite(self.b):
            # regular (table-like) base: integrate the combination exactly
            h2_tail = (self.base.head_integral(2, self.b)
                       - self.base.head_integral(2, t))
            h3_tail = (self.base.head_integral(3, self.b)
                       - self.base.head_integral(3, t))
            return c * c * t1 + 2 * c * s * h3_tail + s * s * h2_tail
        # limit point at b: the rotation mixes the divergent entry into h1
        return float("inf")

    @property
    def normalization(self):
        c, s = self._coeffs()
        if s == 0.0:
            return self.base.normalization
        return np.isfinite(self.tail_h1(self.a))

    @property
    def limit_point(self):
        return self.base.limit_point

    @property
    def h1_positive_near_b(self):
        return True

    def head_integral(self, j, t):
        c, s = self._coeffs()
        b1 = self.base.head_integral(1, t)
        b2 = self.base.head_integral(2, t)
        b3 = self.base.head_integral(3, t)
        if j == 1:
            return c * c * b1 + 2 * c * s * b3 + s * s * b2
        if j == 2:
            return s * s * b1 - 2 * c * s * b3 + c * c * b2
        if j == 3:
            return c * s * (b2 - b1) + (c * c - s * s) * b3
        raise DomainError("entry index must be 1, 2 or 3")

    def tr_head(self, t):
        return self.base.tr_head(t)  # trace is rotation invariant

    def det_sqrt_integral(self, c):
        return self.base.det_sqrt_integral(c)  # determinant too

    def rotate(self, alpha):
        return RotatedHamiltonian.make(self.base, self.alpha + alpha)

    def _json_dict(self):
        inner = self.base._json_dict()
        return {"kind": "rotated", "angle": self.alpha, "base": inner}


class DiagonalPart(Hamiltonian):
    """View of a Hamiltonian with the off-diagonal entry dropped."""

    def __init__(self, base):
        self.base = base
        self.a, self.b = base.a, base.b

    @property
    def is_diagonal(self):
        return True

    def h_at(self, t):
        h1, h2, _ = self.base.h_at(t)
        return h1, h2, np.zeros_like(np.asarray(h1, dtype=float))

    def head_integral(self, j, t):
        if j == 3:
            return 0.0
        return self.base.head_integral(j, t)

    def tail_h1(self, t):
        return self.base.tail_h1(t)

    def tr_head(self, t):
        return self.base.tr_head(t)

    def det_sqrt_integral(self, c):
        # determinant changes when h3 is dropped: integrate sqrt(h1 h2)
        def f(t):
            h1, h2, _ = self.base.h_at(t)
            return float(np.sqrt(np.maximum(h1 * h2, 0.0)))

        return _quad_ab(f, self.a, float(c))

    @property
    def normalization(self):
        return self.base.normalization

    @property
    def limit_point(self):
        return self.base.limit_point

    @property
    def h1_positive_near_b(self):
        return self.base.h1_positive_near_b

    @property
    def max_stable_depth(self):
        return self.base.max_stable_depth

    def inverse_tail(self, frac):
        return self.base.inverse_tail(frac)

    def omega_sq(self, n):
        return self.base.omega_sq(n)  # reads only (h1, h2)

    def dyadic_cells(self, depth, sub):
        base = self.base.dyadic_cells(depth, sub)
        return CellGrid(base.log_length, base.log_h1, base.log_h2,
                        np.zeros(len(base)), base.t_edges)

    def diag(self):
        return self

    def _json_dict(self):
        return {"kind": "diagonal-part", "base": self.base._json_dict()}


# -------------------------------------------------------------------------
# JSON interchange

_FAMILY_BUILDERS = {
    "constant": lambda iv, p: ConstantFamily(
        p["h1"], p["h2"], p.get("h3", 0.0), iv[0], iv[1]),
    "diag-exp": lambda iv, p: DiagExpFamily(),
    "power-log": lambda iv, p: PowerLogFamily(
        p["alpha"], p.get("alpha1", 0.0), p.get("alpha2", 0.0)),
    "rank-one-power-log": lambda iv, p: RankOnePowerLogFamily(
        p["alpha1"], p.get("alpha2", 0.0)),
    "string-rank-one": lambda iv, p: StringRankOneFamily(
        p["alpha1"], p.get("alpha2", 0.0)),
}


def hamiltonian_from_json(text):
    """Parse the Hamiltonian JSON interchange format.

    ``{"interval": [a, b | "inf"], "kind": "family", "name": ..., "params":
    {...}}`` or ``{"kind": "table", "breakpoints": [...], "cells":
    [[h1, h2, h3], ...]}``.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise InputError("specification must be a JSON object")
    kind = doc.get("kind")
    if kind == "table":
        if "breakpoints" not in doc or "cells" not in doc:
            raise InputError("table spec needs breakpoints and cells")
        return TableHamiltonian(doc["breakpoints"], doc["cells"])
    if kind == "family":
        name = doc.get("name")
        if name not in _FAMILY_BUILDERS:
            raise InputError(f"unknown family {name!r}")
        interval = doc.get("interval", [0.0, 1.0])
        iv = [float(interval[0]),
              float("inf") if interval[1] == "inf" else float(interval[1])]
        try:
            return _FAMILY_BUILDERS[name](iv, doc.get("params", {}))
        except KeyError as exc:
            raise InputError(f"missing family parameter: {exc}") from exc
    raise InputError(f"unknown spec kind {kind!r}")
