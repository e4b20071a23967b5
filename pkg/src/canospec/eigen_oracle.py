"""Brute-force spectral oracle for truncated canonical systems.

The system y' = z J H(t) y on [a, c] with boundary conditions
(1, 0) y(a) = 0 and (cos beta, sin beta) y(c) = 0 is regular for c < b, and
its eigenvalues are the real zeros of a characteristic function assembled
from piecewise-constant transfer matrices.  Eigenvalues of the truncated
problems converge (slowly, from above in modulus) to the spectrum of the
singular problem; reports therefore expose truncation-stability data
alongside the raw spectrum.

On a constant cell the transfer matrix is
``exp(z l J H) = cos(z l sqrt(det H)) I + sin(z l sqrt(det H))/sqrt(det H) * J H``
(the nilpotent limit ``I + z l J H`` when det H = 0).  Deep truncations use
the Liouville-scaled frame d = (h1/h2)^(1/4), in which the cell generator
has bounded entries at any dyadic depth; scaling changes the characteristic
function by positive factors only, so its zeros are untouched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit, prange

from .errors import DomainError, PreconditionError
from .growth import ExponentEstimate, classify_trend, conv_exponent
from .hamiltonian import CellGrid, Hamiltonian

__all__ = [
    "TransferMatrix",
    "transfer_matrix",
    "truncation_grid",
    "monodromy",
    "char_value",
    "SpectrumEstimate",
    "eigenvalues",
    "counting_report",
    "CountingReport",
    "stable_prefix",
    "truncation_stable_exponent",
    "spectrum_csv",
    "counting_csv",
]

_BISECT_ABS_TOL = 1e-10
_SCAN_CAP = 10_000  # fallback density: at most window/1e4 scan spacing
_DEGENERATE_DET = 1e-14


@dataclass(frozen=True)
class TransferMatrix:
    """Fundamental solution over one interval at spectral parameter z."""

    matrix: np.ndarray
    z: float
    length: float

    @property
    def det(self) -> float:
        m = self.matrix
        return float(m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0])


def transfer_matrix(h_cell, ell, z) -> TransferMatrix:
    """Closed-form transfer matrix of a constant PSD cell."""
    H = np.asarray(h_cell, dtype=float)
    if H.shape != (2, 2):
        raise DomainError("cell matrix must be 2x2")
    ell = float(ell)
    if not ell > 0:
        raise DomainError("cell length must be positive")
    z = float(z)
    det = H[0, 0] * H[1, 1] - H[0, 1] * H[1, 0]
    JH = np.array([[-H[1, 0], -H[1, 1]], [H[0, 0], H[0, 1]]])
    if det < _DEGENERATE_DET:
        W = np.eye(2) + z * ell * JH
    else:
        rd = math.sqrt(det)
        th = z * ell * rd
        W = math.cos(th) * np.eye(2) + (math.sin(th) / rd) * JH
    return TransferMatrix(matrix=W, z=z, length=ell)


def truncation_grid(H: Hamiltonian, c, total_cells=2048):
    """Cell edges on [a, c]: dyadic clustering near b, uniform otherwise.

    The dyadic points of the h1 tail are subdivided uniformly; when the
    tail geometry is unavailable (no normalisation, or c in the regular
    bulk) a uniform grid is used.
    """
    c = float(c)
    if not (H.a < c <= H.b) or not np.isfinite(c):
        raise DomainError("truncation point must satisfy a < c < inf")
    points = [H.a]
    if H.normalization and H.h1_positive_near_b and H.total_h1 > 0:
        frac = H.tail_h1(c) / H.total_h1
        if frac > 0:
            depth = int(np.clip(math.floor(-math.log2(max(frac, 2.0 ** -45))), 0, 45))
            for n in range(1, depth + 1):
                p = H.inverse_tail(2.0 ** float(-n))
                if p >= c or p <= points[-1]:
                    break
                points.append(p)
    points.append(c)
    segments = np.asarray(points)
    sub = max(1, int(total_cells) // (len(segments) - 1))
    edges = [segments[0]]
    for lo, hi in zip(segments[:-1], segments[1:]):
        step = (hi - lo) / sub
        for k in range(1, sub + 1):
            edges.append(lo + k * step)
    edges = np.unique(np.asarray(edges))
    if len(edges) < 3:
        raise DomainError("truncation grid degenerate")
    return edges


def monodromy(H: Hamiltonian, c, z, total_cells=2048) -> TransferMatrix:
    """Ordered product of cell transfer matrices over [a, c]."""
    edges = truncation_grid(H, c, total_cells)
    mid = 0.5 * (edges[:-1] + edges[1:])
    h1, h2, h3 = (np.atleast_1d(np.asarray(v, dtype=float)) for v in H.h_at(mid))
    W = np.eye(2)
    z = float(z)
    for i in range(len(mid)):
        cell = np.array([[h1[i], h3[i]], [h3[i], h2[i]]])
        W = transfer_matrix(cell, edges[i + 1] - edges[i], z).matrix @ W
    return TransferMatrix(matrix=W, z=z, length=float(c - H.a))


def char_value(H: Hamiltonian, c, z, beta=math.pi / 2, total_cells=2048):
    """(cos beta, sin beta) W(c, z) (0, 1)^T; real for real z.

    The default beta = pi/2 reads the second component, which equals 1 at
    z = 0 and therefore excludes 0 from the computed spectra down to the
    bisection tolerance.
    """
    W = monodromy(H, c, z, total_cells).matrix
    return float(math.cos(beta) * W[0, 1] + math.sin(beta) * W[1, 1])


# -------------------------------------------------------------------------
# batched characteristic evaluation in the scaled frame


@njit(cache=True, parallel=True)
def _char_batch_scaled(theta_coef, a_coef, b_coef, gratio, zs, out):
    ncell = theta_coef.shape[0]
    for k in prange(zs.shape[0]):
        z = zs[k]
        y1 = 0.0
        y2 = 1.0
        for i in range(ncell):
            g = gratio[i]
            y1 *= g
            y2 /= g
            nrm = abs(y1) + abs(y2)
            if nrm > 1e120 or (0.0 < nrm < 1e-120):
                y1 /= nrm
                y2 /= nrm
            th = z * theta_coef[i]
            if th != 0.0:
                cth = np.cos(th)
                sc = np.sin(th) / th
            else:
                cth = 1.0
                sc = 1.0
            za = z * a_coef[i]
            zb = z * b_coef[i]
            x1 = cth * y1 + sc * (-za * y1 - zb * y2)
            x2 = cth * y2 + sc * (zb * y1 + za * y2)
            y1 = x1
            y2 = x2
        out[k] = y2


def _char_many(cells: CellGrid, zs):
    theta = cells.ell_sqrt_det()
    b_coef, a_coef = cells.ell_offdiag()
    g = cells.frame_ratios()
    zs = np.ascontiguousarray(np.asarray(zs, dtype=float))
    out = np.empty(len(zs))
    _char_batch_scaled(theta, a_coef, b_coef, g, zs, out)
    return out


@dataclass(frozen=True)
class SpectrumEstimate:
    """Eigenvalues of a truncated problem with counting diagnostics."""

    lambdas: np.ndarray          # sorted by modulus, signed
    truncation: float            # truncation point c (nan for deep grids)
    truncation_depth: int        # dyadic depth of the grid tail
    beta: float
    window: float
    det_integral: float          # int_a^c sqrt(det H)
    exponent: ExponentEstimate | None
    tangency_count: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def moduli(self):
        return np.abs(self.lambdas)

    @property
    def positive(self):
        lam = self.lambdas[self.lambdas > 0]
        return np.sort(lam)

    @property
    def negative(self):
        lam = -self.lambdas[self.lambdas < 0]
        return np.sort(lam)

    def counting(self, rs):
        """n(r) = #{n : |lambda_n| <= r}."""
        mod = np.sort(self.moduli)
        return np.searchsorted(mod, np.asarray(rs, dtype=float), side="right")


def _cells_for(H, c, total_cells, depth, sub):
    if depth is not None:
        return H.dyadic_cells(depth, max(1, sub)), float("nan"), depth
    edges = truncation_grid(H, c, total_cells)
    grid = H.resample(edges)
    frac = H.tail_h1(c) / H.total_h1 if (H.normalization and H.total_h1 > 0) else 1.0
    eff_depth = int(-math.log2(frac)) if 0 < frac < 1 else 0
    return grid, float(c), eff_depth


def eigenvalues(H: Hamiltonian, c=None, window=200.0, beta=math.pi / 2,
                total_cells=2048, depth=None, sub=8) -> SpectrumEstimate:
    """All real zeros of the characteristic function in [-window, window].

    A uniform scan with step ``min(pi / (4 int sqrt(det H)), window/1e4)``
    brackets every sign change (quarter of the asymptotic eigenvalue
    spacing), then bisection refines each root to 1e-10.  ``c`` gives the
    truncation point; alternatively ``depth`` selects a dyadic-depth grid
    directly (with ``sub`` subcells per dyadic cell), which is the only way
    to truncate beyond double-precision t resolution.  For zero-determinant
    Hamiltonians only the fallback scan density is available and roots may
    be missed between scan points.
    """
    if (c is None) == (depth is None):
        raise DomainError("pass exactly one of c or depth")
    if depth is not None and abs(beta - math.pi / 2) > 1e-15:
        raise PreconditionError("deep grids support only beta = pi/2")
    cells, c_val, eff_depth = _cells_for(H, c, total_cells, depth, sub)
    R = float(window)
    if not R > 0:
        raise DomainError("window must be positive")
    phase = float(np.sum(cells.ell_sqrt_det()))
    step = min(math.pi / (4.0 * phase) if phase > 0 else np.inf, R / _SCAN_CAP)
    if step <= 0 or not np.isfinite(step):
        step = R / _SCAN_CAP
    if R / step > 5e7:
        raise DomainError("window too large for the scan step")

    use_scaled = abs(beta - math.pi / 2) <= 1e-15
    if use_scaled:
        def evaluate(zs):
            return _char_many(cells, zs)
    else:
        if cells.t_edges is None:
            raise PreconditionError("general beta requires a shallow grid")

        def evaluate(zs):
            return np.array([char_value(H, c_val, z, beta, total_cells)
                             for z in np.atleast_1d(zs)])

    zs = np.arange(-R + step / 2, R, step)
    vals = np.concatenate([evaluate(zs[i:i + 16384])
                           for i in range(0, len(zs), 16384)])
    sgn = np.sign(vals)
    idx = np.nonzero(sgn[:-1] * sgn[1:] < 0)[0]
    # tangency heuristic: tiny characteristic values without a sign change
    scale = np.median(np.abs(vals)) + 1e-300
    tang = int(np.count_nonzero((np.abs(vals) < 1e-13 * scale)
                                & np.concatenate([[False], sgn[:-1] * sgn[1:] > 0])))
    lo = zs[idx].copy()
    hi = zs[idx + 1].copy()
    flo = vals[idx].copy()
    if len(lo):
        iters = int(math.ceil(math.log2(max(step / _BISECT_ABS_TOL, 2.0)))) + 2
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            fm = evaluate(mid)
            move_hi = flo * fm < 0
            hi = np.where(move_hi, mid, hi)
            lo = np.where(move_hi, lo, mid)
            flo = np.where(move_hi, flo, fm)
    roots = 0.5 * (lo + hi)
    order = np.argsort(np.abs(roots), kind="stable")
    lambdas = roots[order]
    est = None
    if len(lambdas) >= 16:
        est = conv_exponent(np.sort(np.abs(lambdas)))
    return SpectrumEstimate(
        lambdas=lambdas,
        truncation=c_val,
        truncation_depth=eff_depth,
        beta=beta,
        window=R,
        det_integral=phase,
        exponent=est,
        tangency_count=tang,
        meta={"scan_step": step, "cells": len(cells)},
    )


@dataclass(frozen=True)
class CountingReport:
    """Counting-function diagnostics of a SpectrumEstimate."""

    n_of_r: list
    exponent: ExponentEstimate | None
    ratio_plus_tail_mean: float | None
    ratio_minus_tail_mean: float | None
    density_expected: float | None   # pi / int sqrt(det H); None if det = 0
    density_skipped: bool
    partial_sums: list | None = None
    limsup_trajectory: list | None = None
    limsup_trend: str | None = None


def _tail_mean(ratios):
    if len(ratios) < 4:
        return None
    quarter = max(len(ratios) // 4, 2)
    return float(np.mean(ratios[-quarter:]))


def counting_report(est: SpectrumEstimate, g=None) -> CountingReport:
    """Counting table, exponent regression, density ratios, and (with g)
    the empirical summability and limsup trajectories."""
    mod = np.sort(est.moduli)
    if len(mod) < 16:
        raise DomainError("need at least 16 eigenvalues for a counting report")
    rs = mod[np.unique(np.linspace(0, len(mod) - 1, min(len(mod), 257)).astype(int))]
    n_of_r = [[float(r), int(c)] for r, c in zip(rs, est.counting(rs))]
    pos, neg = est.positive, est.negative
    ratio_plus = pos / np.arange(1, len(pos) + 1) if len(pos) else np.array([])
    ratio_minus = neg / np.arange(1, len(neg) + 1) if len(neg) else np.array([])
    if est.det_integral > 1e-12:
        density = math.pi / est.det_integral
        skipped = False
    else:
        density = None
        skipped = True
    partial = None
    limsup_traj = None
    trend = None
    if g is not None:
        terms = 1.0 / g.eval(mod)
        partial = [[int(i + 1), float(s)] for i, s in
                   enumerate(np.cumsum(terms))][:: max(1, len(mod) // 257)]
        n = np.arange(1, len(mod) + 1)
        traj = n / g.eval(mod)
        limsup_traj = [[int(i), float(v)] for i, v in
                       zip(n, traj)][:: max(1, len(mod) // 257)]
        trend = classify_trend(traj).value
    return CountingReport(
        n_of_r=n_of_r,
        exponent=est.exponent,
        ratio_plus_tail_mean=_tail_mean(ratio_plus),
        ratio_minus_tail_mean=_tail_mean(ratio_minus),
        density_expected=density,
        density_skipped=skipped,
        partial_sums=partial,
        limsup_trajectory=limsup_traj,
        limsup_trend=trend,
    )


def stable_prefix(est: SpectrumEstimate, reference: SpectrumEstimate,
                  rtol=0.02) -> int:
    """Length of the leading run of eigenvalue moduli that agree with a
    deeper reference truncation within relative ``rtol``."""
    a = np.sort(est.moduli)
    b = np.sort(reference.moduli)
    m = min(len(a), len(b))
    if m == 0:
        return 0
    rel = np.abs(a[:m] - b[:m]) / np.maximum(np.abs(b[:m]), 1e-300)
    bad = np.nonzero(rel > rtol)[0]
    return int(bad[0]) if len(bad) else m


def truncation_stable_exponent(H: Hamiltonian, depth=1024, sub=8,
                               safety=0.15, rtol=0.02):
    """Convergence-exponent estimate from the truncation-stable prefix.

    Runs the oracle at dyadic depth ``depth`` and at twice that depth,
    keeps the eigenvalues that already agree between the two runs, and
    regresses the counting function on that certified prefix.  The scan
    window is capped near the truncation-resolution height
    ``sqrt(safety / P(c_depth))``, below which the truncated spectrum
    tracks the singular problem.

    Returns ``(estimate, n_stable, window)``.
    """
    from .criteria import trajectories  # local import to avoid a cycle

    _, _, P = trajectories(H, depth)
    p_end = float(P[-1])
    if not p_end > 0:
        raise PreconditionError("trailing dyadic product vanished; "
                                "no resolution window available")
    window = 1.3 * math.sqrt(safety / p_end)
    est = eigenvalues(H, depth=depth, sub=sub, window=window)
    ref = eigenvalues(H, depth=2 * depth, sub=sub, window=window)
    k = stable_prefix(est, ref, rtol)
    if k < 16:
        raise PreconditionError("fewer than 16 truncation-stable eigenvalues")
    lam = np.sort(est.moduli)[:k]
    return conv_exponent(lam, fit_fraction=0.75), k, window


# -------------------------------------------------------------------------
# exports


def spectrum_csv(est: SpectrumEstimate) -> str:
    lines = ["index,lambda,sign"]
    for i, lam in enumerate(est.lambdas, start=1):
        lines.append(f"{i},{abs(lam)!r},{1 if lam > 0 else -1}")
    return "\n".join(lines) + "\n"


def counting_csv(report: CountingReport) -> str:
    lines = ["r,n_of_r"]
    for r, n in report.n_of_r:
        lines.append(f"{r!r},{n}")
    return "\n".join(lines) + "\n"
