"""Discretized integral-operator kernels and their singular values.

The operators live on L^2(a, b): the triangular (Volterra-type) kernel
``1_{t<s} phi(t) kappa(s)`` and the 2x2-block kernel
``-H(t)^(1/2) [[0, 1_{s<t}], [1_{s>t}, 0]] H(s)^(1/2)`` whose spectrum is
the reciprocal spectrum of the model operator.  Midpoint (Nystrom)
discretization with the symmetric sqrt(delta_i delta_j) weighting makes the
matrix similar to the quadrature operator, so its singular values
approximate the operator's approximation numbers.

Singular values are computed with a one-sided Jacobi iteration under a
fixed round-robin pairing.  Pairs within a round touch disjoint columns, so
the parallel execution is bit-identical to the serial one and results are
reproducible across platforms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from .errors import DomainError, NumericalError
from .hamiltonian import CellGrid, Hamiltonian

__all__ = [
    "KernelOperator",
    "discretize_T",
    "volterra_from_cells",
    "discretize_KH",
    "kh_from_cells",
    "rank_one_reduction_from_cells",
    "singular_values",
    "real_part",
    "offdiag_block_singulars",
    "independence_check",
    "IndependenceReport",
    "svd_slope",
    "matrix_dump",
    "singular_values_csv",
]

_JACOBI_TOL = 1e-12
_JACOBI_MAX_SWEEPS = 60


@dataclass(frozen=True)
class KernelOperator:
    """Discretized kernel: grid edges, midpoint factor samples, matrix."""

    matrix: np.ndarray
    edges: np.ndarray
    kappa_mid: np.ndarray
    phi_mid: np.ndarray


def discretize_T(kappa, phi, grid) -> KernelOperator:
    """Midpoint discretization of the kernel 1_{t<s} phi(t) kappa(s).

    ``grid`` holds strictly increasing cell edges t_0 < ... < t_M; entry
    (i, j) of the matrix is ``phi(tau_i) kappa(tau_j) sqrt(d_i d_j)`` for
    tau_i < tau_j and zero otherwise (strictly upper triangular), which
    represents the operator exactly on grid-aligned piecewise-constant
    factors.
    """
    edges = np.asarray(grid, dtype=float)
    if edges.ndim != 1 or len(edges) < 3 or np.any(np.diff(edges) <= 0):
        raise DomainError("grid must contain at least 2 increasing cells")
    mid = 0.5 * (edges[:-1] + edges[1:])
    d = np.sqrt(np.diff(edges))
    kv = np.asarray(kappa(mid), dtype=float) * d
    pv = np.asarray(phi(mid), dtype=float) * d
    A = np.triu(np.outer(pv, kv), 1)
    return KernelOperator(matrix=A, edges=edges, kappa_mid=kv / d, phi_mid=pv / d)


def volterra_from_cells(cells: CellGrid) -> np.ndarray:
    """Stable build of the kappa = sqrt(h1), phi = sqrt(h2) triangular
    matrix from logarithmic cell records (deep dyadic grids)."""
    half_len = 0.5 * cells.log_length
    log_rows = 0.5 * cells.log_h2 + half_len
    log_cols = 0.5 * cells.log_h1 + half_len
    with np.errstate(over="ignore"):
        A = np.exp(log_rows[:, None] + log_cols[None, :])
    if not np.all(np.isfinite(A)):
        raise NumericalError("cell grid too deep for direct matrix assembly")
    return np.triu(A, 1)


def _sqrt_entries(cells: CellGrid):
    """(v1, v2, v3) of H^(1/2) at cell midpoints, from log records."""
    h1 = np.exp(cells.log_h1)
    h2 = np.exp(cells.log_h2)
    r = cells.h3_ratio
    h3 = r * np.exp(0.5 * (cells.log_h1 + cells.log_h2))
    det = np.clip(h1 * h2 * (1.0 - r * r), 0.0, None)
    root = np.sqrt(det)
    denom = np.sqrt(h1 + h2 + 2.0 * root)
    live = denom > 0
    inv = np.where(live, 1.0 / np.where(live, denom, 1.0), 0.0)
    return (h1 + root) * inv, (h2 + root) * inv, h3 * inv


def kh_from_cells(cells: CellGrid) -> np.ndarray:
    """2M x 2M block kernel matrix in component-major layout.

    Rows/columns 0..M-1 are the first vector component on the grid cells,
    rows/columns M..2M-1 the second.  Block (i, j) is
    ``-V_i [[0, 1_{j<i}], [1_{j>i}, 0]] V_j sqrt(d_i d_j)`` with
    V = H^(1/2) at the midpoints; diagonal blocks vanish (the indicators
    are evaluated strictly off the diagonal).
    """
    v1, v2, v3 = _sqrt_entries(cells)
    d = np.exp(0.5 * cells.log_length)
    if not np.all(np.isfinite(v2 * d)):
        raise NumericalError("cell grid too deep for direct matrix assembly")
    M = len(cells)
    lower = np.tri(M, M, -1)          # 1_{j < i}
    upper = lower.T                   # 1_{j > i}
    K = np.empty((2 * M, 2 * M))
    # component-major blocks; see module docstring for the layout
    K[:M, :M] = -(np.outer(v3 * d, v1 * d) * upper + np.outer(v1 * d, v3 * d) * lower)
    K[:M, M:] = -(np.outer(v3 * d, v3 * d) * upper + np.outer(v1 * d, v2 * d) * lower)
    K[M:, :M] = -(np.outer(v2 * d, v1 * d) * upper + np.outer(v3 * d, v3 * d) * lower)
    K[M:, M:] = -(np.outer(v2 * d, v3 * d) * upper + np.outer(v3 * d, v2 * d) * lower)
    return K


def _kh_from_values(v1, v2, v3, d):
    """Block kernel matrix from square-root entries at midpoints.

    Entry formulas share every float operation with :func:`discretize_T`
    (products commute), so for diagonal H the anti-diagonal blocks equal
    the triangular factor matrices bit for bit.
    """
    M = len(d)
    lower = np.tri(M, M, -1)          # 1_{j < i}
    upper = lower.T                   # 1_{j > i}
    a1, a2, a3 = v1 * d, v2 * d, v3 * d
    K = np.empty((2 * M, 2 * M))
    K[:M, :M] = -(np.outer(a3, a1) * upper + np.outer(a1, a3) * lower)
    K[:M, M:] = -(np.outer(a3, a3) * upper + np.outer(a1, a2) * lower)
    K[M:, :M] = -(np.outer(a2, a1) * upper + np.outer(a3, a3) * lower)
    K[M:, M:] = -(np.outer(a2, a3) * upper + np.outer(a3, a2) * lower)
    return K


def discretize_KH(H: Hamiltonian, grid) -> np.ndarray:
    """Assemble the 2M x 2M block kernel matrix of H on explicit edges.

    Component-major layout: rows/columns 0..M-1 carry the first vector
    component, M..2M-1 the second; diagonal blocks vanish (the kernel
    indicators are evaluated strictly off the grid diagonal).
    """
    edges = np.asarray(grid, dtype=float)
    if edges.ndim != 1 or len(edges) < 3 or np.any(np.diff(edges) <= 0):
        raise DomainError("grid must contain at least 2 increasing cells")
    mid = 0.5 * (edges[:-1] + edges[1:])
    d = np.sqrt(np.diff(edges))
    h1, h2, h3 = (np.atleast_1d(np.asarray(v, dtype=float)) for v in H.h_at(mid))
    if np.all(h3 == 0.0):
        # diagonal H: the square root is diag(sqrt(h1), sqrt(h2)) exactly
        v1, v2, v3 = np.sqrt(h1), np.sqrt(h2), np.zeros_like(h1)
    else:
        root = np.sqrt(np.clip(h1 * h2 - h3 * h3, 0.0, None))
        denom = np.sqrt(h1 + h2 + 2.0 * root)
        live = denom > 0
        inv = np.where(live, 1.0 / np.where(live, denom, 1.0), 0.0)
        v1, v2, v3 = (h1 + root) * inv, (h2 + root) * inv, h3 * inv
    return _kh_from_values(v1, v2, v3, d)


def rank_one_reduction_from_cells(cells: CellGrid, diagonal_rule="strict"):
    """Scalar M x M reduction of the block kernel for rank-one H.

    When ``H = v v^T`` with ``v = (sqrt(h1), -sqrt(h2))``, the block kernel
    factors through the unit field w = v/|v| and its singular values equal
    those of ``G[i, j] = sqrt(d_i d_j) * sqrt(h2(tau_min(i,j)))`` (exactly;
    the embedding w has orthonormal columns).  ``diagonal_rule`` chooses the
    value at i = j: ``"strict"`` evaluates the indicator kernel at the
    midpoint pair and yields 0 (matching :func:`discretize_KH`), while
    ``"midpoint"`` uses the kernel's continuous diagonal limit
    ``sqrt(h2(tau_i)) d_i``, which restores first-order convergence of the
    small singular values (the strict rule drops an O(1/subcells) diagonal
    strip of the kernel).
    """
    if np.any(cells.h3_ratio != -1.0):
        raise DomainError("rank-one reduction requires h3 = -sqrt(h1 h2)")
    M = len(cells)
    half = 0.5 * cells.log_length
    lh = 0.5 * cells.log_h2 + 0.5 * cells.log_h1  # sqrt(h1 h2) = |h3|
    mn = np.minimum.outer(np.arange(M), np.arange(M))
    with np.errstate(over="ignore"):
        G = np.exp(half[:, None] + half[None, :] + lh[mn])
    if not np.all(np.isfinite(G)):
        raise NumericalError("cell grid too deep for direct matrix assembly")
    if diagonal_rule == "strict":
        np.fill_diagonal(G, 0.0)
    elif diagonal_rule == "midpoint":
        np.fill_diagonal(G, np.exp(cells.log_length + lh))
    else:
        raise DomainError(f"unknown diagonal rule {diagonal_rule!r}")
    return G


def real_part(A):
    """Symmetrized matrix (A + A*) / 2."""
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DomainError("real_part requires a square matrix")
    return 0.5 * (A + A.conj().T)


# -------------------------------------------------------------------------
# one-sided Jacobi


@njit(cache=True, parallel=True)
def _jacobi_rounds(cols, schedule_p, schedule_q):
    """One full sweep of disjoint-pair rotations (deterministic)."""
    nrounds = schedule_p.shape[0]
    for r in range(nrounds):
        p_idx = schedule_p[r]
        q_idx = schedule_q[r]
        for k in prange(p_idx.shape[0]):
            p = p_idx[k]
            q = q_idx[k]
            if p < 0:
                continue
            app = 0.0
            aqq = 0.0
            apq = 0.0
            for i in range(cols.shape[0]):
                x = cols[i, p]
                y = cols[i, q]
                app += x * x
                aqq += y * y
                apq += x * y
            if apq == 0.0 or apq * apq <= 1e-28 * app * aqq:
                continue
            tau = (aqq - app) / (2.0 * apq)
            if tau >= 0.0:
                t = 1.0 / (tau + np.sqrt(1.0 + tau * tau))
            else:
                t = -1.0 / (-tau + np.sqrt(1.0 + tau * tau))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            for i in range(cols.shape[0]):
                x = cols[i, p]
                y = cols[i, q]
                cols[i, p] = c * x - s * y
                cols[i, q] = s * x + c * y


_SCHEDULE_CACHE: dict = {}


def _round_robin_schedule(M):
    """Fixed chess-tournament pairing: M-1 rounds of disjoint pairs."""
    if M in _SCHEDULE_CACHE:
        return _SCHEDULE_CACHE[M]
    players = list(range(M)) + ([-1] if M % 2 else [])
    P = len(players)
    fixed, rest = players[0], players[1:]
    ps, qs = [], []
    for r in range(P - 1):
        ring = rest[r:] + rest[:r]
        left = [fixed] + ring[: P // 2 - 1]
        right = ring[P // 2 - 1:][::-1]
        pr = []
        for x, y in zip(left, right):
            if x < 0 or y < 0:
                pr.append((-1, -1))
            else:
                pr.append((min(x, y), max(x, y)))
        ps.append([x for x, _ in pr])
        qs.append([y for _, y in pr])
    sched = (np.asarray(ps, dtype=np.int64), np.asarray(qs, dtype=np.int64))
    _SCHEDULE_CACHE[M] = sched
    return sched


def singular_values(A, tol=_JACOBI_TOL, max_sweeps=_JACOBI_MAX_SWEEPS):
    """Singular values by deterministic one-sided Jacobi, nonincreasing.

    Convergence is declared when every pair of columns is orthogonal to
    relative accuracy ``tol``: max |<c_p, c_q>| / (|c_p| |c_q|) <= tol.
    The pairwise relative measure keeps small singular values accurate for
    strongly graded spectra (a global off-diagonal mass would let large
    columns mask errors in small ones).  Raises NumericalError after
    ``max_sweeps`` sweeps.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise DomainError("expected a matrix")
    if not np.all(np.isfinite(A)):
        raise DomainError("matrix entries must be finite")
    if A.shape[0] < A.shape[1]:
        A = A.T
    _, M = A.shape
    if M == 0:
        return np.zeros(0)
    if M == 1:
        return np.array([float(np.linalg.norm(A))])
    cols = np.asfortranarray(A, dtype=float)
    sp, sq = _round_robin_schedule(M)
    for _sweep in range(max_sweeps):
        G = cols.T @ cols
        dg = np.diag(G).copy()
        denom = np.outer(dg, dg)
        np.fill_diagonal(denom, 1.0)
        cos2 = (G * G) / np.maximum(denom, 1e-300)
        np.fill_diagonal(cos2, 0.0)
        if float(cos2.max()) <= tol * tol:
            break
        _jacobi_rounds(cols, sp, sq)
    else:
        raise NumericalError(
            f"Jacobi iteration did not converge in {max_sweeps} sweeps")
    return np.sort(np.linalg.norm(cols, axis=0))[::-1]


def offdiag_block_singulars(A, partition):
    """Singular values of the superdiagonal block compression of Re A.

    ``partition`` lists (start, stop) index ranges of consecutive grid
    cells (typically the dyadic cells J_n).  The compression
    ``sum_n P_n (Re A) P_{n+1}`` maps each block's column space into the
    previous block's row space; since those spaces are pairwise orthogonal
    its singular values are the union of the per-block ones.
    """
    A = np.asarray(A, dtype=float)
    blocks = list(partition)
    stop_prev = None
    for (lo, hi) in blocks:
        if not 0 <= lo < hi <= A.shape[0]:
            raise DomainError("partition outside the grid")
        if stop_prev is not None and lo != stop_prev:
            raise DomainError("partition blocks must be consecutive")
        stop_prev = hi
    R = real_part(A)
    out = []
    for (lo, hi), (lo2, hi2) in zip(blocks[:-1], blocks[1:]):
        blk = R[lo:hi, lo2:hi2]
        out.append(singular_values(blk))
    if not out:
        return np.zeros(0)
    return np.sort(np.concatenate(out))[::-1]


# -------------------------------------------------------------------------
# independence comparison


def svd_slope(sv, fit_range):
    """Least-squares slope of log sigma_n vs log n over 1-based fit_range."""
    sv = np.asarray(sv, dtype=float)
    lo, hi = fit_range
    hi = min(hi, int(np.count_nonzero(sv > 0)))
    if hi - lo < 2:
        raise DomainError("fit range too short")
    n = np.arange(lo, hi + 1)
    return float(np.polyfit(np.log(n), np.log(sv[lo - 1: hi]), 1)[0])


@dataclass(frozen=True)
class IndependenceReport:
    """Singular-value decay comparison between H and its diagonal part."""

    slope_full: float
    slope_diag: float
    fit_range: tuple
    grid_size: int
    truncation_depth: int
    diagonal_rule: str
    sv_full: np.ndarray
    sv_diag: np.ndarray

    @property
    def slope_delta(self) -> float:
        return abs(self.slope_full - self.slope_diag)


def _kh_singulars(H: Hamiltonian, cells: CellGrid, diagonal_rule):
    """Singular values of the block kernel, using exact structure where
    available: for diagonal H they are the duplicated values of the
    triangular factor; for rank-one H those of the scalar reduction."""
    if H.is_diagonal:
        A = volterra_from_cells(cells)
        if diagonal_rule == "midpoint":
            A = A + np.diag(np.exp(cells.log_length
                                   + 0.5 * (cells.log_h1 + cells.log_h2)) / 2.0)
        sv = singular_values(A)
        return np.sort(np.concatenate([sv, sv]))[::-1]
    if H.is_rank_one:
        G = rank_one_reduction_from_cells(cells, diagonal_rule)
        return singular_values(G)
    if diagonal_rule != "strict":
        raise DomainError("midpoint rule is only wired for structured H")
    return singular_values(kh_from_cells(cells))


def independence_check(H: Hamiltonian, grid_size: int = 1024,
                       fit_range=(4, 16), sub: int = 8,
                       diagonal_rule: str = "strict") -> IndependenceReport:
    """Compare singular-value decay of the block kernels of H and diag(H).

    Grids use the dyadic points subdivided uniformly (``sub`` subcells per
    dyadic cell, depth = grid_size / sub).  ``fit_range`` should stay
    within the truncation-converged prefix of the spectrum: deeper indices
    reflect the truncated rather than the full operator.
    """
    depth = max(2, grid_size // sub)
    cells_full = H.dyadic_cells(depth, sub)
    cells_diag = H.diag().dyadic_cells(depth, sub)
    sv_full = _kh_singulars(H, cells_full, diagonal_rule)
    sv_diag = _kh_singulars(H.diag(), cells_diag, diagonal_rule)
    return IndependenceReport(
        slope_full=svd_slope(sv_full, fit_range),
        slope_diag=svd_slope(sv_diag, fit_range),
        fit_range=tuple(fit_range),
        grid_size=grid_size,
        truncation_depth=depth,
        diagonal_rule=diagonal_rule,
        sv_full=sv_full[:512],
        sv_diag=sv_diag[:512],
    )


# -------------------------------------------------------------------------
# exports


def singular_values_csv(sv) -> str:
    lines = ["n,sigma_n"]
    for i, s in enumerate(np.asarray(sv, dtype=float), start=1):
        lines.append(f"{i},{s!r}")
    return "\n".join(lines) + "\n"


def matrix_dump(A) -> bytes:
    """Binary dump: 8-byte little-endian size header, then row-major f64."""
    A = np.ascontiguousarray(np.asarray(A, dtype="<f8"))
    header = np.uint64(A.shape[0]).tobytes()
    if len(header) != 8:  # pragma: no cover
        raise NumericalError("unexpected header width")
    return header + A.tobytes(order="C")
