"""Tail-halving dyadic discretization.

The partition points c_n split off geometric tails of the h1 mass:
``int_{c_n}^b h1 = 2^-n int_a^b h1``, equivalently each cell
J_n = (c_{n-1}, c_n) carries h1 mass 2^-n of the total.  The weights

    omega_n = || 1_{J_n} sqrt(h1) || * || 1_{J_n} sqrt(h2) ||
            = (int h1)^(1/2) 2^(-n/2) (int_{J_n} h2)^(1/2)

drive every spectral criterion.  This canonical normalisation carries the
total-mass factor ||kappa|| = (int h1)^(1/2); the variant without that factor
(as the criteria are sometimes stated) is exposed separately, and all
asymptotic verdicts are scale invariant either way.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .hamiltonian import Hamiltonian

__all__ = [
    "DEFAULT_DEPTH",
    "DyadicProfile",
    "dyadic_points",
    "omega_sequence",
    "omega_sq_sequence",
    "chi",
    "build_profile",
]

# Default dyadic depth; beyond ~50 the tail mass in t-coordinates underflows
# the relative tolerance of double precision (engines that need more depth
# use the families' logarithmic cell data instead of t-space points).
DEFAULT_DEPTH = 40


@dataclass(frozen=True)
class DyadicProfile:
    """Partition points, weights, and provenance of a dyadic profile.

    ``points`` holds c_0 = a through c_depth; ``omega`` the weights
    omega_1..omega_depth; ``total_mass`` is int_a^b h1 = ||kappa||^2.
    """

    depth: int
    points: np.ndarray
    omega: np.ndarray
    total_mass: float
    provenance: str

    @property
    def omega_theorem_normalized(self):
        """Weights without the ||kappa|| factor."""
        return self.omega / np.sqrt(self.total_mass)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("n,c_n,omega_n\n")
        for n in range(1, self.depth + 1):
            buf.write(f"{n},{self.points[n]!r},{self.omega[n - 1]!r}\n")
        return buf.getvalue()


def dyadic_points(H: Hamiltonian, depth: int = DEFAULT_DEPTH):
    """Points c_0 = a < c_1 < ... < c_depth with halving h1 tails.

    Solved through the family's closed-form tail inverse where available and
    by monotone bisection otherwise, to relative tolerance 1e-12 on the tail
    value.  Requires int h1 < inf and h1 not vanishing a.e. near b.
    """
    if depth < 1:
        raise DomainError("depth must be >= 1")
    H._require_dyadic()
    pts = np.empty(depth + 1)
    pts[0] = H.a
    for n in range(1, depth + 1):
        pts[n] = H.inverse_tail(2.0 ** float(-n))
    return pts


def omega_sq_sequence(H: Hamiltonian, depth: int = DEFAULT_DEPTH):
    """omega_n^2 for n = 1..depth (stable to the family's depth cap)."""
    return H.omega_sq(np.arange(1, depth + 1))


def omega_sequence(H: Hamiltonian, depth: int = DEFAULT_DEPTH):
    """omega_n for n = 1..depth."""
    return np.sqrt(omega_sq_sequence(H, depth))


def chi(H: Hamiltonian, u):
    """Right inverse of t -> tail_h1(t) / total_h1.

    Returns the infimum of the solution set (deterministic tie break on
    plateaus of the tail), so chi(2^-n) coincides with the dyadic point c_n.
    """
    u = float(u)
    if not 0.0 <= u <= 1.0:
        raise DomainError("chi argument must lie in [0, 1]")
    H._require_dyadic()
    return H.inverse_tail(u)


def build_profile(H: Hamiltonian, depth: int = DEFAULT_DEPTH,
                  provenance: str = "kappa=sqrt(h1), phi=sqrt(h2)"):
    """Assemble a DyadicProfile (points, weights, mass, provenance)."""
    pts = dyadic_points(H, depth)
    omega = omega_sequence(H, depth)
    return DyadicProfile(depth=depth, points=pts, omega=omega,
                         total_mass=float(H.total_h1), provenance=provenance)
