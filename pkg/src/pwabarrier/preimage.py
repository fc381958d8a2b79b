"""Box over-approximations of the states of one region that can reach another.

The bisection shrinks ``R_i`` axis by axis: a slab is cut away only when the
interval image of that slab provably misses the destination.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .geometry import COORD_TOL, Box
from .relaxation import UncertainAffineMap, image_bounds

DEFAULT_DEPTH = 10


@dataclass(frozen=True)
class PreimageBox:
    i: int
    j: int
    eta: np.ndarray
    box: Box


def alpha_feasible(m: UncertainAffineMap, x, eta, rj: Box) -> bool:
    """Exact test of ``exists alpha: A(alpha) x + b(alpha) + eta in rj``.

    For uncoupled maps each row picks its own alpha, so rows are tested
    independently.
    """
    x = np.asarray(x, dtype=float)
    eta = np.asarray(eta, dtype=float)
    p_lo = m.A_lo @ x + m.b_lo + eta  # value at alpha = 1
    p_hi = m.A_hi @ x + m.b_hi + eta  # value at alpha = 0
    a_min, a_max = 0.0, 1.0
    tol = COORD_TOL
    for k in range(m.n):
        slope = p_lo[k] - p_hi[k]
        if abs(slope) <= 1e-15:
            ok = rj.lo[k] - tol <= p_hi[k] <= rj.hi[k] + tol
            if not ok:
                return False
            continue
        t1 = (rj.lo[k] - p_hi[k]) / slope
        t2 = (rj.hi[k] - p_hi[k]) / slope
        lo_k, hi_k = min(t1, t2), max(t1, t2)
        if m.coupled:
            a_min, a_max = max(a_min, lo_k), min(a_max, hi_k)
            if a_min > a_max + tol:
                return False
        elif max(0.0, lo_k) > min(1.0, hi_k) + tol:
            return False
    return True


def _misses(lo, hi, dest_lo, dest_hi, dest_ext, dom_lo, dom_hi):
    """True where the image box [lo, hi] provably avoids its destination."""
    disjoint = np.any((lo > dest_hi + COORD_TOL) | (hi < dest_lo - COORD_TOL), axis=1)
    inside = np.all((lo >= dom_lo - COORD_TOL) & (hi <= dom_hi + COORD_TOL), axis=1)
    return np.where(dest_ext, inside, disjoint)


def batch_preimage(A_lo, A_hi, b_lo, b_hi, qlo, qhi, eta, dest_lo, dest_hi, dest_ext,
                   domain: Optional[Box], t: int = DEFAULT_DEPTH):
    """Vectorised bisection over many (region, destination, sample) triples.

    Arrays are stacked along the first axis (one row per triple). Rows with
    ``dest_ext`` true target the exterior of ``domain``; their ``dest_lo`` /
    ``dest_hi`` entries are ignored. Returns ``(lo, hi, nonempty)``.
    """
    qlo = np.array(qlo, dtype=float)
    qhi = np.array(qhi, dtype=float)
    m, n = qlo.shape
    dest_ext = np.asarray(dest_ext, dtype=bool)
    if domain is None:
        if dest_ext.any():
            raise ValueError("exterior destinations need the partition domain")
        dom_lo = np.full(n, -np.inf)
        dom_hi = np.full(n, np.inf)
    else:
        dom_lo, dom_hi = domain.lo, domain.hi

    def miss(lo_box, hi_box):
        lo, hi = image_bounds(A_lo, A_hi, b_lo, b_hi, lo_box, hi_box, eta)
        return _misses(lo, hi, dest_lo, dest_hi, dest_ext, dom_lo, dom_hi)

    nonempty = ~miss(qlo, qhi)
    for k in range(n):
        l_k, u_k = qlo[:, k].copy(), qhi[:, k].copy()

        # raise the lower bound: cut {x_k <= c} when its image misses
        ll, ul = l_k.copy(), u_k.copy()
        for _ in range(t):
            c = 0.5 * (ll + ul)
            sub_hi = qhi.copy()
            sub_hi[:, k] = c
            cut = miss(qlo, sub_hi)
            ll = np.where(cut, c, ll)
            ul = np.where(cut, ul, c)

        # lower the upper bound: cut {x_k >= c} when its image misses
        lu, uu = l_k.copy(), u_k.copy()
        for _ in range(t):
            c = 0.5 * (lu + uu)
            sub_lo = qlo.copy()
            sub_lo[:, k] = c
            cut = miss(sub_lo, qhi)
            uu = np.where(cut, c, uu)
            lu = np.where(cut, lu, c)

        nonempty &= ll <= uu
        qlo[:, k] = ll
        qhi[:, k] = np.maximum(ll, uu)
    return qlo, qhi, nonempty


def poly_preimage(ri: Box, rj: Optional[Box], m: UncertainAffineMap, eta,
                  t: int = DEFAULT_DEPTH, domain: Optional[Box] = None) -> Optional[Box]:
    """Bisection over-approximation of the part of ``ri`` reaching ``rj``.

    ``rj=None`` targets the exterior of ``domain``. Returns ``None`` when the
    preimage is provably empty.
    """
    n = ri.dim
    eta = np.asarray(eta, dtype=float).reshape(1, n)
    ext = rj is None
    dlo = np.zeros((1, n)) if ext else rj.lo[None]
    dhi = np.zeros((1, n)) if ext else rj.hi[None]
    lo, hi, ok = batch_preimage(m.A_lo, m.A_hi, m.b_lo, m.b_hi, ri.lo[None], ri.hi[None], eta,
                                dlo, dhi, np.array([ext]), domain, t)
    if not ok[0]:
        return None
    return Box(lo[0], hi[0])
