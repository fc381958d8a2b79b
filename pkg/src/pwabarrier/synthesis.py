"""Assembly and solution of the finite barrier LP, and certificate extraction."""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .geometry import Box, HalfspaceSystem, RTree, boxes_intersect, rtree_build, to_halfspaces
from .lp import EQ, LE, LPModel, LPSolution, solve, solve_lexicographic
from .partition import EXTERIOR, IndexSets, Partition, classify_indices, grid_partition, intersect_boxes
from .preimage import DEFAULT_DEPTH, batch_preimage
from .relaxation import UncertainAffineMap, image_bounds
from .scenario import (
    NoiseDataset,
    barrier_dimension,
    beta_bound,
    buffer_delta,
    prune_to_hull,
)

log = logging.getLogger("pwabarrier")

VERTEX_TOL = 1e-6
GAMMA, C = 0, 1


class SynthesisError(RuntimeError):
    pass


class BarrierCheckError(SynthesisError):
    pass


# ---------------------------------------------------------------------------
# robust constraints


@dataclass
class LinExpr:
    """``sum coeffs[var] * z[var] + const``."""

    coeffs: dict = field(default_factory=dict)
    const: float = 0.0


def dualize_robust(model: LPModel, P: HalfspaceSystem, lhs: Sequence[LinExpr], rhs: LinExpr,
                   tag: str = "rob") -> np.ndarray:
    """Add rows equivalent to ``lhs(z)^T x <= rhs(z)`` for every ``x`` in ``P``.

    ``lhs`` has one affine expression per state coordinate. Emits a fresh
    block of ``p`` non-negative multipliers ``lam`` with

        h^T lam <= rhs(z)        and        H^T lam = lhs(z).

    Returns the multiplier variable ids.
    """
    p, n = P.H.shape
    if len(lhs) != n:
        raise ValueError(f"need {n} coefficient expressions, got {len(lhs)}")
    if not _bounded(P):
        raise ValueError("robust constraints need a bounded polyhedron")
    lam = model.add_vars(f"{tag}_lam", p, lb=0.0)
    coeffs = {int(v): float(h) for v, h in zip(lam, P.h)}
    for var, a in rhs.coeffs.items():
        coeffs[var] = coeffs.get(var, 0.0) - a
    model.add_constraint(coeffs, LE, rhs.const, name=f"{tag}_obj")
    for r in range(n):
        coeffs = {int(v): float(h) for v, h in zip(lam, P.H[:, r]) if h != 0}
        for var, a in lhs[r].coeffs.items():
            coeffs[var] = coeffs.get(var, 0.0) - a
        model.add_constraint(coeffs, EQ, lhs[r].const, name=f"{tag}_eq{r}")
    return lam


def _bounded(P: HalfspaceSystem) -> bool:
    # a polyhedron is bounded iff {d : H d <= 0} = {0}; test each +-e_k direction by LP
    from scipy.optimize import linprog

    n = P.dim
    for k in range(n):
        for s in (1.0, -1.0):
            c = np.zeros(n)
            c[k] = -s
            res = linprog(c, A_ub=P.H, b_ub=np.zeros(P.H.shape[0]), bounds=[(-1, 1)] * n, method="highs")
            if res.status == 0 and -res.fun > 1e-9:
                return False
    return True


def _box_robust_block(model: LPModel, lo, hi, g_cols, g_vals, g0, s_cols, s_vals, s0, tag: str) -> int:
    """Vectorised ``dualize_robust`` for K constraints over boxes.

    Constraint k reads ``g_k(z)^T x <= s_k(z)`` for ``x`` in ``[lo_k, hi_k]`` with
    ``g_k(z)_r = sum_t g_vals[k,r,t] z[g_cols[k,r,t]] + g0[k,r]`` and
    ``s_k(z) = sum_t s_vals[k,t] z[s_cols[k,t]] + s0[k]``. Multipliers follow
    the ``to_halfspaces`` row order. Returns the number of rows added.
    """
    K, n = lo.shape
    if K == 0:
        return 0
    p = 2 * n
    lam = model.add_vars(f"{tag}_lam", K * p, lb=0.0).reshape(K, p)
    h = np.empty((K, p))
    h[:, 0::2] = hi
    h[:, 1::2] = -lo

    # row k: h^T lam_k - s_k(z) <= s0_k
    Ts = s_cols.shape[1]
    r1 = np.concatenate([np.repeat(np.arange(K), p), np.repeat(np.arange(K), Ts)])
    c1 = np.concatenate([lam.ravel(), s_cols.ravel()])
    v1 = np.concatenate([h.ravel(), -s_vals.ravel()])

    # row K + k*n + r: lam_{k,2r} - lam_{k,2r+1} - g_k(z)_r = g0_kr
    Tg = g_cols.shape[2]
    eq_ids = K + np.arange(K * n).reshape(K, n)
    r2 = np.concatenate([eq_ids.ravel(), eq_ids.ravel(), np.repeat(eq_ids.ravel(), Tg)])
    c2 = np.concatenate([lam[:, 0::2].ravel(), lam[:, 1::2].ravel(), g_cols.reshape(-1)])
    v2 = np.concatenate([np.ones(K * n), -np.ones(K * n), -g_vals.reshape(-1)])

    senses = np.array([LE] * K + [EQ] * (K * n), dtype=object)
    rhs = np.concatenate([s0, g0.ravel()])
    model.add_rows(np.concatenate([r1, r2]), np.concatenate([c1, c2]), np.concatenate([v1, v2]), senses, rhs)
    return K * (1 + n)


def _box_vertex_block(model: LPModel, lo, hi, g_cols, g_vals, g0, s_cols, s_vals, s0, tag: str) -> int:
    """Same constraints as ``_box_robust_block``, enforced at the 2^n box vertices.

    A constraint affine in ``x`` holds on a box iff it holds at its vertices,
    so this adds no multipliers. Returns the number of rows added.
    """
    K, n = lo.shape
    if K == 0:
        return 0
    Tg, Ts = g_cols.shape[2], s_cols.shape[1]
    rows = []
    cols, vals, rhs = [], [], []
    for corner in itertools.product((0, 1), repeat=n):
        x = np.where(np.array(corner, dtype=bool), hi, lo)  # (K, n)
        base = len(rhs) * K
        rid = base + np.arange(K)
        rows += [np.repeat(rid, n * Tg), np.repeat(rid, Ts)]
        cols += [g_cols.reshape(K, -1).ravel(), s_cols.ravel()]
        vals += [(g_vals * x[:, :, None]).reshape(K, -1).ravel(), -s_vals.ravel()]
        rhs.append(s0 - np.einsum("kr,kr->k", g0, x))
    m = len(rhs) * K
    model.add_rows(np.concatenate(rows), np.concatenate(cols), np.concatenate(vals),
                   np.array([LE] * m, dtype=object), np.concatenate(rhs))
    return m


ROBUST_FORMS = {"dual": _box_robust_block, "vertices": _box_vertex_block}
# above this many triples the multiplier columns dominate the solve time
AUTO_DUAL_MAX_TRIPLES = 2000


# ---------------------------------------------------------------------------
# transition triples


@dataclass
class TransitionTriples:
    """Struct-of-arrays set of ``(i, j, k)`` triples with their preimage boxes.

    ``j == EXTERIOR`` marks the complement of the gridded domain.
    """

    i: np.ndarray
    j: np.ndarray
    k: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    def __len__(self) -> int:
        return self.i.size

    def keys(self) -> set:
        return set(zip(self.i.tolist(), self.j.tolist(), self.k.tolist()))

    def box(self, t: int) -> Box:
        return Box(self.lo[t], self.hi[t])


@dataclass(frozen=True)
class TransitionTriple:
    i: int
    j: int
    k: int
    box: Box


def _stack_maps(maps: Sequence[UncertainAffineMap]):
    A_lo = np.array([m.A_lo for m in maps])
    A_hi = np.array([m.A_hi for m in maps])
    b_lo = np.array([m.b_lo for m in maps])
    b_hi = np.array([m.b_hi for m in maps])
    return A_lo, A_hi, b_lo, b_hi


def candidate_pairs(p: Partition, maps: Sequence[UncertainAffineMap], samples: np.ndarray,
                    tree: Optional[RTree] = None, sources: Optional[Sequence[int]] = None):
    """Triples whose interval image meets the destination, before bisection.

    Returns arrays ``(i, j, k)`` sorted lexicographically.
    """
    tree = tree or rtree_build(p.regions)
    sources = np.arange(len(p)) if sources is None else np.asarray(sources)
    A_lo, A_hi, b_lo, b_hi = _stack_maps([maps[s] for s in sources])
    lo_r, hi_r = p.lo[sources], p.hi[sources]
    N = samples.shape[0]
    out_i, out_j, out_k = [], [], []
    for k in range(N):
        eta = np.broadcast_to(samples[k], lo_r.shape)
        ilo, ihi = image_bounds(A_lo, A_hi, b_lo, b_hi, lo_r, hi_r, eta)
        exits = ~np.all((ilo >= p.domain.lo - 1e-12) & (ihi <= p.domain.hi + 1e-12), axis=1)
        for s, src in enumerate(sources):
            hits = tree.query(Box(ilo[s], ihi[s]))
            out_i.extend([src] * len(hits))
            out_j.extend(hits)
            out_k.extend([k] * len(hits))
            if exits[s]:
                out_i.append(src)
                out_j.append(EXTERIOR)
                out_k.append(k)
    i = np.array(out_i, dtype=np.int64)
    j = np.array(out_j, dtype=np.int64)
    k = np.array(out_k, dtype=np.int64)
    order = np.lexsort((k, j, i))
    return i[order], j[order], k[order]


def find_transition_triples(p: Partition, maps: Sequence[UncertainAffineMap], samples,
                            tree: Optional[RTree] = None, t: int = DEFAULT_DEPTH,
                            sources: Optional[Sequence[int]] = None) -> TransitionTriples:
    """All ``(i, j, k)`` with a reachable destination and a non-empty preimage box."""
    samples = samples.samples if isinstance(samples, NoiseDataset) else np.atleast_2d(samples)
    i, j, k = candidate_pairs(p, maps, samples, tree, sources)
    n = p.dim
    if i.size == 0:
        z = np.zeros((0, n))
        return TransitionTriples(i, j, k, z, z.copy())
    A_lo, A_hi, b_lo, b_hi = _stack_maps(maps)
    ext = j == EXTERIOR
    jj = np.where(ext, 0, j)
    dlo, dhi = p.lo[jj], p.hi[jj]
    lo, hi, ok = [], [], []
    chunk = 20000
    for s in range(0, i.size, chunk):
        sl = slice(s, s + chunk)
        ii = i[sl]
        a, b, c = batch_preimage(A_lo[ii], A_hi[ii], b_lo[ii], b_hi[ii], p.lo[ii], p.hi[ii],
                                 samples[k[sl]], dlo[sl], dhi[sl], ext[sl], p.domain, t)
        lo.append(a)
        hi.append(b)
        ok.append(c)
    lo, hi, ok = np.concatenate(lo), np.concatenate(hi), np.concatenate(ok)
    return TransitionTriples(i[ok], j[ok], k[ok], lo[ok], hi[ok])


# ---------------------------------------------------------------------------
# LP assembly


def u_index(i, n: int, r=None):
    base = 2 + np.asarray(i) * (n + 1)
    return base if r is None else base + r


def v_index(i, n: int):
    return 2 + np.asarray(i) * (n + 1) + n


@dataclass
class FSBPModel:
    model: LPModel
    n: int
    ell: int
    blocks: dict
    robust: str = "dual"


def build_fsbp(p: Partition, idx: IndexSets, maps: Sequence[UncertainAffineMap], triples: TransitionTriples,
               samples: np.ndarray, X0: Box, T: int, delta: float, M: float = 1.0,
               encoding: str = "radius", robust: str = "auto") -> FSBPModel:
    """Finite barrier LP over the primal variables ``gamma, c, (u_i, v_i)``.

    With ``robust="dual"`` every robust constraint is replaced by its dual
    over a box (see ``dualize_robust``); ``"vertices"`` enforces it at the
    box vertices instead, which is equivalent and adds no multipliers.
    ``"auto"`` picks the dual form up to ``AUTO_DUAL_MAX_TRIPLES`` triples.
    """
    if robust == "auto":
        robust = "dual" if len(triples) <= AUTO_DUAL_MAX_TRIPLES else "vertices"
    if robust not in ROBUST_FORMS:
        raise ValueError(f"unknown robust form {robust!r}; choose from {sorted(ROBUST_FORMS)}")
    block = ROBUST_FORMS[robust]
    if M < 1:
        raise ValueError("M must be at least 1")
    if delta < 0:
        raise ValueError("delta must be non-negative")
    if len(maps) != len(p):
        raise ValueError(f"need one map per region ({len(p)}), got {len(maps)}")
    n, ell = p.dim, len(p)
    samples = np.atleast_2d(samples)
    model = LPModel()
    model.add_var("gamma", 0.0)
    model.add_var("c", 0.0)
    for i in range(ell):
        for r in range(n):
            model.add_var(f"u{i}_{r}", -math.inf, math.inf)
        model.add_var(f"v{i}", -math.inf, math.inf)
    model.set_objective({GAMMA: 1.0, C: float(T)})
    blocks = {}

    regions = np.arange(ell)
    lo, hi = p.lo, p.hi
    u_all = u_index(regions, n)[:, None] + np.arange(n)[None, :]  # (ell, n)
    v_all = v_index(regions, n)

    # non-negativity: (-u_i)^T x <= v_i
    blocks["nonnegativity"] = block(
        model, lo, hi, u_all[:, :, None], -np.ones((ell, n, 1)), np.zeros((ell, n)),
        v_all[:, None], np.ones((ell, 1)), np.zeros(ell), "nn")
    # upper bound: u_i^T x <= M - v_i
    blocks["upper_bound"] = block(
        model, lo, hi, u_all[:, :, None], np.ones((ell, n, 1)), np.zeros((ell, n)),
        v_all[:, None], -np.ones((ell, 1)), np.full(ell, float(M)), "ub")
    # initial set: u_i^T x <= gamma - v_i over R_i cap X0
    init = np.array(idx.initial, dtype=np.int64)
    ilo = np.array([intersect_boxes(p.regions[i], X0).lo for i in init]).reshape(-1, n)
    ihi = np.array([intersect_boxes(p.regions[i], X0).hi for i in init]).reshape(-1, n)
    K0 = init.size
    blocks["initial"] = block(
        model, ilo, ihi, u_all[init][:, :, None], np.ones((K0, n, 1)), np.zeros((K0, n)),
        np.column_stack([v_all[init], np.full(K0, GAMMA)]), np.tile([-1.0, 1.0], (K0, 1)),
        np.zeros(K0), "x0")
    # unsafe set: exterior piece is the constant 1
    blocks["unsafe"] = 0

    forms = [step_forms(m, encoding) for m in maps]
    a_base = model.n_vars
    if any(f[0][2] is not None for f in forms):
        # a_j >= |u_j| bounds the radius term of uncoupled maps
        a_all = model.add_vars("a", ell * n, lb=0.0).reshape(ell, n)
        K = ell * n
        rws = np.repeat(np.arange(2 * K), 2)
        cls = np.column_stack([np.concatenate([u_all.ravel(), u_all.ravel()]),
                               np.concatenate([a_all.ravel(), a_all.ravel()])]).ravel()
        vls = np.column_stack([np.concatenate([np.ones(K), -np.ones(K)]), -np.ones(2 * K)]).ravel()
        model.add_rows(rws, cls, vls, np.array([LE] * (2 * K), dtype=object), np.zeros(2 * K))
        blocks["radius_bounds"] = 2 * K
    blocks["one_step"] = _one_step_rows(model, maps, triples, samples, n, delta, forms, a_base, block)
    blocks["triples"] = len(triples)
    return FSBPModel(model, n, ell, blocks, robust)


def step_forms(m: UncertainAffineMap, encoding: str = "radius"):
    """Affine forms ``(A, b, A_rad, b_rad)`` whose one-step rows cover every successor.

    Coupled maps use their alpha endpoints. Uncoupled maps either list every
    lower/upper row selection (``corners``) or use one midpoint form with a
    radius term weighted by ``a_j >= |u_j|`` (``radius``); on the cell the
    radius is non-negative, so both describe the same constraint.
    """
    if m.exact or m.coupled or m.n == 1 or encoding == "corners":
        return [(A, b, None, None) for A, b in m.corners()]
    if encoding != "radius":
        raise ValueError(f"unknown encoding {encoding!r}")
    return [(0.5 * (m.A_lo + m.A_hi), 0.5 * (m.b_lo + m.b_hi), 0.5 * (m.A_hi - m.A_lo), 0.5 * (m.b_hi - m.b_lo))]


def _one_step_rows(model, maps, tr: TransitionTriples, samples, n, delta, forms, a_base,
                   block=_box_robust_block) -> int:
    if len(tr) == 0:
        return 0
    rows = 0
    n_forms = np.array([len(f) for f in forms])
    has_rad = np.array([f[0][2] is not None for f in forms])
    for q in range(int(n_forms.max())):
        for rad in (False, True):
            sel = np.flatnonzero((n_forms[tr.i] > q) & (has_rad[tr.i] == rad))
            if sel.size:
                rows += _form_block(model, tr, sel, [forms[s][q] for s in tr.i[sel]], samples, n, delta,
                                    rad, a_base, f"os{q}{'r' if rad else ''}", block)
    return rows


def _form_block(model, tr, sel, fs, samples, n, delta, rad, a_base, tag, block) -> int:
    rows = 0
    i, j, k = tr.i[sel], tr.j[sel], tr.k[sel]
    A = np.array([f[0] for f in fs])  # (K, n, n)
    b = np.array([f[1] for f in fs])
    eta = samples[k]
    lo, hi = tr.lo[sel], tr.hi[sel]
    ui = u_index(i, n)[:, None] + np.arange(n)
    vi = v_index(i, n)
    ext = j == EXTERIOR

    # normal destinations:
    # (A^T u_j + A_rad^T a_j - u_i)^T x <= v_i - v_j - u_j^T (b + eta) - a_j^T b_rad + c - delta
    nm = ~ext
    if nm.any():
        K = int(nm.sum())
        uj = u_index(j[nm], n)[:, None] + np.arange(n)
        vj = v_index(j[nm], n)
        g_cols = [np.broadcast_to(uj[:, None, :], (K, n, n)), ui[nm][:, :, None]]
        g_vals = [np.transpose(A[nm], (0, 2, 1)), -np.ones((K, n, 1))]
        s_cols = [vi[nm][:, None], vj[:, None], uj, np.full((K, 1), C)]
        s_vals = [np.ones((K, 1)), -np.ones((K, 1)), -(b[nm] + eta[nm]), np.ones((K, 1))]
        if rad:
            aj = a_base + j[nm][:, None] * n + np.arange(n)
            Ar = np.array([f[2] for f in fs])[nm]
            br = np.array([f[3] for f in fs])[nm]
            g_cols.append(np.broadcast_to(aj[:, None, :], (K, n, n)))
            g_vals.append(np.transpose(Ar, (0, 2, 1)))
            s_cols.append(aj)
            s_vals.append(-br)
        rows += block(model, lo[nm], hi[nm], np.concatenate(g_cols, axis=2),
                                  np.concatenate(g_vals, axis=2), np.zeros((K, n)), np.hstack(s_cols),
                                  np.hstack(s_vals), np.full(K, -delta), tag)
    # exterior destination: (-u_i)^T x <= v_i + c - 1 - delta
    if ext.any():
        K = int(ext.sum())
        rows += block(model, lo[ext], hi[ext], ui[ext][:, :, None], -np.ones((K, n, 1)),
                                  np.zeros((K, n)), np.column_stack([vi[ext], np.full(K, C)]),
                                  np.ones((K, 2)), np.full(K, -1.0 - delta), tag + "x")
    return rows


# ---------------------------------------------------------------------------
# barrier and certificate


@dataclass
class BarrierPWA:
    """Piecewise-affine barrier ``u_i^T x + v_i`` on each cell, 1 outside."""

    partition: Partition
    u: np.ndarray
    v: np.ndarray
    M: float = 1.0
    exterior_value: float = 1.0

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        cell = self.partition.locate(x)
        inside = cell != EXTERIOR
        safe = np.where(inside, cell, 0)
        val = np.einsum("ij,ij->i", self.u[safe], x) + self.v[safe]
        return np.where(inside, val, self.exterior_value)


@dataclass
class Certificate:
    gamma: float
    c: float
    T: int
    zeta: float
    zeta_clamped: float
    beta: float
    epsilon: float
    delta: float
    M: float
    N: int
    ell: int
    d: int
    n_hull: int
    bisection_depth: int
    solver: dict = field(default_factory=dict)
    fingerprint: str = ""

    @property
    def vacuous(self) -> bool:
        return self.zeta <= 0

    def to_dict(self) -> dict:
        out = asdict(self)
        out["vacuous"] = self.vacuous
        return out


def _triple_corner_arrays(maps, tr: TransitionTriples):
    corners = [m.corners() for m in maps]
    for t in range(len(tr)):
        for A, b in corners[tr.i[t]]:
            yield t, A, b


def extract_barrier(sol: LPSolution, fsbp: FSBPModel, p: Partition, idx: Optional[IndexSets] = None,
                    maps=None, triples: Optional[TransitionTriples] = None, samples=None,
                    X0: Optional[Box] = None, delta: float = 0.0, M: float = 1.0,
                    tol: float = VERTEX_TOL) -> BarrierPWA:
    """Read ``(u_i, v_i)`` off an optimal solution and re-check constraints at vertices."""
    if not sol.optimal:
        raise SynthesisError(f"cannot extract a barrier from a {sol.status} solution")
    n, ell = fsbp.n, fsbp.ell
    theta = sol.x[2:2 + ell * (n + 1)].reshape(ell, n + 1)
    B = BarrierPWA(p, theta[:, :n].copy(), theta[:, n].copy(), M)
    gamma, c = float(sol.x[GAMMA]), float(sol.x[C])
    problems = vertex_check(B, gamma, c, p, idx, maps, triples, samples, X0, delta, tol)
    if problems:
        raise BarrierCheckError("; ".join(problems[:5]))
    return B


def _corner_values(u, v, lo, hi):
    """max and min of ``u_k^T x + v_k`` over boxes ``[lo_k, hi_k]``."""
    mx = np.where(u > 0, u * hi, u * lo).sum(axis=1) + v
    mn = np.where(u > 0, u * lo, u * hi).sum(axis=1) + v
    return mx, mn


def vertex_check(B: BarrierPWA, gamma, c, p: Partition, idx=None, maps=None, triples=None, samples=None,
                 X0=None, delta=0.0, tol=VERTEX_TOL) -> list[str]:
    """Evaluate every constraint of the finite program at box vertices.

    The affine forms are maximised exactly over each box, which equals the
    maximum over its vertices. ``tol`` is scaled by ``1 + max |x|`` over the
    domain, since solver residuals in the multiplier equations are
    multiplied by the state coordinates.
    """
    out = []
    tol = tol * (1.0 + float(np.max(np.abs([p.domain.lo, p.domain.hi]))))
    if gamma < -tol or c < -tol:
        out.append(f"negative gamma/c ({gamma}, {c})")
    mx, mn = _corner_values(B.u, B.v, p.lo, p.hi)
    if mn.min() < -tol:
        out.append(f"barrier negative on region {int(mn.argmin())} ({mn.min():.3g})")
    if mx.max() > B.M + tol:
        out.append(f"barrier exceeds M on region {int(mx.argmax())} ({mx.max():.6g})")
    if idx is not None and X0 is not None and idx.initial:
        init = np.array(idx.initial)
        boxes = [intersect_boxes(p.regions[i], X0) for i in init]
        imx, _ = _corner_values(B.u[init], B.v[init], np.array([b.lo for b in boxes]),
                                np.array([b.hi for b in boxes]))
        if imx.max() > gamma + tol:
            out.append(f"initial-set bound violated on region {int(init[imx.argmax()])} by {imx.max() - gamma:.3g}")
    if maps is not None and triples is not None and len(triples):
        samples = np.atleast_2d(samples)
        worst = -np.inf
        for t, A, b in _triple_corner_arrays(maps, triples):
            i, j = triples.i[t], triples.j[t]
            eta = samples[triples.k[t]]
            if j == EXTERIOR:
                g = -B.u[i]
                s = B.v[i] + c - 1.0 - delta
            else:
                g = A.T @ B.u[j] - B.u[i]
                s = B.v[i] - B.v[j] - B.u[j] @ (b + eta) + c - delta
            lhs = np.where(g > 0, g * triples.hi[t], g * triples.lo[t]).sum()
            worst = max(worst, lhs - s)
        if worst > tol:
            out.append(f"one-step constraint violated by {worst:.3g}")
    return out


# ---------------------------------------------------------------------------
# orchestration


def _relax_one(args):
    system, lo, hi = args
    return system.relax(Box(lo, hi))


def relax_all(system, p: Partition, workers: int = 1) -> list[UncertainAffineMap]:
    jobs = [(system, r.lo, r.hi) for r in p.regions]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(_relax_one, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    return [_relax_one(j) for j in jobs]


def fingerprint(payload: dict, samples: np.ndarray) -> str:
    h = hashlib.sha256()
    h.update(json.dumps(payload, sort_keys=True, default=str).encode())
    h.update(np.ascontiguousarray(samples, dtype=float).tobytes())
    return h.hexdigest()


@dataclass
class CertifyResult:
    certificate: Certificate
    barrier: BarrierPWA
    partition: Partition
    maps: list
    triples: TransitionTriples
    samples: np.ndarray  # the constraint samples actually used (hull vertices when pruned)
    blocks: dict
    timing: dict
    solution: LPSolution

    def report(self) -> dict:
        return {
            "certificate": self.certificate.to_dict(),
            "constraint_blocks": dict(self.blocks),
            "timing_seconds": dict(self.timing),
            "barrier": {"u": self.barrier.u.tolist(), "v": self.barrier.v.tolist(),
                        "exterior_value": self.barrier.exterior_value},
        }


def certify(system, Xs: Box, X0: Box, segments, data: NoiseDataset, T: int, epsilon: float = 0.005,
            M: float = 1.0, t: int = DEFAULT_DEPTH, delta: Optional[float] = None, prune: bool = True,
            backend: str = "auto", workers: int = 1, tie_break: bool = True,
            partition: Optional[Partition] = None, config_payload: Optional[dict] = None,
            encoding: str = "radius", robust: str = "auto") -> CertifyResult:
    """Relax, partition, prune, find triples, build, solve and extract.

    ``system`` must provide ``relax(box) -> UncertainAffineMap`` and ``n``.
    The scenario bound uses ``data.n_original`` samples.
    """
    timing = {}
    if T < 1:
        raise ValueError("horizon T must be at least 1")
    if delta is None:
        delta = buffer_delta(M, epsilon)
    elif delta < buffer_delta(M, epsilon) * (1 - 1e-12):
        raise ValueError(f"delta={delta} is below M*eps/(1-eps)={buffer_delta(M, epsilon)}")
    p = partition or grid_partition(Xs, segments)
    idx = classify_indices(p, X0, Xs)
    if data.dim != p.dim:
        raise ValueError(f"noise samples have {data.dim} columns, state has {p.dim}")

    t0 = time.perf_counter()
    maps = relax_all(system, p, workers)
    timing["relaxation"] = time.perf_counter() - t0
    log.debug("relaxation: %.1fs", timing["relaxation"])

    t0 = time.perf_counter()
    pruned = prune_to_hull(data) if prune else data
    timing["pruning"] = time.perf_counter() - t0
    log.debug("pruning: %.1fs", timing["pruning"])

    t0 = time.perf_counter()
    tree = rtree_build(p.regions)
    triples = find_transition_triples(p, maps, pruned.samples, tree, t, sources=idx.safe)
    timing["triples"] = time.perf_counter() - t0
    log.debug("triples: %.1fs", timing["triples"])

    t0 = time.perf_counter()
    fsbp = build_fsbp(p, idx, maps, triples, pruned.samples, X0, T, delta, M, encoding, robust)
    timing["build"] = time.perf_counter() - t0
    log.debug("build: %.1fs, %d triples, %d rows (%s form)", timing["build"], len(triples), fsbp.model.n_rows,
              fsbp.robust)

    t0 = time.perf_counter()
    if tie_break:
        sol = solve_lexicographic(fsbp.model, [{GAMMA: 1.0}], backend)
    else:
        sol = solve(fsbp.model, backend)
    timing["solve"] = time.perf_counter() - t0
    if not sol.optimal:
        raise SynthesisError(f"LP solver returned status {sol.status} "
                             f"({fsbp.model.n_rows} rows, {fsbp.model.n_vars} variables)")

    B = extract_barrier(sol, fsbp, p, idx, maps, triples, pruned.samples, X0, delta, M)
    gamma, c = max(0.0, float(sol.x[GAMMA])), max(0.0, float(sol.x[C]))
    ell, n = len(p), p.dim
    d = barrier_dimension(ell, n)
    N = data.n_original
    zeta = 1.0 - (gamma + c * T)
    payload = dict(config_payload or {})
    payload.update(Xs=[Xs.lo.tolist(), Xs.hi.tolist()], X0=[X0.lo.tolist(), X0.hi.tolist()],
                   segments=list(p.segments), T=T, epsilon=epsilon, M=M, t=t, delta=delta, N=N)
    cert = Certificate(
        gamma=gamma, c=c, T=T, zeta=zeta, zeta_clamped=max(0.0, zeta),
        beta=beta_bound(N, epsilon, d), epsilon=epsilon, delta=delta, M=M, N=N, ell=ell, d=d,
        n_hull=len(pruned), bisection_depth=t,
        solver={"backend": sol.backend, "status": sol.status, "iterations": sol.iterations,
                "rows": fsbp.model.n_rows, "variables": fsbp.model.n_vars,
                "robust_form": fsbp.robust},
        fingerprint=fingerprint(payload, data.samples),
    )
    return CertifyResult(cert, B, p, maps, triples, pruned.samples, fsbp.blocks, timing, sol)
