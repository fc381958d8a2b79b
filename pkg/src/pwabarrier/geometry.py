"""Boxes, half-space systems, exact convex hulls and a bulk-loaded R-tree."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

COORD_TOL = 1e-12


class DimensionError(ValueError):
    pass


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float).reshape(-1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Box:
    """Closed axis-aligned hyperrectangle ``{x : lo <= x <= hi}``."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo, hi = _frozen(self.lo), _frozen(self.hi)
        if lo.shape != hi.shape:
            raise DimensionError(f"lo has {lo.size} entries, hi has {hi.size}")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("box bounds must be finite")
        if np.any(lo > hi):
            raise ValueError(f"box with lo > hi: {lo} > {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return self.lo.size

    @property
    def width(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    def contains(self, x, tol: float = 0.0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lo - tol) & (x <= self.hi + tol), axis=-1)

    def contains_box(self, other: "Box", tol: float = COORD_TOL) -> bool:
        return bool(np.all(other.lo >= self.lo - tol) and np.all(other.hi <= self.hi + tol))

    def vertices(self) -> np.ndarray:
        n = self.dim
        bits = (np.arange(2**n)[:, None] >> np.arange(n)[None, :]) & 1
        return np.where(bits == 1, self.hi, self.lo)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.uniform(self.lo, self.hi, size=(size, self.dim))

    def __eq__(self, other):
        if not isinstance(other, Box):
            return NotImplemented
        return np.array_equal(self.lo, other.lo) and np.array_equal(self.hi, other.hi)

    def __hash__(self):
        return hash((self.lo.tobytes(), self.hi.tobytes()))

    def __repr__(self):
        return f"Box(lo={self.lo.tolist()}, hi={self.hi.tolist()})"


@dataclass(frozen=True, eq=False)
class HalfspaceSystem:
    """Polyhedron ``{x : H x <= h}``."""

    H: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        H = np.array(self.H, dtype=float)
        h = _frozen(self.h)
        if H.ndim != 2 or H.shape[0] != h.size:
            raise DimensionError(f"H has shape {H.shape}, h has {h.size} entries")
        H.setflags(write=False)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "h", h)

    @property
    def dim(self) -> int:
        return self.H.shape[1]

    def contains(self, x, tol: float = 0.0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.all(x @ self.H.T <= self.h + tol, axis=-1)


def to_halfspaces(b: Box) -> HalfspaceSystem:
    """Rows ordered ``+e_1, -e_1, ..., +e_n, -e_n``."""
    n = b.dim
    H = np.zeros((2 * n, n))
    H[0::2, :] = np.eye(n)
    H[1::2, :] = -np.eye(n)
    h = np.empty(2 * n)
    h[0::2] = b.hi
    h[1::2] = -b.lo
    return HalfspaceSystem(H, h)


def _check_dims(a: Box, b: Box):
    if a.dim != b.dim:
        raise DimensionError(f"dimension mismatch: {a.dim} vs {b.dim}")


def boxes_intersect(a: Box, b: Box) -> bool:
    """Closed intersection test; touching boxes intersect."""
    _check_dims(a, b)
    return bool(np.all(a.lo <= b.hi + COORD_TOL) and np.all(b.lo <= a.hi + COORD_TOL))


def intersect_boxes(a: Box, b: Box) -> Optional[Box]:
    """Return ``a ∩ b`` or ``None`` when empty."""
    _check_dims(a, b)
    lo = np.maximum(a.lo, b.lo)
    hi = np.minimum(a.hi, b.hi)
    if np.any(lo > hi + COORD_TOL):
        return None
    return Box(lo, np.maximum(lo, hi))


# ---------------------------------------------------------------------------
# convex hull


def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _hull_2d(pts: np.ndarray) -> np.ndarray:
    # Andrew's monotone chain; collinear boundary points are dropped.
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    scale = max(1.0, float(np.abs(pts).max()))
    tol = 1e-12 * scale * scale

    def chain(idx):
        out = []
        for p in idx:
            while len(out) >= 2 and _cross(pts[out[-2]], pts[out[-1]], pts[p]) <= tol:
                out.pop()
            out.append(p)
        return out

    lower = chain(order)
    upper = chain(order[::-1])
    return np.array(lower[:-1] + upper[:-1], dtype=int)


def _in_hull_lp(p: np.ndarray, others: np.ndarray) -> bool:
    from scipy.optimize import linprog

    m = others.shape[0]
    A_eq = np.vstack([others.T, np.ones((1, m))])
    b_eq = np.concatenate([p, [1.0]])
    res = linprog(np.zeros(m), A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    return res.status == 0


def convex_hull_vertices(points) -> np.ndarray:
    """Indices of the points that are vertices of their convex hull.

    Coincident points collapse onto their lowest index. Degenerate inputs
    (points spanning a lower-dimensional affine subspace) are handled by
    projecting onto that subspace first. Returned indices are sorted.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.shape[0] == 0:
        raise ValueError("need at least one point")
    uniq, first = np.unique(pts, axis=0, return_index=True)
    if uniq.shape[0] == 1:
        return np.array([first[0]])

    centered = uniq - uniq.mean(axis=0)
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    scale = max(1.0, float(np.abs(uniq).max()))
    rank = int(np.sum(s > 1e-10 * scale * np.sqrt(uniq.shape[0])))
    proj = centered @ vt[:rank].T

    if rank == 1:
        local = np.array([np.argmin(proj[:, 0]), np.argmax(proj[:, 0])])
    elif rank == 2:
        local = _hull_2d(proj)
    else:
        from scipy.spatial import ConvexHull

        candidates = np.unique(ConvexHull(proj).vertices)
        # qhull may keep near-coplanar points; confirm each with an LP
        keep = [
            c for c in candidates
            if not _in_hull_lp(proj[c], proj[candidates[candidates != c]])
        ]
        local = np.array(keep, dtype=int)
    return np.sort(first[np.unique(local)])


# ---------------------------------------------------------------------------
# R-tree


class RTree:
    """Static R-tree bulk loaded with sort-tile-recursive packing.

    Leaves hold region indices; each internal node stores the minimum
    bounding rectangle of every child.
    """

    def __init__(self, lo: np.ndarray, hi: np.ndarray, capacity: int = 16):
        self.dim = lo.shape[1]
        self.capacity = capacity
        self._item_lo = lo
        self._item_hi = hi
        # each level: list of nodes; node = (child_ids, child_lo, child_hi)
        ids = np.arange(lo.shape[0])
        level = self._pack(ids, lo, hi, leaf=True)
        self.levels = [level]
        while len(level) > 1:
            node_lo = np.array([nd[1].min(axis=0) for nd in level])
            node_hi = np.array([nd[2].max(axis=0) for nd in level])
            level = self._pack(np.arange(len(level)), node_lo, node_hi, leaf=False)
            self.levels.append(level)
        self.root = level[0]

    def _pack(self, ids, lo, hi, leaf):
        n_items = len(ids)
        n_nodes = int(np.ceil(n_items / self.capacity))
        centers = 0.5 * (lo + hi)
        groups = self._str_groups(np.arange(n_items), centers, 0, n_nodes)
        return [(ids[g], lo[g], hi[g], leaf) for g in groups]

    def _str_groups(self, idx, centers, axis, n_nodes):
        if axis == self.dim - 1 or n_nodes <= 1:
            order = idx[np.argsort(centers[idx, axis], kind="stable")]
            return [order[k:k + self.capacity] for k in range(0, len(order), self.capacity)]
        remaining = self.dim - axis
        slabs = int(np.ceil(n_nodes ** (1.0 / remaining)))
        order = idx[np.argsort(centers[idx, axis], kind="stable")]
        per_slab = int(np.ceil(len(order) / slabs))
        groups = []
        for k in range(0, len(order), per_slab):
            part = order[k:k + per_slab]
            groups.extend(self._str_groups(part, centers, axis + 1,
                                           int(np.ceil(len(part) / self.capacity))))
        return groups

    def query(self, q: Box) -> list[int]:
        if q.dim != self.dim:
            raise DimensionError(f"query has dimension {q.dim}, tree has {self.dim}")
        qlo = q.lo - COORD_TOL
        qhi = q.hi + COORD_TOL
        out = []
        stack = [(len(self.levels) - 1, self.root)]
        while stack:
            depth, (child_ids, clo, chi, leaf) = stack.pop()
            hit = np.all((clo <= qhi) & (chi >= qlo), axis=1)
            if leaf:
                out.extend(child_ids[hit].tolist())
            else:
                below = self.levels[depth - 1]
                stack.extend((depth - 1, below[c]) for c in child_ids[hit])
        return out

    def check_invariants(self) -> bool:
        """Every node MBR contains its children; every index reachable once."""
        seen = []
        stack = [(len(self.levels) - 1, self.root, None)]
        while stack:
            depth, (child_ids, clo, chi, leaf), parent = stack.pop()
            if parent is not None:
                plo, phi = parent
                if np.any(clo < plo) or np.any(chi > phi):
                    return False
            if leaf:
                seen.extend(child_ids.tolist())
            else:
                below = self.levels[depth - 1]
                for k, c in enumerate(child_ids):
                    stack.append((depth - 1, below[c], (clo[k], chi[k])))
        return sorted(seen) == list(range(self._item_lo.shape[0]))


def rtree_build(boxes: Sequence[Box], capacity: int = 16) -> RTree:
    if len(boxes) == 0:
        raise ValueError("cannot build an R-tree over zero boxes")
    dims = {b.dim for b in boxes}
    if len(dims) != 1:
        raise DimensionError(f"boxes have mixed dimensions {sorted(dims)}")
    lo = np.array([b.lo for b in boxes])
    hi = np.array([b.hi for b in boxes])
    return RTree(lo, hi, capacity)


def rtree_query(t: RTree, q: Box) -> list[int]:
    return t.query(q)
