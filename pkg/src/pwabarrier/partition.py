"""Grid partitions of the safe set and the region index families."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import Box, HalfspaceSystem, boxes_intersect, intersect_boxes, to_halfspaces

EXTERIOR = -1  # pseudo-index of the complement of the gridded domain


@dataclass(frozen=True, eq=False)
class Partition:
    regions: tuple[Box, ...]
    domain: Box
    segments: tuple[int, ...]
    edges: tuple[np.ndarray, ...]
    has_exterior: bool = True

    def __len__(self) -> int:
        return len(self.regions)

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def lo(self) -> np.ndarray:
        return np.array([r.lo for r in self.regions])

    @property
    def hi(self) -> np.ndarray:
        return np.array([r.hi for r in self.regions])

    def locate(self, x) -> np.ndarray:
        """Owning cell of each point, or ``EXTERIOR`` outside the domain.

        Cells are half-open ``[e_k, e_{k+1})`` except the last one per axis,
        so every point of the domain has exactly one owner.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        inside = self.domain.contains(x)
        flat = np.zeros(x.shape[0], dtype=int)
        for axis, (edges, seg) in enumerate(zip(self.edges, self.segments)):
            k = np.searchsorted(edges, x[:, axis], side="right") - 1
            k = np.clip(k, 0, seg - 1)
            flat = flat * seg + k
        return np.where(inside, flat, EXTERIOR)


def grid_partition(domain: Box, segments: Sequence[int]) -> Partition:
    """Uniform grid with cells in row-major order (last axis fastest)."""
    segments = tuple(int(s) for s in np.atleast_1d(segments))
    if len(segments) != domain.dim:
        raise ValueError(f"need {domain.dim} segment counts, got {len(segments)}")
    if any(s < 1 for s in segments):
        raise ValueError(f"segment counts must be positive, got {segments}")
    edges = []
    for lo, hi, s in zip(domain.lo, domain.hi, segments):
        e = lo + np.arange(s + 1) * ((hi - lo) / s)
        e[-1] = hi
        edges.append(e)
    regions = []
    for multi in np.ndindex(*segments):
        lo = [edges[a][k] for a, k in enumerate(multi)]
        hi = [edges[a][k + 1] for a, k in enumerate(multi)]
        regions.append(Box(lo, hi))
    return Partition(tuple(regions), domain, segments, tuple(edges))


@dataclass(frozen=True)
class IndexSets:
    all: tuple[int, ...]
    initial: tuple[int, ...]
    safe: tuple[int, ...]
    unsafe: tuple[int, ...] = (EXTERIOR,)


def classify_indices(p: Partition, X0: Box, Xs: Box) -> IndexSets:
    if not p.domain.contains_box(X0):
        raise ValueError(f"initial set {X0} is not contained in the partition domain {p.domain}")
    if not Xs.contains_box(X0):
        raise ValueError(f"initial set {X0} is not contained in the safe set {Xs}")
    every = tuple(range(len(p)))
    initial = tuple(i for i in every if boxes_intersect(p.regions[i], X0))
    safe = tuple(i for i in every if boxes_intersect(p.regions[i], Xs))
    return IndexSets(every, initial, safe)


def initial_intersection(r: Box, X0: Box) -> HalfspaceSystem:
    inter = intersect_boxes(r, X0)
    if inter is None:
        raise ValueError(f"region {r} does not meet the initial set {X0}")
    return to_halfspaces(inter)
