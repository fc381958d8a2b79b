"""Monte Carlo checks of certificates: empirical safety and one-step barrier decrease."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .geometry import Box

WILSON_Z99 = 2.5758293035489  # two-sided 99% normal quantile
START_POINTS_PER_AXIS = 5


def wilson_interval(successes: int, trials: int, z: float = WILSON_Z99) -> tuple[float, float]:
    if trials < 1:
        raise ValueError("trials must be positive")
    p = successes / trials
    denom = 1 + z * z / trials
    centre = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


def start_grid(X0: Box, per_axis: int = START_POINTS_PER_AXIS) -> np.ndarray:
    axes = [np.linspace(lo, hi, per_axis) if hi > lo else np.array([lo]) for lo, hi in zip(X0.lo, X0.hi)]
    return np.array(list(itertools.product(*axes)))


@dataclass
class SafetyEstimate:
    probability: float  # worst start
    interval: tuple
    trials: int
    horizon: int
    seed: int
    worst_start: np.ndarray
    per_start: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {"probability": self.probability, "wilson99": list(self.interval), "trials": self.trials,
                "horizon": self.horizon, "seed": self.seed, "worst_start": self.worst_start.tolist(),
                "starts": int(self.per_start.size)}


def bootstrap_sampler(samples: np.ndarray) -> Callable:
    samples = np.atleast_2d(samples)

    def draw(rng, m):
        return samples[rng.integers(0, samples.shape[0], size=m)]

    return draw


def simulate_safety(system, Xs: Box, X0: Box, T: int, trials: int, seed: int = 0,
                    noise: Optional[Callable] = None, per_axis: int = START_POINTS_PER_AXIS,
                    chunk: int = 50_000) -> SafetyEstimate:
    """Fraction of trajectories with ``x(k)`` in ``Xs`` for ``k = 1..T``.

    Every start of a ``per_axis``-point grid over ``X0`` gets ``trials``
    trajectories; the smallest fraction is reported. ``noise(rng, m)``
    defaults to the system's own sampler. Each start owns an independent
    RNG stream derived from ``seed``, so results do not depend on ``chunk``.
    """
    if trials < 1:
        raise ValueError("trials must be positive")
    if T < 1:
        raise ValueError("horizon must be positive")
    draw = noise or system.sample_noise
    starts = start_grid(X0, per_axis)
    streams = np.random.SeedSequence(seed).spawn(len(starts))
    safe_counts = np.zeros(len(starts), dtype=np.int64)
    for s, (x0, ss) in enumerate(zip(starts, streams)):
        rng = np.random.Generator(np.random.Philox(ss))
        done = 0
        while done < trials:
            m = min(chunk, trials - done)
            x = np.repeat(x0[None], m, axis=0)
            alive = np.ones(m, dtype=bool)
            for _ in range(T):
                x = system.step(x, draw(rng, m), rng)
                alive &= Xs.contains(x)
            safe_counts[s] += int(alive.sum())
            done += m
    frac = safe_counts / trials
    w = int(np.argmin(frac))
    return SafetyEstimate(float(frac[w]), wilson_interval(int(safe_counts[w]), trials), trials, T, seed,
                          starts[w], frac)


def _region_points(p, per_region: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Vertices plus uniform interior points of every cell, with owning cell ids."""
    pts, owner = [], []
    for i, r in enumerate(p.regions):
        x = np.vstack([r.vertices(), r.sample(rng, per_region)])
        pts.append(x)
        owner.append(np.full(x.shape[0], i))
    return np.vstack(pts), np.concatenate(owner)


def check_onestep_empirical(B, maps, heldout: np.ndarray, delta: float, c: float, per_region: int = 20,
                            seed: int = 0, tol: float = 1e-7, chunk: int = 256) -> float:
    """Fraction of held-out noise rows that break ``B(y) + delta <= B(x) + c``.

    ``x`` ranges over cell vertices and random cell points, ``y`` over the
    images of ``x`` under every corner of the cell's uncertain map. A row
    counts once however many ``(x, alpha)`` pairs it breaks.
    """
    heldout = np.atleast_2d(heldout)
    rng = np.random.default_rng(seed)
    p = B.partition
    x, owner = _region_points(p, per_region, rng)
    # the source value uses the owning piece; a shared vertex may belong to a neighbour in B(x)
    bx = np.einsum("ij,ij->i", B.u[owner], x) + B.v[owner]
    images, base = [], []
    for i in range(len(p)):
        sel = owner == i
        for A, b in maps[i].corners():
            images.append(x[sel] @ A.T + b)
            base.append(bx[sel])
    images = np.vstack(images)
    base = np.concatenate(base) + c - delta + tol
    bad = np.zeros(heldout.shape[0], dtype=bool)
    for s in range(0, heldout.shape[0], chunk):
        eta = heldout[s:s + chunk]
        y = images[None, :, :] + eta[:, None, :]
        vals = B(y.reshape(-1, p.dim)).reshape(eta.shape[0], -1)
        bad[s:s + chunk] = np.any(vals > base[None, :], axis=1)
    return float(bad.mean())

