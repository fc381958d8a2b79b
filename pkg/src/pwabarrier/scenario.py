"""Noise datasets and scenario-approach arithmetic."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import gammaln, logsumexp

from .geometry import convex_hull_vertices

DEFAULT_EPSILON = 0.005
DEFAULT_M = 1.0


class SampleFileError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class NoiseDataset:
    """``N x n`` noise realisations, one per row.

    ``n_original`` is the sample count the scenario bound refers to; it
    survives hull pruning.
    """

    samples: np.ndarray
    source: str = "unknown"
    n_original: int = 0

    def __post_init__(self):
        s = np.array(self.samples, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        if s.shape[0] < 1:
            raise ValueError("a noise dataset needs at least one sample")
        if not np.all(np.isfinite(s)):
            raise ValueError("noise samples must be finite")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)
        if self.n_original == 0:
            object.__setattr__(self, "n_original", s.shape[0])

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    def head(self, N: int) -> "NoiseDataset":
        if N > len(self):
            raise ValueError(f"requested {N} samples, dataset has {len(self)}")
        return NoiseDataset(self.samples[:N], self.source, N)


def prune_to_hull(D: NoiseDataset) -> NoiseDataset:
    """Keep only the samples at vertices of the hull of all samples."""
    idx = convex_hull_vertices(D.samples)
    return NoiseDataset(D.samples[idx], D.source, D.n_original)


def beta_bound(N: int, epsilon: float, d: int) -> float:
    """``sum_{i<d} C(N, i) eps^i (1-eps)^(N-i)`` evaluated in log space."""
    if N < 1 or d < 1 or not 0 < epsilon < 1:
        raise ValueError("need N >= 1, d >= 1 and 0 < epsilon < 1")
    if d - 1 >= N:
        return 1.0
    le, l1e = math.log(epsilon), math.log1p(-epsilon)

    def log_terms(i):
        return gammaln(N + 1) - gammaln(i + 1) - gammaln(N - i + 1) + i * le + (N - i) * l1e

    if d - 1 <= N * epsilon:
        value = math.exp(logsumexp(log_terms(np.arange(d))))
    else:
        # body of the distribution is inside the sum: subtract the upper tail
        value = -math.expm1(logsumexp(log_terms(np.arange(d, N + 1))))
    return min(1.0, max(0.0, value))


def required_samples(epsilon: float, beta: float, d: int) -> int:
    """Smallest N with ``beta_bound(N, epsilon, d) <= beta``."""
    if not 0 < beta < 1:
        raise ValueError("beta must lie in (0, 1)")
    lo = max(1, d - 1)
    hi = max(1, d)
    while beta_bound(hi, epsilon, d) > beta:
        lo = hi
        hi *= 2
    while lo < hi:
        mid = (lo + hi) // 2
        if beta_bound(mid, epsilon, d) <= beta:
            hi = mid
        else:
            lo = mid + 1
    return hi


def buffer_delta(M: float, epsilon: float) -> float:
    if M < 1 or not 0 < epsilon < 1:
        raise ValueError("need M >= 1 and 0 < epsilon < 1")
    return M * epsilon / (1 - epsilon)


def barrier_dimension(n_regions: int, n: int) -> int:
    return 2 + n_regions * (n + 1)


@dataclass(frozen=True)
class ScenarioParams:
    epsilon: float
    M: float
    delta: float
    d: int
    N: int
    beta: float

    def __post_init__(self):
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.M < 1:
            raise ValueError("M must be at least 1")
        if self.delta < buffer_delta(self.M, self.epsilon) * (1 - 1e-12):
            raise ValueError(f"delta={self.delta} is below M*eps/(1-eps)")

    @classmethod
    def build(cls, epsilon: float, M: float, d: int, N: int, delta: float | None = None):
        delta = buffer_delta(M, epsilon) if delta is None else delta
        return cls(epsilon, M, delta, d, N, beta_bound(N, epsilon, d))


# ---------------------------------------------------------------------------
# sample files


def read_samples(path) -> NoiseDataset:
    """CSV, one realisation per row; ``#`` lines are comments."""
    rows, width = [], None
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        text = raw.strip()
        if not text or text.startswith("#"):
            continue
        try:
            vals = [float(v) for v in text.split(",")]
        except ValueError:
            raise SampleFileError(f"{path}:{lineno}: non-numeric entry in {text!r}") from None
        if width is None:
            width = len(vals)
        elif len(vals) != width:
            raise SampleFileError(f"{path}:{lineno}: expected {width} columns, got {len(vals)}")
        rows.append(vals)
    if not rows:
        raise SampleFileError(f"{path}: no samples")
    arr = np.array(rows)
    if not np.all(np.isfinite(arr)):
        raise SampleFileError(f"{path}: non-finite sample values")
    return NoiseDataset(arr, source=str(path))


def write_samples(samples: np.ndarray, path, comment: str | None = None) -> None:
    samples = np.atleast_2d(samples)
    with open(path, "w") as fh:
        if comment:
            for line in comment.splitlines():
                fh.write(f"# {line}\n")
        np.savetxt(fh, samples, delimiter=",", fmt="%.17g")
