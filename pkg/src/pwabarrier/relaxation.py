"""Uncertain affine relaxations of nominal dynamics.

Dynamics are described by a small computation graph. For every region a
backward linear bound pass produces matrices ``A_lo, A_hi`` and vectors
``b_lo, b_hi`` with ``A_lo x + b_lo <= f(x) <= A_hi x + b_hi`` on the region.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .geometry import Box

ELEMENTWISE_KINDS = ("sin", "cos", "cube", "square", "relu", "tanh", "identity")


class RelaxationError(ValueError):
    pass


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise ValueError(f"invalid interval [{self.lo}, {self.hi}]")


# ---------------------------------------------------------------------------
# scalar function tables

_FUNCS = {
    "sin": np.sin,
    "cos": np.cos,
    "cube": lambda t: t**3,
    "square": lambda t: t**2,
    "tanh": np.tanh,
    "relu": lambda t: np.maximum(t, 0.0),
    "identity": lambda t: t,
}

_DERIVS = {
    "sin": np.cos,
    "cos": lambda t: -np.sin(t),
    "cube": lambda t: 3 * t**2,
    "square": lambda t: 2 * t,
    "tanh": lambda t: 1 - np.tanh(t) ** 2,
}


def _curvature(kind: str, lo: float, hi: float) -> int:
    """+1 convex on [lo, hi], -1 concave, 0 mixed."""
    if kind == "square":
        return 1
    if kind == "cube":
        if lo >= 0:
            return 1
        return -1 if hi <= 0 else 0
    if kind == "tanh":
        if hi <= 0:
            return 1
        return -1 if lo >= 0 else 0
    if kind in ("sin", "cos"):
        # sin'' = -sin, zero at k*pi; cos'' = -cos, zero at pi/2 + k*pi
        shift = 0.0 if kind == "sin" else math.pi / 2
        k_lo = math.floor((lo - shift) / math.pi)
        k_hi = math.ceil((hi - shift) / math.pi)
        if k_hi - k_lo > 1:
            return 0
        mid = 0.5 * (lo + hi)
        value = math.sin(mid) if kind == "sin" else math.cos(mid)
        return -1 if value > 0 else 1
    raise RelaxationError(f"unsupported elementwise kind {kind!r}")


def _critical_points(kind: str, s: float, lo: float, hi: float) -> list[float]:
    """Points in (lo, hi) where the derivative equals ``s``."""
    pts: list[float] = []
    if kind == "cube" and s >= 0:
        r = math.sqrt(s / 3)
        pts = [-r, r]
    elif kind == "square":
        pts = [s / 2]
    elif kind == "tanh" and 0 < s <= 1:
        r = math.sqrt(1 - s)
        if r < 1:
            a = math.atanh(r)
            pts = [-a, a]
    elif kind in ("sin", "cos") and abs(s) <= 1:
        if kind == "sin":
            base = [math.acos(s), -math.acos(s)]
        else:
            a = math.asin(-s)
            base = [a, math.pi - a]
        k0 = math.floor(lo / (2 * math.pi)) - 1
        k1 = math.ceil(hi / (2 * math.pi)) + 1
        pts = [b + 2 * math.pi * k for b in base for k in range(k0, k1 + 1)]
    return [p for p in pts if lo < p < hi]


def relax_elementwise(kind: str, iv: Interval) -> tuple[float, float, float, float]:
    """Linear bounds ``slope_lo*t + icpt_lo <= g(t) <= slope_hi*t + icpt_hi`` on ``iv``.

    Convex pieces take the chord above and the midpoint tangent below
    (mirrored when concave). Mixed-curvature intervals use the chord slope for
    both lines and shift each intercept to the exact extremum of
    ``g(t) - slope*t`` over the curvature pieces.
    """
    if kind not in ELEMENTWISE_KINDS:
        raise RelaxationError(f"unsupported elementwise kind {kind!r}")
    lo, hi = float(iv.lo), float(iv.hi)
    g = _FUNCS[kind]
    if kind == "identity":
        return 1.0, 0.0, 1.0, 0.0
    if hi - lo <= 1e-15 * max(1.0, abs(lo)):
        val = float(g(lo))
        return 0.0, val, 0.0, val
    if kind == "relu":
        if lo >= 0:
            return 1.0, 0.0, 1.0, 0.0
        if hi <= 0:
            return 0.0, 0.0, 0.0, 0.0
        s = hi / (hi - lo)
        lower_slope = 0.0 if abs(lo) >= abs(hi) else 1.0
        return lower_slope, 0.0, s, -s * lo

    g_lo, g_hi = float(g(lo)), float(g(hi))
    chord = (g_hi - g_lo) / (hi - lo)
    chord_icpt = g_lo - chord * lo
    curv = _curvature(kind, lo, hi)
    if curv != 0:
        mid = 0.5 * (lo + hi)
        tan = float(_DERIVS[kind](mid))
        tan_icpt = float(g(mid)) - tan * mid
        if curv > 0:
            return tan, tan_icpt, chord, chord_icpt
        return chord, chord_icpt, tan, tan_icpt

    cands = [lo, hi] + _critical_points(kind, chord, lo, hi)
    offsets = [float(g(t)) - chord * t for t in cands]
    return chord, min(offsets), chord, max(offsets)


def interval_range(kind: str, lo: np.ndarray, hi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exact range of an elementwise function over each interval."""
    if kind in ("identity", "cube", "tanh", "relu"):
        g = _FUNCS[kind]
        return g(lo), g(hi)
    if kind == "square":
        a, b = lo**2, hi**2
        out_hi = np.maximum(a, b)
        out_lo = np.where((lo <= 0) & (hi >= 0), 0.0, np.minimum(a, b))
        return out_lo, out_hi
    if kind in ("sin", "cos"):
        g = _FUNCS[kind]
        a, b = g(lo), g(hi)
        out_lo, out_hi = np.minimum(a, b), np.maximum(a, b)
        # maxima of sin at pi/2 + 2k pi, minima at -pi/2 + 2k pi (cos: shift by pi/2)
        peak = math.pi / 2 if kind == "sin" else 0.0
        trough = peak + math.pi
        has_max = np.floor((hi - peak) / (2 * math.pi)) >= np.ceil((lo - peak) / (2 * math.pi))
        has_min = np.floor((hi - trough) / (2 * math.pi)) >= np.ceil((lo - trough) / (2 * math.pi))
        return np.where(has_min, -1.0, out_lo), np.where(has_max, 1.0, out_hi)
    raise RelaxationError(f"unsupported elementwise kind {kind!r}")


# ---------------------------------------------------------------------------
# computation graph


@dataclass
class _Node:
    kind: str  # input | affine | elementwise | sum
    inputs: tuple[int, ...]
    dim: int
    W: Optional[np.ndarray] = None
    w: Optional[np.ndarray] = None
    fn: Optional[str] = None


class ComputationGraph:
    """Acyclic graph of affine, elementwise and sum nodes over one input.

    Nodes are appended in topological order; ``set_output`` fixes the result
    node, which must have the input's dimension.
    """

    def __init__(self, n: int):
        self.n = n
        self.nodes: list[_Node] = [_Node("input", (), n)]
        self.output: Optional[int] = None

    @property
    def input(self) -> int:
        return 0

    def _check(self, i: int) -> _Node:
        if not 0 <= i < len(self.nodes):
            raise ValueError(f"unknown node {i}")
        return self.nodes[i]

    def affine(self, src: int, W, w=None) -> int:
        node = self._check(src)
        W = np.atleast_2d(np.asarray(W, dtype=float))
        if W.shape[1] != node.dim:
            raise ValueError(f"affine weight has {W.shape[1]} columns, node {src} has dim {node.dim}")
        w = np.zeros(W.shape[0]) if w is None else np.asarray(w, dtype=float).reshape(-1)
        if w.size != W.shape[0]:
            raise ValueError("affine bias length does not match weight rows")
        self.nodes.append(_Node("affine", (src,), W.shape[0], W, w))
        return len(self.nodes) - 1

    def elementwise(self, fn: str, src: int) -> int:
        if fn not in ELEMENTWISE_KINDS:
            raise RelaxationError(f"unsupported elementwise kind {fn!r}")
        node = self._check(src)
        self.nodes.append(_Node("elementwise", (src,), node.dim, fn=fn))
        return len(self.nodes) - 1

    def add(self, *srcs: int) -> int:
        dims = {self._check(s).dim for s in srcs}
        if len(dims) != 1:
            raise ValueError(f"sum operands have mismatched dims {sorted(dims)}")
        self.nodes.append(_Node("sum", tuple(srcs), dims.pop()))
        return len(self.nodes) - 1

    def set_output(self, node: int) -> "ComputationGraph":
        if self._check(node).dim != self.n:
            raise ValueError("output dimension must equal input dimension")
        self.output = node
        return self

    def _out(self) -> int:
        if self.output is None:
            raise ValueError("graph output not set")
        return self.output

    def evaluate(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = np.atleast_2d(x)
        vals: list[np.ndarray] = []
        for node in self.nodes:
            if node.kind == "input":
                v = X
            elif node.kind == "affine":
                v = vals[node.inputs[0]] @ node.W.T + node.w
            elif node.kind == "elementwise":
                v = _FUNCS[node.fn](vals[node.inputs[0]])
            else:
                v = sum(vals[i] for i in node.inputs)
            vals.append(v)
        out = vals[self._out()]
        return out[0] if single else out

    def interval_pass(self, r: Box) -> list[tuple[np.ndarray, np.ndarray]]:
        """Natural interval extension of every node over ``r``."""
        bounds: list[tuple[np.ndarray, np.ndarray]] = []
        for idx, node in enumerate(self.nodes):
            if node.kind == "input":
                lo, hi = r.lo.copy(), r.hi.copy()
            elif node.kind == "affine":
                plo, phi = bounds[node.inputs[0]]
                Wp, Wn = np.maximum(node.W, 0), np.minimum(node.W, 0)
                lo = Wp @ plo + Wn @ phi + node.w
                hi = Wp @ phi + Wn @ plo + node.w
            elif node.kind == "elementwise":
                lo, hi = interval_range(node.fn, *bounds[node.inputs[0]])
            else:
                lo = sum(bounds[i][0] for i in node.inputs)
                hi = sum(bounds[i][1] for i in node.inputs)
            if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
                raise RelaxationError(f"node {idx} ({node.kind}) has a non-finite range")
            bounds.append((lo, hi))
        return bounds


# ---------------------------------------------------------------------------
# uncertain affine maps


@dataclass(frozen=True, eq=False)
class UncertainAffineMap:
    """Affine envelope of the dynamics over ``region``.

    ``coupled=True`` means one scalar alpha drives every row, i.e. the set of
    successors is the segment ``A(alpha) x + b(alpha)`` for alpha in [0, 1].
    ``coupled=False`` means each output row varies independently between its
    lower and upper affine bound (what a per-row relaxation certifies).
    """

    A_lo: np.ndarray
    A_hi: np.ndarray
    b_lo: np.ndarray
    b_hi: np.ndarray
    region: Box
    coupled: bool = True

    def __post_init__(self):
        for name in ("A_lo", "A_hi", "b_lo", "b_hi"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        n = self.region.dim
        if self.A_lo.shape != (n, n) or self.A_hi.shape != (n, n):
            raise ValueError(f"matrices must be {n}x{n}")
        if self.b_lo.shape != (n,) or self.b_hi.shape != (n,):
            raise ValueError(f"vectors must have length {n}")

    @property
    def n(self) -> int:
        return self.region.dim

    @property
    def exact(self) -> bool:
        return np.array_equal(self.A_lo, self.A_hi) and np.array_equal(self.b_lo, self.b_hi)

    def A(self, alpha: float) -> np.ndarray:
        return alpha * self.A_lo + (1 - alpha) * self.A_hi

    def b(self, alpha: float) -> np.ndarray:
        return alpha * self.b_lo + (1 - alpha) * self.b_hi

    def apply(self, x, alpha) -> np.ndarray:
        """Successor for states ``x`` (m, n) and alphas (m,) or (m, n).

        A per-row alpha array is only meaningful for uncoupled maps.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        alpha = np.asarray(alpha, dtype=float)
        lo = x @ self.A_lo.T + self.b_lo
        hi = x @ self.A_hi.T + self.b_hi
        if alpha.ndim <= 1:
            alpha = np.broadcast_to(alpha.reshape(-1, 1), lo.shape)
        return alpha * lo + (1 - alpha) * hi

    def corners(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Affine maps whose constraints imply the constraint for every successor.

        Coupled maps need the two alpha endpoints; uncoupled maps need every
        lower/upper row selection over the rows that are not exact.
        """
        if self.exact:
            return [(self.A_lo, self.b_lo)]
        if self.coupled or self.n == 1:
            return [(self.A_lo, self.b_lo), (self.A_hi, self.b_hi)]
        loose = [k for k in range(self.n)
                 if not (np.array_equal(self.A_lo[k], self.A_hi[k]) and self.b_lo[k] == self.b_hi[k])]
        out = []
        for mask in range(2 ** len(loose)):
            A = self.A_lo.copy()
            b = self.b_lo.copy()
            for bit, k in enumerate(loose):
                if (mask >> bit) & 1:
                    A[k] = self.A_hi[k]
                    b[k] = self.b_hi[k]
            out.append((A, b))
        return out


def affine_map(A_lo, A_hi, b_lo, b_hi, region: Box, coupled: bool = True) -> UncertainAffineMap:
    return UncertainAffineMap(np.atleast_2d(A_lo), np.atleast_2d(A_hi),
                              np.atleast_1d(b_lo), np.atleast_1d(b_hi), region, coupled)


def relax_region(g: ComputationGraph, r: Box) -> UncertainAffineMap:
    """Backward linear bound propagation of ``g`` over box ``r``."""
    if r.dim != g.n:
        raise ValueError(f"region has dimension {r.dim}, graph expects {g.n}")
    out = g._out()
    bounds = g.interval_pass(r)
    n = g.n
    upper: dict[int, np.ndarray] = {out: np.eye(n)}
    lower: dict[int, np.ndarray] = {out: np.eye(n)}
    bias_u = np.zeros(n)
    bias_l = np.zeros(n)

    for idx in range(len(g.nodes) - 1, 0, -1):
        if idx not in upper:
            continue
        node = g.nodes[idx]
        LU, LL = upper.pop(idx), lower.pop(idx)
        if node.kind == "affine":
            bias_u += LU @ node.w
            bias_l += LL @ node.w
            pu, pl = LU @ node.W, LL @ node.W
            targets = [(node.inputs[0], pu, pl)]
        elif node.kind == "elementwise":
            lo, hi = bounds[node.inputs[0]]
            rel = np.array([relax_elementwise(node.fn, Interval(a, b)) for a, b in zip(lo, hi)])
            s_lo, c_lo, s_hi, c_hi = rel.T
            Up, Un = np.maximum(LU, 0), np.minimum(LU, 0)
            Lp, Ln = np.maximum(LL, 0), np.minimum(LL, 0)
            bias_u += Up @ c_hi + Un @ c_lo
            bias_l += Lp @ c_lo + Ln @ c_hi
            pu = Up * s_hi + Un * s_lo
            pl = Lp * s_lo + Ln * s_hi
            targets = [(node.inputs[0], pu, pl)]
        else:
            targets = [(i, LU, LL) for i in node.inputs]
        for src, pu, pl in targets:
            if src in upper:
                upper[src] = upper[src] + pu
                lower[src] = lower[src] + pl
            else:
                upper[src], lower[src] = pu, pl

    A_hi = upper.get(0, np.zeros((n, n)))
    A_lo = lower.get(0, np.zeros((n, n)))
    if not all(np.all(np.isfinite(a)) for a in (A_lo, A_hi, bias_l, bias_u)):
        raise RelaxationError("relaxation produced non-finite coefficients")
    return UncertainAffineMap(A_lo, A_hi, bias_l, bias_u, r, coupled=(n == 1))


def image_box(m: UncertainAffineMap, r: Box, eta) -> Box:
    """Interval enclosure of ``{A(alpha) x + b(alpha) + eta : x in r}``."""
    lo, hi = image_bounds(m.A_lo, m.A_hi, m.b_lo, m.b_hi, r.lo[None], r.hi[None],
                          np.asarray(eta, dtype=float)[None])
    return Box(lo[0], hi[0])


def image_bounds(A_lo, A_hi, b_lo, b_hi, xlo, xhi, eta):
    """Vectorised image enclosure.

    ``A_*`` are (n, n) or (m, n, n); ``b_*`` (n,) or (m, n); ``xlo, xhi, eta``
    (m, n). Returns lower and upper corners of shape (m, n).
    """
    Amin = np.minimum(A_lo, A_hi)
    Amax = np.maximum(A_lo, A_hi)
    if Amin.ndim == 2:
        Amin, Amax = Amin[None], Amax[None]
    xl = xlo[:, None, :]
    xh = xhi[:, None, :]
    prods = np.stack([Amin * xl, Amin * xh, Amax * xl, Amax * xh])
    lo = prods.min(axis=0).sum(axis=2) + np.minimum(b_lo, b_hi) + eta
    hi = prods.max(axis=0).sum(axis=2) + np.maximum(b_lo, b_hi) + eta
    return lo, hi


# ---------------------------------------------------------------------------
# network weight files


@dataclass
class Network:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "relu"

    def forward(self, x) -> np.ndarray:
        h = np.atleast_2d(np.asarray(x, dtype=float))
        act = _FUNCS[self.activation]
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W.T + b
            if k < len(self.weights) - 1:
                h = act(h)
        return h

    def to_graph(self) -> ComputationGraph:
        n = self.weights[0].shape[1]
        if self.weights[-1].shape[0] != n:
            raise ValueError("network output dimension must equal its input dimension")
        g = ComputationGraph(n)
        node = g.input
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            node = g.affine(node, W, b)
            if k < len(self.weights) - 1:
                node = g.elementwise(self.activation, node)
        return g.set_output(node)


class WeightFileError(ValueError):
    pass


def read_network(path) -> Network:
    """Parse the line-oriented weight format (see README)."""
    lines = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        text = raw.split("#", 1)[0].strip()
        if text:
            lines.append((lineno, text.split()))
    if not lines:
        raise WeightFileError(f"{path}: empty weight file")
    lineno, head = lines[0]
    if len(head) != 4 or head[0] != "layers" or head[2] != "activation":
        raise WeightFileError(f"{path}:{lineno}: expected 'layers L activation NAME'")
    try:
        n_layers = int(head[1])
    except ValueError:
        raise WeightFileError(f"{path}:{lineno}: layer count must be an integer") from None
    activation = head[3]
    if activation not in ("relu", "tanh", "identity"):
        raise WeightFileError(f"{path}:{lineno}: unknown activation {activation!r}")

    pos = 1
    weights, biases = [], []

    def take(expect_len, what):
        nonlocal pos
        if pos >= len(lines):
            raise WeightFileError(f"{path}: unexpected end of file reading {what}")
        ln, toks = lines[pos]
        if len(toks) != expect_len:
            raise WeightFileError(f"{path}:{ln}: {what} needs {expect_len} values, got {len(toks)}")
        try:
            vals = [float(t) for t in toks]
        except ValueError:
            raise WeightFileError(f"{path}:{ln}: non-numeric value in {what}") from None
        pos += 1
        return vals

    for layer in range(n_layers):
        if pos >= len(lines):
            raise WeightFileError(f"{path}: missing layer {layer}")
        ln, toks = lines[pos]
        if len(toks) != 3 or toks[0] != "shape":
            raise WeightFileError(f"{path}:{ln}: expected 'shape ROWS COLS'")
        rows, cols = int(toks[1]), int(toks[2])
        pos += 1
        W = np.array([take(cols, f"layer {layer} weight row") for _ in range(rows)])
        b = np.array(take(rows, f"layer {layer} bias"))
        if weights and weights[-1].shape[0] != cols:
            raise WeightFileError(
                f"{path}:{ln}: layer {layer} expects {cols} inputs, previous layer has "
                f"{weights[-1].shape[0]} outputs")
        weights.append(W)
        biases.append(b)
    if pos != len(lines):
        raise WeightFileError(f"{path}:{lines[pos][0]}: trailing content after last layer")
    return Network(weights, biases, activation)


def write_network(net: Network, path) -> None:
    out = [f"layers {len(net.weights)} activation {net.activation}"]
    for W, b in zip(net.weights, net.biases):
        out.append(f"shape {W.shape[0]} {W.shape[1]}")
        out.extend(" ".join(repr(float(v)) for v in row) for row in W)
        out.append(" ".join(repr(float(v)) for v in b))
    Path(path).write_text("\n".join(out) + "\n")


def load_network(path) -> ComputationGraph:
    return read_network(path).to_graph()
