"""Built-in systems: relaxations for certification, true dynamics and noise samplers."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import Box
from .relaxation import ComputationGraph, Network, UncertainAffineMap, relax_region


class UnknownBenchmarkError(KeyError):
    pass


@dataclass
class System:
    """Dynamics ``x+ = f(x, alpha) + eta`` with a per-region relaxation.

    ``relax(box)`` returns the uncertain affine map used by the synthesis;
    ``step(x, eta, rng)`` advances true trajectories (the uncertain parameter
    is redrawn each step by ``alpha_rule``).
    """

    name: str
    n: int
    noise_mean: np.ndarray
    noise_std: np.ndarray
    params: dict = field(default_factory=dict)
    alpha_rule: str = "random"

    def relax(self, box: Box) -> UncertainAffineMap:
        raise NotImplementedError

    def nominal(self, x: np.ndarray, alpha: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def sample_noise(self, rng: np.random.Generator, N: int) -> np.ndarray:
        z = rng.standard_normal((N, self.n))
        return self.noise_mean + z * self.noise_std

    def _alpha(self, rng, m):
        if self.alpha_rule == "random":
            return rng.uniform(0.0, 1.0, size=m)
        if self.alpha_rule == "low":
            return np.ones(m)
        if self.alpha_rule == "high":
            return np.zeros(m)
        raise ValueError(f"unknown alpha rule {self.alpha_rule!r}")

    def step(self, x: np.ndarray, eta: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return self.nominal(x, self._alpha(rng, x.shape[0])) + eta


@dataclass
class IntervalAffineSystem(System):
    """``x+ = A(alpha) x + b(alpha)`` with one alpha shared by all entries."""

    A_lo: np.ndarray = None
    A_hi: np.ndarray = None
    b_lo: np.ndarray = None
    b_hi: np.ndarray = None

    def relax(self, box: Box) -> UncertainAffineMap:
        return UncertainAffineMap(self.A_lo, self.A_hi, self.b_lo, self.b_hi, box, coupled=True)

    def nominal(self, x, alpha):
        a = np.asarray(alpha)[:, None]
        lo = x @ self.A_lo.T + self.b_lo
        hi = x @ self.A_hi.T + self.b_hi
        return a * lo + (1 - a) * hi


@dataclass
class VehicleSystem(System):
    """Straight-road vehicle with a lateral wind gust on a band of ``x1``.

    The lateral acceleration lies in ``gust`` while ``x1`` is inside
    ``gust_band`` and is zero elsewhere. A region that only partly overlaps
    the band gets the hull of both cases.
    """

    speed: float = 50 / 3.6
    tau: float = 1.0
    damping: float = 0.95
    gust: tuple = (0.0913, 0.364)
    gust_band: tuple = (80.0, 120.0)

    def _accel_range(self, lo1, hi1):
        a, b = self.gust_band
        if hi1 < a or lo1 > b:
            return 0.0, 0.0
        if lo1 >= a and hi1 <= b:
            return self.gust
        return 0.0, self.gust[1]

    def relax(self, box: Box) -> UncertainAffineMap:
        lo_a, hi_a = self._accel_range(box.lo[0], box.hi[0])
        A = np.array([[1.0, 0.0], [0.0, self.damping]])
        shift = np.array([self.speed * self.tau, 0.0])
        b_lo = shift + np.array([0.0, 0.5 * lo_a * self.tau ** 2])
        b_hi = shift + np.array([0.0, 0.5 * hi_a * self.tau ** 2])
        return UncertainAffineMap(A, A, b_lo, b_hi, box, coupled=True)

    def nominal(self, x, alpha):
        a = self.gust[0] * alpha + self.gust[1] * (1 - alpha)
        in_band = (x[:, 0] >= self.gust_band[0]) & (x[:, 0] <= self.gust_band[1])
        acc = np.where(in_band, a, 0.0)
        out = np.empty_like(x)
        out[:, 0] = x[:, 0] + self.speed * self.tau
        out[:, 1] = self.damping * x[:, 1] + 0.5 * acc * self.tau ** 2
        return out


@dataclass
class GraphSystem(System):
    """Deterministic dynamics given as a computation graph."""

    graph: ComputationGraph = None

    def relax(self, box: Box) -> UncertainAffineMap:
        return relax_region(self.graph, box)

    def nominal(self, x, alpha):
        return self.graph.evaluate(x)

    def step(self, x, eta, rng):
        return self.graph.evaluate(x) + eta


# ---------------------------------------------------------------------------
# builders


@dataclass
class BenchmarkDefaults:
    Xs: Box
    X0: Box
    segments: tuple
    T: int = 10
    epsilon: float = 0.005


def linear1d() -> tuple[System, BenchmarkDefaults]:
    sys = IntervalAffineSystem(
        "linear1d", 1, np.zeros(1), np.array([0.01]), {},
        A_lo=np.eye(1), A_hi=np.eye(1), b_lo=np.array([-0.05]), b_hi=np.array([0.05]))
    return sys, BenchmarkDefaults(Box([-2.5], [2.5]), Box([-0.5], [0.5]), (27,))


def drone(tau: float = 1.0, mass=(0.75, 1.25), noise_std: float = 0.1) -> tuple[System, BenchmarkDefaults]:
    # damping 1 - 0.1 tau / m is increasing in m, so the mass interval maps to its ends
    A_lo = np.array([[1.0, tau], [0.0, 1.0 - 0.1 * tau / mass[0]]])
    A_hi = np.array([[1.0, tau], [0.0, 1.0 - 0.1 * tau / mass[1]]])
    sys = IntervalAffineSystem(
        "drone", 2, np.zeros(2), np.full(2, noise_std), {"tau": tau, "mass": list(mass)},
        A_lo=A_lo, A_hi=A_hi, b_lo=np.zeros(2), b_hi=np.zeros(2))
    # a long position range keeps the exit many steps away from X0
    return sys, BenchmarkDefaults(Box([-4000.0, -10.0], [4000.0, 10.0]), Box([-1.0, -0.1], [1.0, 0.1]),
                                  (37, 1), epsilon=0.001)


VEHICLE_SEGMENTS = {18: (6, 3), 42: (14, 3), 54: (18, 3), 150: (50, 3)}


def vehicle(noise_std: float = 0.01, cells: int = 150) -> tuple[System, BenchmarkDefaults]:
    """Gust band on 80 <= x1 <= 120; the lateral coordinate x2 is the constrained one."""
    sys = VehicleSystem("vehicle", 2, np.zeros(2), np.full(2, noise_std), {"cells": cells})
    try:
        seg = VEHICLE_SEGMENTS[cells]
    except KeyError:
        raise ValueError(f"vehicle grids exist for {sorted(VEHICLE_SEGMENTS)} cells, not {cells}") from None
    return sys, BenchmarkDefaults(Box([0.0, -2.5], [600.0, 2.5]), Box([0.0, -0.5], [10.0, 0.5]), seg)


def pendulum_dynamics(x: np.ndarray, tau: float = 0.05, g_over_l: float = 9.81,
                      damping: float = 1.0, gain=(12.0, 4.0)) -> np.ndarray:
    """Damped pendulum under a linear stabilising torque."""
    th, om = x[:, 0], x[:, 1]
    torque = -gain[0] * th - gain[1] * om
    acc = -g_over_l * np.sin(th) - damping * om + torque
    return np.column_stack([th + tau * om, om + tau * acc])


def pendulum_network(hidden: int = 64, seed: int = 0, activation: str = "relu",
                     domain: Optional[Box] = None, n_fit: int = 4000) -> Network:
    """2-hidden-2 network fitted to ``pendulum_dynamics``.

    Hidden weights are random; the output layer is a least-squares fit, so the
    result depends only on ``seed``.
    """
    rng = np.random.default_rng(seed)
    domain = domain or Box([-0.6, -1.2], [0.6, 1.2])
    X = domain.sample(rng, n_fit)
    Y = pendulum_dynamics(X)
    W1 = rng.normal(0.0, 1.0, size=(hidden, 2)) / np.maximum(domain.width, 1e-9) * 2
    b1 = rng.uniform(-1.0, 1.0, size=hidden)
    H = X @ W1.T + b1
    H = np.maximum(H, 0) if activation == "relu" else np.tanh(H)
    feats = np.column_stack([H, np.ones(n_fit)])
    coef, *_ = np.linalg.lstsq(feats, Y, rcond=None)
    W2, b2 = coef[:-1].T, coef[-1]
    return Network([W1, W2], [b1, b2], activation)


def pendulum_nndm(seed: int = 0, activation: str = "relu", noise_std: float = 0.01) -> tuple[System, BenchmarkDefaults]:
    net = pendulum_network(seed=seed, activation=activation)
    sys = GraphSystem("pendulum-nndm", 2, np.zeros(2), np.full(2, noise_std),
                      {"seed": seed, "activation": activation, "hidden": 64}, graph=net.to_graph())
    sys.network = net
    return sys, BenchmarkDefaults(Box([-0.6, -1.2], [0.6, 1.2]), Box([-0.1, -0.1], [0.1, 0.1]), (24, 20))


def dubins_graph(v: float = 1.0, tau: float = 0.1) -> ComputationGraph:
    g = ComputationGraph(3)
    heading = g.affine(g.input, [[0.0, 0.0, 1.0]])
    cx = g.affine(g.elementwise("cos", heading), [[v * tau], [0.0], [0.0]])
    sy = g.affine(g.elementwise("sin", heading), [[0.0], [v * tau], [0.0]])
    return g.set_output(g.add(g.input, cx, sy))


def dubins(v: float = 1.0, tau: float = 0.1) -> tuple[System, BenchmarkDefaults]:
    sys = GraphSystem("dubins", 3, np.array([0.0, 0.0, 60 * math.pi / 180]), np.array([0.0, 0.0, 0.1]),
                      {"v": v, "tau": tau}, graph=dubins_graph(v, tau))
    return sys, BenchmarkDefaults(Box([-2.0, -2.0, -1.0], [2.0, 2.0, 19.0]),
                                  Box([-0.2, -0.2, -0.1], [0.2, 0.2, 0.1]), (10, 10, 10))


def identity_system(n: int = 1, noise_std: float = 1e-3) -> System:
    return IntervalAffineSystem("identity", n, np.zeros(n), np.full(n, noise_std), {},
                                A_lo=np.eye(n), A_hi=np.eye(n), b_lo=np.zeros(n), b_hi=np.zeros(n))


BUILDERS = {
    "linear1d": linear1d,
    "drone": drone,
    "vehicle": vehicle,
    "pendulum-nndm": pendulum_nndm,
    "dubins": dubins,
}


def get_benchmark(name: str, **params) -> tuple[System, BenchmarkDefaults]:
    try:
        build = BUILDERS[name]
    except KeyError:
        raise UnknownBenchmarkError(f"unknown benchmark {name!r}; choose from {sorted(BUILDERS)}") from None
    return build(**params)
