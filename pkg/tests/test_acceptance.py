"""Acceptance criteria 1-10. Every test prints one PASS/FAIL line.

Run standalone with ``python tests/test_acceptance.py`` for the summary only.
Results are cached per process, so criterion 4 reuses criteria 5-10.
"""

import functools
import time

import numpy as np
import pytest

import test_preimage as tp
import test_relaxation as trel
import test_scenario as tsc
import test_synthesis as ts
from pwabarrier.benchmarks import (
    IntervalAffineSystem,
    VEHICLE_SEGMENTS,
    dubins_graph,
    get_benchmark,
    pendulum_network,
)
from pwabarrier.geometry import Box, rtree_build, to_halfspaces
from pwabarrier.preimage import alpha_feasible, poly_preimage
from pwabarrier.scenario import NoiseDataset, barrier_dimension, beta_bound, required_samples
from pwabarrier.synthesis import certify, find_transition_triples
from pwabarrier.validation import simulate_safety

BETA = 1e-9
TIME_BUDGET = 15 * 60


def run_benchmark(name, seed=0, **params):
    sys, d = get_benchmark(name, **params)
    N = required_samples(d.epsilon, BETA, barrier_dimension(int(np.prod(d.segments)), sys.n))
    data = NoiseDataset(sys.sample_noise(np.random.default_rng(seed), N))
    t0 = time.perf_counter()
    r = certify(sys, d.Xs, d.X0, d.segments, data, d.T, epsilon=d.epsilon)
    return r.certificate, time.perf_counter() - t0


@functools.cache
def criterion_1():
    zetas, times = [], []
    for seed in range(10):
        cert, wall = run_benchmark("linear1d", seed)
        zetas.append(cert.zeta)
        times.append(wall)
    hits = sum(0.40 <= z <= 0.60 for z in zetas)
    ok = hits >= 8 and max(times) < 30
    return ok, f"{hits}/10 seeds in [0.40, 0.60], zeta mean {np.mean(zetas):.3f}, slowest {max(times):.1f}s"


@functools.cache
def criterion_2():
    zetas = [run_benchmark("drone", seed)[0].zeta for seed in range(10)]
    hits = sum(z >= 0.95 for z in zetas)
    return hits >= 8, f"{hits}/10 seeds with zeta >= 0.95, min {min(zetas):.4f}"


@functools.cache
def criterion_3():
    cells = sorted(VEHICLE_SEGMENTS)
    zetas = [run_benchmark("vehicle", 0, cells=ell)[0].zeta for ell in cells]
    increasing = all(a < b for a, b in zip(zetas, zetas[1:]))
    high = zetas[-1] >= 0.9
    trend = ", ".join(f"{ell}:{z:.4f}" for ell, z in zip(cells, zetas))
    return increasing and high, f"strictly increasing={increasing}, zeta(150)>=0.9={high}; {trend}"


@functools.cache
def criterion_4():
    pend, t_pend = run_benchmark("pendulum-nndm", 0, activation="relu")
    dub, t_dub = run_benchmark("dubins", 0)
    suite = {k: CRITERIA[k]()[0] for k in range(5, 11)}
    ok = t_pend < TIME_BUDGET and t_dub < TIME_BUDGET and all(suite.values())
    failed = [k for k, v in suite.items() if not v]
    return ok, (f"pendulum ell=480 {t_pend:.0f}s zeta {pend.zeta:.4f}; dubins ell=1000 {t_dub:.0f}s "
                f"zeta {dub.zeta:.4f}; invariant suite failures: {failed or 'none'}")


@functools.cache
def criterion_5():
    rng = np.random.default_rng(0)
    bad = 0
    for _ in range(1000):
        n = int(rng.integers(1, 4))
        lo = rng.uniform(-2, 1, n)
        box = Box(lo, lo + rng.uniform(0, 2, n))
        u, v = rng.normal(size=n), rng.normal()
        exact = max(u @ x for x in box.vertices()) + v
        gamma = exact + rng.choice([-1, 1]) * rng.uniform(1e-6, 1)
        bad += (exact <= gamma + 1e-8) != ts.fixed_point_feasible(to_halfspaces(box), u, v, gamma)
    return bad == 0, f"{bad} disagreements in 1000 box constraints"


@functools.cache
def criterion_6():
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(1000 + seed)
        sys, Xs, X0, seg, data = ts.small_linear(rng, N=int(rng.integers(30, 200)),
                                                 segments=int(rng.integers(5, 15)))
        full = certify(sys, Xs, X0, seg, data, 10, prune=False).certificate
        pruned = certify(sys, Xs, X0, seg, data, 10, prune=True).certificate
        worst = max(worst, abs(full.gamma - pruned.gamma), abs(full.c - pruned.c))
    return worst <= 1e-6, f"max |delta (gamma, c)| = {worst:.2e} over 20 instances"


@functools.cache
def criterion_7():
    mismatches = 0
    for seed in range(20):
        rng = np.random.default_rng(2000 + seed)
        p, maps, samples = ts.random_instance(rng, ["interval1d", "interval2d", "dubins"][seed % 3])
        got = find_transition_triples(p, maps, samples, rtree_build(p.regions))
        mismatches += got.keys() != ts.brute_force_triples(p, maps, samples)
    return mismatches == 0, f"{mismatches}/20 instances differ from brute force"


@functools.cache
def criterion_8():
    rng = np.random.default_rng(3000)
    relax_bad = 0
    graphs = [(trel.cubic_plus_identity(), 1), (dubins_graph(), 3),
              (pendulum_network(activation="relu").to_graph(), 2),
              (pendulum_network(activation="tanh").to_graph(), 2)]
    for g, n in graphs:
        for _ in range(20):
            lo = rng.uniform(-3, 2, n)
            box = Box(lo, lo + rng.uniform(0.01, 1.5, n))
            relax_bad += trel.region_violation(g, box, rng, n=10_000) > 1e-9
    pre_bad = 0
    for kind in ("interval", "pendulum", "dubins"):
        for _ in range(20):
            ri, rj, m, eta = tp.random_instance(rng, kind)
            q = poly_preimage(ri, rj, m, eta)
            for x in ri.sample(rng, 1000):
                if alpha_feasible(m, x, eta, rj) and (q is None or not q.contains(x[None], tol=1e-12)[0]):
                    pre_bad += 1
    ok = relax_bad == 0 and pre_bad == 0
    return ok, f"relaxation: {relax_bad} unsound regions of 80; preimage: {pre_bad} escaped points of 60000"


@functools.cache
def criterion_9():
    off = 0
    for N, eps, d in tsc.GRID:
        want = tsc.oracle_beta(N, eps, d)
        got = beta_bound(N, eps, d)
        if want < 1e-300:
            off += got >= 1e-290
        else:
            off += abs(got - float(want)) > 5e-7 * float(want)
    not_minimal = 0
    cases = [(0.005, 1e-9, 29), (0.005, 1e-9, 56), (0.001, 1e-9, 113), (0.05, 1e-3, 3), (0.01, 1e-6, 1)]
    for eps, beta, d in cases:
        N = required_samples(eps, beta, d)
        not_minimal += not (beta_bound(N, eps, d) <= beta < beta_bound(N - 1, eps, d))
    ok = off == 0 and not_minimal == 0
    return ok, f"{off}/{len(tsc.GRID)} grid points off the oracle; {not_minimal}/{len(cases)} sizes not minimal"


def noise_sampler(kind, scale, n):
    if kind == "gaussian":
        return lambda rng, m: rng.normal(0.0, scale, (m, n))
    if kind == "uniform":
        half = scale * np.sqrt(3.0)
        return lambda rng, m: rng.uniform(-half, half, (m, n))
    return lambda rng, m: rng.laplace(0.0, scale / np.sqrt(2.0), (m, n))


def random_safety_instance(rng):
    n = int(rng.integers(1, 3))
    a = rng.uniform(0.7, 1.0)
    A_lo = np.eye(n) * a
    A_hi = np.eye(n) * min(1.0, a + rng.uniform(0, 0.1))
    if n == 2:
        A_lo[0, 1] = A_hi[0, 1] = rng.uniform(-0.1, 0.1)
    b = rng.uniform(0.0, 0.05, n)
    sys = IntervalAffineSystem("random", n, np.zeros(n), np.zeros(n), A_lo=A_lo, A_hi=A_hi, b_lo=-b, b_hi=b)
    kind = ["gaussian", "uniform", "laplace"][int(rng.integers(3))]
    noise = noise_sampler(kind, rng.uniform(0.005, 0.04), n)
    segments = (int(rng.integers(9, 21)),) if n == 1 else tuple(int(s) for s in rng.integers(5, 9, 2))
    return sys, noise, Box(-np.ones(n), np.ones(n)), Box(np.full(n, -0.2), np.full(n, 0.2)), segments


@functools.cache
def criterion_10():
    failures, zetas = 0, []
    for seed in range(50):
        rng = np.random.default_rng(4000 + seed)
        sys, noise, Xs, X0, seg = random_safety_instance(rng)
        eps = 0.01
        N = required_samples(eps, BETA, barrier_dimension(int(np.prod(seg)), sys.n))
        cert = certify(sys, Xs, X0, seg, NoiseDataset(noise(rng, N)), 10, epsilon=eps).certificate
        est = simulate_safety(sys, Xs, X0, 10, 100_000, seed=seed, noise=noise)
        zetas.append(cert.zeta_clamped)
        failures += est.probability < cert.zeta_clamped
    informative = sum(z > 0 for z in zetas)
    return failures == 0, f"{50 - failures}/50 instances with empirical >= certified ({informative} non-vacuous)"


CRITERIA = {1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5,
            6: criterion_6, 7: criterion_7, 8: criterion_8, 9: criterion_9, 10: criterion_10}


def line(k):
    ok, detail = CRITERIA[k]()
    return ok, f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}"


@pytest.mark.parametrize("k", sorted(CRITERIA))
def test_criterion(k, capsys):
    ok, text = line(k)
    with capsys.disabled():
        print("\n" + text)
    assert ok, text


if __name__ == "__main__":
    for k in sorted(CRITERIA):
        print(line(k)[1], flush=True)
