"""Command line: ``certify``, ``validate`` and ``gen-samples``.

Exit codes: 0 success (non-vacuous certificate, or validation consistent
with it), 2 vacuous certificate or empirical safety below the certified
bound, 1 any error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .benchmarks import UnknownBenchmarkError, get_benchmark
from .config import ConfigError, RunConfig, load
from .partition import grid_partition
from .relaxation import RelaxationError, WeightFileError
from .scenario import SampleFileError, barrier_dimension, read_samples, required_samples, write_samples
from .synthesis import BarrierPWA, SynthesisError, certify, relax_all
from .validation import check_onestep_empirical, simulate_safety

log = logging.getLogger("pwabarrier")

EXIT_OK, EXIT_ERROR, EXIT_VACUOUS = 0, 1, 2


class CLIError(Exception):
    pass


def _dump(report: dict, out) -> None:
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def sample_count(cfg: RunConfig, available: int, beta=None, count=None) -> int:
    """Samples the scenario bound needs: explicit count, else from beta, else the config."""
    if count is not None:
        N = count
    elif beta is not None:
        N = required_samples(cfg.epsilon, beta, barrier_dimension(int(np.prod(cfg.segments)), cfg.safe_set.dim))
    elif cfg.N is not None:
        N = cfg.N
    else:
        N = required_samples(cfg.epsilon, cfg.beta, barrier_dimension(int(np.prod(cfg.segments)), cfg.safe_set.dim))
    if N < 1:
        raise CLIError("sample count must be positive")
    if N > available:
        raise CLIError(f"the scenario bound needs {N} samples, the sample file has {available}")
    return N


def run_certify(args) -> int:
    cfg = load(args.config)
    system = cfg.build_system()
    data = read_samples(args.samples)
    if data.dim != cfg.safe_set.dim:
        raise CLIError(f"sample file has {data.dim} columns, the state has {cfg.safe_set.dim}")
    N = sample_count(cfg, len(data), args.beta, args.samples_count)
    data = data.head(N)
    log.info("certifying with N=%d samples on %d cells", N, int(np.prod(cfg.segments)))
    result = certify(system, cfg.safe_set, cfg.initial_set, cfg.segments, data, cfg.T, epsilon=cfg.epsilon,
                     M=cfg.M, t=cfg.bisection_depth, backend=cfg.backend, workers=args.workers,
                     config_payload=cfg.to_dict())
    report = result.report()
    report["config"] = cfg.to_dict()
    report["samples_file"] = str(args.samples)
    report["version"] = __version__
    _dump(report, args.out)
    cert = result.certificate
    log.info("zeta=%.6g (gamma=%.6g, c=%.6g)", cert.zeta, cert.gamma, cert.c)
    return EXIT_VACUOUS if cert.vacuous else EXIT_OK


def run_validate(args) -> int:
    cfg = load(args.config)
    system = cfg.build_system()
    report = json.loads(Path(args.certificate).read_text())
    try:
        cert = report["certificate"]
        u = np.asarray(report["barrier"]["u"], dtype=float)
        v = np.asarray(report["barrier"]["v"], dtype=float)
    except (KeyError, TypeError) as exc:
        raise CLIError(f"{args.certificate}: not a certificate report ({exc})") from None
    p = grid_partition(cfg.safe_set, cfg.segments)
    if u.shape != (len(p), p.dim):
        raise CLIError(f"{args.certificate}: barrier has {u.shape[0]} pieces, the config grid has {len(p)}")
    est = simulate_safety(system, cfg.safe_set, cfg.initial_set, cfg.T, args.trials, seed=args.seed)
    out = {"safety": est.to_dict(), "certified_zeta_clamped": cert["zeta_clamped"],
           "consistent": est.probability >= cert["zeta_clamped"]}
    if args.heldout:
        B = BarrierPWA(p, u, v, cert["M"])
        maps = relax_all(system, p, args.workers)
        fresh = system.sample_noise(np.random.default_rng([args.seed, 1]), args.heldout)
        out["onestep_violation_fraction"] = check_onestep_empirical(B, maps, fresh, cert["delta"], cert["c"])
        out["onestep_heldout"] = args.heldout
    _dump(out, args.out)
    return EXIT_OK if out["consistent"] else EXIT_VACUOUS


def run_gen_samples(args) -> int:
    if args.n < 1:
        raise CLIError("--n must be at least 1")
    system, _ = get_benchmark(args.benchmark)
    samples = system.sample_noise(np.random.default_rng(args.seed), args.n)
    write_samples(samples, args.out, comment=f"benchmark {args.benchmark}, seed {args.seed}, {args.n} rows")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pwabarrier", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    c = sub.add_parser("certify", help="synthesise a barrier and report the certified safety bound")
    c.add_argument("--config", required=True)
    c.add_argument("--samples", required=True, help="noise CSV, one realisation per row")
    g = c.add_mutually_exclusive_group()
    g.add_argument("--beta", type=float, help="confidence complement; sets N by the scenario bound")
    g.add_argument("--samples-count", type=int, help="use the first N rows")
    c.add_argument("--out", help="report path (JSON); stdout when omitted")
    c.add_argument("--workers", type=int, default=1)
    c.set_defaults(func=run_certify)

    v = sub.add_parser("validate", help="Monte Carlo check of a certificate report")
    v.add_argument("--config", required=True)
    v.add_argument("--certificate", required=True)
    v.add_argument("--trials", type=int, default=100_000)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--heldout", type=int, default=0, help="fresh noise rows for the one-step check")
    v.add_argument("--workers", type=int, default=1)
    v.add_argument("--out")
    v.set_defaults(func=run_validate)

    s = sub.add_parser("gen-samples", help="draw noise samples for a built-in benchmark")
    s.add_argument("--benchmark", required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=run_gen_samples)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (CLIError, ConfigError, SampleFileError, WeightFileError, RelaxationError, SynthesisError,
            UnknownBenchmarkError, FileNotFoundError, ValueError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
