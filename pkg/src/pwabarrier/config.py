"""Run configuration: YAML schema, cross-field checks and system construction."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .benchmarks import BUILDERS, GraphSystem, get_benchmark
from .geometry import Box
from .preimage import DEFAULT_DEPTH
from .relaxation import load_network
from .scenario import DEFAULT_EPSILON, DEFAULT_M

DEFAULT_BETA = 1e-9
ALPHA_RULES = ("random", "low", "high")


class ConfigError(ValueError):
    pass


def _box(entry, what: str) -> Box:
    if not isinstance(entry, dict) or set(entry) != {"lo", "hi"}:
        raise ConfigError(f"{what}: expected a mapping with keys 'lo' and 'hi'")
    try:
        return Box(entry["lo"], entry["hi"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{what}: {exc}") from None


def _number(raw: dict, key: str, default):
    # YAML 1.1 reads "1e-9" as a string, so accept numeric strings
    value = raw.get(key, default)
    if value is None or isinstance(value, bool):
        return value
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected a number, got {value!r}") from None


def _box_dict(b: Box) -> dict:
    return {"lo": b.lo.tolist(), "hi": b.hi.tolist()}


@dataclass
class RunConfig:
    """Everything a certification run needs except the noise samples.

    ``system`` holds either ``{"builtin": name, "params": {...}}`` or
    ``{"network": path, "noise_mean": [...], "noise_std": [...]}``.
    Exactly one of ``beta`` and ``N`` fixes the sample count.
    """

    system: dict
    safe_set: Box
    initial_set: Box
    segments: tuple
    T: int = 10
    epsilon: float = DEFAULT_EPSILON
    beta: Optional[float] = DEFAULT_BETA
    N: Optional[int] = None
    M: float = DEFAULT_M
    bisection_depth: int = DEFAULT_DEPTH
    seed: int = 0
    backend: str = "auto"
    alpha_rule: str = "random"
    base_dir: Path = field(default=Path("."), compare=False, repr=False)

    # -- construction ------------------------------------------------------

    @classmethod
    def from_dict(cls, raw: dict, base_dir=".") -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("configuration must be a mapping")
        known = {"system", "safe_set", "initial_set", "segments", "T", "epsilon", "beta", "N", "M",
                 "bisection_depth", "seed", "backend", "alpha_rule"}
        extra = set(raw) - known
        if extra:
            raise ConfigError(f"unknown keys: {sorted(extra)}")
        system = raw.get("system")
        if not isinstance(system, dict):
            raise ConfigError("system: expected a mapping")
        defaults = None
        if "builtin" in system:
            name = system["builtin"]
            if name not in BUILDERS:
                raise ConfigError(f"system.builtin: unknown benchmark {name!r}; choose from {sorted(BUILDERS)}")
            if name == "pendulum-nndm" and "activation" not in system.get("params", {}):
                raise ConfigError("system.params.activation: pendulum-nndm must declare relu or tanh")
            try:
                _, defaults = get_benchmark(name, **system.get("params", {}))
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"system.params: {exc}") from None
        elif "network" not in system:
            raise ConfigError("system: needs 'builtin' or 'network'")

        def default(key, attr):
            if defaults is None:
                raise ConfigError(f"{key}: required for network systems")
            return getattr(defaults, attr)

        safe = _box(raw["safe_set"], "safe_set") if "safe_set" in raw else default("safe_set", "Xs")
        init = _box(raw["initial_set"], "initial_set") if "initial_set" in raw else default("initial_set", "X0")
        segments = raw["segments"] if "segments" in raw else default("segments", "segments")
        beta, N = _number(raw, "beta", None), raw.get("N")
        if "beta" not in raw and "N" not in raw:
            beta = DEFAULT_BETA
        cfg = cls(
            system=copy.deepcopy(system), safe_set=safe, initial_set=init,
            segments=tuple(int(s) for s in np.atleast_1d(segments)),
            T=raw.get("T", defaults.T if defaults else 10),
            epsilon=_number(raw, "epsilon", defaults.epsilon if defaults else DEFAULT_EPSILON),
            beta=beta, N=N, M=_number(raw, "M", DEFAULT_M),
            bisection_depth=raw.get("bisection_depth", DEFAULT_DEPTH), seed=raw.get("seed", 0),
            backend=raw.get("backend", "auto"), alpha_rule=raw.get("alpha_rule", "random"),
            base_dir=Path(base_dir),
        )
        cfg.validate()
        return cfg

    def validate(self) -> None:
        n = self.safe_set.dim
        if self.initial_set.dim != n:
            raise ConfigError(f"initial_set has dimension {self.initial_set.dim}, safe_set has {n}")
        if not self.safe_set.contains_box(self.initial_set):
            raise ConfigError("initial_set: must lie inside safe_set (X0 subset of Xs check failed)")
        if len(self.segments) != n or any(s < 1 for s in self.segments):
            raise ConfigError(f"segments: need {n} positive integers, got {list(self.segments)}")
        if not isinstance(self.T, int) or self.T < 1:
            raise ConfigError("T: horizon must be a positive integer")
        if not 0 < float(self.epsilon) < 1:
            raise ConfigError("epsilon: must lie in (0, 1)")
        if (self.beta is None) == (self.N is None):
            raise ConfigError("give exactly one of beta and N")
        if self.beta is not None and not 0 < float(self.beta) < 1:
            raise ConfigError("beta: must lie in (0, 1)")
        if self.N is not None and (not isinstance(self.N, int) or self.N < 1):
            raise ConfigError("N: must be a positive integer")
        if float(self.M) < 1:
            raise ConfigError("M: must be at least 1")
        if not isinstance(self.bisection_depth, int) or self.bisection_depth < 0:
            raise ConfigError("bisection_depth: must be a non-negative integer")
        if self.backend not in ("auto", "simplex", "highs"):
            raise ConfigError(f"backend: unknown LP backend {self.backend!r}")
        if self.alpha_rule not in ALPHA_RULES:
            raise ConfigError(f"alpha_rule: choose from {ALPHA_RULES}")
        if "network" in self.system:
            for key in ("noise_mean", "noise_std"):
                if len(np.atleast_1d(self.system.get(key, []))) != n:
                    raise ConfigError(f"system.{key}: need {n} entries")

    # -- serialisation ------------------------------------------------------

    def to_dict(self) -> dict:
        out = {
            "system": copy.deepcopy(self.system),
            "safe_set": _box_dict(self.safe_set),
            "initial_set": _box_dict(self.initial_set),
            "segments": list(self.segments),
            "T": self.T,
            "epsilon": self.epsilon,
            "M": self.M,
            "bisection_depth": self.bisection_depth,
            "seed": self.seed,
            "backend": self.backend,
            "alpha_rule": self.alpha_rule,
        }
        if self.beta is not None:
            out["beta"] = self.beta
        if self.N is not None:
            out["N"] = self.N
        return out

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    # -- system -------------------------------------------------------------

    def build_system(self):
        if "builtin" in self.system:
            sys, _ = get_benchmark(self.system["builtin"], **self.system.get("params", {}))
        else:
            path = Path(self.system["network"])
            if not path.is_absolute():
                path = self.base_dir / path
            graph = load_network(path)
            n = self.safe_set.dim
            sys = GraphSystem(path.stem, n, np.asarray(self.system["noise_mean"], dtype=float),
                              np.asarray(self.system["noise_std"], dtype=float), {"network": str(path)},
                              graph=graph)
        if sys.n != self.safe_set.dim:
            raise ConfigError(f"system has state dimension {sys.n}, safe_set has {self.safe_set.dim}")
        sys.alpha_rule = self.alpha_rule
        return sys


def _key_lines(text: str) -> dict:
    """Top-level key -> 1-based line number, for diagnostics."""
    try:
        node = yaml.compose(text)
    except yaml.YAMLError:
        return {}
    if not isinstance(node, yaml.MappingNode):
        return {}
    return {k.value: k.start_mark.line + 1 for k, _ in node.value}


def loads(text: str, source: str = "<string>", base_dir=".") -> RunConfig:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f":{mark.line + 1}" if mark is not None else ""
        raise ConfigError(f"{source}{where}: invalid YAML ({getattr(exc, 'problem', exc)})") from None
    try:
        return RunConfig.from_dict(raw, base_dir)
    except ConfigError as exc:
        msg = str(exc)
        key = msg.split(":")[0].split(".")[0]
        line = _key_lines(text).get(key)
        raise ConfigError(f"{source}:{line}: {msg}" if line else f"{source}: {msg}") from None


def load(path) -> RunConfig:
    path = Path(path)
    return loads(path.read_text(), str(path), path.parent)
