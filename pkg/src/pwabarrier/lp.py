"""Sparse LP model, a dense bounded-variable revised simplex, and a HiGHS backend."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

LE, EQ = "<=", "="
OPTIMAL, INFEASIBLE, UNBOUNDED, ITERATION_LIMIT = "optimal", "infeasible", "unbounded", "iteration-limit"
NUMERICAL_ERROR = "numerical-error"

log = logging.getLogger("pwabarrier")

FEAS_TOL = 1e-9
OPT_TOL = 1e-9
PIVOT_TOL = 1e-7
AUTO_SIMPLEX_MAX_ROWS = 300
HIGHS_IPM_MIN_ROWS = 50_000
LEX_WEIGHTS = (1e-4, 1e-7)  # perturbation weights tried before an explicit face constraint


class LPModelError(ValueError):
    pass


class LPModel:
    """Minimise ``c^T x`` subject to sparse ``<=`` / ``=`` rows and variable bounds.

    Rows are accumulated as COO chunks so that thousands of constraints can
    be appended with a handful of numpy calls.
    """

    def __init__(self):
        self.names: list[str] = []
        self._lb: list[float] = []
        self._ub: list[float] = []
        self._obj: dict[int, float] = {}
        self._chunks: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []
        self._senses: list[np.ndarray] = []
        self._rhs: list[np.ndarray] = []
        self._row_names: list[str] = []
        self.n_rows = 0

    # -- variables --------------------------------------------------------

    @property
    def n_vars(self) -> int:
        return len(self.names)

    def add_var(self, name: str, lb: float = 0.0, ub: float = math.inf, obj: float = 0.0) -> int:
        if lb > ub:
            raise LPModelError(f"variable {name}: lower bound {lb} exceeds upper bound {ub}")
        self.names.append(name)
        self._lb.append(float(lb))
        self._ub.append(float(ub))
        k = len(self.names) - 1
        if obj:
            self._obj[k] = float(obj)
        return k

    def add_vars(self, prefix: str, count: int, lb: float = 0.0, ub: float = math.inf) -> np.ndarray:
        start = self.n_vars
        self.names.extend(f"{prefix}{k}" for k in range(count))
        self._lb.extend([float(lb)] * count)
        self._ub.extend([float(ub)] * count)
        return np.arange(start, start + count)

    def set_objective(self, coeffs: dict[int, float]) -> None:
        self._check_ids(coeffs.keys())
        self._obj = {int(k): float(v) for k, v in coeffs.items() if v != 0}

    @property
    def lb(self) -> np.ndarray:
        return np.array(self._lb)

    @property
    def ub(self) -> np.ndarray:
        return np.array(self._ub)

    @property
    def objective(self) -> np.ndarray:
        c = np.zeros(self.n_vars)
        for k, v in self._obj.items():
            c[k] = v
        return c

    # -- constraints ------------------------------------------------------

    def _check_ids(self, ids) -> None:
        ids = np.fromiter(ids, dtype=np.int64) if not isinstance(ids, np.ndarray) else ids
        if ids.size and (ids.min() < 0 or ids.max() >= self.n_vars):
            raise LPModelError(f"constraint references unknown variable id (have {self.n_vars})")

    def add_constraint(self, coeffs: dict[int, float], sense: str, rhs: float, name: str = "") -> int:
        cols = np.fromiter(coeffs.keys(), dtype=np.int64, count=len(coeffs))
        vals = np.fromiter(coeffs.values(), dtype=float, count=len(coeffs))
        self.add_rows(np.zeros(len(cols), dtype=np.int64), cols, vals, [sense], [rhs],
                      names=[name] if name else None)
        return self.n_rows - 1

    def add_rows(self, rows, cols, vals, senses, rhs, names: Optional[Sequence[str]] = None) -> np.ndarray:
        """Append a block of rows given in COO form with block-local row ids."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=float)
        rhs = np.atleast_1d(np.asarray(rhs, dtype=float))
        m = rhs.size
        senses = np.broadcast_to(np.asarray(senses, dtype=object), (m,))
        if not (rows.shape == cols.shape == vals.shape):
            raise LPModelError("rows, cols and vals must have equal length")
        if rows.size and (rows.min() < 0 or rows.max() >= m):
            raise LPModelError("block-local row id out of range")
        if not np.all(np.isfinite(vals)) or not np.all(np.isfinite(rhs)):
            raise LPModelError("constraint coefficients must be finite")
        if not set(senses.tolist()) <= {LE, EQ}:
            raise LPModelError(f"unknown sense in {set(senses.tolist())}")
        self._check_ids(cols)
        keep = vals != 0
        self._chunks.append((rows[keep] + self.n_rows, cols[keep], vals[keep]))
        self._senses.append(np.array(senses, dtype=object))
        self._rhs.append(rhs)
        if names is not None:
            self._row_names.extend(names)
        else:
            self._row_names.extend([""] * m)
        out = np.arange(self.n_rows, self.n_rows + m)
        self.n_rows += m
        return out

    def matrix(self) -> tuple[sp.csr_matrix, np.ndarray, np.ndarray]:
        """``(A, senses, rhs)`` with duplicate entries summed."""
        if self._chunks:
            r = np.concatenate([c[0] for c in self._chunks])
            c = np.concatenate([c[1] for c in self._chunks])
            v = np.concatenate([c[2] for c in self._chunks])
            senses = np.concatenate(self._senses)
            rhs = np.concatenate(self._rhs)
        else:
            r = c = np.zeros(0, dtype=np.int64)
            v = np.zeros(0)
            senses = np.zeros(0, dtype=object)
            rhs = np.zeros(0)
        A = sp.csr_matrix((v, (r, c)), shape=(self.n_rows, self.n_vars))
        A.sum_duplicates()
        return A, senses, rhs

    def row_name(self, k: int) -> str:
        return self._row_names[k] or f"r{k}"

    def violation(self, x) -> float:
        """Largest bound or row violation of point ``x``."""
        x = np.asarray(x, dtype=float)
        A, senses, rhs = self.matrix()
        ax = A @ x
        worst = 0.0
        if ax.size:
            le = senses == LE
            worst = max(worst, float(np.max(np.where(le, ax - rhs, np.abs(ax - rhs)), initial=0.0)))
        worst = max(worst, float(np.max(self.lb - x, initial=0.0)), float(np.max(x - self.ub, initial=0.0)))
        return worst

    def to_lp_text(self) -> str:
        """CPLEX LP format; every variable gets an explicit bound line."""

        def term(coef, name, first):
            sign = "-" if coef < 0 else ("" if first else "+")
            return f"{sign} {abs(coef):.17g} {name}".strip() if first else f" {sign} {abs(coef):.17g} {name}"

        def safe(name):
            return name.replace(" ", "_")

        names = [safe(n) for n in self.names]
        lines = ["Minimize"]
        obj = self.objective
        parts = [term(obj[k], names[k], i == 0) for i, k in enumerate(np.flatnonzero(obj))]
        lines.append(" obj: " + ("".join(parts) if parts else "0 " + names[0] if names else "0"))
        lines.append("Subject To")
        A, senses, rhs = self.matrix()
        for k in range(A.shape[0]):
            lo, hi = A.indptr[k], A.indptr[k + 1]
            cols, vals = A.indices[lo:hi], A.data[lo:hi]
            order = np.argsort(cols)
            body = "".join(term(vals[o], names[cols[o]], i == 0) for i, o in enumerate(order))
            if not body:
                body = f"0 {names[0]}"
            op = "<=" if senses[k] == LE else "="
            lines.append(f" {safe(self.row_name(k))}: {body} {op} {rhs[k]:.17g}")
        lines.append("Bounds")
        for name, lb, ub in zip(names, self._lb, self._ub):
            if math.isinf(lb) and math.isinf(ub):
                lines.append(f" {name} free")
            else:
                lo = "-inf" if math.isinf(lb) else f"{lb:.17g}"
                up = "+inf" if math.isinf(ub) else f"{ub:.17g}"
                lines.append(f" {lo} <= {name} <= {up}")
        lines.append("End")
        return "\n".join(lines) + "\n"

    def write_lp(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_lp_text())


@dataclass
class LPSolution:
    status: str
    objective: float
    x: np.ndarray
    duals: Optional[np.ndarray] = None
    iterations: int = 0
    time: float = 0.0
    backend: str = ""
    info: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


# ---------------------------------------------------------------------------
# bounded-variable revised simplex


class _Simplex:
    """Dense revised simplex on ``A x = b, l <= x <= u`` (slacks already added)."""

    REFACTOR_EVERY = 50
    STALL_LIMIT = 50

    def __init__(self, A: np.ndarray, b: np.ndarray, lb: np.ndarray, ub: np.ndarray, max_iter: int):
        self.A, self.b, self.lb, self.ub = A, b, lb, ub
        self.m, self.n = A.shape
        self.max_iter = max_iter
        self.iterations = 0

    def _refactor(self):
        self.Binv = np.linalg.inv(self.A[:, self.basis])
        self._recompute_xb()

    def _recompute_xb(self):
        xN = self.x.copy()
        xN[self.basis] = 0.0
        self.x[self.basis] = self.Binv @ (self.b - self.A @ xN)

    def run(self, c: np.ndarray) -> str:
        """Iterate from the current basis until optimal for cost ``c``."""
        try:
            return self._run(c)
        except np.linalg.LinAlgError:
            return NUMERICAL_ERROR

    def _run(self, c: np.ndarray) -> str:
        since_refactor = 0
        stall = 0
        bland = False
        while True:
            if self.iterations >= self.max_iter:
                return ITERATION_LIMIT
            y = c[self.basis] @ self.Binv
            d = c - y @ self.A
            d[self.basis] = 0.0
            at_lb = np.isclose(self.x, self.lb, rtol=0, atol=FEAS_TOL) & np.isfinite(self.lb)
            at_ub = np.isclose(self.x, self.ub, rtol=0, atol=FEAS_TOL) & np.isfinite(self.ub)
            nonbasic = np.ones(self.n, dtype=bool)
            nonbasic[self.basis] = False
            can_up = nonbasic & ~at_ub & (d < -OPT_TOL)
            can_down = nonbasic & ~at_lb & (d > OPT_TOL)
            fixed = self.lb == self.ub
            eligible = (can_up | can_down) & ~fixed
            if not eligible.any():
                self.duals = y
                return OPTIMAL
            cand = np.flatnonzero(eligible)
            if bland:
                j = int(cand[0])
            else:
                score = np.abs(d[cand])
                j = int(cand[np.flatnonzero(score >= score.max() * (1 - 1e-12))[0]])
            direction = 1.0 if can_up[j] else -1.0

            w = self.Binv @ self.A[:, j]
            xb = self.x[self.basis]
            lb_b, ub_b = self.lb[self.basis], self.ub[self.basis]
            step = direction * w  # basic vars change by -theta * step
            # Harris two-pass ratio test: bound the step with slightly relaxed
            # bounds, then take the largest pivot among the admissible rows
            dec = step > PIVOT_TOL
            inc = step < -PIVOT_TOL
            relaxed = np.full(self.m, np.inf)
            with np.errstate(invalid="ignore", divide="ignore"):
                relaxed[dec] = (xb[dec] - lb_b[dec] + FEAS_TOL) / step[dec]
                relaxed[inc] = (ub_b[inc] - xb[inc] + FEAS_TOL) / -step[inc]
            # a basic variable that drifted past its bound must not yield a negative step
            theta_max = max(relaxed.min(), 0.0) if self.m else np.inf
            flip = self.ub[j] - self.lb[j]
            if flip <= theta_max:
                if not math.isfinite(flip):
                    return UNBOUNDED
                theta = flip
                leave = -1
            else:
                exact = np.full(self.m, np.inf)
                with np.errstate(invalid="ignore", divide="ignore"):
                    exact[dec] = np.maximum(xb[dec] - lb_b[dec], 0.0) / step[dec]
                    exact[inc] = np.maximum(ub_b[inc] - xb[inc], 0.0) / -step[inc]
                ties = np.flatnonzero(exact <= theta_max)
                if bland:
                    leave = int(ties[np.argmin(self.basis[ties])])
                else:
                    leave = int(ties[np.argmax(np.abs(w[ties]))])
                theta = exact[leave]

            self.iterations += 1
            self.x[self.basis] = xb - theta * step
            self.x[j] += direction * theta
            if leave >= 0:
                out = self.basis[leave]
                self.x[out] = lb_b[leave] if step[leave] > 0 else ub_b[leave]
                self.basis[leave] = j
                piv = w[leave]
                row = self.Binv[leave] / piv
                self.Binv -= np.outer(w, row)
                self.Binv[leave] = row
                since_refactor += 1
                if since_refactor >= self.REFACTOR_EVERY:
                    self._refactor()
                    since_refactor = 0
            if theta <= 1e-12:
                stall += 1
                if stall >= self.STALL_LIMIT:
                    bland = True
            else:
                stall = 0
                bland = False


def _solve_simplex(model: LPModel, max_iter: int = 50000) -> LPSolution:
    t0 = time.perf_counter()
    A_s, senses, rhs = model.matrix()
    m, n = A_s.shape
    le = np.flatnonzero(senses == LE)
    A = np.zeros((m, n + le.size))
    A[:, :n] = A_s.toarray()
    A[le, n + np.arange(le.size)] = 1.0
    lb = np.concatenate([model.lb, np.zeros(le.size)])
    ub = np.concatenate([model.ub, np.full(le.size, np.inf)])
    c = np.concatenate([model.objective, np.zeros(le.size)])
    nt = n + le.size

    x = np.zeros(nt + m)
    for j in range(nt):
        if math.isfinite(lb[j]):
            x[j] = lb[j]
        elif math.isfinite(ub[j]):
            x[j] = ub[j]
    resid = rhs - A @ x[:nt]
    sign = np.where(resid >= 0, 1.0, -1.0)
    s = _Simplex(np.hstack([A, np.diag(sign)]), rhs.astype(float),
                 np.concatenate([lb, np.zeros(m)]), np.concatenate([ub, np.full(m, np.inf)]), max_iter)
    x[nt:] = np.abs(resid)
    s.x = x
    s.basis = np.arange(nt, nt + m)
    s.Binv = np.diag(sign)

    phase1 = np.concatenate([np.zeros(nt), np.ones(m)])
    status = s.run(phase1)
    if status != OPTIMAL:
        return LPSolution(status, math.nan, x[:n].copy(), None, s.iterations, time.perf_counter() - t0, "simplex")
    infeas = float(s.x[nt:].sum())
    if infeas > 1e-7 * max(1.0, float(np.abs(rhs).max(initial=0.0))):
        return LPSolution(INFEASIBLE, math.nan, s.x[:n].copy(), None, s.iterations,
                          time.perf_counter() - t0, "simplex")
    # artificials stay in the basis only at level zero; pin them there
    s.ub[nt:] = 0.0
    s.x[nt:] = 0.0
    s._recompute_xb()
    status = s.run(np.concatenate([c, np.zeros(m)]))
    xs = s.x[:n].copy()
    obj = float(model.objective @ xs) if status == OPTIMAL else math.nan
    duals = s.duals.copy() if status == OPTIMAL else None
    return LPSolution(status, obj, xs, duals, s.iterations, time.perf_counter() - t0, "simplex")


def _solve_highs(model: LPModel) -> LPSolution:
    from scipy.optimize import linprog

    t0 = time.perf_counter()
    A, senses, rhs = model.matrix()
    le = senses == LE
    eq = ~le
    kwargs = {}
    if le.any():
        kwargs.update(A_ub=A[np.flatnonzero(le)], b_ub=rhs[le])
    if eq.any():
        kwargs.update(A_eq=A[np.flatnonzero(eq)], b_eq=rhs[eq])
    bounds = np.column_stack([model.lb, model.ub])
    bounds = [(None if math.isinf(a) else a, None if math.isinf(b) else b) for a, b in bounds]
    # dual simplex stalls on some large certificate LPs where IPM with crossover does not
    methods = ("highs-ipm", "highs-ds") if model.n_rows > HIGHS_IPM_MIN_ROWS else ("highs", "highs-ipm")
    for method in methods:
        res = linprog(model.objective, bounds=bounds, method=method,
                      options={"primal_feasibility_tolerance": 1e-9, "dual_feasibility_tolerance": 1e-9},
                      **kwargs)
        status = {0: OPTIMAL, 1: ITERATION_LIMIT, 2: INFEASIBLE, 3: UNBOUNDED}.get(res.status, NUMERICAL_ERROR)
        log.debug("highs %s: %s after %.1fs", method, status, time.perf_counter() - t0)
        if status in (OPTIMAL, INFEASIBLE, UNBOUNDED):
            break
    elapsed = time.perf_counter() - t0
    if status != OPTIMAL:
        return LPSolution(status, math.nan, np.full(model.n_vars, math.nan), None,
                          int(getattr(res, "nit", 0) or 0), elapsed, "highs", {"message": res.message})
    duals = np.zeros(model.n_rows)
    if le.any():
        duals[le] = res.ineqlin.marginals
    if eq.any():
        duals[eq] = res.eqlin.marginals
    return LPSolution(OPTIMAL, float(res.fun), np.asarray(res.x), duals, int(res.nit), elapsed, "highs")


BACKENDS = ("auto", "simplex", "highs")


def solve(model: LPModel, backend: str = "auto", max_iter: int = 50000) -> LPSolution:
    """Solve ``model``. ``auto`` uses the built-in simplex for small models."""
    if backend not in BACKENDS:
        raise ValueError(f"unknown LP backend {backend!r}; choose from {BACKENDS}")
    if model.n_vars == 0:
        raise LPModelError("model has no variables")
    if backend == "auto":
        backend = "simplex" if model.n_rows <= AUTO_SIMPLEX_MAX_ROWS else "highs"
    if backend == "simplex":
        return _solve_simplex(model, max_iter)
    return _solve_highs(model)


def _value(obj: dict[int, float], x: np.ndarray) -> float:
    return float(sum(coef * x[k] for k, coef in obj.items()))


def solve_lexicographic(model: LPModel, secondary: Sequence[dict[int, float]], backend: str = "auto",
                        rel_tol: float = 1e-9) -> LPSolution:
    """Optimise, then optimise each secondary objective over the optimal face.

    A stage first tries the previous objective plus a small multiple of the
    new one. If that optimum still attains the previous optimal value it is
    exactly the lexicographic optimum, and the LP keeps its interior (which
    interior-point solvers need). Otherwise the face is imposed as a
    constraint, with relative slack ``rel_tol``, and the new objective is
    minimised on it.
    """
    first = solve(model, backend)
    if not first.optimal or not secondary:
        return first
    work = _copy(model)
    prev_obj, prev_val = dict(model._obj), first.objective
    sol = first
    total_iter, total_time = first.iterations, first.time
    lb, ub = model.lb, model.ub
    for obj in secondary:
        slack = rel_tol * max(1.0, abs(prev_val))
        current = _value(obj, sol.x)
        floor = sum(coef * (lb[k] if coef > 0 else ub[k]) for k, coef in obj.items() if coef)
        nxt = None
        if current <= floor + rel_tol * max(1.0, abs(floor)):
            # already at the bound-implied minimum, so optimal on the face as well
            nxt = sol
        for weight in LEX_WEIGHTS:
            if nxt is not None:
                break
            combined = dict(prev_obj)
            for k, coef in obj.items():
                combined[k] = combined.get(k, 0.0) + weight * coef
            work.set_objective(combined)
            trial = solve(work, backend)
            total_iter += trial.iterations
            total_time += trial.time
            if trial.optimal and _value(prev_obj, trial.x) <= prev_val + slack:
                nxt = trial
        work.add_constraint(prev_obj, LE, prev_val + slack, name="lex_face")
        if nxt is None:
            work.set_objective(obj)
            nxt = solve(work, backend)
            total_iter += nxt.iterations
            total_time += nxt.time
        if not nxt.optimal:
            break
        sol = nxt
        prev_obj, prev_val = dict(obj), _value(obj, nxt.x)
    return LPSolution(sol.status, float(model.objective @ sol.x), sol.x, None, total_iter, total_time,
                      sol.backend, {"primary_objective": first.objective})


def _copy(model: LPModel) -> LPModel:
    m = LPModel()
    m.names = list(model.names)
    m._lb, m._ub = list(model._lb), list(model._ub)
    m._obj = dict(model._obj)
    m._chunks = list(model._chunks)
    m._senses = list(model._senses)
    m._rhs = list(model._rhs)
    m._row_names = list(model._row_names)
    m.n_rows = model.n_rows
    return m
