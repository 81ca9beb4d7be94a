"""Uniform solver layer for the two program classes the planners need.

Linear programs go to HiGHS (scipy). Relative-entropy programs -- linear
terms plus sums of w * x * log(x / y) with affine nonnegative denominators
y -- are exponential-cone representable and go to an interior-point conic
solver through cvxpy. Both paths honor the conventions 0*log(0) = 0 and
0*log(0/0) = 0 and report through the same SolveReport contract: a result
is only labeled optimal if its recomputed residuals pass the tolerance.
"""
from __future__ import annotations

import enum
import time
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog
from scipy.special import rel_entr

from .errors import SolverFailure, ValidationError

DEFAULT_TOL = 1e-6


class SolveStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    NUMERICAL_FAILURE = "numerical-failure"


@dataclass(frozen=True, eq=False)
class LinearProgram:
    """min (or max) c @ x  s.t.  A_eq x = b_eq,  A_ub x <= b_ub,  x >= lower."""

    objective: np.ndarray
    maximize: bool = False
    a_eq: sp.csr_matrix | None = None
    b_eq: np.ndarray | None = None
    a_ub: sp.csr_matrix | None = None
    b_ub: np.ndarray | None = None
    lower: np.ndarray | None = None

    @property
    def n(self) -> int:
        return len(self.objective)

    def lower_bounds(self) -> np.ndarray:
        return np.zeros(self.n) if self.lower is None else self.lower

    def validate(self):
        if self.objective.ndim != 1 or not np.all(np.isfinite(self.objective)):
            raise ValidationError("objective coefficients must be finite")
        for mat, vec, name in ((self.a_eq, self.b_eq, "equality"),
                               (self.a_ub, self.b_ub, "inequality")):
            if (mat is None) != (vec is None):
                raise ValidationError(f"{name} rows need both matrix and rhs")
            if mat is not None:
                if mat.shape != (len(vec), self.n):
                    raise ValidationError(f"{name} block has inconsistent shape")
                if not np.all(np.isfinite(mat.data)) or not np.all(np.isfinite(vec)):
                    raise ValidationError(f"{name} block has non-finite entries")
        if self.lower is not None:
            if self.lower.shape != (self.n,) or np.any(np.isnan(self.lower)):
                raise ValidationError("lower bounds misaligned or NaN")


@dataclass(frozen=True)
class EntropyTerm:
    """One contribution  weight * x[x_index] * log(x[x_index] / y)  where
    y = y_const + sum(coef * x[j] for j, coef in y_coeffs) is affine and
    constrained nonnegative.  ``row=None`` adds the term to the objective,
    otherwise to the left side of inequality row ``row``.
    """

    weight: float
    x_index: int
    y_coeffs: tuple[tuple[int, float], ...] = ()
    y_const: float = 0.0
    row: int | None = None


@dataclass(frozen=True, eq=False)
class RelativeEntropyProgram:
    base: LinearProgram
    terms: tuple[EntropyTerm, ...] = ()

    def validate(self):
        self.base.validate()
        if self.base.maximize and any(t.row is None for t in self.terms):
            raise ValidationError("entropy terms in the objective require minimization")
        n_ub = 0 if self.base.b_ub is None else len(self.base.b_ub)
        for t in self.terms:
            if t.weight < 0 or not np.isfinite(t.weight):
                raise ValidationError("entropy weights must be nonnegative")
            if not (0 <= t.x_index < self.base.n):
                raise ValidationError("entropy numerator index out of range")
            if t.row is not None and not (0 <= t.row < n_ub):
                raise ValidationError("entropy term attached to a missing row")


@dataclass(frozen=True, eq=False)
class SolveReport:
    status: SolveStatus
    objective: float
    x: np.ndarray | None
    max_equality_violation: float
    max_cone_violation: float
    iterations: int
    wall_time: float

    def stats(self) -> dict:
        return {
            "status": self.status.value,
            "objective": None if not np.isfinite(self.objective) else float(self.objective),
            "max_equality_violation": float(self.max_equality_violation),
            "max_cone_violation": float(self.max_cone_violation),
            "iterations": int(self.iterations),
        }


def _entropy_value(x: np.ndarray, terms: Sequence[EntropyTerm], row: int | None) -> float:
    total = 0.0
    for t in terms:
        if t.row != row or t.weight == 0.0:
            continue
        y = t.y_const + sum(c * x[j] for j, c in t.y_coeffs)
        # Floor the denominator so round-off like y = -1e-15 with x ~ 1e-9
        # yields a residual on the scale of x instead of +inf.
        total += t.weight * float(rel_entr(max(x[t.x_index], 0.0), max(y, 1e-300)))
    return total


def _residuals(p: LinearProgram, x: np.ndarray,
               terms: Sequence[EntropyTerm] = ()) -> tuple[float, float]:
    eq_viol = 0.0
    if p.a_eq is not None:
        eq_viol = float(np.max(np.abs(p.a_eq @ x - p.b_eq), initial=0.0))
    cone_viol = float(np.max(p.lower_bounds() - x, initial=0.0))
    if p.a_ub is not None:
        slack = p.a_ub @ x - p.b_ub
        for i in range(len(p.b_ub)):
            slack[i] += _entropy_value(x, terms, i)
        cone_viol = max(cone_viol, float(np.max(slack, initial=0.0)))
    return eq_viol, max(cone_viol, 0.0)


def _objective_value(p: LinearProgram, x: np.ndarray,
                     terms: Sequence[EntropyTerm] = ()) -> float:
    return float(p.objective @ x) + _entropy_value(x, terms, None)


_HIGHS_STATUS = {0: SolveStatus.OPTIMAL, 2: SolveStatus.INFEASIBLE,
                 3: SolveStatus.UNBOUNDED}


def solve_lp(p: LinearProgram, tol: float = DEFAULT_TOL, method: str = "highs") -> SolveReport:
    """Solve a linear program.

    ``method`` picks the backend: "highs" (simplex/IPM via scipy, the
    default) or "conic" (the same interior-point path used for entropy
    programs), which exists so results can be cross-checked by a second,
    independent implementation.
    """
    p.validate()
    if method == "conic":
        return solve_rep(RelativeEntropyProgram(base=p), tol=tol)
    if method != "highs":
        raise ValidationError(f"unknown LP method {method!r}")

    c = -p.objective if p.maximize else p.objective
    bounds = [(lb if np.isfinite(lb) else None, None) for lb in p.lower_bounds()]
    start = time.perf_counter()
    res = linprog(c, A_ub=p.a_ub, b_ub=p.b_ub, A_eq=p.a_eq, b_eq=p.b_eq,
                  bounds=bounds, method="highs")
    elapsed = time.perf_counter() - start

    status = _HIGHS_STATUS.get(res.status, SolveStatus.NUMERICAL_FAILURE)
    iterations = int(getattr(res, "nit", 0) or 0)
    if status is not SolveStatus.OPTIMAL or res.x is None:
        return SolveReport(status=status, objective=float("nan"), x=None,
                           max_equality_violation=float("nan"),
                           max_cone_violation=float("nan"),
                           iterations=iterations, wall_time=elapsed)
    x = np.asarray(res.x, dtype=float)
    eq_viol, cone_viol = _residuals(p, x)
    if max(eq_viol, cone_viol) > tol:
        status = SolveStatus.NUMERICAL_FAILURE
    return SolveReport(status=status, objective=_objective_value(p, x), x=x,
                       max_equality_violation=eq_viol,
                       max_cone_violation=cone_viol,
                       iterations=iterations, wall_time=elapsed)


def _cvxpy_status(status: str) -> SolveStatus:
    if status in ("optimal", "optimal_inaccurate"):
        return SolveStatus.OPTIMAL
    if status in ("infeasible", "infeasible_inaccurate"):
        return SolveStatus.INFEASIBLE
    if status in ("unbounded", "unbounded_inaccurate"):
        return SolveStatus.UNBOUNDED
    return SolveStatus.NUMERICAL_FAILURE


def _grouped_entropy(v, terms: Sequence[EntropyTerm], row: int | None, n: int):
    """cvxpy expression for the entropy terms attached to one target."""
    import cvxpy as cp

    group = [t for t in terms if t.row == row and t.weight > 0]
    if not group:
        return None
    m = len(group)
    sel = sp.lil_matrix((m, n))
    ymat = sp.lil_matrix((m, n))
    yconst = np.zeros(m)
    w = np.zeros(m)
    for i, t in enumerate(group):
        sel[i, t.x_index] = 1.0
        for j, coef in t.y_coeffs:
            ymat[i, j] += coef
        yconst[i] = t.y_const
        w[i] = t.weight
    num = sel.tocsr() @ v
    den = ymat.tocsr() @ v + yconst
    return cp.sum(cp.multiply(w, cp.rel_entr(num, den)))


def solve_rep(p: RelativeEntropyProgram | LinearProgram,
              tol: float = DEFAULT_TOL) -> SolveReport:
    """Solve a relative-entropy program via an exponential-cone conic solver."""
    import cvxpy as cp

    if isinstance(p, LinearProgram):
        p = RelativeEntropyProgram(base=p)
    p.validate()
    base, terms = p.base, p.terms
    n = base.n

    v = cp.Variable(n)
    constraints = []
    lb = base.lower_bounds()
    finite = np.isfinite(lb)
    if finite.any():
        constraints.append(v[np.flatnonzero(finite)] >= lb[finite])
    if base.a_eq is not None:
        constraints.append(base.a_eq @ v == base.b_eq)
    if base.a_ub is not None:
        for i in range(len(base.b_ub)):
            lhs = base.a_ub[i] @ v
            ent = _grouped_entropy(v, terms, i, n)
            if ent is not None:
                lhs = lhs + ent
            constraints.append(lhs <= base.b_ub[i])

    lin = base.objective @ v
    ent = _grouped_entropy(v, terms, None, n)
    if ent is not None:
        lin = lin + ent
    objective = cp.Maximize(lin) if base.maximize else cp.Minimize(lin)
    problem = cp.Problem(objective, constraints)

    # Entropy objectives are flat near their optimum, so the primal error
    # scales like sqrt(gap); ask for far more gap than the 1e-6 contract.
    clarabel_opts = dict(tol_gap_abs=min(1e-11, tol * 1e-5),
                         tol_gap_rel=min(1e-11, tol * 1e-5),
                         tol_feas=min(1e-10, tol * 1e-4))
    start = time.perf_counter()
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="Solution may be inaccurate")
        try:
            problem.solve(solver=cp.CLARABEL, **clarabel_opts)
        except (cp.error.SolverError, ValueError):
            try:
                problem.solve(solver=cp.SCS, eps=min(tol * 1e-2, 1e-7),
                              max_iters=200_000)
            except (cp.error.SolverError, ValueError) as exc:
                raise SolverFailure(f"conic solve failed: {exc}") from exc
    elapsed = time.perf_counter() - start

    status = _cvxpy_status(problem.status)
    stats_obj = getattr(problem, "solver_stats", None)
    iterations = int(getattr(stats_obj, "num_iters", 0) or 0)
    if status is not SolveStatus.OPTIMAL or v.value is None:
        return SolveReport(status=status, objective=float("nan"), x=None,
                           max_equality_violation=float("nan"),
                           max_cone_violation=float("nan"),
                           iterations=iterations, wall_time=elapsed)
    x = np.asarray(v.value, dtype=float).reshape(-1)
    # Interior-point answers can sit a hair outside the box; snap violations
    # within tolerance onto the bounds before judging residuals.
    bound_viol = float(np.max(lb - x, initial=0.0))
    if 0.0 < bound_viol <= tol:
        x = np.maximum(x, lb)
    eq_viol, cone_viol = _residuals(base, x, terms)
    if max(eq_viol, cone_viol) > tol:
        status = SolveStatus.NUMERICAL_FAILURE
    return SolveReport(status=status, objective=_objective_value(base, x, terms),
                       x=x, max_equality_violation=eq_viol,
                       max_cone_violation=cone_viol,
                       iterations=iterations, wall_time=elapsed)


def dump_program(p: RelativeEntropyProgram | LinearProgram) -> str:
    """Plain-text coefficient dump for cross-checking against external solvers."""
    if isinstance(p, RelativeEntropyProgram):
        base, terms = p.base, p.terms
    else:
        base, terms = p, ()
    lines = ["maximize" if base.maximize else "minimize"]
    lines.append("obj " + " ".join(f"{j}:{c:.17g}" for j, c in enumerate(base.objective) if c))
    lb = base.lower_bounds()
    lines.append("lb " + " ".join(f"{j}:{b:.17g}" for j, b in enumerate(lb) if b != 0.0))
    for kind, mat, vec in (("eq", base.a_eq, base.b_eq), ("ub", base.a_ub, base.b_ub)):
        if mat is None:
            continue
        mat = mat.tocsr()
        for i in range(len(vec)):
            row = mat.getrow(i)
            body = " ".join(f"{j}:{c:.17g}" for j, c in zip(row.indices, row.data))
            lines.append(f"{kind} {i} {body} : {vec[i]:.17g}")
    for t in terms:
        where = "obj" if t.row is None else f"ub {t.row}"
        den = " ".join(f"{j}:{c:.17g}" for j, c in t.y_coeffs)
        lines.append(f"entropy {where} w={t.weight:.17g} x={t.x_index} "
                     f"y={t.y_const:.17g} {den}")
    return "\n".join(lines) + "\n"
