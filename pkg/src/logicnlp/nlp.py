"""Problem assembly, a primal-dual interior-point solver, and multistart.

Problems are ``min f(x)`` subject to ``c_E(x) == 0``, ``c_I(x) <= 0`` and
``lower <= x <= upper``.  The solver follows the usual barrier recipe:
slacks for the inequalities, a log barrier on slacks and bounds with a
monotonically decreasing barrier parameter, Newton steps on the
primal-dual system using the exact Lagrangian Hessian (or a damped BFGS
model on request), fraction-to-boundary step limits, and a filter line
search with second-order corrections and a feasibility restoration phase.
Starting points are first moved onto the equality constraints by a damped
least-norm Gauss-Newton projection.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.linalg import lapack

from . import expr as ex
from .expr import CompiledBatch, DomainError, Expr
from .logic import (
    ETA_BOUNDS,
    CnfProgram,
    Formula,
    StrictnessMode,
    compile_formula,
    eval_bool,
)
from .reform import LogicConstraints, ReformConfig, reformulate

__all__ = [
    "Problem",
    "AssembledNlp",
    "assemble",
    "build",
    "SolverOptions",
    "LagrangianHessian",
    "Status",
    "SolveOutcome",
    "solve",
    "kkt_residuals",
    "multistart",
    "RunClass",
    "classify",
    "best_feasible_cost",
    "certified",
]

log = logging.getLogger(__name__)


@dataclass
class Problem:
    """Smooth base problem before any logic is attached.

    ``init_lower``/``init_upper`` are the boxes random starting points are
    drawn from; they default to the bounds and must be finite before
    multistart is used.
    """

    names: list[str]
    objective: Expr
    lower: np.ndarray
    upper: np.ndarray
    inequalities: list[Expr] = field(default_factory=list)
    equalities: list[Expr] = field(default_factory=list)
    init_lower: np.ndarray | None = None
    init_upper: np.ndarray | None = None

    def __post_init__(self) -> None:
        n = len(self.names)
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        if self.lower.shape != (n,) or self.upper.shape != (n,):
            raise ValueError("bounds must have one entry per variable")
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound exceeds upper bound")
        self.init_lower = self.lower.copy() if self.init_lower is None else np.asarray(self.init_lower, float)
        self.init_upper = self.upper.copy() if self.init_upper is None else np.asarray(self.init_upper, float)
        top = ex.max_var_index([self.objective, *self.inequalities, *self.equalities])
        if top >= n:
            raise ValueError(f"expression references variable {top} but only {n} declared")

    @property
    def n(self) -> int:
        return len(self.names)


@dataclass
class AssembledNlp:
    """Binary-free problem over ``(z, eta, logic auxiliaries)``.

    Variable order is the base variables, then eta variables for strict
    inequalities, then the simplex weights (or baseline auxiliaries) block
    by block in clause order.  Equalities are the base ones followed by the
    logic ones; likewise for inequalities.
    """

    names: list[str]
    lower: np.ndarray
    upper: np.ndarray
    init_lower: np.ndarray
    init_upper: np.ndarray
    objective: Expr
    equalities: list[Expr]
    inequalities: list[Expr]
    n_base: int = 0
    n_eta: int = 0
    n_g: int = 0
    n_h: int = 0
    logic: LogicConstraints | None = None
    cnf: CnfProgram | None = None
    formula: Formula | None = None
    _compiled: tuple | None = field(default=None, repr=False, compare=False)
    _hessian: "LagrangianHessian | None" = field(default=None, repr=False, compare=False)
    _affine: tuple | None = field(default=None, repr=False, compare=False)

    @property
    def n(self) -> int:
        return len(self.names)

    def compiled(self) -> tuple[CompiledBatch, CompiledBatch, CompiledBatch]:
        """(objective, equalities, inequalities) as compiled batches, built once."""
        if self._compiled is None:
            self._compiled = (
                CompiledBatch([self.objective], self.n),
                CompiledBatch(self.equalities, self.n),
                CompiledBatch(self.inequalities, self.n),
            )
        return self._compiled

    def hessian(self) -> "LagrangianHessian":
        """Compiled second derivatives of the Lagrangian, built once."""
        if self._hessian is None:
            self._hessian = LagrangianHessian([self.objective, *self.equalities, *self.inequalities], self.n)
        return self._hessian

    def affine_equalities(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Equalities with constant gradients as ``(mask, A, c)``.

        ``mask`` flags the affine rows among all equalities; those rows read
        ``A @ x + c == 0``.
        """
        if self._affine is None:
            mask = np.zeros(len(self.equalities), dtype=bool)
            rows, consts = [], []
            zero = np.zeros(self.n)
            for i, e in enumerate(self.equalities):
                d = ex.derivatives(e)
                if all(v.op == "const" for v in d.values()):
                    mask[i] = True
                    a = np.zeros(self.n)
                    for j, v in d.items():
                        a[j] = v.value
                    rows.append(a)
                    consts.append(ex.evaluate(e, zero))
            A = np.array(rows) if rows else np.zeros((0, self.n))
            self._affine = (mask, A, np.array(consts, dtype=float))
        return self._affine

    def counts(self) -> dict[str, int]:
        """Constraint counts with simplex bounds counted as inequalities.

        ``g_star`` adds one inequality per simplex weight to the explicit
        inequalities; ``h_star`` is the explicit equality count.
        """
        n_lam = sum(b.size for b in self.logic.blocks) if self.logic is not None else 0
        return {
            "n_g": self.n_g,
            "n_h": self.n_h,
            "g_star": len(self.inequalities) + n_lam,
            "h_star": len(self.equalities),
            "n_lambda": n_lam,
            "n_blocks": len(self.logic.blocks) if self.logic is not None else 0,
        }

    def violation(self, x: np.ndarray) -> float:
        """Largest violation of equalities, inequalities and bounds at ``x``."""
        _, ceq, cin = self.compiled()
        v = 0.0
        if ceq.m:
            v = max(v, float(np.max(np.abs(ceq.values(x)))))
        if cin.m:
            v = max(v, float(np.max(cin.values(x))))
        v = max(v, float(np.max(self.lower - x, initial=0.0)), float(np.max(x - self.upper, initial=0.0)))
        return v

    def objective_value(self, x: np.ndarray) -> float:
        return float(self.compiled()[0].values(x)[0])


def assemble(base: Problem, logic: LogicConstraints | None = None, n_eta: int = 0) -> AssembledNlp:
    """Append eta variables and the logic constraint set to ``base``."""
    n0 = base.n
    names = list(base.names) + [f"eta{i}" for i in range(n_eta)]
    lo = list(base.lower) + [ETA_BOUNDS[0]] * n_eta
    hi = list(base.upper) + [ETA_BOUNDS[1]] * n_eta
    ilo = list(base.init_lower) + [ETA_BOUNDS[0]] * n_eta
    ihi = list(base.init_upper) + [ETA_BOUNDS[1]] * n_eta
    eqs = list(base.equalities)
    ineqs = list(base.inequalities)
    if logic is not None:
        if logic.offset != n0 + n_eta:
            raise ValueError(
                f"logic auxiliaries start at {logic.offset}, expected {n0 + n_eta}"
            )
        names += logic.names
        lo += logic.lower
        hi += logic.upper
        ilo += logic.init_lower
        ihi += logic.init_upper
        eqs += logic.equalities
        ineqs += logic.inequalities
    n = len(names)
    top = ex.max_var_index([base.objective, *eqs, *ineqs])
    if top >= n:
        raise ValueError(f"constraint references variable {top} but only {n} exist")
    return AssembledNlp(
        names=names,
        lower=np.array(lo, float),
        upper=np.array(hi, float),
        init_lower=np.array(ilo, float),
        init_upper=np.array(ihi, float),
        objective=base.objective,
        equalities=eqs,
        inequalities=ineqs,
        n_base=n0,
        n_eta=n_eta,
        n_g=len(base.inequalities),
        n_h=len(base.equalities),
        logic=logic,
    )


def build(
    base: Problem,
    formula: Formula | None = None,
    strictness: StrictnessMode | None = None,
    config: ReformConfig | None = None,
    clause_limit: int = 10_000,
) -> AssembledNlp:
    """Full pipeline: logic passes, CNF, reformulation, assembly."""
    if formula is None:
        return assemble(base)
    config = ReformConfig() if config is None else config
    cnf, n_eta = compile_formula(formula, strictness, base.n, clause_limit)
    logic = reformulate(cnf, config, base.n + n_eta)
    nlp = assemble(base, logic, n_eta)
    nlp.cnf = cnf
    nlp.formula = formula
    return nlp


# -- solver ----------------------------------------------------------------


class Status(str, Enum):
    LOCAL_OPTIMUM = "LocalOptimum"
    FEASIBLE_POINT = "FeasiblePoint"
    INFEASIBLE = "Infeasible"
    ITERATION_LIMIT = "IterationLimit"


@dataclass(frozen=True)
class SolverOptions:
    feas_tol: float = 1e-6
    opt_tol: float = 1e-6
    max_iter: int = 500
    mu_init: float = 0.1
    mu_linear: float = 0.2
    mu_superlinear: float = 1.5
    barrier_tol_factor: float = 10.0
    tau_min: float = 0.99
    bound_push: float = 1e-2
    hessian: str = "exact"  # or "bfgs"
    bound_relax: float = 1e-8
    project_start: bool = True

    def __post_init__(self) -> None:
        if self.hessian not in ("exact", "bfgs"):
            raise ValueError(f"hessian must be 'exact' or 'bfgs', got {self.hessian!r}")


@dataclass
class SolveOutcome:
    status: Status
    x: np.ndarray
    objective: float
    violation: float
    stationarity: float
    complementarity: float
    iterations: int
    time: float
    y_eq: np.ndarray = field(default_factory=lambda: np.zeros(0))
    y_ineq: np.ndarray = field(default_factory=lambda: np.zeros(0))
    z_lower: np.ndarray = field(default_factory=lambda: np.zeros(0))
    z_upper: np.ndarray = field(default_factory=lambda: np.zeros(0))
    message: str = ""
    run: int = 0

    @property
    def feasible(self) -> bool:
        return self.status in (Status.LOCAL_OPTIMUM, Status.FEASIBLE_POINT)


class LagrangianHessian:
    """Dense ``sum_i w_i * Hess f_i(x)`` for a fixed list of functions.

    Symbolic first derivatives are compiled as one batch whose Jacobian
    supplies the second derivatives.
    """

    def __init__(self, funcs: Sequence[Expr], n: int):
        owner, first, exprs = [], [], []
        for i, f in enumerate(funcs):
            for j, d in ex.derivatives(f).items():
                if d.op == "const":
                    continue
                owner.append(i)
                first.append(j)
                exprs.append(d)
        self.n = n
        self.batch = CompiledBatch(exprs, n)
        self.owner = np.asarray(owner, dtype=np.intp)
        self.first = np.asarray(first, dtype=np.intp)

    def matrix(self, x: np.ndarray, weights: np.ndarray) -> np.ndarray:
        H = np.zeros((self.n, self.n))
        if self.batch.m:
            vals = self.batch.jacobian(x)
            rows = self.batch.rows
            w = weights[self.owner[rows]] * vals
            np.add.at(H, (self.first[rows], self.batch.cols), w)
        return 0.5 * (H + H.T)


def _push_interior(x, lo, hi, push):
    x = np.clip(x, lo, hi)
    fl, fu = np.isfinite(lo), np.isfinite(hi)
    both = fl & fu
    pl = np.where(fl, push * np.maximum(1.0, np.abs(lo)), 0.0)
    pu = np.where(fu, push * np.maximum(1.0, np.abs(hi)), 0.0)
    width = np.where(both, hi - lo, np.inf)
    pl = np.minimum(pl, 0.5 * push * width) if np.any(both) else pl
    pu = np.minimum(pu, 0.5 * push * width) if np.any(both) else pu
    x = np.where(fl, np.maximum(x, lo + pl), x)
    x = np.where(fu, np.minimum(x, hi - pu), x)
    return x


def _project_equalities(ev: "_Evaluator", x, lo, hi, push, tol, iters=30):
    """Damped least-norm Gauss-Newton steps toward ``c_E(x) == 0`` inside the pushed box.

    Stops when the equalities hold to ``tol``, when no damped step lowers
    their l1 norm, or after ``iters`` steps.
    """
    x = _push_interior(x, lo, hi, push)
    if not ev.me:
        return x
    try:
        ce = ev.values(x)[1]
    except (DomainError, OverflowError):
        return x
    norm = float(np.abs(ce).sum())
    for _ in range(iters):
        if np.max(np.abs(ce)) <= tol:
            break
        try:
            Je = ev.derivatives(x)[1].toarray()
        except (DomainError, OverflowError):
            break
        dx = -np.linalg.lstsq(Je, ce, rcond=None)[0]
        alpha, moved = 1.0, False
        while alpha > 1e-4:
            xt = _push_interior(x + alpha * dx, lo, hi, push)
            try:
                ct = ev.values(xt)[1]
            except (DomainError, OverflowError):
                alpha *= 0.5
                continue
            nt = float(np.abs(ct).sum())
            if nt < (1 - 1e-4 * alpha) * norm:
                x, ce, norm, moved = xt, ct, nt, True
                break
            alpha *= 0.5
        if not moved:
            break
    return x


def _ftb(v, dv, tau):
    """Largest step in (0, 1] keeping ``v + a*dv >= (1 - tau) * v``."""
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-tau * v[neg] / dv[neg])))


class _Evaluator:
    def __init__(self, nlp: AssembledNlp, relax: float = 0.0):
        self.relax = relax
        self.fobj, self.ceq, self.cin = nlp.compiled()
        self.n = nlp.n
        self.me = self.ceq.m
        self.mi = self.cin.m

    def values(self, x):
        f = float(self.fobj.values(x)[0])
        ce = self.ceq.values(x) if self.me else np.zeros(0)
        ci = self.cin.values(x) - self.relax if self.mi else np.zeros(0)
        if not (math.isfinite(f) and np.all(np.isfinite(ce)) and np.all(np.isfinite(ci))):
            raise DomainError("non-finite function value")
        return f, ce, ci

    def derivatives(self, x):
        g = np.zeros(self.n)
        np.add.at(g, self.fobj.cols, self.fobj.jacobian(x))
        Je = sp.csr_matrix((self.ceq.jacobian(x), (self.ceq.rows, self.ceq.cols)), shape=(self.me, self.n))
        Ji = sp.csr_matrix((self.cin.jacobian(x), (self.cin.rows, self.cin.cols)), shape=(self.mi, self.n))
        return g, Je, Ji


class _Factor:
    """Symmetric indefinite factorization of the condensed step matrix.

    The matrix is ``[[K + dw I, Je^T], [Je, -diag(De) - dc I]]``.  The shifts
    ``dw`` and ``dc`` are raised until the inertia is ``(n, me, 0)``, which
    makes the primal step a descent direction on the null space of ``Je``.
    """

    def __init__(self, K: np.ndarray, Je: sp.csr_matrix, De: np.ndarray, mu: float, dw_last: float):
        n, me = K.shape[0], Je.shape[0]
        self.n = n
        Jd = Je.toarray()
        A = np.zeros((n + me, n + me))
        A[:n, :n] = K
        A[n:, :n] = Jd
        A[:n, n:] = Jd.T
        A[np.arange(n, n + me), np.arange(n, n + me)] = -De
        dw, dc = 0.0, 0.0
        first = True
        for _ in range(60):
            if self._try(A, n, me, dw, dc):
                self.dw = dw
                return
            if first and self.zero and dc == 0.0:
                dc = 1e-8 * mu**0.25
                continue
            if dw == 0.0:
                dw = max(1e-20, dw_last / 3) if dw_last > 0 else 1e-4
            else:
                dw *= 8 if dw_last > 0 else 100
            first = False
            if dw > 1e20:
                break
        raise np.linalg.LinAlgError("could not correct the inertia of the step matrix")

    def _try(self, A, n, me, dw, dc) -> bool:
        M = A.copy(order="F")
        if dw:
            M[np.arange(n), np.arange(n)] += dw
        if dc:
            M[np.arange(n, n + me), np.arange(n, n + me)] -= dc
        N = n + me
        lwork = int(lapack.dsytrf_lwork(N, lower=1)[0])
        ldu, ipiv, info = lapack.dsytrf(M, lower=1, lwork=max(lwork, 1), overwrite_a=1)
        if info < 0:
            raise np.linalg.LinAlgError(f"dsytrf argument {-info} invalid")
        # inertia from the 1x1 and 2x2 diagonal blocks of D; 2x2 blocks are
        # flagged by a pair of negative pivots
        main = np.diag(ldu)
        two = ipiv < 0
        one = main[~two]
        k = np.flatnonzero(two)[0::2]
        a, b, c = main[k], ldu[k + 1, k], main[k + 1]
        det = a * c - b * b
        tr = a + c
        pos = int(np.sum(one > 0)) + int(np.sum(det < 0)) + 2 * int(np.sum((det > 0) & (tr > 0)))
        neg = int(np.sum(one < 0)) + int(np.sum(det < 0)) + 2 * int(np.sum((det > 0) & (tr < 0)))
        singular = det == 0
        pos += int(np.sum(singular & (tr > 0)))
        neg += int(np.sum(singular & (tr < 0)))
        zero = N - pos - neg
        self.zero = zero
        if zero or pos != n or neg != me:
            return False
        self.ldu, self.ipiv = ldu, ipiv
        return True

    def solve(self, rhs: np.ndarray, ce_rhs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        b = np.concatenate([rhs, ce_rhs])
        out, info = lapack.dsytrs(self.ldu, self.ipiv, b[:, None], lower=1)
        out = out[:, 0]
        return out[: self.n], out[self.n:]


# filter line search constants
_GAMMA_THETA = 1e-5
_GAMMA_PHI = 1e-8
_S_THETA = 1.1
_S_PHI = 2.3
_ETA_PHI = 1e-8
_KAPPA_SOC = 0.99
_MAX_SOC = 4
_KAPPA_SIGMA = 1e10
_KAPPA_RESTO = 0.9
_RHO_RESTO = 1000.0


@dataclass
class _Elastic:
    """Feasibility-restoration setup: penalized elastic residuals plus a proximity term."""

    rho: float
    x_ref: np.ndarray
    zeta: float
    d2: np.ndarray


def _elastic_pair(c: np.ndarray, mu: float, rho: float) -> tuple[np.ndarray, np.ndarray]:
    """Positive ``p, n`` with ``c - p + n == 0`` that are central for barrier ``mu``."""
    a = (mu - rho * c) / (2 * rho)
    n = a + np.sqrt(a * a + mu * c / (2 * rho))
    return c + n, n


class _InteriorPoint:
    """Primal-dual barrier method with a filter line search.

    In elastic mode every equality gets ``c_E - p + n == 0`` and every
    inequality ``c_I - q + s == 0`` with ``p, n, q >= 0`` penalized by ``rho``;
    the objective is replaced by a proximity term.  The elastic variables
    are eliminated from the step equations, so both modes factor a matrix
    of the same size.
    """

    def __init__(self, nlp: AssembledNlp, opts: SolverOptions, elastic: _Elastic | None = None,
                 ev: "_Evaluator | None" = None, lo=None, hi=None):
        self.nlp = nlp
        self.opts = opts
        self.ev = _Evaluator(nlp, opts.bound_relax) if ev is None else ev
        if lo is None:
            lo, hi = nlp.lower, nlp.upper
            # fixed variables get a sliver of room so the barrier is defined
            fixed = lo == hi
            if fixed.any():
                pad = np.where(fixed, opts.bound_relax * np.maximum(1.0, np.abs(lo)), 0.0)
                lo, hi = lo - pad, hi + pad
        self.lo, self.hi = lo, hi
        self.fl, self.fu = np.isfinite(self.lo), np.isfinite(self.hi)
        self.el = elastic
        # affine equalities stay hard in elastic mode
        self.em = ~nlp.affine_equalities()[0]
        self.exact = opts.hessian == "exact"
        self.hess = nlp.hessian() if self.exact else None
        self.dw_last = 0.0
        self.t0 = time.perf_counter()

    # -- evaluation of the mode-specific objective --

    def _ftot(self, fobj, x, pe, ne, pi) -> float:
        if self.el is None:
            return fobj
        el = self.el
        dx = x - el.x_ref
        em = self.em
        return 0.5 * el.zeta * float(el.d2 @ (dx * dx)) + el.rho * (pe[em].sum() + ne[em].sum() + pi.sum())

    def _gx(self, g, x):
        if self.el is None:
            return g
        return self.el.zeta * self.el.d2 * (x - self.el.x_ref)

    # -- residual and barrier bookkeeping --

    def _dist(self, x):
        return np.where(self.fl, x - self.lo, 1.0), np.where(self.fu, self.hi - x, 1.0)

    def _res(self, ce, ci, s, pe, ne, pi):
        if self.el is None:
            return ce, ci + s
        return ce - pe + ne, ci - pi + s

    def _theta(self, ce, ci, s, pe, ne, pi) -> float:
        re, ri = self._res(ce, ci, s, pe, ne, pi)
        return float(np.abs(re).sum() + np.abs(ri).sum())

    def _barrier(self, x, s, pe, ne, pi, ftot) -> float:
        dl, du = self._dist(x)
        logs = np.sum(np.log(s)) + np.sum(np.log(dl[self.fl])) + np.sum(np.log(du[self.fu]))
        if self.el is not None:
            logs += np.sum(np.log(pe[self.em])) + np.sum(np.log(ne[self.em])) + np.sum(np.log(pi))
        return ftot - self.mu * logs

    def _in_filter(self, theta, phi) -> bool:
        return any(theta >= tf and phi >= pf for tf, pf in self.filter)

    def _interior(self, x, s, pe, ne, pi) -> bool:
        dl, du = self._dist(x)
        return bool(
            np.all(dl > 0) and np.all(du > 0) and np.all(s > 0)
            and np.all(pe > 0) and np.all(ne > 0) and np.all(pi > 0)
        )

    def _trial(self, x, s, pe, ne, pi):
        if not self._interior(x, s, pe, ne, pi):
            return None
        try:
            fobj, ce, ci = self.ev.values(x)
        except (DomainError, OverflowError, FloatingPointError):
            return None
        ft = self._ftot(fobj, x, pe, ne, pi)
        return fobj, ce, ci, self._theta(ce, ci, s, pe, ne, pi), self._barrier(x, s, pe, ne, pi, ft)

    def _derivatives_ok(self, x) -> bool:
        """Evaluate first (and, with exact Hessians, second) derivatives at a candidate."""
        try:
            self._pending = self.ev.derivatives(x)
            if self.exact and self.hess.batch.m:
                self.hess.batch.jacobian(x)
        except (DomainError, OverflowError):
            return False
        return all(np.all(np.isfinite(a.data if sp.issparse(a) else a)) for a in self._pending)

    # -- Newton direction --

    def _inv_sigma(self):
        """Reciprocal barrier curvatures of slacks and elastic variables (zeros when absent)."""
        inv_s = self.s / self.v
        if self.el is None:
            z = np.zeros(0)
            return inv_s, np.zeros_like(inv_s), z, z
        em = self.em
        return inv_s, self.pi / self.zpi, np.where(em, self.pe / self.zpe, 0.0), np.where(em, self.ne / self.zne, 0.0)

    def _matrix(self, W):
        dl, du = self._dist(self.x)
        fl, fu = self.fl, self.fu
        sig_x = np.where(fl, self.zl / dl, 0.0) + np.where(fu, self.zu / du, 0.0)
        inv_s, inv_pi, inv_pe, inv_ne = self._inv_sigma()
        K = W + np.diag(sig_x)
        if self.el is not None:
            K[np.diag_indices_from(K)] += self.el.zeta * self.el.d2
        if self.ev.mi:
            K += (self.Ji.T @ sp.diags(1.0 / (inv_s + inv_pi)) @ self.Ji).toarray()
        De = inv_pe + inv_ne if self.el is not None else np.zeros(self.ev.me)
        return K, De

    def _direction(self, fac: _Factor, r_e, r_i):
        """Newton step that drives the linearized residuals ``r_e, r_i`` to zero."""
        mu, s, v, y = self.mu, self.s, self.v, self.y_e
        dl, du = self._dist(self.x)
        fl, fu = self.fl, self.fu
        rho = 0.0 if self.el is None else self.el.rho
        inv_s, inv_pi, inv_pe, inv_ne = self._inv_sigma()
        rx = (
            self._gx(self.g, self.x) + self.Je.T @ y + self.Ji.T @ v
            - np.where(fl, mu / dl, 0.0) + np.where(fu, mu / du, 0.0)
        )
        rt_i = r_i + (mu / s - v) * inv_s
        rt_e = r_e
        if self.el is not None:
            rt_i = rt_i - (mu / self.pi - rho + v) * inv_pi
            rt_e = r_e - (mu / self.pe - rho + y) * inv_pe + (mu / self.ne - rho - y) * inv_ne
        Di = inv_s + inv_pi
        dx, dy = fac.solve(-rx - self.Ji.T @ (rt_i / Di), -rt_e)
        dv = (self.Ji @ dx + rt_i) / Di
        ds = (mu / s - v - dv) * inv_s
        dzl = np.where(fl, mu / dl - self.zl - self.zl / dl * dx, 0.0)
        dzu = np.where(fu, mu / du - self.zu + self.zu / du * dx, 0.0)
        d = {"x": dx, "s": ds, "y": dy, "v": dv, "zl": dzl, "zu": dzu}
        if self.el is not None:
            dpi = (dv + mu / self.pi - rho + v) * inv_pi
            dpe = (dy + mu / self.pe - rho + y) * inv_pe
            dne = (-dy + mu / self.ne - rho - y) * inv_ne
            d["pi"], d["pe"], d["ne"] = dpi, dpe, dne
            d["zpi"] = mu / self.pi - self.zpi - self.zpi / self.pi * dpi
            d["zpe"] = np.where(self.em, mu / self.pe - self.zpe - self.zpe / self.pe * dpe, 0.0)
            d["zne"] = np.where(self.em, mu / self.ne - self.zne - self.zne / self.ne * dne, 0.0)
        return d

    def _max_steps(self, d):
        tau = max(self.opts.tau_min, 1.0 - self.mu)
        dl, du = self._dist(self.x)
        fl, fu = self.fl, self.fu
        dx = d["x"]
        a_p = min(_ftb(dl[fl], dx[fl], tau), _ftb(du[fu], -dx[fu], tau), _ftb(self.s, d["s"], tau))
        a_d = min(_ftb(self.zl[fl], d["zl"][fl], tau), _ftb(self.zu[fu], d["zu"][fu], tau), _ftb(self.v, d["v"], tau))
        if self.el is not None:
            for k in ("pi", "pe", "ne"):
                a_p = min(a_p, _ftb(getattr(self, k), d[k], tau))
                a_d = min(a_d, _ftb(getattr(self, "z" + k), d["z" + k], tau))
        return a_p, a_d

    def _primal(self, d, a):
        x, s = self.x + a * d["x"], self.s + a * d["s"]
        if self.el is None:
            return x, s, self.pe, self.ne, self.pi
        return x, s, self.pe + a * d["pe"], self.ne + a * d["ne"], self.pi + a * d["pi"]

    # -- state updates --

    def _clip(self, z, dist, mu):
        return np.clip(z, mu / (_KAPPA_SIGMA * dist), _KAPPA_SIGMA * mu / dist)

    def _accept(self, prim, tr, d, a_p, a_d):
        x, s, pe, ne, pi = prim
        fobj, ce, ci = tr[0], tr[1], tr[2]
        mu = self.mu
        self.x, self.fobj, self.ce, self.ci = x, fobj, ce, ci
        self.s = np.maximum(s, -ci) if self.el is None else s  # slack reset
        self.pe, self.ne, self.pi = pe, ne, pi
        self.y_e = self.y_e + a_p * d["y"]
        dl, du = self._dist(x)
        self.zl = np.where(self.fl, self._clip(self.zl + a_d * d["zl"], dl, mu), 0.0)
        self.zu = np.where(self.fu, self._clip(self.zu + a_d * d["zu"], du, mu), 0.0)
        self.v = self._clip(self.v + a_d * d["v"], self.s, mu)
        if self.el is not None:
            for k in ("pi", "pe", "ne"):
                setattr(self, "z" + k, self._clip(getattr(self, "z" + k) + a_d * d["z" + k], getattr(self, k), mu))

    def _least_squares_y(self):
        if not self.ev.me:
            return np.zeros(0)
        r = self.g + self.Ji.T @ self.v - self.zl + self.zu
        y = np.linalg.lstsq(self.Je.T.toarray(), -r, rcond=None)[0]
        return y if np.max(np.abs(y), initial=0.0) <= 1e3 else np.zeros(self.ev.me)

    # -- optimality measures --

    def _errors(self):
        """(dual infeasibility, primal infeasibility, complementarity at mu and at 0)."""
        x, s, v, y = self.x, self.s, self.v, self.y_e
        fl, fu = self.fl, self.fu
        dl, du = self._dist(x)
        gx = self._gx(self.g, x)
        parts = [gx + self.Je.T @ y + self.Ji.T @ v - self.zl + self.zu]
        pairs = [(self.zl[fl], dl[fl]), (self.zu[fu], du[fu]), (v, s)]
        mults = [np.abs(y), v, self.zl, self.zu]
        if self.el is not None:
            rho, em = self.el.rho, self.em
            zpe, zne = self.zpe[em], self.zne[em]
            parts += [rho - y[em] - zpe, rho + y[em] - zne, rho - v - self.zpi]
            pairs += [(zpe, self.pe[em]), (zne, self.ne[em]), (self.zpi, self.pi)]
            mults += [zpe, zne, self.zpi]
        count = sum(len(m) for m in mults)
        s_d = max(100.0, sum(float(m.sum()) for m in mults) / max(count, 1)) / 100.0
        dual = max(float(np.max(np.abs(p), initial=0.0)) for p in parts) / s_d
        re, ri = self._res(self.ce, self.ci, s, self.pe, self.ne, self.pi)
        prim = max(float(np.max(np.abs(re), initial=0.0)), float(np.max(np.abs(ri), initial=0.0)))

        def compl(m):
            return max(float(np.max(np.abs(z * w - m), initial=0.0)) for z, w in pairs)

        return dual, prim, compl

    # -- main loop --

    def run(self, x0) -> SolveOutcome:
        opts, ev = self.opts, self.ev
        n, me, mi = ev.n, ev.me, ev.mi
        x0 = np.asarray(x0, dtype=float).copy()
        if opts.project_start:
            self.x = _project_equalities(self.ev, x0, self.lo, self.hi, opts.bound_push, opts.feas_tol)
        else:
            self.x = _push_interior(x0, self.lo, self.hi, opts.bound_push)
        self.y_e = np.zeros(me)
        self.v = np.ones(mi)
        self.zl = np.where(self.fl, 1.0, 0.0)
        self.zu = np.where(self.fu, 1.0, 0.0)
        self.pe = self.ne = self.pi = np.zeros(0)
        self.mu = opts.mu_init
        try:
            self.fobj, self.ce, self.ci = ev.values(self.x)
            self.g, self.Je, self.Ji = ev.derivatives(self.x)
        except (DomainError, OverflowError) as err:
            self.s = np.ones(mi)
            return self._finish(Status.INFEASIBLE, f"initial point not evaluable: {err}", 0)
        self.s = np.maximum(-self.ci, opts.bound_push * np.maximum(1.0, np.abs(self.ci)))
        self.B = np.eye(n)
        self.first_bfgs = True
        status, msg, it = self._loop(opts.max_iter)
        return self._finish(status, msg, it)

    def _loop(self, max_iter: int, hook=None):
        """Iterate until convergence, failure or ``hook`` accepts a point.

        Returns ``(status, message, iterations)``; in elastic mode the status
        is None when ``hook`` accepted.
        """
        opts = self.opts
        self.filter: list[tuple[float, float]] = []
        theta_init = self._theta(self.ce, self.ci, self.s, self.pe, self.ne, self.pi)
        self.theta_max = 1e4 * max(1.0, theta_init)
        self.theta_min = 1e-4 * max(1.0, theta_init)
        tol = min(opts.feas_tol, opts.opt_tol)
        elastic = self.el is not None

        for it in range(max_iter):
            dual_inf, prim_inf, compl = self._errors()
            orig_viol = max(
                float(np.max(np.abs(self.ce), initial=0.0)), float(np.max(self.ci, initial=0.0))
            )
            if dual_inf <= opts.opt_tol and compl(0.0) <= opts.opt_tol and (
                elastic and prim_inf <= opts.feas_tol or orig_viol <= opts.feas_tol
            ):
                return Status.LOCAL_OPTIMUM, "converged", it

            while self.mu > tol / 10 and max(dual_inf, prim_inf, compl(self.mu)) <= opts.barrier_tol_factor * self.mu:
                self.mu = max(tol / 10, min(opts.mu_linear * self.mu, self.mu**opts.mu_superlinear))
                self.filter = []
            mu = self.mu
            x, s = self.x, self.s

            try:
                if self.exact:
                    w_obj = 0.0 if elastic else 1.0
                    W = self.hess.matrix(x, np.concatenate([[w_obj], self.y_e, self.v]))
                else:
                    W = self.B
                K, De = self._matrix(W)
                fac = _Factor(K, self.Je, De, mu, self.dw_last)
                if fac.dw > 0:
                    self.dw_last = fac.dw
                re0, ri0 = self._res(self.ce, self.ci, s, self.pe, self.ne, self.pi)
                d = self._direction(fac, re0, ri0)
            except (DomainError, OverflowError):
                return Status.INFEASIBLE, "Hessian not evaluable", it
            except np.linalg.LinAlgError:
                return Status.INFEASIBLE, "singular step system", it
            if not all(np.all(np.isfinite(c)) for c in d.values()):
                return Status.INFEASIBLE, "non-finite step", it
            a_p, a_d = self._max_steps(d)

            theta0 = self._theta(self.ce, self.ci, s, self.pe, self.ne, self.pi)
            phi0 = self._barrier(x, s, self.pe, self.ne, self.pi, self._ftot(self.fobj, x, self.pe, self.ne, self.pi))
            dl, du = self._dist(x)
            fl, fu = self.fl, self.fu
            dx = d["x"]
            gphi = float(
                self._gx(self.g, x) @ dx - mu * np.sum(dx[fl] / dl[fl]) + mu * np.sum(dx[fu] / du[fu])
                - mu * np.sum(d["s"] / s)
            )
            if elastic:
                rho = self.el.rho
                for k in ("pi", "pe", "ne"):
                    gphi += float(np.sum((rho - mu / getattr(self, k)) * d[k]))

            def acceptable(theta_t, phi_t, alpha):
                if theta_t > self.theta_max or self._in_filter(theta_t, phi_t):
                    return False, False
                switching = gphi < 0 and alpha * (-gphi) ** _S_PHI > theta0**_S_THETA
                if theta0 <= self.theta_min and switching:
                    return phi_t <= phi0 + _ETA_PHI * alpha * gphi, True
                return theta_t <= (1 - _GAMMA_THETA) * theta0 or phi_t <= phi0 - _GAMMA_PHI * theta0, False

            if gphi < 0:
                a_min = 0.05 * min(
                    _GAMMA_THETA, _GAMMA_PHI * theta0 / -gphi, theta0**_S_THETA / (-gphi) ** _S_PHI
                )
            else:
                a_min = 0.05 * _GAMMA_THETA
            a_min = max(a_min, 1e-16)

            alpha = a_p
            accepted = None
            first = True
            while alpha >= a_min:
                prim = self._primal(d, alpha)
                tr = self._trial(*prim)
                if tr is not None:
                    ok, ftype = acceptable(tr[3], tr[4], alpha)
                    if ok and self._derivatives_ok(prim[0]):
                        accepted = (prim, tr, d, alpha, a_d, ftype)
                        break
                    if first and tr[3] >= theta0 and not elastic:
                        accepted = self._second_order(fac, alpha, tr, acceptable)
                        if accepted is not None:
                            break
                first = False
                alpha *= 0.5

            log.debug(
                "%sit %3d f=%.8g prim=%.2e dual=%.2e mu=%.1e a_p=%.2e alpha=%s",
                "  R " if elastic else "", it, self.fobj, prim_inf, dual_inf, mu, a_p,
                "restore" if accepted is None else f"{accepted[3]:.2e}",
            )

            if accepted is None:
                if elastic:
                    return Status.INFEASIBLE, "restoration line search failed", it
                self.filter.append(((1 - _GAMMA_THETA) * theta0, phi0 - _GAMMA_PHI * theta0))
                if orig_viol <= opts.feas_tol and a_p < 1e-12:
                    return Status.FEASIBLE_POINT, "step size underflow at feasible point", it
                if not self._restore(theta0):
                    status = Status.FEASIBLE_POINT if orig_viol <= opts.feas_tol else Status.INFEASIBLE
                    return status, "restoration failed", it
                continue

            prim, tr, d, a_prim, a_dual, ftype = accepted
            if not ftype:
                self.filter.append(((1 - _GAMMA_THETA) * theta0, phi0 - _GAMMA_PHI * theta0))
            x_old, g_old, Je_old, Ji_old = x, self.g, self.Je, self.Ji
            self._accept(prim, tr, d, a_prim, a_dual)
            self.g, self.Je, self.Ji = self._pending
            if hook is not None and hook(self):
                return None, "accepted by outer problem", it + 1
            if not self.exact:
                step = self.x - x_old
                yk = (self.g + self.Je.T @ self.y_e + self.Ji.T @ self.v) - (
                    g_old + Je_old.T @ self.y_e + Ji_old.T @ self.v
                )
                self.B, self.first_bfgs = _damped_bfgs(self.B, step, yk, self.first_bfgs)

        return Status.ITERATION_LIMIT, "iteration limit", max_iter

    def _second_order(self, fac, alpha, tr, acceptable):
        theta_prev = tr[3]
        c_e = alpha * self.ce + tr[1]
        c_i = alpha * (self.ci + self.s) + (tr[2] + self.s)
        for _ in range(_MAX_SOC):
            try:
                d = self._direction(fac, c_e, c_i)
            except np.linalg.LinAlgError:
                return None
            if not np.all(np.isfinite(d["x"])):
                return None
            a_soc, a_d = self._max_steps(d)
            prim = self._primal(d, a_soc)
            trs = self._trial(*prim)
            if trs is None:
                return None
            ok, ftype = acceptable(trs[3], trs[4], alpha)
            if ok and self._derivatives_ok(prim[0]):
                return (prim, trs, d, a_soc, a_d, ftype)
            if trs[3] > _KAPPA_SOC * theta_prev:
                return None
            theta_prev = trs[3]
            c_e = a_soc * c_e + trs[1]
            c_i = a_soc * c_i + (trs[2] + prim[1])
        return None

    def _restore(self, theta_start: float) -> bool:
        """Minimize the l1 constraint violation until the filter accepts the point."""
        ev, mu = self.ev, self.mu
        re, ri = self._res(self.ce, self.ci, self.s, self.pe, self.ne, self.pi)
        mu_r = max(mu, float(np.max(np.abs(np.concatenate([re, ri])), initial=0.0)))
        x_ref = self.x.copy()
        el = _Elastic(_RHO_RESTO, x_ref, math.sqrt(mu_r), np.minimum(1.0, 1.0 / np.maximum(np.abs(x_ref), 1e-300)) ** 2)
        inner = _InteriorPoint(self.nlp, self.opts, el, ev=ev, lo=self.lo, hi=self.hi)
        inner.hess = self.hess
        inner.B = np.eye(ev.n)
        inner.first_bfgs = True
        inner.mu = mu_r
        inner.x, inner.fobj, inner.ce, inner.ci = self.x, self.fobj, self.ce, self.ci
        inner.g, inner.Je, inner.Ji = self.g, self.Je, self.Ji
        inner.s = np.maximum(self.s, mu_r - self.ci)
        inner.pi = self.ci + inner.s
        pe, ne = _elastic_pair(self.ce, mu_r, _RHO_RESTO)
        inner.pe, inner.ne = np.where(inner.em, pe, 1.0), np.where(inner.em, ne, 1.0)
        dl, du = self._dist(self.x)
        inner.zl = np.where(self.fl, mu_r / dl, 0.0)
        inner.zu = np.where(self.fu, mu_r / du, 0.0)
        inner.v = mu_r / inner.s
        inner.zpi, inner.zpe, inner.zne = mu_r / inner.pi, mu_r / inner.pe, mu_r / inner.ne
        inner.y_e = np.zeros(ev.me)

        def hook(r: _InteriorPoint) -> bool:
            s = np.maximum(r.s, -r.ci)
            theta = self._theta(r.ce, r.ci, s, self.pe, self.ne, self.pi)
            if theta > _KAPPA_RESTO * theta_start:
                return False
            ft = self._ftot(r.fobj, r.x, self.pe, self.ne, self.pi)
            return not self._in_filter(theta, self._barrier(r.x, s, self.pe, self.ne, self.pi, ft))

        status, msg, _ = inner._loop(self.opts.max_iter, hook)
        log.debug("  restoration: %s", msg)
        if status is not None:
            return False
        self.x, self.fobj, self.ce, self.ci = inner.x, inner.fobj, inner.ce, inner.ci
        self.g, self.Je, self.Ji = inner.g, inner.Je, inner.Ji
        self.s = np.maximum(inner.s, -inner.ci)
        dl, du = self._dist(self.x)
        self.zl = np.where(self.fl, self._clip(inner.zl, dl, mu), 0.0)
        self.zu = np.where(self.fu, self._clip(inner.zu, du, mu), 0.0)
        self.v = self._clip(np.minimum(inner.v, 1e3), self.s, mu)
        self.y_e = self._least_squares_y()
        self.B = np.eye(ev.n)
        self.first_bfgs = True
        return True

    def _finish(self, status: Status, msg: str, it: int) -> SolveOutcome:
        nlp, opts, x = self.nlp, self.opts, self.x
        y_e, v, zl, zu = self.y_e, self.v, self.zl, self.zu
        try:
            viol = nlp.violation(x)
            fval = nlp.objective_value(x)
            stat, comp = kkt_residuals(nlp, x, y_e, v, zl, zu)
        except (DomainError, OverflowError):
            viol, fval, stat, comp = math.inf, math.inf, math.inf, math.inf
        if status == Status.LOCAL_OPTIMUM and (viol > opts.feas_tol or stat > opts.opt_tol):
            status = Status.FEASIBLE_POINT
        if status == Status.FEASIBLE_POINT and viol > opts.feas_tol:
            status = Status.INFEASIBLE
        return SolveOutcome(
            status=status, x=x.copy(), objective=fval, violation=viol,
            stationarity=stat, complementarity=comp, iterations=it,
            time=time.perf_counter() - self.t0, y_eq=y_e.copy(), y_ineq=v.copy(),
            z_lower=zl.copy(), z_upper=zu.copy(), message=msg,
        )


def solve(nlp: AssembledNlp, x0: Sequence[float], opts: SolverOptions | None = None) -> SolveOutcome:
    """Interior-point solve from ``x0`` (clipped and pushed inside the bounds).

    Uses a filter line search with second-order corrections.  When no
    acceptable step exists, an elastic l1 feasibility problem is solved by
    the same method until the filter accepts a point; the run ends as
    Infeasible if that fails.
    """
    opts = SolverOptions() if opts is None else opts
    if len(x0) != nlp.n:
        raise ValueError(f"starting point has length {len(x0)}, problem has {nlp.n} variables")
    return _InteriorPoint(nlp, opts).run(x0)


def _damped_bfgs(B, s, y, first):
    ss = float(s @ s)
    if ss < 1e-20:
        return B, first
    if first:
        sy = float(s @ y)
        yy = float(y @ y)
        if sy > 1e-12 * ss and yy > 0:
            B = np.eye(len(s)) * min(max(yy / sy, 1e-4), 1e6)
        first = False
    Bs = B @ s
    sBs = float(s @ Bs)
    if sBs <= 0:
        return np.eye(len(s)), True
    sy = float(s @ y)
    if sy < 0.2 * sBs:
        theta = 0.8 * sBs / (sBs - sy)
        r = theta * y + (1 - theta) * Bs
    else:
        r = y
    sr = float(s @ r)
    if sr <= 1e-16 * sBs:
        return B, first
    return B - np.outer(Bs, Bs) / sBs + np.outer(r, r) / sr, first


def kkt_residuals(
    nlp: AssembledNlp,
    x: np.ndarray,
    y_eq: np.ndarray,
    y_ineq: np.ndarray,
    z_lower: np.ndarray,
    z_upper: np.ndarray,
) -> tuple[float, float]:
    """Scaled stationarity and complementarity at ``x``, recomputed from scratch.

    Gradients come from the graph-walking reference path, not the compiled
    code the solver used.  Multiplier signs are clipped to the admissible
    cone first.  Stationarity is scaled like the solver's termination test:
    divided by ``max(1, mean |multiplier| / 100)``.
    """
    x = np.asarray(x, float)
    n = len(x)
    y_ineq = np.maximum(y_ineq, 0.0)
    z_lower = np.maximum(z_lower, 0.0)
    z_upper = np.maximum(z_upper, 0.0)
    grad = ex.gradient(nlp.objective, x)
    for y, e in zip(y_eq, nlp.equalities):
        if y:
            grad += y * ex.gradient(e, x)
    cin = np.array([ex.evaluate(e, x) for e in nlp.inequalities])
    for y, e in zip(y_ineq, nlp.inequalities):
        if y:
            grad += y * ex.gradient(e, x)
    grad += z_upper - z_lower
    m = len(y_eq) + len(y_ineq) + n
    s_d = max(100.0, (np.abs(y_eq).sum() + y_ineq.sum() + z_lower.sum() + z_upper.sum()) / max(m, 1)) / 100.0
    stat = float(np.max(np.abs(grad), initial=0.0)) / s_d
    fl, fu = np.isfinite(nlp.lower), np.isfinite(nlp.upper)
    comp = max(
        float(np.max(np.abs(y_ineq * cin), initial=0.0)),
        float(np.max(np.abs(z_lower[fl] * (x[fl] - nlp.lower[fl])), initial=0.0)),
        float(np.max(np.abs(z_upper[fu] * (nlp.upper[fu] - x[fu])), initial=0.0)),
    )
    return stat, comp


# -- multistart and classification ----------------------------------------


def _start_point(nlp: AssembledNlp, seed: int, run: int, lo=None, hi=None) -> np.ndarray:
    lo = nlp.init_lower if lo is None else lo
    hi = nlp.init_upper if hi is None else hi
    rng = np.random.default_rng([seed, run])
    return rng.uniform(lo, hi)


def multistart(
    nlp: AssembledNlp,
    runs: int,
    seed: int = 0,
    opts: SolverOptions | None = None,
    init_boxes: tuple[np.ndarray, np.ndarray] | None = None,
) -> list[SolveOutcome]:
    """Solve from ``runs`` uniform random starting points.

    Run ``r`` draws its start from a generator seeded with ``(seed, r)``, so
    every run is reproducible on its own and the list does not depend on
    execution order.
    """
    lo, hi = (nlp.init_lower, nlp.init_upper) if init_boxes is None else init_boxes
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise ValueError("multistart needs finite initialization boxes for every variable")
    nlp.compiled()
    out = []
    for r in range(runs):
        o = solve(nlp, _start_point(nlp, seed, r, lo, hi), opts)
        o.run = r
        out.append(o)
    return sorted(out, key=lambda o: o.run)


class RunClass(str, Enum):
    OPTIMAL = "Optimal"
    SUBOPTIMAL = "SubOptimal"
    INFEASIBLE = "Infeasible"


def certified(o: SolveOutcome, formula: Formula | None, feas_tol: float = 1e-6) -> bool:
    """Constraint violation within tolerance and the original logic holds."""
    if not math.isfinite(o.objective) or not o.violation <= feas_tol:
        return False
    return formula is None or eval_bool(formula, o.x, feas_tol)


def best_feasible_cost(
    outcomes: Sequence[SolveOutcome], formula: Formula | None, feas_tol: float = 1e-6
) -> float:
    costs = [o.objective for o in outcomes if certified(o, formula, feas_tol)]
    return min(costs, default=math.inf)


def classify(
    o: SolveOutcome,
    best_cost: float,
    formula: Formula | None,
    feas_tol: float = 1e-6,
    rel_tol: float = 1e-3,
    abs_tol: float = 1e-6,
) -> RunClass:
    if not certified(o, formula, feas_tol):
        return RunClass.INFEASIBLE
    if o.objective <= best_cost * (1 + rel_tol) + abs_tol:
        return RunClass.OPTIMAL
    return RunClass.SUBOPTIMAL

