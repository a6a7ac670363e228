"""Linear programming: a dense bounded-variable revised simplex.

Problems are stated as::

    minimize    c @ x
    subject to  A_ub @ x <= b_ub
                A_eq @ x == b_eq
                lb <= x <= ub

Nonbasic variables sit at one of their bounds, so variable bounds never
become rows. Phase 1 minimises the sum of artificial variables from a
slack/artificial starting basis; phase 2 then fixes the artificials at zero.
Pricing is Dantzig's largest reduced cost; after a run of degenerate pivots
the solver switches to Bland's smallest-index rule (entering and leaving),
which cannot cycle, and returns to Dantzig after the next improving pivot.
The basis inverse is kept explicitly and refactorised periodically.

``method="highs"`` routes the same problem to the HiGHS library (highspy).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg.blas import dger

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration_limit"


class LPError(RuntimeError):
    pass


class InfeasibleError(LPError):
    pass


class UnboundedError(LPError):
    pass


@dataclass
class LinearProgram:
    c: np.ndarray
    A_ub: np.ndarray | None = None
    b_ub: np.ndarray | None = None
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        n = self.c.size
        self.A_ub = np.zeros((0, n)) if self.A_ub is None else np.atleast_2d(np.asarray(self.A_ub, float))
        self.b_ub = np.zeros(0) if self.b_ub is None else np.asarray(self.b_ub, float).ravel()
        self.A_eq = np.zeros((0, n)) if self.A_eq is None else np.atleast_2d(np.asarray(self.A_eq, float))
        self.b_eq = np.zeros(0) if self.b_eq is None else np.asarray(self.b_eq, float).ravel()
        self.lb = np.zeros(n) if self.lb is None else np.asarray(self.lb, float).copy()
        self.ub = np.full(n, np.inf) if self.ub is None else np.asarray(self.ub, float).copy()
        if self.A_ub.shape != (self.b_ub.size, n) or self.A_eq.shape != (self.b_eq.size, n):
            raise ValueError("constraint matrix shapes do not match c / b")
        if self.lb.shape != (n,) or self.ub.shape != (n,):
            raise ValueError("bounds must have the same length as c")

    @property
    def n(self) -> int:
        return self.c.size

    def with_bounds(self, lb: np.ndarray, ub: np.ndarray) -> "LinearProgram":
        return LinearProgram(self.c, self.A_ub, self.b_ub, self.A_eq, self.b_eq, lb, ub)


@dataclass
class LPResult:
    status: str
    x: np.ndarray | None = None
    objective: float = np.nan
    iterations: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def success(self) -> bool:
        return self.status == OPTIMAL


def solve_lp(
    lp: LinearProgram,
    *,
    method: str = "simplex",
    max_iter: int = 50_000,
    check: bool = False,
) -> LPResult:
    """Solve ``lp``; with ``check=True`` infeasible/unbounded raise instead of returning a status."""
    if method == "simplex":
        res = _RevisedSimplex(lp, max_iter=max_iter).solve()
    elif method == "highs":
        res = _solve_highs(lp)
    else:
        raise ValueError(f"unknown LP method {method!r}")
    if check:
        if res.status == INFEASIBLE:
            raise InfeasibleError("linear program is infeasible")
        if res.status == UNBOUNDED:
            raise UnboundedError("linear program is unbounded")
        if res.status != OPTIMAL:
            raise LPError(f"LP solve failed: {res.status}")
    return res


def _solve_highs(lp: LinearProgram) -> LPResult:
    return HighsSession(lp).solve(lp.lb, lp.ub)


class HighsSession:
    """A HiGHS model built once; ``solve(lb, ub)`` changes column bounds and
    re-solves warm from the previous basis (used by branch-and-bound)."""

    def __init__(self, lp: LinearProgram):
        import highspy
        from scipy import sparse

        self._hs = highspy
        h = highspy.Highs()
        h.setOptionValue("output_flag", False)
        h.setOptionValue("threads", 1)
        A = sparse.vstack([sparse.csc_matrix(lp.A_ub), sparse.csc_matrix(lp.A_eq)]).tocsc()
        model = highspy.HighsLp()
        model.num_col_ = lp.n
        model.num_row_ = A.shape[0]
        model.col_cost_ = lp.c
        model.col_lower_ = np.where(np.isfinite(lp.lb), lp.lb, -highspy.kHighsInf)
        model.col_upper_ = np.where(np.isfinite(lp.ub), lp.ub, highspy.kHighsInf)
        model.row_lower_ = np.concatenate([np.full(lp.b_ub.size, -highspy.kHighsInf), lp.b_eq])
        model.row_upper_ = np.concatenate([lp.b_ub, lp.b_eq])
        model.a_matrix_.format_ = highspy.MatrixFormat.kColwise
        model.a_matrix_.start_ = A.indptr
        model.a_matrix_.index_ = A.indices
        model.a_matrix_.value_ = A.data
        model.a_matrix_.num_col_ = lp.n
        model.a_matrix_.num_row_ = A.shape[0]
        h.passModel(model)
        self._h = h
        self._n = lp.n
        self._idx = np.arange(lp.n, dtype=np.int32)

    def solve(self, lb: np.ndarray, ub: np.ndarray) -> LPResult:
        hs, h = self._hs, self._h
        lo = np.where(np.isfinite(lb), lb, -hs.kHighsInf)
        hi = np.where(np.isfinite(ub), ub, hs.kHighsInf)
        if np.any(lo > hi + 1e-9):
            return LPResult(INFEASIBLE)
        h.changeColsBounds(self._n, self._idx, lo, hi)
        h.run()
        ms = h.getModelStatus()
        info = h.getInfo()
        if ms == hs.HighsModelStatus.kOptimal:
            x = np.array(h.getSolution().col_value, dtype=float)
            return LPResult(OPTIMAL, x, float(info.objective_function_value),
                            int(info.simplex_iteration_count))
        if ms == hs.HighsModelStatus.kInfeasible:
            return LPResult(INFEASIBLE)
        if ms in (hs.HighsModelStatus.kUnbounded, hs.HighsModelStatus.kUnboundedOrInfeasible):
            # resolve the ambiguity from a cold start without presolve
            h.clearSolver()
            h.setOptionValue("presolve", "off")
            h.run()
            h.setOptionValue("presolve", "choose")
            ms = h.getModelStatus()
            if ms == hs.HighsModelStatus.kOptimal:
                return self.solve(lb, ub)
            return LPResult(INFEASIBLE if ms == hs.HighsModelStatus.kInfeasible else UNBOUNDED)
        return LPResult(ITERATION_LIMIT if ms == hs.HighsModelStatus.kIterationLimit else "error")


def lp_session(lp: LinearProgram, method: str = "simplex"):
    """Callable ``(lb, ub) -> LPResult`` for repeated solves of ``lp`` under new bounds."""
    if method == "highs":
        return HighsSession(lp).solve
    if method == "simplex":
        return lambda lb, ub: solve_lp(lp.with_bounds(lb, ub), method="simplex")
    raise ValueError(f"unknown LP method {method!r}")


# ----------------------------------------------------------------------------

_BASIC, _LOWER, _UPPER = 0, 1, 2


class _RevisedSimplex:
    feas_tol = 1e-9
    dual_tol = 1e-9
    pivot_tol = 1e-9
    refactor_every = 100
    bland_after = 30

    def __init__(self, lp: LinearProgram, max_iter: int):
        self.lp = lp
        self.max_iter = max_iter
        self.iterations = 0

        # free / upper-only variables are rewritten so every column has a finite lower bound
        cols, cost, lo, hi, self._recover = [], [], [], [], []
        A0 = np.vstack([lp.A_ub, lp.A_eq]) if lp.A_ub.size + lp.A_eq.size else np.zeros((0, lp.n))
        for j in range(lp.n):
            l, u = lp.lb[j], lp.ub[j]
            if np.isfinite(l):
                self._recover.append(((len(cols), 1.0),))
                cols.append(A0[:, j]); cost.append(lp.c[j]); lo.append(l); hi.append(u)
            elif np.isfinite(u):
                self._recover.append(((len(cols), -1.0),))
                cols.append(-A0[:, j]); cost.append(-lp.c[j]); lo.append(-u); hi.append(np.inf)
            else:
                self._recover.append(((len(cols), 1.0), (len(cols) + 1, -1.0)))
                cols += [A0[:, j], -A0[:, j]]; cost += [lp.c[j], -lp.c[j]]
                lo += [0.0, 0.0]; hi += [np.inf, np.inf]
        self.trivially_infeasible = bool(np.any(lp.lb > lp.ub))
        m_ub, m_eq = lp.A_ub.shape[0], lp.A_eq.shape[0]
        self.m = m_ub + m_eq
        n_s = len(cols)
        A = np.column_stack(cols) if cols else np.zeros((self.m, 0))
        A = np.hstack([A, np.vstack([np.eye(m_ub), np.zeros((m_eq, m_ub))])])
        self.n_struct = n_s
        self.n_slack = m_ub
        self.A = A
        self.b = np.concatenate([lp.b_ub, lp.b_eq])
        self.c = np.concatenate([np.asarray(cost, float), np.zeros(m_ub)])
        self.l = np.concatenate([np.asarray(lo, float), np.zeros(m_ub)])
        self.u = np.concatenate([np.asarray(hi, float), np.full(m_ub, np.inf)])

    # -- helpers -----------------------------------------------------------

    def _refactor(self):
        self.Binv = np.asfortranarray(np.linalg.inv(self.A[:, self.basis]))
        nb = self.state != _BASIC
        rhs = self.b - self.A[:, nb] @ self.x[nb]
        self.x[self.basis] = self.Binv @ rhs

    def _iterate(self, cost: np.ndarray) -> str:
        degenerate_run = 0
        bland = False
        since_refactor = 0
        A, l, u = self.A, self.l, self.u
        while True:
            if self.iterations >= self.max_iter:
                return ITERATION_LIMIT
            if since_refactor >= self.refactor_every:
                self._refactor()
                since_refactor = 0
            y = cost[self.basis] @ self.Binv
            d = cost - y @ A
            at_lo = self.state == _LOWER
            at_up = self.state == _UPPER
            movable = u > l
            inc = at_lo & movable & (d < -self.dual_tol)
            dec = at_up & (d > self.dual_tol)
            cand = np.flatnonzero(inc | dec)
            if cand.size == 0:
                return OPTIMAL
            if bland:
                j = int(cand[0])
            else:
                j = int(cand[np.argmax(np.abs(d[cand]))])
            delta = 1.0 if inc[j] else -1.0

            w = self.Binv @ A[:, j]
            xb = self.x[self.basis]
            lb_b, ub_b = l[self.basis], u[self.basis]
            dw = delta * w
            theta = np.full(self.m, np.inf)
            dn = dw > self.pivot_tol
            up = dw < -self.pivot_tol
            theta[dn] = (xb[dn] - lb_b[dn]) / dw[dn]
            theta[up] = (ub_b[up] - xb[up]) / (-dw[up])
            theta = np.maximum(theta, 0.0)
            flip = u[j] - l[j]
            tmin = theta.min() if self.m else np.inf
            if not np.isfinite(tmin) and not np.isfinite(flip):
                return UNBOUNDED

            self.iterations += 1
            since_refactor += 1
            if flip <= tmin:
                step = flip
                self.x[self.basis] = xb - step * dw
                self.x[j] = u[j] if delta > 0 else l[j]
                self.state[j] = _UPPER if delta > 0 else _LOWER
            else:
                step = tmin
                ties = np.flatnonzero(theta <= tmin + 1e-12)
                if bland:
                    r = int(ties[np.argmin(np.asarray(self.basis)[ties])])
                else:
                    r = int(ties[np.argmax(np.abs(w[ties]))])
                leaving = self.basis[r]
                self.x[self.basis] = xb - step * dw
                self.x[j] = self.x[j] + delta * step
                if dw[r] > 0:
                    self.x[leaving] = l[leaving]
                    self.state[leaving] = _LOWER
                else:
                    self.x[leaving] = u[leaving]
                    self.state[leaving] = _UPPER
                self.basis[r] = j
                self.state[j] = _BASIC
                piv = w[r]
                row = self.Binv[r] / piv
                self.Binv = dger(-1.0, w, row, a=self.Binv, overwrite_a=True)
                self.Binv[r] = row
            if step <= 1e-12:
                degenerate_run += 1
                if degenerate_run >= self.bland_after:
                    bland = True
            else:
                degenerate_run = 0
                bland = False

    # -- driver ------------------------------------------------------------

    def solve(self) -> LPResult:
        if self.trivially_infeasible:
            return LPResult(INFEASIBLE)
        m, n0 = self.m, self.A.shape[1]
        x = np.where(np.isfinite(self.l), self.l, 0.0)
        state = np.full(n0, _LOWER, dtype=np.int8)
        r = self.b - self.A @ x
        basis = []
        art_cols = []
        for i in range(m):
            if i < self.n_slack and r[i] >= 0:
                basis.append(self.n_struct + i)
            else:
                col = np.zeros(m)
                col[i] = 1.0 if r[i] >= 0 else -1.0
                art_cols.append(col)
                basis.append(n0 + len(art_cols) - 1)
        n_art = len(art_cols)
        if n_art:
            self.A = np.hstack([self.A, np.column_stack(art_cols)])
            self.c = np.concatenate([self.c, np.zeros(n_art)])
            self.l = np.concatenate([self.l, np.zeros(n_art)])
            self.u = np.concatenate([self.u, np.full(n_art, np.inf)])
            x = np.concatenate([x, np.zeros(n_art)])
            state = np.concatenate([state, np.full(n_art, _LOWER, dtype=np.int8)])
        self.x, self.state, self.basis = x, state, basis
        self.state[basis] = _BASIC
        self._refactor()

        if n_art:
            phase1 = np.zeros(self.A.shape[1])
            phase1[n0:] = 1.0
            st = self._iterate(phase1)
            if st == ITERATION_LIMIT:
                return LPResult(st, iterations=self.iterations)
            self._refactor()
            infeas = float(self.x[n0:].sum())
            scale = max(1.0, float(np.abs(self.b).max(initial=0.0)))
            if infeas > 1e-7 * scale:
                return LPResult(INFEASIBLE, iterations=self.iterations, extra={"phase1": infeas})
            self.u[n0:] = 0.0
            self.x[n0:] = np.where(self.state[n0:] == _BASIC, self.x[n0:], 0.0)
            self.state[n0:] = np.where(self.state[n0:] == _BASIC, _BASIC, _LOWER)

        st = self._iterate(self.c)
        if st != OPTIMAL:
            return LPResult(st, iterations=self.iterations)
        self._refactor()
        z = self.x[: self.n_struct]
        xs = np.empty(self.lp.n)
        for j, parts in enumerate(self._recover):
            xs[j] = sum(sign * z[k] for k, sign in parts)
        # snap to original bounds (removes 1e-15-level drift)
        xs = np.clip(xs, self.lp.lb, self.lp.ub)
        return LPResult(OPTIMAL, xs, float(self.lp.c @ xs), self.iterations)
