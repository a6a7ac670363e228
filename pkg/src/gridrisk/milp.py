"""Branch-and-bound for mixed 0/1 linear programs.

Best-bound node selection (ties broken by creation order), most-fractional
branching (ties broken by lowest variable index), optional rounding
heuristic for early incumbents. Fully deterministic for a given LP backend.
"""

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from gridrisk.lp import OPTIMAL, LinearProgram, lp_session, solve_lp

logger = logging.getLogger(__name__)

INT_TOL = 1e-6


@dataclass
class MilpResult:
    status: str  # optimal | gap_limited | infeasible
    x: np.ndarray | None
    objective: float
    bound: float
    nodes: int
    lp_solves: int
    extra: dict = field(default_factory=dict)

    @property
    def gap(self) -> float:
        if self.x is None:
            return math.inf
        return relative_gap(self.objective, self.bound)


def relative_gap(incumbent: float, bound: float) -> float:
    return (incumbent - bound) / max(abs(incumbent), 1e-9)


def _most_fractional(x: np.ndarray, int_idx: np.ndarray) -> int | None:
    vals = x[int_idx]
    frac = np.abs(vals - np.round(vals))
    if frac.max(initial=0.0) <= INT_TOL:
        return None
    # distance of the fractional part from 0.5; smallest wins, first index on ties
    score = np.abs((vals - np.floor(vals)) - 0.5)
    score[frac <= INT_TOL] = np.inf
    return int(int_idx[int(np.argmin(score))])


def round_up_heuristic(lp: LinearProgram, int_idx: np.ndarray, lb, ub, x, method):
    """Fix integer variables to ceil(x - tol) and re-solve the continuous part."""
    fixed = np.clip(np.ceil(x[int_idx] - INT_TOL), lb[int_idx], ub[int_idx])
    lb2, ub2 = lb.copy(), ub.copy()
    lb2[int_idx] = fixed
    ub2[int_idx] = fixed
    res = method(lb2, ub2) if callable(method) else solve_lp(lp.with_bounds(lb2, ub2), method=method)
    return res if res.status == OPTIMAL else None


def branch_and_bound(
    lp: LinearProgram,
    integer: np.ndarray,
    *,
    gap: float = 1e-4,
    node_limit: int = 10_000,
    lp_method: str = "simplex",
    heuristic: Callable | None = round_up_heuristic,
    heuristic_every: int = 25,
) -> MilpResult:
    """Minimise ``lp`` with the variables flagged in ``integer`` restricted to integers.

    Stops when the relative gap between incumbent and best open bound drops
    to ``gap`` (status ``optimal``) or after ``node_limit`` nodes (status
    ``gap_limited``, bound reported).
    """
    integer = np.asarray(integer)
    int_idx = np.flatnonzero(integer) if integer.dtype == bool else np.asarray(integer, int)
    lb0 = lp.lb.copy()
    ub0 = lp.ub.copy()
    lb0[int_idx] = np.ceil(lb0[int_idx] - INT_TOL)
    ub0[int_idx] = np.floor(ub0[int_idx] + INT_TOL)

    best_x, best_obj = None, math.inf
    lp_solves = 0
    counter = 0
    heap: list = []

    def consider(res):
        nonlocal best_x, best_obj
        if res is not None and res.objective < best_obj - 1e-12:
            x = res.x.copy()
            x[int_idx] = np.round(x[int_idx])
            best_x, best_obj = x, res.objective

    solve = lp_session(lp, lp_method)
    root = solve(lb0, ub0)
    lp_solves += 1
    if root.status != OPTIMAL:
        return MilpResult("infeasible" if root.status == "infeasible" else root.status,
                          None, math.inf, math.inf, 1, lp_solves)
    heapq.heappush(heap, (root.objective, counter, lb0, ub0, root))
    nodes = 0
    global_bound = root.objective

    while heap:
        bound, _, lb, ub, res = heap[0]
        global_bound = bound
        if best_x is not None and relative_gap(best_obj, bound) <= gap:
            break
        if nodes >= node_limit:
            break
        heapq.heappop(heap)
        nodes += 1
        if best_x is not None and bound >= best_obj - 1e-9:
            continue
        j = _most_fractional(res.x, int_idx)
        if j is None:
            consider(res)
            continue
        if heuristic is not None and (nodes == 1 or nodes % heuristic_every == 0):
            h = heuristic(lp, int_idx, lb, ub, res.x, solve)
            lp_solves += 1
            consider(h)
        v = res.x[j]
        for side in (0, 1):
            lb2, ub2 = lb.copy(), ub.copy()
            if side == 0:
                ub2[j] = math.floor(v)
            else:
                lb2[j] = math.ceil(v)
            child = solve(lb2, ub2)
            lp_solves += 1
            if child.status != OPTIMAL:
                continue
            if best_x is not None and child.objective >= best_obj - 1e-9:
                continue
            if _most_fractional(child.x, int_idx) is None:
                consider(child)
                continue
            counter += 1
            heapq.heappush(heap, (child.objective, counter, lb2, ub2, child))

    if best_x is None:
        status = "infeasible" if not heap else "gap_limited"
        return MilpResult(status, None, math.inf, global_bound, nodes, lp_solves)
    if not heap:
        global_bound = best_obj
    else:
        global_bound = min(heap[0][0], best_obj)
    status = "optimal" if relative_gap(best_obj, global_bound) <= gap else "gap_limited"
    logger.debug("b&b: %d nodes, %d LPs, obj %.6g, bound %.6g", nodes, lp_solves, best_obj, global_bound)
    return MilpResult(status, best_x, best_obj, global_bound, nodes, lp_solves)
