"""DC security-constrained unit commitment (SCUC) and label extraction.

Formulation over t = 1..T, thermal units g, wind units k, buses b::

    min  sum_t sum_g [SU_g v_gt + SD_g w_gt + NL_g u_gt + c_g P_gt] + sum_t sum_b sum_k VOLL_bk s_btk
    s.t. sum_g P_gt + sum_k W_kt + sum_b s_bt = sum_b D_bt                  (power balance)
         -Fmax <= PTDF (G P_t + K W_t + s_t - D_t) <= Fmax                  (line limits)
         Pmin_g u_gt <= P_gt <= Pmax_g u_gt                                 (generation limits)
         u_gt - u_g,t-1 = v_gt - w_gt                                       (start/stop logic)
         sum_{tau=t-UT+1..t} v_g,tau <= u_gt                                (minimum up)
         sum_{tau=t-DT+1..t} w_g,tau <= 1 - u_gt                            (minimum down)
         P_gt - P_g,t-1 <= R_g + Pmax_g v_gt,  P_g,t-1 - P_gt <= R_g + Pmax_g w_gt  (ramping)
         sum_g Pmax_g u_gt - sum_g P_gt >= r * sum_b D_bt                   (spinning reserve)
         0 <= W_kt <= avail_kt,  0 <= s_btk <= D_bt / S,  u binary, 0 <= v, w <= 1

with s_bt = sum_k s_btk over S shed segments.

Every thermal unit starts ON at t = 0 dispatched at p_min, with its minimum
up time already satisfied. Ramp rows are omitted for units whose ramp rate
is at least p_max (they cannot bind). The PTDF form makes nodal balance
implicit: with system balance, branch flows computed from net injections
satisfy Kirchhoff's current law at every bus.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from gridrisk.grid import PowerGrid, PtdfMatrix, compute_ptdf
from gridrisk.lp import OPTIMAL, LinearProgram, solve_lp
from gridrisk.milp import branch_and_bound


@dataclass(frozen=True)
class ScucConfig:
    reserve_fraction: float = 0.05
    shed_penalty: float = 1000.0  # $/MWh
    # Each bus's shed is split into equal load segments priced in increasing
    # order (segment first, then bus), so shedding that the network does not
    # localise is spread roughly pro rata instead of piling onto one bus.
    shed_segments: int = 10
    shed_penalty_spread: float = 1e-3
    gap: float = 1e-4
    node_limit: int = 10_000
    lp_method: str = "simplex"


class ScucInputError(ValueError):
    pass


@dataclass
class _Index:
    T: int
    nG: int
    nW: int
    nB: int

    S: int = 1

    def __post_init__(self):
        T, nG, nW, nB, S = self.T, self.nG, self.nW, self.nB, self.S
        off = 0
        self.u = np.arange(off, off + nG * T).reshape(nG, T); off += nG * T
        self.v = np.arange(off, off + nG * T).reshape(nG, T); off += nG * T
        self.w = np.arange(off, off + nG * T).reshape(nG, T); off += nG * T
        self.p = np.arange(off, off + nG * T).reshape(nG, T); off += nG * T
        self.pw = np.arange(off, off + nW * T).reshape(nW, T); off += nW * T
        self.s = np.arange(off, off + nB * T * S).reshape(nB, T, S); off += nB * T * S
        self.n = off


@dataclass
class ScucProblem:
    grid: PowerGrid
    ptdf: PtdfMatrix
    bus_load: np.ndarray  # (T, n_bus)
    bus_wind: np.ndarray  # (T, n_bus) available wind at each bus
    config: ScucConfig
    lp: LinearProgram
    index: _Index
    line_limits: bool = True
    reserve: bool = True
    row_counts: dict = field(default_factory=dict)

    @property
    def horizon(self) -> int:
        return self.bus_load.shape[0]

    @property
    def integer(self) -> np.ndarray:
        mask = np.zeros(self.lp.n, dtype=bool)
        mask[self.index.u.ravel()] = True
        return mask


@dataclass
class ScucSolution:
    uc: np.ndarray          # (nG, T) 0/1 for thermal units
    dispatch: np.ndarray    # (nG, T) MW
    wind: np.ndarray        # (nW, T) MW dispatched
    shed: np.ndarray        # (T, n_bus) MW
    flows: np.ndarray       # (T, Q) MW
    objective: float
    status: str             # optimal | gap_limited | infeasible
    bound: float = math.nan
    nodes: int = 0
    wall_time: float = 0.0

    def injections(self, problem: ScucProblem) -> np.ndarray:
        g = problem.grid
        Gm = g.gen_bus_matrix(g.thermal)
        Wm = g.gen_bus_matrix(g.wind)
        return (Gm @ self.dispatch).T + (Wm @ self.wind).T - problem.bus_load + self.shed


def _wind_availability(grid: PowerGrid, bus_wind: np.ndarray) -> np.ndarray:
    """Split bus-level wind MW over the wind units at that bus by rated capacity: (nW, T)."""
    avail = np.zeros((len(grid.wind), bus_wind.shape[0]))
    cap_at_bus = np.zeros(grid.n_bus)
    for gen in grid.wind:
        cap_at_bus[grid.bus_index[gen.bus]] += gen.p_max
    for k, gen in enumerate(grid.wind):
        b = grid.bus_index[gen.bus]
        if cap_at_bus[b] > 0:
            avail[k] = bus_wind[:, b] * gen.p_max / cap_at_bus[b]
    return np.minimum(avail, np.array([gen.p_max for gen in grid.wind])[:, None])


def shed_penalties(grid: PowerGrid, config: ScucConfig) -> np.ndarray:
    """(n_bus, segments) $/MWh: VOLL * (1 + spread * (k * n + b) / (segments * n))."""
    n, S = grid.n_bus, config.shed_segments
    rank = np.arange(S)[None, :] * n + np.arange(n)[:, None]
    return config.shed_penalty * (1.0 + config.shed_penalty_spread * rank / (S * n))


def build_scuc(
    grid: PowerGrid,
    bus_load: np.ndarray,
    bus_wind: np.ndarray,
    config: ScucConfig = ScucConfig(),
    *,
    ptdf: PtdfMatrix | None = None,
    line_limits: bool = True,
    reserve: bool = True,
) -> ScucProblem:
    bus_load = np.atleast_2d(np.asarray(bus_load, dtype=float))
    bus_wind = np.atleast_2d(np.asarray(bus_wind, dtype=float))
    if bus_load.shape != bus_wind.shape or bus_load.shape[1] != grid.n_bus:
        raise ScucInputError(
            f"load {bus_load.shape} / wind {bus_wind.shape} must both be (T, {grid.n_bus})"
        )
    if np.any(bus_load < 0) or np.any(bus_wind < 0):
        raise ScucInputError("loads and wind must be nonnegative")
    if not 0 <= config.reserve_fraction < 1:
        raise ScucInputError("reserve_fraction must lie in [0, 1)")
    th = grid.thermal
    if th and config.shed_penalty <= max(g.cost_linear for g in th):
        raise ScucInputError("shed_penalty must exceed every generator's linear cost")
    ptdf = ptdf if ptdf is not None else compute_ptdf(grid)

    T = bus_load.shape[0]
    nG, nW, nB, Q = len(th), len(grid.wind), grid.n_bus, grid.n_branch
    if config.shed_segments < 1:
        raise ScucInputError("shed_segments must be >= 1")
    ix = _Index(T, nG, nW, nB, config.shed_segments)
    n = ix.n
    pmin = np.array([g.p_min for g in th])
    pmax = np.array([g.p_max for g in th])

    c = np.zeros(n)
    lb = np.zeros(n)
    ub = np.full(n, np.inf)
    for gi, g in enumerate(th):
        c[ix.v[gi]] = g.startup_cost
        c[ix.w[gi]] = g.shutdown_cost
        c[ix.u[gi]] = g.cost_noload
        c[ix.p[gi]] = g.cost_linear
    ub[ix.u.ravel()] = 1.0
    ub[ix.v.ravel()] = 1.0
    ub[ix.w.ravel()] = 1.0
    avail = _wind_availability(grid, bus_wind)
    ub[ix.pw] = avail
    voll = shed_penalties(grid, config)
    c[ix.s] = voll[:, None, :]
    ub[ix.s] = bus_load.T[:, :, None] / config.shed_segments

    A_ub, b_ub, A_eq, b_eq = [], [], [], []
    counts = dict.fromkeys(
        ["balance", "line", "gen_limit", "logic", "min_up", "min_down", "ramp", "reserve"], 0
    )

    def row():
        return np.zeros(n)

    total_load = bus_load.sum(axis=1)
    Gm = grid.gen_bus_matrix(th)
    Wm = grid.gen_bus_matrix(grid.wind)
    H = ptdf.entries
    HG = H @ Gm
    HW = H @ Wm

    for t in range(T):
        r = row()
        r[ix.p[:, t]] = 1.0
        r[ix.pw[:, t]] = 1.0
        r[ix.s[:, t]] = 1.0
        A_eq.append(r); b_eq.append(total_load[t]); counts["balance"] += 1

        if line_limits:
            base = H @ bus_load[t]
            for k in range(Q):
                r = row()
                r[ix.p[:, t]] = HG[k]
                r[ix.pw[:, t]] = HW[k]
                r[ix.s[:, t]] = H[k][:, None]
                lim = grid.branches[k].flow_limit
                A_ub.append(r); b_ub.append(lim + base[k])
                A_ub.append(-r); b_ub.append(lim - base[k])
                counts["line"] += 2

        for gi in range(nG):
            r = row(); r[ix.p[gi, t]] = 1.0; r[ix.u[gi, t]] = -pmax[gi]
            A_ub.append(r); b_ub.append(0.0)
            r = row(); r[ix.p[gi, t]] = -1.0; r[ix.u[gi, t]] = pmin[gi]
            A_ub.append(r); b_ub.append(0.0)
            counts["gen_limit"] += 2

            r = row(); r[ix.u[gi, t]] = 1.0; r[ix.v[gi, t]] = -1.0; r[ix.w[gi, t]] = 1.0
            rhs = 0.0
            if t == 0:
                rhs = 1.0  # u_0 = 1
            else:
                r[ix.u[gi, t - 1]] = -1.0
            A_eq.append(r); b_eq.append(rhs); counts["logic"] += 1

            g = th[gi]
            if g.min_up > 1:
                r = row()
                r[ix.v[gi, max(0, t - g.min_up + 1): t + 1]] = 1.0
                r[ix.u[gi, t]] = -1.0
                A_ub.append(r); b_ub.append(0.0); counts["min_up"] += 1
            if g.min_down > 1:
                r = row()
                r[ix.w[gi, max(0, t - g.min_down + 1): t + 1]] = 1.0
                r[ix.u[gi, t]] = 1.0
                A_ub.append(r); b_ub.append(1.0); counts["min_down"] += 1

            if g.ramp_rate < g.p_max:
                r_up = row(); r_dn = row()
                r_up[ix.p[gi, t]] = 1.0; r_up[ix.v[gi, t]] = -g.p_max
                r_dn[ix.p[gi, t]] = -1.0; r_dn[ix.w[gi, t]] = -g.p_max
                if t == 0:
                    up_rhs = g.ramp_rate + g.p_min
                    dn_rhs = g.ramp_rate - g.p_min
                else:
                    r_up[ix.p[gi, t - 1]] = -1.0
                    r_dn[ix.p[gi, t - 1]] = 1.0
                    up_rhs = dn_rhs = g.ramp_rate
                A_ub += [r_up, r_dn]; b_ub += [up_rhs, dn_rhs]; counts["ramp"] += 2

        if reserve and nG:
            r = row()
            r[ix.u[:, t]] = -pmax
            r[ix.p[:, t]] = 1.0
            A_ub.append(r); b_ub.append(-config.reserve_fraction * total_load[t])
            counts["reserve"] += 1

    lp = LinearProgram(
        c,
        np.array(A_ub) if A_ub else None,
        np.array(b_ub) if b_ub else None,
        np.array(A_eq),
        np.array(b_eq),
        lb,
        ub,
    )
    return ScucProblem(grid, ptdf, bus_load, bus_wind, config, lp, ix,
                       line_limits=line_limits, reserve=reserve, row_counts=counts)


def _solution_from_x(problem: ScucProblem, x: np.ndarray, objective: float, status: str, **kw) -> ScucSolution:
    ix = problem.index
    uc = np.round(x[ix.u]).astype(np.int8)
    dispatch = x[ix.p] * (uc > 0)
    wind = x[ix.pw]
    shed = x[ix.s].sum(axis=2).T
    shed[shed < 0] = 0.0
    sol = ScucSolution(uc, dispatch, wind, shed, np.zeros((problem.horizon, problem.grid.n_branch)),
                       float(objective), status, **kw)
    sol.flows = problem.ptdf.flows(sol.injections(problem))
    return sol


def solve_milp(problem: ScucProblem, gap: float | None = None) -> ScucSolution:
    """Branch-and-bound solve of the full SCUC."""
    cfg = problem.config
    t0 = time.perf_counter()
    res = branch_and_bound(
        problem.lp,
        problem.integer,
        gap=cfg.gap if gap is None else gap,
        node_limit=cfg.node_limit,
        lp_method=cfg.lp_method,
    )
    wall = time.perf_counter() - t0
    if res.x is None:
        raise RuntimeError(
            f"SCUC returned no feasible solution (status {res.status}); "
            "shed slacks should make every instance feasible"
        )
    return _solution_from_x(problem, res.x, res.objective, res.status,
                            bound=res.bound, nodes=res.nodes, wall_time=wall)


def fix_uc(problem: ScucProblem, uc: np.ndarray) -> LinearProgram:
    uc = np.asarray(uc, dtype=float)
    ix = problem.index
    lb, ub = problem.lp.lb.copy(), problem.lp.ub.copy()
    lb[ix.u] = uc
    ub[ix.u] = uc
    return problem.lp.with_bounds(lb, ub)


def solve_dispatch_fixed_uc(
    problem: ScucProblem,
    uc: np.ndarray,
    *,
    relax_line_limits: bool = False,
    relax_reserve: bool = False,
) -> ScucSolution:
    """Dispatch + shed LP with the commitment pinned to ``uc``.

    The relax flags drop the corresponding constraint families (used by the
    cause-aware decomposition).
    """
    if relax_line_limits or relax_reserve:
        problem = build_scuc(
            problem.grid, problem.bus_load, problem.bus_wind, problem.config,
            ptdf=problem.ptdf,
            line_limits=problem.line_limits and not relax_line_limits,
            reserve=problem.reserve and not relax_reserve,
        )
    t0 = time.perf_counter()
    res = solve_lp(fix_uc(problem, uc), method=problem.config.lp_method)
    if res.status != OPTIMAL:
        raise RuntimeError(f"fixed-commitment dispatch failed: {res.status}")
    sol = _solution_from_x(problem, res.x, res.objective, "optimal",
                           wall_time=time.perf_counter() - t0)
    return sol


@dataclass
class CauseAwareShed:
    """Shed split (MW) per step at system level and per zone: arrays (T,) and (n_zone, T)."""

    total: np.ndarray
    reserve: np.ndarray
    nonreserve: np.ndarray
    zonal_total: np.ndarray
    zonal_reserve: np.ndarray
    zonal_nonreserve: np.ndarray
    clamped: int  # entries where reserve exceeded total by more than 1e-6 MW


def split_shed(total_bus: np.ndarray, reserve_bus: np.ndarray, grid: PowerGrid) -> CauseAwareShed:
    """Form the system/zonal decomposition from bus-level (T, n_bus) shed matrices."""
    zt = total_bus @ grid.zone_masks.T.astype(float)
    zr = reserve_bus @ grid.zone_masks.T.astype(float)
    st, sr = zt.sum(axis=1), zr.sum(axis=1)
    clamped = int(np.sum(sr > st + 1e-6) + np.sum(zr > zt + 1e-6))
    return CauseAwareShed(
        total=st,
        reserve=sr,
        nonreserve=np.maximum(st - sr, 0.0),
        zonal_total=zt.T,
        zonal_reserve=zr.T,
        zonal_nonreserve=np.maximum(zt - zr, 0.0).T,
        clamped=clamped,
    )


def cause_aware_shedding(problem: ScucProblem, milp: ScucSolution | None = None):
    """Two-solve decomposition of load shedding.

    The full SCUC gives the total shed. Re-solving dispatch with the MILP's
    commitment fixed and the network (line-flow) limits lifted leaves only
    what the commitment itself forces: shedding needed to keep the reserve
    margin (or covering a capacity shortfall) of the chosen units. That is the
    reserve-related part; the remainder is attributed to non-reserve
    (security) constraints.

    Returns ``(CauseAwareShed, milp_solution, reserve_solution)``.
    """
    if milp is None:
        milp = solve_milp(problem)
    reserve_sol = solve_dispatch_fixed_uc(problem, milp.uc, relax_line_limits=True)
    split = split_shed(milp.shed, reserve_sol.shed, problem.grid)
    return split, milp, reserve_sol


@dataclass
class QoiRecord:
    """Per-step quantities of interest: thermal generation and shed (zonal + system), flows."""

    gen_zone: np.ndarray    # (n_zone, T)
    gen_system: np.ndarray  # (T,)
    shed_zone: np.ndarray   # (n_zone, T)
    shed_system: np.ndarray # (T,)
    injections: np.ndarray  # (T, n_bus)
    flows: np.ndarray       # (T, Q)


def extract_qois(solution: ScucSolution, problem: ScucProblem) -> QoiRecord:
    if solution.status == "infeasible":
        raise ValueError("cannot extract QoIs from an infeasible solution")
    grid = problem.grid
    Z = grid.zone_masks.astype(float)
    gen_bus = (grid.gen_bus_matrix(grid.thermal) @ solution.dispatch)  # (n_bus, T)
    gen_zone = Z @ gen_bus
    shed_zone = Z @ solution.shed.T
    inj = solution.injections(problem)
    return QoiRecord(
        gen_zone=gen_zone,
        gen_system=gen_zone.sum(axis=0),
        shed_zone=shed_zone,
        shed_system=shed_zone.sum(axis=0),
        injections=inj,
        flows=problem.ptdf.flows(inj),
    )


def with_config(problem: ScucProblem, **changes) -> ScucProblem:
    cfg = replace(problem.config, **changes)
    return build_scuc(problem.grid, problem.bus_load, problem.bus_wind, cfg,
                      ptdf=problem.ptdf, line_limits=problem.line_limits, reserve=problem.reserve)
