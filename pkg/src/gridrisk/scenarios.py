"""Spatio-temporally correlated scenario generation.

Zonal stochastic variables (load in MW, wind speed in m/s) are drawn through a
Gaussian copula whose latent state is a per-column Gaussian random walk,
rescaled to unit variance at each step and mixed spatially by the Cholesky
factor of the covariance matrix. Wind speed is converted to power with a
cubic power curve, and zonal values are spread over buses with fixed
participation factors.

Column convention for the M = 2 * n_zone zonal variables: the first n_zone
columns are zone loads, the next n_zone columns are zone wind, both in zone
order.

Random numbers come from numpy's Philox4x64 counter-based generator. Each
scenario ``n`` owns the stream keyed by ``(n, seed)`` so scenarios can be
generated independently and in any order; Latin hypercube columns use keys
``(2**63 + column, seed)``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import special

from gridrisk.grid import PowerGrid

U_CLAMP = 1e-12
LHS_KEY_OFFSET = 2**63


# ----------------------------------------------------------------------------
# marginals


def norm_cdf(x):
    return special.ndtr(x)


def norm_ppf(u):
    return special.ndtri(u)


@dataclass(frozen=True)
class TruncatedNormal:
    mu: float
    sigma: float
    a: float
    b: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"truncated normal needs sigma > 0, got {self.sigma}")
        if not self.a < self.b:
            raise ValueError(f"truncated normal needs a < b, got [{self.a}, {self.b}]")

    @property
    def _ab(self) -> tuple[float, float]:
        return (self.a - self.mu) / self.sigma, (self.b - self.mu) / self.sigma

    def cdf(self, x):
        alpha, beta = self._ab
        pa, pb = norm_cdf(alpha), norm_cdf(beta)
        z = (np.asarray(x, dtype=float) - self.mu) / self.sigma
        return np.clip((norm_cdf(z) - pa) / (pb - pa), 0.0, 1.0)

    def ppf(self, u):
        alpha, beta = self._ab
        pa, pb = norm_cdf(alpha), norm_cdf(beta)
        z = norm_ppf(pa + np.asarray(u, dtype=float) * (pb - pa))
        return np.clip(self.mu + self.sigma * z, self.a, self.b)

    def mean(self) -> float:
        alpha, beta = self._ab
        phi = lambda z: math.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)  # noqa: E731
        Z = norm_cdf(beta) - norm_cdf(alpha)
        return self.mu + self.sigma * (phi(alpha) - phi(beta)) / Z


@dataclass(frozen=True)
class Weibull:
    k: float
    lam: float

    def __post_init__(self):
        if not (self.k > 0 and self.lam > 0):
            raise ValueError(f"weibull needs k > 0 and lambda > 0, got {self.k}, {self.lam}")

    def cdf(self, x):
        x = np.maximum(np.asarray(x, dtype=float), 0.0)
        return -np.expm1(-((x / self.lam) ** self.k))

    def ppf(self, u):
        return self.lam * (-np.log1p(-np.asarray(u, dtype=float))) ** (1.0 / self.k)

    def mean(self) -> float:
        return self.lam * math.gamma(1.0 + 1.0 / self.k)


@dataclass(frozen=True)
class Uniform:
    lo: float = 0.0
    hi: float = 1.0

    def cdf(self, x):
        return np.clip((np.asarray(x, dtype=float) - self.lo) / (self.hi - self.lo), 0.0, 1.0)

    def ppf(self, u):
        return self.lo + np.asarray(u, dtype=float) * (self.hi - self.lo)

    def mean(self) -> float:
        return 0.5 * (self.lo + self.hi)


Marginal = TruncatedNormal | Weibull | Uniform


def marginal_from_dict(d: dict) -> Marginal:
    kind = d.get("kind", "").replace("_", "-").lower()
    if kind in ("truncated-normal", "tn"):
        return TruncatedNormal(float(d["mu"]), float(d["sigma"]), float(d["a"]), float(d["b"]))
    if kind in ("weibull", "wb"):
        return Weibull(float(d["k"]), float(d["lam"]))
    if kind == "uniform":
        return Uniform(float(d.get("lo", 0.0)), float(d.get("hi", 1.0)))
    raise ValueError(f"unknown marginal kind {d.get('kind')!r}")


def marginal_to_dict(m: Marginal) -> dict:
    if isinstance(m, TruncatedNormal):
        return {"kind": "truncated-normal", "mu": m.mu, "sigma": m.sigma, "a": m.a, "b": m.b}
    if isinstance(m, Weibull):
        return {"kind": "weibull", "k": m.k, "lam": m.lam}
    return {"kind": "uniform", "lo": m.lo, "hi": m.hi}


# Case118 zone table (load truncated-normal MW, wind-speed Weibull m/s), zones I-III
DEFAULT_LOAD_MARGINALS = (
    TruncatedNormal(50.0, 15.0, 10.0, 90.0),
    TruncatedNormal(75.0, 20.0, 25.0, 125.0),
    TruncatedNormal(100.0, 15.0, 60.0, 140.0),
)
DEFAULT_WIND_MARGINALS = (
    Weibull(2.0, 8.0),
    Weibull(1.8, 8.2),
    Weibull(2.2, 7.8),
)


# ----------------------------------------------------------------------------
# covariance


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    def __init__(self, pivot: int, value: float):
        self.pivot = pivot
        super().__init__(f"matrix is not positive definite: pivot {pivot} is {value:.3g}")


def cholesky(C: np.ndarray) -> np.ndarray:
    """Lower-triangular ``L`` with ``L @ L.T == C``."""
    C = np.asarray(C, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ValueError("covariance must be square")
    if not np.allclose(C, C.T, atol=1e-12, rtol=0):
        raise ValueError("covariance must be symmetric")
    m = C.shape[0]
    L = np.zeros_like(C)
    for j in range(m):
        d = C[j, j] - L[j, :j] @ L[j, :j]
        if not d > 0:
            raise NotPositiveDefiniteError(j, d)
        L[j, j] = math.sqrt(d)
        L[j + 1:, j] = (C[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return L


def check_covariance(C: np.ndarray) -> None:
    C = np.asarray(C, dtype=float)
    if not np.allclose(np.diag(C), 1.0, atol=1e-12):
        raise ValueError("covariance must have unit diagonal")
    cholesky(C)


def zone_adjacency(grid: PowerGrid) -> np.ndarray:
    Z = grid.n_zone
    adj = np.zeros((Z, Z), dtype=bool)
    for br in grid.branches:
        a = grid.bus_zone[grid.bus_index[br.from_bus]]
        b = grid.bus_zone[grid.bus_index[br.to_bus]]
        if a != b:
            adj[a, b] = adj[b, a] = True
    return adj


def default_covariance(adjacent: np.ndarray, rho: float = 0.3) -> np.ndarray:
    """Unit diagonal, ``rho`` between same-type variables of adjacent zones."""
    adjacent = np.asarray(adjacent, dtype=bool)
    Z = adjacent.shape[0]
    C = np.eye(2 * Z)
    block = np.where(adjacent & ~np.eye(Z, dtype=bool), rho, 0.0)
    C[:Z, :Z] += block
    C[Z:, Z:] += block
    return C


# ----------------------------------------------------------------------------
# sampling


def _scenario_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=np.array([index, seed], dtype=np.uint64)))


@dataclass(frozen=True)
class CorrelatedDraw:
    """Output of the copula walk: latent Gaussians, uniforms and marginal values, each (N, T, M)."""

    latent: np.ndarray
    u: np.ndarray
    values: np.ndarray


def sample_correlated(
    n: int,
    steps: int,
    marginals: Sequence[Marginal],
    C: np.ndarray,
    seed: int,
    *,
    start: int = 0,
) -> CorrelatedDraw:
    """Draw ``n`` scenarios of ``steps`` correlated steps.

    Per scenario the latent state walks ``x_t = x_{t-1} + eps_t`` with standard
    normal increments, is rescaled ``s_t = x_t / sqrt(t)``, mixed as
    ``xc_t = L s_t`` and pushed through the normal CDF and the marginal
    inverse CDFs. ``start`` offsets the scenario index used to key the RNG,
    so chunks generated separately concatenate to the same result.
    """
    M = len(marginals)
    C = np.asarray(C, dtype=float)
    if C.shape != (M, M):
        raise ValueError(f"covariance is {C.shape}, expected ({M}, {M})")
    if n < 1 or steps < 1:
        raise ValueError("need n >= 1 and steps >= 1")
    L = cholesky(C)
    eps = np.empty((n, steps, M))
    for i in range(n):
        eps[i] = _scenario_rng(seed, start + i).standard_normal((steps, M))
    x = np.cumsum(eps, axis=1)
    s = x / np.sqrt(np.arange(1, steps + 1))[None, :, None]
    latent = s @ L.T
    u = norm_cdf(latent)
    uc = np.clip(u, U_CLAMP, 1.0 - U_CLAMP)
    values = np.empty_like(u)
    for j, m in enumerate(marginals):
        values[..., j] = m.ppf(uc[..., j])
    return CorrelatedDraw(latent=latent, u=u, values=values)


def lhs_unit(n: int, m: int, seed: int) -> np.ndarray:
    """(n, m) Latin hypercube in the unit cube; one point per stratum per column."""
    if n < 1:
        raise ValueError("need n >= 1")
    out = np.empty((n, m))
    for j in range(m):
        rng = _scenario_rng(seed, LHS_KEY_OFFSET + j)
        perm = rng.permutation(n)
        out[:, j] = (perm + rng.random(n)) / n
    return out


def lhs_first_step(n: int, marginals: Sequence[Marginal], seed: int) -> np.ndarray:
    u = np.clip(lhs_unit(n, len(marginals), seed), U_CLAMP, 1.0 - U_CLAMP)
    return np.column_stack([m.ppf(u[:, j]) for j, m in enumerate(marginals)])


def rank_match(reference: np.ndarray, replacement: np.ndarray) -> np.ndarray:
    """Reorder ``replacement`` (per column) to have the same ranks as ``reference``."""
    out = np.empty_like(replacement)
    for j in range(reference.shape[1]):
        order = np.argsort(reference[:, j], kind="stable")
        out[order, j] = np.sort(replacement[:, j])
    return out


# ----------------------------------------------------------------------------
# wind & disaggregation


@dataclass(frozen=True)
class WindCurve:
    v_min: float = 1.0
    v_max: float = 15.0
    p_rated: float = 100.0

    def __post_init__(self):
        if not (0 <= self.v_min < self.v_max and self.p_rated > 0):
            raise ValueError("wind curve needs 0 <= v_min < v_max and p_rated > 0")


def wind_power(v, curve: WindCurve = WindCurve()):
    """Cubic power curve clamped to ``[0, p_rated]`` (MW)."""
    v = np.asarray(v, dtype=float)
    raw = curve.p_rated * (v**3 - curve.v_min**3) / (curve.v_max**3 - curve.v_min**3)
    return np.clip(raw, 0.0, curve.p_rated)


class DisaggregationError(ValueError):
    pass


def participation_factors(grid: PowerGrid, kind: str) -> np.ndarray:
    """Per-bus share of its zone's load (by base load) or wind (by rated capacity)."""
    if kind == "load":
        w = grid.base_loads.copy()
    elif kind == "wind":
        w = np.zeros(grid.n_bus)
        for g in grid.wind:
            w[grid.bus_index[g.bus]] += g.p_max
    else:
        raise ValueError(kind)
    f = np.zeros(grid.n_bus)
    for z in range(grid.n_zone):
        mask = grid.zone_masks[z]
        tot = w[mask].sum()
        if tot > 0:
            f[mask] = w[mask] / tot
    return f


def disaggregate(
    zonal: np.ndarray,
    factors: np.ndarray,
    bus_zone: np.ndarray,
    *,
    allow_empty_zones: bool = False,
    tol: float = 1e-9,
) -> np.ndarray:
    """Spread zonal values (..., Z) onto buses (..., n_bus) with fixed factors."""
    zonal = np.asarray(zonal, dtype=float)
    factors = np.asarray(factors, dtype=float)
    bus_zone = np.asarray(bus_zone, dtype=int)
    Z = zonal.shape[-1]
    if np.any(factors < 0):
        raise DisaggregationError("participation factors must be >= 0")
    for z in range(Z):
        s = factors[bus_zone == z].sum()
        if abs(s - 1.0) <= tol:
            continue
        if allow_empty_zones and s == 0.0:
            if np.any(zonal[..., z] != 0):
                raise DisaggregationError(f"zone {z} has no participating buses but nonzero value")
            continue
        raise DisaggregationError(f"factors of zone {z} sum to {s!r}, not 1")
    return zonal[..., bus_zone] * factors


# ----------------------------------------------------------------------------
# scenario sets


@dataclass(frozen=True)
class ScenarioSet:
    """N scenarios x T steps of zonal load and wind power plus their bus-level split.

    ``zonal`` holds MW in column order (loads, then wind); ``draws`` holds the
    raw marginal samples (wind columns in m/s); ``latent`` and ``u`` are the
    copula intermediates. ``bus_load``/``bus_wind`` are (N, T, n_bus).
    """

    zonal: np.ndarray
    draws: np.ndarray
    latent: np.ndarray
    u: np.ndarray
    bus_load: np.ndarray
    bus_wind: np.ndarray
    seed: int
    zone_names: tuple[str, ...]
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def n(self) -> int:
        return self.zonal.shape[0]

    @property
    def steps(self) -> int:
        return self.zonal.shape[1]

    @property
    def columns(self) -> list[str]:
        return [f"load_{z}" for z in self.zone_names] + [f"wind_{z}" for z in self.zone_names]

    def subset(self, idx) -> "ScenarioSet":
        idx = np.asarray(idx)
        return ScenarioSet(
            self.zonal[idx], self.draws[idx], self.latent[idx], self.u[idx],
            self.bus_load[idx], self.bus_wind[idx], self.seed, self.zone_names, dict(self.meta),
        )


def zonal_wind_capacity(grid: PowerGrid) -> np.ndarray:
    cap = np.zeros(grid.n_zone)
    for g in grid.wind:
        cap[grid.bus_zone[grid.bus_index[g.bus]]] += g.p_max
    return cap


def build_scenarios(
    grid: PowerGrid,
    draws: np.ndarray,
    *,
    latent: np.ndarray | None = None,
    u: np.ndarray | None = None,
    seed: int = 0,
    curve: WindCurve = WindCurve(),
    meta: dict | None = None,
) -> ScenarioSet:
    """Convert raw zonal draws (load MW, wind speed) into a ScenarioSet on ``grid``."""
    Z = grid.n_zone
    draws = np.asarray(draws, dtype=float)
    if draws.shape[-1] != 2 * Z:
        raise ValueError(f"expected {2 * Z} zonal columns, got {draws.shape[-1]}")
    cap = zonal_wind_capacity(grid)
    zonal = draws.copy()
    zonal[..., Z:] = wind_power(draws[..., Z:], curve) / curve.p_rated * cap
    bus_load = disaggregate(zonal[..., :Z], participation_factors(grid, "load"), grid.bus_zone)
    bus_wind = disaggregate(
        zonal[..., Z:], participation_factors(grid, "wind"), grid.bus_zone, allow_empty_zones=True
    )
    latent = np.full_like(draws, np.nan) if latent is None else latent
    u = np.full_like(draws, np.nan) if u is None else u
    return ScenarioSet(
        zonal, draws, latent, u, bus_load, bus_wind, int(seed),
        tuple(z.name for z in grid.zones), dict(meta or {}),
    )


def generate_scenarios(
    grid: PowerGrid,
    n: int,
    steps: int,
    seed: int,
    *,
    load_marginals: Sequence[Marginal] = DEFAULT_LOAD_MARGINALS,
    wind_marginals: Sequence[Marginal] = DEFAULT_WIND_MARGINALS,
    covariance: np.ndarray | None = None,
    curve: WindCurve = WindCurve(),
    lhs: bool = True,
) -> ScenarioSet:
    """Full sampler: copula walk, LHS-stratified first step (rank matched), wind conversion."""
    Z = grid.n_zone
    if len(load_marginals) != Z or len(wind_marginals) != Z:
        raise ValueError(f"need {Z} load and {Z} wind marginals")
    marginals = list(load_marginals) + list(wind_marginals)
    if covariance is None:
        covariance = default_covariance(zone_adjacency(grid))
    check_covariance(covariance)
    draw = sample_correlated(n, steps, marginals, covariance, seed)
    values, u = draw.values, draw.u.copy()
    if lhs:
        u1 = rank_match(u[:, 0, :], lhs_unit(n, len(marginals), seed))
        u[:, 0, :] = u1
        uc = np.clip(u1, U_CLAMP, 1.0 - U_CLAMP)
        values = values.copy()
        for j, m in enumerate(marginals):
            values[:, 0, j] = m.ppf(uc[:, j])
    meta = {"marginals": [marginal_to_dict(m) for m in marginals], "lhs": bool(lhs)}
    return build_scenarios(
        grid, values, latent=draw.latent, u=u, seed=seed, curve=curve, meta=meta
    )


# ----------------------------------------------------------------------------
# scenario file (CSV)
#
#   # gridrisk-scenarios v1
#   # N=<int> T=<int> M=<int> seed=<int>
#   # zones=<name>,<name>,...
#   # config_hash=<hex>            (optional)
#   scenario,t,<col>...,draw_<col>...,u_<col>...,latent_<col>...
#
# one row per (scenario, t), t 1-based; zonal columns in MW (load_*, wind_*),
# draw_* are raw marginal samples (wind in m/s), u_* copula uniforms and
# latent_* the mixed Gaussians. Floats are written with repr() so they round-trip.


def write_scenarios_csv(path: str | Path, scen: ScenarioSet, *, config_hash: str = "") -> None:
    cols = scen.columns
    buf = io.StringIO()
    buf.write("# gridrisk-scenarios v1\n")
    buf.write(f"# N={scen.n} T={scen.steps} M={len(cols)} seed={scen.seed}\n")
    buf.write("# zones=" + ",".join(scen.zone_names) + "\n")
    if config_hash:
        buf.write(f"# config_hash={config_hash}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scenario", "t"] + cols + [f"draw_{c}" for c in cols]
               + [f"u_{c}" for c in cols] + [f"latent_{c}" for c in cols])
    for i in range(scen.n):
        for t in range(scen.steps):
            row = [i, t + 1]
            for arr in (scen.zonal, scen.draws, scen.u, scen.latent):
                row.extend(repr(float(v)) for v in arr[i, t])
            w.writerow(row)
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def read_scenarios_csv(path: str | Path, grid: PowerGrid, curve: WindCurve = WindCurve()) -> ScenarioSet:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    header: dict[str, str] = {}
    body = []
    for line in text:
        if line.startswith("#"):
            for tok in line[1:].split():
                if "=" in tok:
                    k, v = tok.split("=", 1)
                    header[k] = v
        else:
            body.append(line)
    n, steps, m = int(header["N"]), int(header["T"]), int(header["M"])
    rows = list(csv.reader(body))[1:]
    data = np.array([[float(x) for x in r[2:]] for r in rows]).reshape(n, steps, 4 * m)
    zonal, draws, u, latent = (data[..., k * m:(k + 1) * m] for k in range(4))
    scen = build_scenarios(grid, draws, latent=latent, u=u, seed=int(header["seed"]), curve=curve)
    if not np.allclose(scen.zonal, zonal, rtol=0, atol=1e-9):
        raise ValueError("scenario file zonal values do not match the grid's wind capacity/curve")
    return scen
