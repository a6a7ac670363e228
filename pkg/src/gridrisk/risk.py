"""Monte-Carlo reliability and risk metrics for load shedding and branch overloading.

Inputs are plain sample arrays, so the same estimators serve MILP labels and
surrogate predictions:

``shed``   (N, K, T) MW of shedding per scope (zones then ``system``)
``flows``  (N, T, Q) branch flows in MW

Conventions
-----------
* Shedding indicator: psi > shed_tolerance (1e-3 MW by default).
* Overload indicator: |gamma| > eps * gamma_max + overload_tolerance; the
  overload amount is gamma_tilde = |gamma| - eps * gamma_max.
* Multi-step quantities look at the window t+1 .. t+dT and are only defined for
  t <= T - dT. Conditional probabilities with no conditioning event are NaN and
  carry a count of 0; they are never reported as 0.
* Time indices are 0-based in arrays and 1-based in files.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

DEFAULT_SHED_TOLERANCE = 1e-3


# ----------------------------------------------------------------------------
# consequence costs


@dataclass(frozen=True)
class CostCurve:
    """Marginal cost C(x) in $/MW as a step function.

    ``rates[k]`` applies on [breaks[k-1], breaks[k]) with breaks[-1] = 0 and the
    last rate extending to infinity. A single rate is the constant curve.
    """

    rates: tuple[float, ...] = (10.0,)
    breaks: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "rates", tuple(float(r) for r in self.rates))
        object.__setattr__(self, "breaks", tuple(float(b) for b in self.breaks))
        if len(self.rates) != len(self.breaks) + 1:
            raise ValueError("need exactly one more rate than breakpoints")
        if any(r < 0 for r in self.rates):
            raise ValueError("cost rates must be nonnegative")
        if any(b <= a for a, b in zip((0.0,) + self.breaks, self.breaks)):
            raise ValueError("breakpoints must be positive and increasing")

    @classmethod
    def constant(cls, c: float) -> "CostCurve":
        return cls((c,))

    @property
    def is_constant(self) -> bool:
        return not self.breaks

    def integral(self, x) -> np.ndarray:
        """Closed-form integral of C over [0, x]; x < 0 gives 0."""
        x = np.maximum(np.asarray(x, dtype=float), 0.0)
        if self.is_constant:
            return self.rates[0] * x
        edges = (0.0,) + self.breaks + (math.inf,)
        total = np.zeros_like(x)
        for r, lo, hi in zip(self.rates, edges[:-1], edges[1:]):
            total = total + r * (np.clip(x, lo, hi) - lo)
        return total

    def to_dict(self) -> dict:
        return {"rates": list(self.rates), "breaks": list(self.breaks)}

    @classmethod
    def from_dict(cls, d) -> "CostCurve":
        if isinstance(d, (int, float)):
            return cls.constant(d)
        return cls(tuple(d["rates"]), tuple(d.get("breaks", ())))


def shed_cost(psi, curve: CostCurve = CostCurve.constant(10.0), scale: float = 1.0) -> np.ndarray:
    """R_s = integral_0^psi C_s; ``scale`` is the optional discount factor."""
    return scale * curve.integral(psi)


def overload_amount(gamma, gamma_max, epsilon: float = 0.85) -> np.ndarray:
    return np.abs(np.asarray(gamma, float)) - epsilon * np.asarray(gamma_max, float)


def overload_cost(gamma, gamma_max, epsilon: float = 0.85,
                  curve: CostCurve = CostCurve.constant(1.0), scale: float = 1.0) -> np.ndarray:
    """R_o = max(integral_0^gamma_tilde C_o, 0)."""
    return scale * curve.integral(overload_amount(gamma, gamma_max, epsilon))


def discount(dt: int, enabled: bool) -> float:
    return 1.0 / (1.0 + dt) if enabled else 1.0


# ----------------------------------------------------------------------------
# indicators and probabilities


def shed_indicator(psi, tol: float = DEFAULT_SHED_TOLERANCE) -> np.ndarray:
    return np.asarray(psi) > tol


def overload_indicator(flows, gamma_max, epsilon: float = 0.85, tol: float = 0.0) -> np.ndarray:
    """(N, T, Q) booleans from flows (N, T, Q) and limits (Q,)."""
    return np.abs(np.asarray(flows, float)) > epsilon * np.asarray(gamma_max, float) + tol


def p_standalone(ind: np.ndarray, t: int) -> float:
    """Fraction of scenarios (axis 0) with the event at step t (axis 1)."""
    return float(np.mean(ind[:, t]))


def _window_union(ind: np.ndarray, t: int, dT: int) -> np.ndarray:
    return np.any(ind[:, t + 1:t + dT + 1], axis=1)


def p_multistep(ind: np.ndarray, t: int, dT: int) -> tuple[float, int]:
    """p(any event in t+1..t+dT | event at t) and the conditioning count; NaN if undefined."""
    T = ind.shape[1]
    if t + dT >= T:
        raise ValueError(f"window t+{dT} exceeds horizon {T} (0-based t={t})")
    cond = ind[:, t].astype(bool)
    count = int(cond.sum())
    if count == 0:
        return math.nan, 0
    return float(np.mean(_window_union(ind, t, dT)[cond])), count


def conditional_matrix(ind: np.ndarray, t: int) -> tuple[np.ndarray, np.ndarray]:
    """(Q, Q) entry (i, j) = p(event j at t | event i at t); rows with no event are NaN."""
    g = ind[:, t, :].astype(float)
    counts = g.sum(axis=0)
    joint = g.T @ g
    with np.errstate(invalid="ignore", divide="ignore"):
        m = joint / counts[:, None]
    m[counts == 0] = np.nan
    return m, counts.astype(np.int64)


def conditional_matrix_multistep(ind: np.ndarray, t: int, dT: int) -> tuple[np.ndarray, np.ndarray]:
    """(Q, Q) entry (i, j) = p(event j anywhere in t+1..t+dT | event i at t)."""
    g = ind[:, t, :].astype(float)
    w = _window_union(ind, t, dT).astype(float)
    counts = g.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        m = (g.T @ w) / counts[:, None]
    m[counts == 0] = np.nan
    return m, counts.astype(np.int64)


def conditional_slices(ind: np.ndarray, t: int, dT: int) -> np.ndarray:
    """(dT, Q, Q): entry [d-1, i, j] = p(event j at t+d | event i at t)."""
    g = ind[:, t, :].astype(float)
    counts = g.sum(axis=0)
    out = np.empty((dT, ind.shape[2], ind.shape[2]))
    for d in range(1, dT + 1):
        with np.errstate(invalid="ignore", divide="ignore"):
            out[d - 1] = (g.T @ ind[:, t + d, :].astype(float)) / counts[:, None]
        out[d - 1][counts == 0] = np.nan
    return out


# ----------------------------------------------------------------------------
# risks


def expected_risk_split(cost: np.ndarray, t: int, dT: int, use_discount: bool = False):
    """(standalone, multi-step, overall) from per-sample costs (N, T, ...).

    Standalone is E[R(t)], multi-step sums E[R(t+d)] for d = 1..dT (scaled by
    1/(1+d) when discounting), overall is their sum.
    """
    now = cost[:, t].mean(axis=0)
    ahead = sum(discount(d, use_discount) * cost[:, t + d].mean(axis=0) for d in range(1, dT + 1))
    return now, ahead, now + ahead


def significant_branches(flows: np.ndarray, gamma_max: np.ndarray, k: int,
                         branch_ids: Sequence[int] | None = None) -> list[int]:
    """Top-k branches by mean over scenarios of max_t |gamma| / gamma_max; ties by branch id.

    Returns branch ids (positions when ``branch_ids`` is None).
    """
    score = (np.abs(flows).max(axis=1) / np.asarray(gamma_max, float)).mean(axis=0)
    ids = list(range(len(score))) if branch_ids is None else list(branch_ids)
    order = sorted(range(len(score)), key=lambda q: (-score[q], ids[q]))
    return [ids[q] for q in order[:k]]


# ----------------------------------------------------------------------------
# report


@dataclass(frozen=True)
class RiskConfig:
    delta_t: int = 2
    epsilon: float = 0.85
    shed_tolerance: float = DEFAULT_SHED_TOLERANCE
    overload_tolerance: float = 0.0
    shed_curve: CostCurve = CostCurve.constant(10.0)
    overload_curve: CostCurve = CostCurve.constant(1.0)
    discount: bool = False

    def to_dict(self) -> dict:
        return {
            "delta_t": self.delta_t, "epsilon": self.epsilon, "shed_tolerance": self.shed_tolerance,
            "overload_tolerance": self.overload_tolerance, "shed_curve": self.shed_curve.to_dict(),
            "overload_curve": self.overload_curve.to_dict(), "discount": self.discount,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RiskConfig":
        d = dict(d)
        for k in ("shed_curve", "overload_curve"):
            if k in d:
                d[k] = CostCurve.from_dict(d[k])
        return cls(**d)


# fields holding (scope, T) arrays and how they are compared between pathways
PROBABILITY_FIELDS = ("p_shed", "p_shed_multi", "p_over", "p_over_multi")
RISK_FIELDS = ("risk_shed", "risk_shed_multi", "risk_shed_total",
               "risk_over", "risk_over_multi", "risk_over_total")


@dataclass
class RiskReport:
    source: str
    steps: int
    n_samples: int
    shed_scopes: tuple[str, ...]
    branch_ids: tuple[int, ...]
    config: RiskConfig
    p_shed: np.ndarray            # (K, T)
    p_shed_multi: np.ndarray      # (K, T), NaN where undefined
    shed_counts: np.ndarray       # (K, T) scenarios with shedding at t
    risk_shed: np.ndarray         # (K, T)
    risk_shed_multi: np.ndarray
    risk_shed_total: np.ndarray
    p_over: np.ndarray            # (B, T)
    p_over_multi: np.ndarray
    over_counts: np.ndarray
    risk_over_branch: np.ndarray  # (B, T) standalone per branch
    risk_over_multi_branch: np.ndarray
    risk_over: np.ndarray         # (1, T) summed over the branch set
    risk_over_multi: np.ndarray
    risk_over_total: np.ndarray
    cond: np.ndarray              # (T, B, B)
    cond_multi: np.ndarray        # (T, B, B)
    cond_slices: np.ndarray       # (T, dT, B, B)
    cond_counts: np.ndarray       # (T, B)
    meta: dict = field(default_factory=dict)

    def scopes(self, name: str) -> tuple[str, ...]:
        if name.startswith("p_over") or name.endswith("_branch"):
            return tuple(f"branch_{b}" for b in self.branch_ids)
        if name.startswith("risk_over"):
            return ("branches",)
        return self.shed_scopes

    # -- serialisation ---------------------------------------------------------------

    _ARRAY_FIELDS = (
        "p_shed", "p_shed_multi", "shed_counts", "risk_shed", "risk_shed_multi", "risk_shed_total",
        "p_over", "p_over_multi", "over_counts", "risk_over_branch", "risk_over_multi_branch",
        "risk_over", "risk_over_multi", "risk_over_total", "cond", "cond_multi", "cond_slices",
        "cond_counts",
    )

    def to_dict(self) -> dict:
        d = {
            "kind": "gridrisk-risk-report", "source": self.source, "steps": self.steps,
            "n_samples": self.n_samples, "shed_scopes": list(self.shed_scopes),
            "branch_ids": list(self.branch_ids), "config": self.config.to_dict(), "meta": self.meta,
        }
        for f in self._ARRAY_FIELDS:
            d[f] = _nan_to_none(getattr(self, f))
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RiskReport":
        arrays = {f: _none_to_nan(d[f], int if f.endswith("counts") else float) for f in cls._ARRAY_FIELDS}
        return cls(
            source=d["source"], steps=d["steps"], n_samples=d["n_samples"],
            shed_scopes=tuple(d["shed_scopes"]), branch_ids=tuple(d["branch_ids"]),
            config=RiskConfig.from_dict(d["config"]), meta=d.get("meta", {}), **arrays,
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1, allow_nan=False) + "\n"

    def to_csv(self) -> str:
        """Long format: metric,scope,t,value,count (empty value = undefined)."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "scope", "t", "value", "count"])
        counts = {
            "p_shed": self.shed_counts, "p_shed_multi": self.shed_counts,
            "p_over": self.over_counts, "p_over_multi": self.over_counts,
        }
        for name in PROBABILITY_FIELDS + RISK_FIELDS:
            arr = getattr(self, name)
            for k, scope in enumerate(self.scopes(name)):
                for t in range(self.steps):
                    v = arr[k, t]
                    c = counts[name][k, t] if name in counts else self.n_samples
                    if name in ("p_shed", "p_over"):
                        c = self.n_samples
                    w.writerow([name, scope, t + 1, "" if math.isnan(v) else repr(float(v)), int(c)])
        return buf.getvalue()

    def write(self, out_dir: str | Path, stem: str | None = None) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = stem or f"risk_{self.source}"
        paths = [out / f"{stem}.json", out / f"{stem}.csv"]
        paths[0].write_text(self.to_json(), encoding="utf-8")
        paths[1].write_text(self.to_csv(), encoding="utf-8")
        return paths


def read_report(path: str | Path) -> RiskReport:
    return RiskReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _nan_to_none(a):
    a = np.asarray(a)
    if a.dtype.kind in "iub":
        return a.tolist()
    return [_nan_to_none(x) for x in a] if a.ndim else (None if math.isnan(a) else float(a))


def _none_to_nan(v, kind):
    if kind is int:
        return np.asarray(v, dtype=np.int64)
    return np.asarray(_map_none(v), dtype=float)


def _map_none(v):
    if isinstance(v, list):
        return [_map_none(x) for x in v]
    return math.nan if v is None else v


def assess(
    shed: np.ndarray,
    flows: np.ndarray,
    gamma_max: np.ndarray,
    config: RiskConfig = RiskConfig(),
    *,
    shed_scopes: Sequence[str],
    branch_ids: Sequence[int],
    branches: Sequence[int] | None = None,
    source: str = "milp",
    meta: dict | None = None,
) -> RiskReport:
    """Compute every metric of a :class:`RiskReport`.

    ``branches`` selects (by id) the branch set for the overload metrics and
    risk sums; None means all branches.
    """
    shed = np.asarray(shed, float)
    flows = np.asarray(flows, float)
    if shed.ndim != 3 or flows.ndim != 3:
        raise ValueError("shed must be (N, K, T) and flows (N, T, Q)")
    N, K, T = shed.shape
    if flows.shape[:2] != (N, T):
        raise ValueError(f"flows shape {flows.shape} does not match shed {shed.shape}")
    if len(shed_scopes) != K:
        raise ValueError("one scope name per shed row")
    if not (np.all(np.isfinite(shed)) and np.all(np.isfinite(flows))):
        raise ValueError("risk inputs contain non-finite values")
    dT = config.delta_t
    ids = list(branch_ids)
    sel = ids if branches is None else list(branches)
    cols = [ids.index(b) for b in sel]
    fl = flows[:, :, cols]
    gmax = np.asarray(gamma_max, float)[cols]
    B = len(cols)

    psi_ind = shed_indicator(np.transpose(shed, (0, 2, 1)), config.shed_tolerance)   # (N, T, K)
    ov_ind = overload_indicator(fl, gmax, config.epsilon, config.overload_tolerance)  # (N, T, B)
    shed_cost_s = shed_cost(np.transpose(shed, (0, 2, 1)), config.shed_curve)          # (N, T, K)
    over_cost_s = overload_cost(fl, gmax, config.epsilon, config.overload_curve)     # (N, T, B)

    nan = lambda *s: np.full(s, np.nan)  # noqa: E731
    r = dict(
        p_shed=psi_ind.mean(axis=0).T, p_shed_multi=nan(K, T),
        shed_counts=psi_ind.sum(axis=0).T.astype(np.int64),
        risk_shed=shed_cost_s.mean(axis=0).T, risk_shed_multi=nan(K, T), risk_shed_total=nan(K, T),
        p_over=ov_ind.mean(axis=0).T, p_over_multi=nan(B, T),
        over_counts=ov_ind.sum(axis=0).T.astype(np.int64),
        risk_over_branch=over_cost_s.mean(axis=0).T, risk_over_multi_branch=nan(B, T),
        risk_over=over_cost_s.mean(axis=0).sum(axis=1)[None, :], risk_over_multi=nan(1, T),
        risk_over_total=nan(1, T),
        cond=nan(T, B, B), cond_multi=nan(T, B, B), cond_slices=nan(T, dT, B, B),
        cond_counts=np.zeros((T, B), dtype=np.int64),
    )
    for t in range(T):
        r["cond"][t], r["cond_counts"][t] = conditional_matrix(ov_ind, t)
        if t + dT >= T:
            continue
        for k in range(K):
            r["p_shed_multi"][k, t] = p_multistep(psi_ind[:, :, k], t, dT)[0]
        for b in range(B):
            r["p_over_multi"][b, t] = p_multistep(ov_ind[:, :, b], t, dT)[0]
        r["cond_multi"][t] = conditional_matrix_multistep(ov_ind, t, dT)[0]
        r["cond_slices"][t] = conditional_slices(ov_ind, t, dT)
        s_now, s_ahead, s_all = expected_risk_split(shed_cost_s, t, dT, config.discount)
        r["risk_shed"][:, t], r["risk_shed_multi"][:, t], r["risk_shed_total"][:, t] = s_now, s_ahead, s_all
        o_now, o_ahead, _ = expected_risk_split(over_cost_s, t, dT, config.discount)
        r["risk_over_multi_branch"][:, t] = o_ahead
        r["risk_over_multi"][0, t] = o_ahead.sum()
        r["risk_over_total"][0, t] = r["risk_over"][0, t] + r["risk_over_multi"][0, t]
    return RiskReport(source, T, N, tuple(shed_scopes), tuple(sel), config, meta=dict(meta or {}), **r)


# ----------------------------------------------------------------------------
# pathway comparison


class ReportMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class CompareThresholds:
    probability_abs: float = 0.05
    risk_rel: float = 0.15
    risk_floor: float = 1e-6   # denominators below this compare absolutely


@dataclass
class Divergence:
    metric: str
    scope: str
    t: int                 # 1-based
    reference: float
    candidate: float
    abs_diff: float
    rel_diff: float
    kind: str              # "probability" | "risk"
    exceeded: bool


def compare_pathways(reference: RiskReport, candidate: RiskReport,
                     thresholds: CompareThresholds = CompareThresholds()) -> list[Divergence]:
    """Per-metric, per-scope, per-t divergences of ``candidate`` from ``reference``.

    A conditional probability that is defined in one report and undefined in the
    other counts as exceeded; undefined in both is skipped.
    """
    for attr in ("steps", "n_samples", "shed_scopes", "branch_ids"):
        if getattr(reference, attr) != getattr(candidate, attr):
            raise ReportMismatchError(f"reports differ in {attr}")
    if reference.config != candidate.config:
        raise ReportMismatchError("reports were computed with different risk configs")
    a_hash, b_hash = reference.meta.get("scenario_hash"), candidate.meta.get("scenario_hash")
    if a_hash and b_hash and a_hash != b_hash:
        raise ReportMismatchError("reports cover different scenario sets")
    out = []
    for name in PROBABILITY_FIELDS + RISK_FIELDS:
        kind = "probability" if name in PROBABILITY_FIELDS else "risk"
        ra, rb = getattr(reference, name), getattr(candidate, name)
        for k, scope in enumerate(reference.scopes(name)):
            for t in range(reference.steps):
                a, b = float(ra[k, t]), float(rb[k, t])
                if math.isnan(a) and math.isnan(b):
                    continue
                if math.isnan(a) or math.isnan(b):
                    out.append(Divergence(name, scope, t + 1, a, b, math.nan, math.nan, kind, True))
                    continue
                diff = abs(b - a)
                denom = abs(a)
                rel = diff / denom if denom > thresholds.risk_floor else (0.0 if diff <= thresholds.risk_floor else math.inf)
                if kind == "probability":
                    bad = diff > thresholds.probability_abs
                else:
                    bad = rel > thresholds.risk_rel
                out.append(Divergence(name, scope, t + 1, a, b, diff, rel, kind, bool(bad)))
    return out


def divergence_csv(rows: list[Divergence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "scope", "t", "reference", "candidate", "abs_diff", "rel_diff", "kind", "exceeded"])

    def fmt(x):
        return "" if math.isnan(x) else repr(float(x))

    for d in rows:
        w.writerow([d.metric, d.scope, d.t, fmt(d.reference), fmt(d.candidate), fmt(d.abs_diff),
                    fmt(d.rel_diff), d.kind, int(d.exceeded)])
    return buf.getvalue()


# ----------------------------------------------------------------------------
# plot data


def plot_series(report: RiskReport) -> dict[str, str]:
    """Per-figure CSV text keyed by file stem: one t column plus one column per scope."""
    files = {}
    for name in PROBABILITY_FIELDS + RISK_FIELDS:
        arr = getattr(report, name)
        scopes = report.scopes(name)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + list(scopes))
        for t in range(report.steps):
            w.writerow([t + 1] + ["" if math.isnan(v) else repr(float(v)) for v in arr[:, t]])
        files[f"{report.source}_{name}"] = buf.getvalue()
    for label, mats in (("cond", report.cond), ("cond_multi", report.cond_multi)):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "given_branch", "branch", "probability", "count"])
        for t in range(report.steps):
            for i, bi in enumerate(report.branch_ids):
                for j, bj in enumerate(report.branch_ids):
                    v = mats[t, i, j]
                    w.writerow([t + 1, bi, bj, "" if math.isnan(v) else repr(float(v)),
                                int(report.cond_counts[t, i])])
        files[f"{report.source}_{label}"] = buf.getvalue()
    return files
