"""Per-scenario SCUC labelling with resumable progress and deterministic output files.

Label files
-----------
``labels.grl``  binary container (see :mod:`gridrisk.container`) with arrays

    uc (N, nG, T) int8, dispatch (N, nG, T), wind (N, nW, T), shed_bus (N, T, n_bus),
    injections (N, T, n_bus), flows (N, T, Q), gen_zone / shed_zone (N, Z, T),
    gen_system / shed_system (N, T), shed_reserve / shed_nonreserve (N, T),
    shed_reserve_zone / shed_nonreserve_zone (N, Z, T), objective / bound (N,),
    nodes / clamped (N,) int64, status (N,) int8 (0 optimal, 1 gap_limited, 2 failed)

``labels.csv``  one row per (scenario, t)::

    scenario,t,status,objective,gen_system,shed_system,shed_reserve,shed_nonreserve,
    gen_<zone>...,shed_<zone>...,uc_<gen>...,p_<gen>...,flow_<branch>...

``labels_timing.csv``  scenario,wall_time_s. Kept apart from the label files so
that reruns stay byte-identical.

While running, finished scenarios are appended to ``labels.partial.jsonl``; a
restarted run skips those and produces the same final files.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from gridrisk.container import read_container, write_container
from gridrisk.grid import PowerGrid, compute_ptdf
from gridrisk.scenarios import ScenarioSet
from gridrisk.scuc import ScucConfig, build_scuc, cause_aware_shedding, extract_qois

logger = logging.getLogger(__name__)

STATUS_CODES = {"optimal": 0, "gap_limited": 1, "failed": 2}

_ARRAY_FIELDS = (
    "uc", "dispatch", "wind", "shed_bus", "injections", "flows", "gen_zone", "shed_zone",
    "gen_system", "shed_system", "shed_reserve", "shed_nonreserve", "shed_reserve_zone",
    "shed_nonreserve_zone", "objective", "bound", "nodes", "clamped", "status",
)


@dataclass
class LabelSet:
    uc: np.ndarray
    dispatch: np.ndarray
    wind: np.ndarray
    shed_bus: np.ndarray
    injections: np.ndarray
    flows: np.ndarray
    gen_zone: np.ndarray
    shed_zone: np.ndarray
    gen_system: np.ndarray
    shed_system: np.ndarray
    shed_reserve: np.ndarray
    shed_nonreserve: np.ndarray
    shed_reserve_zone: np.ndarray
    shed_nonreserve_zone: np.ndarray
    objective: np.ndarray
    bound: np.ndarray
    nodes: np.ndarray
    clamped: np.ndarray
    status: np.ndarray

    @property
    def n(self) -> int:
        return self.objective.shape[0]

    def subset(self, idx) -> "LabelSet":
        idx = np.asarray(idx)
        return LabelSet(**{f: getattr(self, f)[idx] for f in _ARRAY_FIELDS})

    @classmethod
    def from_records(cls, records: list[dict]) -> "LabelSet":
        out = {}
        for f in _ARRAY_FIELDS:
            vals = [r[f] for r in records]
            if f in ("uc", "status"):
                out[f] = np.array(vals, dtype=np.int8)
            elif f in ("nodes", "clamped"):
                out[f] = np.array(vals, dtype=np.int64)
            else:
                out[f] = np.array(vals, dtype=float)
        return cls(**out)


def label_one(grid: PowerGrid, scen: ScenarioSet, i: int, config: ScucConfig, ptdf=None) -> dict:
    """Solve scenario ``i``; returns a JSON-able record (plus ``wall_time``)."""
    t0 = time.perf_counter()
    problem = build_scuc(grid, scen.bus_load[i], scen.bus_wind[i], config, ptdf=ptdf)
    split, sol, _ = cause_aware_shedding(problem)
    q = extract_qois(sol, problem)
    return {
        "index": int(i),
        "uc": sol.uc.tolist(),
        "dispatch": sol.dispatch.tolist(),
        "wind": sol.wind.tolist(),
        "shed_bus": sol.shed.tolist(),
        "injections": q.injections.tolist(),
        "flows": q.flows.tolist(),
        "gen_zone": q.gen_zone.tolist(),
        "shed_zone": q.shed_zone.tolist(),
        "gen_system": q.gen_system.tolist(),
        "shed_system": q.shed_system.tolist(),
        "shed_reserve": split.reserve.tolist(),
        "shed_nonreserve": split.nonreserve.tolist(),
        "shed_reserve_zone": split.zonal_reserve.tolist(),
        "shed_nonreserve_zone": split.zonal_nonreserve.tolist(),
        "objective": sol.objective,
        "bound": sol.bound,
        "nodes": int(sol.nodes),
        "clamped": int(split.clamped),
        "status": STATUS_CODES.get(sol.status, 2),
        "wall_time": time.perf_counter() - t0,
    }


_WORKER_STATE: dict = {}


def _worker_init(grid, scen, config):
    _WORKER_STATE.update(grid=grid, scen=scen, config=config, ptdf=compute_ptdf(grid))


def _worker_run(i):
    s = _WORKER_STATE
    return label_one(s["grid"], s["scen"], i, s["config"], s["ptdf"])


def label_scenarios(
    grid: PowerGrid,
    scen: ScenarioSet,
    config: ScucConfig,
    out_dir: str | Path | None = None,
    *,
    workers: int = 1,
    header: dict | None = None,
    limit: int | None = None,
) -> LabelSet:
    """Label every scenario; resumable when ``out_dir`` is given.

    ``limit`` stops after that many newly solved scenarios (used to simulate
    an interrupted run); the partial progress file is left in place.
    """
    out = Path(out_dir) if out_dir is not None else None
    done: dict[int, dict] = {}
    partial = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        partial = out / "labels.partial.jsonl"
        if partial.exists():
            for line in partial.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    rec = json.loads(line)
                    done[rec["index"]] = rec
            logger.info("resuming: %d of %d scenarios already labelled", len(done), scen.n)
    todo = [i for i in range(scen.n) if i not in done]
    if limit is not None:
        todo = todo[:limit]

    def results():
        if workers > 1 and len(todo) > 1:
            import multiprocessing as mp

            with mp.get_context("fork").Pool(workers, _worker_init, (grid, scen, config)) as pool:
                yield from pool.imap_unordered(_worker_run, todo, chunksize=4)
        else:
            ptdf = compute_ptdf(grid)
            for i in todo:
                try:
                    yield label_one(grid, scen, i, config, ptdf)
                except Exception as exc:  # recorded per scenario; the run continues
                    logger.error("scenario %d failed: %s", i, exc)
                    yield _failed_record(grid, scen, i, str(exc))

    fh = open(partial, "a", encoding="utf-8") if partial is not None else None
    try:
        for rec in results():
            done[rec["index"]] = rec
            if fh is not None:
                fh.write(json.dumps(rec) + "\n")
                fh.flush()
    finally:
        if fh is not None:
            fh.close()

    if len(done) < scen.n:
        raise InterruptedError(f"{len(done)} of {scen.n} scenarios labelled")
    records = [done[i] for i in range(scen.n)]
    labels = LabelSet.from_records(records)
    if out is not None:
        write_labels(out, labels, grid, header or {})
        with open(out / "labels_timing.csv", "w", encoding="utf-8") as fh:
            fh.write("scenario,wall_time_s\n")
            for r in records:
                fh.write(f"{r['index']},{r.get('wall_time', float('nan')):.6f}\n")
        partial.unlink()
    return labels


def _failed_record(grid: PowerGrid, scen: ScenarioSet, i: int, reason: str) -> dict:
    T, nG, nW, nB, Q, Z = scen.steps, len(grid.thermal), len(grid.wind), grid.n_bus, grid.n_branch, grid.n_zone
    nan = float("nan")
    return {
        "index": i, "uc": [[0] * T] * nG, "dispatch": [[nan] * T] * nG, "wind": [[nan] * T] * nW,
        "shed_bus": [[nan] * nB] * T, "injections": [[nan] * nB] * T, "flows": [[nan] * Q] * T,
        "gen_zone": [[nan] * T] * Z, "shed_zone": [[nan] * T] * Z, "gen_system": [nan] * T,
        "shed_system": [nan] * T, "shed_reserve": [nan] * T, "shed_nonreserve": [nan] * T,
        "shed_reserve_zone": [[nan] * T] * Z, "shed_nonreserve_zone": [[nan] * T] * Z,
        "objective": nan, "bound": nan, "nodes": 0, "clamped": 0, "status": STATUS_CODES["failed"],
        "error": reason,
    }


def write_labels(out_dir: str | Path, labels: LabelSet, grid: PowerGrid, header: dict) -> None:
    out = Path(out_dir)
    head = {"kind": "gridrisk-labels", "grid": grid.name, **header}
    write_container(out / "labels.grl", head, {f: getattr(labels, f) for f in _ARRAY_FIELDS})

    zones = [z.name for z in grid.zones]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(
        ["scenario", "t", "status", "objective", "gen_system", "shed_system", "shed_reserve",
         "shed_nonreserve"]
        + [f"gen_{z}" for z in zones] + [f"shed_{z}" for z in zones]
        + [f"uc_{g.id}" for g in grid.thermal] + [f"p_{g.id}" for g in grid.thermal]
        + [f"flow_{br.id}" for br in grid.branches]
    )
    for i in range(labels.n):
        for t in range(labels.gen_system.shape[1]):
            w.writerow(
                [i, t + 1, int(labels.status[i]), repr(float(labels.objective[i])),
                 repr(float(labels.gen_system[i, t])), repr(float(labels.shed_system[i, t])),
                 repr(float(labels.shed_reserve[i, t])), repr(float(labels.shed_nonreserve[i, t]))]
                + [repr(float(v)) for v in labels.gen_zone[i, :, t]]
                + [repr(float(v)) for v in labels.shed_zone[i, :, t]]
                + [int(v) for v in labels.uc[i, :, t]]
                + [repr(float(v)) for v in labels.dispatch[i, :, t]]
                + [repr(float(v)) for v in labels.flows[i, t]]
            )
    (out / "labels.csv").write_text(buf.getvalue(), encoding="utf-8")


def read_labels(path: str | Path) -> tuple[dict, LabelSet]:
    path = Path(path)
    if path.is_dir():
        path = path / "labels.grl"
    header, arrays = read_container(path)
    return header, LabelSet(**{f: arrays[f] for f in _ARRAY_FIELDS})
