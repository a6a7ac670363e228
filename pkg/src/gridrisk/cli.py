"""Command-line pipeline: sample -> label -> train -> assess -> compare -> report.

Output layout under ``out_dir``::

    config.yaml                 resolved configuration (with its hash)
    scenarios.csv
    labels/labels.grl|csv       plus labels_timing.csv
    models/<head>.ckpt          plus <head>_train.csv (per-epoch losses), split.json
    reports/risk_<source>.json|csv, compare.csv
    figures/*.csv               per-figure series
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from gridrisk.config import ConfigError, PipelineConfig, dump_config, load_config
from gridrisk.grid import PowerGrid, compute_ptdf
from gridrisk.labels import LabelSet, label_scenarios, read_labels
from gridrisk.risk import (
    CompareThresholds,
    RiskReport,
    assess,
    compare_pathways,
    divergence_csv,
    plot_series,
    read_report,
    significant_branches,
)
from gridrisk.scenarios import ScenarioSet, generate_scenarios, read_scenarios_csv, write_scenarios_csv
from gridrisk.surrogate import (
    build_dataset,
    load_checkpoint,
    predict_branch_flows,
    save_checkpoint,
    split_indices,
    train,
)

logger = logging.getLogger("gridrisk")


class PipelineError(RuntimeError):
    pass


def file_hash(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()[:16]


# ----------------------------------------------------------------------------
# paths and loaders


def _paths(cfg: PipelineConfig) -> dict[str, Path]:
    out = cfg.out
    return {
        "scenarios": out / "scenarios.csv",
        "labels": out / "labels",
        "models": out / "models",
        "reports": out / "reports",
        "figures": out / "figures",
    }


def _require(path: Path, what: str, hint: str) -> Path:
    if not path.exists():
        raise PipelineError(f"{what} not found at {path}; run `gridrisk {hint}` first")
    return path


def _load_scenarios(cfg: PipelineConfig, grid: PowerGrid) -> ScenarioSet:
    path = _require(_paths(cfg)["scenarios"], "scenario file", "sample")
    return read_scenarios_csv(path, grid)


def _load_labels(cfg: PipelineConfig) -> LabelSet:
    path = _require(_paths(cfg)["labels"] / "labels.grl", "label file", "label")
    return read_labels(path)[1]


def _splits(cfg: PipelineConfig, n: int):
    return split_indices(n, tuple(cfg.train.split), cfg.train.seed)


# ----------------------------------------------------------------------------
# commands


def cmd_sample(cfg: PipelineConfig) -> Path:
    grid = cfg.grid()
    load, wind = cfg.marginals(grid)
    scen = generate_scenarios(grid, cfg.n_scenarios, cfg.steps, cfg.seed, load_marginals=load,
                              wind_marginals=wind, covariance=cfg.covariance_matrix(grid), lhs=cfg.lhs)
    path = _paths(cfg)["scenarios"]
    path.parent.mkdir(parents=True, exist_ok=True)
    write_scenarios_csv(path, scen, config_hash=cfg.hash())
    logger.info("wrote %d x %d scenarios to %s", scen.n, scen.steps, path)
    return path


def cmd_label(cfg: PipelineConfig) -> Path:
    grid = cfg.grid()
    scen = _load_scenarios(cfg, grid)
    out = _paths(cfg)["labels"]
    header = {"config_hash": cfg.hash(), "scenario_hash": file_hash(_paths(cfg)["scenarios"])}
    t0 = time.perf_counter()
    labels = label_scenarios(grid, scen, cfg.solver.scuc(), out, workers=cfg.solver.workers, header=header)
    failed = int(np.sum(labels.status == 2))
    logger.info("labelled %d scenarios in %.1fs (%d failed)", labels.n, time.perf_counter() - t0, failed)
    return out / "labels.grl"


def cmd_train(cfg: PipelineConfig, heads: list[str] | None = None) -> list[Path]:
    grid = cfg.grid()
    scen = _load_scenarios(cfg, grid)
    labels = _load_labels(cfg)
    tr, va, te = _splits(cfg, scen.n)
    ok = labels.status != 2
    tr, va = tr[ok[tr]], va[ok[va]]
    models = _paths(cfg)["models"]
    models.mkdir(parents=True, exist_ok=True)
    (models / "split.json").write_text(
        json.dumps({"train": tr.tolist(), "val": va.tolist(), "test": te.tolist()}) + "\n", encoding="utf-8")
    written = []
    for head in heads or cfg.train.heads:
        data = build_dataset(grid, scen, labels, head)
        model, report = train(data, scen.steps, cfg.train.train_config(), tr, va)
        path = models / f"{head}.ckpt"
        save_checkpoint(path, model, {"config_hash": cfg.hash()})
        (models / f"{head}_train.csv").write_text(report.to_csv(), encoding="utf-8")
        logger.info("%s: best epoch %d, val loss %.4g", head, report.best_epoch, report.best_val)
        written.append(path)
    return written


def _eval_indices(cfg: PipelineConfig, n: int) -> np.ndarray:
    if cfg.risk.evaluate_on == "all":
        return np.arange(n)
    if cfg.risk.evaluate_on == "test":
        return _splits(cfg, n)[2]
    raise ConfigError(f"evaluate_on must be 'test' or 'all', got {cfg.risk.evaluate_on!r}")


def _branch_set(cfg: PipelineConfig, grid: PowerGrid, labels: LabelSet, n: int) -> list[int]:
    ids = [br.id for br in grid.branches]
    k = cfg.risk.k_significant
    if k <= 0 or k >= len(ids):
        return ids
    tr = _splits(cfg, n)[0]
    tr = tr[labels.status[tr] != 2]
    return significant_branches(labels.flows[tr], grid.flow_limits, k, ids)


def gnn_samples(cfg: PipelineConfig, grid: PowerGrid, scen: ScenarioSet, idx) -> tuple[np.ndarray, np.ndarray]:
    """Surrogate shedding (N, K, T) and flows (N, T, Q) for the scenarios ``idx``."""
    models = _paths(cfg)["models"]
    need = {"shedding": models / "shedding.ckpt", "branch_flow": models / "branch_flow.ckpt"}
    for head, p in need.items():
        _require(p, f"{head} checkpoint", f"train --head {head}")
    shed_model = load_checkpoint(need["shedding"])
    flow_model = load_checkpoint(need["branch_flow"])
    shed_data = build_dataset(grid, scen, None, "shedding").subset(idx)
    flow_data = build_dataset(grid, scen, None, "branch_flow").subset(idx)
    shed = shed_model.predict(shed_data.x, shed_data.lower, shed_data.upper)
    inj = flow_model.predict(flow_data.x, flow_data.lower, flow_data.upper)
    return shed, predict_branch_flows(inj, compute_ptdf(grid))


def cmd_assess(cfg: PipelineConfig, source: str) -> RiskReport:
    grid = cfg.grid()
    scen = _load_scenarios(cfg, grid)
    labels = _load_labels(cfg)
    idx = _eval_indices(cfg, scen.n)
    idx = idx[labels.status[idx] != 2]
    if source == "milp":
        shed = np.concatenate([labels.shed_zone[idx], labels.shed_system[idx, None, :]], axis=1)
        flows = labels.flows[idx]
    elif source == "gnn":
        shed, flows = gnn_samples(cfg, grid, scen, idx)
    else:
        raise ConfigError(f"unknown source {source!r}")
    scopes = tuple(z.name for z in grid.zones) + ("system",)
    meta = {"config_hash": cfg.hash(), "scenario_hash": file_hash(_paths(cfg)["scenarios"]),
            "scenarios": "test" if cfg.risk.evaluate_on == "test" else "all"}
    report = assess(shed, flows, grid.flow_limits, cfg.risk.risk_config(), shed_scopes=scopes,
                    branch_ids=[br.id for br in grid.branches],
                    branches=_branch_set(cfg, grid, labels, scen.n), source=source, meta=meta)
    report.write(_paths(cfg)["reports"])
    return report


def cmd_compare(cfg: PipelineConfig, reference: Path | None = None, candidate: Path | None = None) -> int:
    rep = _paths(cfg)["reports"]
    ref = read_report(reference or _require(rep / "risk_milp.json", "MILP report", "assess --source milp"))
    cand = read_report(candidate or _require(rep / "risk_gnn.json", "GNN report", "assess --source gnn"))
    thr = CompareThresholds(cfg.compare.probability_abs, cfg.compare.risk_rel)
    rows = compare_pathways(ref, cand, thr)
    rep.mkdir(parents=True, exist_ok=True)
    (rep / "compare.csv").write_text(divergence_csv(rows), encoding="utf-8")
    bad = [r for r in rows if r.exceeded]
    worst_p = max((r.abs_diff for r in rows if r.kind == "probability" and not np.isnan(r.abs_diff)), default=0.0)
    worst_r = max((r.rel_diff for r in rows if r.kind == "risk" and not np.isnan(r.rel_diff)), default=0.0)
    print(f"compared {len(rows)} cells: max |dp| = {worst_p:.4f}, max risk rel diff = {worst_r:.4f}, "
          f"{len(bad)} over threshold")
    for r in bad[:20]:
        print(f"  {r.metric} {r.scope} t={r.t}: reference {r.reference:.6g} candidate {r.candidate:.6g}")
    return 1 if bad else 0


def cmd_report(cfg: PipelineConfig) -> list[Path]:
    rep = _paths(cfg)["reports"]
    fig = _paths(cfg)["figures"]
    fig.mkdir(parents=True, exist_ok=True)
    written = []
    found = False
    for source in ("milp", "gnn"):
        p = rep / f"risk_{source}.json"
        if not p.exists():
            continue
        found = True
        for stem, text in plot_series(read_report(p)).items():
            path = fig / f"{stem}.csv"
            path.write_text(text, encoding="utf-8")
            written.append(path)
    if not found:
        raise PipelineError(f"no risk reports in {rep}; run `gridrisk assess` first")
    return written


def cmd_run(cfg: PipelineConfig) -> int:
    cmd_sample(cfg)
    cmd_label(cfg)
    cmd_train(cfg)
    cmd_assess(cfg, "milp")
    cmd_assess(cfg, "gnn")
    code = cmd_compare(cfg)
    cmd_report(cfg)
    return code


# ----------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gridrisk", description=__doc__.splitlines()[0])
    p.add_argument("-c", "--config", help="YAML experiment file (defaults used when omitted)")
    p.add_argument("-s", "--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config field, e.g. -s n_scenarios=50 -s train.epochs=20")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("sample", help="draw correlated scenarios")
    sub.add_parser("label", help="solve SCUC for every scenario (resumable)")
    t = sub.add_parser("train", help="train surrogate heads")
    t.add_argument("--head", action="append", help="head to train (repeatable); default: config heads")
    a = sub.add_parser("assess", help="risk report from MILP labels or surrogate predictions")
    a.add_argument("--source", choices=("milp", "gnn"), default="milp")
    c = sub.add_parser("compare", help="divergence table; exit 1 if any threshold is exceeded")
    c.add_argument("--reference", type=Path)
    c.add_argument("--candidate", type=Path)
    sub.add_parser("report", help="per-figure CSV series from the risk reports")
    sub.add_parser("run", help="every stage in order")
    sub.add_parser("show-config", help="print the resolved configuration and its hash")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.set)
        if args.command == "show-config":
            print(dump_config(cfg), end="")
            print(f"# hash: {cfg.hash()}")
            return 0
        cfg.out.mkdir(parents=True, exist_ok=True)
        (cfg.out / "config.yaml").write_text(dump_config(cfg) + f"# hash: {cfg.hash()}\n", encoding="utf-8")
        if args.command == "sample":
            print(cmd_sample(cfg))
        elif args.command == "label":
            print(cmd_label(cfg))
        elif args.command == "train":
            for path in cmd_train(cfg, args.head):
                print(path)
        elif args.command == "assess":
            cmd_assess(cfg, args.source)
            print(_paths(cfg)["reports"] / f"risk_{args.source}.json")
        elif args.command == "compare":
            return cmd_compare(cfg, args.reference, args.candidate)
        elif args.command == "report":
            for path in cmd_report(cfg):
                print(path)
        elif args.command == "run":
            return cmd_run(cfg)
    except (ConfigError, PipelineError, FileNotFoundError, InterruptedError) as exc:
        print(f"gridrisk: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
