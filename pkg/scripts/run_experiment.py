"""Full pipeline plus per-step accuracy tables and an optional out-of-sample check.

    python scripts/run_experiment.py --out runs/exp0
    python scripts/run_experiment.py --out runs/exp0 --fresh-seed 1   # also assess on new scenarios

The fresh set is sampled and labelled with a different seed; the surrogate
trained on the main set is scored on all of it, which removes the small-sample
noise of the 200-scenario test split from the pathway comparison.
"""

from __future__ import annotations

import argparse
import logging
import time
from collections import Counter

import numpy as np

from gridrisk import cli
from gridrisk.config import load_config
from gridrisk.grid import compute_ptdf
from gridrisk.labels import label_scenarios, read_labels
from gridrisk.risk import CompareThresholds, assess, compare_pathways
from gridrisk.scenarios import generate_scenarios
from gridrisk.surrogate import build_dataset, evaluate_mre, load_checkpoint, predict_branch_flows


def mre_table(name, mre, scopes):
    print(f"\n{name} test MRE (%) per step")
    print("scope".ljust(10) + "".join(f"{t + 1:>7d}" for t in range(mre.shape[1])) + "    max")
    for k, s in enumerate(scopes):
        print(str(s).ljust(10) + "".join(f"{v:7.1f}" for v in mre[k]) + f"{mre[k].max():7.1f}")


def score(cfg, grid, scen, labels, idx, sig_cols):
    out = {}
    for head in ("generation", "shedding", "branch_flow"):
        model = load_checkpoint(cfg.out / "models" / f"{head}.ckpt")
        data = build_dataset(grid, scen, labels, head)
        out[head] = model.predict_dataset(data, idx)
        if head != "branch_flow":
            mre_table(head, evaluate_mre(out[head], data.y[idx]), data.target_names)
    flows = predict_branch_flows(out["branch_flow"], compute_ptdf(grid))
    truth = labels.flows[idx]
    mre = evaluate_mre(flows[:, :, sig_cols], truth[:, :, sig_cols]).T
    mre_table("branch flow", mre, [f"br{grid.branches[c].id}" for c in sig_cols])
    return out["shedding"], flows


def compare(grid, cfg, shed_true, flows_true, shed_pred, flows_pred, sig):
    kw = dict(shed_scopes=tuple(z.name for z in grid.zones) + ("system",),
              branch_ids=[br.id for br in grid.branches], branches=sig)
    rc = cfg.risk.risk_config()
    a = assess(shed_true, flows_true, grid.flow_limits, rc, source="milp", **kw)
    b = assess(shed_pred, flows_pred, grid.flow_limits, rc, source="gnn", **kw)
    rows = compare_pathways(a, b, CompareThresholds(cfg.compare.probability_abs, cfg.compare.risk_rel))
    bad = [r for r in rows if r.exceeded]
    std = max(r.abs_diff for r in rows if r.metric in ("p_shed", "p_over"))
    print(f"{len(bad)}/{len(rows)} cells over tolerance; max standalone |dp| {std:.3f}")
    print("  by metric:", dict(Counter(r.metric for r in bad)))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/experiment")
    ap.add_argument("-c", "--config")
    ap.add_argument("-s", "--set", action="append", default=[])
    ap.add_argument("--fresh-seed", type=int)
    ap.add_argument("--skip-pipeline", action="store_true", help="reuse outputs already in --out")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    cfg = load_config(args.config, args.set + [f"out_dir={args.out}"])
    if not args.skip_pipeline:
        t0 = time.perf_counter()
        cfg.out.mkdir(parents=True, exist_ok=True)
        cli.cmd_run(cfg)
        print(f"pipeline: {time.perf_counter() - t0:.0f}s")

    grid = cfg.grid()
    scen = cli._load_scenarios(cfg, grid)
    _, labels = read_labels(cfg.out / "labels")
    _, _, te = cli._splits(cfg, scen.n)
    sig = cli._branch_set(cfg, grid, labels, scen.n)
    ids = [br.id for br in grid.branches]
    cols = [ids.index(b) for b in sig]
    print(f"significant branches: {sig}")
    score(cfg, grid, scen, labels, te, cols)

    if args.fresh_seed is not None:
        fresh = generate_scenarios(grid, cfg.n_scenarios, cfg.steps, args.fresh_seed)
        lab = label_scenarios(grid, fresh, cfg.solver.scuc(), cfg.out / f"fresh_{args.fresh_seed}",
                              workers=cfg.solver.workers)
        idx = np.flatnonzero(lab.status != 2)
        print(f"\nfresh set (seed {args.fresh_seed}, {len(idx)} scenarios)")
        shed, flows = score(cfg, grid, fresh, lab, idx, cols)
        truth = np.concatenate([lab.shed_zone[idx], lab.shed_system[idx, None, :]], axis=1)
        compare(grid, cfg, truth, lab.flows[idx], shed, flows, sig)


if __name__ == "__main__":
    main()
