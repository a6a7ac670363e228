"""Reference regressors on the same labels, to separate data difficulty from model capacity.

    python scripts/baselines.py runs/exp0

Fits, on the training split, (a) a ridge model on the flattened inputs and
(b) gradient boosting on per-step system features (total load, total wind,
step), then reports system-level test MRE with the same 1 MW floor as the
surrogate. Needs scikit-learn (not a package dependency).
"""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
from sklearn.ensemble import HistGradientBoostingRegressor
from sklearn.linear_model import RidgeCV

from gridrisk import cli
from gridrisk.config import load_config
from gridrisk.labels import read_labels
from gridrisk.surrogate import evaluate_mre


def main(out: str) -> None:
    saved = Path(out) / "config.yaml"
    cfg = load_config(saved if saved.exists() else None, [f"out_dir={out}"])
    grid = cfg.grid()
    scen = cli._load_scenarios(cfg, grid)
    _, lab = read_labels(Path(out) / "labels")
    tr, _, te = cli._splits(cfg, scen.n)
    T = scen.steps
    load, wind = scen.bus_load.sum(-1), scen.bus_wind.sum(-1)            # (N, T)
    flat = np.concatenate([scen.bus_load.reshape(scen.n, -1), scen.bus_wind.reshape(scen.n, -1)], axis=1)

    for name, y in (("generation", lab.gen_system), ("shedding", lab.shed_system)):
        ridge = RidgeCV(alphas=np.logspace(-3, 3, 13)).fit(flat[tr], y[tr])
        p_lin = np.clip(ridge.predict(flat[te]), 0, None)

        def steps(idx):
            t = np.broadcast_to(np.arange(T), (len(idx), T))
            return np.stack([load[idx].ravel(), wind[idx].ravel(), t.ravel()], axis=1)

        gb = HistGradientBoostingRegressor(max_iter=400, random_state=0).fit(steps(tr), y[tr].ravel())
        p_gb = np.clip(gb.predict(steps(te)).reshape(len(te), T), 0, None)
        zero = np.mean(y[te] <= 1e-3)
        print(f"{name}: zero share {zero:.2f}")
        print(f"  ridge (flattened inputs)  max MRE over t {evaluate_mre(p_lin, y[te]).max():6.1f}%")
        print(f"  boosting (per-step sums)  max MRE over t {evaluate_mre(p_gb, y[te]).max():6.1f}%")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "runs/experiment")
