import json

import pytest

from gridrisk.cli import main
from gridrisk.config import ConfigError, PipelineConfig, dump_config, load_config


def _args(out, *extra):
    return ["-s", f"out_dir={out}", "-s", "n_scenarios=30", "-s", "steps=4",
            "-s", "train.epochs=15", "-s", "train.patience=15", "-s", "risk.evaluate_on=all", *extra]


def test_defaults():
    cfg = PipelineConfig()
    assert cfg.solver.reserve_fraction == 0.05
    assert cfg.solver.gap == 1e-4 and cfg.solver.node_limit == 10000
    assert tuple(cfg.train.split) == (0.7, 0.1, 0.2)
    assert cfg.risk.delta_t == 2 and cfg.risk.epsilon == 0.85


def test_overrides_and_hash():
    a = load_config(None, ["n_scenarios=50", "train.epochs=3", "risk.shed_cost={rates: [1, 2], breaks: [5]}"])
    assert a.n_scenarios == 50 and a.train.epochs == 3
    assert a.risk.risk_config().shed_curve.breaks == (5.0,)
    b = load_config(None, ["n_scenarios=50", "train.epochs=3", "risk.shed_cost={rates: [1, 2], breaks: [5]}",
                           "out_dir=/elsewhere", "solver.workers=4"])
    assert a.hash() == b.hash()
    assert a.hash() != load_config(None, ["n_scenarios=51"]).hash()


def test_yaml_round_trip(tmp_path):
    cfg = load_config(None, ["steps=6", "covariance=0.2"])
    p = tmp_path / "c.yaml"
    p.write_text(dump_config(cfg))
    assert load_config(p).hash() == cfg.hash()


@pytest.mark.parametrize("bad", [["nope=1"], ["train.bogus=1"], ["n_scenarios=0"], ["risk.delta_t=12"],
                                 ["train.heads=[voltage]"], ["novalue"]])
def test_bad_config(bad):
    with pytest.raises(ConfigError):
        load_config(None, bad)


def test_cli_reports_config_errors(capsys):
    assert main(["-s", "n_scenarios=-1", "sample"]) == 2
    assert "n_scenarios" in capsys.readouterr().err


def test_missing_stage_inputs(tmp_path, capsys):
    assert main(_args(tmp_path, "label")) == 2
    assert "gridrisk sample" in capsys.readouterr().err


def test_show_config(capsys):
    assert main(["show-config"]) == 0
    assert "# hash:" in capsys.readouterr().out


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    for cmd in (["sample"], ["label"], ["train"], ["assess", "--source", "milp"], ["assess", "--source", "gnn"]):
        assert main(_args(out, *cmd)) == 0
    code = main(_args(out, "compare"))
    assert main(_args(out, "report")) == 0
    return out, code


def test_pipeline_outputs(pipeline):
    out, code = pipeline
    assert code in (0, 1)
    for rel in ("config.yaml", "scenarios.csv", "labels/labels.grl", "labels/labels.csv",
                "models/generation.ckpt", "models/shedding.ckpt", "models/branch_flow.ckpt",
                "models/split.json", "reports/risk_milp.json", "reports/risk_gnn.json",
                "reports/compare.csv", "figures/milp_p_shed.csv", "figures/gnn_cond.csv"):
        assert (out / rel).exists(), rel
    rep = json.loads((out / "reports/risk_milp.json").read_text())
    assert rep["n_samples"] == 30 and rep["steps"] == 4
    assert len(rep["branch_ids"]) == 4


def test_rerun_is_byte_identical(pipeline, tmp_path):
    out, _ = pipeline
    for cmd in (["sample"], ["label"], ["train"], ["assess", "--source", "milp"], ["assess", "--source", "gnn"]):
        assert main(_args(tmp_path, *cmd)) == 0
    for rel in ("scenarios.csv", "labels/labels.grl", "labels/labels.csv", "models/shedding.ckpt",
                "models/branch_flow_train.csv", "reports/risk_milp.json", "reports/risk_gnn.json"):
        assert (out / rel).read_bytes() == (tmp_path / rel).read_bytes(), rel
