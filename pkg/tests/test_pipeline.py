import json
import re

import pytest

from conftest import WDBC, stump_model, uniform_data
from gbfl import pipeline
from gbfl.data import derive_base_values, derive_bounds, load_csv, save_csv
from gbfl.errors import GBFLError, PipelineError
from gbfl.explainer import explain_dataset
from gbfl.pipeline import (METHODS, PipelineConfig, RunReport, cross_validate, emit_report,
                           render_markdown, run_pipeline)

THRESHOLD_BB = {"kind": "threshold", "feature": 0, "threshold": 5.0, "label_above": "1"}


def stump_csv(tmp_path, n=200, seed=0, name="stump.csv"):
    path = tmp_path / name
    save_csv(uniform_data(n, seed=seed), path)
    return path


def small_config(path, **kw):
    d = {"dataset": {"path": str(path)}, "seeds": [0], "grid_points": [20], "deltas": [2],
         "heights": [3], "max_height": 3, "cv_folds": 3, "blackbox": THRESHOLD_BB,
         "explainer": {"max_iters": 200}}
    d.update(kw)
    return PipelineConfig.from_dict(d)


# ---------------------------------------------------------------------------- config

def test_config_defaults_and_echo():
    cfg = PipelineConfig(dataset={"path": "x.csv"})
    assert cfg.test_fraction == 0.25 and len(cfg.seeds) == 5 and cfg.base_values == "median"
    assert cfg.max_height == 5 and cfg.heights == [1, 2, 3, 4, 5] and cfg.cv_folds == 10
    assert cfg.targets == "blackbox" and cfg.learner == "tree"
    assert "output_dir" not in cfg.echo()
    other = PipelineConfig(dataset={"path": "x.csv"}, output_dir="/tmp/elsewhere")
    assert cfg.hash() == other.hash()
    assert cfg.hash() != PipelineConfig(dataset={"path": "x.csv"}, deltas=[4]).hash()


@pytest.mark.parametrize("bad", [
    {"gird_points": [10]},
    {"dataset": {"path": "x.csv", "lable": "y"}},
    {"schema_version": 2},
    {"deltas": []},
    {"grid_points": [1]},
    {"heights": [7]},
    {"learner": "forest"},
    {"explainer": {"kapa": 0.1}},
    {"test_fraction": 1.0},
])
def test_config_rejects(bad):
    d = {"dataset": {"path": "x.csv"}}
    d.update(bad)
    with pytest.raises(GBFLError):
        PipelineConfig.from_dict(d)


def test_config_json_errors(tmp_path):
    with pytest.raises(GBFLError, match="not found"):
        PipelineConfig.from_json(tmp_path / "missing.json")
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(GBFLError, match="invalid JSON"):
        PipelineConfig.from_json(p)
    p.write_text(json.dumps({"dataset": {"path": "a.csv"}, "deltas": [4]}))
    assert PipelineConfig.from_json(p).deltas == [4]


# ---------------------------------------------------------------------------- cross-validation

def test_cv_dominant_delta_is_chosen():
    data = uniform_data(300, seed=1)
    bounds = derive_bounds(data)
    base = derive_base_values(data, "zeros", bounds)
    expl = explain_dataset(stump_model(), data, base, bounds)
    cfg = PipelineConfig(dataset={"path": "x"}, grid_points=[10], deltas=[0, 1], heights=[3],
                         max_height=3, cv_folds=5)
    chosen, table = cross_validate(data, expl, bounds, base.values, cfg)
    rows = {r["delta"]: r for r in table}
    assert all(a > b for a, b in zip(rows[1]["fold_c_tb"], rows[0]["fold_c_tb"]))
    assert chosen == {"grid_points": 10, "delta": 1, "max_height": 3}


def test_cv_choice_follows_objective_and_ties():
    data = uniform_data(240, seed=2)
    bounds = derive_bounds(data)
    base = derive_base_values(data, "zeros", bounds)
    expl = explain_dataset(stump_model(), data, base, bounds)
    cfg = PipelineConfig(dataset={"path": "x"}, grid_points=[10, 20], deltas=[1, 3], heights=[1, 2],
                         max_height=2, cv_folds=4)
    chosen, table = cross_validate(data, expl, bounds, base.values, cfg)
    assert len(table) == 8
    best = max(r["c_tb"] for r in table)
    top = [r for r in table if r["c_tb"] == best]
    best_acc = max(r["accuracy"] for r in top)
    top = [r for r in top if r["accuracy"] == best_acc]
    first = min(top, key=lambda r: (r["delta"], r["grid_points"], r["max_height"]))
    assert chosen == {k: first[k] for k in ("grid_points", "delta", "max_height")}


def test_cv_singleton_skips_folds():
    data = uniform_data(50)
    cfg = PipelineConfig(dataset={"path": "x"}, grid_points=[7], deltas=[2], heights=[4])
    chosen, table = cross_validate(data, None, None, None, cfg)
    assert chosen == {"grid_points": 7, "delta": 2, "max_height": 4} and table == []


# ---------------------------------------------------------------------------- runs and reports

@pytest.fixture(scope="module")
def stump_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("run")
    cfg = small_config(stump_csv(tmp), output_dir=str(tmp / "out"))
    return cfg, run_pipeline(cfg), tmp / "out"


def test_single_seed_block_equals_mean(stump_run):
    _, rep, _ = stump_run
    assert len(rep.per_seed) == 1 and rep.errors == []
    block = rep.per_seed[0]
    assert set(block["metrics"]) == set(METHODS) == set(rep.methods)
    for m in METHODS:
        r = block["metrics"][m]
        assert rep.means[m] == {"c_tb": r["c_tb"], "c_tb_pn": r["c_tb_pn"], "c_tb_pp": r["c_tb_pp"],
                                "accuracy": r["accuracy_true_labels"]}
        for key in ("c_tb", "c_tb_pp", "accuracy_true_labels"):
            assert 0.0 <= r[key] <= 1.0
    assert rep.blackbox_accuracy == block["blackbox_accuracy"] == 1.0
    assert block["n_train"] + block["n_test"] == 200


def test_report_json_round_trip(stump_run):
    _, rep, out = stump_run
    back = RunReport.from_dict(json.loads(rep.to_json()))
    assert back == rep
    assert RunReport.from_dict(json.loads((out / "report.json").read_text())) == rep


def test_report_markdown_shape(stump_run):
    _, rep, out = stump_run
    md = (out / "report.md").read_text()
    assert md == render_markdown(rep)
    rows = [line for line in md.splitlines() if line.startswith("|") and "---" not in line][1:]
    groups = [r.split("|")[1].strip() for r in rows if r.split("|")[1].strip()]
    assert groups == ["C_TB", "C_TB^PN", "C_TB^PP", "Test Accuracy"]
    for m in METHODS:
        assert sum(f"| {m} |" in r for r in rows) == 4


def test_report_files(stump_run):
    cfg, rep, out = stump_run
    for name in ("report.json", "report.md", "rules.txt", "explanations.csv", "clauses.json",
                 "label_mapping.json", "model_gbfl.json", "model_standard.json", "blackbox.bin"):
        assert (out / name).exists(), name
    mapping = load_csv(cfg.dataset["path"]).label_mapping
    assert json.loads((out / "label_mapping.json").read_text()) == mapping
    assert rep.config["grid_points"] == [20] and rep.config_hash == cfg.hash()


def test_rules_text_format(tmp_path):
    # both features matter for this black-box, so clauses constrain both
    cfg = small_config(stump_csv(tmp_path, n=160), base_values="zeros", top_k=3,
                       blackbox={"kind": "fixed_logistic", "weights": [[-1, 1], [-1, 1]],
                                 "bias": [5, -5]}, output_dir=str(tmp_path / "o"))
    rep = run_pipeline(cfg)
    text = (tmp_path / "o" / "rules.txt").read_text()
    assert 1 <= len(rep.rules) <= 3
    literal = r"(-?\d+\.\d\d(>=|>))?x[01](>=|>|<=|<)-?\d+\.\d\d|-?\d+\.\d\d(>=|>)x[01]"
    blocks = text.strip().split("\n\n")
    for i, block in enumerate(blocks, start=1):
        head, rule = block.split("\n")
        assert head.startswith(f"GBFL rank {i} feature (importance ")
        assert all(re.fullmatch(literal, part) for part in rule.split(" & ")), rule
    assert any(" & " in r["rule"] for r in rep.rules)


def test_stage_error_keeps_other_seeds(tmp_path, monkeypatch):
    original = pipeline.train_augmented

    def flaky(train, triplets, max_height=5, min_leaf=1, seed=0):
        if seed == 1:
            raise GBFLError("boom")
        return original(train, triplets, max_height, min_leaf, seed)

    monkeypatch.setattr(pipeline, "train_augmented", flaky)
    rep = run_pipeline(small_config(stump_csv(tmp_path, n=120), seeds=[0, 1, 2]))
    assert [b["seed"] for b in rep.per_seed] == [0, 2]
    assert rep.errors == [{"seed": 1, "stage": "baselines", "message": "boom"}]


def test_all_seeds_failing_raises_with_stage(tmp_path):
    cfg = small_config(stump_csv(tmp_path, n=60), blackbox={"kind": "nope"}, seeds=[3])
    with pytest.raises(PipelineError) as info:
        run_pipeline(cfg)
    assert "'stage': 'blackbox'" in str(info.value) and "'seed': 3" in str(info.value)
    with pytest.raises(PipelineError) as info:
        run_pipeline(small_config(tmp_path / "absent.csv"))
    assert info.value.stage == "load"


def test_run_is_deterministic(tmp_path):
    cfg = small_config(stump_csv(tmp_path, n=120), grid_points=[10, 20], cv_folds=3)
    a = run_pipeline(cfg).to_dict()
    b = run_pipeline(cfg).to_dict()
    a.pop("timestamps"), b.pop("timestamps")
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


def test_logistic_learner_and_train_split(tmp_path):
    cfg = small_config(stump_csv(tmp_path, n=120), learner="logistic", eval_split="train",
                       logistic_epochs=100)
    rep = run_pipeline(cfg)
    block = rep.per_seed[0]
    assert block["hyperparameters"]["GBFL"]["tree_height"] is None
    assert block["metrics"]["GBFL"]["n_samples"] == block["n_train"]


def test_wdbc_config_echo(tmp_path):
    cfg = PipelineConfig.from_dict({
        "dataset": {"path": str(WDBC), "label_column": "diagnosis"}, "seeds": [0],
        "grid_points": [10], "deltas": [4], "blackbox": {"kind": "logistic"},
        "explainer": {"max_iters": 100}})
    rep = run_pipeline(cfg)
    assert rep.dataset == "wdbc"
    assert rep.config["grid_points"] == [10] and rep.config["deltas"] == [4]
    hp = rep.per_seed[0]["hyperparameters"]["GBFL"]
    assert hp["grid_points"] == 10 and hp["delta"] == 4
    assert all(h <= 5 for h in (v.get("tree_height") for v in rep.per_seed[0]["hyperparameters"].values()))


def test_emit_report_without_artifacts(stump_run, tmp_path):
    _, rep, out = stump_run
    bare = RunReport.from_dict(rep.to_dict())
    emit_report(bare, tmp_path / "again")
    assert (tmp_path / "again" / "rules.txt").read_text() == (out / "rules.txt").read_text()
    assert (tmp_path / "again" / "report.json").read_text() == (out / "report.json").read_text()
