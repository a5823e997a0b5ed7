import json

import pytest
import yaml

from chartfit import cli
from chartfit.ingest import ChartEntry, write_archive, write_catalog
from chartfit.synthetic import make_demo_dataset

STAGES = ["ingest", "link", "split", "featurize", "train", "evaluate"]


@pytest.fixture
def workspace(tmp_path):
    ds = make_demo_dataset(60, seed=3)
    catalog = tmp_path / "catalog_in.csv"
    archive = tmp_path / "archive_in.csv"
    write_catalog(ds.records, catalog)
    charted = ds.positives[:20]
    write_archive(
        [
            ChartEntry(r.release_date, 1 + i % 100, r.title.upper() + " (Remix)", r.artist)
            for i, r in enumerate(charted)
        ],
        archive,
    )
    config = tmp_path / "run.yaml"
    config.write_text(
        yaml.safe_dump(
            {
                "catalog": str(catalog),
                "archive": str(archive),
                "seed": 5,
                "out": str(tmp_path / "out"),
                "hyperparameters": {"forest": {"n_estimators": 5}, "gbm": {"n_estimators": 10}},
                "shap_rows": 10,
                "pdp_rows": 20,
            }
        ),
        encoding="utf-8",
    )
    return tmp_path, config


def _run(config, *args):
    return cli.main([*args, "--config", str(config)])


def test_full_pipeline_and_manifests(workspace):
    root, config = workspace
    for stage in STAGES:
        assert _run(config, stage) == 0, stage
    assert _run(config, "explain", "all") == 0
    assert _run(config, "report") == 0
    out = root / "out"
    linkage = json.loads((out / "linkage.json").read_text())
    assert linkage["n_positive"] == 20 and linkage["balanced_size"] == 40
    for name in ("logreg", "forest", "gbm"):
        assert (out / "models" / f"{name}.json").exists()
        assert json.loads((out / "reports" / f"{name}.json").read_text())["support"] == 8
    assert (out / "explain" / "shap_forest_importance.csv").exists()
    assert (out / "explain" / "monthly_inclusion.csv").exists()
    assert "Classification report for Gradient Boosting" in (out / "report.txt").read_text()
    manifest = json.loads((out / "manifests" / "train-forest.json").read_text())
    assert {"command", "config_hash", "seed", "inputs", "outputs", "started", "finished"} <= set(
        manifest
    )
    assert manifest["seed"] == 5 and "features_train.csv" in manifest["inputs"]


def test_rerun_is_noop_unless_forced(workspace, caplog):
    root, config = workspace
    for stage in STAGES[:3]:
        _run(config, stage)
    manifest = root / "out" / "manifests" / "split.json"
    before = manifest.read_bytes()
    caplog.set_level("INFO")
    assert _run(config, "split") == 0
    assert manifest.read_bytes() == before
    assert "up to date" in caplog.text
    assert _run(config, "split", "--force") == 0
    assert json.loads(manifest.read_text())["started"] >= json.loads(before)["started"]
    # a changed setting invalidates the stage
    assert _run(config, "split", "--seed", "6") == 0
    assert json.loads(manifest.read_text())["seed"] == 6


def test_modified_output_triggers_rerun(workspace):
    root, config = workspace
    for stage in STAGES[:3]:
        _run(config, stage)
    split = root / "out" / "split.json"
    original = split.read_bytes()
    split.write_text("{}", encoding="utf-8")
    assert _run(config, "split") == 0
    assert split.read_bytes() == original


def test_missing_upstream_exits_2(tmp_path):
    assert cli.main(["featurize", "--out", str(tmp_path)]) == 2
    assert cli.main(["train", "--out", str(tmp_path), "--model", "gbm"]) == 2


@pytest.mark.parametrize(
    "args",
    [
        ["split", "--threshold", "1.5"],
        ["split", "--bandwidth", "0"],
        ["ingest"],
    ],
)
def test_config_violations_exit_1(tmp_path, args):
    assert cli.main([*args, "--out", str(tmp_path)]) == 1


def test_unknown_config_key_exits_1(tmp_path):
    config = tmp_path / "bad.yaml"
    config.write_text("seed: 1\nlearning_rat: 0.1\n", encoding="utf-8")
    assert cli.main(["split", "--config", str(config)]) == 1


def test_bad_hyperparameter_exits_1(tmp_path):
    config = tmp_path / "bad.json"
    config.write_text(json.dumps({"hyperparameters": {"gbm": {"depth": 3}}}), encoding="utf-8")
    assert cli.main(["train", "--config", str(config), "--out", str(tmp_path)]) == 1


def test_shap_needs_tree_model(workspace):
    root, config = workspace
    assert _run(config, "explain", "shap", "--model", "logreg") == 1


def test_threshold_changes_predictions(workspace):
    root, config = workspace
    for stage in STAGES[:5]:
        _run(config, stage)
    _run(config, "evaluate", "--model", "logreg", "--threshold", "0.0")
    report = json.loads((root / "out" / "reports" / "logreg.json").read_text())
    assert report["confusion"]["tn"] == 0 and report["confusion"]["fn"] == 0


def test_zero_row_cap_means_all_rows():
    from chartfit.pipeline import RunConfig

    assert RunConfig.load(None, shap_rows=0, pdp_rows=0).shap_rows is None
    assert cli.main(["explain", "shap", "--shap-rows", "-1"]) == 1
