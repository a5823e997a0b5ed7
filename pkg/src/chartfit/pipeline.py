"""File-based pipeline stages behind the command line.

Each stage reads declared inputs from the output directory, writes its
artifacts, and records a manifest (config hash, seed, input and output
hashes, timestamps) under ``manifests/``.  A stage whose manifest still
matches its inputs and outputs is skipped unless forced.
"""

from __future__ import annotations

import csv
import dataclasses
import datetime as dt
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .evaluate import (
    ClassificationReport,
    ClassMetrics,
    ConfusionMatrix,
    confusion,
    format_report,
    metrics,
    normalized_confusion,
    stratified_split_indices,
)
from .explain import kde, monthly_inclusion, pdp, shap_summary
from .features import (
    StandardizationParams,
    TrackFeaturizer,
    read_features,
    write_features,
)
from .ingest import (
    parse_catalog,
    parse_chart_archive,
    write_archive,
    write_catalog,
    write_rejections,
)
from .linkage import (
    balance,
    label_tracks,
    load_descriptor_phrases,
    read_labeled,
    write_labeled,
)
from .models import MODEL_TYPES, load_model, save_model
from .synthetic import make_demo_dataset

logger = logging.getLogger(__name__)

MODEL_NAMES = ("logreg", "forest", "gbm")
MODEL_TITLES = {
    "logreg": "Logistic Regression",
    "forest": "Random Forest",
    "gbm": "Gradient Boosting",
}
KDE_FEATURES = ("popularity", "instrumentalness", "valence", "speechiness", "duration")
PDP_FEATURES = ("x_pop_z", "x_dur_z", "x_ins", "x_val", "x_spc")


class ConfigError(ValueError):
    """Invalid run configuration (exit code 1)."""


class MissingArtifact(FileNotFoundError):
    """An upstream stage has not produced a required file (exit code 2)."""


@dataclass
class RunConfig:
    catalog: str | None = None
    archive: str | None = None
    schema: str | None = None
    clamp: bool = False
    descriptors: str | None = None
    seed: int = 0
    split_ratio: float = 0.2
    model: str = "all"
    hyperparameters: dict = field(default_factory=dict)
    drop_loudness: bool = False
    threshold: float = 0.5
    bandwidth: float | None = None
    shap_rows: int | None = 100
    pdp_rows: int | None = 500
    demo_size: int = 3590
    out: str = "out"

    def validate(self):
        if not 0.0 < self.split_ratio < 1.0:
            raise ConfigError("split_ratio must lie in (0, 1)")
        if self.model not in (*MODEL_NAMES, "all"):
            raise ConfigError(f"unknown model {self.model!r}")
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigError("threshold must lie in [0, 1]")
        for cap in ("shap_rows", "pdp_rows"):
            value = getattr(self, cap)
            if value is not None and value < 0:
                raise ConfigError(f"{cap} must be >= 0")
            if value == 0:
                setattr(self, cap, None)  # 0 means every row
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise ConfigError("bandwidth must be positive")
        unknown = set(self.hyperparameters) - set(MODEL_NAMES)
        if unknown:
            raise ConfigError(f"hyperparameters for unknown models: {sorted(unknown)}")
        for name, params in self.hyperparameters.items():
            try:
                MODEL_TYPES[name](**(params or {}))
            except TypeError as exc:
                raise ConfigError(f"bad hyperparameters for {name}: {exc}") from None
        for key in ("catalog", "archive", "descriptors", "schema"):
            value = getattr(self, key)
            if value and key != "schema" and not Path(value).exists():
                raise ConfigError(f"{key} path does not exist: {value}")
        return self

    @property
    def models(self) -> tuple[str, ...]:
        return MODEL_NAMES if self.model == "all" else (self.model,)

    @classmethod
    def load(cls, path=None, **overrides) -> "RunConfig":
        data = {}
        if path is not None:
            with open(path, encoding="utf-8") as fh:
                data = yaml.safe_load(fh) or {}
            if not isinstance(data, dict):
                raise ConfigError(f"{path}: config must be a key-value mapping")
        data.update({k: v for k, v in overrides.items() if v is not None})
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data).validate()


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _dump_json(obj, path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


class Stage:
    """Context for one run of a stage: resolves paths and writes the manifest."""

    def __init__(self, name: str, config: RunConfig, keys: tuple[str, ...], force=False):
        self.name = name
        self.config = config
        self.root = Path(config.out)
        self.force = force
        settings = {k: getattr(config, k) for k in keys}
        self.settings = settings
        self.config_hash = hashlib.sha256(
            json.dumps(settings, sort_keys=True, default=str).encode()
        ).hexdigest()
        self.inputs: list[Path] = []
        self.outputs: list[Path] = []

    @property
    def manifest_path(self) -> Path:
        return self.root / "manifests" / f"{self.name}.json"

    def need(self, relpath, external=False) -> Path:
        path = Path(relpath) if external else self.root / relpath
        if not path.exists():
            raise MissingArtifact(
                f"{self.name}: missing input {path} (run the upstream stage first)"
            )
        self.inputs.append(path)
        return path

    def output(self, relpath) -> Path:
        path = self.root / relpath
        path.parent.mkdir(parents=True, exist_ok=True)
        self.outputs.append(path)
        return path

    def _key(self, path: Path) -> str:
        try:
            return path.relative_to(self.root).as_posix()
        except ValueError:
            return str(path)

    def _input_hashes(self):
        return {self._key(p): _sha256(p) for p in self.inputs}

    def up_to_date(self) -> bool:
        if self.force or not self.manifest_path.exists():
            return False
        old = json.loads(self.manifest_path.read_text(encoding="utf-8"))
        if old.get("config_hash") != self.config_hash or old.get("inputs") != self._input_hashes():
            return False
        expected = {self._key(p) for p in self.outputs}
        if not expected <= set(old.get("outputs", {})):
            return False
        for key, digest in old["outputs"].items():
            path = self.root / key
            if not path.exists() or _sha256(path) != digest:
                return False
        return True

    def finish(self, started: str, extra=None):
        manifest = {
            "command": self.name,
            "version": __version__,
            "config_hash": self.config_hash,
            "config": self.settings,
            "seed": self.config.seed,
            "inputs": self._input_hashes(),
            "outputs": {self._key(p): _sha256(p) for p in self.outputs if p.exists()},
            "started": started,
            "finished": _now(),
        }
        if extra:
            manifest.update(extra)
        _dump_json(manifest, self.manifest_path)


def _now():
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


def _run(stage: Stage, body, *declared_outputs):
    """Run ``body`` unless the stage is up to date; returns True if it ran."""
    for rel in declared_outputs:
        stage.output(rel)
    if stage.up_to_date():
        logger.info("%s: up to date, skipping (use --force to rerun)", stage.name)
        return False
    started = _now()
    extra = body(stage)
    stage.finish(started, extra)
    logger.info("%s: done", stage.name)
    return True


# stages ------------------------------------------------------------------


def run_ingest(config: RunConfig, force=False):
    if not config.catalog or not config.archive:
        raise ConfigError("ingest needs both catalog and archive paths")
    stage = Stage("ingest", config, ("schema", "clamp"), force)
    catalog = stage.need(config.catalog, external=True)
    archive = stage.need(config.archive, external=True)
    if config.schema and Path(config.schema).exists():
        stage.need(config.schema, external=True)

    def body(st):
        records, rejected = parse_catalog(catalog, config.schema, clamp=config.clamp)
        entries, rejected_archive = parse_chart_archive(archive)
        write_catalog(records, st.root / "catalog.csv")
        write_archive(entries, st.root / "archive.csv")
        write_rejections(rejected, st.root / "rejections" / "catalog.jsonl")
        write_rejections(rejected_archive, st.root / "rejections" / "archive.jsonl")
        return {
            "counts": {
                "catalog_accepted": len(records),
                "catalog_rejected": sum(1 for r in rejected if not r.get("kept")),
                "archive_accepted": len(entries),
                "archive_rejected": len(rejected_archive),
            }
        }

    return _run(
        stage,
        body,
        "catalog.csv",
        "archive.csv",
        "rejections/catalog.jsonl",
        "rejections/archive.jsonl",
    )


def run_link(config: RunConfig, force=False):
    stage = Stage("link", config, ("seed", "descriptors"), force)
    catalog_path = stage.need("catalog.csv")
    archive_path = stage.need("archive.csv")
    if config.descriptors:
        stage.need(config.descriptors, external=True)

    def body(st):
        phrases = load_descriptor_phrases(config.descriptors)
        catalog, _ = parse_catalog(catalog_path)
        archive, _ = parse_chart_archive(archive_path)
        result = label_tracks(catalog, archive, phrases)
        dataset = balance(result.labeled, config.seed)
        write_labeled(dataset, st.root / "labeled.csv")
        stats = {
            "n_tracks": len(result.labeled),
            "n_positive": result.n_positive,
            "positive_share": result.positive_share,
            "n_unkeyable": len(result.unkeyable),
            "n_duplicate_ids": len(result.duplicate_ids),
            "balanced_size": len(dataset),
        }
        _dump_json(stats, st.root / "linkage.json")
        return {"linkage": stats}

    return _run(stage, body, "labeled.csv", "labeled.json", "linkage.json")


def run_demo_data(config: RunConfig, force=False):
    stage = Stage("demo-data", config, ("seed", "demo_size"), force)

    def body(st):
        dataset = make_demo_dataset(config.demo_size, config.seed)
        write_labeled(dataset, st.root / "labeled.csv")
        return {"n_per_class": config.demo_size}

    return _run(stage, body, "labeled.csv", "labeled.json")


def run_split(config: RunConfig, force=False):
    stage = Stage("split", config, ("seed", "split_ratio"), force)
    labeled_path = stage.need("labeled.csv")

    def body(st):
        dataset = read_labeled(labeled_path)
        labels = dataset.labels
        train_idx, val_idx = stratified_split_indices(labels, config.split_ratio, config.seed)
        ids = [r.track_id for r in dataset.records]
        n_val = len(val_idx)
        doc = {
            "seed": config.seed,
            "ratio": config.split_ratio,
            "n_train": len(train_idx),
            "n_validation": n_val,
            "validation_per_class": {str(c): int(np.sum(labels[val_idx] == c)) for c in (0, 1)},
            "ratio_times_total": config.split_ratio * len(labels),
            "train_ids": [ids[i] for i in train_idx],
            "validation_ids": [ids[i] for i in val_idx],
        }
        _dump_json(doc, st.root / "split.json")
        return {"n_train": len(train_idx), "n_validation": n_val}

    return _run(stage, body, "split.json")


def _split_records(root: Path, labeled_path: Path, split_path: Path):
    dataset = read_labeled(labeled_path)
    split = json.loads(split_path.read_text(encoding="utf-8"))
    by_id = {r.track_id: (r, int(c)) for r, c in zip(dataset.records, dataset.labels)}
    train = [by_id[i] for i in split["train_ids"]]
    val = [by_id[i] for i in split["validation_ids"]]
    return train, val


def run_featurize(config: RunConfig, force=False):
    stage = Stage("featurize", config, ("drop_loudness",), force)
    labeled_path = stage.need("labeled.csv")
    split_path = stage.need("split.json")

    def body(st):
        train, val = _split_records(st.root, labeled_path, split_path)
        featurizer = TrackFeaturizer(drop_loudness=config.drop_loudness)
        featurizer.fit([r for r, _ in train])
        names = tuple(featurizer.get_feature_names_out())
        for part, rows in (("train", train), ("val", val)):
            X = featurizer.transform([r for r, _ in rows])
            write_features(X, [c for _, c in rows], st.root / f"features_{part}.csv", names)
        _dump_json(featurizer.standardizer_.to_dict(), st.root / "standardizer.json")
        return None

    return _run(stage, body, "features_train.csv", "features_val.csv", "standardizer.json")


def _standardizer(root: Path):
    path = root / "standardizer.json"
    return StandardizationParams.from_dict(json.loads(path.read_text(encoding="utf-8")))


def run_train(config: RunConfig, force=False):
    ran = False
    for name in config.models:
        config_keys = ("seed", "hyperparameters")
        stage = Stage(f"train-{name}", config, config_keys, force)
        train_path = stage.need("features_train.csv")
        stage.need("standardizer.json")

        def body(st, name=name):
            X, y, _ = read_features(train_path)
            params = dict(config.hyperparameters.get(name) or {})
            if name == "forest":
                params.setdefault("random_state", config.seed)
            model = MODEL_TYPES[name](**params).fit(X, y)
            save_model(model, st.root / "models" / f"{name}.json", _standardizer(st.root))
            return None

        ran |= _run(stage, body, f"models/{name}.json")
    return ran


def run_evaluate(config: RunConfig, force=False):
    ran = False
    for name in config.models:
        stage = Stage(f"evaluate-{name}", config, ("threshold",), force)
        model_path = stage.need(f"models/{name}.json")
        val_path = stage.need("features_val.csv")

        def body(st, name=name, model_path=model_path):
            model, _ = load_model(model_path)
            X, y, _ = read_features(val_path)
            if name == "forest" and config.threshold == 0.5:
                predictions = model.predict(X)  # majority vote
            else:
                predictions = (model.predict_proba(X)[:, 1] >= config.threshold).astype(int)
            report = metrics(confusion(predictions, y))
            _dump_json(report.to_dict(), st.root / "reports" / f"{name}.json")
            (st.root / "reports" / f"{name}.txt").write_text(
                format_report(report, f"Classification report for {MODEL_TITLES[name]}"),
                encoding="utf-8",
            )
            return None

        ran |= _run(stage, body, f"reports/{name}.json", f"reports/{name}.txt")
    return ran


def _write_csv(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(
                ["" if v is None else repr(v) if isinstance(v, float) else v for v in row]
            )


def _explain_rows(config: RunConfig, X: np.ndarray, cap: int | None) -> np.ndarray:
    """Seeded subsample of at most ``cap`` rows (all rows when ``cap`` is None)."""
    if cap is None or cap >= len(X):
        return X
    rng = np.random.default_rng(config.seed)
    keep = np.sort(rng.choice(len(X), size=cap, replace=False))
    return X[keep]


def run_explain(config: RunConfig, what="all", force=False):
    kinds = ("kde", "monthly", "shap", "pdp") if what == "all" else (what,)
    ran = False
    for kind in kinds:
        if kind == "kde":
            ran |= _explain_kde(config, force)
        elif kind == "monthly":
            ran |= _explain_monthly(config, force)
        elif kind in ("shap", "pdp"):
            names = [m for m in config.models if m != "logreg"] if kind == "shap" else config.models
            if kind == "shap" and config.model == "logreg":
                raise ConfigError("SHAP needs a tree model (forest or gbm)")
            for name in names:
                ran |= _explain_model(config, kind, name, force)
        else:
            raise ConfigError(f"unknown analysis {kind!r}")
    return ran


def _explain_kde(config, force):
    stage = Stage("explain-kde", config, ("bandwidth",), force)
    labeled_path = stage.need("labeled.csv")
    outputs = [
        f"explain/kde_{feat}_{group}.csv"
        for feat in KDE_FEATURES
        for group in ("charted", "noncharted")
    ]

    def body(st):
        dataset = read_labeled(labeled_path)
        summary = {}
        for feat in KDE_FEATURES:
            for group, records in (
                ("charted", dataset.positives),
                ("noncharted", dataset.negatives),
            ):
                samples = np.array([getattr(r, feat) for r in records], dtype=np.float64)
                curve = kde(samples, config.bandwidth)
                _write_csv(
                    st.root / f"explain/kde_{feat}_{group}.csv",
                    ("grid", "density"),
                    zip(curve.grid.tolist(), curve.density.tolist()),
                )
                summary[f"{feat}_{group}"] = {
                    "bandwidth": curve.bandwidth,
                    "sample_count": curve.sample_count,
                    "mode": float(curve.grid[np.argmax(curve.density)]),
                }
        return {"curves": summary}

    return _run(stage, body, *outputs)


def _explain_monthly(config, force):
    stage = Stage("explain-monthly", config, (), force)
    labeled_path = stage.need("labeled.csv")

    def body(st):
        result = monthly_inclusion(read_labeled(labeled_path).items())
        _write_csv(
            st.root / "explain/monthly_inclusion.csv",
            ("month", "released", "charted", "share"),
            result.rows(),
        )
        return {"undefined_months": result.undefined}

    return _run(stage, body, "explain/monthly_inclusion.csv")


def _all_features(root: Path):
    X_tr, y_tr, names = read_features(root / "features_train.csv")
    X_va, y_va, _ = read_features(root / "features_val.csv")
    return np.vstack([X_tr, X_va]), names


def _explain_model(config, kind, name, force):
    stage = Stage(f"explain-{kind}-{name}", config, ("seed", "shap_rows", "pdp_rows"), force)
    model_path = stage.need(f"models/{name}.json")
    stage.need("features_train.csv")
    stage.need("features_val.csv")

    def body(st):
        model, _ = load_model(model_path)
        X, names = _all_features(st.root)
        if kind == "shap":
            rows = _explain_rows(config, X, config.shap_rows)
            summary = shap_summary(model, rows, names)
            for j, feat in enumerate(names):
                _write_csv(
                    st.root / f"explain/shap_{name}_{feat}.csv",
                    ("value", "shap"),
                    summary.pairs(j),
                )
            _write_csv(
                st.root / f"explain/shap_{name}_importance.csv",
                ("rank", "feature", "mean_abs_shap"),
                [(i + 1, f, v) for i, (f, v) in enumerate(summary.ranking)],
            )
            return {
                "model_file": st._key(model_path),
                "rows_explained": len(rows),
                "base_value": summary.base_value,
                "top_feature": summary.ranking[0][0],
            }
        rows = _explain_rows(config, X, config.pdp_rows)
        for feat in PDP_FEATURES:
            if feat not in names:
                continue
            curve = pdp(model, rows, names.index(feat))
            _write_csv(
                st.root / f"explain/pdp_{name}_{feat}.csv",
                ("grid", "mean_prediction"),
                zip(curve.grid.tolist(), curve.mean_prediction.tolist()),
            )
        return {"model_file": st._key(model_path), "rows_averaged": len(rows)}

    if kind == "shap":
        outputs = [f"explain/shap_{name}_importance.csv"]
    else:
        outputs = [f"explain/pdp_{name}_{feat}.csv" for feat in PDP_FEATURES]
    return _run(stage, body, *outputs)


def _load_report(path: Path) -> ClassificationReport:
    doc = json.loads(path.read_text(encoding="utf-8"))
    classes = {
        int(c): ClassMetrics(**{k: v for k, v in m.items() if k != "name"})
        for c, m in doc["classes"].items()
    }
    return ClassificationReport(
        classes, doc["accuracy"], doc["support"], ConfusionMatrix(**doc["confusion"]), doc["flags"]
    )


def run_report(config: RunConfig, force=False):
    stage = Stage("report", config, ("model",), force)
    paths = {name: stage.need(f"reports/{name}.json") for name in config.models}
    split_path = stage.root / "split.json"
    if split_path.exists():
        stage.need("split.json")

    def body(st):
        blocks, summary = [], {}
        for name, path in paths.items():
            report = _load_report(path)
            title = f"Classification report for {MODEL_TITLES[name]}"
            block = format_report(report, title)
            ncm = normalized_confusion(report.confusion)
            block += (
                "Normalized confusion (rows: true class, columns: predicted)\n"
                f"  Non-charting  {ncm[0, 0]:.3f}  {ncm[0, 1]:.3f}\n"
                f"  Charting      {ncm[1, 0]:.3f}  {ncm[1, 1]:.3f}\n"
            )
            blocks.append(block)
            summary[name] = {**report.to_dict(), "title": MODEL_TITLES[name]}
        if split_path.exists():
            split = json.loads(split_path.read_text(encoding="utf-8"))
            note = (
                f"Validation rows: {split['n_validation']} "
                f"(per class {split['validation_per_class']}; "
                f"ratio x total = {split['ratio_times_total']:g})\n"
            )
            blocks.append(note)
            summary["split"] = {k: v for k, v in split.items() if not k.endswith("_ids")}
        (st.root / "report.txt").write_text("\n".join(blocks), encoding="utf-8")
        _dump_json(summary, st.root / "report.json")
        return None

    return _run(stage, body, "report.txt", "report.json")


def run_demo(config: RunConfig, force=False):
    """Synthetic dataset through split, featurize, train, evaluate, explain, report."""
    run_demo_data(config, force)
    run_split(config, force)
    run_featurize(config, force)
    run_train(config, force)
    run_evaluate(config, force)
    run_explain(config, "all", force)
    run_report(config, force)
