"""End-to-end model generation from local explanations, with baselines and reporting.

Per seed: split the data, train (or load) the black-box, explain train and
test samples, choose grid size / skip / height by cross-validation, build
the clause features, fit the transparent learner and the three raw-feature
baselines, and score everything on the evaluation split.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .baselines import augmented_dataset, train_augmented, train_distilled, train_standard
from .blackbox import (BlackBoxModel, LogisticBlackBox, LogisticConfig, MlpConfig, external_model,
                       load_model, save_model, train_reference_model)
from .clauses import ClauseEvaluator, generate_clauses, save_clauses
from .data import (Dataset, derive_base_values, derive_bounds, load_csv, save_label_mapping,
                   split_indices, stratified_folds)
from .errors import GBFLError, PipelineError
from .explainer import ExplainerConfig, ExplanationSet, explain_dataset, save_explanations
from .gridding import generate_grid
from .learners import TransparentModel, fit_logistic_l1, fit_tree
from .metrics import ConsistencyReport, accuracy, consistency, evaluate_transparent

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
METHODS = ("Standard", "GBFL", "Distillation", "Augmentation")


# ----------------------------------------------------------------------------
# configuration

@dataclass
class PipelineConfig:
    """Run configuration; loaded from JSON where unknown keys are rejected.

    ``grid_points`` lists candidate grid sizes ``N + 1``; ``heights`` defaults
    to ``1..max_height``.
    """

    dataset: dict = field(default_factory=dict)
    test_fraction: float = 0.25
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    base_values: Any = "median"
    grid_points: list[int] = field(default_factory=lambda: [10, 20, 30])
    deltas: list[int] = field(default_factory=lambda: [1, 2, 3])
    max_height: int = 5
    heights: list[int] | None = None
    min_leaf: int = 1
    learner: str = "tree"
    logistic_l1: float = 0.01
    logistic_epochs: int = 300
    targets: str = "blackbox"
    cv_folds: int = 10
    eval_split: str = "test"
    top_k: int = 5
    explainer: dict = field(default_factory=dict)
    blackbox: dict = field(default_factory=lambda: {"kind": "mlp"})
    output_dir: str | None = None
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.schema_version != SCHEMA_VERSION:
            raise GBFLError(f"config schema_version {self.schema_version} != {SCHEMA_VERSION}")
        if "path" not in self.dataset:
            raise GBFLError("config.dataset.path is required")
        unknown = set(self.dataset) - {"path", "label_column", "name"}
        if unknown:
            raise GBFLError(f"unknown dataset keys: {sorted(unknown)}")
        if self.heights is None:
            self.heights = list(range(1, self.max_height + 1))
        for name in ("seeds", "grid_points", "deltas", "heights"):
            if not getattr(self, name):
                raise GBFLError(f"config.{name} must be non-empty")
        if any(g < 2 for g in self.grid_points):
            raise GBFLError("grid_points (N+1) must be >= 2")
        if any(d < 0 for d in self.deltas):
            raise GBFLError("deltas must be >= 0")
        if any(h < 0 or h > self.max_height for h in self.heights):
            raise GBFLError(f"heights must lie in [0, {self.max_height}]")
        if not 0 < self.test_fraction < 1:
            raise GBFLError("test_fraction must lie in (0, 1)")
        if self.learner not in ("tree", "logistic"):
            raise GBFLError("learner must be 'tree' or 'logistic'")
        if self.targets not in ("blackbox", "true"):
            raise GBFLError("targets must be 'blackbox' or 'true'")
        if self.eval_split not in ("test", "train"):
            raise GBFLError("eval_split must be 'test' or 'train'")
        if self.cv_folds < 2 or self.min_leaf < 1 or self.top_k < 1:
            raise GBFLError("cv_folds >= 2, min_leaf >= 1 and top_k >= 1 are required")
        self.explainer_config()

    def explainer_config(self) -> ExplainerConfig:
        try:
            return ExplainerConfig(**self.explainer)
        except TypeError as exc:
            raise GBFLError(f"bad explainer config: {exc}") from None

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise GBFLError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "PipelineConfig":
        try:
            text = Path(path).read_text()
        except FileNotFoundError:
            raise GBFLError(f"config file not found: {path}") from None
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise GBFLError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def echo(self) -> dict:
        """Config as recorded in a report: everything except where the files go."""
        d = self.to_dict()
        d.pop("output_dir")
        return d

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.echo(), sort_keys=True).encode()).hexdigest()[:16]


def build_blackbox(spec: dict, train: Dataset, seed: int) -> BlackBoxModel:
    """Train or load the black-box described by ``spec`` (see README for the kinds)."""
    spec = dict(spec)
    kind = spec.pop("kind", "mlp")
    try:
        if kind == "mlp":
            return train_reference_model(MlpConfig(**{"seed": seed, **spec}), train, seed)
        if kind == "logistic":
            return train_reference_model(LogisticConfig(**{"seed": seed, **spec}), train, seed)
        if kind == "threshold":
            w = np.zeros(train.n_features)
            w[spec.pop("feature", 0)] = spec.pop("sharpness", 1.0)
            t = spec.pop("threshold")
            above = spec.pop("label_above", None)
            if spec:
                raise GBFLError(f"unknown threshold black-box keys: {sorted(spec)}")
            if above is not None and train.label_mapping.get(str(above)) == 0:
                w = -w  # the raw label above the threshold was mapped to class id 0
            return LogisticBlackBox.binary(w, -w.sum() * t)
        if kind == "fixed_logistic":
            return LogisticBlackBox(spec.pop("weights"), spec.pop("bias"))
        if kind == "file":
            return load_model(spec.pop("path"), train.n_features)
        if kind == "external":
            return external_model(spec.pop("command"), train.n_features, spec.pop("n_classes", None))
    except TypeError as exc:
        raise GBFLError(f"bad black-box config: {exc}") from None
    raise GBFLError(f"unknown black-box kind {kind!r}")


# ----------------------------------------------------------------------------
# GBFL fit and cross-validation

def fit_gbfl(train: Dataset, explanations: ExplanationSet, bounds, base, grid_points: int, delta: int,
             height: int, cfg: PipelineConfig, seed: int = 0) -> TransparentModel:
    """Grid -> clauses -> boolean features -> transparent learner."""
    G = generate_grid(train, bounds, grid_points - 1)
    clauses = generate_clauses(explanations, G, base, delta)
    if not clauses:
        raise GBFLError("no clause survived; try a larger delta or more grid points")
    M = ClauseEvaluator(clauses, train.n_features)(train.features)
    y = explanations.y_blackbox if cfg.targets == "blackbox" else train.labels
    if cfg.learner == "tree":
        model = fit_tree(M, y, height, cfg.min_leaf, seed, train.n_classes)
    else:
        model = fit_logistic_l1(M, y, cfg.logistic_l1, cfg.logistic_epochs, seed=seed,
                                n_classes=train.n_classes)
    hp = {"grid_points": grid_points, "delta": delta}
    if cfg.learner == "tree":
        hp["max_height"] = height
    return TransparentModel("GBFL", model, clauses, train.n_features, hp)


def _metrics_at_heights(tree, feats, expl: ExplanationSet, labels, heights):
    """(c_tb, accuracy) of the tree truncated to each height, on pre-featurised triplets."""
    Fx, Fp, Fn, has = feats
    out = []
    for h in heights:
        px = tree.predict(Fx, h)
        pp = tree.predict(Fp, h)
        pn = np.full(px.size, -1)
        if has.any():
            pn[has] = tree.predict(Fn, h)
        rep = consistency(expl.y_blackbox, px, pp, pn, has)
        out.append((rep.c_tb, accuracy(px, labels)))
    return out


def cross_validate(train: Dataset, explanations: ExplanationSet, bounds, base, cfg: PipelineConfig,
                   seed: int = 0) -> tuple[dict, list[dict]]:
    """Exhaustive search over (grid points, delta, height) by k-fold validation consistency.

    Ties are broken by validation accuracy, then smaller delta, grid size and
    height. Returns the chosen setting and the full score table.
    """
    heights = cfg.heights if cfg.learner == "tree" else [cfg.max_height]
    combos = [(g, d, h) for g in cfg.grid_points for d in cfg.deltas for h in heights]
    if len(combos) == 1:
        g, d, h = combos[0]
        return {"grid_points": g, "delta": d, "max_height": h}, []
    folds = stratified_folds(train.labels, cfg.cv_folds, seed)
    scores = {c: [] for c in combos}
    cap = max(heights)
    for f, va in enumerate(folds):
        tr = np.setdiff1d(np.arange(train.n_samples), va)
        tr_data, tr_expl = train.subset(tr), explanations.subset(tr)
        va_expl = explanations.subset(va)
        va_has = va_expl.has_pn
        for g in cfg.grid_points:
            G = generate_grid(tr_data, bounds, g - 1)
            for d in cfg.deltas:
                clauses = generate_clauses(tr_expl, G, base, d)
                if not clauses:
                    for h in heights:
                        scores[(g, d, h)].append((-1.0, -1.0))
                    continue
                ev = ClauseEvaluator(clauses, train.n_features)
                y = tr_expl.y_blackbox if cfg.targets == "blackbox" else tr_data.labels
                feats = (ev(va_expl.X), ev(va_expl.PP),
                         ev(va_expl.PN()[va_has]) if va_has.any() else None, va_has)
                if cfg.learner == "tree":
                    tree = fit_tree(ev(tr_data.features), y, cap, cfg.min_leaf, seed, train.n_classes)
                    res = _metrics_at_heights(tree, feats, va_expl, train.labels[va], heights)
                else:
                    lm = fit_logistic_l1(ev(tr_data.features), y, cfg.logistic_l1, cfg.logistic_epochs,
                                         n_classes=train.n_classes)
                    tm = TransparentModel("GBFL", lm, clauses, train.n_features)
                    rep = evaluate_transparent(tm, va_expl)
                    res = [(rep.c_tb, accuracy(tm.predict_points(va_expl.X), train.labels[va]))]
                for h, r in zip(heights, res):
                    scores[(g, d, h)].append(r)
    table = []
    for (g, d, h), vals in scores.items():
        arr = np.array(vals)
        table.append({"grid_points": g, "delta": d, "max_height": h,
                      "c_tb": float(arr[:, 0].mean()), "accuracy": float(arr[:, 1].mean()),
                      "fold_c_tb": arr[:, 0].tolist()})
    best = min(table, key=lambda r: (-r["c_tb"], -r["accuracy"], r["delta"], r["grid_points"],
                                     r["max_height"]))
    return {k: best[k] for k in ("grid_points", "delta", "max_height")}, table


def cross_validate_height(X, y, heights, folds, min_leaf, n_classes, seed=0, val_y=None) -> int:
    """Height of a raw-feature CART chosen by k-fold validation accuracy (ties -> smaller)."""
    if len(heights) == 1:
        return heights[0]
    cap = max(heights)
    acc = np.zeros(len(heights))
    for va in folds:
        tr = np.setdiff1d(np.arange(X.shape[0]), va)
        tree = fit_tree(X[tr], y[tr], cap, min_leaf, seed, n_classes)
        target = y[va] if val_y is None else val_y[va]
        for i, h in enumerate(heights):
            acc[i] += np.mean(tree.predict(X[va], h) == target)
    return heights[int(np.argmax(acc))]


# ----------------------------------------------------------------------------
# report

@dataclass
class RunReport:
    schema_version: int
    dataset: str
    config: dict
    config_hash: str
    version: str
    methods: list[str]
    per_seed: list[dict]
    means: dict
    blackbox_accuracy: float | None
    rules: list[dict]
    errors: list[dict]
    timestamps: dict
    artifacts: dict = field(default_factory=dict, compare=False, repr=False)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("artifacts")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


def _mean(vals):
    vals = [v for v in vals if v is not None]
    return float(np.mean(vals)) if vals else None


def _aggregate(per_seed: list[dict]) -> tuple[dict, float | None]:
    means = {}
    for m in METHODS:
        reps = [s["metrics"][m] for s in per_seed if m in s.get("metrics", {})]
        means[m] = {
            "c_tb": _mean([r["c_tb"] for r in reps]),
            "c_tb_pn": _mean([r["c_tb_pn"] for r in reps]),
            "c_tb_pp": _mean([r["c_tb_pp"] for r in reps]),
            "accuracy": _mean([r["accuracy_true_labels"] for r in reps]),
        }
    return means, _mean([s.get("blackbox_accuracy") for s in per_seed])


def _run_seed(cfg: PipelineConfig, data: Dataset, bounds, seed: int, blackbox=None) -> tuple[dict, dict]:
    stage = "split"
    artifacts: dict = {}
    try:
        tr_idx, te_idx = split_indices(data.labels, cfg.test_fraction, seed)
        train, test = data.subset(tr_idx), data.subset(te_idx)
        stage = "blackbox"
        bb = blackbox if blackbox is not None else build_blackbox(cfg.blackbox, train, seed)
        stage = "explain"
        base = derive_base_values(train, cfg.base_values, bounds)
        ecfg = cfg.explainer_config()
        expl_train = explain_dataset(bb, train, base, bounds, ecfg)
        expl_test = explain_dataset(bb, test, base, bounds, ecfg)
        stage = "cross_validate"
        chosen, table = cross_validate(train, expl_train, bounds, base.values, cfg, seed)
        stage = "gbfl"
        gbfl = fit_gbfl(train, expl_train, bounds, base.values, chosen["grid_points"], chosen["delta"],
                        chosen["max_height"], cfg, seed)
        stage = "baselines"
        folds = stratified_folds(train.labels, cfg.cv_folds, seed)
        heights = cfg.heights
        bb_train = np.asarray(bb.predict(train.features))
        h_std = cross_validate_height(train.features, train.labels, heights, folds, cfg.min_leaf,
                                      data.n_classes, seed)
        h_dist = cross_validate_height(train.features, bb_train, heights, folds, cfg.min_leaf,
                                       data.n_classes, seed)
        aug = augmented_dataset(train, expl_train)
        aug_folds = _augmented_folds(folds, expl_train)
        h_aug = cross_validate_height(aug.features, aug.labels, heights, aug_folds, cfg.min_leaf,
                                      data.n_classes, seed)
        models = {
            "Standard": train_standard(train, h_std, cfg.min_leaf, seed),
            "GBFL": gbfl,
            "Distillation": train_distilled(train, bb, h_dist, cfg.min_leaf, seed),
            "Augmentation": train_augmented(train, expl_train, h_aug, cfg.min_leaf, seed),
        }
        stage = "evaluate"
        eval_data, eval_expl = (test, expl_test) if cfg.eval_split == "test" else (train, expl_train)
        metrics = {m: evaluate_transparent(models[m], eval_expl, eval_data.labels).to_dict()
                   for m in METHODS}
        bb_acc = accuracy(bb.predict(eval_data.features), eval_data.labels)
    except GBFLError as exc:
        raise PipelineError(str(exc), stage=stage, seed=seed) from exc
    block = {
        "seed": seed,
        "n_train": train.n_samples,
        "n_test": test.n_samples,
        "metrics": metrics,
        "blackbox_accuracy": bb_acc,
        "hyperparameters": {
            "GBFL": {**chosen, "n_clauses": len(gbfl.clauses), "tree_height": _height(gbfl)},
            "Standard": {"max_height": h_std, "tree_height": _height(models["Standard"])},
            "Distillation": {"max_height": h_dist, "tree_height": _height(models["Distillation"])},
            "Augmentation": {"max_height": h_aug, "tree_height": _height(models["Augmentation"])},
        },
        "cv_table": table,
        "explanations": {"train": expl_train.summary(), "test": expl_test.summary()},
        "base_values": [float(v) for v in base.values],
    }
    artifacts = {"models": models, "blackbox": bb, "explanations": expl_train, "train": train}
    return block, artifacts


def _height(tm: TransparentModel):
    return getattr(tm.model, "height", None)


def _augmented_folds(folds, expl: ExplanationSet):
    """Carry each sample's PP and PN rows into the sample's fold."""
    n = len(expl)
    fold_of = np.empty(n, dtype=int)
    for f, idx in enumerate(folds):
        fold_of[idx] = f
    has = expl.has_pn
    assign = np.concatenate([fold_of, fold_of, fold_of[has]])
    return [np.flatnonzero(assign == f) for f in range(len(folds))]


def run_pipeline(cfg: PipelineConfig, blackbox: BlackBoxModel | None = None,
                 data: Dataset | None = None) -> RunReport:
    """Run every seed, aggregate, and write the report files when ``cfg.output_dir`` is set.

    A seed that fails is recorded in ``errors`` with its stage; the run
    fails only when no seed succeeds.
    """
    started = time.strftime("%Y-%m-%dT%H:%M:%S")
    if data is None:
        try:
            data = load_csv(cfg.dataset["path"], cfg.dataset.get("label_column"))
        except GBFLError as exc:
            raise PipelineError(str(exc), stage="load") from exc
    bounds = derive_bounds(data)
    per_seed, errors, artifacts = [], [], {}
    for seed in cfg.seeds:
        log.info("seed %d", seed)
        try:
            block, art = _run_seed(cfg, data, bounds, seed, blackbox)
        except PipelineError as exc:
            log.error("%s", exc)
            errors.append({"seed": seed, "stage": exc.stage, "message": exc.message})
            continue
        per_seed.append(block)
        if not artifacts:
            artifacts = {**art, "seed": seed, "data": data}
    if not per_seed:
        raise PipelineError(f"all seeds failed: {errors}")
    means, bb_mean = _aggregate(per_seed)
    rules = []
    if artifacts:
        gbfl = artifacts["models"]["GBFL"]
        for rank, (clause, imp) in enumerate(gbfl.top_k(cfg.top_k), start=1):
            rules.append({"seed": artifacts["seed"], "rank": rank, "importance": imp,
                          "clause_id": clause.id, "rule": clause.render(data.feature_names)})
    name = cfg.dataset.get("name") or Path(cfg.dataset["path"]).stem
    report = RunReport(
        schema_version=SCHEMA_VERSION, dataset=name, config=cfg.echo(), config_hash=cfg.hash(),
        version=__version__, methods=list(METHODS), per_seed=per_seed, means=means,
        blackbox_accuracy=bb_mean, rules=rules, errors=errors,
        timestamps={"started": started, "finished": time.strftime("%Y-%m-%dT%H:%M:%S")},
        artifacts=artifacts,
    )
    if cfg.output_dir:
        emit_report(report, cfg.output_dir)
    return report


def _pct(v):
    return "NA" if v is None else f"{100 * v:.2f}"


def render_markdown(report: RunReport) -> str:
    rows = [("C_TB", "c_tb"), ("C_TB^PN", "c_tb_pn"), ("C_TB^PP", "c_tb_pp"), ("Test Accuracy", "accuracy")]
    lines = [f"# Consistency and accuracy ({len(report.per_seed)} seed(s), percentages)", "",
             f"| Metric | Method | {report.dataset} |", "|---|---|---|"]
    for label, key in rows:
        for i, m in enumerate(report.methods):
            lines.append(f"| {label if i == 0 else ''} | {m} | {_pct(report.means[m][key])} |")
        if key == "accuracy":
            lines.append(f"| | Black-box | {_pct(report.blackbox_accuracy)} |")
    lines.append("")
    return "\n".join(lines)


def render_rules(report: RunReport) -> str:
    """Top-ranked GBFL clauses of the report, in the same layout as :func:`format_rules`."""
    if not report.rules:
        return "(no rules)\n"
    return "\n\n".join(f"GBFL rank {r['rank']} feature (importance {r['importance']:.4f})\n{r['rule']}"
                       for r in report.rules) + "\n"


def emit_report(report: RunReport, out_dir) -> list[Path]:
    """Write report.json, report.md, rules.txt and, when available, explanations and models."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def put(name, text):
        p = out / name
        p.write_text(text)
        written.append(p)

    put("report.json", report.to_json() + "\n")
    put("report.md", render_markdown(report))
    put("rules.txt", render_rules(report))
    art = report.artifacts
    if art:
        data: Dataset = art["data"]
        gbfl = art["models"]["GBFL"]
        save_explanations(art["explanations"], out / "explanations.csv", art["train"].feature_names)
        written += [out / "explanations.csv", out / "explanations.json"]
        save_label_mapping(data, out / "label_mapping.json")
        written.append(out / "label_mapping.json")
        save_clauses(gbfl.clauses, out / "clauses.json", data.feature_names)
        written.append(out / "clauses.json")
        for m, tm in art["models"].items():
            p = out / f"model_{m.lower()}.json"
            tm.save(p, data.feature_names)
            written.append(p)
        try:
            save_model(art["blackbox"], out / "blackbox.bin")
            written.append(out / "blackbox.bin")
        except GBFLError:
            pass
    else:
        put("rules.txt", "\n\n".join(f"GBFL rank {r['rank']} feature (importance {r['importance']:.4f})\n"
                                     f"{r['rule']}" for r in report.rules) + "\n")
    return written
