"""Two-layer stacking pipeline: hyper-parameter sampling, cross-validated
base-layer training producing out-of-fold score columns, dual-label fusion,
elastic-net candidate sweep, and two-stage prediction."""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import ConfigError, RunConfig
from .data import (DataError, FoldAssignment, LabelMapping, SparseDataset,
                   binarize, load_csv, load_svmlight, stratified_kfold)
from .elastic_net import ElasticNetModel, ElasticNetParams, fit_elastic_net, predict_proba
from .gbm import (GBLINEAR, GBTREE, LOGISTIC, QUADRATIC, GbmModel,
                  LinearHyperParams, TrainingError, TreeHyperParams,
                  predict_gbm, train_gbm)
from .metrics import MetricError, MetricSpec, evaluate, reliability_bins

# Sampling ranges for the randomized hyper-parameter draws. Encodings:
#   ("log", lo, hi)                log-uniform
#   ("uniform", lo, hi)            uniform
#   ("int", lo, hi)                uniform integer, inclusive
#   ("zero_or_log", p0, lo, hi)    0 with probability p0, else log-uniform
#   ("zero_or_uniform", p0, lo, hi)
DEFAULT_RANGES = {
    "tree": {
        "learning_rate": ("log", 0.01, 0.3),
        "max_depth": ("int", 3, 10),
        "min_child_weight": ("log", 1.0, 64.0),
        "gamma": ("zero_or_log", 0.5, 1e-3, 10.0),
        "subsample": ("uniform", 0.5, 1.0),
        "colsample_bytree": ("uniform", 0.5, 1.0),
        "colsample_bylevel": ("uniform", 0.5, 1.0),
        "reg_lambda": ("log", 0.1, 100.0),
        "reg_alpha": ("zero_or_log", 0.5, 1e-3, 10.0),
        "max_delta_step": ("zero_or_uniform", 0.75, 1.0, 10.0),
    },
    "linear": {
        "reg_lambda": ("log", 1e-3, 100.0),
        "reg_alpha": ("log", 1e-3, 100.0),
        "reg_lambda_bias": ("log", 1e-3, 100.0),
        "learning_rate": ("log", 0.01, 0.3),
    },
    "layer2": {
        "lambda1": ("log", 1e-6, 1.0),
        "lambda2": ("log", 1e-6, 1.0),
        "learning_rate": ("log", 1e-2, 1e1),
    },
}

_TREE_ORDER = ("learning_rate", "max_depth", "min_child_weight", "gamma",
               "subsample", "colsample_bytree", "colsample_bylevel",
               "reg_lambda", "reg_alpha", "max_delta_step")
_LINEAR_ORDER = ("reg_lambda", "reg_alpha", "reg_lambda_bias", "learning_rate")
_LAYER2_ORDER = ("lambda1", "lambda2", "learning_rate")


def derive_seed(*keys) -> int:
    """Deterministic child seed from a tuple of integer keys."""
    return int(np.random.SeedSequence(list(keys)).generate_state(1)[0])


def _merge_ranges(overrides):
    ranges = {grp: dict(DEFAULT_RANGES[grp]) for grp in DEFAULT_RANGES}
    for grp, params in (overrides or {}).items():
        if grp not in ranges:
            raise ConfigError(f"unknown sampling_ranges group {grp!r}")
        for name, spec in params.items():
            if name not in ranges[grp]:
                raise ConfigError(f"unknown sampling_ranges entry {grp}.{name}")
            ranges[grp][name] = tuple(spec)
    return ranges


def _draw(rng, spec):
    kind = spec[0]
    if kind == "log":
        return float(math.exp(rng.uniform(math.log(spec[1]), math.log(spec[2]))))
    if kind == "uniform":
        return float(rng.uniform(spec[1], spec[2]))
    if kind == "int":
        return int(rng.integers(spec[1], spec[2] + 1))
    if kind == "zero_or_log":
        zero = rng.random() < spec[1]
        v = float(math.exp(rng.uniform(math.log(spec[2]), math.log(spec[3]))))
        return 0.0 if zero else v
    if kind == "zero_or_uniform":
        zero = rng.random() < spec[1]
        v = float(rng.uniform(spec[2], spec[3]))
        return 0.0 if zero else v
    raise ConfigError(f"unknown sampling range kind {kind!r}")


@dataclass(frozen=True)
class HyperParamSample:
    index: int
    booster: str
    params: object  # TreeHyperParams | LinearHyperParams


def sample_hyperparams(H, seed, booster_mix="alternate",
                       ranges=None) -> list:
    """Draw H pairwise-distinct hyper-parameter samples.

    The default mix alternates gbtree/gblinear starting with gbtree; the
    draw sequence is deterministic for a fixed seed.
    """
    if H < 1:
        raise ValueError("H must be at least 1")
    merged = _merge_ranges(ranges)
    rng = np.random.default_rng(seed)
    samples = []
    seen = set()
    for i in range(H):
        if booster_mix == "alternate":
            booster = GBTREE if i % 2 == 0 else GBLINEAR
        else:
            booster = booster_mix
        for attempt in range(1001):
            if attempt == 1000:
                raise RuntimeError(
                    "could not draw a unique hyper-parameter sample after "
                    "1000 attempts; sampling ranges are too narrow")
            if booster == GBTREE:
                vals = {n: _draw(rng, merged["tree"][n]) for n in _TREE_ORDER}
                params = TreeHyperParams(**vals)
            else:
                vals = {n: _draw(rng, merged["linear"][n]) for n in _LINEAR_ORDER}
                params = LinearHyperParams(**vals)
            key = (booster, params)
            if key not in seen:
                seen.add(key)
                break
        samples.append(HyperParamSample(index=i, booster=booster, params=params))
    return samples


@dataclass
class Layer1Bundle:
    """All base models for one label kind plus their out-of-fold columns.

    models[h][k] was trained with fold k held out; oof_columns[n, h] is the
    prediction for row n by the model that did NOT see row n's fold.
    """

    label_kind: str
    samples: list
    models: list          # [h][k] -> GbmModel
    oof_columns: np.ndarray


def _fit_layer1_task(args):
    (h, k, train_ds, valid_ds, params, loss, stop_metric, mapping,
     patience, max_rounds, seed) = args
    model = train_gbm(train_ds, valid_ds, params, loss, stop_metric,
                      label_mapping=mapping, patience=patience,
                      max_rounds=max_rounds, seed=seed)
    return h, k, model, predict_gbm(model, valid_ds)


def train_layer1(dataset: SparseDataset, label_kind, folds: FoldAssignment,
                 samples, stop_metric: MetricSpec, *, label_mapping=None,
                 patience=100, max_rounds=2000, master_seed=0, bundle_tag=0,
                 workers=1) -> Layer1Bundle:
    """Train the HxK grid of base models and assemble out-of-fold columns.

    Each (h, k) model derives its seed from (master_seed, bundle_tag, h, k),
    so results are independent of worker count and schedule.
    """
    loss = LOGISTIC if label_kind == "binary" else QUADRATIC
    if label_kind == "binary" and dataset.binary_labels is None:
        raise TrainingError("binary bundle requires binary labels")
    if label_kind == "continuous" and dataset.continuous_labels is None:
        raise TrainingError("continuous bundle requires continuous labels")
    n = dataset.n_rows
    H = len(samples)
    subsets = []
    for k in range(folds.K):
        subsets.append((dataset.subset(folds.train_rows(k)),
                        dataset.subset(folds.valid_rows(k))))
    tasks = []
    for h, sample in enumerate(samples):
        for k in range(folds.K):
            tasks.append((h, k, subsets[k][0], subsets[k][1], sample.params,
                          loss, stop_metric, label_mapping, patience,
                          max_rounds,
                          derive_seed(master_seed, bundle_tag, h, k)))
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_fit_layer1_task, tasks, chunksize=1))
    else:
        results = [_fit_layer1_task(t) for t in tasks]
    models = [[None] * folds.K for _ in range(H)]
    oof = np.empty((n, H))
    for h, k, model, preds in results:
        models[h][k] = model
        oof[folds.valid_rows(k), h] = preds
    return Layer1Bundle(label_kind=label_kind, samples=list(samples),
                        models=models, oof_columns=oof)


@dataclass
class Layer2Data:
    """Stacked design matrix of out-of-fold base scores plus binary label."""

    X: np.ndarray
    y: np.ndarray
    columns: list  # [(label_kind, h), ...]


def assemble_md(bundles, binary_labels) -> Layer2Data:
    """Concatenate bundle columns horizontally, binary-label bundle first."""
    if not bundles:
        raise DataError("no bundles to assemble")
    y = np.asarray(binary_labels)
    ordered = sorted(bundles, key=lambda b: b.label_kind != "binary")
    n = len(y)
    cols, names = [], []
    for b in ordered:
        if b.oof_columns.shape[0] != n:
            raise DataError("bundle row counts differ")
        for h in range(b.oof_columns.shape[1]):
            cols.append(b.oof_columns[:, h])
            names.append((b.label_kind, h))
    return Layer2Data(X=np.column_stack(cols), y=y, columns=names)


@dataclass
class CvScore:
    """Per-candidate per-fold validation scores (natural metric values)."""

    per_fold: np.ndarray  # (H, K)

    @property
    def mean(self):
        return self.per_fold.mean(axis=1)


@dataclass
class Layer2Selection:
    candidates: list            # ElasticNetParams per candidate
    cv: CvScore
    selected_index: int
    fold_models: list           # winner's K fold models
    refit_model: ElasticNetModel


def sample_layer2_params(H, seed, ranges=None, *, max_iter=100_000, tol=1e-8,
                         penalize_intercept=False):
    merged = _merge_ranges(ranges)
    rng = np.random.default_rng(seed)
    out = []
    seen = set()
    for _ in range(H):
        for attempt in range(1001):
            if attempt == 1000:
                raise RuntimeError("could not draw unique layer-2 candidates")
            vals = {n: _draw(rng, merged["layer2"][n]) for n in _LAYER2_ORDER}
            key = tuple(sorted(vals.items()))
            if key not in seen:
                seen.add(key)
                break
        out.append(ElasticNetParams(lambda1=vals["lambda1"],
                                    lambda2=vals["lambda2"],
                                    learning_rate=vals["learning_rate"],
                                    max_iter=max_iter, tol=tol,
                                    penalize_intercept=penalize_intercept))
    return out


def train_layer2(md: Layer2Data, folds: FoldAssignment, H, seed,
                 metric: MetricSpec, *, ranges=None, max_iter=100_000,
                 tol=1e-8, penalize_intercept=False) -> Layer2Selection:
    """Sweep H elastic-net candidates K-fold over the stacked matrix.

    Selects the candidate with the best mean cross-validation score (ties
    go to the lowest index) and keeps both its K fold models and a refit on
    the full matrix.
    """
    if H < 1:
        raise ValueError("H must be at least 1")
    candidates = sample_layer2_params(
        H, seed, ranges, max_iter=max_iter, tol=tol,
        penalize_intercept=penalize_intercept)
    per_fold = np.empty((H, folds.K))
    fold_models = []
    for h, params in enumerate(candidates):
        models_h = []
        for k in range(folds.K):
            tr = folds.train_rows(k)
            va = folds.valid_rows(k)
            m = fit_elastic_net(md.X[tr], md.y[tr], params)
            p = predict_proba(m, md.X[va])
            per_fold[h, k] = evaluate(metric, p, md.y[va])
            models_h.append(m)
        fold_models.append(models_h)
    cv = CvScore(per_fold=per_fold)
    oriented = cv.mean if metric.greater_is_better else -cv.mean
    selected = int(np.argmax(oriented))
    refit = fit_elastic_net(md.X, md.y, candidates[selected])
    return Layer2Selection(candidates=candidates, cv=cv,
                           selected_index=selected,
                           fold_models=fold_models[selected],
                           refit_model=refit)


def layer1_cv(bundle: Layer1Bundle, folds: FoldAssignment, binary_labels,
              metric: MetricSpec) -> CvScore:
    """Cross-validation score of each base model from its out-of-fold column."""
    H = bundle.oof_columns.shape[1]
    per_fold = np.empty((H, folds.K))
    y = np.asarray(binary_labels)
    for h in range(H):
        for k in range(folds.K):
            va = folds.valid_rows(k)
            per_fold[h, k] = evaluate(metric, bundle.oof_columns[va, h], y[va])
    return CvScore(per_fold=per_fold)


@dataclass
class CbfModel:
    """Trained two-layer bundle with everything needed to predict."""

    bundles: list                 # Layer1Bundle, binary-label bundle first
    layer2: Layer2Selection
    folds: FoldAssignment
    label_mapping: LabelMapping | None
    H: int
    seed: int
    column_order: list            # [(label_kind, h), ...]
    use_layer2_refit: bool = False


def layer1_feature_matrix(model: CbfModel, data: SparseDataset) -> np.ndarray:
    """Fold-averaged base-model scores for new rows, in manifest order."""
    cols, names = [], []
    for b in model.bundles:
        for h, fold_models in enumerate(b.models):
            preds = [predict_gbm(m, data) for m in fold_models]
            cols.append(np.mean(preds, axis=0))
            names.append((b.label_kind, h))
    if names != list(map(tuple, model.column_order)):
        raise DataError("column manifest mismatch between model and bundles")
    return np.column_stack(cols)


def predict_cbf(model: CbfModel, data: SparseDataset) -> np.ndarray:
    """Calibrated probability for each row of new data.

    Every base model predicts on all rows; the K fold predictions per
    (bundle, h) are averaged into one column, then the layer-2 fold models
    are averaged on the probability scale (or the full refit is used).
    """
    X = layer1_feature_matrix(model, data)
    if model.use_layer2_refit:
        return predict_proba(model.layer2.refit_model, X)
    probs = [predict_proba(m, X) for m in model.layer2.fold_models]
    return np.mean(probs, axis=0)


@dataclass
class RunResult:
    model: CbfModel
    cv: CvScore
    train_data: SparseDataset
    test_data: SparseDataset | None
    train_pred: np.ndarray
    valid_pred: np.ndarray        # layer-2 out-of-fold predictions
    test_pred: np.ndarray | None
    metrics_report: dict          # {metric_label: {split: value_or_nan}}
    reliability: object           # ReliabilityBins on test (train if no test)
    reliability_split: str


REPORT_METRICS = (
    MetricSpec(kind="auc_roc"),
    MetricSpec(kind="auc_prc"),
    MetricSpec(kind="auc_bed", alpha=20.0),
    MetricSpec(kind="ef", t=0.01),
    MetricSpec(kind="logloss"),
    MetricSpec(kind="reliability_score"),
)


def _safe_eval(spec, scores, labels):
    try:
        return evaluate(spec, scores, labels)
    except MetricError:
        return float("nan")


def load_run_dataset(path, label_cfg, n_cols=None):
    """Load a train/test file per the label configuration of a run."""
    path = str(path)
    if path.endswith(".csv"):
        ds = load_csv(path, label_cfg.csv_label_column,
                      expect_label=label_cfg.file_label)
    else:
        ds = load_svmlight(path, expect_label=label_cfg.file_label,
                           n_cols=n_cols)
    if label_cfg.file_label == "continuous":
        mapping = LabelMapping(label_cfg.threshold, label_cfg.direction)
        ds.binary_labels = binarize(ds.continuous_labels, mapping)
    return ds


def _split_test(dataset, fraction, seed):
    rng = np.random.default_rng(derive_seed(seed, 3))
    y = dataset.binary_labels
    test_rows = []
    for cls in (1, 0):
        idx = np.flatnonzero(y == cls)
        k = int(round(fraction * len(idx)))
        if k > 0:
            test_rows.append(rng.choice(idx, size=k, replace=False))
    test_rows = np.sort(np.concatenate(test_rows)) if test_rows else np.array([], int)
    mask = np.ones(dataset.n_rows, dtype=bool)
    mask[test_rows] = False
    train_rows = np.flatnonzero(mask)
    return dataset.subset(train_rows), dataset.subset(test_rows)


def run_cbf(config: RunConfig) -> RunResult:
    """Execute the full pipeline from a validated run configuration."""
    label_cfg = config.label
    full = load_run_dataset(config.train_path, label_cfg)
    mapping = None
    if label_cfg.file_label == "continuous":
        mapping = LabelMapping(label_cfg.threshold, label_cfg.direction)

    if config.test_path is not None:
        train = full
        test = load_run_dataset(config.test_path, label_cfg, n_cols=full.n_cols)
    elif config.test_fraction > 0:
        train, test = _split_test(full, config.test_fraction, config.seed)
    else:
        train, test = full, None

    folds = stratified_kfold(train.binary_labels, config.K,
                             derive_seed(config.seed, 1))
    samples = sample_hyperparams(config.H, derive_seed(config.seed, 2),
                                 booster_mix=config.booster_mix,
                                 ranges=config.sampling_ranges)
    workers = config.effective_workers()

    bundles = []
    for tag, kind in enumerate(k for k in ("binary", "continuous")
                               if k in label_cfg.kinds):
        bundles.append(train_layer1(
            train, kind, folds, samples, config.stop_metric,
            label_mapping=mapping, patience=config.patience,
            max_rounds=config.max_rounds, master_seed=config.seed,
            bundle_tag=tag, workers=workers))

    md = assemble_md(bundles, train.binary_labels)
    sel = train_layer2(md, folds, config.H, derive_seed(config.seed, 4),
                       config.selection_metric,
                       ranges=config.sampling_ranges,
                       max_iter=config.layer2.max_iter, tol=config.layer2.tol,
                       penalize_intercept=config.layer2.penalize_intercept)

    ordered = sorted(bundles, key=lambda b: b.label_kind != "binary")
    model = CbfModel(bundles=ordered, layer2=sel, folds=folds,
                     label_mapping=mapping, H=config.H, seed=config.seed,
                     column_order=md.columns,
                     use_layer2_refit=config.layer2.refit)

    train_pred = predict_cbf(model, train)
    valid_pred = np.empty(train.n_rows)
    for k in range(folds.K):
        va = folds.valid_rows(k)
        valid_pred[va] = predict_proba(sel.fold_models[k], md.X[va])
    test_pred = predict_cbf(model, test) if test is not None else None

    report = {}
    for spec in REPORT_METRICS:
        row = {"train": _safe_eval(spec, train_pred, train.binary_labels),
               "valid": _safe_eval(spec, valid_pred, train.binary_labels)}
        row["test"] = (_safe_eval(spec, test_pred, test.binary_labels)
                       if test is not None else float("nan"))
        report[spec.label()] = row

    if test is not None and test.n_rows >= 10:
        rel, rel_split = reliability_bins(test_pred, test.binary_labels), "test"
    else:
        rel, rel_split = reliability_bins(train_pred, train.binary_labels), "train"

    return RunResult(model=model, cv=sel.cv, train_data=train, test_data=test,
                     train_pred=train_pred, valid_pred=valid_pred,
                     test_pred=test_pred, metrics_report=report,
                     reliability=rel, reliability_split=rel_split)
