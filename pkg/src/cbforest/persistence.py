"""Model archive: a self-describing JSON document with a content checksum.

Floats round-trip exactly through Python's json (repr-based), so a saved
model reproduces its in-memory predictions bit for bit.
"""
from __future__ import annotations

import hashlib
import json

import numpy as np

from .data import FoldAssignment, LabelMapping
from .elastic_net import ElasticNetModel, ElasticNetParams
from .ensemble import (CbfModel, CvScore, HyperParamSample, Layer1Bundle,
                       Layer2Selection)
from .gbm import (GBTREE, DecisionTree, GbmModel, LinearDelta,
                  LinearHyperParams, TreeHyperParams, TreeNode)

FORMAT_VERSION = 1


class PersistenceError(ValueError):
    """Corrupt, truncated, or incompatible model archive."""


def _node_to_dict(node: TreeNode):
    if node.is_leaf:
        return {"leaf": node.leaf_value}
    return {"feature": node.feature, "split": node.split_value,
            "default_left": node.default_left,
            "left": _node_to_dict(node.left),
            "right": _node_to_dict(node.right)}


def _node_from_dict(d):
    if "leaf" in d:
        return TreeNode(leaf_value=d["leaf"])
    return TreeNode(feature=d["feature"], split_value=d["split"],
                    default_left=d["default_left"],
                    left=_node_from_dict(d["left"]),
                    right=_node_from_dict(d["right"]))


def _learner_to_dict(learner):
    if isinstance(learner, DecisionTree):
        return {"tree": _node_to_dict(learner.root)}
    return {"bias": learner.bias, "weights": learner.weights.tolist()}


def _learner_from_dict(d):
    if "tree" in d:
        return DecisionTree(_node_from_dict(d["tree"]))
    return LinearDelta(bias=d["bias"], weights=np.asarray(d["weights"]))


def _gbm_to_dict(m: GbmModel):
    return {"booster": m.booster, "loss": m.loss, "base_score": m.base_score,
            "learning_rate": m.learning_rate,
            "optimal_round": m.optimal_round, "n_cols": m.n_cols,
            "training_log": [list(t) for t in m.training_log],
            "learners": [_learner_to_dict(l) for l in m.learners]}


def _gbm_from_dict(d):
    return GbmModel(booster=d["booster"], loss=d["loss"],
                    base_score=d["base_score"],
                    learning_rate=d["learning_rate"],
                    learners=[_learner_from_dict(l) for l in d["learners"]],
                    optimal_round=d["optimal_round"],
                    training_log=[tuple(t) for t in d["training_log"]],
                    n_cols=d["n_cols"])


def _params_to_dict(p):
    if isinstance(p, TreeHyperParams):
        return {"kind": "tree", **p.__dict__}
    if isinstance(p, LinearHyperParams):
        return {"kind": "linear", **p.__dict__}
    raise PersistenceError(f"unknown params type {type(p)!r}")


def _params_from_dict(d):
    d = dict(d)
    kind = d.pop("kind")
    return TreeHyperParams(**d) if kind == "tree" else LinearHyperParams(**d)


def _bundle_to_dict(b: Layer1Bundle):
    return {
        "label_kind": b.label_kind,
        "samples": [{"index": s.index, "booster": s.booster,
                     "params": _params_to_dict(s.params)} for s in b.samples],
        "models": [[_gbm_to_dict(m) for m in row] for row in b.models],
        "oof_columns": b.oof_columns.tolist(),
    }


def _bundle_from_dict(d):
    return Layer1Bundle(
        label_kind=d["label_kind"],
        samples=[HyperParamSample(index=s["index"], booster=s["booster"],
                                  params=_params_from_dict(s["params"]))
                 for s in d["samples"]],
        models=[[_gbm_from_dict(m) for m in row] for row in d["models"]],
        oof_columns=np.asarray(d["oof_columns"]))


def _enet_params_to_dict(p: ElasticNetParams):
    return dict(p.__dict__)


def _enet_to_dict(m: ElasticNetModel):
    return {"beta": m.beta.tolist(), "converged": m.converged,
            "n_iter": m.n_iter, "single_class_warning": m.single_class_warning}


def _enet_from_dict(d):
    return ElasticNetModel(beta=np.asarray(d["beta"]), converged=d["converged"],
                           n_iter=d["n_iter"],
                           single_class_warning=d["single_class_warning"])


def model_to_dict(model: CbfModel):
    sel = model.layer2
    return {
        "bundles": [_bundle_to_dict(b) for b in model.bundles],
        "layer2": {
            "candidates": [_enet_params_to_dict(c) for c in sel.candidates],
            "cv_per_fold": sel.cv.per_fold.tolist(),
            "selected_index": sel.selected_index,
            "fold_models": [_enet_to_dict(m) for m in sel.fold_models],
            "refit_model": _enet_to_dict(sel.refit_model),
        },
        "folds": {"K": model.folds.K,
                  "fold_of_row": model.folds.fold_of_row.tolist()},
        "label_mapping": None if model.label_mapping is None else {
            "threshold": model.label_mapping.threshold,
            "direction": model.label_mapping.direction},
        "H": model.H,
        "seed": model.seed,
        "column_order": [list(c) for c in model.column_order],
        "use_layer2_refit": model.use_layer2_refit,
    }


def model_from_dict(d) -> CbfModel:
    l2 = d["layer2"]
    sel = Layer2Selection(
        candidates=[ElasticNetParams(**c) for c in l2["candidates"]],
        cv=CvScore(per_fold=np.asarray(l2["cv_per_fold"])),
        selected_index=l2["selected_index"],
        fold_models=[_enet_from_dict(m) for m in l2["fold_models"]],
        refit_model=_enet_from_dict(l2["refit_model"]))
    lm = d["label_mapping"]
    return CbfModel(
        bundles=[_bundle_from_dict(b) for b in d["bundles"]],
        layer2=sel,
        folds=FoldAssignment(d["folds"]["K"],
                             np.asarray(d["folds"]["fold_of_row"])),
        label_mapping=None if lm is None else LabelMapping(lm["threshold"],
                                                           lm["direction"]),
        H=d["H"], seed=d["seed"],
        column_order=[tuple(c) for c in d["column_order"]],
        use_layer2_refit=d["use_layer2_refit"])


def _payload_checksum(payload):
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def save_archive(path, model: CbfModel, config_dict):
    payload = {"format_version": FORMAT_VERSION, "config": config_dict,
               "model": model_to_dict(model)}
    doc = dict(payload)
    doc["checksum"] = _payload_checksum(payload)
    with open(path, "w") as f:
        json.dump(doc, f, sort_keys=True)
        f.write("\n")


def load_archive(path):
    """Load and checksum-verify an archive; returns (model, config_dict)."""
    try:
        with open(path) as f:
            doc = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise PersistenceError(f"cannot read archive: {e}")
    if not isinstance(doc, dict) or "checksum" not in doc:
        raise PersistenceError("archive has no checksum")
    stored = doc.pop("checksum")
    if doc.get("format_version") != FORMAT_VERSION:
        raise PersistenceError(
            f"unsupported archive format_version {doc.get('format_version')!r}")
    if _payload_checksum(doc) != stored:
        raise PersistenceError("archive checksum mismatch")
    return model_from_dict(doc["model"]), doc["config"]
