"""Gradient boosting core: tree and linear weak learners, logistic and
quadratic losses, early stopping on a pluggable larger-is-better metric.

Trees use second-order (Newton) boosting with the regularized split gain
    1/2 * [GL^2/(HL+lam) + GR^2/(HR+lam) - (GL+GR)^2/(HL+HR+lam)] - gamma
and exact greedy enumeration over present feature values. Rows where the
split feature is absent follow a per-split default direction learned as the
side maximizing gain.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .data import DataError, LabelMapping, SparseDataset, binarize
from .metrics import MetricError, MetricSpec, oriented_score

LOGISTIC = "logistic"
QUADRATIC = "quadratic"
GBTREE = "gbtree"
GBLINEAR = "gblinear"


class TrainingError(RuntimeError):
    """Raised when a boosting run cannot proceed."""


@dataclass(frozen=True)
class TreeHyperParams:
    gamma: float = 0.0
    max_depth: int = 6
    min_child_weight: float = 1.0
    max_delta_step: float = 0.0
    subsample: float = 1.0
    colsample_bytree: float = 1.0
    colsample_bylevel: float = 1.0
    reg_lambda: float = 1.0
    reg_alpha: float = 0.0
    learning_rate: float = 0.1

    def __post_init__(self):
        if self.gamma < 0 or self.min_child_weight < 0 or self.max_delta_step < 0:
            raise ValueError("gamma, min_child_weight, max_delta_step must be >= 0")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        for name in ("subsample", "colsample_bytree", "colsample_bylevel",
                     "learning_rate"):
            v = getattr(self, name)
            if not (0.0 < v <= 1.0):
                raise ValueError(f"{name} must lie in (0, 1]")
        if self.reg_lambda < 0 or self.reg_alpha < 0:
            raise ValueError("reg_lambda and reg_alpha must be >= 0")


@dataclass(frozen=True)
class LinearHyperParams:
    reg_lambda: float = 0.0
    reg_alpha: float = 0.0
    reg_lambda_bias: float = 0.0
    learning_rate: float = 0.5

    def __post_init__(self):
        if min(self.reg_lambda, self.reg_alpha, self.reg_lambda_bias) < 0:
            raise ValueError("regularization weights must be >= 0")
        if not (0.0 < self.learning_rate <= 1.0):
            raise ValueError("learning_rate must lie in (0, 1]")


@dataclass
class TreeNode:
    feature: int = -1
    split_value: float = 0.0
    default_left: bool = True
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    leaf_value: float | None = None

    @property
    def is_leaf(self):
        return self.leaf_value is not None


@dataclass
class DecisionTree:
    root: TreeNode

    def n_leaves(self):
        count = 0
        stack = [self.root]
        while stack:
            node = stack.pop()
            if node.is_leaf:
                count += 1
            else:
                stack.extend((node.left, node.right))
        return count


@dataclass
class LinearDelta:
    bias: float
    weights: np.ndarray


@dataclass
class GbmModel:
    booster: str
    loss: str
    base_score: float
    learning_rate: float
    learners: list
    optimal_round: int
    training_log: list  # (train_score, valid_score) per round, index 0 = no learners
    n_cols: int


def grad_hess(loss, y, raw):
    """Gradient and hessian of the loss w.r.t. the raw score."""
    raw = np.asarray(raw, dtype=float)
    y = np.asarray(y, dtype=float)
    if loss == LOGISTIC:
        p = expit(raw)
        return p - y, p * (1.0 - p)
    if loss == QUADRATIC:
        return raw - y, np.ones_like(raw)
    raise ValueError(f"unknown loss {loss!r}")


class _TrainMatrix:
    """Column-oriented training view with per-column constancy flags."""

    def __init__(self, dataset: SparseDataset):
        self.n_rows = dataset.n_rows
        self.n_cols = dataset.n_cols
        self.csc = dataset.to_csc()
        self.ones_csr = dataset.ones_csr()
        csr = dataset.to_csr()
        self.sq_csr = csr.multiply(csr).tocsr()
        self.col_const = np.zeros(self.n_cols, dtype=bool)
        self.col_const_value = np.zeros(self.n_cols)
        indptr, data = self.csc.indptr, self.csc.data
        for j in range(self.n_cols):
            s, e = indptr[j], indptr[j + 1]
            if e > s:
                vals = data[s:e]
                if vals.min() == vals.max():
                    self.col_const[j] = True
                    self.col_const_value[j] = vals[0]

    def col(self, j):
        s, e = self.csc.indptr[j], self.csc.indptr[j + 1]
        return self.csc.indices[s:e], self.csc.data[s:e]


def _leaf_weight(G, H, params):
    denom = H + params.reg_lambda
    if denom <= 0:
        return 0.0
    w = -G / denom
    if params.max_delta_step > 0:
        w = float(np.clip(w, -params.max_delta_step, params.max_delta_step))
    return float(w)


def _gain(GL, HL, GR, HR, lam):
    G, H = GL + GR, HL + HR
    return 0.5 * (GL * GL / (HL + lam) + GR * GR / (HR + lam)
                  - G * G / (H + lam))


def _find_best_split(rows, in_node, g, h, G, H, feat_mask, tm, params):
    """Best (gain, feature, split_value, default_left) over allowed features.

    Returns None when no split has positive gain. Ties resolve to the lowest
    feature index, then lowest split value, then default-left.
    """
    lam = params.reg_lambda
    mcw = params.min_child_weight
    gamma = params.gamma
    g_rows, h_rows = g[rows], h[rows]
    sub = tm.ones_csr[rows]
    Gp = sub.T.dot(g_rows)
    Hp = sub.T.dot(h_rows)
    cnt = np.asarray(sub.sum(axis=0)).ravel()
    Gm, Hm = G - Gp, H - Hp
    cntm = len(rows) - cnt

    best = None  # (gain, feature, split_value, default_left)

    # constant-valued columns: the only split separates present from absent
    fast = tm.col_const & feat_mask & (cnt > 0) & (cntm > 0)
    if fast.any():
        with np.errstate(divide="ignore", invalid="ignore"):
            gains = (0.5 * (Gm * Gm / (Hm + lam) + Gp * Gp / (Hp + lam)
                            - G * G / (H + lam)) - gamma)
        ok = fast & (Hm >= mcw) & (Hp >= mcw) & (gains > 0)
        if ok.any():
            gains = np.where(ok, gains, -np.inf)
            j = int(np.argmax(gains))
            best = (float(gains[j]), j, float(tm.col_const_value[j]), True)

    # non-constant columns: exact greedy over sorted present values
    slow = np.flatnonzero(~tm.col_const & feat_mask & (cnt > 0))
    for j in slow:
        cr, cv = tm.col(j)
        m = in_node[cr]
        vals = cv[m]
        gj = g[cr[m]]
        hj = h[cr[m]]
        cand = _best_split_sorted(vals, gj, hj, G, H, len(rows), params)
        if cand is not None:
            gain, split_value, default_left = cand
            if best is None or gain > best[0]:
                best = (gain, int(j), split_value, default_left)
    return best


def _best_split_sorted(vals, gj, hj, G, H, n_node, params):
    """Best split for one feature given its present values within the node."""
    lam, mcw, gamma = params.reg_lambda, params.min_child_weight, params.gamma
    Gp, Hp = gj.sum(), hj.sum()
    Gm, Hm = G - Gp, H - Hp
    n_miss = n_node - len(vals)
    candidates = []  # (threshold, GL, HL, default_left) in ascending threshold

    if vals.min() == vals.max():
        if n_miss > 0:
            candidates.append((float(vals[0]), Gm, Hm, True))
    else:
        order = np.argsort(vals, kind="stable")
        v = vals[order]
        cg = np.cumsum(gj[order])
        ch = np.cumsum(hj[order])
        bounds = np.flatnonzero(np.diff(v) != 0)
        thresholds = (v[bounds] + v[bounds + 1]) / 2.0
        if n_miss > 0:
            candidates.append((float(v[0]), Gm, Hm, True))
        for t, b in zip(thresholds, bounds):
            GLp, HLp = cg[b], ch[b]
            # absent rows on the left, then on the right
            candidates.append((float(t), GLp + Gm, HLp + Hm, True))
            if n_miss > 0:
                candidates.append((float(t), GLp, HLp, False))

    best = None
    for t, GL, HL, default_left in candidates:
        GR, HR = G - GL, H - HL
        if HL < mcw or HR < mcw:
            continue
        gain = _gain(GL, HL, GR, HR, lam) - gamma
        if gain <= 0:
            continue
        if best is None or gain > best[0]:
            best = (gain, t, default_left)
    if best is None:
        return None
    return float(best[0]), float(best[1]), best[2]


def build_tree(g, h, data, params: TreeHyperParams, rng, rows=None) -> DecisionTree:
    """Greedy depth-first Newton tree over the given training rows."""
    tm = data if isinstance(data, _TrainMatrix) else _TrainMatrix(data)
    g = np.asarray(g, dtype=float)
    h = np.asarray(h, dtype=float)
    n = tm.n_rows
    if rows is None:
        rows = np.arange(n)

    # column sampling is drawn up front so the draw sequence does not depend
    # on the shape the tree happens to take
    if params.colsample_bytree < 1.0:
        k = max(1, int(round(params.colsample_bytree * tm.n_cols)))
        tree_feats = np.sort(rng.choice(tm.n_cols, size=k, replace=False))
    else:
        tree_feats = np.arange(tm.n_cols)
    level_masks = []
    for _ in range(params.max_depth):
        mask = np.zeros(tm.n_cols, dtype=bool)
        if params.colsample_bylevel < 1.0:
            k = max(1, int(round(params.colsample_bylevel * len(tree_feats))))
            mask[rng.choice(tree_feats, size=k, replace=False)] = True
        else:
            mask[tree_feats] = True
        level_masks.append(mask)

    in_node = np.zeros(n, dtype=bool)
    side = np.empty(n, dtype=bool)

    def leaf(G, H, depth):
        # a tree that found no structure at all is a no-op: a bare root leaf
        # would only shift the global intercept, which is the base score's job
        w = 0.0 if depth == 0 else _leaf_weight(G, H, params)
        return TreeNode(leaf_value=w)

    def grow(node_rows, depth):
        G = float(g[node_rows].sum())
        H = float(h[node_rows].sum())
        if depth >= params.max_depth or len(node_rows) < 2:
            return leaf(G, H, depth)
        in_node[node_rows] = True
        best = _find_best_split(node_rows, in_node, g, h, G, H,
                                level_masks[depth], tm, params)
        in_node[node_rows] = False
        if best is None:
            return leaf(G, H, depth)
        _, j, split_value, default_left = best
        cr, cv = tm.col(j)
        side[node_rows] = default_left
        side[cr] = cv < split_value
        left_mask = side[node_rows]
        left_rows = node_rows[left_mask]
        right_rows = node_rows[~left_mask]
        if len(left_rows) == 0 or len(right_rows) == 0:
            return leaf(G, H, depth)
        node = TreeNode(feature=j, split_value=split_value,
                        default_left=default_left)
        node.left = grow(left_rows, depth + 1)
        node.right = grow(right_rows, depth + 1)
        return node

    return DecisionTree(grow(np.asarray(rows, dtype=np.int64), 0))


def build_linear_delta(g, h, data, params: LinearHyperParams,
                       current_bias=0.0, current_weights=None) -> LinearDelta:
    """One coordinate-descent sweep on the second-order loss approximation.

    Each coordinate solves for the new total weight u:
        u = soft(H_j * w_j - G_j, alpha) / (H_j + lambda)
    with the running raw-score delta kept consistent within the sweep. The
    bias uses lambda_bias and carries no L1 term.
    """
    tm = data if isinstance(data, _TrainMatrix) else _TrainMatrix(data)
    g = np.asarray(g, dtype=float)
    h = np.asarray(h, dtype=float)
    if current_weights is None:
        current_weights = np.zeros(tm.n_cols)
    s = np.zeros(tm.n_rows)  # raw-score delta accumulated during the sweep

    Gb, Hb = g.sum(), h.sum()
    denom = Hb + params.reg_lambda_bias
    new_bias = (Hb * current_bias - Gb) / denom if denom > 0 else current_bias
    db = new_bias - current_bias
    if db != 0.0:
        s += db

    dw = np.zeros(tm.n_cols)
    for j in range(tm.n_cols):
        cr, cv = tm.col(j)
        if len(cr) == 0:
            continue
        Gj = float(cv @ (g[cr] + h[cr] * s[cr]))
        Hj = float((h[cr] * cv * cv).sum())
        denom = Hj + params.reg_lambda
        if denom <= 0:
            continue
        w = current_weights[j]
        z = Hj * w - Gj
        u = np.sign(z) * max(abs(z) - params.reg_alpha, 0.0) / denom
        d = u - w
        if d != 0.0:
            s[cr] += d * cv
            dw[j] = d
    return LinearDelta(bias=float(db), weights=dw)


class _PredictCache:
    """Dense per-feature presence/value columns, built lazily per dataset."""

    def __init__(self, dataset: SparseDataset):
        self.n_rows = dataset.n_rows
        self.csc = dataset.to_csc()
        self._cols = {}

    def col(self, j):
        c = self._cols.get(j)
        if c is None:
            s, e = self.csc.indptr[j], self.csc.indptr[j + 1]
            present = np.zeros(self.n_rows, dtype=bool)
            vals = np.zeros(self.n_rows)
            present[self.csc.indices[s:e]] = True
            vals[self.csc.indices[s:e]] = self.csc.data[s:e]
            c = (present, vals)
            self._cols[j] = c
        return c


def predict_tree(tree: DecisionTree, cache: _PredictCache) -> np.ndarray:
    """Vectorized tree traversal over every row of the cached dataset."""
    out = np.empty(cache.n_rows)
    stack = [(tree.root, np.arange(cache.n_rows))]
    while stack:
        node, idx = stack.pop()
        if node.is_leaf:
            out[idx] = node.leaf_value
            continue
        present, vals = cache.col(node.feature)
        p = present[idx]
        goes_left = np.where(p, vals[idx] < node.split_value, node.default_left)
        stack.append((node.left, idx[goes_left]))
        stack.append((node.right, idx[~goes_left]))
    return out


def _metric_labels(dataset, loss, label_mapping):
    if loss == LOGISTIC:
        if dataset.binary_labels is None:
            raise TrainingError("logistic loss requires binary labels")
        return dataset.binary_labels
    if dataset.continuous_labels is None:
        raise TrainingError("quadratic loss requires continuous labels")
    if label_mapping is None:
        raise TrainingError(
            "a label mapping is required to evaluate a ranking metric "
            "on a continuous-label dataset")
    return binarize(dataset.continuous_labels, label_mapping)


def train_gbm(train: SparseDataset, valid: SparseDataset, params, loss,
              stop_metric: MetricSpec, *, label_mapping: LabelMapping = None,
              patience=100, max_rounds=2000, seed=0) -> GbmModel:
    """Boost until the valid metric stops improving for `patience` rounds.

    The training log holds oriented (larger-is-better) metric values for
    every round including round 0 (base score only); the optimal round is
    the argbest of the valid curve.
    """
    if train.n_cols != valid.n_cols:
        raise TrainingError("train and valid column counts differ")
    if train.n_rows == 0:
        raise TrainingError("empty training set")
    booster = GBTREE if isinstance(params, TreeHyperParams) else GBLINEAR
    if loss == LOGISTIC:
        if train.binary_labels is None:
            raise TrainingError("logistic loss requires binary labels")
        y = train.binary_labels.astype(float)
        base = 0.0
    elif loss == QUADRATIC:
        if train.continuous_labels is None:
            raise TrainingError("quadratic loss requires continuous labels")
        y = train.continuous_labels.astype(float)
        base = float(y.mean())
    else:
        raise TrainingError(f"unknown loss {loss!r}")
    train_mlab = _metric_labels(train, loss, label_mapping)
    valid_mlab = _metric_labels(valid, loss, label_mapping)

    rng = np.random.default_rng(seed)
    tm = _TrainMatrix(train)
    train_cache = _PredictCache(train)
    valid_cache = _PredictCache(valid)
    raw_tr = np.full(train.n_rows, base)
    raw_va = np.full(valid.n_rows, base)

    def score(raw, labels):
        s = expit(raw) if loss == LOGISTIC else raw
        try:
            return oriented_score(stop_metric, s, labels)
        except MetricError as e:
            raise TrainingError(f"stopping metric failed: {e}") from e

    log = [(score(raw_tr, train_mlab), score(raw_va, valid_mlab))]
    best_score, best_round = log[0][1], 0
    learners = []
    cum_w = np.zeros(train.n_cols)
    cum_b = 0.0
    lr = params.learning_rate

    for t in range(1, max_rounds + 1):
        g, h = grad_hess(loss, y, raw_tr)
        if booster == GBTREE:
            if params.subsample < 1.0:
                k = max(1, int(round(params.subsample * train.n_rows)))
                rows = np.sort(rng.choice(train.n_rows, size=k, replace=False))
            else:
                rows = None
            learner = build_tree(g, h, tm, params, rng, rows=rows)
            out_tr = predict_tree(learner, train_cache)
            out_va = predict_tree(learner, valid_cache)
        else:
            learner = build_linear_delta(g, h, tm, params, cum_b, cum_w)
            out_tr = learner.bias + train.to_csr().dot(learner.weights)
            out_va = learner.bias + valid.to_csr().dot(learner.weights)
            cum_b += lr * learner.bias
            cum_w += lr * learner.weights
        raw_tr = raw_tr + lr * out_tr
        raw_va = raw_va + lr * out_va
        learners.append(learner)
        s_tr = score(raw_tr, train_mlab)
        s_va = score(raw_va, valid_mlab)
        log.append((s_tr, s_va))
        if s_va > best_score:
            best_score, best_round = s_va, t
        if t - best_round >= patience:
            break

    return GbmModel(booster=booster, loss=loss, base_score=base,
                    learning_rate=lr, learners=learners,
                    optimal_round=best_round, training_log=log,
                    n_cols=train.n_cols)


def predict_gbm(model: GbmModel, data: SparseDataset, rounds=None) -> np.ndarray:
    """Predict with the first `rounds` learners (default: the optimal round).

    Logistic models return probabilities in (0, 1); quadratic models return
    raw scores.
    """
    if data.n_cols != model.n_cols:
        raise DataError(
            f"column-count mismatch: model has {model.n_cols}, data has {data.n_cols}")
    r = model.optimal_round if rounds is None else rounds
    raw = np.full(data.n_rows, model.base_score)
    if model.booster == GBTREE:
        cache = _PredictCache(data)
        for tree in model.learners[:r]:
            raw = raw + model.learning_rate * predict_tree(tree, cache)
    else:
        bias = sum(d.bias for d in model.learners[:r])
        if model.learners[:r]:
            w = np.sum([d.weights for d in model.learners[:r]], axis=0)
            raw = raw + model.learning_rate * (bias + data.to_csr().dot(w))
    if model.loss == LOGISTIC:
        return expit(raw)
    return raw
