"""Sparse dataset container, label transforms, stratified folds, and file IO."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse


class DataError(ValueError):
    """Malformed input data or inconsistent dataset contents."""


GREATER_IS_POSITIVE = "greater_is_positive"
LESS_IS_POSITIVE = "less_is_positive"


@dataclass(frozen=True)
class LabelMapping:
    """Threshold rule converting a continuous label into a binary one.

    The boundary value (label exactly equal to the threshold) is always
    negative: the comparison is strict in both directions. Many toolkits
    use >= here; this one deliberately does not.
    """

    threshold: float
    direction: str = GREATER_IS_POSITIVE

    def __post_init__(self):
        if not np.isfinite(self.threshold):
            raise DataError("label mapping threshold must be finite")
        if self.direction not in (GREATER_IS_POSITIVE, LESS_IS_POSITIVE):
            raise DataError(f"unknown direction {self.direction!r}")


def binarize(labels, mapping: LabelMapping) -> np.ndarray:
    """Map continuous labels to {0, 1} through a strict threshold rule."""
    labels = np.asarray(labels, dtype=float)
    if labels.size and np.isnan(labels).any():
        raise DataError("NaN label cannot be binarized")
    if mapping.direction == GREATER_IS_POSITIVE:
        out = labels > mapping.threshold
    else:
        out = labels < mapping.threshold
    return out.astype(np.int8)


class SparseDataset:
    """Row-sparse feature matrix with optional continuous/binary label vectors.

    Rows are stored CSR-style (indptr/indices/values). Feature indices are
    strictly increasing within a row; a missing index means the feature is
    absent (which tree learners treat as missing, linear learners as zero).
    """

    def __init__(self, n_rows, n_cols, indptr, indices, values,
                 continuous_labels=None, binary_labels=None, row_ids=None):
        self.n_rows = int(n_rows)
        self.n_cols = int(n_cols)
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.values = np.asarray(values, dtype=np.float64)
        self.continuous_labels = (
            None if continuous_labels is None
            else np.asarray(continuous_labels, dtype=np.float64))
        self.binary_labels = (
            None if binary_labels is None
            else np.asarray(binary_labels, dtype=np.int8))
        self.row_ids = list(row_ids) if row_ids is not None else None
        self._csr = None
        self._csc = None
        self._ones_csr = None
        self._validate()

    def _validate(self):
        if len(self.indptr) != self.n_rows + 1:
            raise DataError("indptr length does not match n_rows")
        if self.indices.size != self.values.size:
            raise DataError("indices and values length mismatch")
        if self.indices.size:
            if self.indices.min() < 0 or self.indices.max() >= self.n_cols:
                raise DataError("feature index out of range")
            d = np.diff(self.indices)
            boundary = np.zeros(d.size, dtype=bool)
            inner = self.indptr[1:-1]
            boundary[inner[(inner > 0) & (inner < self.indices.size)] - 1] = True
            if not (d[~boundary] > 0).all():
                raise DataError("feature indices not strictly increasing within a row")
        if self.values.size and not np.isfinite(self.values).all():
            raise DataError("non-finite feature value")
        for name, lab in (("continuous", self.continuous_labels),
                          ("binary", self.binary_labels)):
            if lab is not None and len(lab) != self.n_rows:
                raise DataError(f"{name} label length does not match n_rows")
        if self.binary_labels is not None and self.binary_labels.size:
            if not np.isin(self.binary_labels, (0, 1)).all():
                raise DataError("binary labels must be 0 or 1")
        if self.row_ids is not None and len(self.row_ids) != self.n_rows:
            raise DataError("row_ids length does not match n_rows")

    @classmethod
    def from_rows(cls, rows, n_cols=None, **kwargs):
        """Build from a list of per-row [(feature_index, value), ...] pairs."""
        indptr = np.zeros(len(rows) + 1, dtype=np.int64)
        indices, values = [], []
        for i, pairs in enumerate(rows):
            for j, v in pairs:
                indices.append(j)
                values.append(v)
            indptr[i + 1] = len(indices)
        if n_cols is None:
            n_cols = (max(indices) + 1) if indices else 0
        return cls(len(rows), n_cols, indptr,
                   np.asarray(indices, dtype=np.int64),
                   np.asarray(values, dtype=np.float64), **kwargs)

    def row_pairs(self, i):
        s, e = self.indptr[i], self.indptr[i + 1]
        return list(zip(self.indices[s:e].tolist(), self.values[s:e].tolist()))

    def to_csr(self):
        if self._csr is None:
            self._csr = sparse.csr_matrix(
                (self.values, self.indices, self.indptr),
                shape=(self.n_rows, self.n_cols))
        return self._csr

    def to_csc(self):
        if self._csc is None:
            self._csc = self.to_csr().tocsc()
        return self._csc

    def ones_csr(self):
        """Presence-indicator matrix: same pattern, all stored values 1."""
        if self._ones_csr is None:
            self._ones_csr = sparse.csr_matrix(
                (np.ones_like(self.values), self.indices, self.indptr),
                shape=(self.n_rows, self.n_cols))
        return self._ones_csr

    def subset(self, rows):
        rows = np.asarray(rows, dtype=np.int64)
        m = self.to_csr()[rows]
        return SparseDataset(
            len(rows), self.n_cols, m.indptr, m.indices, m.data,
            continuous_labels=None if self.continuous_labels is None
            else self.continuous_labels[rows],
            binary_labels=None if self.binary_labels is None
            else self.binary_labels[rows],
            row_ids=None if self.row_ids is None
            else [self.row_ids[i] for i in rows])

    def save_svmlight(self, path, label_kind, zero_based=True):
        if label_kind == "binary":
            if self.binary_labels is None:
                raise DataError("dataset has no binary labels")
            labels = [str(int(v)) for v in self.binary_labels]
        elif label_kind == "continuous":
            if self.continuous_labels is None:
                raise DataError("dataset has no continuous labels")
            labels = [repr(float(v)) for v in self.continuous_labels]
        else:
            raise DataError(f"unknown label kind {label_kind!r}")
        off = 0 if zero_based else 1
        with open(path, "w") as f:
            for i in range(self.n_rows):
                s, e = self.indptr[i], self.indptr[i + 1]
                feats = " ".join(
                    f"{int(j) + off}:{_fmt(v)}"
                    for j, v in zip(self.indices[s:e], self.values[s:e]))
                f.write(labels[i] + (" " + feats if feats else "") + "\n")


def _fmt(v):
    v = float(v)
    return str(int(v)) if v == int(v) and abs(v) < 1e15 else repr(v)


def load_svmlight(path, expect_label, zero_based=True, n_cols=None):
    """Parse an SVMLight text file (`<label> <idx>:<val> ...` per line)."""
    if expect_label not in ("continuous", "binary"):
        raise DataError(f"unknown expect_label {expect_label!r}")
    rows, labels = [], []
    off = 0 if zero_based else 1
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            toks = line.split()
            try:
                label = float(toks[0])
            except ValueError:
                raise DataError(f"malformed label at line {lineno}: {toks[0]!r}")
            if expect_label == "binary" and label not in (0.0, 1.0):
                raise DataError(f"non-binary label {_fmt(label)} at line {lineno}")
            pairs = []
            prev = -1
            for tok in toks[1:]:
                try:
                    idx_s, val_s = tok.split(":", 1)
                    idx = int(idx_s) - off
                    val = float(val_s)
                except ValueError:
                    raise DataError(f"malformed feature at line {lineno}: {tok!r}")
                if idx < 0:
                    raise DataError(f"feature index below base at line {lineno}: {tok!r}")
                if idx <= prev:
                    raise DataError(
                        f"unsorted or duplicate feature index at line {lineno}: {tok!r}")
                if np.isnan(val):
                    raise DataError(f"NaN feature value at line {lineno}")
                prev = idx
                pairs.append((idx, val))
            rows.append(pairs)
            labels.append(label)
    if not rows:
        raise DataError(f"no rows in {path}")
    max_idx = max((p[-1][0] for p in rows if p), default=-1)
    if n_cols is None:
        n_cols = max_idx + 1
    elif max_idx >= n_cols:
        raise DataError(f"feature index {max_idx} exceeds n_cols={n_cols}")
    kwargs = {}
    if expect_label == "binary":
        kwargs["binary_labels"] = np.asarray(labels, dtype=np.int8)
    else:
        kwargs["continuous_labels"] = np.asarray(labels, dtype=float)
    return SparseDataset.from_rows(rows, n_cols=n_cols, **kwargs)


def load_csv(path, label_column, feature_columns=None, expect_label="binary"):
    """Load a dense numeric CSV; zero-valued cells become absent features."""
    with open(path) as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"no rows in {path}")
        if label_column not in header:
            raise DataError(f"missing label column {label_column!r}")
        if feature_columns is None:
            feature_columns = [c for c in header if c != label_column]
        for c in feature_columns:
            if c not in header:
                raise DataError(f"missing feature column {c!r}")
        label_i = header.index(label_column)
        feat_i = [header.index(c) for c in feature_columns]
        rows, labels = [], []
        for lineno, rec in enumerate(reader, start=2):
            try:
                label = float(rec[label_i])
                vals = [float(rec[i]) for i in feat_i]
            except (ValueError, IndexError):
                raise DataError(f"non-numeric or missing cell at line {lineno}")
            if expect_label == "binary" and label not in (0.0, 1.0):
                raise DataError(f"non-binary label {_fmt(label)} at line {lineno}")
            if any(np.isnan(v) for v in vals):
                raise DataError(f"NaN feature value at line {lineno}")
            rows.append([(j, v) for j, v in enumerate(vals) if v != 0.0])
            labels.append(label)
    if not rows:
        raise DataError(f"no rows in {path}")
    kwargs = {}
    if expect_label == "binary":
        kwargs["binary_labels"] = np.asarray(labels, dtype=np.int8)
    else:
        kwargs["continuous_labels"] = np.asarray(labels, dtype=float)
    return SparseDataset.from_rows(rows, n_cols=len(feat_i), **kwargs)


@dataclass(frozen=True)
class FoldAssignment:
    """Stratified K-fold assignment; immutable once built."""

    K: int
    fold_of_row: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "fold_of_row",
                           np.asarray(self.fold_of_row, dtype=np.int64))
        if self.K < 2:
            raise DataError("K must be at least 2")
        counts = np.bincount(self.fold_of_row, minlength=self.K)
        if len(counts) > self.K or (counts == 0).any():
            raise DataError("every fold must be non-empty")

    def valid_rows(self, k):
        return np.flatnonzero(self.fold_of_row == k)

    def train_rows(self, k):
        return np.flatnonzero(self.fold_of_row != k)


def stratified_kfold(binary_labels, K, seed) -> FoldAssignment:
    """Deal shuffled rows of each class round-robin onto K folds.

    The round-robin counter continues across classes so that both total fold
    sizes and per-class fold counts differ by at most one.
    """
    labels = np.asarray(binary_labels)
    n = len(labels)
    if K < 2:
        raise DataError("K must be at least 2")
    if K > n:
        raise DataError(f"K={K} exceeds number of rows {n}")
    n_pos = int((labels == 1).sum())
    if n_pos < 1:
        raise DataError("cannot stratify: no positive labels")
    if n_pos == n:
        raise DataError("cannot stratify: no negative labels")
    rng = np.random.default_rng(seed)
    fold = np.empty(n, dtype=np.int64)
    counter = 0
    for cls in (1, 0):
        idx = np.flatnonzero(labels == cls)
        rng.shuffle(idx)
        for r in idx:
            fold[r] = counter % K
            counter += 1
    return FoldAssignment(K, fold)
