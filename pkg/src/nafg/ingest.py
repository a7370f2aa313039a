"""Tabular survival data: CSV loading, preprocessing and fold assignment.

Preprocessing rules per input column:

``standardize``   (x - mean) / sd, sample sd; missing cells are an error
``mean_impute``   missing -> training mean, then standardize (so 0)
``onehot``        one 0/1 column per training category; unseen -> all zeros
``mode_impute``   missing -> training mode, then one-hot
``mim``           standardize observed values, missing -> -1, plus a 0/1
                  missingness indicator column
``binary``        0/1 column passed through unchanged
``drop``          ignored

Columns without an explicit rule get ``binary`` when every observed value
is 0 or 1, ``standardize`` when numeric and ``onehot`` otherwise.
"""

from __future__ import annotations

import configparser
import csv
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

STRATEGIES = ("standardize", "mean_impute", "onehot", "mode_impute", "mim", "binary", "drop")
SENTINEL = -1.0


class DataError(ValueError):
    """Malformed input data or schema."""


@dataclass
class Schema:
    time_col: str
    event_col: str
    num_risks: int
    strategies: dict = field(default_factory=dict)


def load_schema(path) -> Schema:
    """Read a key-value schema file.

    Either a ``[schema]`` section holding ``time_col``, ``event_col``,
    ``num_risks`` plus an optional ``[strategy]`` section mapping column
    names to rules, or the same keys without any section header (strategy
    keys then written as ``strategy.<column>``).
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"schema file not found: {path}")
    text = path.read_text()
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    if not any(line.lstrip().startswith("[") for line in text.splitlines()):
        text = "[schema]\n" + text
    cp.read_string(text)
    if "schema" not in cp:
        raise DataError(f"{path}: missing [schema] section")
    sec = cp["schema"]
    try:
        time_col, event_col = sec["time_col"], sec["event_col"]
        num_risks = int(sec["num_risks"])
    except KeyError as exc:
        raise DataError(f"{path}: missing key {exc.args[0]}") from None
    strategies = {}
    for key, val in sec.items():
        if key.startswith("strategy."):
            strategies[key[len("strategy."):]] = val.strip()
    if "strategy" in cp:
        strategies.update({k: v.strip() for k, v in cp["strategy"].items()})
    for col, s in strategies.items():
        if s not in STRATEGIES:
            raise DataError(f"{path}: unknown strategy {s!r} for column {col!r}")
    if num_risks < 1:
        raise DataError("num_risks must be >= 1")
    return Schema(time_col, event_col, num_risks, strategies)


def _parse_cell(raw: str):
    s = raw.strip()
    if s == "":
        return None
    try:
        v = float(s)
    except ValueError:
        return s
    return v


def _key(cell) -> str:
    if isinstance(cell, float):
        return str(int(cell)) if cell.is_integer() else repr(cell)
    return str(cell)


@dataclass
class RawTable:
    """Typed cells: ``float``, ``str`` or ``None`` for missing."""

    columns: list
    rows: list
    time_col: str
    event_col: str

    def __len__(self):
        return len(self.rows)

    def column(self, name: str) -> list:
        j = self.columns.index(name)
        return [r[j] for r in self.rows]

    def feature_columns(self) -> list:
        return [c for c in self.columns if c not in (self.time_col, self.event_col)]

    def n_missing(self) -> int:
        return sum(c is None for r in self.rows for c in r)

    def subset(self, idx) -> "RawTable":
        return RawTable(self.columns, [self.rows[i] for i in idx], self.time_col, self.event_col)

    def has_labels(self) -> bool:
        return self.time_col in self.columns and self.event_col in self.columns


def load_csv(path, schema: Schema, require_labels: bool = True) -> RawTable:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"data file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: missing header row") from None
        dup = [c for c, n in Counter(header).items() if n > 1]
        if dup:
            raise DataError(f"{path}: duplicate column names {dup}")
        rows = []
        for r, rec in enumerate(reader):
            if not rec:
                continue
            if len(rec) != len(header):
                raise DataError(f"{path}: data row {r} has {len(rec)} cells, header has {len(header)}")
            rows.append([_parse_cell(c) for c in rec])
    table = RawTable(header, rows, schema.time_col, schema.event_col)
    if require_labels:
        for col in (schema.time_col, schema.event_col):
            if col not in header:
                raise DataError(f"{path}: column {col!r} named in schema not found")
        _validate_labels(table, schema.num_risks)
    return table


def _validate_labels(table: RawTable, K: int) -> None:
    for r, (t, e) in enumerate(zip(table.column(table.time_col), table.column(table.event_col))):
        if not isinstance(t, float) or not math.isfinite(t) or t < 0:
            raise DataError(f"data row {r}: time {t!r} is not a finite nonnegative number")
        if not isinstance(e, float) or not e.is_integer() or not 0 <= e <= K:
            raise DataError(f"data row {r}: event {e!r} is not an integer in 0..{K}")


@dataclass
class SurvivalDataset:
    X: np.ndarray
    T: np.ndarray | None
    E: np.ndarray | None
    K: int
    feature_names: list
    warnings: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "SurvivalDataset":
        idx = np.asarray(idx, dtype=int)
        return SurvivalDataset(self.X[idx], None if self.T is None else self.T[idx],
                               None if self.E is None else self.E[idx], self.K,
                               list(self.feature_names))

    def check(self, require_all_causes: bool = True) -> None:
        if self.K < 1:
            raise DataError("K must be >= 1")
        if not np.all(np.isfinite(self.X)):
            raise DataError("covariates contain missing or non-finite values")
        if self.T is None or self.E is None:
            raise DataError("dataset has no time/event labels")
        if require_all_causes:
            absent = [k for k in range(1, self.K + 1) if not np.any(self.E == k)]
            if absent:
                raise DataError(f"no events of cause(s) {absent}")

    def to_csv(self, path, time_col="time", event_col="event") -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(list(self.feature_names) + [time_col, event_col])
            for i in range(self.n):
                w.writerow([repr(float(v)) for v in self.X[i]] + [repr(float(self.T[i])), int(self.E[i])])


@dataclass
class Rule:
    column: str
    kind: str
    mean: float = 0.0
    sd: float = 1.0
    categories: list = field(default_factory=list)
    fill: str | None = None

    def out_names(self) -> list:
        if self.kind in ("onehot", "mode_impute"):
            return [f"{self.column}={c}" for c in self.categories]
        if self.kind == "mim":
            return [self.column, f"{self.column}_missing"]
        if self.kind == "drop":
            return []
        return [self.column]

    def out_kinds(self) -> list:
        if self.kind in ("standardize", "mean_impute"):
            return ["continuous"]
        if self.kind == "mim":
            return ["continuous", "binary"]
        return ["binary"] * len(self.out_names())


@dataclass
class PreprocessPlan:
    rules: list
    fitted_on: str = "train"
    warnings: list = field(default_factory=list)

    @property
    def input_columns(self) -> list:
        return [r.column for r in self.rules]

    @property
    def feature_names(self) -> list:
        return [n for r in self.rules for n in r.out_names()]

    @property
    def feature_kinds(self) -> list:
        return [k for r in self.rules for k in r.out_kinds()]

    def to_raw(self, j: int, values):
        """Map preprocessed values of output column ``j`` back to raw units."""
        values = np.asarray(values, dtype=float)
        pos = 0
        for r in self.rules:
            width = len(r.out_names())
            if j < pos + width:
                if r.kind in ("standardize", "mean_impute") or (r.kind == "mim" and j == pos):
                    return values * r.sd + r.mean
                return values
            pos += width
        raise IndexError(j)

    def to_dict(self) -> dict:
        return {"fitted_on": self.fitted_on,
                "rules": [{"column": r.column, "kind": r.kind, "mean": r.mean, "sd": r.sd,
                           "categories": list(r.categories), "fill": r.fill} for r in self.rules]}

    @classmethod
    def from_dict(cls, d: dict) -> "PreprocessPlan":
        return cls(rules=[Rule(**r) for r in d["rules"]], fitted_on=d.get("fitted_on", "train"))


def _infer(values) -> str:
    observed = [v for v in values if v is not None]
    if observed and all(isinstance(v, float) for v in observed):
        if all(v in (0.0, 1.0) for v in observed):
            return "binary"
        return "standardize"
    return "onehot"


def fit_preprocess(train: RawTable, config: dict | None = None, fitted_on: str = "train") -> PreprocessPlan:
    """Fit per-column statistics on the training rows only."""
    if len(train) == 0:
        raise DataError("cannot fit preprocessing on zero rows")
    config = config or {}
    rules, warns = [], []
    for col in train.feature_columns():
        values = train.column(col)
        kind = config.get(col) or _infer(values)
        if kind not in STRATEGIES:
            raise DataError(f"unknown strategy {kind!r} for column {col!r}")
        observed = [v for v in values if v is not None]
        if kind in ("standardize", "mean_impute", "mim", "binary"):
            bad = [v for v in observed if not isinstance(v, float)]
            if bad:
                raise DataError(f"column {col!r}: strategy {kind} needs numbers, found {bad[0]!r}")
        if kind in ("standardize", "mean_impute", "mim"):
            if not observed:
                raise DataError(f"column {col!r} has no observed values")
            arr = np.array(observed)
            mean = float(arr.mean())
            sd = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
            if not sd > 0:
                msg = f"column {col!r} has zero variance on the fit split; using sd=1"
                logger.warning(msg)
                warns.append(msg)
                sd = 1.0
            rules.append(Rule(col, kind, mean=mean, sd=sd))
        elif kind in ("onehot", "mode_impute"):
            keys = [_key(v) for v in observed]
            cats = sorted(set(keys))
            fill = None
            if kind == "mode_impute":
                if not keys:
                    raise DataError(f"column {col!r} has no observed values")
                counts = Counter(keys)
                top = max(counts.values())
                fill = min(c for c, n in counts.items() if n == top)
            rules.append(Rule(col, kind, categories=cats, fill=fill))
        elif kind == "binary":
            if any(v not in (0.0, 1.0) for v in observed):
                raise DataError(f"column {col!r}: binary strategy needs 0/1 values")
            rules.append(Rule(col, kind))
        else:
            rules.append(Rule(col, "drop"))
    return PreprocessPlan(rules=rules, fitted_on=fitted_on, warnings=warns)


def apply_preprocess(plan: PreprocessPlan, table: RawTable, K: int | None = None) -> SurvivalDataset:
    missing_cols = [c for c in plan.input_columns if c not in table.columns]
    if missing_cols:
        raise DataError(f"columns required by the preprocessing plan are missing: {missing_cols}")
    n = len(table)
    blocks, warns = [], []
    for r in plan.rules:
        values = table.column(r.column)
        if r.kind == "drop":
            continue
        if r.kind in ("standardize", "mean_impute", "mim", "binary"):
            out = np.empty(n)
            ind = np.zeros(n)
            for i, v in enumerate(values):
                if v is None:
                    if r.kind == "standardize" or r.kind == "binary":
                        raise DataError(f"data row {i}: missing value in column {r.column!r} "
                                        f"with no imputation rule")
                    if r.kind == "mean_impute":
                        out[i] = 0.0
                    else:
                        out[i] = SENTINEL
                        ind[i] = 1.0
                elif not isinstance(v, float):
                    raise DataError(f"data row {i}: non-numeric value {v!r} in column {r.column!r}")
                elif r.kind == "binary":
                    out[i] = v
                else:
                    out[i] = (v - r.mean) / r.sd
            blocks.append(out[:, None])
            if r.kind == "mim":
                blocks.append(ind[:, None])
        else:
            out = np.zeros((n, len(r.categories)))
            lookup = {c: j for j, c in enumerate(r.categories)}
            for i, v in enumerate(values):
                if v is None:
                    if r.fill is None:
                        raise DataError(f"data row {i}: missing value in column {r.column!r} "
                                        f"with no imputation rule")
                    key = r.fill
                else:
                    key = _key(v)
                j = lookup.get(key)
                if j is None:
                    msg = f"data row {i}: unseen category {key!r} in column {r.column!r}"
                    logger.warning(msg)
                    warns.append(msg)
                else:
                    out[i, j] = 1.0
            blocks.append(out)
    X = np.hstack(blocks) if blocks else np.zeros((n, 0))
    T = E = None
    if table.has_labels():
        T = np.array(table.column(table.time_col), dtype=float)
        E = np.array(table.column(table.event_col), dtype=float).astype(int)
        if K is None:
            K = int(E.max()) if E.size else 1
    return SurvivalDataset(X=X, T=T, E=E, K=int(K or 1), feature_names=plan.feature_names,
                           warnings=warns)


def kfold_split(E, folds: int, seed: int = 0, stratify: bool = True) -> list:
    """Deterministic (optionally event-type stratified) k-fold partition.

    Subjects are shuffled within each event type and dealt round-robin
    into folds, continuing the deal across types, so every fold gets each
    type's share to within one subject and fold sizes differ by at most one.
    Returns ``[(train_idx, test_idx), ...]`` with sorted index arrays.
    """
    if isinstance(E, SurvivalDataset):
        E = E.E
    E = np.asarray(E, dtype=int)
    n = E.size
    if folds < 2 or folds > n:
        raise ValueError(f"need 2 <= folds <= n, got folds={folds}, n={n}")
    rng = np.random.default_rng(seed)
    if stratify:
        deck = []
        for cls in np.unique(E):
            members = np.flatnonzero(E == cls)
            if members.size < folds:
                logger.warning("event type %d has %d subjects, fewer than %d folds", cls, members.size, folds)
            deck.append(rng.permutation(members))
        deck = np.concatenate(deck)
    else:
        deck = rng.permutation(n)
    assign = np.empty(n, dtype=int)
    assign[deck] = np.arange(n) % folds
    return [(np.flatnonzero(assign != f), np.flatnonzero(assign == f)) for f in range(folds)]


def fold_assignments(splits) -> np.ndarray:
    n = sum(len(test) for _, test in splits)
    out = np.empty(n, dtype=int)
    for f, (_, test) in enumerate(splits):
        out[test] = f
    return out


def write_folds_csv(splits, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row_index", "fold"])
        for i, f in enumerate(fold_assignments(splits)):
            w.writerow([i, f])
