"""Shape functions, feature importance and their CSV/SVG exports."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from . import nam  # noqa: E402

_SVG_RC = {"svg.hashsalt": "nafg", "svg.fonttype": "none", "path.simplify": False}


@dataclass
class ShapeCurve:
    feature: int
    name: str
    risk: int
    grid: np.ndarray
    grid_raw: np.ndarray
    values: np.ndarray
    binary: bool = False


@dataclass
class ImportanceTable:
    """``values[i, k-1]`` is the mean |s_ik| over the reference data; rank 1 is the largest."""

    names: list
    values: np.ndarray

    @property
    def K(self) -> int:
        return self.values.shape[1]

    def ranks(self) -> np.ndarray:
        r = np.empty(self.values.shape, dtype=int)
        for k in range(self.K):
            order = np.argsort(-self.values[:, k], kind="stable")
            r[order, k] = np.arange(1, len(order) + 1)
        return r

    def ranking(self, risk: int) -> list:
        return list(np.argsort(-self.values[:, risk - 1], kind="stable"))

    def to_csv(self, path) -> None:
        ranks = self.ranks()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["feature", "risk", "importance", "rank"])
            for k in range(self.K):
                for i in self.ranking(k + 1):
                    w.writerow([self.names[i], k + 1, repr(float(self.values[i, k])), ranks[i, k]])


def _is_binary(col) -> bool:
    return bool(np.all((col == 0) | (col == 1)))


def shape_curves(params: nam.ModelParams, dataset, plan=None, grid_size: int = 100,
                 features=None, risks=None) -> list:
    """Sample every (feature, risk) shape function over the observed range.

    Continuous features get ``grid_size`` evenly spaced points between the
    observed min and max of ``dataset.X``; 0/1 features get ``{0, 1}``.
    Raw-unit labels come from ``plan`` when given.
    """
    X = dataset.X
    kinds = plan.feature_kinds if plan is not None else None
    features = range(params.p) if features is None else features
    risks = range(1, params.K + 1) if risks is None else risks
    out = []
    for i in features:
        col = X[:, i]
        binary = kinds[i] == "binary" if kinds is not None else _is_binary(col)
        grid = np.array([0.0, 1.0]) if binary else np.linspace(col.min(), col.max(), grid_size)
        raw = plan.to_raw(i, grid) if plan is not None else grid.copy()
        name = dataset.feature_names[i]
        for k in risks:
            vals = nam.shape_value(params, i, k - 1, grid)
            out.append(ShapeCurve(i, name, k, grid, raw, vals, binary))
    return out


def average_curves(runs) -> list:
    """Pointwise mean of matching curves from several models (e.g. CV folds)."""
    runs = list(runs)
    if not runs:
        raise ValueError("nothing to average")
    out = []
    for group in zip(*runs):
        first = group[0]
        if any(c.feature != first.feature or c.risk != first.risk or c.grid.shape != first.grid.shape
               for c in group):
            raise ValueError("curves do not line up across runs")
        out.append(ShapeCurve(first.feature, first.name, first.risk, first.grid, first.grid_raw,
                              np.mean([c.values for c in group], axis=0), first.binary))
    return out


def importance(params: nam.ModelParams, dataset) -> ImportanceTable:
    """Mean absolute eval-mode contribution of each feature to each risk."""
    X = dataset.X
    if X.shape[0] == 0:
        raise ValueError("importance needs a nonempty reference dataset")
    g = nam.forward(params, X, mode="eval").g
    return ImportanceTable(list(dataset.feature_names), np.mean(np.abs(g), axis=0))


def write_shape_csv(curves, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature", "risk", "x_raw", "x_scaled", "s_value"])
        for c in curves:
            for xr, xs, s in zip(c.grid_raw, c.grid, c.values):
                w.writerow([c.name, c.risk, repr(float(xr)), repr(float(xs)), repr(float(s))])


def select_features(table: ImportanceTable, risk: int, top: int = 20, show: int = 10, seed: int = 0) -> list:
    """Seeded random pick of ``show`` features among the ``top`` most important, in rank order."""
    best = table.ranking(risk)[:top]
    if len(best) <= show:
        return best
    rng = np.random.default_rng(seed)
    chosen = set(rng.choice(len(best), size=show, replace=False).tolist())
    return [f for j, f in enumerate(best) if j in chosen]


def _save(fig, path) -> None:
    path = Path(path)
    try:
        fig.savefig(path, format="svg", metadata={"Date": None})
    finally:
        plt.close(fig)


def render_shape_svg(curves, path) -> None:
    curves = list(curves)
    if not curves:
        raise ValueError("no shape curves to render")
    with matplotlib.rc_context(_SVG_RC):
        n = len(curves)
        ncols = min(4, n)
        nrows = math.ceil(n / ncols)
        fig, axes = plt.subplots(nrows, ncols, figsize=(3.2 * ncols, 2.6 * nrows), squeeze=False)
        for ax, c in zip(axes.flat, curves):
            ax.axhline(0.0, color="0.6", lw=0.8, ls="--")
            style = dict(marker="o", ls="-") if c.binary else {}
            (line,) = ax.plot(c.grid_raw, c.values, color="C0" if c.risk == 1 else "C3", lw=1.5, **style)
            line.set_gid(f"curve-{c.feature}-{c.risk}")
            ax.set_title(f"{c.name} (risk {c.risk})", fontsize=9)
            ax.set_xlabel(c.name, fontsize=8)
            ax.set_ylabel("contribution", fontsize=8)
            ax.tick_params(labelsize=7)
        for ax in list(axes.flat)[n:]:
            ax.set_visible(False)
        fig.tight_layout()
        _save(fig, path)


def render_importance_svg(table: ImportanceTable, path, risk: int | None = None, features=None) -> None:
    risks = [risk] if risk is not None else list(range(1, table.K + 1))
    if not table.names:
        raise ValueError("empty importance table")
    with matplotlib.rc_context(_SVG_RC):
        fig, axes = plt.subplots(1, len(risks), figsize=(5 * len(risks), 0.35 * len(table.names) + 1.5),
                                 squeeze=False)
        for ax, k in zip(axes[0], risks):
            order = table.ranking(k) if features is None else [f for f in table.ranking(k) if f in features]
            vals = table.values[order, k - 1]
            ax.barh(np.arange(len(order)), vals, color="C0" if k == 1 else "C3", gid=f"bars-{k}")
            ax.set_yticks(np.arange(len(order)))
            ax.set_yticklabels([table.names[i] for i in order], fontsize=8)
            ax.invert_yaxis()
            ax.set_xlabel("mean |contribution|", fontsize=8)
            ax.set_title(f"Feature importance, risk {k}", fontsize=10)
        fig.tight_layout()
        _save(fig, path)


def render_svg(obj, path, **kw) -> None:
    if isinstance(obj, ImportanceTable):
        render_importance_svg(obj, path, **kw)
    else:
        render_shape_svg(obj, path)
