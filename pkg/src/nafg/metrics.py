"""Time-dependent AUC, concordance and Brier score for competing risks.

All three are IPCW-adjusted with the Kaplan-Meier censoring model and treat
subjects with a competing event as non-cases for the cause under study.

* ``td_auc`` - cumulative/dynamic AUC at horizon ``t``. Cases have a
  cause-``k`` event by ``t`` (weight ``1/G(T_i-)``); controls are still
  event-free at ``t`` (weight ``1/G(t)``) or had a competing event by ``t``
  (weight ``1/G(T_j-)``).
* ``td_ci`` - concordance of the predicted CIF at the case's event time,
  over pairs with ``E_i = k`` and either ``T_i < T_j`` or ``T_i <= T_j``
  with ``E_j`` a competing cause; pair weight ``1/G(T_i-)^2``. Cases can
  be truncated at a horizon.
* ``brier`` - ``mean(w * (1{E=k, T<=t} - F_k(t|x))^2)`` with weights
  ``1/G(T-)`` for events by ``t``, ``1/G(t)`` for subjects beyond ``t`` and
  0 for subjects censored by ``t``.

Score ties get half credit. Undefined values (no cases, no controls, no
comparable pairs) are ``nan``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .finegray import CifPrediction
from .survival import G_MIN, CensoringModel, ClampStats, time_quantile_grid

METRICS = ("td_auc", "td_ci", "brier")


def _inv_g(values, g_min, stats):
    values = np.asarray(values, dtype=float)
    low = values < g_min
    if stats is not None and np.any(low):
        stats.add(np.sum(low))
    return 1.0 / np.maximum(values, g_min)


def td_auc(scores, T, E, k: int, G: CensoringModel, t: float,
           g_min: float = G_MIN, stats: ClampStats | None = None) -> float:
    scores = np.asarray(scores, dtype=float)
    T = np.asarray(T, dtype=float)
    E = np.asarray(E, dtype=int)
    case = (E == k) & (T <= t)
    late = T > t
    comp = (T <= t) & (E != 0) & (E != k)
    if not case.any() or not (late.any() or comp.any()):
        return float("nan")
    w_case = _inv_g(G.left(T[case]), g_min, stats)
    ctrl_scores = np.concatenate((scores[late], scores[comp]))
    w_ctrl = np.concatenate((np.full(late.sum(), float(_inv_g(G(t), g_min, stats))),
                             _inv_g(G.left(T[comp]), g_min, stats)))
    order = np.argsort(ctrl_scores, kind="stable")
    cs = ctrl_scores[order]
    cum = np.concatenate(([0.0], np.cumsum(w_ctrl[order])))
    s_case = scores[case]
    lo = np.searchsorted(cs, s_case, side="left")
    hi = np.searchsorted(cs, s_case, side="right")
    credit = cum[lo] + 0.5 * (cum[hi] - cum[lo])
    return float(np.sum(w_case * credit) / (w_case.sum() * w_ctrl.sum()))


def td_ci(cif_at_case, T, E, k: int, G: CensoringModel, horizon: float | None = None,
          g_min: float = G_MIN, stats: ClampStats | None = None) -> float:
    """Time-dependent concordance.

    Parameters
    ----------
    cif_at_case : callable or ndarray
        Either ``f(t) -> n-vector`` of predicted cause-``k`` CIFs at time
        ``t`` for every subject, or an ``n x n`` array whose column ``i``
        holds every subject's CIF at ``T_i``.
    """
    T = np.asarray(T, dtype=float)
    E = np.asarray(E, dtype=int)
    cases = np.flatnonzero((E == k) & (T <= (np.inf if horizon is None else horizon)))
    comp = (E != 0) & (E != k)
    num = 0.0
    den = 0.0
    for i in cases:
        comparable = (T > T[i]) | ((T == T[i]) & comp)
        if not comparable.any():
            continue
        f = cif_at_case(T[i]) if callable(cif_at_case) else cif_at_case[:, i]
        fi = f[i]
        fj = f[comparable]
        w = float(_inv_g(G.left(T[i]), g_min, stats)) ** 2
        num += w * (np.sum(fi > fj) + 0.5 * np.sum(fi == fj))
        den += w * comparable.sum()
    return float(num / den) if den > 0 else float("nan")


def brier(pred_at_t, T, E, k: int, G: CensoringModel, t: float,
          g_min: float = G_MIN, stats: ClampStats | None = None) -> float:
    pred = np.asarray(pred_at_t, dtype=float)
    T = np.asarray(T, dtype=float)
    E = np.asarray(E, dtype=int)
    w = np.zeros(T.size)
    ev = (T <= t) & (E > 0)
    w[ev] = _inv_g(G.left(T[ev]), g_min, stats)
    w[T > t] = float(_inv_g(G(t), g_min, stats))
    y = ((E == k) & (T <= t)).astype(float)
    return float(np.mean(w * (y - pred) ** 2))


def _qlabel(q: float) -> str:
    return "q" + f"{q:.2f}"[1:]


@dataclass
class MetricsReport:
    """Metric values keyed by ``(cause, horizon label, metric)``."""

    K: int
    quantiles: tuple
    horizons: np.ndarray
    values: dict
    n: int
    clamped: int = 0
    convention: str = ("td_auc: IPCW cumulative/dynamic; td_ci: IPCW (1/G^2) concordance of CIF "
                       "at case time; brier: IPCW two-term weights")
    labels: list = field(default_factory=list)

    def rows(self):
        for k in range(1, self.K + 1):
            for label in self.labels:
                for m in METRICS:
                    yield k, label, m, self.values[(k, label, m)]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["cause", "horizon", "metric", "value", "n"])
            for k, label, m, v in self.rows():
                w.writerow([k, label, m, repr(float(v)), self.n])

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "horizons": {lab: float(h) for lab, h in zip(self.labels, self.horizons)},
            "convention": self.convention,
            "clamped": self.clamped,
            "values": [{"cause": k, "horizon": lab, "metric": m, "value": float(v)}
                       for k, lab, m, v in self.rows()],
        }


def evaluate(pred: CifPrediction, T, E, G: CensoringModel, K: int | None = None,
             horizons=None, quantiles=(0.25, 0.5, 0.75), g_min: float = G_MIN) -> MetricsReport:
    """Full report at quantile horizons.

    ``horizons`` defaults to the event-time quantiles of ``(T, E)``. The
    prediction grid must reach every horizon; TD-CI looks the CIF up at
    each case time by step interpolation on the grid.
    """
    T = np.asarray(T, dtype=float)
    E = np.asarray(E, dtype=int)
    K = K or pred.cif.shape[1]
    if horizons is None:
        horizons = time_quantile_grid(T, E, quantiles)
    horizons = np.asarray(horizons, dtype=float)
    if pred.times.size == 0 or np.any(horizons < pred.times[0]):
        raise ValueError("prediction grid does not cover the evaluation horizons")
    labels = [_qlabel(q) for q in quantiles]
    stats = ClampStats()
    values = {}
    for k in range(1, K + 1):
        case_idx = np.flatnonzero(E == k)
        cache = {}

        def cif_at(t, k=k):
            if t not in cache:
                cache[t] = pred.at(k, t)[:, 0]
            return cache[t]

        for label, h in zip(labels, horizons):
            at_h = pred.at(k, h)[:, 0]
            values[(k, label, "td_auc")] = td_auc(at_h, T, E, k, G, h, g_min, stats)
            values[(k, label, "td_ci")] = td_ci(cif_at, T, E, k, G, h, g_min, stats) if case_idx.size else float("nan")
            values[(k, label, "brier")] = brier(at_h, T, E, k, G, h, g_min, stats)
    return MetricsReport(K=K, quantiles=tuple(quantiles), horizons=horizons, values=values,
                         n=int(T.size), clamped=stats.count, labels=labels)
