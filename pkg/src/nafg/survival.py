"""Competing-risks primitives.

Event ordering, subdistribution risk sets, the Kaplan-Meier estimate of the
censoring survival function, inverse-probability-of-censoring weights,
class-balance weights and quantile evaluation horizons.

Event labels follow the usual convention: ``E == 0`` is censoring and
``E == k`` for ``k >= 1`` is an event of cause ``k``.

The reduction factor linking cause-specific and subdistribution hazards,

    lambda_k^sub(t|x) = lambda_k(t|x) * r_k(t|x),
    r_k(t|x) = P(T >= t | T >= t or E != k) / P(T >= t),

is not used by any computation here; risk sets are built directly.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

#: Floor applied to censoring-survival values that end up in a denominator.
G_MIN = 1e-4


@dataclass
class ClampStats:
    """Counts how often a censoring-survival value was floored at ``G_MIN``."""

    count: int = 0

    def add(self, n: int) -> None:
        self.count += int(n)


@dataclass(frozen=True)
class EventIndex:
    """Subjects ordered by time, events before censorings at ties.

    Attributes
    ----------
    order : ndarray of int
        Permutation sorting subjects by ascending ``T``; inside a group of
        tied times all ``E > 0`` come before ``E == 0``.
    event_times : dict
        ``cause -> (distinct event times, counts d_i)``.
    """

    T: np.ndarray
    E: np.ndarray
    order: np.ndarray
    event_times: dict = field(default_factory=dict)

    @classmethod
    def build(cls, T, E) -> "EventIndex":
        T = np.asarray(T, dtype=float)
        E = np.asarray(E, dtype=int)
        # lexsort: last key is primary
        order = np.lexsort(((E == 0).astype(int), T))
        event_times = {}
        for k in np.unique(E[E > 0]):
            times, counts = np.unique(T[E == k], return_counts=True)
            event_times[int(k)] = (times, counts)
        return cls(T=T, E=E, order=order, event_times=event_times)


def subdist_risk_set(index: EventIndex, E, k: int, t: float) -> np.ndarray:
    """Subjects in the cause-``k`` subdistribution risk set at time ``t``.

    ``{j : T_j >= t}`` together with subjects who had a competing event
    (neither censored nor cause ``k``) strictly before ``t``. Returns sorted
    0-based subject ids.
    """
    T = index.T
    E = np.asarray(E, dtype=int)
    at_risk = T >= t
    competing = (T < t) & (E != 0) & (E != k)
    return np.flatnonzero(at_risk | competing)


@dataclass(frozen=True)
class CensoringModel:
    """Right-continuous step function estimate of ``G(t) = P(C > t)``.

    ``times`` are the censoring times where the estimate drops and
    ``values`` the estimate from that time onward. Before the first step
    the estimate is 1.
    """

    times: np.ndarray
    values: np.ndarray
    degenerate: bool = False

    @classmethod
    def identity(cls) -> "CensoringModel":
        """No censoring: ``G == 1`` everywhere, so every IPCW weight is 1."""
        return cls(times=np.zeros(0), values=np.zeros(0))

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times, t, side="right") - 1
        vals = np.concatenate(([1.0], self.values))
        return vals[idx + 1]

    def left(self, t):
        """Left limit ``G(t-)``."""
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times, t, side="left") - 1
        vals = np.concatenate(([1.0], self.values))
        return vals[idx + 1]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time", "G"])
            w.writerow([repr(0.0), repr(1.0)])
            for t, g in zip(self.times, self.values):
                w.writerow([repr(float(t)), repr(float(g))])


def fit_censoring_km(T, E) -> CensoringModel:
    """Kaplan-Meier product-limit estimate of the censoring distribution.

    Censorings (``E == 0``) play the role of the event. The number at risk
    at a censoring time ``s`` is ``#{j : T_j >= s}``, so a subject with a
    true event tied with a censoring still counts as at risk at ``s``.
    """
    T = np.asarray(T, dtype=float)
    E = np.asarray(E, dtype=int)
    if T.size == 0:
        raise ValueError("cannot fit a censoring model on zero subjects")
    cens_times, d = np.unique(T[E == 0], return_counts=True)
    if cens_times.size == 0:
        return CensoringModel.identity()
    sorted_T = np.sort(T)
    at_risk = T.size - np.searchsorted(sorted_T, cens_times, side="left")
    values = np.cumprod(1.0 - d / at_risk)
    degenerate = bool(np.all(E == 0) and np.all(T == 0))
    if degenerate:
        logger.warning("all subjects censored at time 0; censoring model is degenerate")
    return CensoringModel(times=cens_times, values=values, degenerate=degenerate)


def ipcw_weight(G: CensoringModel, T_j: float, E_j: int, t: float, k: int | None = None,
                stats: ClampStats | None = None, g_min: float = G_MIN) -> float:
    """IPCW weight of subject ``j`` in a subdistribution risk set at ``t``.

    ``w_j(t) = I(j admissible at t) * G(t-) / G(min(T_j, t)-)``. A subject
    still under observation at ``t`` gets weight exactly 1. A subject with a
    competing event before ``t`` is down-weighted by the censoring mass lost
    since its event. Censored-before-``t`` subjects, and cause-``k`` events
    before ``t`` when ``k`` is given, get 0.
    """
    if T_j >= t:
        return 1.0
    if E_j == 0 or (k is not None and E_j == k):
        return 0.0
    denom = float(G.left(T_j))
    if denom < g_min:
        denom = g_min
        if stats is not None:
            stats.add(1)
    return float(G.left(t)) / denom


def competing_weights(G: CensoringModel, T, stats: ClampStats | None = None,
                      g_min: float = G_MIN) -> np.ndarray:
    """``1 / max(G(T_j-), g_min)``, the per-subject factor for retained competing events."""
    g = np.asarray(G.left(T), dtype=float)
    low = g < g_min
    if stats is not None and low.any():
        stats.add(low.sum())
    return 1.0 / np.maximum(g, g_min)


def ipcw_weights(G: CensoringModel, T, E, k: int, t: float,
                 stats: ClampStats | None = None, g_min: float = G_MIN) -> np.ndarray:
    """Vector of :func:`ipcw_weight` over all subjects for cause ``k`` at ``t``."""
    T = np.asarray(T, dtype=float)
    E = np.asarray(E, dtype=int)
    w = np.zeros(T.size)
    w[T >= t] = 1.0
    comp = (T < t) & (E != 0) & (E != k)
    if comp.any():
        w[comp] = float(G.left(t)) * competing_weights(G, T[comp], stats, g_min)
    return w


def class_weights(E, K: int) -> np.ndarray:
    """Class-balance weights ``omega_k = n / (K * n_k)`` for ``k = 1..K``."""
    E = np.asarray(E, dtype=int)
    n = E.size
    counts = np.array([np.sum(E == k) for k in range(1, K + 1)])
    if np.any(counts == 0):
        missing = [k for k in range(1, K + 1) if counts[k - 1] == 0]
        raise ValueError(f"no events of cause(s) {missing}; cannot weight")
    return n / (K * counts)


def time_quantile_grid(T, E, quantiles=(0.25, 0.5, 0.75)) -> np.ndarray:
    """Empirical quantiles of the observed event times (any cause).

    Linear interpolation between order statistics (``numpy`` "linear",
    the R type-7 rule).
    """
    q = np.asarray(quantiles, dtype=float)
    if np.any((q <= 0) | (q >= 1)) or np.any(np.diff(q) < 0):
        raise ValueError("quantiles must lie in (0, 1) and be ascending")
    T = np.asarray(T, dtype=float)
    E = np.asarray(E, dtype=int)
    times = T[E > 0]
    if times.size == 0:
        raise ValueError("no observed events; cannot place evaluation horizons")
    return np.quantile(times, q, method="linear")
