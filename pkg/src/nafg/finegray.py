"""Fine-Gray partial likelihood, Breslow baseline and CIF prediction.

For cause ``k`` and an event subject ``i`` the IPCW-weighted risk-set sum is

    S_k(T_i) = sum_{T_j >= T_i} exp(eta_kj)
             + G(T_i-) * sum_{T_j < T_i, E_j not in {0, k}} exp(eta_kj) / G(T_j-)

which is the weighted sum over the subdistribution risk set with the ratio
weights of :func:`nafg.survival.ipcw_weight`. Both pieces are cumulative
sums over time-sorted subjects, so the loss, its gradient and the baseline
all cost O(n log n) per cause.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .survival import G_MIN, CensoringModel, ClampStats, competing_weights


@dataclass(frozen=True)
class FgLossConfig:
    gamma: float = 0.0
    use_class_weights: bool = True
    g_min: float = G_MIN

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")


def _risk_sums(eta_k, T, E, k, G, times, g_min, stats):
    """Shifted risk-set sums ``S_k(t) * exp(-shift)`` at each of ``times``.

    Returns ``(S, shift, e, c)`` where ``e = exp(eta - shift)`` and ``c`` is
    ``e / G(T_j-)`` for competing-event subjects, zero elsewhere.
    """
    shift = float(np.max(eta_k)) if eta_k.size else 0.0
    e = np.exp(eta_k - shift)
    comp = (E != 0) & (E != k)
    c = np.zeros_like(e)
    if comp.any():
        c[comp] = e[comp] * competing_weights(G, T[comp], stats, g_min)
    order = np.argsort(T, kind="stable")
    Ts = T[order]
    suffix = np.concatenate((np.cumsum(e[order][::-1])[::-1], [0.0]))
    prefix = np.concatenate(([0.0], np.cumsum(c[order])))
    pos = np.searchsorted(Ts, times, side="left")
    S = suffix[pos] + G.left(times) * prefix[pos]
    return S, shift, e, c


def _cause_loss_grad(eta_k, T, E, k, G, g_min, stats, need_grad=True):
    ev = np.flatnonzero(E == k)
    if ev.size == 0:
        return 0.0, np.zeros_like(eta_k)
    t_ev = T[ev]
    S, shift, e, c = _risk_sums(eta_k, T, E, k, G, t_ev, g_min, stats)
    if np.any(S <= 0) or not np.all(np.isfinite(S)):
        bad = t_ev[np.argmax((S <= 0) | ~np.isfinite(S))]
        raise FloatingPointError(f"empty weighted risk set for cause {k} at time {bad!r}")
    loss = -float(np.sum((eta_k[ev] - shift) - np.log(S)))
    if not need_grad:
        return loss, None
    order = np.argsort(t_ev, kind="stable")
    te = t_ev[order]
    inv = 1.0 / S[order]
    gq = G.left(te) * inv
    cum_inv = np.concatenate(([0.0], np.cumsum(inv)))
    cum_gq = np.concatenate(([0.0], np.cumsum(gq)))
    pos = np.searchsorted(te, T, side="right")
    grad = e * cum_inv[pos] + c * (cum_gq[-1] - cum_gq[pos])
    grad[ev] -= 1.0
    return loss, grad


def _omega(omega, K):
    if omega is None:
        return np.ones(K)
    omega = np.asarray(omega, dtype=float)
    if omega.shape != (K,):
        raise ValueError(f"omega must have shape ({K},)")
    return omega


def _prep(eta, T, E, G):
    eta = np.asarray(eta, dtype=float)
    if eta.ndim == 1:
        eta = eta[:, None]
    T = np.asarray(T, dtype=float)
    E = np.asarray(E, dtype=int)
    if not (eta.shape[0] == T.size == E.size):
        raise ValueError("eta, T and E must have one row per subject")
    if not np.all(np.isfinite(eta)):
        raise FloatingPointError("non-finite risk score")
    return eta, T, E, (G if G is not None else CensoringModel.identity())


def fg_loss(eta, T, E, G: CensoringModel | None = None, cfg: FgLossConfig = FgLossConfig(),
            omega=None, params_norm2: float = 0.0, stats: ClampStats | None = None):
    """Weighted Fine-Gray negative log partial likelihood.

    Returns ``(total, per_cause)`` where ``per_cause[k-1]`` is the unweighted
    cause-``k`` loss and ``total = sum_k omega_k * L_k + gamma * params_norm2``.
    ``G=None`` means no censoring correction (all weights 1).
    """
    eta, T, E, G = _prep(eta, T, E, G)
    K = eta.shape[1]
    omega = _omega(omega, K)
    per_cause = np.array([
        _cause_loss_grad(eta[:, k - 1], T, E, k, G, cfg.g_min, stats, need_grad=False)[0]
        for k in range(1, K + 1)
    ])
    total = float(np.dot(omega, per_cause) + cfg.gamma * params_norm2)
    return total, per_cause


def fg_loss_and_grad(eta, T, E, G: CensoringModel | None = None, cfg: FgLossConfig = FgLossConfig(),
                     omega=None, params_norm2: float = 0.0, stats: ClampStats | None = None):
    """Like :func:`fg_loss` but also returns ``dL/deta`` (shape ``n x K``)."""
    eta, T, E, G = _prep(eta, T, E, G)
    K = eta.shape[1]
    omega = _omega(omega, K)
    per_cause = np.zeros(K)
    grad = np.zeros_like(eta)
    for k in range(1, K + 1):
        per_cause[k - 1], g = _cause_loss_grad(eta[:, k - 1], T, E, k, G, cfg.g_min, stats)
        grad[:, k - 1] = omega[k - 1] * g
    total = float(np.dot(omega, per_cause) + cfg.gamma * params_norm2)
    return total, per_cause, grad


def fg_loss_grad(eta, T, E, G: CensoringModel | None = None, cfg: FgLossConfig = FgLossConfig(),
                 omega=None, stats: ClampStats | None = None) -> np.ndarray:
    return fg_loss_and_grad(eta, T, E, G, cfg, omega, stats=stats)[2]


@dataclass
class BaselineCif:
    """Per-cause Breslow cumulative baseline subdistribution hazard.

    ``times[k]`` are the distinct cause-``k`` event times and ``cumhaz[k]``
    the cumulative hazard from each of those times on; before the first
    time the hazard is 0. ``max_time`` is the largest training time.
    """

    K: int
    times: dict
    cumhaz: dict
    max_time: float

    def cumhaz_at(self, k: int, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times[k], t, side="right")
        return np.concatenate(([0.0], self.cumhaz[k]))[idx]

    def cif_at(self, k: int, t) -> np.ndarray:
        return -np.expm1(-self.cumhaz_at(k, t))

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "max_time": self.max_time,
            "causes": {str(k): {"times": self.times[k].tolist(), "cumhaz": self.cumhaz[k].tolist()}
                       for k in range(1, self.K + 1)},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BaselineCif":
        K = int(d["K"])
        times = {k: np.asarray(d["causes"][str(k)]["times"], dtype=float) for k in range(1, K + 1)}
        cumhaz = {k: np.asarray(d["causes"][str(k)]["cumhaz"], dtype=float) for k in range(1, K + 1)}
        return cls(K=K, times=times, cumhaz=cumhaz, max_time=float(d["max_time"]))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["cause", "time", "cum_hazard", "baseline_cif"])
            for k in range(1, self.K + 1):
                for t, H in zip(self.times[k], self.cumhaz[k]):
                    w.writerow([k, repr(float(t)), repr(float(H)), repr(float(-np.expm1(-H)))])


def fit_baseline(eta, T, E, G: CensoringModel | None = None, K: int | None = None,
                 g_min: float = G_MIN, stats: ClampStats | None = None) -> BaselineCif:
    """Breslow estimate with IPCW-weighted subdistribution risk sets.

    Tied cause-``k`` events form one increment ``d_i / S_k(t_i)``.
    """
    eta, T, E, G = _prep(eta, T, E, G)
    K = K or eta.shape[1]
    times, cumhaz = {}, {}
    for k in range(1, K + 1):
        tk, d = np.unique(T[E == k], return_counts=True)
        if tk.size == 0:
            times[k], cumhaz[k] = np.zeros(0), np.zeros(0)
            continue
        S, shift, _, _ = _risk_sums(eta[:, k - 1], T, E, k, G, tk, g_min, stats)
        if np.any(S <= 0):
            raise FloatingPointError(f"zero Breslow denominator for cause {k}")
        times[k] = tk
        cumhaz[k] = np.cumsum(d * np.exp(-shift) / S)
    return BaselineCif(K=K, times=times, cumhaz=cumhaz, max_time=float(np.max(T)) if T.size else 0.0)


@dataclass
class CifPrediction:
    """``cif[s, k-1, j]`` is ``F_k(times[j] | x_s)``."""

    times: np.ndarray
    cif: np.ndarray
    beyond_range: np.ndarray
    meta: dict = field(default_factory=dict)

    def cause(self, k: int) -> np.ndarray:
        return self.cif[:, k - 1, :]

    def at(self, k: int, t) -> np.ndarray:
        """Step-function lookup at arbitrary times (last grid point at or before ``t``)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        idx = np.searchsorted(self.times, t, side="right") - 1
        out = np.zeros((self.cif.shape[0], t.size))
        ok = idx >= 0
        out[:, ok] = self.cif[:, k - 1, idx[ok]]
        return out

    def to_csv(self, path, subject_ids=None) -> None:
        n, K, m = self.cif.shape
        ids = range(n) if subject_ids is None else subject_ids
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["subject_id", "cause", "time", "cif", "beyond_range"])
            for s, sid in enumerate(ids):
                for k in range(K):
                    for j in range(m):
                        w.writerow([sid, k + 1, repr(float(self.times[j])),
                                    repr(float(self.cif[s, k, j])), int(self.beyond_range[j])])


def predict_cif(baseline: BaselineCif, eta_new, times) -> CifPrediction:
    """``F_k(t|x) = 1 - (1 - F_0k(t))^exp(eta_k(x)) = 1 - exp(-Lambda_0k(t) exp(eta_k))``."""
    eta_new = np.asarray(eta_new, dtype=float)
    if eta_new.ndim == 1:
        eta_new = eta_new[None, :]
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) < 0):
        raise ValueError("prediction times must be ascending")
    n, K = eta_new.shape
    if K != baseline.K:
        raise ValueError(f"eta has {K} causes, baseline has {baseline.K}")
    cif = np.zeros((n, K, times.size))
    with np.errstate(over="ignore"):
        scale = np.exp(eta_new)
    for k in range(1, K + 1):
        H = baseline.cumhaz_at(k, times)[None, :]
        s = scale[:, k - 1][:, None]
        with np.errstate(invalid="ignore"):
            prod = np.where(H > 0, H * s, 0.0)
        cif[:, k - 1, :] = -np.expm1(-prod)
    beyond = times > baseline.max_time
    total = cif.sum(axis=1)
    meta = {
        "n_beyond_range": int(beyond.sum()),
        "max_total_cif": float(total.max()) if total.size else 0.0,
        "n_total_cif_above_one": int(np.sum(total > 1.0)),
    }
    return CifPrediction(times=times, cif=cif, beyond_range=beyond, meta=meta)
