"""Synthetic competing-risks data with a known Fine-Gray structure.

Cause 1 follows proportional subdistribution hazards on the baseline CIF
``F_01(t) = pi * (1 - exp(-t))``::

    F_1(t|x) = 1 - (1 - F_01(t)) ** exp(eta_1(x))

Subjects not failing from cause 1 (probability ``(1 - pi) ** exp(eta_1)``)
fail from cause 2 at an exponential time with rate ``rate2 * exp(eta_2(x))``.
Censoring is independent ``Uniform(0, c_max)`` with ``c_max`` solved so the
expected censored fraction hits the requested rate.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .ingest import SurvivalDataset

logger = logging.getLogger(__name__)

SHAPES = {
    "linear": lambda x: x,
    "quadratic": lambda x: x * x,
    "sine": np.sin,
}

DEFAULT_EFFECTS = {
    (1, 1): ("linear", 1.0),
    (2, 1): ("linear", -1.0),
    (1, 2): ("quadratic", 0.5),
}


@dataclass
class SynthSpec:
    n: int = 4000
    p: int = 3
    effects: dict = field(default_factory=lambda: dict(DEFAULT_EFFECTS))
    pi: float = 0.6
    rate2: float = 1.0
    censor_rate: float = 0.3
    seed: int = 0
    K: int = 2

    def __post_init__(self):
        if self.K != 2:
            raise ValueError("the generator produces exactly two causes")
        if not 0 < self.pi < 1:
            raise ValueError("pi must lie in (0, 1)")
        for (i, k), (shape, _) in self.effects.items():
            if not (1 <= i <= self.p and k in (1, 2)):
                raise ValueError(f"effect for feature {i}, cause {k} out of range")
            if shape not in SHAPES:
                raise ValueError(f"unknown effect shape {shape!r}")

    def contributions(self, X) -> np.ndarray:
        """True per-(feature, cause) contributions, shape ``(n, p, 2)``."""
        X = np.asarray(X, dtype=float)
        out = np.zeros((X.shape[0], self.p, 2))
        for (i, k), (shape, coef) in self.effects.items():
            out[:, i - 1, k - 1] = coef * SHAPES[shape](X[:, i - 1])
        return out

    def baseline_cif1(self, t):
        return self.pi * (1.0 - np.exp(-np.asarray(t, dtype=float)))


@dataclass
class SynthTruth:
    spec: SynthSpec
    eta: np.ndarray
    contrib: np.ndarray
    censor_max: float
    achieved_censor_rate: float
    warnings: list = field(default_factory=list)

    def cif(self, k: int, t, eta=None) -> np.ndarray:
        """True ``F_k(t|x)`` for every subject (rows) at times ``t`` (columns)."""
        eta = self.eta if eta is None else np.atleast_2d(eta)
        t = np.atleast_1d(np.asarray(t, dtype=float))[None, :]
        s1 = np.exp(eta[:, 0])[:, None]
        if k == 1:
            return 1.0 - (1.0 - self.spec.baseline_cif1(t)) ** s1
        lam = self.spec.rate2 * np.exp(eta[:, 1])[:, None]
        return (1.0 - self.spec.pi) ** s1 * (1.0 - np.exp(-lam * t))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["subject", "true_eta1", "true_eta2"])
            for i, (e1, e2) in enumerate(self.eta):
                w.writerow([i, repr(float(e1)), repr(float(e2))])


def _expected_censored(T, c):
    return float(np.mean(np.minimum(T / c, 1.0)))


def _solve_censor_max(T, target):
    lo, hi = 1e-12, max(float(T.max()), 1.0)
    while _expected_censored(T, hi) > target:
        hi *= 2.0
    for _ in range(200):
        mid = np.sqrt(lo * hi)
        if _expected_censored(T, mid) > target:
            lo = mid
        else:
            hi = mid
    return hi


def generate(spec: SynthSpec) -> tuple[SurvivalDataset, SynthTruth]:
    rng = np.random.default_rng(spec.seed)
    X = rng.standard_normal((spec.n, spec.p))
    contrib = spec.contributions(X)
    eta = contrib.sum(axis=1)
    s1 = np.exp(eta[:, 0])
    p1 = 1.0 - (1.0 - spec.pi) ** s1
    u = rng.random(spec.n)
    v = rng.random(spec.n)
    cause = np.where(u < p1, 1, 2)
    T = np.empty(spec.n)
    c1 = cause == 1
    # invert F_1(t|x) = u on the cause-1 subjects
    base = (1.0 - (1.0 - u[c1]) ** (1.0 / s1[c1])) / spec.pi
    T[c1] = -np.log1p(-np.minimum(base, 1.0 - 1e-16))
    lam2 = spec.rate2 * np.exp(eta[~c1, 1])
    T[~c1] = -np.log1p(-v[~c1]) / lam2

    warns = []
    target = spec.censor_rate
    if not 0 <= target < 1:
        clipped = min(max(target, 0.0), 0.95)
        warns.append(f"censoring rate {target} unattainable; using {clipped}")
        target = clipped
    E = cause.copy()
    c_max = float("inf")
    if target > 0:
        c_max = _solve_censor_max(T, target)
        C = rng.uniform(0.0, c_max, spec.n)
        cens = C < T
        T = np.where(cens, C, T)
        E[cens] = 0
    achieved = float(np.mean(E == 0))
    if abs(achieved - target) > 0.05:
        warns.append(f"achieved censoring rate {achieved:.3f} differs from target {target}")
    if spec.censor_rate != target or warns:
        warns.append(f"achieved censoring rate {achieved:.4f}")
    for w in warns:
        logger.warning(w)
    ds = SurvivalDataset(X=X, T=T, E=E.astype(int), K=2,
                         feature_names=[f"x{i}" for i in range(1, spec.p + 1)])
    truth = SynthTruth(spec=spec, eta=eta, contrib=contrib, censor_max=c_max,
                       achieved_censor_rate=achieved, warnings=warns)
    return ds, truth
