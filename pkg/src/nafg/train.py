"""Mini-batch training of the additive Fine-Gray model and cross-validation."""

from __future__ import annotations

import itertools
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import nam
from .finegray import BaselineCif, FgLossConfig, fg_loss, fg_loss_and_grad, fit_baseline, predict_cif
from .ingest import SurvivalDataset, apply_preprocess, fit_preprocess, kfold_split
from .metrics import evaluate
from .survival import CensoringModel, ClampStats, class_weights, fit_censoring_km, time_quantile_grid

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 5e-3
    weight_decay: float = 1e-4
    batch_size: int = 256
    max_epochs: int = 200
    patience: int = 10
    dropout: float = 0.0
    feature_dropout: float = 0.0
    seed: int = 0
    batch_norm: bool = False
    widths: tuple = (32, 32)
    use_class_weights: bool = True
    val_fraction: float = 0.1

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if self.lr <= 0:
            raise ValueError("learning rate must be > 0")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.batch_size < 2:
            raise ValueError("batch size must be >= 2")
        if self.weight_decay < 0:
            raise ValueError("weight decay must be >= 0")


class AdamW:
    """Adam with weight decay applied directly to the parameters.

    One step: ``theta *= 1 - lr * decay`` then the bias-corrected Adam move.
    """

    def __init__(self, lr, weight_decay=0.0, betas=(0.9, 0.999), eps=1e-8):
        self.lr = lr
        self.weight_decay = weight_decay
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, arrays: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for key, theta in arrays.items():
            g = grads[key]
            if key not in self.m:
                self.m[key] = np.zeros_like(theta)
                self.v[key] = np.zeros_like(theta)
            m = self.m[key]
            v = self.v[key]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            if self.weight_decay:
                theta *= 1.0 - self.lr * self.weight_decay
            theta -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def objective(params: nam.ModelParams, X, T, E, G: CensoringModel | None, cfg: FgLossConfig,
              omega=None, mode="eval", rng=None, masks=None, stats=None):
    """Full objective ``sum_k omega_k L_k + gamma ||Theta||^2`` and its parameter gradient."""
    trace = nam.forward(params, X, mode=mode, rng=rng, masks=masks)
    loss, per_cause, d_eta = fg_loss_and_grad(trace.eta, T, E, G, cfg, omega,
                                              params_norm2=params.norm2(), stats=stats)
    grads = nam.backward(params, trace, d_eta)
    if cfg.gamma:
        for key, a in params.arrays.items():
            grads[key] = grads[key] + 2.0 * cfg.gamma * a
    return loss, grads, trace


class EarlyStopping:
    """Tracks the best (lowest) monitored value; earliest epoch wins ties."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = np.inf
        self.best_epoch = None
        self.bad_epochs = 0

    def update(self, epoch: int, value: float) -> bool:
        """Record ``value``; return True when training should stop."""
        if value < self.best:
            self.best = value
            self.best_epoch = epoch
            self.bad_epochs = 0
            return False
        self.bad_epochs += 1
        return self.bad_epochs >= self.patience


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = float("inf")
    epochs_run: int = 0
    stop_reason: str = ""
    wall_clock: float = 0.0
    clamped: int = 0
    skipped_batches: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def full_loss(params, ds: SurvivalDataset, G, omega, gamma, stats=None) -> float:
    eta = nam.forward(params, ds.X, mode="eval").eta
    return fg_loss(eta, ds.T, ds.E, G, FgLossConfig(gamma=gamma), omega,
                   params_norm2=params.norm2(), stats=stats)[0]


def train(train_ds: SurvivalDataset, val_ds: SurvivalDataset, config: TrainConfig = TrainConfig(),
          monitor=None, params: nam.ModelParams | None = None):
    """Fit a model with AdamW on shuffled mini-batches and early stopping.

    Risk sets inside a batch are the batch's own subjects; the censoring
    model and class weights come from the whole training split. After each
    epoch the full-sample validation loss (eval mode) is monitored, or
    ``monitor(params, epoch)`` when supplied. The best epoch's parameters
    are restored and the Breslow baseline is fitted on the training split.

    Returns ``(params, baseline, report)``.
    """
    start = time.perf_counter()
    train_ds.check(require_all_causes=True)
    val_ds.check(require_all_causes=False)
    K = train_ds.K
    init_seq, loop_seq = np.random.SeedSequence(config.seed).spawn(2)
    rng = np.random.default_rng(loop_seq)
    if params is None:
        params = nam.init_params(train_ds.p, K, config.widths, np.random.default_rng(init_seq),
                                 dropout=config.dropout, feature_dropout=config.feature_dropout,
                                 batch_norm=config.batch_norm)
    G = fit_censoring_km(train_ds.T, train_ds.E)
    omega = class_weights(train_ds.E, K) if config.use_class_weights else np.ones(K)
    batch_cfg = FgLossConfig(gamma=0.0)
    opt = AdamW(config.lr, config.weight_decay)
    stopper = EarlyStopping(config.patience)
    stats = ClampStats()
    report = TrainReport()
    best = params.copy()
    n = train_ds.n
    for epoch in range(1, config.max_epochs + 1):
        perm = rng.permutation(n)
        for b, lo in enumerate(range(0, n, config.batch_size)):
            idx = perm[lo:lo + config.batch_size]
            Eb = train_ds.E[idx]
            if idx.size < 2 or not np.any(Eb > 0):
                report.skipped_batches += 1
                continue
            loss, grads, trace = objective(params, train_ds.X[idx], train_ds.T[idx], Eb, G, batch_cfg,
                                           omega, mode="train", rng=rng, stats=stats)
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}, batch {b}")
            nam.update_bn_stats(params, trace)
            opt.step(params.arrays, grads)
        report.train_loss.append(full_loss(params, train_ds, G, omega, config.weight_decay, stats))
        if monitor is not None:
            val = float(monitor(params, epoch))
        else:
            val = full_loss(params, val_ds, G, omega, config.weight_decay, stats)
        if not np.isfinite(val):
            raise FloatingPointError(f"non-finite validation loss at epoch {epoch}")
        report.val_loss.append(val)
        report.epochs_run = epoch
        stop = stopper.update(epoch, val)
        if stopper.best_epoch == epoch:
            best = params.copy()
        if stop:
            report.stop_reason = f"no improvement for {config.patience} epochs"
            break
    else:
        report.stop_reason = "max_epochs reached"
    params = best
    report.best_epoch = stopper.best_epoch
    report.best_val_loss = stopper.best
    eta = nam.forward(params, train_ds.X, mode="eval").eta
    baseline = fit_baseline(eta, train_ds.T, train_ds.E, G, K=K, stats=stats)
    report.clamped = stats.count
    report.wall_clock = time.perf_counter() - start
    return params, baseline, report


def predict(params: nam.ModelParams, baseline: BaselineCif, X, times):
    eta = nam.forward(params, X, mode="eval").eta
    return predict_cif(baseline, eta, times)


def holdout_split(E, fraction: float, seed: int):
    """Stratified ``(train_idx, val_idx)`` with about ``fraction`` of subjects held out."""
    E = np.asarray(E, dtype=int)
    folds = min(max(2, int(round(1.0 / fraction))), E.size)
    classes = np.unique(E)
    splits = kfold_split(E, folds, seed=seed)
    # prefer a fold whose removal leaves every class in training
    for tr, va in splits:
        if np.all(np.isin(classes, E[tr])):
            return tr, va
    tr, va = splits[0]
    back = ~np.isin(E[va], E[tr])
    return np.sort(np.concatenate((tr, va[back]))), va[~back]


@dataclass
class CVResult:
    folds: list
    aggregate: dict
    skipped: list
    reports: list = field(default_factory=list)

    def per_fold_rows(self):
        for f, rep in self.folds:
            for k, label, m, v in rep.rows():
                yield f, k, label, m, v

    def aggregate_rows(self):
        for key in sorted(self.aggregate):
            mean, std, nf = self.aggregate[key]
            yield (*key, mean, std, nf)


def _fold_job(args):
    f, dataset, tr, te, config, horizons, quantiles, raw = args
    if raw is not None:
        table, schema = raw
        plan = fit_preprocess(table.subset(tr), schema.strategies, fitted_on=f"fold{f}-train")
        train_ds = apply_preprocess(plan, table.subset(tr), K=dataset.K)
        test_ds = apply_preprocess(plan, table.subset(te), K=dataset.K)
        if dataset.T is not None:
            train_ds.T, train_ds.E = dataset.T[tr], dataset.E[tr]
            test_ds.T, test_ds.E = dataset.T[te], dataset.E[te]
    else:
        train_ds, test_ds = dataset.subset(tr), dataset.subset(te)
    inner_tr, inner_va = holdout_split(train_ds.E, config.val_fraction, config.seed + 1000 * (f + 1))
    params, baseline, report = train(train_ds.subset(inner_tr), train_ds.subset(inner_va), config)
    grid = np.unique(np.concatenate((horizons, test_ds.T[test_ds.E > 0])))
    pred = predict(params, baseline, test_ds.X, grid)
    G = fit_censoring_km(train_ds.T, train_ds.E)
    metrics = evaluate(pred, test_ds.T, test_ds.E, G, K=test_ds.K, horizons=horizons, quantiles=quantiles)
    return f, metrics, report


def aggregate_reports(reports) -> dict:
    """``(cause, horizon, metric) -> (mean, std, n_folds)`` ignoring undefined values."""
    acc = {}
    for rep in reports:
        for k, label, m, v in rep.rows():
            acc.setdefault((k, label, m), []).append(v)
    out = {}
    for key, vals in acc.items():
        vals = np.array([v for v in vals if np.isfinite(v)])
        if vals.size:
            out[key] = (float(vals.mean()), float(vals.std()), int(vals.size))
        else:
            out[key] = (float("nan"), float("nan"), 0)
    return out


def cross_validate(dataset: SurvivalDataset, folds: int = 5, config: TrainConfig = TrainConfig(),
                   jobs: int = 1, quantiles=(0.25, 0.5, 0.75), permute_labels: bool = False,
                   raw=None) -> CVResult:
    """Stratified k-fold CV: train on each training portion, evaluate on the held-out fold.

    Horizons are event-time quantiles of the whole dataset so that every
    fold reports the same columns. ``permute_labels`` shuffles ``(T, E)``
    against ``X`` first, giving a no-signal control. With ``raw=(table,
    schema)`` each fold refits the preprocessing on its own training rows.
    """
    dataset.check(require_all_causes=True)
    if permute_labels:
        perm = np.random.default_rng(config.seed + 7).permutation(dataset.n)
        dataset = SurvivalDataset(dataset.X, dataset.T[perm], dataset.E[perm], dataset.K,
                                  list(dataset.feature_names))
    horizons = time_quantile_grid(dataset.T, dataset.E, quantiles)
    splits = kfold_split(dataset.E, folds, seed=config.seed)
    jobs_args, skipped = [], []
    for f, (tr, te) in enumerate(splits):
        train_ds = dataset.subset(tr)
        absent = [k for k in range(1, dataset.K + 1) if not np.any(train_ds.E == k)]
        if absent:
            logger.warning("fold %d: training portion has no events of cause(s) %s; skipped", f, absent)
            skipped.append(f)
            continue
        jobs_args.append((f, dataset, tr, te, config, horizons, tuple(quantiles), raw))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_fold_job, jobs_args))
    else:
        results = [_fold_job(a) for a in jobs_args]
    results.sort(key=lambda r: r[0])
    fold_reports = [(f, m) for f, m, _ in results]
    return CVResult(folds=fold_reports, aggregate=aggregate_reports([m for _, m in fold_reports]),
                    skipped=skipped, reports=[r for _, _, r in results])


def sweep_grid(base: TrainConfig, grid: dict):
    """Every combination of the listed values, applied on top of ``base``."""
    keys = sorted(grid)
    for combo in itertools.product(*(grid[k] for k in keys)):
        yield dict(zip(keys, combo)), replace(base, **dict(zip(keys, combo)))
