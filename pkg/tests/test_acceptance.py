"""Acceptance criteria, one test per criterion at the stated tolerances.

Run alone with ``pytest tests/test_acceptance.py``; the terminal summary
prints one PASS/FAIL line per criterion.
"""

import itertools
import math
import time

import numpy as np
import pytest

from nafg import interpret, nam
from nafg.cli import main
from nafg.finegray import BaselineCif, FgLossConfig, fg_loss, fg_loss_and_grad, fit_baseline, predict_cif
from nafg.metrics import brier, td_auc, td_ci
from nafg.survival import (
    CensoringModel, EventIndex, class_weights, fit_censoring_km, ipcw_weight, ipcw_weights, subdist_risk_set,
)
from nafg.synth import SynthSpec, generate
from nafg.train import TrainConfig, cross_validate, holdout_split, objective, train
from helpers import (
    brier_oracle, central_diff, cox_grad_oracle, cox_nll_oracle, max_rel_err, td_auc_oracle, td_ci_oracle,
)

criterion = pytest.mark.criterion


def _random_problem(rng):
    p = int(rng.integers(1, 5))
    K = int(rng.integers(1, 4))
    n = int(rng.integers(max(K, 2), 21))
    depth = int(rng.integers(1, 3))
    widths = tuple(int(w) for w in rng.integers(1, 5, size=depth))
    params = nam.init_params(p, K, widths, seed=rng, dropout=float(rng.choice([0.0, 0.3])),
                             feature_dropout=float(rng.choice([0.0, 0.25])), batch_norm=bool(rng.random() < 0.3))
    X = rng.normal(size=(n, p))
    T = rng.integers(1, 8, size=n).astype(float)
    E = rng.integers(0, K + 1, size=n)
    E[:K] = np.arange(1, K + 1)  # every cause present
    return params, X, T, E


@criterion(1, "end-to-end gradients match central finite differences")
def test_criterion_01_gradient_correctness():
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(120):
        params, X, T, E = _random_problem(rng)
        G = fit_censoring_km(T, E)
        omega = class_weights(E, params.K)
        cfg = FgLossConfig(gamma=float(rng.choice([0.0, 0.01])))
        mode = "train" if rng.random() < 0.5 else "eval"
        masks = None
        if mode == "train":
            masks = nam.trace_masks(nam.forward(params, X, mode="train", rng=rng))
        _, grads, _ = objective(params, X, T, E, G, cfg, omega, mode=mode, masks=masks)
        numeric = central_diff(lambda: objective(params, X, T, E, G, cfg, omega, mode=mode, masks=masks)[0],
                               params.arrays, h=1e-5)
        worst = max(worst, max_rel_err(grads, numeric))
    elapsed = time.perf_counter() - start
    print(f"max relative error {worst:.2e} over 120 models in {elapsed:.1f}s")
    assert worst < 1e-4
    assert elapsed < 60


@criterion(2, "fixture D5 hand-derived values")
def test_criterion_02_fixture_d5(d5):
    T, E = d5
    idx = EventIndex.build(T, E)
    assert set(subdist_risk_set(idx, E, 1, 5.0) + 1) == {2, 4, 5}
    assert set(subdist_risk_set(idx, E, 1, 2.0) + 1) == {1, 2, 3, 4, 5}
    assert set(subdist_risk_set(idx, E, 2, 7.0) + 1) == {1, 4, 5}
    G = fit_censoring_km(T, E)
    assert G(np.array([0.0, 2.9, 3.0, 6.9, 7.0])).tolist() == [1.0, 1.0, 0.75, 0.75, 0.0]
    assert ipcw_weight(G, 3.0, 2, 5.0, k=1) == 0.75
    assert ipcw_weight(G, 3.0, 0, 5.0, k=1) == 0.0
    assert ipcw_weights(G, T, E, 1, 5.0).tolist() == [0.0, 0.75, 0.0, 1.0, 1.0]
    assert class_weights(E, 2).tolist() == [1.25, 2.5]
    b = fit_baseline(np.zeros((5, 2)), T, E)
    assert np.diff(b.cumhaz[1], prepend=0.0).tolist() == pytest.approx([0.2, 1 / 3], abs=1e-15)


@criterion(3, "Cox reduction for a single cause")
def test_criterion_03_cox_reduction():
    rng = np.random.default_rng(7)
    checked = 0
    # exhaustive over tie patterns and event indicators for n <= 6
    for n in range(1, 7):
        for times in itertools.product((1.0, 2.0, 3.0), repeat=n):
            T = np.array(times)
            eta = rng.normal(size=n)
            for ev in itertools.product((0, 1), repeat=n):
                E = np.array(ev)
                if not E.any():
                    continue
                G = fit_censoring_km(T, E)
                loss, _, g = fg_loss_and_grad(eta[:, None], T, E, G)
                assert np.abs(g[:, 0] - cox_grad_oracle(eta, T, E)).max() < 1e-10
                if E.all():
                    assert abs(loss - cox_nll_oracle(eta, T, E)) < 1e-10
                checked += 1
    # random larger cases, n <= 15
    for _ in range(300):
        n = int(rng.integers(1, 16))
        T = rng.integers(1, 10, size=n).astype(float)
        eta = rng.normal(scale=2, size=n)
        E = np.ones(n, dtype=int)
        loss, _ = fg_loss(eta[:, None], T, E, fit_censoring_km(T, E))
        assert abs(loss - cox_nll_oracle(eta, T, E)) < 1e-10
        E = (rng.random(n) < 0.6).astype(int)
        E[0] = 1
        g = fg_loss_and_grad(eta[:, None], T, E, fit_censoring_km(T, E))[2]
        assert np.abs(g[:, 0] - cox_grad_oracle(eta, T, E)).max() < 1e-10
        checked += 1
    print(f"{checked} Cox cases checked")


@criterion(4, "projection normalization after training")
def test_criterion_04_projection_normalization():
    ds, _ = generate(SynthSpec(n=600, seed=11))
    tr, va = holdout_split(ds.E, 0.1, 0)
    configs = [TrainConfig(widths=(8, 8), max_epochs=5),
               TrainConfig(widths=(4,), max_epochs=5, dropout=0.2, feature_dropout=0.1, batch_norm=True, seed=3),
               TrainConfig(widths=(16,), max_epochs=5, weight_decay=0.5, lr=0.05, seed=5)]
    for cfg in configs:
        params, _, _ = train(ds.subset(tr), ds.subset(va), cfg)
        w = params.arrays["proj"]
        raw = np.linalg.norm(w, axis=-1)
        unit = np.linalg.norm(params.normalized_projections(), axis=-1)
        assert np.all(np.abs(unit[raw > 1e-6] - 1) < 1e-6)
        eta = nam.forward(params, ds.X).eta
        for i in range(params.p):
            for k in range(params.K):
                scaled = params.copy()
                scaled.arrays["proj"][i, k] *= 10.0
                assert np.abs(nam.forward(scaled, ds.X).eta - eta).max() <= 1e-8


@criterion(5, "predicted CIFs are valid")
def test_criterion_05_cif_validity():
    rng = np.random.default_rng(5)
    for _ in range(1000):
        n = int(rng.integers(2, 15))
        K = int(rng.integers(1, 4))
        T = rng.exponential(size=n)
        E = rng.integers(0, K + 1, size=n)
        base = fit_baseline(rng.normal(size=(n, K)), T, E, fit_censoring_km(T, E), K=K)
        eta = rng.normal(scale=3, size=(4, K))
        grid = np.sort(np.concatenate(([0.0], rng.uniform(0, T.max() * 1.3, size=20), T)))
        cif = predict_cif(base, eta, grid).cif
        assert np.all(cif >= -1e-12) and np.all(cif <= 1 + 1e-12)
        assert np.all(np.diff(cif, axis=-1) >= -1e-12)
        zero = predict_cif(base, np.zeros((1, K)), grid).cif[0]
        for k in range(1, K + 1):
            assert np.array_equal(zero[k - 1], base.cif_at(k, grid))


@criterion(6, "shift invariance of loss and rank metrics")
def test_criterion_06_shift_invariance():
    rng = np.random.default_rng(6)
    for _ in range(200):
        n = int(rng.integers(4, 30))
        T = rng.integers(1, 10, size=n).astype(float)
        E = rng.integers(0, 3, size=n)
        E[:2] = [1, 2]
        G = fit_censoring_km(T, E)
        eta = rng.normal(size=(n, 2))
        c = rng.normal(scale=3, size=2)
        omega = class_weights(E, 2)
        a, _ = fg_loss(eta, T, E, G, omega=omega)
        b, _ = fg_loss(eta + c, T, E, G, omega=omega)
        assert abs(a - b) < 1e-10
        t = float(np.median(T))
        for k in (1, 2):
            s, s2 = eta[:, k - 1], eta[:, k - 1] + c[k - 1]
            a1, a2 = td_auc(s, T, E, k, G, t), td_auc(s2, T, E, k, G, t)
            assert a1 == a2 or (math.isnan(a1) and math.isnan(a2))
            m1 = np.tile(s[:, None], (1, n))
            c1, c2 = td_ci(m1, T, E, k, G), td_ci(m1 + c[k - 1], T, E, k, G)
            assert c1 == c2 or (math.isnan(c1) and math.isnan(c2))


@criterion(7, "metric oracles by exhaustive pair enumeration")
def test_criterion_07_metric_oracles():
    checked = 0
    for n in range(1, 9):
        for ev in itertools.product((0, 1, 2), repeat=n):
            rng = np.random.default_rng(checked)
            E = np.array(ev)
            T = rng.integers(1, 5, size=n).astype(float)
            scores = rng.integers(0, 4, size=n) / 4
            cif = rng.integers(0, 4, size=(n, n)) / 4
            G = fit_censoring_km(T, E)
            t = float(rng.integers(1, 5))
            for k in (1, 2):
                a, o = td_auc(scores, T, E, k, G, t), td_auc_oracle(scores, T, E, k, G, t)
                assert (math.isnan(a) and math.isnan(o)) or abs(a - o) <= 1e-12
                c, o = td_ci(cif, T, E, k, G), td_ci_oracle(cif, T, E, k, G)
                assert (math.isnan(c) and math.isnan(o)) or abs(c - o) <= 1e-12
            checked += 1
    print(f"{checked} datasets enumerated")
    T = np.array([1.0, 1.0, 5.0, 5.0])
    E = np.ones(4, dtype=int)
    G = CensoringModel.identity()
    pred = [0.8, 0.6, 0.4, 0.2]
    assert brier(pred, T, E, 1, G, 2.0) == pytest.approx(0.10, abs=1e-15)
    assert brier(pred, T, E, 1, G, 2.0) == pytest.approx(brier_oracle(pred, T, E, 1, G, 2.0), abs=1e-15)
    assert brier([0.5] * 4, T, E, 1, G, 2.0) == 0.25


@criterion(8, "recovery oracle on synthetic data")
def test_criterion_08_recovery():
    start = time.perf_counter()
    cfg = TrainConfig()
    r1, r2, last, ci, ci_perm = [], [], 0, [], []
    for seed in range(5):
        ds, truth = generate(SynthSpec(n=4000, p=3, seed=seed))
        tr, va = holdout_split(ds.E, cfg.val_fraction, seed)
        params, _, _ = train(ds.subset(tr), ds.subset(va), TrainConfig(seed=seed))
        for i, coef, out in ((0, 1.0, r1), (1, -1.0, r2)):
            c = interpret.shape_curves(params, ds, features=[i], risks=[1])[0]
            out.append(np.corrcoef(c.values, coef * c.grid)[0, 1])
        last += interpret.importance(params, ds).ranking(1)[-1] == 2
        for perm, out in ((False, ci), (True, ci_perm)):
            res = cross_validate(ds, folds=5, config=TrainConfig(seed=seed), permute_labels=perm)
            out.append([res.aggregate[(1, lab, "td_ci")][0] for lab in ("q.25", "q.50", "q.75")])
    elapsed = time.perf_counter() - start
    ci, ci_perm = np.array(ci), np.array(ci_perm)
    print(f"pearson r feature 1: {np.round(r1, 4)}")
    print(f"pearson r feature 2: {np.round(r2, 4)}")
    print(f"feature 3 ranked last for cause 1 in {last}/5 seeds")
    print(f"cause-1 TD-CI per seed (q.25, q.50, q.75):\n{np.round(ci, 4)}")
    print(f"permuted TD-CI per seed:\n{np.round(ci_perm, 4)}")
    print(f"runtime {elapsed:.0f}s")
    assert min(r1) >= 0.9 and min(r2) >= 0.9
    assert last >= 4
    assert np.all(ci >= 0.65)
    assert np.all(np.abs(ci_perm - 0.5) <= 0.05)
    assert elapsed < 600


@criterion(9, "CLI determinism")
def test_criterion_09_cli_determinism(tmp_path):
    cfg = tmp_path / "cfg.ini"
    cfg.write_text("[train]\nmax_epochs = 5\nwidths = 8,8\n")
    runs = []
    for name in ("a", "b"):
        root = tmp_path / name
        sim = root / "sim"
        steps = [
            ["simulate", "--out", str(sim), "--n", "600", "--seed", "4"],
            ["train", "--data", str(sim / "data.csv"), "--schema", str(sim / "schema.ini"),
             "--config", str(cfg), "--out", str(root / "train")],
            ["predict", "--checkpoint", str(root / "train" / "checkpoint.json"), "--data", str(sim / "data.csv"),
             "--times", "0.25,0.5,1,2", "--out", str(root / "pred")],
            ["evaluate", "--checkpoint", str(root / "train" / "checkpoint.json"), "--data", str(sim / "data.csv"),
             "--schema", str(sim / "schema.ini"), "--out", str(root / "eval")],
            ["explain", "--checkpoint", str(root / "train" / "checkpoint.json"), "--data", str(sim / "data.csv"),
             "--out", str(root / "explain")],
            ["cv", "--data", str(sim / "data.csv"), "--schema", str(sim / "schema.ini"), "--config", str(cfg),
             "--folds", "3", "--jobs", "1", "--out", str(root / "cv")],
        ]
        for argv in steps:
            assert main(argv) == 0, argv
        runs.append({p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()})
    a, b = runs
    assert a.keys() == b.keys()
    assert any(str(k).endswith(".svg") for k in a) and any(str(k).endswith("checkpoint.json") for k in a)
    differing = [str(k) for k in a if a[k] != b[k]]
    assert not differing, differing


@criterion(10, "early stopping halts at patience+1 and restores the best epoch")
def test_criterion_10_early_stopping():
    ds, _ = generate(SynthSpec(n=500, seed=8))
    tr, va = holdout_split(ds.E, 0.1, 0)
    for patience in (10, 3):
        seen = {}

        def monitor(params, epoch):
            seen[epoch] = params.copy()
            return 1.0 + epoch

        cfg = TrainConfig(widths=(8,), patience=patience, max_epochs=100)
        params, _, rep = train(ds.subset(tr), ds.subset(va), cfg, monitor=monitor)
        assert rep.epochs_run == patience + 1 == max(seen)
        assert rep.best_epoch == 1 and rep.best_val_loss == 2.0
        assert all(np.array_equal(params.arrays[k], seen[1].arrays[k]) for k in params.arrays)
