"""Command-line interface.

    nafg simulate --out DIR [--seed S] [--n N] [--censor-rate R]
    nafg train    --data CSV --schema INI --out DIR
    nafg cv       --data CSV --schema INI --out DIR [--folds 5] [--jobs 1]
    nafg predict  --checkpoint JSON --data CSV --times 1,2,3 --out DIR
    nafg evaluate --checkpoint JSON --data CSV --schema INI --out DIR
    nafg explain  --checkpoint JSON --data CSV --out DIR [--grid-size 100]

Every subcommand also reads ``--config``, an INI file with one section per
subcommand (``[train]``, ``[cv]``, ...). Training keys may sit in
``[train]`` and are shared by ``cv``; a ``[sweep]`` section with
comma-separated values turns ``cv`` into a grid search. Flags win over the
file. Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint, interpret, nam
from .finegray import predict_cif
from .ingest import (DataError, Schema, apply_preprocess, fit_preprocess, kfold_split, load_csv, load_schema,
                     write_folds_csv)
from .metrics import evaluate
from .survival import fit_censoring_km
from .synth import SynthSpec, generate
from .train import TrainConfig, cross_validate, holdout_split, sweep_grid, train

logger = logging.getLogger("nafg")


class UsageError(Exception):
    pass


_TRAIN_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}


def _coerce(name: str, raw: str):
    default = _TRAIN_FIELDS[name].default
    raw = raw.strip()
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"bad boolean for {name}: {raw!r}")
    if isinstance(default, tuple):
        return tuple(int(v) for v in raw.replace("-", ",").split(",") if v.strip())
    return type(default)(raw)


def _read_config(path) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        cp.read(path)
    return cp


def _train_config(cp, section: str, args) -> TrainConfig:
    values = {}
    for sec in ("train", section):
        if cp.has_section(sec):
            for key, raw in cp.items(sec):
                if key in _TRAIN_FIELDS:
                    try:
                        values[key] = _coerce(key, raw)
                    except ValueError as exc:
                        raise UsageError(f"config [{sec}] {key}: {exc}") from None
    if getattr(args, "seed", None) is not None:
        values["seed"] = args.seed
    try:
        return TrainConfig(**values)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _need(args, *names):
    for n in names:
        if getattr(args, n, None) is None:
            raise UsageError(f"--{n.replace('_', '-')} is required")


def _out_dir(args) -> Path:
    _need(args, "out")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_labeled(args):
    _need(args, "data", "schema")
    schema = load_schema(args.schema)
    table = load_csv(args.data, schema)
    return schema, table


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=float) + "\n")


def cmd_train(args) -> None:
    cp = _read_config(args.config)
    cfg = _train_config(cp, "train", args)
    schema, table = _load_labeled(args)
    out = _out_dir(args)
    plan = fit_preprocess(table, schema.strategies)
    ds = apply_preprocess(plan, table, K=schema.num_risks)
    ds.check()
    tr, va = holdout_split(ds.E, cfg.val_fraction, cfg.seed)
    params, baseline, report = train(ds.subset(tr), ds.subset(va), cfg)
    checkpoint.save(out / "checkpoint.json", params, baseline, plan,
                    extra={"config": dataclasses.asdict(cfg), "feature_names": ds.feature_names,
                           "time_col": schema.time_col, "event_col": schema.event_col,
                           "num_risks": schema.num_risks})
    baseline.to_csv(out / "baseline.csv")
    # wall-clock time varies between runs, so it is logged instead of written
    _write_json(out / "report.json", {k: v for k, v in report.to_dict().items() if k != "wall_clock"})
    logger.info("training took %.2f s", report.wall_clock)
    print(f"trained {report.epochs_run} epochs, best epoch {report.best_epoch}, "
          f"val loss {report.best_val_loss:.4f}")


def _cv_prepared(table, schema, cfg, folds, jobs):
    """Preprocess on the whole table only to get labels; folds refit their own plan."""
    plan = fit_preprocess(table, schema.strategies)
    ds = apply_preprocess(plan, table, K=schema.num_risks)
    return ds, cross_validate(ds, folds, cfg, jobs=jobs, raw=(table, schema))


def cmd_cv(args) -> None:
    cp = _read_config(args.config)
    cfg = _train_config(cp, "cv", args)
    folds = args.folds if args.folds is not None else int(cp.get("cv", "folds", fallback="5"))
    jobs = args.jobs if args.jobs is not None else int(cp.get("cv", "jobs", fallback="1"))
    schema, table = _load_labeled(args)
    out = _out_dir(args)

    if cp.has_section("sweep"):
        grid = {}
        for key, raw in cp.items("sweep"):
            if key not in _TRAIN_FIELDS:
                raise UsageError(f"[sweep] {key} is not a training option")
            sep = ";" if isinstance(_TRAIN_FIELDS[key].default, tuple) else ","
            grid[key] = [_coerce(key, v) for v in raw.split(sep) if v.strip()]
        rows, best = [], None
        for combo, c in sweep_grid(cfg, grid):
            _, res = _cv_prepared(table, schema, c, folds, jobs)
            score = float(np.mean([r.best_val_loss for r in res.reports]))
            rows.append((combo, score))
            if best is None or score < best[0]:
                best = (score, c)
        with open(out / "sweep.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            keys = sorted(grid)
            w.writerow(keys + ["mean_val_loss"])
            for combo, score in rows:
                w.writerow([",".join(map(str, combo[k])) if isinstance(combo[k], tuple) else combo[k]
                            for k in keys] + [repr(score)])
        cfg = best[1]

    ds, res = _cv_prepared(table, schema, cfg, folds, jobs)
    write_folds_csv(kfold_split(ds.E, folds, seed=cfg.seed), out / "folds.csv")
    with open(out / "cv_folds.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fold", "cause", "horizon", "metric", "value", "n"])
        for (f, rep) in res.folds:
            for k, lab, m, v in rep.rows():
                w.writerow([f, k, lab, m, repr(float(v)), rep.n])
    with open(out / "cv_aggregate.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cause", "horizon", "metric", "mean", "std", "n_folds"])
        for k, lab, m, mean, std, nf in res.aggregate_rows():
            w.writerow([k, lab, m, repr(mean), repr(std), nf])
    for k, lab, m, mean, std, nf in res.aggregate_rows():
        print(f"cause {k} {lab} {m}: {mean:.3f} +/- {std:.3f}")


def _load_checkpoint(args):
    _need(args, "checkpoint")
    path = Path(args.checkpoint)
    if not path.is_file():
        raise UsageError(f"checkpoint not found: {path}")
    params, baseline, plan, extra = checkpoint.load(path)
    if plan is None:
        raise UsageError(f"{path}: checkpoint carries no preprocessing plan")
    return params, baseline, plan, extra


def _apply_checked(plan, table, K):
    missing = [c for c in plan.input_columns if c not in table.columns]
    if missing:
        raise UsageError(f"data is missing columns required by the checkpoint: {', '.join(missing)}")
    return apply_preprocess(plan, table, K=K)


def _schema_for_predict(args, extra):
    if getattr(args, "schema", None):
        return load_schema(args.schema)
    return Schema(extra.get("time_col", "time"), extra.get("event_col", "event"), extra.get("num_risks", 1))


def cmd_predict(args) -> None:
    params, baseline, plan, extra = _load_checkpoint(args)
    _need(args, "data", "times")
    try:
        times = np.array(sorted(float(t) for t in args.times.split(",") if t.strip()))
    except ValueError:
        raise UsageError(f"bad --times value {args.times!r}") from None
    table = load_csv(args.data, _schema_for_predict(args, extra), require_labels=False)
    ds = _apply_checked(plan, table, params.K)
    out = _out_dir(args)
    eta = nam.forward(params, ds.X, mode="eval").eta
    pred = predict_cif(baseline, eta, times)
    pred.to_csv(out / "cif.csv")
    if pred.meta["n_beyond_range"]:
        logger.warning("%d requested time(s) lie beyond the last training time; last baseline value "
                       "carried forward", pred.meta["n_beyond_range"])


def cmd_evaluate(args) -> None:
    params, baseline, plan, _ = _load_checkpoint(args)
    schema, table = _load_labeled(args)
    ds = _apply_checked(plan, table, params.K)
    out = _out_dir(args)
    G = fit_censoring_km(ds.T, ds.E)
    grid = np.unique(ds.T[ds.E > 0])
    eta = nam.forward(params, ds.X, mode="eval").eta
    report = evaluate(predict_cif(baseline, eta, grid), ds.T, ds.E, G, K=params.K)
    report.to_csv(out / "metrics.csv")
    _write_json(out / "metrics.json", report.to_dict())


def cmd_explain(args) -> None:
    params, _, plan, extra = _load_checkpoint(args)
    cp = _read_config(args.config)
    _need(args, "data")
    table = load_csv(args.data, _schema_for_predict(args, extra), require_labels=False)
    ds = _apply_checked(plan, table, params.K)
    out = _out_dir(args)
    grid_size = args.grid_size or int(cp.get("explain", "grid_size", fallback="100"))
    seed = args.seed if args.seed is not None else int(cp.get("explain", "seed", fallback="0"))
    table_imp = interpret.importance(params, ds)
    table_imp.to_csv(out / "importance.csv")
    curves = interpret.shape_curves(params, ds, plan=plan, grid_size=grid_size)
    interpret.write_shape_csv(curves, out / "shape.csv")
    for k in range(1, params.K + 1):
        chosen = interpret.select_features(table_imp, k, top=20, show=10, seed=seed + k)
        sel = [c for c in curves if c.risk == k and c.feature in chosen]
        sel.sort(key=lambda c: chosen.index(c.feature))
        interpret.render_shape_svg(sel, out / f"shape_risk{k}.svg")
        top = table_imp.ranking(k)[:20]
        interpret.render_importance_svg(table_imp, out / f"importance_risk{k}.svg", risk=k, features=top)


def cmd_simulate(args) -> None:
    cp = _read_config(args.config)
    sec = cp["simulate"] if cp.has_section("simulate") else {}
    spec = SynthSpec(
        n=args.n if args.n is not None else int(sec.get("n", "4000")),
        p=int(sec.get("p", "3")),
        censor_rate=args.censor_rate if args.censor_rate is not None else float(sec.get("censor_rate", "0.3")),
        pi=float(sec.get("pi", "0.6")),
        seed=args.seed if args.seed is not None else int(sec.get("seed", "0")),
    )
    out = _out_dir(args)
    ds, truth = generate(spec)
    ds.to_csv(out / "data.csv")
    truth.to_csv(out / "truth.csv")
    (out / "schema.ini").write_text("[schema]\ntime_col = time\nevent_col = event\nnum_risks = 2\n")


COMMANDS = {
    "train": cmd_train,
    "cv": cmd_cv,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "explain": cmd_explain,
    "simulate": cmd_simulate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nafg", description="Neural additive Fine-Gray competing-risks model")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config")
        p.add_argument("--data")
        p.add_argument("--schema")
        p.add_argument("--out")
        p.add_argument("--seed", type=int)
        p.add_argument("--folds", type=int)
        p.add_argument("--jobs", type=int)
        p.add_argument("--times")
        p.add_argument("--grid-size", type=int)
        p.add_argument("--checkpoint")
        p.add_argument("--n", type=int)
        p.add_argument("--censor-rate", type=float)
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr, force=True)
    try:
        COMMANDS[args.command](args)
    except (UsageError, DataError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
