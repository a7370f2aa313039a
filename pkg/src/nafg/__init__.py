"""Interpretable neural additive Fine-Gray model for competing risks."""

from .finegray import BaselineCif, CifPrediction, FgLossConfig, fg_loss, fg_loss_grad, fit_baseline, predict_cif
from .ingest import SurvivalDataset, apply_preprocess, fit_preprocess, kfold_split, load_csv, load_schema
from .interpret import importance, shape_curves
from .metrics import brier, evaluate, td_auc, td_ci
from .nam import ModelParams, backward, forward, init_params, shape_value
from .survival import class_weights, fit_censoring_km, ipcw_weight, subdist_risk_set, time_quantile_grid
from .synth import SynthSpec, generate
from .train import TrainConfig, cross_validate, train

__version__ = "0.1.0"
