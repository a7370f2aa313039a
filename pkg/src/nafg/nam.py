"""Neural additive network with per-(feature, risk) normalized projections.

Every feature ``x_i`` goes through its own small tanh MLP (a FeatureNet)
producing ``h_i`` in R^d. Each risk ``k`` reads ``h_i`` through a projection
``w_ik`` normalized to unit length, and the per-risk score is the sum over
features::

    g_ik = (w_ik / (||w_ik|| + eps)) . h_i
    eta_k(x) = sum_i g_ik

All FeatureNets share the same layer widths, so the parameters of layer
``l`` for every feature are stacked into one array of shape
``(p, d_l, d_{l-1})`` and a batch is processed in one pass.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

PROJ_EPS = 1e-12
BN_EPS = 1e-5
BN_MOMENTUM = 0.9


@dataclass
class ModelParams:
    """Trainable arrays plus architecture hyperparameters.

    ``arrays`` maps ``"W{l}"`` -> ``(p, d_{l+1}, d_l)``, ``"b{l}"`` ->
    ``(p, d_{l+1})`` and ``"proj"`` -> ``(p, K, d)``. Batch-norm running
    statistics live in ``bn_stats`` and are not trained.
    """

    p: int
    K: int
    widths: tuple
    arrays: dict
    dropout: float = 0.0
    feature_dropout: float = 0.0
    batch_norm: bool = False
    bn_stats: dict = field(default_factory=dict)

    @property
    def n_layers(self) -> int:
        return len(self.widths)

    @property
    def d(self) -> int:
        return self.widths[-1]

    def keys(self):
        return list(self.arrays)

    def copy(self) -> "ModelParams":
        return copy.deepcopy(self)

    def norm2(self) -> float:
        """Squared L2 norm of every trainable entry."""
        return float(sum(np.sum(a * a) for a in self.arrays.values()))

    def normalized_projections(self) -> np.ndarray:
        w = self.arrays["proj"]
        return w / (np.linalg.norm(w, axis=-1, keepdims=True) + PROJ_EPS)


def init_params(p: int, K: int, widths=(32, 32), seed: int | np.random.Generator = 0,
                dropout: float = 0.0, feature_dropout: float = 0.0,
                batch_norm: bool = False) -> ModelParams:
    """Glorot-uniform weights, zero biases, Glorot-uniform projections."""
    widths = tuple(int(w) for w in widths)
    if not widths or min(widths) < 1:
        raise ValueError("widths must be a nonempty sequence of positive ints")
    if p < 1 or K < 1:
        raise ValueError("need p >= 1 and K >= 1")
    if not (0 <= dropout < 1 and 0 <= feature_dropout < 1):
        raise ValueError("dropout rates must lie in [0, 1)")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    arrays = {}
    fan_in = 1
    for l, fan_out in enumerate(widths):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        arrays[f"W{l}"] = rng.uniform(-lim, lim, size=(p, fan_out, fan_in))
        arrays[f"b{l}"] = np.zeros((p, fan_out))
        fan_in = fan_out
    d = widths[-1]
    lim = np.sqrt(6.0 / (d + 1))
    arrays["proj"] = rng.uniform(-lim, lim, size=(p, K, d))
    bn_stats = {}
    if batch_norm:
        for l, w in enumerate(widths):
            bn_stats[f"mean{l}"] = np.zeros((p, w))
            bn_stats[f"var{l}"] = np.ones((p, w))
    return ModelParams(p=p, K=K, widths=widths, arrays=arrays, dropout=float(dropout),
                       feature_dropout=float(feature_dropout), batch_norm=bool(batch_norm),
                       bn_stats=bn_stats)


@dataclass
class ForwardTrace:
    """Everything backward needs, plus the per-feature contributions.

    ``g`` has shape ``(B, p, K)`` and ``eta`` is ``g.sum(axis=1)``.
    """

    mode: str
    inputs: list            # z^(l-1) fed to layer l, each (B, p, d_{l-1})
    pre: list               # linear outputs a^(l), (B, p, d_l)
    normed: list            # batch-normalized a^(l) (or None)
    bn_inv_std: list
    bn_batch: list          # (mean, var) of the batch per layer, train mode only
    acts: list              # tanh outputs z^(l), before dropout
    masks: list             # per-layer dropout masks (already scaled) or None
    h: np.ndarray           # (B, p, d)
    wt: np.ndarray          # normalized projections (p, K, d)
    fmask: np.ndarray | None  # (B, p) feature-dropout mask, scaled
    g: np.ndarray
    eta: np.ndarray


def _check_finite(a, what):
    if not np.all(np.isfinite(a)):
        raise FloatingPointError(f"non-finite value in {what}")


def forward(params: ModelParams, X, mode: str = "eval", rng: np.random.Generator | None = None,
            masks: dict | None = None) -> ForwardTrace:
    """Evaluate the network on a batch ``X`` of shape ``(B, p)`` (or a single ``p``-vector).

    In ``"train"`` mode inverted dropout is applied after every layer and
    whole-feature dropout to the contributions, drawing masks from ``rng``
    unless ``masks`` (``{"layers": [...], "feature": ...}``) are supplied.
    Batch norm uses batch statistics in train mode and the running ones in
    eval mode.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != params.p:
        raise ValueError(f"expected {params.p} features, got {X.shape[1]}")
    _check_finite(X, "input")
    train = mode == "train"
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    B = X.shape[0]
    if train and masks is None and (params.dropout > 0 or params.feature_dropout > 0) and rng is None:
        raise ValueError("train mode with dropout needs an rng or explicit masks")

    inputs, pre, normed, inv_stds, batch_stats, acts, layer_masks = [], [], [], [], [], [], []
    z = X[:, :, None]
    for l in range(params.n_layers):
        W = params.arrays[f"W{l}"]
        b = params.arrays[f"b{l}"]
        inputs.append(z)
        a = np.einsum("pij,bpj->bpi", W, z) + b
        pre.append(a)
        if params.batch_norm:
            if train:
                mu = a.mean(axis=0)
                var = a.var(axis=0)
                batch_stats.append((mu, var))
            else:
                mu = params.bn_stats[f"mean{l}"]
                var = params.bn_stats[f"var{l}"]
                batch_stats.append(None)
            inv_std = 1.0 / np.sqrt(var + BN_EPS)
            a_hat = (a - mu) * inv_std
            normed.append(a_hat)
            inv_stds.append(inv_std)
        else:
            a_hat = a
            normed.append(None)
            inv_stds.append(None)
            batch_stats.append(None)
        z = np.tanh(a_hat)
        _check_finite(z, f"layer {l}")
        acts.append(z)
        mask = None
        if train:
            if masks is not None:
                mask = masks["layers"][l]
            elif params.dropout > 0:
                keep = rng.random(z.shape) >= params.dropout
                mask = keep / (1.0 - params.dropout)
        layer_masks.append(mask)
        if mask is not None:
            z = z * mask
    h = z
    wt = params.normalized_projections()
    g = np.einsum("pkd,bpd->bpk", wt, h)
    fmask = None
    if train:
        if masks is not None:
            fmask = masks.get("feature")
        elif params.feature_dropout > 0:
            keep = rng.random((B, params.p)) >= params.feature_dropout
            fmask = keep / (1.0 - params.feature_dropout)
    if fmask is not None:
        g = g * fmask[:, :, None]
    eta = g.sum(axis=1)
    return ForwardTrace(mode=mode, inputs=inputs, pre=pre, normed=normed, bn_inv_std=inv_stds,
                        bn_batch=batch_stats, acts=acts, masks=layer_masks, h=h, wt=wt,
                        fmask=fmask, g=g, eta=eta)


def trace_masks(trace: ForwardTrace) -> dict:
    """Masks used by a train-mode pass, reusable through ``forward(..., masks=)``."""
    return {"layers": list(trace.masks), "feature": trace.fmask}


def backward(params: ModelParams, trace: ForwardTrace, d_eta) -> dict:
    """Gradient of ``sum(d_eta * eta)`` with respect to every array in ``params``."""
    d_eta = np.asarray(d_eta, dtype=float)
    if d_eta.shape != trace.eta.shape:
        raise ValueError(f"upstream gradient has shape {d_eta.shape}, expected {trace.eta.shape}")
    grads = {}
    dg = np.broadcast_to(d_eta[:, None, :], trace.g.shape)
    if trace.fmask is not None:
        dg = dg * trace.fmask[:, :, None]

    # projection: g = wt . h with wt = w / (||w|| + eps)
    w = params.arrays["proj"]
    norm = np.linalg.norm(w, axis=-1, keepdims=True)
    denom = norm + PROJ_EPS
    d_wt = np.einsum("bpk,bpd->pkd", dg, trace.h)
    radial = np.sum(trace.wt * d_wt, axis=-1, keepdims=True)
    unit = np.divide(w, norm, out=np.zeros_like(w), where=norm > 0)
    grads["proj"] = d_wt / denom - radial * unit / denom

    dz = np.einsum("bpk,pkd->bpd", dg, trace.wt)
    for l in reversed(range(params.n_layers)):
        if trace.masks[l] is not None:
            dz = dz * trace.masks[l]
        z = trace.acts[l]
        da_hat = dz * (1.0 - z * z)
        if params.batch_norm:
            inv_std = trace.bn_inv_std[l]
            if trace.mode == "train":
                a_hat = trace.normed[l]
                B = a_hat.shape[0]
                da = inv_std / B * (B * da_hat - da_hat.sum(axis=0)
                                    - a_hat * np.sum(da_hat * a_hat, axis=0))
            else:
                da = da_hat * inv_std
        else:
            da = da_hat
        grads[f"W{l}"] = np.einsum("bpi,bpj->pij", da, trace.inputs[l])
        grads[f"b{l}"] = da.sum(axis=0)
        if l > 0:
            dz = np.einsum("pij,bpi->bpj", params.arrays[f"W{l}"], da)
    return grads


def update_bn_stats(params: ModelParams, trace: ForwardTrace) -> None:
    """Fold one train-mode batch's statistics into the running ones."""
    if not params.batch_norm or trace.mode != "train":
        return
    for l, stats in enumerate(trace.bn_batch):
        mu, var = stats
        B = trace.pre[l].shape[0]
        unbiased = var * B / (B - 1) if B > 1 else var
        params.bn_stats[f"mean{l}"] = BN_MOMENTUM * params.bn_stats[f"mean{l}"] + (1 - BN_MOMENTUM) * mu
        params.bn_stats[f"var{l}"] = BN_MOMENTUM * params.bn_stats[f"var{l}"] + (1 - BN_MOMENTUM) * unbiased


def featurenet_forward(params: ModelParams, i: int, x_i) -> np.ndarray:
    """Eval-mode representation ``h_i`` of feature ``i`` for scalar or 1-D ``x_i``."""
    x = np.atleast_1d(np.asarray(x_i, dtype=float))
    z = x[:, None]
    for l in range(params.n_layers):
        a = z @ params.arrays[f"W{l}"][i].T + params.arrays[f"b{l}"][i]
        if params.batch_norm:
            a = (a - params.bn_stats[f"mean{l}"][i]) / np.sqrt(params.bn_stats[f"var{l}"][i] + BN_EPS)
        z = np.tanh(a)
        _check_finite(z, f"layer {l} of feature {i}")
    return z if np.ndim(x_i) else z[0]


def project(params: ModelParams, i: int, k: int, h) -> np.ndarray:
    """Contribution ``g_ik`` of representation ``h`` to risk ``k`` (0-based ids)."""
    w = params.arrays["proj"][i, k]
    wt = w / (np.linalg.norm(w) + PROJ_EPS)
    return np.asarray(h) @ wt


def shape_value(params: ModelParams, i: int, k: int, x_i) -> np.ndarray:
    """Shape function ``s_ik(x_i)``: feature ``i``'s eval-mode contribution to risk ``k``.

    Evaluates the whole network with only column ``i`` populated so that
    the arithmetic is identical to :func:`forward`.
    """
    x = np.atleast_1d(np.asarray(x_i, dtype=float))
    X = np.zeros((x.size, params.p))
    X[:, i] = x
    g = forward(params, X, mode="eval").g[:, i, k]
    return g if np.ndim(x_i) else g[0]
