"""DeepSets baseline: encoder, mean pooling, sigmoid head, bagging.

f(X) = rho( mean_k phi(x_k) ) with phi and rho plain MLPs. Pooling sums
each pooled coordinate in sorted order, so the output is bitwise
invariant under point reordering. Bagging averages the probabilities of
independently seeded models.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import DataError, NumericError, ShapeError
from .data import LabeledDataset
from .nncore import (
    Array,
    MlpParams,
    OptimState,
    Rng,
    adam_step,
    as_f64,
    mlp_backward,
    mlp_forward,
)
from .nncore import mlp_init


@dataclass(frozen=True)
class DeepSetsConfig:
    phi_hidden: tuple[int, ...] = (64, 64)
    pooled_dim: int = 32
    rho_hidden: tuple[int, ...] = (32, 32)
    lr: float = 1e-3
    batch_points: int | None = 256   # None trains on whole clouds
    init_scale: float = 1.0


@dataclass
class DeepSetsModel:
    phi: MlpParams
    rho: MlpParams
    cfg: DeepSetsConfig

    def __post_init__(self):
        if self.phi.out_dim != self.rho.in_dim:
            raise ShapeError("pooled dim mismatch between phi and rho")

    def copy(self) -> "DeepSetsModel":
        return DeepSetsModel(self.phi.copy(), self.rho.copy(), self.cfg)


def init_deepsets(dim: int, cfg: DeepSetsConfig, rng: Rng) -> DeepSetsModel:
    phi = mlp_init((dim, *cfg.phi_hidden, cfg.pooled_dim), rng.spawn(1),
                   scale=cfg.init_scale)
    rho = mlp_init((cfg.pooled_dim, *cfg.rho_hidden, 1), rng.spawn(2),
                   scale=cfg.init_scale)
    return DeepSetsModel(phi, rho, cfg)


def _pool_sorted(features: Array) -> Array:
    # column-wise sorted sums: same result for any row (point) order
    return np.sort(features, axis=0).sum(axis=0) / features.shape[0]


def ds_logit(model: DeepSetsModel, points: Array) -> float:
    pts = np.atleast_2d(as_f64(points))
    if pts.size == 0:
        raise ShapeError("empty cloud")
    feats, _ = mlp_forward(model.phi, pts)
    pooled = _pool_sorted(feats)
    out, _ = mlp_forward(model.rho, pooled[None, :])
    return float(out[0, 0])


def ds_forward(model: DeepSetsModel, points) -> float:
    """Class probability of one cloud; bitwise permutation invariant."""
    pts = points.points if hasattr(points, "points") else points
    return float(expit(ds_logit(model, pts)))


def ds_bagging(models, points) -> float:
    """Arithmetic mean of member probabilities."""
    if not models:
        raise ValueError("need at least one model")
    return float(np.mean([ds_forward(m, points) for m in models]))


def _bce(logits: Array, y: Array) -> float:
    return float(np.mean(np.maximum(logits, 0.0) - logits * y
                         + np.log1p(np.exp(-np.abs(logits)))))


def ds_train(
    train: LabeledDataset,
    val: LabeledDataset,
    epochs: int,
    cfg: DeepSetsConfig,
    seed: int,
) -> tuple[DeepSetsModel, list[dict]]:
    """BCE training with one full-batch step per epoch over all clouds.

    Per epoch each cloud contributes a fresh point subsample of size
    batch_points (whole cloud if smaller or None). Keeps and returns the
    best-validation-accuracy snapshot; deterministic for a fixed seed.
    """
    if epochs < 0:
        raise ValueError("epochs must be >= 0")
    for name, ds in (("train", train), ("val", val)):
        if not ds.clouds:
            raise DataError(f"{name} set is empty")
    if len(set(train.labels.values())) < 2:
        raise DataError("training set must contain both classes")

    rng = Rng(seed)
    model = init_deepsets(train.dim, cfg, rng.spawn(0))
    state_phi = OptimState(lr=cfg.lr)
    state_rho = OptimState(lr=cfg.lr)
    batch_rng = rng.spawn(1)
    ids = sorted(train.ids)
    y = np.array([train.labels[i] for i in ids], dtype=np.float64)
    cloud_pts = {c.id: c.points for c in train.clouds}

    def val_accuracy() -> float:
        preds = np.array([ds_forward(model, c.points) for c in val.clouds])
        ys = np.array([val.labels[c.id] for c in val.clouds])
        return float(np.mean((preds > 0.5) == (ys == 1)))

    history: list[dict] = []
    best_model = model.copy()
    best_acc = -1.0
    for epoch in range(epochs):
        batches = []
        counts = []
        for cid in ids:
            pts = cloud_pts[cid]
            if cfg.batch_points is not None and pts.shape[0] > cfg.batch_points:
                idx = batch_rng.integers(0, pts.shape[0], size=cfg.batch_points)
                pts = pts[idx]
            batches.append(pts)
            counts.append(pts.shape[0])
        stacked = np.vstack(batches)
        feats, phi_cache = mlp_forward(model.phi, stacked)
        # segment means per cloud (plain means; training needs no sorted sums)
        pooled = np.empty((len(ids), model.cfg.pooled_dim))
        offsets = np.cumsum([0] + counts)
        for i in range(len(ids)):
            pooled[i] = feats[offsets[i]:offsets[i + 1]].mean(axis=0)
        logits_mat, rho_cache = mlp_forward(model.rho, pooled)
        logits = logits_mat[:, 0]
        loss = _bce(logits, y)
        if not np.isfinite(loss):
            raise NumericError(f"non-finite DeepSets loss at epoch {epoch}")
        resid = (expit(logits) - y)[:, None] / y.size
        rho_grads, d_pooled = mlp_backward(model.rho, rho_cache, resid)
        upstream = np.empty_like(feats)
        for i in range(len(ids)):
            upstream[offsets[i]:offsets[i + 1]] = d_pooled[i] / counts[i]
        phi_grads, _ = mlp_backward(model.phi, phi_cache, upstream)

        new_rho, state_rho = adam_step(model.rho.to_flat(), rho_grads, state_rho)
        new_phi, state_phi = adam_step(model.phi.to_flat(), phi_grads, state_phi)
        model.rho = model.rho.from_flat(new_rho)
        model.phi = model.phi.from_flat(new_phi)

        acc = val_accuracy()
        history.append({"epoch": epoch, "loss": loss, "val_accuracy": acc})
        if acc > best_acc:
            best_acc = acc
            best_model = model.copy()
    return (best_model if epochs > 0 else model), history
