"""
Mini-batch training shared by all four models.

Each epoch visits the training triples in a seeded random order. A batch B steps along the mean
of its squared-error gradients plus 1/N of the regularizer gradient, i.e. a stochastic estimate of
the gradient of the per-example objective that `objective` reports. After every epoch the model
is scored on the validation split; training stops after `patience` epochs without improvement and
returns the best epoch's parameters.
"""

import math
import time
from logging import getLogger

import numpy as np
from pydantic import BaseModel, Field

from visualrec.data.dataset import RatingDataset, SplitDataset
from visualrec.data.features import VisualFeatureStore
from visualrec.evaluation.metrics import rmse
from visualrec.exceptions import ConfigError, DivergenceError, NonFiniteError
from visualrec.models.base import Batch, ModelKind, ModelParams, Regularization
from visualrec.models.factory import init_params
from visualrec.models.fused import fuse_pretrained
from visualrec.models.mf import MFParams
from visualrec.models.vmlp import VMLPParams
from visualrec.numeric.core import FloatArray, make_rng
from visualrec.training.checkpoint import load_checkpoint
from visualrec.training.config import TrainConfig
from visualrec.training.optimizers import make_optimizer


logger = getLogger(__name__)


class EpochRecord(BaseModel):
    epoch: int = Field(ge=1)
    train_loss: float
    valid_rmse: float


class TrainReport(BaseModel):
    model_kind: str
    config: TrainConfig
    n_parameters: int
    n_train: int
    n_valid: int
    epochs: list[EpochRecord]
    best_epoch: int
    best_valid_rmse: float
    stopped_early: bool
    wall_time: float = Field(description="seconds; excluded from determinism checks")


def objective(
    params: ModelParams,
    train: Batch,
    features: FloatArray | None,
    reg: Regularization,
) -> float:
    """Per-example objective: mean 1/2 squared error plus the regularizer divided by N."""
    n = len(train)
    return (params.squared_error(train, features) + params.regularizer(reg)) / n


def _feature_matrix(
    config: TrainConfig, split: SplitDataset, features: VisualFeatureStore | None
) -> FloatArray | None:
    if config.model_kind is ModelKind.MF:
        return None
    if features is None:
        raise ConfigError(f"{config.model_kind.label} requires a visual feature file")
    covered = len(features.coverage(split.item_index))
    n_items = len(split.item_index)
    logger.info("Visual features cover %s of %s items (F=%s)", covered, n_items, features.dim_f)
    return features.aligned(split.item_index)


def _initial_params(
    config: TrainConfig, split: SplitDataset, dim_f: int, rng: np.random.Generator
) -> ModelParams:
    n_users, n_items = len(split.user_index), len(split.item_index)
    if config.warm_start_mf is None or config.warm_start_vmlp is None:
        return init_params(
            config.model_kind, n_users, n_items, config.model_dims(dim_f), rng, config.init_std
        )

    mf = load_checkpoint(config.warm_start_mf, ModelKind.MF)
    vmlp = load_checkpoint(config.warm_start_vmlp, ModelKind.VMLP)
    assert isinstance(mf, MFParams) and isinstance(vmlp, VMLPParams)
    for half in (mf, vmlp):
        if (half.n_users, half.n_items) != (n_users, n_items):
            raise ConfigError(
                f"warm-start {half.kind.label} covers {half.n_users} users/{half.n_items} items, "
                f"data has {n_users}/{n_items}"
            )
    if vmlp.dims.dim_f != dim_f:
        raise ConfigError(f"warm-start VMLP expects F={vmlp.dims.dim_f}, features have F={dim_f}")
    logger.info("Warm-starting MF-VMLP with alpha=%s", config.warm_start_alpha)
    return fuse_pretrained(mf, vmlp, config.warm_start_alpha)


def train_step(
    params: ModelParams,
    batch: Batch,
    features: FloatArray | None,
    reg: Regularization,
    n_train: int,
    *,
    threshold: float = math.inf,
    epoch: int = 1,
    batch_no: int = 1,
) -> ModelParams:
    """Gradient of one mini-batch step; raises DivergenceError on a runaway batch loss."""
    try:
        rows = params.feature_rows(features, batch.items)
        preds, trace = params.forward(batch.users, batch.items, rows)
    except NonFiniteError as e:
        message = f"non-finite predictions in epoch {epoch}, batch {batch_no}"
        raise DivergenceError(message, epoch=epoch, batch=batch_no) from e
    residuals = batch.ratings - preds
    batch_loss = 0.5 * float(np.mean(residuals * residuals))
    if not np.isfinite(batch_loss) or batch_loss > threshold:
        raise DivergenceError(
            f"training diverged in epoch {epoch}, batch {batch_no} (loss {batch_loss:g})",
            epoch=epoch,
            batch=batch_no,
        )
    grad = params.backward(trace, residuals / len(batch))
    params.add_regularizer_gradient(grad, reg, 1.0 / n_train)
    return grad


def train(
    config: TrainConfig,
    split: SplitDataset,
    features: VisualFeatureStore | None = None,
) -> tuple[ModelParams, TrainReport]:
    start = time.perf_counter()
    if len(split.train) == 0:
        raise ConfigError("the training split is empty")
    valid: RatingDataset = split.valid
    if len(valid) == 0:
        logger.warning("The validation split is empty; selecting epochs on the training split")
        valid = split.train

    feature_matrix = _feature_matrix(config, split, features)
    dim_f = 0 if feature_matrix is None else feature_matrix.shape[1]

    init_seed, shuffle_seed = np.random.SeedSequence(config.seed).spawn(2)
    params = _initial_params(config, split, dim_f, make_rng(init_seed))
    shuffle_rng = make_rng(shuffle_seed)
    optimizer = make_optimizer(config)
    reg = config.regularization

    train_batch = Batch.of(split.train)
    n = len(train_batch)
    logger.info(
        "Training %s on %s ratings (%s validation), %s parameters",
        config.model_kind.label,
        n,
        len(valid),
        params.n_parameters,
    )

    records: list[EpochRecord] = []
    best_params = params.copy()
    best_rmse = float("inf")
    best_epoch = 0
    stale = 0
    stopped_early = False
    for epoch in range(1, config.max_epochs + 1):
        order = shuffle_rng.permutation(n)
        for batch_no, lo in enumerate(range(0, n, config.batch_size), start=1):
            batch = train_batch.take(order[lo : lo + config.batch_size])
            grad = train_step(
                params,
                batch,
                feature_matrix,
                reg,
                n,
                threshold=config.divergence_threshold,
                epoch=epoch,
                batch_no=batch_no,
            )
            optimizer.step(params, grad)

        try:
            train_loss = objective(params, train_batch, feature_matrix, reg)
            valid_rmse = rmse(params, valid, feature_matrix, config.clamp_eval)
        except NonFiniteError as e:
            raise DivergenceError(f"training diverged in epoch {epoch}", epoch=epoch) from e
        if not np.isfinite(train_loss) or train_loss > config.divergence_threshold:
            raise DivergenceError(
                f"training diverged in epoch {epoch} (loss {train_loss:g})", epoch=epoch
            )

        records.append(EpochRecord(epoch=epoch, train_loss=train_loss, valid_rmse=valid_rmse))
        logger.info("epoch=%d train_loss=%.6f valid_rmse=%.6f", epoch, train_loss, valid_rmse)

        if valid_rmse < best_rmse:
            best_rmse, best_epoch, stale = valid_rmse, epoch, 0
            best_params = params.copy()
        else:
            stale += 1
            if stale >= config.patience:
                stopped_early = True
                logger.info("No validation improvement for %s epochs, stopping", stale)
                break

    report = TrainReport(
        model_kind=config.model_kind.label,
        config=config,
        n_parameters=params.n_parameters,
        n_train=n,
        n_valid=len(valid),
        epochs=records,
        best_epoch=best_epoch,
        best_valid_rmse=best_rmse,
        stopped_early=stopped_early,
        wall_time=time.perf_counter() - start,
    )
    logger.info("Best epoch %s with valid_rmse=%.6f", best_epoch, best_rmse)
    return best_params, report
