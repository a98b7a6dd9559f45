"""RMSE on held-out ratings and the side-by-side model comparison."""

from collections.abc import Mapping
from logging import getLogger
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, Field, model_validator

from visualrec.data.dataset import RatingDataset
from visualrec.data.features import VisualFeatureStore
from visualrec.exceptions import ConfigError
from visualrec.models.base import Batch, ModelKind, ModelParams
from visualrec.numeric.core import FloatArray, as_array


logger = getLogger(__name__)

RATING_MIN = 1.0
RATING_MAX = 5.0

COLUMNS = [kind.label for kind in ModelKind]


def clamp(predictions: ArrayLike, low: float = RATING_MIN, high: float = RATING_MAX) -> FloatArray:
    return np.clip(as_array(predictions), low, high)


def squared_error_sum(targets: ArrayLike, predictions: ArrayLike) -> float:
    t, p = as_array(targets), as_array(predictions)
    if t.shape != p.shape:
        raise ValueError(f"{t.shape} targets against {p.shape} predictions")
    residuals = t - p
    return float(np.sum(residuals * residuals))


def rmse_from_predictions(targets: ArrayLike, predictions: ArrayLike) -> float:
    t = as_array(targets)
    if t.size == 0:
        raise ConfigError("cannot compute RMSE over an empty test set")
    return float(np.sqrt(squared_error_sum(t, predictions) / t.size))


def _feature_matrix(
    test: RatingDataset, features: VisualFeatureStore | FloatArray | None
) -> FloatArray | None:
    if isinstance(features, VisualFeatureStore):
        return features.aligned(test.item_index)
    return features


def predict_dataset(
    params: ModelParams,
    test: RatingDataset,
    features: VisualFeatureStore | FloatArray | None = None,
    clamp_predictions: bool = False,
) -> FloatArray:
    """
    Predictions for every triple of `test`. Items without a feature vector use the zero vector,
    as in training.
    """
    preds = params.predict_batch(Batch.of(test), _feature_matrix(test, features))
    return clamp(preds) if clamp_predictions else preds


def rmse(
    params: ModelParams,
    test: RatingDataset,
    features: VisualFeatureStore | FloatArray | None = None,
    clamp_predictions: bool = False,
) -> float:
    if len(test) == 0:
        raise ConfigError("cannot compute RMSE over an empty test set")
    preds = predict_dataset(params, test, features, clamp_predictions)
    return rmse_from_predictions(test.ratings, preds)


class EvalReport(BaseModel):
    """RMSE per model (keyed by model label) and the relative improvement over a baseline."""

    dataset: str = ""
    rmse: dict[str, float]
    baseline: str
    improvement_pct: dict[str, float]
    n_test: int | None = Field(default=None, ge=1)
    clamped: bool = False

    @model_validator(mode="after")
    def check_baseline(self) -> "EvalReport":
        if self.baseline not in self.rmse:
            raise ValueError(f"baseline {self.baseline} has no RMSE")
        return self

    @property
    def headline(self) -> str:
        """The most elaborate model present, in the order MF < VMF < VMLP < MF-VMLP."""
        return [label for label in COLUMNS if label in self.rmse][-1]


def improvement_pct(baseline_rmse: float, model_rmse: float) -> float:
    return (baseline_rmse - model_rmse) / baseline_rmse * 100.0


def compare(
    reports: Mapping[ModelKind, float],
    baseline: ModelKind,
    n_test: int | None = None,
    dataset: str = "",
    clamped: bool = False,
) -> EvalReport:
    if baseline not in reports:
        raise ConfigError(f"baseline {baseline.label} is not among the evaluated models")
    base = reports[baseline]
    if base <= 0:
        raise ConfigError(f"baseline RMSE must be positive, got {base}")
    ordered = sorted(reports)
    return EvalReport(
        dataset=dataset,
        rmse={kind.label: float(reports[kind]) for kind in ordered},
        baseline=baseline.label,
        improvement_pct={kind.label: improvement_pct(base, reports[kind]) for kind in ordered},
        n_test=n_test,
        clamped=clamped,
    )


def format_table(report: EvalReport) -> str:
    """
    Plain-text table: Dataset | MF | VMF | VMLP | MF-VMLP | improvement. RMSE is shown to four
    decimals, the improvement of the headline model over the baseline to one.
    """
    header = ["Dataset", *COLUMNS, "improvement"]
    row = [report.dataset or "-"]
    row.extend(f"{report.rmse[label]:.4f}" if label in report.rmse else "-" for label in COLUMNS)
    row.append(f"{report.improvement_pct[report.headline]:.1f}%")

    widths = [max(len(h), len(c)) for h, c in zip(header, row, strict=True)]
    lines = [
        " | ".join(h.ljust(w) for h, w in zip(header, widths, strict=True)),
        "-+-".join("-" * w for w in widths),
        " | ".join(c.ljust(w) for c, w in zip(row, widths, strict=True)),
    ]
    return "\n".join(line.rstrip() for line in lines)


def write_eval_json(report: EvalReport, path: Path | str) -> None:
    Path(path).write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")
    logger.info("Wrote evaluation report to %s", path)
