"""Plain matrix factorization: y_hat = p_u . q_i under Frobenius penalties on P and Q."""

from collections.abc import Sequence
from dataclasses import dataclass
from typing import ClassVar

import numpy as np

from visualrec.models.base import (
    Batch,
    ForwardTrace,
    ModelDims,
    ModelKind,
    ModelParams,
    RatingBias,
    Regularization,
)
from visualrec.numeric.core import FloatArray, IndexArray, dot


@dataclass(eq=False)
class MFParams(ModelParams):
    kind: ClassVar[ModelKind] = ModelKind.MF
    uses_features: ClassVar[bool] = False

    P: FloatArray
    Q: FloatArray
    bias: RatingBias | None = None

    @property
    def n_users(self) -> int:
        return self.P.shape[0]

    @property
    def n_items(self) -> int:
        return self.Q.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.P.shape[1]

    @property
    def dims(self) -> ModelDims:
        k = self.latent_dim
        return ModelDims(
            latent_dim=k, mf_latent_dim=k, visual_dim=0, dim_f=0, use_bias=self.bias is not None
        )

    def _tensors(self) -> list[tuple[str, FloatArray]]:
        return [("P", self.P), ("Q", self.Q)]

    def _forward(
        self, users: IndexArray, items: IndexArray, feature_rows: FloatArray | None
    ) -> tuple[FloatArray, ForwardTrace]:
        return dot(self.P[users], self.Q[items]), ForwardTrace(users=users, items=items)

    def _backward(self, trace: ForwardTrace, upstream: FloatArray, grad: "MFParams") -> None:
        g = upstream[:, None]
        np.add.at(grad.P, trace.users, g * self.Q[trace.items])
        np.add.at(grad.Q, trace.items, g * self.P[trace.users])


def mf_predict(params: MFParams, u: int, i: int) -> float:
    return float(params.predict([u], [i])[0])


def mf_loss(
    params: MFParams,
    batch: Batch | Sequence[tuple[int, int, float]],
    lambda_u: float,
    lambda_v: float,
) -> float:
    return params.loss(batch, reg=Regularization(lambda_u=lambda_u, lambda_v=lambda_v))


def mf_gradient(
    params: MFParams,
    batch: Batch | Sequence[tuple[int, int, float]],
    lambda_u: float,
    lambda_v: float,
) -> MFParams:
    return params.gradient(batch, reg=Regularization(lambda_u=lambda_u, lambda_v=lambda_v))
