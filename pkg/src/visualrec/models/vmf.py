"""
Visual matrix factorization: MF plus a visual interaction theta_u . theta_i, where the item side
theta_i = E f_i is always computed from the raw feature through the learned kernel E.
"""

from collections.abc import Sequence
from dataclasses import dataclass
from typing import ClassVar

import numpy as np
from numpy.typing import ArrayLike

from visualrec.exceptions import DimensionMismatchError
from visualrec.models.base import (
    Batch,
    ForwardTrace,
    ModelDims,
    ModelKind,
    ModelParams,
    RatingBias,
    Regularization,
)
from visualrec.models.mf import MFParams
from visualrec.numeric.core import FloatArray, IndexArray, dot, matvec


@dataclass
class VMFTrace(ForwardTrace):
    theta_i: FloatArray | None = None


@dataclass(eq=False)
class VMFParams(ModelParams):
    kind: ClassVar[ModelKind] = ModelKind.VMF

    base: MFParams
    Theta_u: FloatArray
    E: FloatArray
    bias: RatingBias | None = None

    def __post_init__(self) -> None:
        if self.Theta_u.shape != (self.base.n_users, self.E.shape[0]):
            raise DimensionMismatchError(
                f"Theta_u {self.Theta_u.shape} does not match {self.base.n_users} users "
                f"and D={self.E.shape[0]}"
            )

    @property
    def n_users(self) -> int:
        return self.base.n_users

    @property
    def n_items(self) -> int:
        return self.base.n_items

    @property
    def dims(self) -> ModelDims:
        k = self.base.latent_dim
        return ModelDims(
            latent_dim=k,
            mf_latent_dim=k,
            visual_dim=self.E.shape[0],
            dim_f=self.E.shape[1],
            use_bias=self.bias is not None,
        )

    def _tensors(self) -> list[tuple[str, FloatArray]]:
        return [*self.base._tensors(), ("Theta_u", self.Theta_u), ("E", self.E)]

    def _forward(
        self, users: IndexArray, items: IndexArray, feature_rows: FloatArray | None
    ) -> tuple[FloatArray, ForwardTrace]:
        assert feature_rows is not None
        theta_i = matvec(self.E, feature_rows)
        preds = dot(self.base.P[users], self.base.Q[items]) + dot(self.Theta_u[users], theta_i)
        return preds, VMFTrace(users=users, items=items, feature_rows=feature_rows, theta_i=theta_i)

    def _backward(self, trace: ForwardTrace, upstream: FloatArray, grad: "VMFParams") -> None:
        if not isinstance(trace, VMFTrace) or trace.theta_i is None or trace.feature_rows is None:
            raise DimensionMismatchError("stale trace: not produced by a VMF forward pass")
        if trace.theta_i.shape[-1] != self.E.shape[0]:
            raise DimensionMismatchError(
                f"stale trace: visual width {trace.theta_i.shape[-1]} != D={self.E.shape[0]}"
            )
        self.base._backward(trace, upstream, grad.base)

        g = upstream[:, None]
        np.add.at(grad.Theta_u, trace.users, g * trace.theta_i)
        # d/dE of sum g * theta_u^T E f = sum g * theta_u f^T
        grad.E += (g * self.Theta_u[trace.users]).T @ trace.feature_rows


def vmf_predict(params: VMFParams, u: int, i: int, f_i: ArrayLike) -> float:
    return float(params.predict([u], [i], [f_i])[0])


def vmf_loss(
    params: VMFParams,
    batch: Batch | Sequence[tuple[int, int, float]],
    features: FloatArray,
    lambda_u: float,
    lambda_v: float,
    lambda_net: float = 0.0,
) -> float:
    reg = Regularization(lambda_u=lambda_u, lambda_v=lambda_v, lambda_net=lambda_net)
    return params.loss(batch, features, reg)


def vmf_gradient(
    params: VMFParams,
    batch: Batch | Sequence[tuple[int, int, float]],
    features: FloatArray,
    lambda_u: float,
    lambda_v: float,
    lambda_net: float = 0.0,
) -> VMFParams:
    reg = Regularization(lambda_u=lambda_u, lambda_v=lambda_v, lambda_net=lambda_net)
    return params.gradient(batch, features, reg)
