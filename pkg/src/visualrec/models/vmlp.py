"""
Visual MLP. The item pathway concatenates q_i with the projected image E_v f_i into z_i, the
tower input is z_1 = [p_u, z_i], and y_hat = h . phi_L with an identity output activation.
"""

from dataclasses import dataclass, field
from typing import ClassVar

import numpy as np
from numpy.typing import ArrayLike

from visualrec.exceptions import DimensionMismatchError
from visualrec.models.base import ForwardTrace, ModelDims, ModelKind, ModelParams, RatingBias
from visualrec.models.tower import MLPTower
from visualrec.numeric.core import FloatArray, IndexArray, concat, matvec


@dataclass
class TowerTrace(ForwardTrace):
    activations: list[FloatArray] = field(default_factory=list)


@dataclass(eq=False)
class VMLPParams(ModelParams):
    kind: ClassVar[ModelKind] = ModelKind.VMLP

    P_v: FloatArray
    Q_v: FloatArray
    E_v: FloatArray
    tower: MLPTower
    bias: RatingBias | None = None

    def __post_init__(self) -> None:
        expected = 2 * self.latent_dim + self.E_v.shape[0]
        if self.tower.input_width != expected:
            raise DimensionMismatchError(
                f"tower input width {self.tower.input_width}, embeddings give {expected}"
            )

    @property
    def n_users(self) -> int:
        return self.P_v.shape[0]

    @property
    def n_items(self) -> int:
        return self.Q_v.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.P_v.shape[1]

    @property
    def dims(self) -> ModelDims:
        return ModelDims(
            latent_dim=self.latent_dim,
            mf_latent_dim=self.latent_dim,
            visual_dim=self.E_v.shape[0],
            dim_f=self.E_v.shape[1],
            tower_widths=self.tower.widths,
            use_bias=self.bias is not None,
        )

    def _embedding_tensors(self) -> list[tuple[str, FloatArray]]:
        return [
            ("P_v", self.P_v),
            ("Q_v", self.Q_v),
            ("E_v", self.E_v),
            *self.tower.named_layer_tensors(),
        ]

    def _tensors(self) -> list[tuple[str, FloatArray]]:
        return [*self._embedding_tensors(), ("h", self.tower.h)]

    def encode(self, users: IndexArray, items: IndexArray, feature_rows: FloatArray) -> FloatArray:
        """z_1 = [p_u, q_i, E_v f_i]."""
        z_i = concat(self.Q_v[items], matvec(self.E_v, feature_rows))
        return concat(self.P_v[users], z_i)

    def encode_backward(
        self,
        users: IndexArray,
        items: IndexArray,
        feature_rows: FloatArray,
        d_z1: FloatArray,
        grad: "VMLPParams",
    ) -> None:
        k = self.latent_dim
        np.add.at(grad.P_v, users, d_z1[:, :k])
        # q_i only feeds the first K slots of z_i
        np.add.at(grad.Q_v, items, d_z1[:, k : 2 * k])
        grad.E_v += d_z1[:, 2 * k :].T @ feature_rows

    def _forward(
        self, users: IndexArray, items: IndexArray, feature_rows: FloatArray | None
    ) -> tuple[FloatArray, ForwardTrace]:
        assert feature_rows is not None
        activations = self.tower.hidden(self.encode(users, items, feature_rows))
        preds = activations[-1] @ self.tower.h
        trace = TowerTrace(
            users=users, items=items, feature_rows=feature_rows, activations=activations
        )
        return preds, trace

    def _backward(self, trace: ForwardTrace, upstream: FloatArray, grad: "VMLPParams") -> None:
        if not isinstance(trace, TowerTrace) or trace.feature_rows is None:
            raise DimensionMismatchError("stale trace: not produced by a VMLP forward pass")
        self.tower.check_trace(trace.activations)

        last = trace.activations[-1]
        grad.tower.h += last.T @ upstream
        d_last = upstream[:, None] * self.tower.h[None, :]
        d_z1 = self.tower.backward_hidden(trace.activations, d_last, grad.tower)
        self.encode_backward(trace.users, trace.items, trace.feature_rows, d_z1, grad)


def vmlp_forward(
    params: VMLPParams, u: int, i: int, f_i: ArrayLike
) -> tuple[float, ForwardTrace]:
    preds, trace = params.forward([u], [i], [f_i])
    return float(preds[0]), trace


def vmlp_backward(params: VMLPParams, trace: ForwardTrace, residual: float) -> VMLPParams:
    return params.backward(trace, [residual])
