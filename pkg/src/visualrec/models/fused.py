"""
MF-VMLP fusion. The MF half (p_u, q_i) and the VMLP half (p_u^V, q_i^V, E_v, tower) keep their
own embeddings; y_hat = h_out . [p_u * q_i, phi_L]. The VMLP half's own output weights are not
part of this model and stay zero.
"""

from dataclasses import dataclass, field
from typing import ClassVar

import numpy as np
from numpy.typing import ArrayLike

from visualrec.exceptions import ConfigError, DimensionMismatchError
from visualrec.models.base import ForwardTrace, ModelDims, ModelKind, ModelParams, RatingBias
from visualrec.models.mf import MFParams
from visualrec.models.vmlp import TowerTrace, VMLPParams
from visualrec.numeric.core import FloatArray, IndexArray, concat, hadamard


@dataclass
class FusedTrace(TowerTrace):
    phi_mf: FloatArray | None = field(default=None)


@dataclass(eq=False)
class FusedParams(ModelParams):
    kind: ClassVar[ModelKind] = ModelKind.MF_VMLP

    mf: MFParams
    vmlp: VMLPParams
    h_out: FloatArray
    bias: RatingBias | None = None

    def __post_init__(self) -> None:
        if (self.mf.n_users, self.mf.n_items) != (self.vmlp.n_users, self.vmlp.n_items):
            raise DimensionMismatchError("MF and VMLP halves disagree on users/items")
        expected = self.mf.latent_dim + self.vmlp.tower.output_width
        if self.h_out.shape != (expected,):
            raise DimensionMismatchError(f"h_out has shape {self.h_out.shape}, expected {expected}")

    @property
    def n_users(self) -> int:
        return self.mf.n_users

    @property
    def n_items(self) -> int:
        return self.mf.n_items

    @property
    def dims(self) -> ModelDims:
        vmlp = self.vmlp.dims
        return ModelDims(
            latent_dim=vmlp.latent_dim,
            mf_latent_dim=self.mf.latent_dim,
            visual_dim=vmlp.visual_dim,
            dim_f=vmlp.dim_f,
            tower_widths=vmlp.tower_widths,
            use_bias=self.bias is not None,
        )

    def _tensors(self) -> list[tuple[str, FloatArray]]:
        return [*self.mf._tensors(), *self.vmlp._embedding_tensors(), ("h_out", self.h_out)]

    def _forward(
        self, users: IndexArray, items: IndexArray, feature_rows: FloatArray | None
    ) -> tuple[FloatArray, ForwardTrace]:
        assert feature_rows is not None
        phi_mf = hadamard(self.mf.P[users], self.mf.Q[items])
        activations = self.vmlp.tower.hidden(self.vmlp.encode(users, items, feature_rows))
        preds = concat(phi_mf, activations[-1]) @ self.h_out
        trace = FusedTrace(
            users=users,
            items=items,
            feature_rows=feature_rows,
            activations=activations,
            phi_mf=phi_mf,
        )
        return preds, trace

    def _backward(self, trace: ForwardTrace, upstream: FloatArray, grad: "FusedParams") -> None:
        if not isinstance(trace, FusedTrace) or trace.phi_mf is None or trace.feature_rows is None:
            raise DimensionMismatchError("stale trace: not produced by an MF-VMLP forward pass")
        self.vmlp.tower.check_trace(trace.activations)
        k = self.mf.latent_dim
        if trace.phi_mf.shape[-1] != k:
            raise DimensionMismatchError(f"stale trace: MF width {trace.phi_mf.shape[-1]} != {k}")

        grad.h_out += concat(trace.phi_mf, trace.activations[-1]).T @ upstream
        g = upstream[:, None]

        d_phi_mf = g * self.h_out[None, :k]
        np.add.at(grad.mf.P, trace.users, d_phi_mf * self.mf.Q[trace.items])
        np.add.at(grad.mf.Q, trace.items, d_phi_mf * self.mf.P[trace.users])

        d_last = g * self.h_out[None, k:]
        d_z1 = self.vmlp.tower.backward_hidden(trace.activations, d_last, grad.vmlp.tower)
        self.vmlp.encode_backward(trace.users, trace.items, trace.feature_rows, d_z1, grad.vmlp)


def fused_forward(
    params: FusedParams, u: int, i: int, f_i: ArrayLike
) -> tuple[float, ForwardTrace]:
    preds, trace = params.forward([u], [i], [f_i])
    return float(preds[0]), trace


def fused_backward(params: FusedParams, trace: ForwardTrace, residual: float) -> FusedParams:
    return params.backward(trace, [residual])


def fuse_pretrained(mf: MFParams, vmlp: VMLPParams, alpha: float = 0.5) -> FusedParams:
    """
    Warm start from separately trained halves: h_out = [alpha * 1, (1 - alpha) * h_vmlp], so the
    fused model starts as the alpha-weighted average of the two predictors.
    """
    if (mf.bias is None) != (vmlp.bias is None):
        raise ConfigError("warm start needs both pre-trained halves with or without biases")
    bias = None
    if mf.bias is not None and vmlp.bias is not None:
        bias = RatingBias(
            mu=alpha * mf.bias.mu + (1 - alpha) * vmlp.bias.mu,
            b_u=alpha * mf.bias.b_u + (1 - alpha) * vmlp.bias.b_u,
            b_i=alpha * mf.bias.b_i + (1 - alpha) * vmlp.bias.b_i,
        )

    mf_half = MFParams(P=mf.P.copy(), Q=mf.Q.copy())
    vmlp_half = vmlp.copy()
    vmlp_half.bias = None
    h_out = np.concatenate([alpha * np.ones(mf.latent_dim), (1 - alpha) * vmlp.tower.h])
    vmlp_half.tower.h.fill(0.0)
    return FusedParams(mf=mf_half, vmlp=vmlp_half, h_out=h_out, bias=bias)
