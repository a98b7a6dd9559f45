import copy
from abc import ABC, abstractmethod
from collections.abc import Sequence
from dataclasses import dataclass, field
from enum import IntEnum
from typing import ClassVar, Self

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, Field

from visualrec.data.dataset import RatingDataset
from visualrec.exceptions import ConfigError, DimensionMismatchError, UnknownIndexError
from visualrec.numeric.core import FloatArray, IndexArray, as_array, ensure_finite


class ModelKind(IntEnum):
    MF = 0
    VMF = 1
    VMLP = 2
    MF_VMLP = 3

    @property
    def label(self) -> str:
        return "MF-VMLP" if self is ModelKind.MF_VMLP else self.name

    @classmethod
    def parse(cls, value: "str | int | ModelKind") -> "ModelKind":
        if isinstance(value, ModelKind):
            return value
        if isinstance(value, int):
            return cls(value)
        normalized = value.strip().upper().replace("_", "-")
        for kind in cls:
            if kind.label == normalized or str(kind.value) == normalized:
                return kind
        raise ValueError(f"unknown model kind {value!r}; expected one of MF, VMF, VMLP, MF-VMLP")


class Regularization(BaseModel):
    model_config = ConfigDict(frozen=True)

    lambda_u: float = Field(default=0.0, ge=0)
    lambda_v: float = Field(default=0.0, ge=0)
    lambda_net: float = Field(default=0.0, ge=0)

    def weight(self, tensor_name: str) -> float:
        """Penalty weight for a named tensor; layer biases b_l and mu are never penalized."""
        if tensor_name in ("P", "P_v", "b_u"):
            return self.lambda_u
        if tensor_name in ("Q", "Q_v", "b_i"):
            return self.lambda_v
        if tensor_name in ("Theta_u", "E", "E_v", "h", "h_out") or tensor_name.startswith("W_"):
            return self.lambda_net
        return 0.0


@dataclass(frozen=True)
class ModelDims:
    latent_dim: int
    mf_latent_dim: int
    visual_dim: int
    dim_f: int
    tower_widths: tuple[int, ...] = ()
    use_bias: bool = False


@dataclass(eq=False)
class RatingBias:
    """Global, per-user and per-item offsets; only present when biases are switched on."""

    mu: FloatArray
    b_u: FloatArray
    b_i: FloatArray

    @classmethod
    def zeros(cls, n_users: int, n_items: int) -> "RatingBias":
        return cls(mu=np.zeros(1), b_u=np.zeros(n_users), b_i=np.zeros(n_items))

    def named_tensors(self) -> list[tuple[str, FloatArray]]:
        return [("mu", self.mu), ("b_u", self.b_u), ("b_i", self.b_i)]


@dataclass(frozen=True)
class Batch:
    users: IndexArray
    items: IndexArray
    ratings: FloatArray

    def __len__(self) -> int:
        return len(self.ratings)

    @classmethod
    def of(cls, batch: "Batch | RatingDataset | Sequence[tuple[int, int, float]]") -> "Batch":
        if isinstance(batch, Batch):
            return batch
        if isinstance(batch, RatingDataset):
            return cls(users=batch.users, items=batch.items, ratings=batch.ratings)
        if not batch:
            return cls(
                users=np.zeros(0, dtype=np.int64),
                items=np.zeros(0, dtype=np.int64),
                ratings=np.zeros(0),
            )
        users, items, ratings = zip(*batch, strict=True)
        return cls(
            users=np.asarray(users, dtype=np.int64),
            items=np.asarray(items, dtype=np.int64),
            ratings=as_array(ratings),
        )

    def take(self, positions: IndexArray) -> "Batch":
        return Batch(
            users=self.users[positions],
            items=self.items[positions],
            ratings=self.ratings[positions],
        )


@dataclass
class ForwardTrace:
    users: IndexArray
    items: IndexArray
    feature_rows: FloatArray | None = field(default=None)


class ModelParams(ABC):
    """
    All learnable tensors of one model. Subclasses implement the interaction term and its
    reverse pass over a whole batch; bias terms, regularization, losses and the flat-vector
    views used by gradient checks are shared here.
    """

    kind: ClassVar[ModelKind]
    uses_features: ClassVar[bool] = True

    bias: RatingBias | None

    @property
    @abstractmethod
    def n_users(self) -> int:
        """Rows of the user embedding table"""

    @property
    @abstractmethod
    def n_items(self) -> int:
        """Rows of the item embedding table"""

    @property
    @abstractmethod
    def dims(self) -> ModelDims:
        """Configuration block recorded in checkpoints"""

    @abstractmethod
    def _tensors(self) -> list[tuple[str, FloatArray]]:
        """
        The model's own tensors in checkpoint order, as live references
        """

    @abstractmethod
    def _forward(
        self, users: IndexArray, items: IndexArray, feature_rows: FloatArray | None
    ) -> tuple[FloatArray, ForwardTrace]:
        """
        Interaction term for every example of the batch, plus what the reverse pass needs
        """

    @abstractmethod
    def _backward(self, trace: ForwardTrace, upstream: FloatArray, grad: Self) -> None:
        """
        Accumulate into `grad` the gradient of sum(upstream * prediction)
        """

    def named_tensors(self) -> list[tuple[str, FloatArray]]:
        tensors = self._tensors()
        if self.bias is not None:
            tensors.extend(self.bias.named_tensors())
        return tensors

    def _check_indices(self, users: ArrayLike, items: ArrayLike) -> tuple[IndexArray, IndexArray]:
        u = np.atleast_1d(np.asarray(users, dtype=np.int64))
        i = np.atleast_1d(np.asarray(items, dtype=np.int64))
        if u.shape != i.shape:
            raise DimensionMismatchError(f"{len(u)} users against {len(i)} items")
        if len(u) and (u.min() < 0 or u.max() >= self.n_users):
            raise UnknownIndexError(f"user index out of range [0, {self.n_users})")
        if len(i) and (i.min() < 0 or i.max() >= self.n_items):
            raise UnknownIndexError(f"item index out of range [0, {self.n_items})")
        return u, i

    def _check_feature_rows(self, feature_rows: ArrayLike | None, n: int) -> FloatArray | None:
        if not self.uses_features:
            return None
        if feature_rows is None:
            raise ConfigError(f"{self.kind.label} requires visual features")
        rows = np.atleast_2d(as_array(feature_rows))
        if rows.shape != (n, self.dims.dim_f):
            raise DimensionMismatchError(
                f"feature rows have shape {rows.shape}, expected ({n}, {self.dims.dim_f})"
            )
        return rows

    def feature_rows(self, features: FloatArray | None, items: IndexArray) -> FloatArray | None:
        """Gather per-example rows from an item-aligned (n_items, F) feature matrix."""
        if not self.uses_features:
            return None
        if features is None:
            raise ConfigError(f"{self.kind.label} requires visual features")
        if features.shape != (self.n_items, self.dims.dim_f):
            raise DimensionMismatchError(
                f"feature matrix {features.shape} does not match "
                f"({self.n_items}, {self.dims.dim_f})"
            )
        return features[items]

    def forward(
        self, users: ArrayLike, items: ArrayLike, feature_rows: ArrayLike | None = None
    ) -> tuple[FloatArray, ForwardTrace]:
        u, i = self._check_indices(users, items)
        rows = self._check_feature_rows(feature_rows, len(u))
        preds, trace = self._forward(u, i, rows)
        if self.bias is not None:
            preds = preds + self.bias.mu[0] + self.bias.b_u[u] + self.bias.b_i[i]
        return ensure_finite(preds, "prediction"), trace

    def backward(self, trace: ForwardTrace, residuals: ArrayLike) -> Self:
        """Gradient of 1/2 * sum((y - y_hat)^2) given the residuals y - y_hat."""
        r = np.atleast_1d(as_array(residuals))
        if r.shape != trace.users.shape:
            raise DimensionMismatchError(f"{len(r)} residuals for a trace of {len(trace.users)}")
        upstream = -r
        grad = self.zeros_like()
        self._backward(trace, upstream, grad)
        if self.bias is not None and grad.bias is not None:
            grad.bias.mu += upstream.sum()
            np.add.at(grad.bias.b_u, trace.users, upstream)
            np.add.at(grad.bias.b_i, trace.items, upstream)
        return grad

    def predict(
        self, users: ArrayLike, items: ArrayLike, feature_rows: ArrayLike | None = None
    ) -> FloatArray:
        return self.forward(users, items, feature_rows)[0]

    def predict_batch(self, batch: Batch, features: FloatArray | None = None) -> FloatArray:
        return self.predict(batch.users, batch.items, self.feature_rows(features, batch.items))

    def regularizer(self, reg: Regularization) -> float:
        return sum(
            0.5 * reg.weight(name) * float(np.sum(t * t)) for name, t in self.named_tensors()
        )

    def add_regularizer_gradient(self, grad: Self, reg: Regularization, scale: float = 1.0) -> None:
        for (name, t), (_, g) in zip(self.named_tensors(), grad.named_tensors(), strict=True):
            weight = reg.weight(name)
            if weight:
                g += scale * weight * t

    def squared_error(self, batch: Batch, features: FloatArray | None = None) -> float:
        """1/2 * sum of squared residuals over the batch."""
        if not len(batch):
            return 0.0
        residuals = batch.ratings - self.predict_batch(batch, features)
        return 0.5 * float(np.sum(residuals * residuals))

    def loss(
        self,
        batch: Batch | RatingDataset | Sequence[tuple[int, int, float]],
        features: FloatArray | None = None,
        reg: Regularization | None = None,
    ) -> float:
        """Squared-error term over the batch plus the penalties, applied once."""
        reg = reg or Regularization()
        return self.squared_error(Batch.of(batch), features) + self.regularizer(reg)

    def gradient(
        self,
        batch: Batch | RatingDataset | Sequence[tuple[int, int, float]],
        features: FloatArray | None = None,
        reg: Regularization | None = None,
        reg_scale: float = 1.0,
    ) -> Self:
        reg = reg or Regularization()
        b = Batch.of(batch)
        if len(b):
            preds, trace = self.forward(b.users, b.items, self.feature_rows(features, b.items))
            grad = self.backward(trace, b.ratings - preds)
        else:
            grad = self.zeros_like()
        self.add_regularizer_gradient(grad, reg, reg_scale)
        return grad

    def copy(self) -> Self:
        return copy.deepcopy(self)

    def zeros_like(self) -> Self:
        clone = self.copy()
        for _, t in clone.named_tensors():
            t.fill(0.0)
        return clone

    def flatten(self) -> FloatArray:
        tensors = [t.ravel() for _, t in self.named_tensors()]
        return np.concatenate(tensors) if tensors else np.zeros(0)

    def assign_flat(self, values: ArrayLike) -> None:
        flat = as_array(values)
        if flat.shape != (self.n_parameters,):
            raise DimensionMismatchError(
                f"expected {self.n_parameters} parameters, got {flat.shape}"
            )
        offset = 0
        for _, t in self.named_tensors():
            t[...] = flat[offset : offset + t.size].reshape(t.shape)
            offset += t.size

    @property
    def n_parameters(self) -> int:
        return sum(t.size for _, t in self.named_tensors())
