from dataclasses import dataclass, field

import numpy as np

from visualrec.exceptions import DimensionMismatchError
from visualrec.numeric.core import FloatArray, affine, relu, relu_mask


@dataclass(eq=False)
class DenseLayer:
    W: FloatArray  # (in_width, out_width)
    b: FloatArray


@dataclass(eq=False)
class MLPTower:
    """ReLU hidden layers phi_2..phi_L followed by the linear output weights h."""

    layers: list[DenseLayer]
    h: FloatArray
    input_width: int = field(default=0)

    def __post_init__(self) -> None:
        if self.layers:
            self.input_width = self.layers[0].W.shape[0]
        width = self.input_width
        for n, layer in enumerate(self.layers, start=2):
            if layer.W.shape[0] != width or layer.b.shape != (layer.W.shape[1],):
                raise DimensionMismatchError(
                    f"layer {n}: W {layer.W.shape}, b {layer.b.shape} after width {width}"
                )
            width = layer.W.shape[1]
        if self.h.shape != (width,):
            raise DimensionMismatchError(f"h has shape {self.h.shape}, last width is {width}")

    @classmethod
    def zeros(cls, input_width: int, widths: tuple[int, ...]) -> "MLPTower":
        layers = []
        width = input_width
        for out in widths:
            layers.append(DenseLayer(W=np.zeros((width, out)), b=np.zeros(out)))
            width = out
        return cls(layers=layers, h=np.zeros(width), input_width=input_width)

    @property
    def widths(self) -> tuple[int, ...]:
        return tuple(layer.W.shape[1] for layer in self.layers)

    @property
    def output_width(self) -> int:
        return self.widths[-1] if self.layers else self.input_width

    def named_layer_tensors(self) -> list[tuple[str, FloatArray]]:
        tensors: list[tuple[str, FloatArray]] = []
        for n, layer in enumerate(self.layers, start=2):
            tensors.extend([(f"W_{n}", layer.W), (f"b_{n}", layer.b)])
        return tensors

    def hidden(self, z1: FloatArray) -> list[FloatArray]:
        """Activations [z_1, phi_2, ..., phi_L]."""
        activations = [z1]
        for layer in self.layers:
            activations.append(relu(affine(layer.W, activations[-1], layer.b)))
        return activations

    def check_trace(self, activations: list[FloatArray]) -> None:
        expected = (self.input_width, *self.widths)
        actual = tuple(a.shape[-1] for a in activations)
        if actual != expected:
            raise DimensionMismatchError(
                f"stale trace: activation widths {actual}, tower expects {expected}"
            )

    def backward_hidden(
        self, activations: list[FloatArray], d_last: FloatArray, grad: "MLPTower"
    ) -> FloatArray:
        """Accumulate layer gradients into `grad` and return the gradient w.r.t. z_1."""
        delta = d_last
        for n in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[n]
            d_pre = delta * relu_mask(activations[n + 1])
            grad.layers[n].W += activations[n].T @ d_pre
            grad.layers[n].b += d_pre.sum(axis=0)
            delta = d_pre @ layer.W.T
        return delta
