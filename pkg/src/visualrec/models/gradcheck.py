from collections.abc import Sequence

from visualrec.models.base import Batch, ModelParams, Regularization
from visualrec.numeric.core import FloatArray, finite_difference_gradient, max_relative_error


def check_gradients(
    params: ModelParams,
    batch: Batch | Sequence[tuple[int, int, float]],
    features: FloatArray | None = None,
    reg: Regularization | None = None,
    h: float = 1e-5,
) -> float:
    """
    Max relative error between the analytic gradient of `params.loss` and central finite
    differences over every parameter. `params` is left unchanged.
    """
    b = Batch.of(batch)
    analytic = params.gradient(b, features, reg).flatten()

    shifted = params.copy()

    def objective(flat: FloatArray) -> float:
        shifted.assign_flat(flat)
        return shifted.loss(b, features, reg)

    numeric = finite_difference_gradient(objective, params.flatten(), h=h)
    return max_relative_error(analytic, numeric)
