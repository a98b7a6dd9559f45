from logging import getLogger

import numpy as np

from visualrec.exceptions import ConfigError
from visualrec.models.base import ModelDims, ModelKind, ModelParams, RatingBias
from visualrec.models.fused import FusedParams
from visualrec.models.mf import MFParams
from visualrec.models.tower import MLPTower
from visualrec.models.vmf import VMFParams
from visualrec.models.vmlp import VMLPParams
from visualrec.numeric.core import Rng, init_gaussian


logger = getLogger(__name__)


def tower_input_width(dims: ModelDims) -> int:
    return 2 * dims.latent_dim + dims.visual_dim


def default_tower_widths(input_width: int, n_layers: int = 2) -> tuple[int, ...]:
    """Halving pyramid below the input width, never narrower than 1."""
    widths = []
    width = input_width
    for _ in range(n_layers):
        width = max(width // 2, 1)
        widths.append(width)
    return tuple(widths)


def resolve_dims(kind: ModelKind, dims: ModelDims) -> ModelDims:
    """Fill in the tower widths of tower models when none were configured."""
    if kind not in (ModelKind.VMLP, ModelKind.MF_VMLP) or dims.tower_widths:
        return dims
    widths = default_tower_widths(tower_input_width(dims))
    logger.debug("Using default tower widths %s", widths)
    return ModelDims(
        latent_dim=dims.latent_dim,
        mf_latent_dim=dims.mf_latent_dim,
        visual_dim=dims.visual_dim,
        dim_f=dims.dim_f,
        tower_widths=widths,
        use_bias=dims.use_bias,
    )


def _vmlp_zeros(n_users: int, n_items: int, dims: ModelDims) -> VMLPParams:
    k = dims.latent_dim
    return VMLPParams(
        P_v=np.zeros((n_users, k)),
        Q_v=np.zeros((n_items, k)),
        E_v=np.zeros((dims.visual_dim, dims.dim_f)),
        tower=MLPTower.zeros(tower_input_width(dims), dims.tower_widths),
    )


def empty_params(kind: ModelKind, n_users: int, n_items: int, dims: ModelDims) -> ModelParams:
    """All-zero parameters of the given structure; checkpoints are read into these."""
    if dims.latent_dim < 1:
        raise ConfigError(f"latent_dim must be at least 1, got {dims.latent_dim}")
    if kind is not ModelKind.MF and dims.dim_f < 1:
        raise ConfigError(f"{kind.label} requires visual features (feature dimension is 0)")
    if kind in (ModelKind.VMLP, ModelKind.MF_VMLP) and not dims.tower_widths:
        raise ConfigError(f"{kind.label} requires tower widths")

    bias = RatingBias.zeros(n_users, n_items) if dims.use_bias else None
    params: ModelParams
    match kind:
        case ModelKind.MF:
            k = dims.latent_dim
            params = MFParams(P=np.zeros((n_users, k)), Q=np.zeros((n_items, k)), bias=bias)
        case ModelKind.VMF:
            k = dims.latent_dim
            params = VMFParams(
                base=MFParams(P=np.zeros((n_users, k)), Q=np.zeros((n_items, k))),
                Theta_u=np.zeros((n_users, dims.visual_dim)),
                E=np.zeros((dims.visual_dim, dims.dim_f)),
                bias=bias,
            )
        case ModelKind.VMLP:
            params = _vmlp_zeros(n_users, n_items, dims)
            params.bias = bias
        case ModelKind.MF_VMLP:
            k_mf = dims.mf_latent_dim
            vmlp = _vmlp_zeros(n_users, n_items, dims)
            params = FusedParams(
                mf=MFParams(P=np.zeros((n_users, k_mf)), Q=np.zeros((n_items, k_mf))),
                vmlp=vmlp,
                h_out=np.zeros(k_mf + vmlp.tower.output_width),
                bias=bias,
            )
    return params


def init_params(
    kind: ModelKind,
    n_users: int,
    n_items: int,
    dims: ModelDims,
    rng: Rng,
    std: float = 0.01,
) -> ModelParams:
    """
    Fresh parameters with every tensor drawn from N(0, std^2), one tensor at a time in checkpoint
    order so that a seed fixes the whole model.
    """
    params = empty_params(kind, n_users, n_items, resolve_dims(kind, dims))
    for name, tensor in params.named_tensors():
        rows, cols = tensor.shape if tensor.ndim == 2 else (1, tensor.size)
        tensor[...] = init_gaussian(rows, cols, std, rng).reshape(tensor.shape)
        logger.debug("Initialized %s with shape %s", name, tensor.shape)
    logger.info(
        "Initialized %s with %s parameters for %s users and %s items",
        kind.label,
        params.n_parameters,
        n_users,
        n_items,
    )
    return params
