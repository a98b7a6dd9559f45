from collections.abc import Callable

import numpy as np
import pytest

from visualrec.data.dataset import RatingDataset, build_dataset
from visualrec.data.features import VisualFeatureStore
from visualrec.data.ratings import RawRating
from visualrec.models.base import Batch, ModelDims, ModelKind, ModelParams
from visualrec.models.factory import init_params
from visualrec.numeric.core import FloatArray, make_rng


N_USERS = 4
N_ITEMS = 5
DIMS = ModelDims(
    latent_dim=3, mf_latent_dim=2, visual_dim=2, dim_f=4, tower_widths=(6, 4), use_bias=False
)

MakeModel = Callable[..., tuple[ModelParams, Batch, FloatArray | None]]


@pytest.fixture
def make_model() -> MakeModel:
    """
    Random small model, a batch of triples covering every user and item, and an item-aligned
    feature matrix (None for MF). Parameters use std 0.5 so that no term is negligible.
    """

    def _make(
        kind: ModelKind,
        seed: int = 0,
        dims: ModelDims = DIMS,
        n_examples: int = 8,
    ) -> tuple[ModelParams, Batch, FloatArray | None]:
        rng = make_rng(seed)
        params = init_params(kind, N_USERS, N_ITEMS, dims, rng, std=0.5)
        n = max(N_USERS, N_ITEMS) + n_examples
        users = np.concatenate([np.arange(N_USERS), rng.integers(0, N_USERS, n - N_USERS)])
        items = np.concatenate([np.arange(N_ITEMS), rng.integers(0, N_ITEMS, n - N_ITEMS)])
        batch = Batch(
            users=users.astype(np.int64),
            items=items.astype(np.int64),
            ratings=rng.normal(size=len(users)),
        )
        features = None if kind is ModelKind.MF else rng.normal(size=(N_ITEMS, dims.dim_f))
        return params, batch, features

    return _make


@pytest.fixture
def small_dataset() -> RatingDataset:
    """20 ratings over 4 users and 5 items with ratings in [1, 5]."""
    rng = make_rng(7)
    raw = [
        RawRating(user_key=f"u{u}", item_key=f"i{i}", rating=float(rng.integers(1, 6)))
        for u in range(4)
        for i in range(5)
    ]
    return build_dataset(raw)


@pytest.fixture
def small_features(small_dataset: RatingDataset) -> VisualFeatureStore:
    rng = make_rng(8)
    return VisualFeatureStore(
        4, {key: rng.normal(size=4).astype(np.float32) for key in small_dataset.item_index}
    )

