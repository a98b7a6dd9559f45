"""
Synthetic ratings with a planted latent and visual structure.

Every user and item gets true latent factors p_u, q_i; users also get visual tastes theta_u, and
items raw features f_i ~ N(0, I/F) of unit expected norm, seen through a true kernel E*. For all
pairs, both interaction scores are standardized, mixed as (1 - w) * mf + w * visual, and min-max
rescaled into [1, 5]. A `density` fraction of pairs is then observed with Gaussian noise added.
The ground truth keeps everything needed to recompute the noiseless rating of any pair.
"""

from dataclasses import dataclass
from logging import getLogger
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, Field

from visualrec.data.dataset import RatingDataset, build_dataset
from visualrec.data.features import VisualFeatureStore, save_visual_features
from visualrec.data.ratings import RawRating, write_ratings
from visualrec.exceptions import UnknownKeyError
from visualrec.numeric.core import FloatArray, as_array, make_rng


logger = getLogger(__name__)

RATINGS_FILE = "ratings.csv"
FEATURES_FILE = "features.vfs"
TRUTH_FILE = "truth.json"


class SynthConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    n_users: int = Field(default=300, ge=1)
    n_items: int = Field(default=500, ge=1)
    k_true: int = Field(default=8, ge=1)
    d_true: int = Field(default=4, ge=0)
    dim_f: int = Field(default=64, ge=1)
    visual_weight: float = Field(default=0.6, ge=0, le=1)
    noise_std: float = Field(default=0.3, ge=0)
    density: float = Field(default=0.05, gt=0, le=1)
    seed: int = Field(default=0, ge=0)


class GroundTruth(BaseModel):
    """
    True factors and the constants of the score-to-rating map. `theta_i` holds E* f_i for every
    item, so the raw features are not needed to recompute ratings.
    """

    config: SynthConfig
    user_keys: list[str]
    item_keys: list[str]
    P: list[list[float]]
    Q: list[list[float]]
    Theta_u: list[list[float]]
    E: list[list[float]]
    theta_i: list[list[float]]
    mf_mean: float
    mf_scale: float
    visual_mean: float
    visual_scale: float
    score_min: float
    score_max: float

    def _score(self, users: ArrayLike, items: ArrayLike) -> FloatArray:
        u = np.asarray(users, dtype=np.int64)
        i = np.asarray(items, dtype=np.int64)
        w = self.config.visual_weight
        mf = np.sum(as_array(self.P)[u] * as_array(self.Q)[i], axis=-1)
        visual = np.zeros_like(mf)
        if self.config.d_true:
            visual = np.sum(as_array(self.Theta_u)[u] * as_array(self.theta_i)[i], axis=-1)
        return (1 - w) * (mf - self.mf_mean) / self.mf_scale + w * (
            visual - self.visual_mean
        ) / self.visual_scale

    def noiseless_ratings(self, users: ArrayLike, items: ArrayLike) -> FloatArray:
        """Ratings before noise for generator user/item ids (positions in the key lists)."""
        return _rescale(self._score(users, items), self.score_min, self.score_max)

    def noiseless_rating(self, user_key: str, item_key: str) -> float:
        try:
            u = self.user_keys.index(user_key)
        except ValueError as e:
            raise UnknownKeyError("user", user_key) from e
        try:
            i = self.item_keys.index(item_key)
        except ValueError as e:
            raise UnknownKeyError("item", item_key) from e
        return float(self.noiseless_ratings([u], [i])[0])


@dataclass(frozen=True)
class SyntheticData:
    dataset: RatingDataset
    features: VisualFeatureStore
    truth: GroundTruth


def _rescale(score: FloatArray, lo: float, hi: float) -> FloatArray:
    if hi <= lo:
        return np.full_like(score, 3.0)
    return 1.0 + 4.0 * (score - lo) / (hi - lo)


def _standardize(x: FloatArray) -> tuple[float, float]:
    std = float(x.std())
    return float(x.mean()), std if std > 0 else 1.0


def _keys(prefix: str, n: int) -> list[str]:
    width = max(4, len(str(n - 1)))
    return [f"{prefix}{k:0{width}d}" for k in range(n)]


def generate(config: SynthConfig) -> SyntheticData:
    rng = make_rng(config.seed)
    n_u, n_i = config.n_users, config.n_items

    P = rng.normal(size=(n_u, config.k_true))
    Q = rng.normal(size=(n_i, config.k_true))
    Theta_u = rng.normal(size=(n_u, config.d_true))
    E = rng.normal(size=(config.d_true, config.dim_f)) / np.sqrt(config.dim_f)
    # round through float32 so the stored features reproduce the ratings exactly
    raw_features = rng.normal(size=(n_i, config.dim_f)) / np.sqrt(config.dim_f)
    features = raw_features.astype(np.float32).astype(np.float64)
    theta_i = features @ E.T

    mf_all = P @ Q.T
    visual_all = Theta_u @ theta_i.T
    mf_mean, mf_scale = _standardize(mf_all)
    visual_mean, visual_scale = _standardize(visual_all) if config.d_true else (0.0, 1.0)
    w = config.visual_weight
    score_all = (1 - w) * (mf_all - mf_mean) / mf_scale + w * (
        visual_all - visual_mean
    ) / visual_scale

    n_obs = max(1, round(config.density * n_u * n_i))
    observed = np.sort(rng.choice(n_u * n_i, size=n_obs, replace=False))
    users, items = np.divmod(observed, n_i)
    score_min, score_max = float(score_all.min()), float(score_all.max())
    clean = _rescale(score_all[users, items], score_min, score_max)
    ratings = clean + config.noise_std * rng.normal(size=n_obs)

    user_keys, item_keys = _keys("u", n_u), _keys("i", n_i)
    raw = [
        RawRating(user_key=user_keys[u], item_key=item_keys[i], rating=float(r))
        for u, i, r in zip(users.tolist(), items.tolist(), ratings.tolist(), strict=True)
    ]
    dataset = build_dataset(raw)
    store = VisualFeatureStore(
        config.dim_f, {key: features[k].astype(np.float32) for k, key in enumerate(item_keys)}
    )
    truth = GroundTruth(
        config=config,
        user_keys=user_keys,
        item_keys=item_keys,
        P=P.tolist(),
        Q=Q.tolist(),
        Theta_u=Theta_u.tolist(),
        E=E.tolist(),
        theta_i=theta_i.tolist(),
        mf_mean=mf_mean,
        mf_scale=mf_scale,
        visual_mean=visual_mean,
        visual_scale=visual_scale,
        score_min=score_min,
        score_max=score_max,
    )
    logger.info(
        "Generated %s ratings for %s users and %s items (visual_weight=%s)",
        n_obs,
        dataset.n_users,
        dataset.n_items,
        w,
    )
    return SyntheticData(dataset=dataset, features=store, truth=truth)


def write_synthetic(config: SynthConfig, out_dir: Path | str) -> SyntheticData:
    """Write ratings.csv, features.vfs and truth.json, the inputs `prepare` expects."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = generate(config)
    write_ratings(data.dataset.to_raw(), out / RATINGS_FILE)
    save_visual_features(data.features, out / FEATURES_FILE)
    (out / TRUTH_FILE).write_text(data.truth.model_dump_json(indent=2) + "\n", encoding="utf-8")
    logger.info("Wrote synthetic data to %s", out)
    return data


def load_ground_truth(path: Path | str) -> GroundTruth:
    return GroundTruth.model_validate_json(Path(path).read_text(encoding="utf-8"))
