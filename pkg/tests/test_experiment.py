"""
End-to-end check that the visual models pick up a planted visual signal, and only when there is
one. Every model picks its penalties on the validation split; MF-VMLP starts from the chosen MF
and VMLP. Slow; deselect with `pytest -m "not slow"`.
"""

from dataclasses import dataclass

import numpy as np
import pytest

from visualrec.data.dataset import SplitDataset, split
from visualrec.data.features import VisualFeatureStore
from visualrec.evaluation.metrics import compare, format_table, rmse
from visualrec.models.base import ModelKind, ModelParams
from visualrec.models.fused import fuse_pretrained
from visualrec.models.mf import MFParams
from visualrec.models.vmlp import VMLPParams
from visualrec.synth.generator import SynthConfig, generate
from visualrec.training.checkpoint import save_checkpoint
from visualrec.training.config import TrainConfig, build_train_config
from visualrec.training.trainer import train


pytestmark = pytest.mark.slow

SEEDS = range(5)
LAMBDAS = (5.0, 20.0, 50.0)
# the last value shuts the visual path of VMF off
VISUAL_LAMBDAS = (*LAMBDAS, 1000.0)
TOWER_LAMBDAS = (0.1, 1.0, 10.0)
ALPHAS = (0.0, 0.25, 0.5, 0.75, 1.0)

COMMON = {
    "latent_dim": 8,
    "visual_dim": 8,
    "use_bias": True,
    "optimizer": "adam",
    "learning_rate": 0.01,
    "batch_size": 256,
    "max_epochs": 40,
    "patience": 3,
}


@dataclass(frozen=True)
class Fit:
    params: ModelParams
    config: TrainConfig
    valid_rmse: float
    test_rmse: float


class Experiment:
    def __init__(self, visual_weight: float, seed: int, workdir) -> None:
        data = generate(SynthConfig(visual_weight=visual_weight, seed=seed))
        self.views: SplitDataset = split(data.dataset, seed=seed)
        self.features: VisualFeatureStore = data.features
        self.seed = seed
        self.workdir = workdir

    def fit(self, kind: ModelKind, **overrides) -> Fit:
        config = build_train_config(
            overrides={**COMMON, "model_kind": kind, "seed": self.seed, **overrides}
        )
        params, report = train(config, self.views, self.features)
        test = rmse(params, self.views.test, self.features)
        return Fit(params, config, report.best_valid_rmse, test)

    def select(self, kind: ModelKind, grid: list[dict]) -> Fit:
        return min((self.fit(kind, **overrides) for overrides in grid), key=lambda f: f.valid_rmse)

    def mf(self) -> Fit:
        return self.select(ModelKind.MF, [{"lambda_u": v, "lambda_v": v} for v in LAMBDAS])

    def vmf(self, mf: Fit) -> Fit:
        lam = mf.config.lambda_u
        grid = [{"lambda_u": lam, "lambda_v": lam, "lambda_net": v} for v in VISUAL_LAMBDAS]
        return self.select(ModelKind.VMF, grid)

    def vmlp(self) -> Fit:
        grid = [{"lambda_u": v, "lambda_v": v, "lambda_net": v} for v in TOWER_LAMBDAS]
        return self.select(ModelKind.VMLP, grid)

    def fused(self, mf: Fit, vmlp: Fit) -> Fit:
        assert isinstance(mf.params, MFParams) and isinstance(vmlp.params, VMLPParams)
        valid = self.views.valid
        alpha = min(
            ALPHAS,
            key=lambda a: rmse(fuse_pretrained(mf.params, vmlp.params, a), valid, self.features),
        )
        mf_path = self.workdir / f"mf-{self.seed}.vrc"
        vmlp_path = self.workdir / f"vmlp-{self.seed}.vrc"
        save_checkpoint(mf.params, mf_path)
        save_checkpoint(vmlp.params, vmlp_path)
        return self.fit(
            ModelKind.MF_VMLP,
            warm_start_mf=mf_path,
            warm_start_vmlp=vmlp_path,
            warm_start_alpha=alpha,
            lambda_u=mf.config.lambda_u,
            lambda_v=mf.config.lambda_v,
            lambda_net=vmlp.config.lambda_net,
            learning_rate=1e-4,
            max_epochs=10,
            patience=2,
        )


def _seed_means(runs: list[dict[ModelKind, float]]) -> dict[ModelKind, float]:
    return {kind: float(np.mean([run[kind] for run in runs])) for kind in runs[0]}


@pytest.fixture(scope="module")
def visual_scores(tmp_path_factory) -> dict[ModelKind, float]:
    runs = []
    for seed in SEEDS:
        experiment = Experiment(0.6, seed, tmp_path_factory.mktemp("visual"))
        mf, vmlp = experiment.mf(), experiment.vmlp()
        fits = {
            ModelKind.MF: mf,
            ModelKind.VMF: experiment.vmf(mf),
            ModelKind.VMLP: vmlp,
            ModelKind.MF_VMLP: experiment.fused(mf, vmlp),
        }
        runs.append({kind: fit.test_rmse for kind, fit in fits.items()})
    return _seed_means(runs)


@pytest.fixture(scope="module")
def blind_scores(tmp_path_factory) -> dict[ModelKind, float]:
    runs = []
    for seed in SEEDS:
        experiment = Experiment(0.0, seed, tmp_path_factory.mktemp("blind"))
        mf = experiment.mf()
        runs.append({ModelKind.MF: mf.test_rmse, ModelKind.VMF: experiment.vmf(mf).test_rmse})
    return _seed_means(runs)


def test_visual_signal_is_recovered(visual_scores):
    report = compare(visual_scores, baseline=ModelKind.MF, dataset="synth w=0.6")
    print(format_table(report))

    assert all(np.isfinite(v) for v in visual_scores.values())
    assert visual_scores[ModelKind.VMF] < visual_scores[ModelKind.MF]
    assert report.improvement_pct["VMF"] >= 3.0
    assert visual_scores[ModelKind.MF_VMLP] <= visual_scores[ModelKind.VMLP]


def test_uninformative_images_do_not_help(blind_scores):
    report = compare(blind_scores, baseline=ModelKind.MF, dataset="synth w=0")
    print(format_table(report))

    assert abs(report.improvement_pct["VMF"]) <= 1.5
