import json

import numpy as np
import pytest
from pydantic import ValidationError

from visualrec.data.dataset import build_dataset
from visualrec.data.features import VisualFeatureStore
from visualrec.data.ratings import RawRating
from visualrec.evaluation.metrics import (
    EvalReport,
    clamp,
    compare,
    format_table,
    predict_dataset,
    rmse,
    rmse_from_predictions,
    squared_error_sum,
    write_eval_json,
)
from visualrec.exceptions import ConfigError
from visualrec.models.base import ModelDims, ModelKind
from visualrec.models.factory import init_params
from visualrec.models.mf import MFParams
from visualrec.numeric.core import make_rng


MF, VMF, VMLP, MF_VMLP = ModelKind


def _exact_fixture():
    params = MFParams(P=np.array([[1.0, 0.0], [0.0, 2.0]]), Q=np.array([[3.0, 0.0], [0.0, 1.5]]))
    raw = [("u0", "i0", 3.0), ("u1", "i1", 3.0), ("u0", "i1", 0.0), ("u1", "i0", 0.0)]
    ds = build_dataset(RawRating(user_key=u, item_key=i, rating=r) for u, i, r in raw)
    return params, ds


class TestRmse:
    def test_hand_arithmetic(self):
        assert rmse_from_predictions([1.0, 2.0], [2.0, 4.0]) == pytest.approx(1.58114, abs=1e-5)

    def test_perfect_fit(self):
        params, ds = _exact_fixture()
        assert rmse(params, ds) == 0.0

    def test_empty_test_set(self):
        params, ds = _exact_fixture()
        with pytest.raises(ConfigError):
            rmse(params, ds.subset([]))
        with pytest.raises(ConfigError):
            rmse_from_predictions([], [])

    def test_clamped_predictions(self):
        np.testing.assert_array_equal(clamp([6.0, 0.0, 3.5]), [5.0, 1.0, 3.5])
        params, ds = _exact_fixture()
        # predictions 3, 3, 0, 0 become 3, 3, 1, 1 against targets 3, 3, 0, 0
        assert rmse(params, ds, clamp_predictions=True) == pytest.approx(np.sqrt(0.5))

    def test_permutation_invariant(self, small_dataset):
        params = init_params(ModelKind.MF, 4, 5, ModelDims(2, 2, 0, 0), make_rng(1), std=1.0)
        shuffled = small_dataset.subset(make_rng(2).permutation(len(small_dataset)))
        assert rmse(params, shuffled) == pytest.approx(rmse(params, small_dataset), rel=1e-12)

    def test_squared_errors_add_over_a_partition(self):
        rng = make_rng(3)
        targets, preds = rng.normal(size=100), rng.normal(size=100)
        parts = [slice(0, 30), slice(30, 31), slice(31, 100)]
        total = sum(squared_error_sum(targets[s], preds[s]) for s in parts)
        assert squared_error_sum(targets, preds) == pytest.approx(total, rel=1e-12)

    def test_uncovered_items_use_zero_features(self, small_dataset):
        dims = ModelDims(latent_dim=2, mf_latent_dim=2, visual_dim=2, dim_f=3)
        params = init_params(ModelKind.VMF, 4, 5, dims, make_rng(4), std=1.0)
        store = VisualFeatureStore(3, {"i0": np.ones(3, dtype=np.float32)})
        preds = predict_dataset(params, small_dataset, store)
        mf_part = params.base.predict(small_dataset.users, small_dataset.items)
        uncovered = small_dataset.items != small_dataset.item_index.idx("i0")
        np.testing.assert_array_equal(preds[uncovered], mf_part[uncovered])
        assert np.all(preds[~uncovered] != mf_part[~uncovered])


class TestCompare:
    def test_amazon_men_row(self):
        report = compare({MF: 1.0579, MF_VMLP: 1.0034}, baseline=MF)
        assert report.improvement_pct["MF-VMLP"] == pytest.approx(5.1517, abs=1e-4)
        assert f"{report.improvement_pct['MF-VMLP']:.1f}" == "5.2"

    def test_amazon_women_row(self):
        report = compare({MF: 1.1303, MF_VMLP: 1.0575}, baseline=MF)
        assert f"{report.improvement_pct['MF-VMLP']:.1f}" == "6.4"

    def test_self_baseline(self):
        report = compare({VMF: 0.9}, baseline=VMF)
        assert report.improvement_pct == {"VMF": 0.0}

    def test_worse_model_is_negative(self):
        report = compare({MF: 1.0, VMLP: 1.1}, baseline=MF)
        assert report.improvement_pct["VMLP"] == pytest.approx(-10.0)

    def test_missing_baseline(self):
        with pytest.raises(ConfigError):
            compare({VMF: 1.0}, baseline=MF)

    def test_columns_follow_model_order(self):
        report = compare({MF_VMLP: 1.0, MF: 1.2, VMF: 1.1}, baseline=MF)
        assert list(report.rmse) == ["MF", "VMF", "MF-VMLP"]
        assert report.headline == "MF-VMLP"

    def test_report_needs_its_baseline(self):
        with pytest.raises(ValidationError):
            EvalReport(rmse={"MF": 1.0}, baseline="VMF", improvement_pct={})


class TestFormatTable:
    def test_four_models(self):
        report = compare(
            {MF: 1.1303, VMF: 1.0912, VMLP: 1.0701, MF_VMLP: 1.0575},
            baseline=MF,
            dataset="Women",
        )
        header, rule, row = format_table(report).splitlines()
        assert [c.strip() for c in header.split("|")] == [
            "Dataset",
            "MF",
            "VMF",
            "VMLP",
            "MF-VMLP",
            "improvement",
        ]
        assert set(rule) <= {"-", "+"}
        assert [c.strip() for c in row.split("|")] == [
            "Women",
            "1.1303",
            "1.0912",
            "1.0701",
            "1.0575",
            "6.4%",
        ]

    def test_single_model(self):
        row = format_table(compare({MF: 1.25}, baseline=MF)).splitlines()[2]
        assert [c.strip() for c in row.split("|")] == ["-", "1.2500", "-", "-", "-", "0.0%"]


def test_write_eval_json(tmp_path):
    report = compare({MF: 1.2, VMF: 1.1}, baseline=MF, n_test=10, dataset="synth")
    path = tmp_path / "eval.json"
    write_eval_json(report, path)
    loaded = json.loads(path.read_text())
    assert loaded["rmse"] == {"MF": 1.2, "VMF": 1.1}
    assert loaded["baseline"] == "MF"
    assert EvalReport.model_validate(loaded) == report
