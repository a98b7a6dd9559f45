import json

import numpy as np
import pytest

from visualrec.cli.main import EXIT_OK, EXIT_UNKNOWN_KEY, EXIT_USAGE, main
from visualrec.data.features import VisualFeatureStore, save_visual_features
from visualrec.data.sidecar import INDEX_FILE, read_index_sidecar
from visualrec.models.vmf import VMFParams
from visualrec.training.checkpoint import load_checkpoint


TRAIN_FLAGS = ["--latent-dim", "3", "--visual-dim", "2", "--optimizer", "adam", "--max-epochs", "3"]
KINDS = ("MF", "VMF", "VMLP", "MF-VMLP")


def _run(*argv):
    return main(["--quiet", *map(str, argv)])


def _write_grid(path, n_users=4, n_items=5, seed=0):
    rng = np.random.default_rng(seed)
    lines = [
        f"u{u},i{i},{int(rng.integers(1, 6))}" for u in range(n_users) for i in range(n_items)
    ]
    path.write_text("\n".join(lines) + "\n")
    return path


def _without_wall_time(raw):
    report = json.loads(raw)
    del report["wall_time"]
    return report


def _pipeline(root):
    """synth, prepare, train every model and eval, all under `root`."""
    shape = ["--n-users", 30, "--n-items", 40, "--dim-f", 8, "--density", 0.3]
    raw = root / "raw"
    assert _run("synth", "--out", raw, *shape, "--seed", 2) == EXIT_OK
    inputs = ["--ratings", raw / "ratings.csv", "--features", raw / "features.vfs"]
    assert _run("prepare", *inputs, "--out", root / "data") == EXIT_OK
    checkpoints = [root / f"{kind.lower()}.vrc" for kind in KINDS]
    for kind, out in zip(KINDS, checkpoints, strict=True):
        args = ["train", "--data", root / "data", "--model", kind, *TRAIN_FLAGS, "--seed", 7]
        assert _run(*args, "--out", out) == EXIT_OK
    eval_args = ["--data", root / "data", "--json-out", root / "eval.json"]
    assert _run("eval", *checkpoints, *eval_args) == EXIT_OK
    return root


@pytest.fixture
def synth_dir(tmp_path, capsys):
    raw = tmp_path / "raw"
    shape = ["--n-users", 30, "--n-items", 40, "--dim-f", 8, "--density", 0.3]
    assert _run("synth", "--out", raw, *shape, "--seed", 1) == EXIT_OK
    data = tmp_path / "data"
    inputs = ["--ratings", raw / "ratings.csv", "--features", raw / "features.vfs"]
    assert _run("prepare", *inputs, "--out", data) == EXIT_OK
    capsys.readouterr()
    return data


class TestPrepare:
    def test_filters_and_reports_counts(self, tmp_path, capsys):
        lines = [f"A,i{k},4" for k in range(5)]
        lines += [f"B,i{k},3" for k in range(5)]
        lines += [f"C,i{k},2" for k in range(4)]
        ratings = tmp_path / "r.csv"
        ratings.write_text("\n".join(lines) + "\n")
        assert _run("prepare", "--ratings", ratings, "--min-count", 5, "--out", tmp_path / "d") == 0
        assert "users=2 items=5 feedback=10" in capsys.readouterr().out
        users, items = read_index_sidecar(tmp_path / "d" / INDEX_FILE)
        assert list(users) == ["A", "B"]
        assert len(items) == 5

    def test_missing_ratings_file(self, tmp_path, capsys):
        code = _run("prepare", "--ratings", tmp_path / "absent.csv", "--out", tmp_path / "d")
        assert code == EXIT_USAGE
        assert "not found" in capsys.readouterr().err

    def test_bad_split_ratios(self, tmp_path):
        ratings = _write_grid(tmp_path / "r.csv")
        code = _run("prepare", "--ratings", ratings, "--out", tmp_path / "d", "--split-ratios", "x")
        assert code == EXIT_USAGE

    @pytest.mark.parametrize("ratios", ["0.5,0.5", "0.8,0.1,0.2", "1,0,0"])
    def test_invalid_split_ratios(self, tmp_path, capsys, ratios):
        ratings = _write_grid(tmp_path / "r.csv")
        args = ["prepare", "--ratings", ratings, "--out", tmp_path / "d"]
        assert _run(*args, "--split-ratios", ratios) == EXIT_USAGE
        assert "--split-ratios" in capsys.readouterr().err
        assert not (tmp_path / "d").exists()

    @pytest.mark.parametrize("count", ["0", "-3", "two"])
    def test_invalid_min_count(self, tmp_path, capsys, count):
        ratings = _write_grid(tmp_path / "r.csv")
        args = ["prepare", "--ratings", ratings, "--out", tmp_path / "d"]
        assert _run(*args, "--min-count", count) == EXIT_USAGE
        assert "--min-count" in capsys.readouterr().err

    def test_reports_feature_coverage(self, tmp_path, capsys):
        ratings = _write_grid(tmp_path / "r.csv")
        features = tmp_path / "f.vfs"
        save_visual_features(VisualFeatureStore(3, {"i0": np.ones(3, np.float32)}), features)
        out = tmp_path / "d"
        args = ["prepare", "--ratings", ratings, "--features", features, "--min-count", 1]
        assert _run(*args, "--out", out) == EXIT_OK
        assert "features=1/5 F=3" in capsys.readouterr().out


class TestPipeline:
    def test_train_eval_predict(self, tmp_path, synth_dir, capsys):
        checkpoints = []
        for kind in KINDS:
            out = tmp_path / f"{kind.lower()}.vrc"
            args = ["train", "--data", synth_dir, "--model", kind, *TRAIN_FLAGS]
            assert _run(*args, "--out", out) == EXIT_OK
            assert out.is_file()
            report = json.loads(out.with_suffix(".json").read_text())
            assert report["model_kind"] == kind
            assert np.isfinite(report["best_valid_rmse"])
            checkpoints.append(out)

        eval_json = tmp_path / "eval.json"
        assert _run("eval", *checkpoints, "--data", synth_dir, "--json-out", eval_json) == 0
        table = capsys.readouterr().out.splitlines()
        assert [c.strip() for c in table[0].split("|")][1:5] == ["MF", "VMF", "VMLP", "MF-VMLP"]
        assert table[2].rstrip().endswith("%")
        report = json.loads(eval_json.read_text())
        assert report["baseline"] == "MF"
        assert set(report["rmse"]) == {"MF", "VMF", "VMLP", "MF-VMLP"}

        users, items = read_index_sidecar(synth_dir / INDEX_FILE)
        user, item = next(iter(users)), next(iter(items))
        args = ["predict", "--checkpoint", checkpoints[1], "--data", synth_dir]
        assert _run(*args, "--user", user, "--item", item) == EXIT_OK
        out = capsys.readouterr().out.split()
        assert len(out) == 1
        float(out[0])

    def test_identical_pipelines_give_identical_artifacts(self, tmp_path):
        first, second = _pipeline(tmp_path / "a"), _pipeline(tmp_path / "b")
        files = sorted(p.relative_to(first) for p in first.rglob("*") if p.is_file())
        assert files == sorted(p.relative_to(second) for p in second.rglob("*") if p.is_file())
        names = {f.name for f in files}
        assert {"ratings.csv", "features.vfs", "truth.json", "split.json", "eval.json"} <= names
        assert {f"{kind.lower()}.vrc" for kind in KINDS} <= names

        reports = {f"{kind.lower()}.json" for kind in KINDS}
        for name in files:
            a, b = (first / name).read_bytes(), (second / name).read_bytes()
            if name.name in reports:
                assert _without_wall_time(a) == _without_wall_time(b), name
            else:
                assert a == b, name

    def test_single_checkpoint_is_its_own_baseline(self, tmp_path, synth_dir, capsys):
        ckpt = tmp_path / "mf.vrc"
        assert _run("train", "--data", synth_dir, *TRAIN_FLAGS, "--out", ckpt) == EXIT_OK
        capsys.readouterr()
        assert _run("eval", ckpt, "--data", synth_dir, "--json-out", tmp_path / "e.json") == 0
        assert capsys.readouterr().out.splitlines()[2].rstrip().endswith("0.0%")

    def test_run_config_file_and_flag_precedence(self, tmp_path, synth_dir):
        config = tmp_path / "run.cfg"
        config.write_text("model_kind = VMF\nmax_epochs = 2\nlatent_dim = 2\nvisual_dim = 2\n")
        ckpt = tmp_path / "m.vrc"
        args = ["train", "--data", synth_dir, "--config", config, "--max-epochs", 1]
        assert _run(*args, "--out", ckpt) == EXIT_OK
        report = json.loads(ckpt.with_suffix(".json").read_text())
        assert report["model_kind"] == "VMF"
        assert len(report["epochs"]) == 1

    def test_unknown_config_key(self, tmp_path, synth_dir, capsys):
        config = tmp_path / "run.cfg"
        config.write_text("latent_dim = 2\nlearnin_rate = 0.1\n")
        code = _run("train", "--data", synth_dir, "--config", config, "--out", tmp_path / "m.vrc")
        assert code == EXIT_USAGE
        assert "line 2" in capsys.readouterr().err
        assert not (tmp_path / "m.vrc").exists()


class TestErrors:
    @pytest.fixture
    def grid_dir(self, tmp_path):
        ratings = _write_grid(tmp_path / "r.csv")
        assert _run("prepare", "--ratings", ratings, "--min-count", 1, "--out", tmp_path / "d") == 0
        return tmp_path / "d"

    def test_visual_model_without_features(self, tmp_path, grid_dir):
        ckpt = tmp_path / "m.vrc"
        assert _run("train", "--data", grid_dir, "--model", "VMLP", "--out", ckpt) == EXIT_USAGE
        assert not ckpt.exists()

    def test_unknown_user(self, tmp_path, grid_dir, capsys):
        ckpt = tmp_path / "m.vrc"
        assert _run("train", "--data", grid_dir, "--max-epochs", 1, "--out", ckpt) == EXIT_OK
        args = ["predict", "--checkpoint", ckpt, "--data", grid_dir]
        code = _run(*args, "--user", "ghost", "--item", "i0")
        assert code == EXIT_UNKNOWN_KEY
        assert "ghost" in capsys.readouterr().err

    def test_checkpoint_from_another_index(self, tmp_path, grid_dir):
        other = tmp_path / "other"
        ratings = _write_grid(tmp_path / "r2.csv", n_users=5)
        assert _run("prepare", "--ratings", ratings, "--min-count", 1, "--out", other) == EXIT_OK
        ckpt = tmp_path / "m.vrc"
        assert _run("train", "--data", other, "--max-epochs", 1, "--out", ckpt) == EXIT_OK
        code = _run("eval", ckpt, "--data", grid_dir, "--json-out", tmp_path / "e.json")
        assert code == EXIT_USAGE

    def test_duplicate_kinds(self, tmp_path, grid_dir):
        ckpt = tmp_path / "m.vrc"
        assert _run("train", "--data", grid_dir, "--max-epochs", 1, "--out", ckpt) == EXIT_OK
        code = _run("eval", ckpt, ckpt, "--data", grid_dir, "--json-out", tmp_path / "e.json")
        assert code == EXIT_USAGE

    def test_missing_required_flag(self):
        assert main(["train"]) == EXIT_USAGE


def test_uncovered_item_falls_back_to_the_mf_part(tmp_path, capsys):
    ratings = _write_grid(tmp_path / "r.csv")
    features = tmp_path / "f.vfs"
    store = VisualFeatureStore(3, {"i0": np.ones(3, np.float32), "i1": np.ones(3, np.float32)})
    save_visual_features(store, features)
    data = tmp_path / "d"
    args = ["prepare", "--ratings", ratings, "--features", features, "--min-count", 1]
    assert _run(*args, "--out", data) == EXIT_OK
    ckpt = tmp_path / "vmf.vrc"
    train_args = ["train", "--data", data, "--model", "VMF", "--latent-dim", 2, "--visual-dim", 2]
    assert _run(*train_args, "--init-std", 0.5, "--max-epochs", 5, "--out", ckpt) == EXIT_OK
    capsys.readouterr()

    args = ["predict", "--checkpoint", ckpt, "--data", data, "--user", "u2", "--item", "i4"]
    assert _run(*args) == EXIT_OK
    printed = capsys.readouterr().out.strip()

    params = load_checkpoint(ckpt)
    assert isinstance(params, VMFParams)
    users, items = read_index_sidecar(data / INDEX_FILE)
    mf_part = params.base.predict([users.idx("u2")], [items.idx("i4")])[0]
    assert printed == f"{mf_part:.6f}"
