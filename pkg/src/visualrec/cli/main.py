"""
`visualrec` command-line entry point.

    visualrec prepare --ratings r.csv [--features f.vfs] --out data/
    visualrec synth --out synth/ [--visual-weight 0.6 ...]
    visualrec train --data data/ --model VMF [--config run.cfg] --out vmf.vrc
    visualrec eval mf.vrc vmf.vrc --data data/ [--json-out eval.json]
    visualrec predict --checkpoint vmf.vrc --data data/ --user u1 --item i7

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error, 3 unknown key.
"""

import argparse
import logging
import sys
from collections.abc import Callable, Sequence
from logging import getLogger
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import ValidationError

from visualrec.data.dataset import (
    DEFAULT_RATIOS,
    RatingDataset,
    SplitMode,
    build_dataset,
    index_digest,
    split_positions,
    validate_ratios,
)
from visualrec.data.features import VisualFeatureStore, load_visual_features
from visualrec.data.ratings import DEFAULT_MIN_COUNT, filter_min_interactions, load_ratings
from visualrec.data.sidecar import (
    FEATURES_FILE,
    INDEX_FILE,
    PreparedData,
    SplitManifest,
    load_prepared,
    read_index_sidecar,
    write_prepared,
)
from visualrec.evaluation.metrics import clamp, compare, format_table, rmse, write_eval_json
from visualrec.exceptions import (
    ConfigError,
    ModelKindMismatchError,
    SplitError,
    UnknownKeyError,
    VisRecException,
)
from visualrec.models.base import ModelKind, ModelParams
from visualrec.synth.generator import SynthConfig, write_synthetic
from visualrec.training.checkpoint import read_checkpoint, save_checkpoint
from visualrec.training.config import build_train_config, read_run_config
from visualrec.training.trainer import train
from visualrec.utils.logging import create_stream_logging_handler


logger = getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_UNKNOWN_KEY = 3

# (flag, TrainConfig field, argparse type)
_TRAIN_FLAGS: list[tuple[str, str, Callable[[str], Any]]] = [
    ("--model", "model_kind", str),
    ("--latent-dim", "latent_dim", int),
    ("--mf-latent-dim", "mf_latent_dim", int),
    ("--visual-dim", "visual_dim", int),
    ("--tower-widths", "tower_widths", str),
    ("--learning-rate", "learning_rate", float),
    ("--lambda-u", "lambda_u", float),
    ("--lambda-v", "lambda_v", float),
    ("--lambda-net", "lambda_net", float),
    ("--batch-size", "batch_size", int),
    ("--max-epochs", "max_epochs", int),
    ("--patience", "patience", int),
    ("--seed", "seed", int),
    ("--init-std", "init_std", float),
    ("--optimizer", "optimizer", str),
    ("--momentum", "momentum", float),
    ("--warm-start-mf", "warm_start_mf", Path),
    ("--warm-start-vmlp", "warm_start_vmlp", Path),
    ("--warm-start-alpha", "warm_start_alpha", float),
]
_TRAIN_SWITCHES = [("--use-bias", "use_bias"), ("--clamp-eval", "clamp_eval")]

_SYNTH_FLAGS: list[tuple[str, str, Callable[[str], Any]]] = [
    ("--n-users", "n_users", int),
    ("--n-items", "n_items", int),
    ("--k-true", "k_true", int),
    ("--d-true", "d_true", int),
    ("--dim-f", "dim_f", int),
    ("--visual-weight", "visual_weight", float),
    ("--noise-std", "noise_std", float),
    ("--density", "density", float),
    ("--seed", "seed", int),
]


def _require_file(path: Path, what: str) -> Path:
    if not path.is_file():
        raise ConfigError(f"{what} not found: {path}")
    return path


def _parse_ratios(value: str) -> tuple[float, float, float]:
    try:
        fractions = [float(p) for p in value.split(",")]
    except ValueError as e:
        message = f"expected comma-separated fractions, got {value!r}"
        raise argparse.ArgumentTypeError(message) from e
    try:
        return validate_ratios(fractions)
    except SplitError as e:
        raise argparse.ArgumentTypeError(str(e)) from e


def _positive_int(value: str) -> int:
    try:
        number = int(value)
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected an integer, got {value!r}") from e
    if number < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {number}")
    return number


def _print_stats(dataset: RatingDataset) -> None:
    print(f"users={dataset.n_users:,} items={dataset.n_items:,} feedback={len(dataset):,}")


def cmd_prepare(args: argparse.Namespace) -> int:
    ratings_path = _require_file(args.ratings, "ratings file")
    features = None
    if args.features is not None:
        features = load_visual_features(_require_file(args.features, "feature file"))

    raw = filter_min_interactions(load_ratings(ratings_path, header=args.header), args.min_count)
    dataset = build_dataset(raw)
    mode = SplitMode(args.split_mode)
    positions = split_positions(dataset, args.split_ratios, args.split_seed, mode)
    manifest = SplitManifest.from_positions(
        positions,
        ratios=args.split_ratios,
        seed=args.split_seed,
        mode=mode,
    )
    write_prepared(args.out, dataset, manifest, features)

    _print_stats(dataset)
    if features is not None:
        covered = len(features.coverage(dataset.item_index))
        print(f"features={covered:,}/{dataset.n_items:,} F={features.dim_f}")
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    values = {field: getattr(args, field) for _, field, _ in _SYNTH_FLAGS}
    try:
        config = SynthConfig.model_validate({k: v for k, v in values.items() if v is not None})
    except ValidationError as e:
        raise ConfigError(f"invalid synthetic-data configuration: {e}") from e
    data = write_synthetic(config, args.out)
    _print_stats(data.dataset)
    return EXIT_OK


def _load_data_dir(data_dir: Path) -> PreparedData:
    _require_file(data_dir / INDEX_FILE, "prepared data index")
    return load_prepared(data_dir)


def cmd_train(args: argparse.Namespace) -> int:
    file_values = read_run_config(args.config) if args.config is not None else {}
    overrides = {field: getattr(args, field) for _, field, _ in _TRAIN_FLAGS}
    overrides.update({field: getattr(args, field) for _, field in _TRAIN_SWITCHES})
    config = build_train_config(file_values, overrides)

    prepared = _load_data_dir(args.data)
    params, report = train(config, prepared.split, prepared.features)

    save_checkpoint(params, args.out, prepared.digest)
    report_path = args.out.with_suffix(".json")
    report_path.write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")
    logger.info("Wrote training report to %s", report_path)
    return EXIT_OK


def _check_against_data(
    path: Path, params: ModelParams, digest: bytes, expected_digest: bytes, dim_f: int | None
) -> None:
    if digest != expected_digest:
        raise ConfigError(f"{path} was trained on a different user/item index")
    if params.uses_features:
        if dim_f is None:
            raise ConfigError(f"{path} holds a {params.kind.label} model but no features exist")
        if params.dims.dim_f != dim_f:
            raise ConfigError(f"{path} expects F={params.dims.dim_f}, features have F={dim_f}")


def cmd_eval(args: argparse.Namespace) -> int:
    prepared = _load_data_dir(args.data)
    dim_f = prepared.features.dim_f if prepared.features is not None else None
    test = prepared.split.test

    scores: dict[ModelKind, float] = {}
    for path in args.checkpoints:
        params, digest = read_checkpoint(_require_file(path, "checkpoint"))
        _check_against_data(path, params, digest, prepared.digest, dim_f)
        if params.kind in scores:
            raise ConfigError(f"more than one {params.kind.label} checkpoint given")
        scores[params.kind] = rmse(params, test, prepared.features, args.clamp)
        logger.info("%s: test_rmse=%.6f", params.kind.label, scores[params.kind])

    try:
        baseline = ModelKind.parse(args.baseline) if args.baseline else min(scores)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    report = compare(
        scores,
        baseline,
        n_test=len(test),
        dataset=args.dataset_name or args.data.resolve().name,
        clamped=args.clamp,
    )
    print(format_table(report))
    write_eval_json(report, args.json_out)
    return EXIT_OK


def cmd_predict(args: argparse.Namespace) -> int:
    params, digest = read_checkpoint(_require_file(args.checkpoint, "checkpoint"))
    user_index, item_index = read_index_sidecar(_require_file(args.data / INDEX_FILE, "index"))
    features_path = args.data / FEATURES_FILE
    store: VisualFeatureStore | None = None
    if params.uses_features and features_path.is_file():
        store = load_visual_features(features_path)
    _check_against_data(
        args.checkpoint,
        params,
        digest,
        index_digest(user_index, item_index),
        store.dim_f if store is not None else None,
    )

    u, i = user_index.idx(args.user), item_index.idx(args.item)
    rows = None
    if store is not None:
        # uncovered items fall back to the zero vector
        vector = store.vector(args.item)
        rows = np.zeros((1, store.dim_f)) if vector is None else vector[None, :]
    value = float(params.predict([u], [i], rows)[0])
    if args.clamp:
        print(f"{value:.6f} {float(clamp(value)):.6f}")
    else:
        print(f"{value:.6f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="visualrec", description="Visual-aware rating prediction"
    )
    parser.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="logging level for progress output",
    )
    parser.add_argument("--quiet", action="store_true", help="only log warnings and errors")
    sub = parser.add_subparsers(dest="command", required=True)

    prepare = sub.add_parser("prepare", help="filter, index and split a ratings file")
    prepare.add_argument("--ratings", type=Path, required=True)
    prepare.add_argument("--features", type=Path, help="VFS1 visual feature file")
    prepare.add_argument("--min-count", type=_positive_int, default=DEFAULT_MIN_COUNT)
    prepare.add_argument("--out", type=Path, required=True)
    prepare.add_argument("--header", action="store_true", help="skip the first line")
    prepare.add_argument("--split-ratios", type=_parse_ratios, default=DEFAULT_RATIOS)
    prepare.add_argument("--split-seed", type=int, default=0)
    prepare.add_argument(
        "--split-mode", choices=[m.value for m in SplitMode], default=SplitMode.GLOBAL.value
    )
    prepare.set_defaults(handler=cmd_prepare)

    synth = sub.add_parser("synth", help="generate synthetic ratings and features")
    synth.add_argument("--out", type=Path, required=True)
    for flag, field, type_ in _SYNTH_FLAGS:
        synth.add_argument(flag, dest=field, type=type_, default=None)
    synth.set_defaults(handler=cmd_synth)

    train_cmd = sub.add_parser("train", help="train one model on a prepared data directory")
    train_cmd.add_argument("--data", type=Path, required=True)
    train_cmd.add_argument("--config", type=Path, help="key = value run configuration")
    train_cmd.add_argument("--out", type=Path, required=True, help="checkpoint path")
    for flag, field, type_ in _TRAIN_FLAGS:
        train_cmd.add_argument(flag, dest=field, type=type_, default=None)
    for flag, field in _TRAIN_SWITCHES:
        train_cmd.add_argument(flag, dest=field, action="store_const", const=True, default=None)
    train_cmd.set_defaults(handler=cmd_train)

    eval_cmd = sub.add_parser("eval", help="compare checkpoints on the test split")
    eval_cmd.add_argument("checkpoints", type=Path, nargs="+")
    eval_cmd.add_argument("--data", type=Path, required=True)
    eval_cmd.add_argument("--json-out", type=Path, default=Path("eval.json"))
    eval_cmd.add_argument("--dataset-name")
    eval_cmd.add_argument("--baseline", help="model kind to compare against (default: simplest)")
    eval_cmd.add_argument("--clamp", action="store_true", help="clamp predictions to [1, 5]")
    eval_cmd.set_defaults(handler=cmd_eval)

    predict = sub.add_parser("predict", help="predict one rating")
    predict.add_argument("--checkpoint", type=Path, required=True)
    predict.add_argument("--data", type=Path, required=True)
    predict.add_argument("--user", required=True)
    predict.add_argument("--item", required=True)
    predict.add_argument("--clamp", action="store_true", help="also print the clamped value")
    predict.set_defaults(handler=cmd_predict)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE

    level = logging.WARNING if args.quiet else getattr(logging, args.log_level)
    handler = create_stream_logging_handler(level, stream=sys.stdout, fmt="%(message)s")
    try:
        return int(args.handler(args))
    except UnknownKeyError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_UNKNOWN_KEY
    except (ConfigError, ModelKindMismatchError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except VisRecException as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILURE
    finally:
        logging.getLogger().removeHandler(handler)


if __name__ == "__main__":
    sys.exit(main())
