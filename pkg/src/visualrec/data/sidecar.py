"""Files written by `prepare` and read back by `train`, `eval` and `predict`."""

from dataclasses import dataclass
from logging import getLogger
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ValidationError

from visualrec.data.dataset import (
    KeyIndex,
    RatingDataset,
    SplitDataset,
    SplitMode,
    SplitPositions,
    build_dataset,
)
from visualrec.data.features import VisualFeatureStore, load_visual_features, save_visual_features
from visualrec.data.ratings import load_ratings, write_ratings
from visualrec.exceptions import DataFormatError, SplitError


logger = getLogger(__name__)

RATINGS_FILE = "ratings.csv"
INDEX_FILE = "index.tsv"
SPLIT_FILE = "split.json"
FEATURES_FILE = "features.vfs"


def write_index_sidecar(user_index: KeyIndex, item_index: KeyIndex, path: Path | str) -> None:
    lines = []
    for index in (user_index, item_index):
        for idx, key in enumerate(index):
            if "\t" in key or "\n" in key:
                raise DataFormatError(f"{index.kind} key {key!r} cannot be stored in a TSV")
            lines.append(f"{index.kind}\t{key}\t{idx}\n")
    Path(path).write_text("".join(lines), encoding="utf-8")


def read_index_sidecar(path: Path | str) -> tuple[KeyIndex, KeyIndex]:
    indexes = {"user": KeyIndex("user"), "item": KeyIndex("item")}
    with Path(path).open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            fields = line.rstrip("\n").split("\t")
            if len(fields) != 3 or fields[0] not in indexes:
                raise DataFormatError("expected kind<TAB>key<TAB>idx", path=path, line=line_no)
            kind, key, raw_idx = fields
            index = indexes[kind]
            if not raw_idx.isdigit() or int(raw_idx) != len(index) or key in index:
                raise DataFormatError(
                    f"{kind} ids must be unique and contiguous", path=path, line=line_no
                )
            index.add(key)
    return indexes["user"], indexes["item"]


class SplitManifest(BaseModel):
    ratios: tuple[float, float, float]
    seed: int
    mode: SplitMode
    train: list[int]
    valid: list[int]
    test: list[int]

    @classmethod
    def from_positions(
        cls,
        positions: SplitPositions,
        *,
        ratios: tuple[float, float, float],
        seed: int,
        mode: SplitMode,
    ) -> "SplitManifest":
        return cls(
            ratios=ratios,
            seed=seed,
            mode=mode,
            train=positions.train.tolist(),
            valid=positions.valid.tolist(),
            test=positions.test.tolist(),
        )

    def positions(self) -> SplitPositions:
        return SplitPositions(
            train=np.asarray(self.train, dtype=np.int64),
            valid=np.asarray(self.valid, dtype=np.int64),
            test=np.asarray(self.test, dtype=np.int64),
        )


@dataclass(frozen=True)
class PreparedData:
    dataset: RatingDataset
    split: SplitDataset
    features: VisualFeatureStore | None

    @property
    def digest(self) -> bytes:
        return self.dataset.digest


def write_prepared(
    out_dir: Path | str,
    dataset: RatingDataset,
    manifest: SplitManifest,
    features: VisualFeatureStore | None,
) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_ratings(dataset.to_raw(), out / RATINGS_FILE)
    write_index_sidecar(dataset.user_index, dataset.item_index, out / INDEX_FILE)
    (out / SPLIT_FILE).write_text(manifest.model_dump_json(indent=2) + "\n", encoding="utf-8")
    if features is not None:
        save_visual_features(features.restricted_to(dataset.item_index), out / FEATURES_FILE)
    logger.info("Wrote prepared dataset to %s", out)


def load_prepared(data_dir: Path | str) -> PreparedData:
    root = Path(data_dir)
    user_index, item_index = read_index_sidecar(root / INDEX_FILE)
    dataset = build_dataset(
        load_ratings(root / RATINGS_FILE), user_index=user_index, item_index=item_index
    )

    try:
        manifest = SplitManifest.model_validate_json((root / SPLIT_FILE).read_text("utf-8"))
    except ValidationError as e:
        raise DataFormatError(f"invalid split manifest ({e})", path=root / SPLIT_FILE) from e
    positions = manifest.positions()
    covered = np.concatenate([positions.train, positions.valid, positions.test])
    expected = np.arange(len(dataset))
    if len(covered) != len(dataset) or not np.array_equal(np.sort(covered), expected):
        raise SplitError(f"{root / SPLIT_FILE} does not partition {len(dataset)} ratings")

    features_path = root / FEATURES_FILE
    features = load_visual_features(features_path) if features_path.exists() else None
    return PreparedData(dataset=dataset, split=positions.apply(dataset), features=features)

