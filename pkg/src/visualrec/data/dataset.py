import hashlib
import math
from collections.abc import Iterable, Iterator, Sequence
from dataclasses import dataclass, field
from enum import StrEnum
from logging import getLogger

import numpy as np

from visualrec.data.ratings import RawRating
from visualrec.exceptions import SplitError, UnknownIndexError, UnknownKeyError
from visualrec.numeric.core import FloatArray, IndexArray, make_rng


logger = getLogger(__name__)

DEFAULT_RATIOS = (0.8, 0.1, 0.1)


class KeyIndex:
    """Bijection between external string keys and contiguous integer ids."""

    def __init__(self, kind: str, keys: Iterable[str] = ()) -> None:
        self.kind = kind
        self._keys: list[str] = []
        self._ids: dict[str, int] = {}
        for key in keys:
            if key in self._ids:
                raise ValueError(f"duplicate {kind} key {key!r}")
            self.add(key)

    def add(self, key: str) -> int:
        """Returns the id of `key`, assigning the next free one on first sight."""
        idx = self._ids.get(key)
        if idx is None:
            idx = len(self._keys)
            self._ids[key] = idx
            self._keys.append(key)
        return idx

    def idx(self, key: str) -> int:
        try:
            return self._ids[key]
        except KeyError:
            raise UnknownKeyError(self.kind, key) from None

    def key(self, idx: int) -> str:
        if not 0 <= idx < len(self._keys):
            raise UnknownIndexError(f"{self.kind} index {idx} out of range [0, {len(self)})")
        return self._keys[idx]

    def __contains__(self, key: object) -> bool:
        return key in self._ids

    def __len__(self) -> int:
        return len(self._keys)

    def __iter__(self) -> Iterator[str]:
        return iter(self._keys)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, KeyIndex):
            return NotImplemented
        return self.kind == other.kind and self._keys == other._keys

    def __hash__(self) -> int:
        return hash((self.kind, tuple(self._keys)))


def index_digest(users: KeyIndex, items: KeyIndex) -> bytes:
    """SHA-256 over both id maps; binds checkpoints to the data they were trained on."""
    h = hashlib.sha256()
    for index in (users, items):
        for idx, key in enumerate(index):
            h.update(f"{index.kind}\t{key}\t{idx}\n".encode())
    return h.digest()


@dataclass(frozen=True, eq=False)
class RatingDataset:
    """
    Indexed (user_idx, item_idx, rating) triples. Views produced by `subset` share the parent's
    index maps, so n_users/n_items always describe the full id space.
    """

    users: IndexArray
    items: IndexArray
    ratings: FloatArray
    user_index: KeyIndex
    item_index: KeyIndex
    timestamps: tuple[int | None, ...] | None = field(default=None)

    def __post_init__(self) -> None:
        if not (len(self.users) == len(self.items) == len(self.ratings)):
            raise ValueError("users, items and ratings must have the same length")
        if len(self.users) and (self.users.min() < 0 or self.users.max() >= self.n_users):
            raise UnknownIndexError("user index out of range")
        if len(self.items) and (self.items.min() < 0 or self.items.max() >= self.n_items):
            raise UnknownIndexError("item index out of range")

    @property
    def n_users(self) -> int:
        return len(self.user_index)

    @property
    def n_items(self) -> int:
        return len(self.item_index)

    def __len__(self) -> int:
        return len(self.ratings)

    @property
    def triples(self) -> list[tuple[int, int, float]]:
        return [
            (int(u), int(i), float(r))
            for u, i, r in zip(self.users, self.items, self.ratings, strict=True)
        ]

    @property
    def digest(self) -> bytes:
        return index_digest(self.user_index, self.item_index)

    def subset(self, positions: Sequence[int] | IndexArray) -> "RatingDataset":
        pos = np.asarray(positions, dtype=np.int64)
        return RatingDataset(
            users=self.users[pos],
            items=self.items[pos],
            ratings=self.ratings[pos],
            user_index=self.user_index,
            item_index=self.item_index,
            timestamps=tuple(self.timestamps[p] for p in pos) if self.timestamps else None,
        )

    def to_raw(self) -> list[RawRating]:
        stamps = self.timestamps or (None,) * len(self)
        return [
            RawRating(
                user_key=self.user_index.key(u),
                item_key=self.item_index.key(i),
                rating=r,
                timestamp=t,
            )
            for (u, i, r), t in zip(self.triples, stamps, strict=True)
        ]


def build_dataset(
    raw: Iterable[RawRating],
    *,
    user_index: KeyIndex | None = None,
    item_index: KeyIndex | None = None,
) -> RatingDataset:
    """
    Assign ids in first-appearance order (or look them up in the given indexes) and collapse
    duplicate (user, item) pairs, keeping the last rating at the pair's first position.
    Given indexes are never extended, so both must be passed or neither.
    """
    if (user_index is None) != (item_index is None):
        raise ValueError("pass both user_index and item_index, or neither")
    users = user_index if user_index is not None else KeyIndex("user")
    items = item_index if item_index is not None else KeyIndex("item")

    pairs: dict[tuple[int, int], tuple[float, int | None]] = {}
    duplicates = 0
    for r in raw:
        if user_index is not None:
            key = (users.idx(r.user_key), items.idx(r.item_key))
        else:
            key = (users.add(r.user_key), items.add(r.item_key))
        if key in pairs:
            duplicates += 1
        pairs[key] = (r.rating, r.timestamp)

    if duplicates:
        logger.info("Collapsed %s duplicate (user, item) ratings", duplicates)

    stamps = tuple(t for (_, t) in pairs.values())
    return RatingDataset(
        users=np.fromiter((u for u, _ in pairs), dtype=np.int64, count=len(pairs)),
        items=np.fromiter((i for _, i in pairs), dtype=np.int64, count=len(pairs)),
        ratings=np.fromiter((r for r, _ in pairs.values()), dtype=np.float64, count=len(pairs)),
        user_index=users,
        item_index=items,
        timestamps=stamps if any(t is not None for t in stamps) else None,
    )


class SplitMode(StrEnum):
    GLOBAL = "global"
    PER_USER = "per_user"


@dataclass(frozen=True)
class SplitDataset:
    train: RatingDataset
    valid: RatingDataset
    test: RatingDataset

    @property
    def user_index(self) -> KeyIndex:
        return self.train.user_index

    @property
    def item_index(self) -> KeyIndex:
        return self.train.item_index


@dataclass(frozen=True)
class SplitPositions:
    train: IndexArray
    valid: IndexArray
    test: IndexArray

    def apply(self, ds: RatingDataset) -> SplitDataset:
        return SplitDataset(
            train=ds.subset(self.train), valid=ds.subset(self.valid), test=ds.subset(self.test)
        )


def validate_ratios(ratios: Sequence[float]) -> tuple[float, float, float]:
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise SplitError(f"ratios must be three positive fractions, got {tuple(ratios)}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise SplitError(f"ratios must sum to 1, got {sum(ratios)}")
    return (ratios[0], ratios[1], ratios[2])


def _cut(n: int, ratios: tuple[float, float, float]) -> tuple[int, int]:
    # the epsilon keeps e.g. 10 * (0.7 + 0.2) from flooring to 8
    first = math.floor(n * ratios[0] + 1e-9)
    second = math.floor(n * (ratios[0] + ratios[1]) + 1e-9)
    return first, second


def split_positions(
    ds: RatingDataset,
    ratios: Sequence[float] = DEFAULT_RATIOS,
    seed: int = 0,
    mode: SplitMode = SplitMode.GLOBAL,
) -> SplitPositions:
    fractions = validate_ratios(ratios)
    if len(ds) < 3:
        raise SplitError(f"need at least 3 ratings to split, got {len(ds)}")

    rng = make_rng(seed)
    parts: list[IndexArray]
    if mode is SplitMode.GLOBAL:
        order = rng.permutation(len(ds))
        first, second = _cut(len(ds), fractions)
        parts = [order[:first], order[first:second], order[second:]]
    else:
        chunks: list[list[int]] = [[], [], []]
        for user in range(ds.n_users):
            # users are visited in id order so the stream consumption is reproducible
            owned = np.flatnonzero(ds.users == user)
            if not len(owned):
                continue
            order = owned[rng.permutation(len(owned))]
            first, second = _cut(len(owned), fractions)
            chunks[0].extend(order[:first].tolist())
            chunks[1].extend(order[first:second].tolist())
            chunks[2].extend(order[second:].tolist())
        parts = [np.asarray(c, dtype=np.int64) for c in chunks]

    train, valid, test = parts
    logger.info(
        "Split %s ratings into train=%s valid=%s test=%s (seed=%s, mode=%s)",
        len(ds),
        len(train),
        len(valid),
        len(test),
        seed,
        mode.value,
    )
    return SplitPositions(train=train, valid=valid, test=test)


def split(
    ds: RatingDataset,
    ratios: Sequence[float] = DEFAULT_RATIOS,
    seed: int = 0,
    mode: SplitMode = SplitMode.GLOBAL,
) -> SplitDataset:
    return split_positions(ds, ratios, seed, mode).apply(ds)
