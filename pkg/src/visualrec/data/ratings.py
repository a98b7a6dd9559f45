import math
import re
from collections import Counter
from collections.abc import Iterable
from logging import getLogger
from pathlib import Path

import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator

from visualrec.exceptions import DataFormatError


logger = getLogger(__name__)

_COLUMNS = ["user_key", "item_key", "rating", "timestamp"]
# catches lines with surplus fields, which pandas would otherwise truncate
_OVERFLOW = "overflow"
_TOKENIZER_LINE = re.compile(r"Expected \d+ fields in line (\d+)")

DEFAULT_MIN_COUNT = 5


class RawRating(BaseModel):
    model_config = ConfigDict(frozen=True)

    user_key: str = Field(min_length=1)
    item_key: str = Field(min_length=1)
    rating: float
    timestamp: int | None = None

    @field_validator("rating")
    @classmethod
    def rating_is_finite(cls, v: float) -> float:
        if not math.isfinite(v):
            raise ValueError("rating must be finite")
        return v


def _is_missing(value: object) -> bool:
    return value is None or (isinstance(value, float) and math.isnan(value)) or value == ""


def load_ratings(path: Path | str, *, header: bool = False) -> list[RawRating]:
    """
    Parse a `user_key,item_key,rating[,timestamp]` file. Blank lines are skipped; any other
    line that does not parse raises DataFormatError naming its line number.
    """
    path = Path(path)
    try:
        frame = pd.read_csv(
            path,
            header=None,
            names=[*_COLUMNS, _OVERFLOW],
            dtype=str,
            index_col=False,
            keep_default_na=False,
            skip_blank_lines=False,
            skiprows=1 if header else 0,
            encoding="utf-8",
        )
    except pd.errors.EmptyDataError:
        return []
    except pd.errors.ParserError as e:
        found = _TOKENIZER_LINE.search(str(e))
        if found is None:
            raise DataFormatError(f"malformed ratings file ({e})", path=path) from e
        line = int(found.group(1))
        raise DataFormatError("expected at most 4 fields", path=path, line=line) from e
    except OSError as e:
        raise DataFormatError(f"cannot read ratings file ({e})", path=path) from e

    first_line = 2 if header else 1
    ratings: list[RawRating] = []
    for position, row in enumerate(frame.itertuples(index=False, name=None)):
        line = first_line + position
        user_key, item_key, rating, timestamp, overflow = row
        if all(_is_missing(v) for v in row):
            continue
        if not _is_missing(overflow):
            raise DataFormatError("expected at most 4 fields", path=path, line=line)
        if _is_missing(user_key) or _is_missing(item_key) or _is_missing(rating):
            raise DataFormatError("expected at least 3 fields", path=path, line=line)

        try:
            value = float(rating)
        except ValueError as e:
            raise DataFormatError(f"non-numeric rating {rating!r}", path=path, line=line) from e
        if not math.isfinite(value):
            raise DataFormatError(f"non-finite rating {rating!r}", path=path, line=line)

        stamp: int | None = None
        if not _is_missing(timestamp):
            try:
                stamp = int(timestamp)
            except ValueError as e:
                raise DataFormatError(
                    f"non-integer timestamp {timestamp!r}", path=path, line=line
                ) from e

        ratings.append(
            RawRating(
                user_key=str(user_key),
                item_key=str(item_key),
                rating=value,
                timestamp=stamp,
            )
        )

    logger.info("Loaded %s ratings from %s", len(ratings), path)
    return ratings


def write_ratings(ratings: Iterable[RawRating], path: Path | str) -> None:
    """Write ratings in the same layout load_ratings reads; no header."""
    rows = list(ratings)
    frame = pd.DataFrame(
        {
            "user_key": [r.user_key for r in rows],
            "item_key": [r.item_key for r in rows],
            "rating": pd.Series([r.rating for r in rows], dtype="float64"),
            "timestamp": pd.Series([r.timestamp for r in rows], dtype="Int64"),
        }
    )
    if not frame["timestamp"].notna().any():
        frame = frame.drop(columns="timestamp")

    Path(path).parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, header=False, index=False, lineterminator="\n", encoding="utf-8")


def filter_min_interactions(
    raw: list[RawRating], min_count: int = DEFAULT_MIN_COUNT
) -> list[RawRating]:
    """
    Keep the ratings of users who rated at least `min_count` times. Single pass over users
    only, so items are never filtered and the survivors are not re-counted.
    """
    if min_count < 1:
        raise ValueError(f"min_count must be >= 1, got {min_count}")

    counts = Counter(r.user_key for r in raw)
    kept = [r for r in raw if counts[r.user_key] >= min_count]

    logger.info(
        "Kept %s of %s ratings (%s of %s users with >= %s ratings)",
        len(kept),
        len(raw),
        sum(1 for c in counts.values() if c >= min_count),
        len(counts),
        min_count,
    )
    return kept
