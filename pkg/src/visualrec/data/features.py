"""
Precomputed visual feature vectors and the `VFS1` binary codec.

Layout (little-endian): magic `VFS1`, u32 item_count, u32 F, then item_count records of
[u32 key_length, UTF-8 key bytes, F x float32].
"""

import struct
from collections.abc import Iterator, Mapping
from logging import getLogger
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from visualrec.data.dataset import KeyIndex
from visualrec.exceptions import DataFormatError, DimensionMismatchError
from visualrec.numeric.core import FloatArray


logger = getLogger(__name__)

MAGIC = b"VFS1"
DEFAULT_DIM = 4096

_HEADER = struct.Struct("<4sII")
_U32 = struct.Struct("<I")


class VisualFeatureStore:
    """Map from item key to an F-dimensional float32 feature vector."""

    def __init__(self, dim_f: int, vectors: Mapping[str, NDArray[np.float32]] | None = None):
        self.dim_f = dim_f
        self._keys: list[str] = []
        self._rows: dict[str, int] = {}
        matrix = np.zeros((0, dim_f), dtype=np.float32)
        if vectors:
            for key, vec in vectors.items():
                self._check_vector(key, vec)
                self._rows[key] = len(self._keys)
                self._keys.append(key)
            matrix = np.stack([np.asarray(v, dtype=np.float32) for v in vectors.values()])
        self._matrix = matrix

    def _check_vector(self, key: str, vec: NDArray[np.floating]) -> None:
        if vec.shape != (self.dim_f,):
            raise DimensionMismatchError(
                f"feature vector for {key!r} has shape {vec.shape}, expected ({self.dim_f},)"
            )
        if not np.all(np.isfinite(vec)):
            raise DataFormatError(f"non-finite feature value for item {key!r}")

    @property
    def keys(self) -> list[str]:
        return list(self._keys)

    def __len__(self) -> int:
        return len(self._keys)

    def __contains__(self, key: object) -> bool:
        return key in self._rows

    def items(self) -> Iterator[tuple[str, NDArray[np.float32]]]:
        return zip(self._keys, self._matrix, strict=True)

    def vector(self, key: str) -> NDArray[np.float32] | None:
        row = self._rows.get(key)
        return None if row is None else self._matrix[row]

    def coverage(self, item_index: KeyIndex) -> set[int]:
        """Item ids that have a vector."""
        return {idx for idx, key in enumerate(item_index) if key in self._rows}

    def aligned(self, item_index: KeyIndex) -> FloatArray:
        """
        (n_items, F) float64 matrix in item-id order; uncovered items get the zero vector.
        """
        out = np.zeros((len(item_index), self.dim_f), dtype=np.float64)
        for idx, key in enumerate(item_index):
            row = self._rows.get(key)
            if row is not None:
                out[idx] = self._matrix[row]
        return out

    def restricted_to(self, item_index: KeyIndex) -> "VisualFeatureStore":
        """Covered items of `item_index`, in item-id order."""
        return VisualFeatureStore(
            self.dim_f,
            {key: self._matrix[self._rows[key]] for key in item_index if key in self._rows},
        )


def save_visual_features(store: VisualFeatureStore, path: Path | str) -> None:
    chunks = [_HEADER.pack(MAGIC, len(store), store.dim_f)]
    for key, vec in store.items():
        encoded = key.encode("utf-8")
        chunks.append(_U32.pack(len(encoded)))
        chunks.append(encoded)
        chunks.append(vec.astype("<f4").tobytes())

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"".join(chunks))


def load_visual_features(path: Path | str) -> VisualFeatureStore:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise DataFormatError(f"cannot read feature file ({e})", path=path) from e

    if len(data) < _HEADER.size:
        raise DataFormatError("truncated header", path=path, offset=0)
    magic, count, dim_f = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise DataFormatError(f"bad magic {magic!r}", path=path, offset=0)

    offset = _HEADER.size
    record_floats = dim_f * 4
    vectors: dict[str, NDArray[np.float32]] = {}
    for _ in range(count):
        record_start = offset
        if offset + _U32.size > len(data):
            raise DataFormatError("truncated record", path=path, offset=record_start)
        (key_length,) = _U32.unpack_from(data, offset)
        offset += _U32.size
        if offset + key_length + record_floats > len(data):
            raise DataFormatError("truncated record", path=path, offset=record_start)

        try:
            key = data[offset : offset + key_length].decode("utf-8")
        except UnicodeDecodeError as e:
            raise DataFormatError("item key is not UTF-8", path=path, offset=offset) from e
        offset += key_length

        vec = np.frombuffer(data, dtype="<f4", count=dim_f, offset=offset).astype(np.float32)
        if not np.all(np.isfinite(vec)):
            bad = int(np.flatnonzero(~np.isfinite(vec))[0])
            raise DataFormatError(
                f"non-finite value in vector for {key!r}", path=path, offset=offset + 4 * bad
            )
        if key in vectors:
            raise DataFormatError(f"duplicate item key {key!r}", path=path, offset=record_start)
        vectors[key] = vec
        offset += record_floats

    if offset != len(data):
        raise DataFormatError("trailing bytes after last record", path=path, offset=offset)

    logger.info("Loaded %s visual feature vectors (F=%s) from %s", len(vectors), dim_f, path)
    return VisualFeatureStore(dim_f, vectors)
