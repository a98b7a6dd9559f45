import struct

import numpy as np
import pytest

from visualrec.data.dataset import KeyIndex
from visualrec.data.features import (
    VisualFeatureStore,
    load_visual_features,
    save_visual_features,
)
from visualrec.exceptions import DataFormatError, DimensionMismatchError


def _record(key, values):
    encoded = key.encode("utf-8")
    return struct.pack("<I", len(encoded)) + encoded + np.asarray(values, dtype="<f4").tobytes()


def _file(path, records, count=None, dim_f=2, magic=b"VFS1"):
    header = magic + struct.pack("<II", len(records) if count is None else count, dim_f)
    path.write_bytes(header + b"".join(records))
    return path


class TestLoadVisualFeatures:
    def test_three_items(self, tmp_path):
        rng = np.random.default_rng(0)
        vectors = {f"i{k}": rng.normal(size=4096).astype(np.float32) for k in range(3)}
        path = tmp_path / "f.vfs"
        save_visual_features(VisualFeatureStore(4096, vectors), path)

        store = load_visual_features(path)
        assert store.dim_f == 4096
        assert len(store) == 3
        np.testing.assert_array_equal(store.vector("i1"), vectors["i1"])

    def test_empty_file_is_valid(self, tmp_path):
        store = load_visual_features(_file(tmp_path / "f.vfs", [], dim_f=8))
        assert len(store) == 0
        assert store.coverage(KeyIndex("item", ["a"])) == set()

    def test_nan_reports_offset(self, tmp_path):
        path = _file(tmp_path / "f.vfs", [_record("a", [1.0, 2.0]), _record("b", [0.0, np.nan])])
        with pytest.raises(DataFormatError) as e:
            load_visual_features(path)
        # header 12 + record a (4 + 1 + 8) + length prefix 4 + key 1 + first float 4
        assert e.value.offset == 12 + 13 + 4 + 1 + 4

    def test_bad_magic(self, tmp_path):
        with pytest.raises(DataFormatError) as e:
            load_visual_features(_file(tmp_path / "f.vfs", [], magic=b"XXXX"))
        assert e.value.offset == 0

    def test_truncated_record(self, tmp_path):
        path = _file(tmp_path / "f.vfs", [_record("a", [1.0, 2.0])[:-3]])
        with pytest.raises(DataFormatError) as e:
            load_visual_features(path)
        assert e.value.offset == 12

    def test_count_larger_than_records(self, tmp_path):
        with pytest.raises(DataFormatError):
            load_visual_features(_file(tmp_path / "f.vfs", [_record("a", [1, 2])], count=2))

    def test_trailing_bytes(self, tmp_path):
        path = _file(tmp_path / "f.vfs", [_record("a", [1, 2]), b"\x00"], count=1)
        with pytest.raises(DataFormatError):
            load_visual_features(path)

    def test_duplicate_key(self, tmp_path):
        path = _file(tmp_path / "f.vfs", [_record("a", [1, 2]), _record("a", [3, 4])])
        with pytest.raises(DataFormatError):
            load_visual_features(path)

    def test_save_load_save_is_byte_identical(self, tmp_path):
        store = VisualFeatureStore(
            3, {"é": np.array([1, 2, 3], np.float32), "b": np.zeros(3, np.float32)}
        )
        first, second = tmp_path / "a.vfs", tmp_path / "b.vfs"
        save_visual_features(store, first)
        save_visual_features(load_visual_features(first), second)
        assert first.read_bytes() == second.read_bytes()


class TestVisualFeatureStore:
    def test_aligned_fills_uncovered_with_zeros(self):
        store = VisualFeatureStore(2, {"b": np.array([1.0, 2.0], np.float32)})
        items = KeyIndex("item", ["a", "b"])
        np.testing.assert_array_equal(store.aligned(items), [[0.0, 0.0], [1.0, 2.0]])
        assert store.coverage(items) == {1}

    def test_restricted_to_follows_item_order(self):
        store = VisualFeatureStore(
            1,
            {
                "x": np.array([1.0], np.float32),
                "a": np.array([2.0], np.float32),
                "z": np.array([3.0], np.float32),
            },
        )
        restricted = store.restricted_to(KeyIndex("item", ["a", "q", "x"]))
        assert restricted.keys == ["a", "x"]

    def test_rejects_wrong_length(self):
        with pytest.raises(DimensionMismatchError):
            VisualFeatureStore(3, {"a": np.zeros(2, np.float32)})
