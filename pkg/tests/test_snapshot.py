import numpy as np
import pytest

from kgrec.errors import CorruptSnapshot
from kgrec.snapshot import (
    FORMAT_VERSION,
    MAGIC_MODEL,
    load_id_map,
    load_matrix,
    load_sections,
    save_id_map,
    save_matrix,
    save_sections,
)


class TestMatrix:
    def test_round_trip(self, tmp_path, rng):
        m = rng.normal(size=(7, 5)).astype(np.float32).astype(np.float64)
        path = tmp_path / "m.kgsr"
        save_matrix(path, m)
        np.testing.assert_array_equal(load_matrix(path), m)

    def test_header_layout(self, tmp_path):
        path = tmp_path / "m.kgsr"
        save_matrix(path, np.zeros((2, 3)))
        blob = path.read_bytes()
        assert blob[:4] == MAGIC_MODEL
        assert int.from_bytes(blob[4:8], "little") == FORMAT_VERSION
        assert int.from_bytes(blob[8:12], "little") == 2
        assert int.from_bytes(blob[12:16], "little") == 3
        assert len(blob) == 16 + 4 * 6

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.kgsr"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(CorruptSnapshot):
            load_matrix(path)

    def test_truncation(self, tmp_path):
        path = tmp_path / "m.kgsr"
        save_matrix(path, np.zeros((4, 4)))
        path.write_bytes(path.read_bytes()[:-3])
        with pytest.raises(CorruptSnapshot):
            load_matrix(path)

    def test_bad_version(self, tmp_path):
        path = tmp_path / "m.kgsr"
        save_matrix(path, np.zeros((1, 1)))
        blob = bytearray(path.read_bytes())
        blob[4] = 99
        path.write_bytes(bytes(blob))
        with pytest.raises(CorruptSnapshot):
            load_matrix(path)

    def test_rejects_non_2d(self, tmp_path):
        with pytest.raises(ValueError):
            save_matrix(tmp_path / "x.kgsr", np.zeros(3))


class TestSections:
    def test_round_trip(self, tmp_path, rng):
        sections = {
            "fusion.W_f": rng.normal(size=(4, 8)).astype(np.float32).astype(np.float64),
            "gat.0.a": rng.normal(size=8).astype(np.float32).astype(np.float64),
        }
        path = tmp_path / "s.kgsr"
        save_sections(path, sections)
        loaded = load_sections(path)
        assert set(loaded) == set(sections)
        np.testing.assert_array_equal(loaded["fusion.W_f"],
                                      sections["fusion.W_f"])
        # 1-d arrays come back as a single row
        np.testing.assert_array_equal(loaded["gat.0.a"][0], sections["gat.0.a"])

    def test_reserialization_is_byte_identical(self, tmp_path, rng):
        sections = {"a": rng.normal(size=(3, 3))}
        p1, p2 = tmp_path / "one.kgsr", tmp_path / "two.kgsr"
        save_sections(p1, sections)
        save_sections(p2, load_sections(p1))
        assert p1.read_bytes() == p2.read_bytes()

    def test_trailing_bytes_rejected(self, tmp_path):
        path = tmp_path / "s.kgsr"
        save_sections(path, {"a": np.zeros((1, 1))})
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(CorruptSnapshot):
            load_sections(path)

    def test_truncated_table_rejected(self, tmp_path):
        path = tmp_path / "s.kgsr"
        save_sections(path, {"block": np.ones((4, 4))})
        path.write_bytes(path.read_bytes()[:20])
        with pytest.raises(CorruptSnapshot):
            load_sections(path)


class TestIdMap:
    def test_round_trip(self, tmp_path):
        ids = ["a1", "u9", "p3"]
        path = tmp_path / "ids.tsv"
        save_id_map(path, ids)
        assert load_id_map(path) == ids

    def test_malformed(self, tmp_path):
        path = tmp_path / "ids.tsv"
        path.write_text("a1\t0\tjunk\n", encoding="utf-8")
        with pytest.raises(CorruptSnapshot):
            load_id_map(path)
