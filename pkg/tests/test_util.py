"""Canonical formatting, hashing, and atomic file helpers."""

from __future__ import annotations

import json
import os

import numpy as np
import pytest

from demogen.errors import IoFailure
from demogen.util import (atomic_write_text, canonical_float, canonicalize,
                          dumps_canonical, format_float, sha256_hex,
                          stable_hash)


class TestFormatFloat:
    def test_nine_significant_digits(self):
        assert format_float(1.0 / 3.0) == "0.333333333"
        assert format_float(123456789.123) == "123456789"

    def test_zero_is_unsigned(self):
        assert format_float(0.0) == "0"
        assert format_float(-0.0) == "0"

    def test_integers_stay_short(self):
        assert format_float(2.0) == "2"
        assert format_float(-5.0) == "-5"

    def test_canonical_float_idempotent(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            v = float(rng.normal(scale=10.0 ** rng.integers(-6, 7)))
            once = canonical_float(v)
            assert canonical_float(once) == once

    def test_canonicalize_nested(self):
        doc = {"a": np.float64(0.25), "b": [np.int64(3), (1.5, 2.5)],
               "c": np.array([1.0, 2.0])}
        out = canonicalize(doc)
        assert json.dumps(out)  # plain JSON types only
        assert out["a"] == 0.25
        assert out["b"] == [3, [1.5, 2.5]]
        assert out["c"] == [1.0, 2.0]


class TestDumpsCanonical:
    def test_insertion_order_and_stable_bytes(self):
        # key order is insertion order, fixed by the writers
        assert dumps_canonical({"b": 1, "a": 2}) == '{"b":1,"a":2}'
        assert dumps_canonical({"b": 1, "a": 2}) == dumps_canonical({"b": 1, "a": 2})

    def test_round_trip_values(self):
        doc = {"x": 0.1, "y": [1, 2, 3], "s": "text"}
        parsed = json.loads(dumps_canonical(doc))
        assert parsed["x"] == canonical_float(0.1)
        assert parsed["y"] == [1, 2, 3]


class TestHashes:
    def test_sha256_hex_length(self):
        assert len(sha256_hex(b"abc")) == 16
        assert len(sha256_hex(b"abc", length=8)) == 8

    def test_sha256_hex_deterministic(self):
        assert sha256_hex(b"payload") == sha256_hex(b"payload")
        assert sha256_hex(b"payload") != sha256_hex(b"payloae")

    def test_stable_hash_mixes_parts(self):
        assert stable_hash(0, "anchors") == stable_hash(0, "anchors")
        assert stable_hash(0, "anchors") != stable_hash(0, "accessories")
        assert stable_hash(1, 2) != stable_hash(12)

    def test_stable_hash_nonnegative(self):
        for seed in range(50):
            assert stable_hash(seed, "x") >= 0


class TestAtomicWrite:
    def test_write_and_content(self, tmp_path):
        path = os.path.join(tmp_path, "out.txt")
        atomic_write_text(path, "hello\n")
        with open(path, encoding="utf-8") as fh:
            assert fh.read() == "hello\n"
        # no stray temp files left behind
        assert os.listdir(tmp_path) == ["out.txt"]

    def test_overwrite_is_clean(self, tmp_path):
        path = os.path.join(tmp_path, "out.txt")
        atomic_write_text(path, "one")
        atomic_write_text(path, "two")
        with open(path, encoding="utf-8") as fh:
            assert fh.read() == "two"

    def test_creates_missing_directories(self, tmp_path):
        path = os.path.join(tmp_path, "deep", "out.txt")
        atomic_write_text(path, "x")
        assert os.path.exists(path)

    def test_unwritable_target_raises(self, tmp_path):
        # a file where a directory is needed cannot be written through
        blocker = os.path.join(tmp_path, "blocker")
        atomic_write_text(blocker, "file, not dir")
        with pytest.raises(IoFailure):
            atomic_write_text(os.path.join(blocker, "out.txt"), "x")
