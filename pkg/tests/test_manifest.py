"""Asset manifest parsing, validation, and negative material constraints."""

from __future__ import annotations

import json

import pytest

from demogen.errors import ManifestSyntaxError, SchemaError, SemanticError
from demogen.manifest import (DEFAULT_BANNED_MATERIALS, AssetEntry,
                              apply_negative_constraints, parse_manifest,
                              write_manifest)

from conftest import MINIMAL_MANIFEST_DOC


def _doc_with(**overrides) -> str:
    """Minimal document with single fields patched for fault injection."""
    doc = json.loads(MINIMAL_MANIFEST_DOC)
    doc.update(overrides)
    return json.dumps(doc)


class TestParseManifest:
    def test_minimal_document(self):
        manifest = parse_manifest(MINIMAL_MANIFEST_DOC)
        assert len(manifest.entries) == 2
        assert manifest.target == "mug"
        assert manifest.receptacle == "table"
        assert manifest.entry("table").category == "anchor"
        assert manifest.entry("mug").parent == "table"

    def test_accepts_bytes(self):
        manifest = parse_manifest(MINIMAL_MANIFEST_DOC.encode("utf-8"))
        assert len(manifest.entries) == 2

    def test_missing_parent_names_the_accessory(self):
        doc = json.loads(MINIMAL_MANIFEST_DOC)
        doc["entries"][1]["parent"] = "shelf"
        with pytest.raises(SemanticError) as err:
            parse_manifest(json.dumps(doc))
        assert err.value.entry == "mug"
        assert "shelf" in str(err.value)

    def test_zero_extent_rejected(self):
        doc = json.loads(MINIMAL_MANIFEST_DOC)
        doc["entries"][1]["nominal_extent_m"] = [0.0, 0.0, 0.0]
        with pytest.raises(SemanticError) as err:
            parse_manifest(json.dumps(doc))
        assert err.value.entry == "mug"

    def test_oversized_extent_rejected(self):
        doc = json.loads(MINIMAL_MANIFEST_DOC)
        doc["entries"][0]["nominal_extent_m"] = [11.0, 1.0, 1.0]
        with pytest.raises(SemanticError):
            parse_manifest(json.dumps(doc))

    def test_duplicate_names_rejected(self):
        doc = json.loads(MINIMAL_MANIFEST_DOC)
        doc["entries"][1]["name"] = "table"
        doc["target"] = "table"
        with pytest.raises(SemanticError):
            parse_manifest(json.dumps(doc))

    def test_malformed_json_is_syntax_error(self):
        with pytest.raises(ManifestSyntaxError):
            parse_manifest("{not json")

    def test_unknown_top_level_key_is_schema_error(self):
        doc = json.loads(MINIMAL_MANIFEST_DOC)
        doc["extra"] = 1
        with pytest.raises(SchemaError):
            parse_manifest(json.dumps(doc))

    def test_unknown_entry_key_is_schema_error(self):
        doc = json.loads(MINIMAL_MANIFEST_DOC)
        doc["entries"][0]["mass_kg"] = 4.0
        with pytest.raises(SchemaError) as err:
            parse_manifest(json.dumps(doc))
        assert err.value.entry == "table"

    def test_missing_field_is_schema_error(self):
        doc = json.loads(MINIMAL_MANIFEST_DOC)
        del doc["entries"][1]["description"]
        with pytest.raises(SchemaError):
            parse_manifest(json.dumps(doc))

    def test_target_must_be_accessory(self):
        with pytest.raises(SemanticError):
            parse_manifest(_doc_with(target="table"))

    def test_target_must_exist(self):
        with pytest.raises(SemanticError):
            parse_manifest(_doc_with(target="ghost"))

    def test_anchor_with_parent_rejected(self):
        doc = json.loads(MINIMAL_MANIFEST_DOC)
        doc["entries"][0]["parent"] = "mug"
        with pytest.raises(SemanticError):
            parse_manifest(json.dumps(doc))

    def test_round_trip_preserves_fields(self):
        manifest = parse_manifest(MINIMAL_MANIFEST_DOC)
        again = parse_manifest(write_manifest(manifest))
        assert again == manifest

    def test_round_trip_bytes_stable(self):
        manifest = parse_manifest(MINIMAL_MANIFEST_DOC)
        text = write_manifest(manifest)
        assert write_manifest(parse_manifest(text)) == text


class TestNegativeConstraints:
    def _entry(self, tags) -> AssetEntry:
        return AssetEntry(name="lamp", category="accessory",
                          description="desk lamp", style_tags=tuple(tags),
                          nominal_extent_m=(0.1, 0.1, 0.3), parent="table")

    def test_banned_tag_moved_to_forbidden(self):
        entry = self._entry(["wood", "mirror"])
        out = apply_negative_constraints(entry, ["mirror", "glass"])
        assert out.style_tags == ("wood",)
        assert out.forbidden_materials == ("mirror",)

    def test_clean_entry_unchanged(self):
        entry = self._entry(["wood", "matte"])
        assert apply_negative_constraints(entry, ["mirror"]) == entry

    def test_idempotent(self):
        entry = self._entry(["chrome", "steel"])
        once = apply_negative_constraints(entry, DEFAULT_BANNED_MATERIALS)
        twice = apply_negative_constraints(once, DEFAULT_BANNED_MATERIALS)
        assert once == twice

    def test_structural_fields_never_change(self):
        entry = self._entry(["glass", "transparent", "oak"])
        out = apply_negative_constraints(entry, DEFAULT_BANNED_MATERIALS)
        for field in ("name", "category", "parent", "nominal_extent_m",
                      "description"):
            assert getattr(out, field) == getattr(entry, field)

    def test_default_ban_list(self):
        entry = self._entry(["glass", "chrome", "fabric"])
        out = apply_negative_constraints(entry)
        assert out.style_tags == ("fabric",)
        assert set(out.forbidden_materials) == {"glass", "chrome"}
