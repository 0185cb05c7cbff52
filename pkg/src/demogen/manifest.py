"""Scene manifest parsing and validation.

A manifest is strict JSON with top-level keys ``prompt``, ``seed``,
``target``, ``receptacle``, ``entries``. Each entry:

    name              unique identifier
    category          "anchor" (sits on the ground) or "accessory" (on a parent)
    description       free text handed to asset generators
    style_tags        material/style words
    nominal_extent_m  [x, y, z] intended metric size
    parent            supporting entry name, null for anchors
    forbidden_materials  optional, default []

Unknown keys anywhere are rejected (SchemaError); referential problems
(dangling parents, duplicate names, bad extents) are SemanticError.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ManifestSyntaxError, SchemaError, SemanticError
from .util import dumps_canonical, sha256_hex

CATEGORIES = ("anchor", "accessory")

# Material words that asset generation must never receive; mirrors the
# reflective/transparent surfaces that break downstream reconstruction.
DEFAULT_BANNED_MATERIALS = ("mirror", "glass", "chrome", "transparent")

MIN_EXTENT_M = 0.001
MAX_EXTENT_M = 10.0

_TOP_KEYS = {"prompt", "seed", "target", "receptacle", "entries"}
_ENTRY_REQUIRED = {"name", "category", "description", "style_tags",
                   "nominal_extent_m", "parent"}
_ENTRY_OPTIONAL = {"forbidden_materials"}


@dataclass(frozen=True)
class AssetEntry:
    name: str
    category: str
    description: str
    style_tags: tuple[str, ...]
    nominal_extent_m: tuple[float, float, float]
    parent: str | None
    forbidden_materials: tuple[str, ...] = ()

    @property
    def nominal_extent(self) -> np.ndarray:
        return np.array(self.nominal_extent_m, dtype=float)


@dataclass(frozen=True)
class AssetManifest:
    prompt: str
    seed: int
    target: str
    receptacle: str
    entries: tuple[AssetEntry, ...]

    def entry(self, name: str) -> AssetEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    @property
    def anchors(self) -> tuple[AssetEntry, ...]:
        return tuple(e for e in self.entries if e.category == "anchor")

    @property
    def accessories(self) -> tuple[AssetEntry, ...]:
        return tuple(e for e in self.entries if e.category == "accessory")


def _expect(cond: bool, message: str, entry: str | None = None,
            field_name: str | None = None) -> None:
    if not cond:
        raise SchemaError(message, entry=entry, field=field_name)


def _parse_entry(raw, index: int) -> AssetEntry:
    _expect(isinstance(raw, dict), f"entries[{index}] is not an object")
    name = raw.get("name")
    _expect(isinstance(name, str) and name != "", f"entries[{index}]: bad name",
            field_name="name")

    extra = set(raw) - _ENTRY_REQUIRED - _ENTRY_OPTIONAL
    _expect(not extra, f"entry {name!r}: unknown keys {sorted(extra)}",
            entry=name, field_name=sorted(extra)[0] if extra else None)
    missing = _ENTRY_REQUIRED - set(raw)
    _expect(not missing, f"entry {name!r}: missing keys {sorted(missing)}",
            entry=name, field_name=sorted(missing)[0] if missing else None)

    category = raw["category"]
    _expect(category in CATEGORIES,
            f"entry {name!r}: category must be one of {CATEGORIES}",
            entry=name, field_name="category")
    _expect(isinstance(raw["description"], str),
            f"entry {name!r}: description must be a string",
            entry=name, field_name="description")

    tags = raw["style_tags"]
    _expect(isinstance(tags, list) and all(isinstance(t, str) for t in tags),
            f"entry {name!r}: style_tags must be an array of strings",
            entry=name, field_name="style_tags")

    extent = raw["nominal_extent_m"]
    _expect(isinstance(extent, list) and len(extent) == 3
            and all(isinstance(x, (int, float)) and not isinstance(x, bool)
                    for x in extent),
            f"entry {name!r}: nominal_extent_m must be [x, y, z]",
            entry=name, field_name="nominal_extent_m")

    parent = raw["parent"]
    _expect(parent is None or isinstance(parent, str),
            f"entry {name!r}: parent must be a string or null",
            entry=name, field_name="parent")

    forbidden = raw.get("forbidden_materials", [])
    _expect(isinstance(forbidden, list) and all(isinstance(t, str) for t in forbidden),
            f"entry {name!r}: forbidden_materials must be an array of strings",
            entry=name, field_name="forbidden_materials")

    return AssetEntry(
        name=name,
        category=category,
        description=raw["description"],
        style_tags=tuple(tags),
        nominal_extent_m=tuple(float(x) for x in extent),
        parent=parent,
        forbidden_materials=tuple(forbidden),
    )


def _check_semantics(manifest: AssetManifest) -> None:
    names = [e.name for e in manifest.entries]
    seen = set()
    for n in names:
        if n in seen:
            raise SemanticError(f"duplicate entry name {n!r}", entry=n, field="name")
        seen.add(n)

    for e in manifest.entries:
        ext = np.array(e.nominal_extent_m)
        if not np.all(np.isfinite(ext)) or np.any(ext <= MIN_EXTENT_M) \
                or np.any(ext > MAX_EXTENT_M):
            raise SemanticError(
                f"entry {e.name!r}: nominal_extent_m components must be in "
                f"({MIN_EXTENT_M}, {MAX_EXTENT_M}] m",
                entry=e.name, field="nominal_extent_m")
        if e.category == "anchor" and e.parent is not None:
            raise SemanticError(f"anchor {e.name!r} must not have a parent",
                                entry=e.name, field="parent")
        if e.category == "accessory" and e.parent is None:
            raise SemanticError(f"accessory {e.name!r} requires a parent",
                                entry=e.name, field="parent")
        if e.parent is not None and e.parent not in seen:
            raise SemanticError(
                f"entry {e.name!r}: parent {e.parent!r} does not exist",
                entry=e.name, field="parent")

    if not manifest.anchors:
        raise SemanticError("manifest has no anchor entries", field="entries")
    if manifest.target not in seen:
        raise SemanticError(f"target {manifest.target!r} does not exist",
                            field="target")
    if manifest.entry(manifest.target).category != "accessory":
        raise SemanticError(f"target {manifest.target!r} must be an accessory",
                            entry=manifest.target, field="target")
    if manifest.receptacle not in seen:
        raise SemanticError(f"receptacle {manifest.receptacle!r} does not exist",
                            field="receptacle")


def parse_manifest(document: str | bytes) -> AssetManifest:
    """Parse and fully validate a manifest document."""
    if isinstance(document, bytes):
        document = document.decode("utf-8")
    try:
        raw = json.loads(document)
    except json.JSONDecodeError as exc:
        raise ManifestSyntaxError(f"malformed JSON: {exc}") from exc

    _expect(isinstance(raw, dict), "top level must be an object")
    extra = set(raw) - _TOP_KEYS
    _expect(not extra, f"unknown top-level keys {sorted(extra)}",
            field_name=sorted(extra)[0] if extra else None)
    missing = _TOP_KEYS - set(raw)
    _expect(not missing, f"missing top-level keys {sorted(missing)}",
            field_name=sorted(missing)[0] if missing else None)
    _expect(isinstance(raw["prompt"], str), "prompt must be a string",
            field_name="prompt")
    _expect(isinstance(raw["seed"], int) and not isinstance(raw["seed"], bool),
            "seed must be an integer", field_name="seed")
    _expect(isinstance(raw["target"], str), "target must be a string",
            field_name="target")
    _expect(isinstance(raw["receptacle"], str), "receptacle must be a string",
            field_name="receptacle")
    _expect(isinstance(raw["entries"], list), "entries must be an array",
            field_name="entries")

    manifest = AssetManifest(
        prompt=raw["prompt"],
        seed=raw["seed"],
        target=raw["target"],
        receptacle=raw["receptacle"],
        entries=tuple(_parse_entry(e, i) for i, e in enumerate(raw["entries"])),
    )
    _check_semantics(manifest)
    return manifest


def apply_negative_constraints(entry: AssetEntry,
                               banned=DEFAULT_BANNED_MATERIALS) -> AssetEntry:
    """Strip banned material tags from style_tags, recording them in
    forbidden_materials. Idempotent."""
    banned = tuple(banned)
    kept = tuple(t for t in entry.style_tags if t not in banned)
    newly = tuple(t for t in banned
                  if t in entry.style_tags and t not in entry.forbidden_materials)
    return replace(entry, style_tags=kept,
                   forbidden_materials=entry.forbidden_materials + newly)


def write_manifest(manifest: AssetManifest) -> str:
    """Canonical JSON text; parse(write(m)) == m."""
    doc = {
        "prompt": manifest.prompt,
        "seed": manifest.seed,
        "target": manifest.target,
        "receptacle": manifest.receptacle,
        "entries": [
            {
                "name": e.name,
                "category": e.category,
                "description": e.description,
                "style_tags": list(e.style_tags),
                "nominal_extent_m": list(e.nominal_extent_m),
                "parent": e.parent,
                "forbidden_materials": list(e.forbidden_materials),
            }
            for e in manifest.entries
        ],
    }
    return dumps_canonical(doc, indent=2) + "\n"


def manifest_hash(manifest: AssetManifest) -> str:
    return sha256_hex(write_manifest(manifest).encode("utf-8"))


def load_manifest(path: str) -> AssetManifest:
    with open(path, "rb") as fh:
        return parse_manifest(fh.read())
