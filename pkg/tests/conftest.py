"""Shared fixtures, scene builders, and the acceptance-criteria reporter.

The reporter collects one line per acceptance check (recorded by
tests/test_acceptance.py) and prints them as a dedicated section at the
end of the pytest run, so a plain ``pytest -v`` shows each criterion's
pass/fail verdict alongside its measured numbers.
"""

from __future__ import annotations

import numpy as np
import pytest

from demogen.manifest import AssetEntry, AssetManifest

ACCEPTANCE_LINES: list[str] = []


def record_acceptance(name: str, ok: bool, detail: str) -> None:
    status = "PASS" if ok else "FAIL"
    ACCEPTANCE_LINES.append(f"{status}  {name}: {detail}")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)


# --- programmatic scene builders ----------------------------------------------------

def make_entry(name: str, category: str, extent, parent=None,
               style_tags=("matte",)) -> AssetEntry:
    return AssetEntry(
        name=name, category=category, description=f"test {category} {name}",
        style_tags=tuple(style_tags),
        nominal_extent_m=tuple(float(v) for v in extent), parent=parent)


def make_manifest(entries, target: str, receptacle: str, seed: int = 0,
                  prompt: str = "arrange the test scene") -> AssetManifest:
    return AssetManifest(prompt=prompt, seed=seed, target=target,
                         receptacle=receptacle, entries=tuple(entries))


def nominal_extents(manifest: AssetManifest) -> dict:
    return {e.name: e.nominal_extent for e in manifest.entries}


def random_manifest(seed: int) -> AssetManifest:
    """Seeded random tabletop manifest with 2 to 12 objects.

    Always physically feasible: at most three modest anchors in the 3 m
    workspace, accessories small relative to their parent's top face.
    """
    rng = np.random.default_rng(seed)
    total = int(rng.integers(2, 13))
    num_anchors = int(rng.integers(1, min(3, total - 1) + 1))
    entries = []
    for i in range(num_anchors):
        extent = (float(rng.uniform(0.7, 1.3)),
                  float(rng.uniform(0.6, 1.0)),
                  float(rng.uniform(0.4, 0.9)))
        entries.append(make_entry(f"anchor_{i}", "anchor", extent))
    num_accessories = total - num_anchors
    for i in range(num_accessories):
        parent = f"anchor_{int(rng.integers(0, num_anchors))}"
        extent = (float(rng.uniform(0.04, 0.14)),
                  float(rng.uniform(0.04, 0.14)),
                  float(rng.uniform(0.03, 0.12)))
        entries.append(make_entry(f"item_{i}", "accessory", extent,
                                  parent=parent))
    if num_accessories == 0:
        entries.append(make_entry("item_0", "accessory",
                                  (0.06, 0.06, 0.05), parent="anchor_0"))
        num_accessories = 1
    return make_manifest(entries, target="item_0", receptacle="anchor_0",
                         seed=seed)


# --- document fixtures ----------------------------------------------------------------

MINIMAL_MANIFEST_DOC = """
{
  "prompt": "put the mug on the table",
  "seed": 4,
  "target": "mug",
  "receptacle": "table",
  "entries": [
    {
      "name": "table",
      "category": "anchor",
      "description": "plain dining table",
      "style_tags": ["wood"],
      "nominal_extent_m": [1.2, 0.8, 0.75],
      "parent": null
    },
    {
      "name": "mug",
      "category": "accessory",
      "description": "ceramic mug",
      "style_tags": ["ceramic", "glossy"],
      "nominal_extent_m": [0.08, 0.08, 0.1],
      "parent": "table"
    }
  ]
}
"""


@pytest.fixture
def minimal_manifest_doc() -> str:
    return MINIMAL_MANIFEST_DOC
