"""Collision-free metric scene layout.

Anchors sit on the ground plane (bottom face at Z = 0), accessories float a
small clearance above their parent's top face until settling closes the gap.
Placements are axis-aligned (identity rotation); collision checks are pure
AABB tests. Everything is deterministic for a fixed seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import CyclicSupport, PlacementExhausted, SettleFailed
from .geometry import Aabb, Pose, aabb_intersect, aabb_overlap
from .manifest import AssetManifest
from .util import atomic_write_text, dumps_canonical

GROUND = "ground"

DEFAULT_WORKSPACE = Aabb(np.array([-1.5, -1.5, 0.0]), np.array([1.5, 1.5, 2.0]))


@dataclass(frozen=True)
class LayoutParams:
    support_clearance_m: float = 0.002   # accessory hover before settling
    overlap_tolerance_m: float = 1e-4    # AABB contacts below this don't count
    jitter_r0_m: float = 0.005
    jitter_dr_m: float = 0.005
    max_attempts: int = 100
    max_settle_correction_m: float = 0.05


def jitter_radius(params: LayoutParams, attempt: int) -> float:
    """Attempt k's re-placement radius; strictly increasing in k."""
    return params.jitter_r0_m + attempt * params.jitter_dr_m


@dataclass(frozen=True)
class PlacedObject:
    name: str
    category: str
    support: str            # GROUND or parent object name
    extent: np.ndarray      # (3,) full side lengths
    pose: Pose
    settled: bool = False

    def __post_init__(self):
        e = np.asarray(self.extent, dtype=float).reshape(3).copy()
        e.setflags(write=False)
        object.__setattr__(self, "extent", e)

    @property
    def aabb(self) -> Aabb:
        return Aabb.from_center_extent(self.pose.position, self.extent)

    @property
    def top_z(self) -> float:
        return float(self.pose.position[2] + 0.5 * self.extent[2])

    @property
    def bottom_z(self) -> float:
        return float(self.pose.position[2] - 0.5 * self.extent[2])


@dataclass
class SceneLayout:
    objects: list[PlacedObject]
    workspace: Aabb
    seed: int
    ground_z: float = 0.0
    settle_report: dict | None = None

    def get(self, name: str) -> PlacedObject:
        for o in self.objects:
            if o.name == name:
                return o
        raise KeyError(name)

    def index(self, name: str) -> int:
        for i, o in enumerate(self.objects):
            if o.name == name:
                return i
        raise KeyError(name)


def scale_to_metric(extent_raw, nominal) -> tuple[np.ndarray, float]:
    """Uniform scale factor mapping a raw reconstruction extent to metric size.

    The factor is the geometric mean of the per-axis nominal/raw ratios, so
    aspect ratio is preserved exactly while volume matches the nominal
    intent on average.
    """
    raw = np.asarray(extent_raw, dtype=float)
    nom = np.asarray(nominal, dtype=float)
    if np.any(raw <= 0.0) or np.any(nom <= 0.0):
        raise ValueError("extents must be positive")
    factor = float(np.exp(np.mean(np.log(nom / raw))))
    return raw * factor, factor


def _footprint_range(extent: np.ndarray, region: Aabb, axis: int) -> tuple[float, float]:
    lo = float(region.min[axis] + 0.5 * extent[axis])
    hi = float(region.max[axis] - 0.5 * extent[axis])
    return lo, hi


def place_anchors(manifest: AssetManifest, extents: dict[str, np.ndarray],
                  workspace: Aabb = DEFAULT_WORKSPACE, seed: int = 0,
                  params: LayoutParams = LayoutParams()) -> SceneLayout:
    """Rejection-sample ground positions for every anchor, manifest order."""
    rng = np.random.default_rng(seed)
    placed: list[PlacedObject] = []
    for entry in manifest.anchors:
        extent = np.asarray(extents[entry.name], dtype=float)
        lo_x, hi_x = _footprint_range(extent, workspace, 0)
        lo_y, hi_y = _footprint_range(extent, workspace, 1)
        if lo_x > hi_x or lo_y > hi_y:
            raise PlacementExhausted(entry.name, 0)
        # bottom face exactly on the ground plane
        z = 0.5 * extent[2]
        obj = None
        for _ in range(params.max_attempts):
            center = np.array([rng.uniform(lo_x, hi_x), rng.uniform(lo_y, hi_y), z])
            candidate = PlacedObject(
                name=entry.name, category="anchor", support=GROUND,
                extent=extent, pose=Pose(center, np.array([1.0, 0, 0, 0])))
            if not any(aabb_intersect(candidate.aabb, p.aabb,
                                      params.overlap_tolerance_m) for p in placed):
                obj = candidate
                break
        if obj is None:
            raise PlacementExhausted(entry.name, params.max_attempts)
        placed.append(obj)
    return SceneLayout(objects=placed, workspace=workspace, seed=seed)


def _support_order(manifest: AssetManifest) -> list:
    """Accessories sorted parents-first; raises CyclicSupport on cycles."""
    by_name = {e.name: e for e in manifest.entries}
    depth: dict[str, int] = {e.name: 0 for e in manifest.anchors}

    def resolve(name: str, trail: set) -> int:
        if name in depth:
            return depth[name]
        if name in trail:
            raise CyclicSupport(name)
        trail.add(name)
        d = resolve(by_name[name].parent, trail) + 1
        depth[name] = d
        return d

    order = []
    for i, e in enumerate(manifest.entries):
        if e.category == "accessory":
            order.append((resolve(e.name, set()), i, e))
    order.sort(key=lambda item: (item[0], item[1]))
    return [e for _, _, e in order]


def _clamp_to_parent_top(xy: np.ndarray, extent: np.ndarray,
                         parent: PlacedObject) -> np.ndarray:
    out = xy.copy()
    for axis in range(2):
        lo, hi = _footprint_range(extent, parent.aabb, axis)
        if lo > hi:
            # footprint larger than the parent face: best effort, center it
            out[axis] = parent.pose.position[axis]
        else:
            out[axis] = min(max(out[axis], lo), hi)
    return out


def _resolve(objects: list[PlacedObject], parent_of: dict[str, str],
             order: list[int], rng: np.random.Generator,
             params: LayoutParams) -> list[PlacedObject]:
    """Sequentially re-jitter accessories until nothing overlaps.

    Objects earlier in ``order`` (and all anchors) are treated as fixed while
    an accessory searches; the jitter radius grows linearly attempt by
    attempt, clamped so the accessory stays on its parent's top face.
    """
    fixed = {i for i, o in enumerate(objects) if o.category == "anchor"}
    for idx in order:
        obj = objects[idx]
        parent = objects[[o.name for o in objects].index(parent_of[obj.name])]
        base_xy = obj.pose.position[:2].copy()
        attempt = 0
        while True:
            conflict = any(
                aabb_intersect(objects[idx].aabb, objects[j].aabb,
                               params.overlap_tolerance_m)
                for j in fixed if j != idx)
            if not conflict:
                break
            if attempt >= params.max_attempts:
                raise PlacementExhausted(obj.name, params.max_attempts)
            r = jitter_radius(params, attempt)
            ang = rng.uniform(0.0, 2.0 * math.pi)
            xy = _clamp_to_parent_top(
                base_xy + r * np.array([math.cos(ang), math.sin(ang)]),
                obj.extent, parent)
            pos = objects[idx].pose.position.copy()
            pos[:2] = xy
            objects[idx] = replace(objects[idx],
                                   pose=Pose(pos, objects[idx].pose.quat))
            attempt += 1
        fixed.add(idx)
    return objects


def place_accessories(layout: SceneLayout, manifest: AssetManifest,
                      extents: dict[str, np.ndarray], seed: int = 0,
                      params: LayoutParams = LayoutParams()) -> SceneLayout:
    """Place accessories on their parents (clearance above the top face),
    then resolve any overlaps by growing jitter."""
    rng = np.random.default_rng(seed)
    objects = list(layout.objects)
    names = [o.name for o in objects]
    parent_of: dict[str, str] = {}
    new_indices: list[int] = []

    for entry in _support_order(manifest):
        extent = np.asarray(extents[entry.name], dtype=float)
        parent = objects[names.index(entry.parent)]
        xy = np.array([
            rng.uniform(*_xy_range(extent, parent, 0)),
            rng.uniform(*_xy_range(extent, parent, 1)),
        ])
        xy = _clamp_to_parent_top(xy, extent, parent)
        z = parent.top_z + params.support_clearance_m + 0.5 * extent[2]
        obj = PlacedObject(
            name=entry.name, category="accessory", support=entry.parent,
            extent=extent, pose=Pose(np.array([xy[0], xy[1], z]),
                                     np.array([1.0, 0, 0, 0])))
        objects.append(obj)
        names.append(entry.name)
        parent_of[entry.name] = entry.parent
        new_indices.append(len(objects) - 1)

    objects = _resolve(objects, parent_of, new_indices, rng, params)
    return SceneLayout(objects=objects, workspace=layout.workspace,
                       seed=layout.seed, ground_z=layout.ground_z)


def _xy_range(extent: np.ndarray, parent: PlacedObject, axis: int) -> tuple[float, float]:
    lo, hi = _footprint_range(extent, parent.aabb, axis)
    if lo > hi:
        c = float(parent.pose.position[axis])
        return c, c
    return lo, hi


def resolve_collisions(layout: SceneLayout, seed: int = 0,
                       params: LayoutParams = LayoutParams()) -> SceneLayout:
    """Re-jitter overlapping accessories in an existing layout. A layout that
    is already collision-free comes back unchanged (no RNG draws)."""
    rng = np.random.default_rng(seed)
    objects = list(layout.objects)
    parent_of = {o.name: o.support for o in objects if o.category == "accessory"}
    order = [i for i, o in enumerate(objects) if o.category == "accessory"]
    objects = _resolve(objects, parent_of, order, rng, params)
    return SceneLayout(objects=objects, workspace=layout.workspace,
                       seed=layout.seed, ground_z=layout.ground_z,
                       settle_report=layout.settle_report)


def settle(layout: SceneLayout,
           params: LayoutParams = LayoutParams()) -> SceneLayout:
    """Quasi-static settling: close support gaps to exactly zero in support
    order, then separate any residual penetrations by the minimal XY
    translation. Raises SettleFailed when a correction is implausibly large.
    Idempotent: settling a settled layout changes nothing."""
    objects = list(layout.objects)
    names = [o.name for o in objects]
    report: dict[str, dict] = {
        o.name: {"drop_m": 0.0, "separation_m": 0.0,
                 "max_penetration_m": 0.0, "support_gap_m": 0.0}
        for o in objects}

    # support order: anchors, then accessories by chain depth
    def depth(o: PlacedObject) -> int:
        d = 0
        cur = o
        while cur.support != GROUND:
            cur = objects[names.index(cur.support)]
            d += 1
            if d > len(objects):
                raise CyclicSupport(o.name)
        return d

    order = sorted(range(len(objects)), key=lambda i: (depth(objects[i]), i))

    for i in order:
        obj = objects[i]
        if obj.support == GROUND:
            target_bottom = layout.ground_z
        else:
            target_bottom = objects[names.index(obj.support)].top_z
        drop = obj.bottom_z - target_bottom
        if abs(drop) > params.max_settle_correction_m:
            raise SettleFailed(obj.name, abs(drop))
        if drop != 0.0:
            pos = obj.pose.position.copy()
            pos[2] = target_bottom + 0.5 * obj.extent[2]
            # nudge out the rounding of (top + half) - half so the recomputed
            # gap is exactly zero, not merely within an ulp of it
            for _ in range(3):
                residual = (pos[2] - 0.5 * obj.extent[2]) - target_bottom
                if residual == 0.0:
                    break
                pos[2] -= residual
            objects[i] = replace(obj, pose=Pose(pos, obj.pose.quat))
        report[obj.name]["drop_m"] = float(drop)

    # separate residual penetrations along the lesser-overlap XY axis
    for _ in range(64):
        worst = None
        for i in range(len(objects)):
            for j in range(i + 1, len(objects)):
                ov = aabb_overlap(objects[i].aabb, objects[j].aabb)
                if np.all(ov > 1e-12):
                    axis = 0 if ov[0] <= ov[1] else 1
                    worst = (i, j, axis, float(ov[axis]))
                    break
            if worst:
                break
        if worst is None:
            break
        i, j, axis, amount = worst
        if amount > params.max_settle_correction_m:
            raise SettleFailed(objects[i].name, amount)
        a, b = objects[i], objects[j]
        sign = 1.0 if a.pose.position[axis] <= b.pose.position[axis] else -1.0
        movable = [o for o in (a, b) if o.category == "accessory"]
        if not movable:
            raise SettleFailed(a.name, amount)  # two anchors interpenetrating
        share = amount / len(movable)
        for k, (idx, o) in enumerate(((i, a), (j, b))):
            if o.category != "accessory":
                continue
            direction = -sign if idx == i else sign
            pos = o.pose.position.copy()
            pos[axis] += direction * share
            objects[idx] = replace(o, pose=Pose(pos, o.pose.quat))
            rec = report[o.name]
            rec["separation_m"] = float(rec["separation_m"] + share)
            rec["max_penetration_m"] = float(max(rec["max_penetration_m"], amount))
    else:
        raise SettleFailed(objects[0].name, math.inf)

    for i, obj in enumerate(objects):
        if obj.support == GROUND:
            gap = obj.bottom_z - layout.ground_z
        else:
            gap = obj.bottom_z - objects[names.index(obj.support)].top_z
        report[obj.name]["support_gap_m"] = float(gap)
        objects[i] = replace(obj, settled=True)

    return SceneLayout(objects=objects, workspace=layout.workspace,
                       seed=layout.seed, ground_z=layout.ground_z,
                       settle_report=report)


def solve_layout(manifest: AssetManifest, extents: dict[str, np.ndarray],
                 workspace: Aabb = DEFAULT_WORKSPACE, seed: int = 0,
                 params: LayoutParams = LayoutParams()) -> SceneLayout:
    """place anchors -> place accessories -> resolve -> settle."""
    from .util import stable_hash
    layout = place_anchors(manifest, extents, workspace,
                           stable_hash(seed, "anchors"), params)
    layout = place_accessories(layout, manifest, extents,
                               stable_hash(seed, "accessories"), params)
    layout = resolve_collisions(layout, stable_hash(seed, "resolve"), params)
    layout = settle(layout, params)
    return SceneLayout(objects=layout.objects, workspace=layout.workspace,
                       seed=seed, ground_z=layout.ground_z,
                       settle_report=layout.settle_report)


# --- serialization ------------------------------------------------------------

def write_scene(layout: SceneLayout) -> str:
    doc = {
        "seed": layout.seed,
        "ground_z": layout.ground_z,
        "workspace": {"min": list(layout.workspace.min),
                      "max": list(layout.workspace.max)},
        "objects": [
            {
                "name": o.name,
                "category": o.category,
                "support": o.support,
                "extent_m": list(o.extent),
                "position_m": list(o.pose.position),
                "quaternion_wxyz": list(o.pose.quat),
                "settled": o.settled,
            }
            for o in layout.objects
        ],
    }
    return dumps_canonical(doc, indent=2) + "\n"


def save_scene(layout: SceneLayout, path: str) -> None:
    atomic_write_text(path, write_scene(layout))


def load_scene(source: str) -> SceneLayout:
    """Load a scene layout from a JSON string or file path."""
    if "\n" not in source and source.endswith(".json"):
        with open(source, "r", encoding="utf-8") as fh:
            source = fh.read()
    doc = json.loads(source)
    objects = [
        PlacedObject(
            name=o["name"], category=o["category"], support=o["support"],
            extent=np.array(o["extent_m"], dtype=float),
            pose=Pose(np.array(o["position_m"], dtype=float),
                      np.array(o["quaternion_wxyz"], dtype=float)),
            settled=bool(o["settled"]))
        for o in doc["objects"]
    ]
    return SceneLayout(
        objects=objects,
        workspace=Aabb(np.array(doc["workspace"]["min"], dtype=float),
                       np.array(doc["workspace"]["max"], dtype=float)),
        seed=int(doc["seed"]),
        ground_z=float(doc["ground_z"]),
    )
