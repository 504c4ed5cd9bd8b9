"""Deterministic synthetic referring-shapes scenes.

Each sample is a flat-color scene of 2-4 non-overlapping shapes on a dark
canvas plus one expression that identifies exactly one object. Expressions
come from four templates:

    "<color> <shape>"
    "<size> <color> <shape>"
    "<color> <shape> on the <left|right>"
    "<shape> above the <color> <shape>"

The "attributes" difficulty uses only the first two; "spatial" draws from
all four. A candidate expression is emitted only if its semantics resolve
to a single object in the scene, so every sample's referent is unique by
construction. The stored mask is the exact rasterization of the referent.

Per-sample RNG streams are derived from (seed, index), so generation is
bitwise deterministic and order-independent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GenerationError

PALETTE = {
    "red": (0.85, 0.10, 0.10),
    "green": (0.10, 0.75, 0.15),
    "blue": (0.15, 0.25, 0.85),
    "yellow": (0.90, 0.85, 0.10),
    "purple": (0.60, 0.15, 0.75),
}
BACKGROUND = (0.12, 0.12, 0.12)
SHAPES = ("circle", "square", "triangle")
SIZE_FRACTIONS = {"small": 0.10, "large": 0.16}  # half-extent / canvas

DIFFICULTIES = ("attributes", "spatial")
ATTRIBUTE_KINDS = ("color_shape", "size_color_shape")
SPATIAL_KINDS = ("side", "above")

VOCABULARY = (list(PALETTE) + list(SHAPES) + list(SIZE_FRACTIONS)
              + ["on", "the", "left", "right", "above"])


@dataclass(frozen=True)
class SceneObject:
    shape: str
    color: str
    size: str
    center: tuple[float, float]  # (x, y) in pixels


@dataclass
class SceneSpec:
    canvas_size: int
    objects: list[SceneObject] = field(default_factory=list)


@dataclass
class SegSample:
    image: np.ndarray       # (H,W,3) floats in [0,1]
    expression: str
    mask: np.ndarray        # (H,W) bool
    sample_id: str


def half_extent(obj: SceneObject, canvas_size: int) -> float:
    return SIZE_FRACTIONS[obj.size] * canvas_size


def rasterize(obj: SceneObject, canvas_size: int) -> np.ndarray:
    """Exact rasterization over pixel centers (col+0.5, row+0.5)."""
    r = half_extent(obj, canvas_size)
    cx, cy = obj.center
    ys, xs = np.mgrid[0:canvas_size, 0:canvas_size]
    px = xs + 0.5
    py = ys + 0.5
    if obj.shape == "circle":
        return (px - cx) ** 2 + (py - cy) ** 2 <= r * r
    if obj.shape == "square":
        return (np.abs(px - cx) <= r) & (np.abs(py - cy) <= r)
    if obj.shape == "triangle":
        # upward isoceles triangle: apex (cx, cy-r), base corners (cx+-r, cy+r)
        below_apex = py >= cy - r
        above_base = py <= cy + r
        t = (py - (cy - r)) / (2.0 * r)  # 0 at apex, 1 at base
        within = np.abs(px - cx) <= t * r
        return below_apex & above_base & within
    raise GenerationError(f"unknown shape {obj.shape!r}")


def render(scene: SceneSpec) -> np.ndarray:
    image = np.empty((scene.canvas_size, scene.canvas_size, 3), dtype=np.float64)
    image[...] = BACKGROUND
    for obj in scene.objects:
        mask = rasterize(obj, scene.canvas_size)
        image[mask] = PALETTE[obj.color]
    return image


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    union = np.count_nonzero(a | b)
    return np.count_nonzero(a & b) / union if union else 0.0


# --- expression semantics -------------------------------------------------

def matching_objects(scene: SceneSpec, shape=None, color=None, size=None,
                     side=None) -> list[SceneObject]:
    half = scene.canvas_size / 2.0
    out = []
    for obj in scene.objects:
        if shape is not None and obj.shape != shape:
            continue
        if color is not None and obj.color != color:
            continue
        if size is not None and obj.size != size:
            continue
        if side == "left" and not obj.center[0] < half:
            continue
        if side == "right" and not obj.center[0] > half:
            continue
        out.append(obj)
    return out


def _candidate_expressions(scene: SceneSpec, kinds) -> list[tuple[str, SceneObject]]:
    """All expressions from the given template kinds with a unique referent."""
    found: dict[str, SceneObject] = {}
    for kind in kinds:
        if kind == "color_shape":
            for obj in scene.objects:
                if matching_objects(scene, shape=obj.shape, color=obj.color) == [obj]:
                    found.setdefault(f"{obj.color} {obj.shape}", obj)
        elif kind == "size_color_shape":
            for obj in scene.objects:
                if matching_objects(scene, shape=obj.shape, color=obj.color,
                                    size=obj.size) == [obj]:
                    found.setdefault(f"{obj.size} {obj.color} {obj.shape}", obj)
        elif kind == "side":
            for obj in scene.objects:
                for side in ("left", "right"):
                    if matching_objects(scene, shape=obj.shape, color=obj.color,
                                        side=side) == [obj]:
                        found.setdefault(f"{obj.color} {obj.shape} on the {side}", obj)
        elif kind == "above":
            for landmark in scene.objects:
                if matching_objects(scene, shape=landmark.shape,
                                    color=landmark.color) != [landmark]:
                    continue
                for obj in scene.objects:
                    if obj is landmark:
                        continue
                    above = [o for o in matching_objects(scene, shape=obj.shape)
                             if o.center[1] < landmark.center[1]]
                    if above == [obj]:
                        found.setdefault(
                            f"{obj.shape} above the {landmark.color} {landmark.shape}",
                            obj)
    return sorted(found.items())


def _sample_scene(rng: np.random.Generator, canvas_size: int,
                  iou_cap: float) -> SceneSpec | None:
    n_objects = int(rng.integers(2, 5))
    scene = SceneSpec(canvas_size=canvas_size)
    masks: list[np.ndarray] = []
    for _ in range(n_objects):
        placed = False
        for _ in range(40):
            shape = SHAPES[rng.integers(len(SHAPES))]
            color = list(PALETTE)[rng.integers(len(PALETTE))]
            size = list(SIZE_FRACTIONS)[rng.integers(len(SIZE_FRACTIONS))]
            margin = SIZE_FRACTIONS[size] * canvas_size + 1.0
            center = tuple(rng.uniform(margin, canvas_size - margin, size=2))
            obj = SceneObject(shape=shape, color=color, size=size, center=center)
            mask = rasterize(obj, canvas_size)
            if not mask.any():
                continue
            if all(mask_iou(mask, m) <= iou_cap for m in masks):
                scene.objects.append(obj)
                masks.append(mask)
                placed = True
                break
        if not placed:
            return None
    return scene


def generate_sample(seed: int, index: int, canvas_size: int = 48,
                    difficulty: str = "spatial",
                    iou_cap: float = 0.05) -> tuple[SegSample, SceneSpec]:
    """One (sample, scene) pair; deterministic in all arguments."""
    if difficulty not in DIFFICULTIES:
        raise GenerationError(f"unknown difficulty {difficulty!r}")
    kinds = ATTRIBUTE_KINDS if difficulty == "attributes" \
        else ATTRIBUTE_KINDS + SPATIAL_KINDS
    rng = np.random.default_rng([seed, index])
    for _ in range(200):
        scene = _sample_scene(rng, canvas_size, iou_cap)
        if scene is None:
            continue
        # pick a template kind uniformly among those with candidates, then a
        # candidate within it, so spatial templates stay well represented
        per_kind = {k: _candidate_expressions(scene, (k,)) for k in kinds}
        nonempty = [k for k in kinds if per_kind[k]]
        if not nonempty:
            continue
        kind = nonempty[rng.integers(len(nonempty))]
        expression, referent = per_kind[kind][rng.integers(len(per_kind[kind]))]
        sample = SegSample(
            image=render(scene),
            expression=expression,
            mask=rasterize(referent, canvas_size),
            sample_id=f"s{seed}-{index:06d}",
        )
        return sample, scene
    raise GenerationError(
        f"could not build a valid scene for seed={seed} index={index} "
        f"(canvas={canvas_size}, iou_cap={iou_cap})")


def generate_dataset(seed: int, n_samples: int, canvas_size: int = 48,
                     difficulty: str = "spatial") -> list[SegSample]:
    if n_samples <= 0:
        raise GenerationError(f"n_samples must be positive, got {n_samples}")
    return [generate_sample(seed, i, canvas_size, difficulty)[0]
            for i in range(n_samples)]
