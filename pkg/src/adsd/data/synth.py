"""Synthetic RGB-D scenes with exact labels, depth and surface normals.

A pinhole camera (focal length = image width, principal point at the image
centre) looks down +z at a fronto-parallel background wall. Objects are
axis-aligned rectangles or disks in the image, each lying on a slightly
tilted plane at a class-specific depth band; a z-buffer resolves occlusion.
Object classes come in pairs that share exactly the same colour and differ
only in depth band, so colour alone cannot separate them.

Randomness comes from numpy's PCG64 generator seeded with
``SeedSequence([seed])``; the same seed and spec give bit-identical samples.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import ConfigError
from ..ops import IGNORE_INDEX

_PAIR_COLORS = [
    (0.80, 0.22, 0.18),
    (0.20, 0.35, 0.80),
    (0.25, 0.70, 0.30),
    (0.85, 0.75, 0.20),
    (0.65, 0.30, 0.70),
]
BACKGROUND_COLOR = (0.55, 0.52, 0.48)
BACKGROUND_DEPTH = (4.2, 5.0)
OBJECT_DEPTH_RANGE = (1.0, 3.8)


@dataclass(frozen=True)
class ClassStyle:
    name: str
    color: tuple
    depth_band: tuple


def default_palette(num_classes: int) -> list[ClassStyle]:
    """Background plus object classes; classes 2k+1 and 2k+2 share a colour.

    Depth bands split the object range evenly; paired classes are placed in
    bands far apart (first half vs second half of the range).
    """
    if num_classes < 2:
        raise ConfigError("need at least 2 classes (background + one object class)")
    n_obj = num_classes - 1
    lo, hi = OBJECT_DEPTH_RANGE
    width = (hi - lo) / n_obj
    # Band order interleaves pairs: members of pair k get bands k and k + ceil(n/2).
    half = (n_obj + 1) // 2
    styles = [ClassStyle("background", BACKGROUND_COLOR, BACKGROUND_DEPTH)]
    for i in range(n_obj):
        pair, member = divmod(i, 2)
        band = pair + member * half
        band_lo = lo + band * width
        # Keep a gap between neighbouring bands.
        styles.append(ClassStyle(
            f"{'near' if member == 0 else 'far'}_{pair}",
            _PAIR_COLORS[pair % len(_PAIR_COLORS)],
            (round(band_lo + 0.1 * width, 6), round(band_lo + 0.9 * width, 6)),
        ))
    return styles


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    num_objects: int = 4
    height: int = 64
    width: int = 64
    num_classes: int = 4
    palette: Optional[tuple] = None
    max_tilt: float = 0.3
    color_noise: float = 0.02

    def styles(self) -> list[ClassStyle]:
        return list(self.palette) if self.palette is not None else default_palette(self.num_classes)


@dataclass
class RgbdSample:
    rgb: np.ndarray            # H x W x 3, float32 in [0, 1]
    depth: np.ndarray          # H x W, float32 metres, 0 = invalid
    labels: np.ndarray         # H x W, int32
    normals: Optional[np.ndarray] = None   # H x W x 3, float32 unit vectors

    @property
    def shape(self) -> tuple:
        return self.labels.shape

    def equals(self, other: "RgbdSample") -> bool:
        same = (np.array_equal(self.rgb, other.rgb) and np.array_equal(self.depth, other.depth)
                and np.array_equal(self.labels, other.labels))
        if self.normals is None or other.normals is None:
            return same and self.normals is None and other.normals is None
        return same and np.array_equal(self.normals, other.normals)


@dataclass
class SceneObject:
    label: int
    shape: str          # "rect" | "disk"
    box: tuple          # rect: (top, left, bottom, right); disk: (cy, cx, radius)
    center_depth: float
    normal: np.ndarray = field(repr=False)

    def mask(self, h: int, w: int) -> np.ndarray:
        yy, xx = np.mgrid[0:h, 0:w]
        if self.shape == "rect":
            t, l, b, r = self.box
            return (yy >= t) & (yy < b) & (xx >= l) & (xx < r)
        cy, cx, rad = self.box
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= rad ** 2

    def center_pixel(self) -> tuple:
        if self.shape == "rect":
            t, l, b, r = self.box
            return (t + b - 1) / 2.0, (l + r - 1) / 2.0
        return float(self.box[0]), float(self.box[1])


def camera_rays(h: int, w: int) -> np.ndarray:
    """Unnormalised viewing rays (x/f, y/f, 1) per pixel, shape H x W x 3."""
    f = float(w)
    v, u = np.mgrid[0:h, 0:w].astype(np.float64)
    rays = np.empty((h, w, 3))
    rays[..., 0] = (u + 0.5 - w / 2.0) / f
    rays[..., 1] = (v + 0.5 - h / 2.0) / f
    rays[..., 2] = 1.0
    return rays


def plane_depth(obj: SceneObject, rays: np.ndarray, h: int, w: int) -> np.ndarray:
    """Depth of the object's plane along every pixel ray."""
    cy, cx = obj.center_pixel()
    f = float(w)
    anchor = np.array([(cx + 0.5 - w / 2.0) / f, (cy + 0.5 - h / 2.0) / f, 1.0]) * obj.center_depth
    offset = float(obj.normal @ anchor)
    return offset / (rays @ obj.normal)


def sample_objects(spec: SceneSpec, rng: np.random.Generator) -> tuple[float, list[SceneObject]]:
    styles = spec.styles()
    h, w = spec.height, spec.width
    bg_depth = float(rng.uniform(*styles[0].depth_band))
    objects = []
    for _ in range(spec.num_objects):
        label = int(rng.integers(1, len(styles)))
        z = float(rng.uniform(*styles[label].depth_band))
        tilt = rng.uniform(-spec.max_tilt, spec.max_tilt, size=2)
        normal = np.array([tilt[0], tilt[1], 1.0])
        normal /= np.linalg.norm(normal)
        if rng.random() < 0.5:
            bh = int(rng.integers(max(2, h // 7), max(3, h * 2 // 5) + 1))
            bw = int(rng.integers(max(2, w // 7), max(3, w * 2 // 5) + 1))
            top = int(rng.integers(0, h - bh + 1))
            left = int(rng.integers(0, w - bw + 1))
            obj = SceneObject(label, "rect", (top, left, top + bh, left + bw), z, normal)
        else:
            rad = int(rng.integers(max(1, min(h, w) // 12), max(2, min(h, w) // 5) + 1))
            cy = int(rng.integers(rad, h - rad))
            cx = int(rng.integers(rad, w - rad))
            obj = SceneObject(label, "disk", (cy, cx, rad), z, normal)
        objects.append(obj)
    return bg_depth, objects


def render(spec: SceneSpec, bg_depth: float, objects: list[SceneObject],
           rng: np.random.Generator) -> RgbdSample:
    styles = spec.styles()
    h, w = spec.height, spec.width
    rays = camera_rays(h, w)
    depth = np.full((h, w), bg_depth)
    labels = np.zeros((h, w), dtype=np.int32)
    normals = np.zeros((h, w, 3))
    normals[..., 2] = 1.0
    for obj in objects:
        m = obj.mask(h, w)
        z = plane_depth(obj, rays, h, w)
        front = m & (z < depth)
        depth[front] = z[front]
        labels[front] = obj.label
        normals[front] = obj.normal
    if not (labels == 0).any():
        raise ConfigError("objects cover the whole image; no background pixels left")
    palette = np.array([s.color for s in styles], dtype=np.float64)
    light = rng.uniform(0.9, 1.1)
    rgb = palette[labels] * light
    if spec.color_noise > 0:
        rgb = rgb + rng.normal(0.0, spec.color_noise, size=rgb.shape)
    rgb = np.clip(rgb, 0.0, 1.0)
    return RgbdSample(rgb.astype(np.float32), depth.astype(np.float32), labels, normals.astype(np.float32))


def generate_scene(spec: SceneSpec) -> RgbdSample:
    if spec.num_objects < 0:
        raise ConfigError("num_objects must be >= 0")
    if spec.height < 8 or spec.width < 8:
        raise ConfigError("image must be at least 8x8")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([spec.seed])))
    bg_depth, objects = sample_objects(spec, rng)
    return render(spec, bg_depth, objects, rng)


def sample_seed(base_seed: int, index: int) -> int:
    """Per-sample scene seed for dataset generation."""
    return int(np.random.SeedSequence([base_seed, index]).generate_state(1, np.uint64)[0] >> 1)


def class_names(num_classes: int) -> list[str]:
    return [s.name for s in default_palette(num_classes)]


__all__ = ["ClassStyle", "RgbdSample", "SceneSpec", "SceneObject", "generate_scene", "default_palette",
           "class_names", "sample_seed", "IGNORE_INDEX"]
