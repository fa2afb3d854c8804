"""Random scale / horizontal flip / crop applied jointly to all modalities."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .synth import RgbdSample

SCALE_RANGE = (0.8, 1.4)
_MAX_TRIES = 1000


@dataclass(frozen=True)
class AugmentParams:
    scale: float
    flip: bool
    top: int
    left: int
    crop: tuple


def _source_coords(out_len: int, offset: int, scaled_len: int, src_len: int) -> np.ndarray:
    ratio = scaled_len / src_len
    return (np.arange(out_len) + offset + 0.5) / ratio - 0.5


def _bilinear(img: np.ndarray, ys: np.ndarray, xs: np.ndarray, valid: Optional[np.ndarray] = None) -> np.ndarray:
    """Sample ``img`` (H x W [x C]) on the grid ys x xs with edge clamping.

    When ``valid`` is given, invalid neighbours get zero weight and pixels with
    no valid neighbour come out as 0.
    """
    h, w = img.shape[:2]
    ys = np.clip(ys, 0, h - 1)
    xs = np.clip(xs, 0, w - 1)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    corners = [(y0, x0, (1 - wy) * (1 - wx)), (y0, x1, (1 - wy) * wx),
               (y1, x0, wy * (1 - wx)), (y1, x1, wy * wx)]
    acc = 0.0
    norm = 0.0
    for yi, xi, wgt in corners:
        vals = img[np.ix_(yi, xi)] if img.ndim == 2 else img[yi[:, None], xi[None, :]]
        if valid is not None:
            wgt = wgt * valid[np.ix_(yi, xi)]
            norm = norm + wgt
        if img.ndim == 3:
            wgt = wgt[..., None]
        acc = acc + vals * wgt
    if valid is not None:
        with np.errstate(invalid="ignore", divide="ignore"):
            acc = np.where(norm > 0, acc / np.where(norm > 0, norm, 1), 0.0)
    return acc


def _nearest(img: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    h, w = img.shape[:2]
    yi = np.clip(np.floor(ys + 0.5), 0, h - 1).astype(np.int64)
    xi = np.clip(np.floor(xs + 0.5), 0, w - 1).astype(np.int64)
    return img[yi[:, None], xi[None, :]]


def apply_augment(sample: RgbdSample, params: AugmentParams) -> RgbdSample:
    """Deterministic transform: flip, zoom by ``scale``, crop at (top, left).

    Depth is divided by the effective zoom so the scene stays metrically
    consistent (a zoom is read as the scene moving closer); normals keep their
    orientation except that a horizontal flip negates their x component.
    """
    h, w = sample.shape
    ch, cw = params.crop
    sh, sw = int(round(h * params.scale)), int(round(w * params.scale))
    if sh < ch or sw < cw or params.top < 0 or params.left < 0 or params.top + ch > sh or params.left + cw > sw:
        raise ValueError(f"crop {params.crop} at ({params.top}, {params.left}) does not fit {sh}x{sw}")
    ys = _source_coords(ch, params.top, sh, h)
    xs = _source_coords(cw, params.left, sw, w)
    if params.flip:
        xs = (w - 1) - xs
    zoom = sh / h
    rgb = _bilinear(sample.rgb.astype(np.float64), ys, xs)
    depth = _bilinear(sample.depth.astype(np.float64), ys, xs, valid=sample.depth > 0) / zoom
    labels = _nearest(sample.labels, ys, xs)
    normals = None
    if sample.normals is not None:
        normals = _nearest(sample.normals, ys, xs).copy()
        if params.flip:
            normals[..., 0] = -normals[..., 0]
    return RgbdSample(rgb.astype(np.float32), depth.astype(np.float32), labels.astype(sample.labels.dtype),
                      normals)


def sample_params(shape: tuple, rng: np.random.Generator, crop: Optional[tuple] = None,
                  scale_range: tuple = SCALE_RANGE, flip_prob: float = 0.5) -> AugmentParams:
    """Draw scale, flip and crop offsets; scales whose image cannot hold the
    crop are redrawn."""
    h, w = shape
    crop = tuple(crop) if crop is not None else (h, w)
    for _ in range(_MAX_TRIES):
        scale = float(rng.uniform(*scale_range))
        sh, sw = int(round(h * scale)), int(round(w * scale))
        if sh >= crop[0] and sw >= crop[1]:
            break
    else:
        scale, sh, sw = 1.0, h, w
    flip = bool(rng.random() < flip_prob)
    top = int(rng.integers(0, sh - crop[0] + 1))
    left = int(rng.integers(0, sw - crop[1] + 1))
    return AugmentParams(scale, flip, top, left, crop)


def augment(sample: RgbdSample, rng: np.random.Generator, crop: Optional[tuple] = None) -> RgbdSample:
    return apply_augment(sample, sample_params(sample.shape, rng, crop))
