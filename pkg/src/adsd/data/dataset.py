"""On-disk datasets: TensorFile samples plus a line-oriented manifest.

Manifest layout (UTF-8)::

    # adsd dataset manifest
    version = 1
    classes = background,near_0,far_0,near_1
    height = 64
    width = 64
    seed = 7
    count = 2
    pixel_counts = 5000,1200,900,1092
    ---
    rgb/00000.tnsr depth/00000.tnsr labels/00000.tnsr normals/00000.tnsr
    rgb/00001.tnsr depth/00001.tnsr labels/00001.tnsr normals/00001.tnsr

Each record lists rgb, depth, labels and optionally normals, relative to the
dataset directory. ``pixel_counts`` is the class histogram over every label
file in the dataset (ignored pixels excluded).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from ..errors import DataError, FormatError
from ..ops import IGNORE_INDEX
from .synth import RgbdSample, SceneSpec, class_names, generate_scene, sample_seed
from .tensorfile import read_tensor, write_tensor

MANIFEST = "manifest.txt"
MANIFEST_VERSION = 1
SEPARATOR = "---"


@dataclass
class Manifest:
    classes: list
    height: int
    width: int
    pixel_counts: list
    records: list = field(default_factory=list)
    seed: Optional[int] = None

    @property
    def num_classes(self) -> int:
        return len(self.classes)


def class_histogram(labels: np.ndarray, num_classes: int, ignore_index: int = IGNORE_INDEX) -> np.ndarray:
    lab = np.asarray(labels).reshape(-1)
    lab = lab[lab != ignore_index]
    if lab.size and (lab.min() < 0 or lab.max() >= num_classes):
        raise DataError(f"label outside [0, {num_classes})")
    return np.bincount(lab.astype(np.int64), minlength=num_classes)


def write_manifest(directory, manifest: Manifest) -> None:
    lines = [
        "# adsd dataset manifest",
        f"version = {MANIFEST_VERSION}",
        f"classes = {','.join(manifest.classes)}",
        f"height = {manifest.height}",
        f"width = {manifest.width}",
    ]
    if manifest.seed is not None:
        lines.append(f"seed = {manifest.seed}")
    lines += [
        f"count = {len(manifest.records)}",
        f"pixel_counts = {','.join(str(int(c)) for c in manifest.pixel_counts)}",
        SEPARATOR,
    ]
    lines += [" ".join(rec) for rec in manifest.records]
    Path(directory, MANIFEST).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(directory) -> Manifest:
    path = Path(directory, MANIFEST)
    if not path.is_file():
        raise DataError(f"no {MANIFEST} in {directory}")
    header: dict[str, str] = {}
    records = []
    in_body = False
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line == SEPARATOR:
            in_body = True
            continue
        if in_body:
            parts = line.split()
            if len(parts) not in (3, 4):
                raise FormatError(f"{path}:{lineno}: expected 3 or 4 paths, got {len(parts)}", "record")
            records.append(parts)
        else:
            key, sep, value = line.partition("=")
            if not sep:
                raise FormatError(f"{path}:{lineno}: expected 'key = value'", "header")
            header[key.strip()] = value.strip()
    for key in ("version", "classes", "height", "width", "count", "pixel_counts"):
        if key not in header:
            raise FormatError(f"{path}: missing header field '{key}'", key)
    if int(header["version"]) != MANIFEST_VERSION:
        raise FormatError(f"{path}: unsupported manifest version {header['version']}", "version")
    classes = header["classes"].split(",")
    counts = [int(c) for c in header["pixel_counts"].split(",")] if header["pixel_counts"] else []
    if len(counts) != len(classes):
        raise FormatError(f"{path}: {len(counts)} pixel counts for {len(classes)} classes", "pixel_counts")
    if int(header["count"]) != len(records):
        raise FormatError(f"{path}: header count {header['count']} but {len(records)} records", "count")
    return Manifest(classes, int(header["height"]), int(header["width"]), counts, records,
                    int(header["seed"]) if "seed" in header else None)


def sample_paths(index: int, with_normals: bool = True) -> list:
    names = ["rgb", "depth", "labels"] + (["normals"] if with_normals else [])
    return [f"{n}/{index:05d}.tnsr" for n in names]


def generate_dataset(out_dir, seed: int, count: int, height: int = 64, width: int = 64,
                     num_classes: int = 4, min_objects: int = 2, max_objects: int = 5) -> Manifest:
    """Write ``count`` synthetic scenes plus the manifest to ``out_dir``."""
    out = Path(out_dir)
    for sub in ("rgb", "depth", "labels", "normals"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    counts = np.zeros(num_classes, dtype=np.int64)
    records = []
    picker = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0x0B])))
    for i in range(count):
        n_obj = int(picker.integers(min_objects, max_objects + 1))
        sample = generate_scene(SceneSpec(sample_seed(seed, i), n_obj, height, width, num_classes))
        paths = sample_paths(i)
        write_sample(out, paths, sample)
        counts += class_histogram(sample.labels, num_classes)
        records.append(paths)
    manifest = Manifest(class_names(num_classes), height, width, counts.tolist(), records, seed)
    write_manifest(out, manifest)
    return manifest


def write_sample(directory: Path, paths: Sequence[str], sample: RgbdSample) -> None:
    write_tensor(directory / paths[0], sample.rgb.astype(np.float32))
    write_tensor(directory / paths[1], sample.depth.astype(np.float32))
    write_tensor(directory / paths[2], sample.labels.astype(np.int32))
    if len(paths) > 3 and sample.normals is not None:
        write_tensor(directory / paths[3], sample.normals.astype(np.float32))


def read_sample(directory, record: Sequence[str]) -> RgbdSample:
    d = Path(directory)
    rgb = read_tensor(d / record[0])
    depth = read_tensor(d / record[1])
    labels = read_tensor(d / record[2])
    normals = read_tensor(d / record[3]) if len(record) > 3 else None
    if rgb.ndim != 3 or rgb.shape[2] != 3 or depth.shape != rgb.shape[:2] or labels.shape != rgb.shape[:2]:
        raise DataError(f"sample {record[0]} has inconsistent shapes "
                        f"rgb {rgb.shape}, depth {depth.shape}, labels {labels.shape}")
    return RgbdSample(rgb, depth, labels, normals)


@dataclass
class Batch:
    """NCHW arrays for one minibatch."""

    rgb: np.ndarray        # N x 3 x H x W
    depth: np.ndarray      # N x 1 x H x W
    labels: np.ndarray     # N x H x W
    normals: Optional[np.ndarray] = None   # N x 3 x H x W

    def __len__(self):
        return self.labels.shape[0]


def collate(samples: Sequence[RgbdSample], dtype=np.float32) -> Batch:
    rgb = np.stack([s.rgb for s in samples]).transpose(0, 3, 1, 2).astype(dtype)
    depth = np.stack([s.depth for s in samples])[:, None].astype(dtype)
    labels = np.stack([s.labels for s in samples]).astype(np.int64)
    normals = None
    if all(s.normals is not None for s in samples):
        normals = np.stack([s.normals for s in samples]).transpose(0, 3, 1, 2).astype(dtype)
    return Batch(np.ascontiguousarray(rgb), np.ascontiguousarray(depth), labels,
                 None if normals is None else np.ascontiguousarray(normals))


class Dataset:
    """All samples of a dataset directory, loaded into memory."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self.manifest = read_manifest(directory)
        self.samples = [read_sample(directory, rec) for rec in self.manifest.records]
        for s in self.samples:
            if s.shape != (self.manifest.height, self.manifest.width):
                raise DataError(f"sample shape {s.shape} differs from manifest "
                                f"{self.manifest.height}x{self.manifest.width}")

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, i) -> RgbdSample:
        return self.samples[i]

    @property
    def num_classes(self) -> int:
        return self.manifest.num_classes

    @property
    def class_names(self) -> list:
        return list(self.manifest.classes)

    def histogram(self) -> np.ndarray:
        return np.asarray(self.manifest.pixel_counts, dtype=np.int64)

    def batches(self, batch_size: int, order: Optional[Sequence[int]] = None,
                transform=None) -> Iterator[Batch]:
        order = range(len(self)) if order is None else order
        order = list(order)
        for start in range(0, len(order), batch_size):
            chunk = [self.samples[i] if transform is None else transform(i, self.samples[i])
                     for i in order[start:start + batch_size]]
            yield collate(chunk)


def recount_histogram(directory) -> np.ndarray:
    """Class histogram recomputed from the label files (for auditing)."""
    m = read_manifest(directory)
    total = np.zeros(m.num_classes, dtype=np.int64)
    for rec in m.records:
        total += class_histogram(read_tensor(os.path.join(directory, rec[2])), m.num_classes)
    return total
