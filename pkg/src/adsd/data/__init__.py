"""Synthetic RGB-D data, augmentation and on-disk formats."""

from .augment import AugmentParams, apply_augment, augment, sample_params
from .dataset import (Batch, Dataset, Manifest, collate, generate_dataset, read_manifest,
                      recount_histogram, write_manifest)
from .synth import RgbdSample, SceneSpec, class_names, default_palette, generate_scene
from .tensorfile import read_tensor, write_tensor

__all__ = [
    "AugmentParams", "apply_augment", "augment", "sample_params",
    "Batch", "Dataset", "Manifest", "collate", "generate_dataset", "read_manifest",
    "recount_histogram", "write_manifest",
    "RgbdSample", "SceneSpec", "class_names", "default_palette", "generate_scene",
    "read_tensor", "write_tensor",
]
