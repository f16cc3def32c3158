"""Sample decoding and the resize/crop augmentation shared by both modalities."""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np
import torch

from tranadapt.data.manifest import (
    CLASS_TO_INDEX,
    CameraDomain,
    DatasetManifest,
    ManifestRecord,
)

RESIZE_SIZE = 256
CROP_SIZE = 224

# Channel normalization constants (the ImageNet convention); applied to both
# RGB and HHA tensors after scaling to [0, 1].
NORM_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
NORM_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)


class SampleLoadError(Exception):
    def __init__(self, record_id: str, message: str):
        super().__init__(f"record {record_id}: {message}")
        self.record_id = record_id


@dataclass
class MultiModalSample:
    rgb: np.ndarray          # H x W x 3 uint8
    depth_mm: np.ndarray     # H x W uint16, millimeters, 0 = missing
    hha: np.ndarray          # H x W x 3 uint8
    camera: CameraDomain
    label: int | None = None

    def __post_init__(self):
        shapes = {self.rgb.shape[:2], self.depth_mm.shape[:2], self.hha.shape[:2]}
        if len(shapes) != 1:
            raise ValueError(f"modalities disagree on spatial size: {shapes}")


def decode_depth(raw: np.ndarray, encoding: str) -> np.ndarray:
    """Recover millimeter depth from raw 16-bit PNG values.

    SUN RGB-D stores depth with the 3 low bits rotated to the top of the
    16-bit word; ``sunrgbd_rotated`` undoes that. ``plain_mm`` is identity.
    """
    raw = np.asarray(raw, dtype=np.uint16)
    if encoding == "plain_mm":
        return raw
    if encoding == "sunrgbd_rotated":
        return ((raw >> np.uint16(3)) | (raw << np.uint16(13))).astype(np.uint16)
    raise ValueError(f"unknown depth encoding {encoding!r}")


def load_sample(
    record: ManifestRecord,
    manifest: DatasetManifest,
    context: str = "source",
) -> MultiModalSample:
    """Decode one record's three modalities.

    ``context`` is one of ``source`` / ``target`` / ``eval``. Target-context
    loads never carry a label: the target domain is unsupervised during
    training and its labels must be unreachable from the training path.
    """
    if context not in ("source", "target", "eval"):
        raise ValueError(f"unknown loading context {context!r}")

    def read(path_rel: str, flags: int) -> np.ndarray:
        path = manifest.resolve(path_rel)
        img = cv2.imread(str(path), flags)
        if img is None:
            raise SampleLoadError(record.id, f"cannot read image {path}")
        return img

    bgr = read(record.rgb_path, cv2.IMREAD_COLOR)
    rgb = cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB)
    raw_depth = read(record.depth_path, cv2.IMREAD_UNCHANGED)
    if raw_depth.ndim != 2 or raw_depth.dtype != np.uint16:
        raise SampleLoadError(record.id, f"depth must be single-channel 16-bit, got {raw_depth.dtype} {raw_depth.shape}")
    depth_mm = decode_depth(raw_depth, record.depth_encoding)
    hha_bgr = read(record.hha_path, cv2.IMREAD_COLOR)
    hha = cv2.cvtColor(hha_bgr, cv2.COLOR_BGR2RGB)

    label = None
    if context != "target":
        label = CLASS_TO_INDEX.get(record.scene_class)
    try:
        return MultiModalSample(rgb=rgb, depth_mm=depth_mm, hha=hha, camera=record.camera, label=label)
    except ValueError as e:
        raise SampleLoadError(record.id, str(e)) from e


def crop_offsets(mode: str, seed_stream: np.random.Generator | None = None) -> tuple[int, int]:
    """(top, left) of the 224 crop inside the 256 resize: random in train
    mode, central in test mode."""
    margin = RESIZE_SIZE - CROP_SIZE
    if mode == "train":
        if seed_stream is None:
            seed_stream = np.random.default_rng()
        return int(seed_stream.integers(0, margin + 1)), int(seed_stream.integers(0, margin + 1))
    if mode == "test":
        return margin // 2, margin // 2
    raise ValueError(f"unknown augment mode {mode!r}")


def augment_raw(
    sample: MultiModalSample,
    mode: str,
    seed_stream: np.random.Generator | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Resize both modalities to 256 then crop 224 with one shared offset;
    returns float32 arrays in [0, 1], HWC."""
    rgb = cv2.resize(sample.rgb, (RESIZE_SIZE, RESIZE_SIZE), interpolation=cv2.INTER_LINEAR)
    hha = cv2.resize(sample.hha, (RESIZE_SIZE, RESIZE_SIZE), interpolation=cv2.INTER_LINEAR)
    top, left = crop_offsets(mode, seed_stream)
    rgb = rgb[top : top + CROP_SIZE, left : left + CROP_SIZE].astype(np.float32) / 255.0
    hha = hha[top : top + CROP_SIZE, left : left + CROP_SIZE].astype(np.float32) / 255.0
    return rgb, hha


def normalize_tensor(img01_hwc: np.ndarray) -> torch.Tensor:
    x = (img01_hwc - NORM_MEAN) / NORM_STD
    return torch.from_numpy(np.ascontiguousarray(x.transpose(2, 0, 1)))


def to_tensor01(img01_hwc: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(img01_hwc.transpose(2, 0, 1)))


def augment(
    sample: MultiModalSample,
    mode: str,
    seed_stream: np.random.Generator | None = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Augmented, per-channel-normalized 3x224x224 tensors for both
    modalities; one crop offset shared between RGB and HHA."""
    rgb01, hha01 = augment_raw(sample, mode, seed_stream)
    return normalize_tensor(rgb01), normalize_tensor(hha01)
