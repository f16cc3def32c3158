"""Procedural desk-scale substitute for the four-camera benchmark.

Scenes are composed of geometric primitives (boards / panels) in front of a
wall-and-floor room. A scene class is a layout archetype: a fixed number of
objects with canonical positions, sizes, depths and a canonical color
palette, all jittered per sample. RGB is a shaded rendering; depth is the
true per-pixel range in millimeters, so the RGB <-> depth relation is
consistent and inter-modality translation is learnable.

The second domain (``synthetic_b``) differs by a camera-style transform of
configurable strength: hue rotation and additive noise on RGB, plus depth
quantization and range clipping, mimicking the appearance gap between real
3D sensors. At strength 0 the two domains are identically distributed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from tranadapt.data.manifest import CameraDomain, DatasetManifest, MAIN_CLASSES, ManifestRecord
from tranadapt.hha.reference import CameraIntrinsics, encode_hha

CAMERA_HEIGHT_M = 1.2


@dataclass(frozen=True)
class SynthConfig:
    n_per_class: int = 30
    n_classes: int = 5
    image_size: int = 64
    shift_strength: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError("need at least 2 classes")
        if self.n_classes > len(MAIN_CLASSES):
            raise ValueError(f"at most {len(MAIN_CLASSES)} classes supported")
        if self.image_size < 32:
            raise ValueError("image_size must be >= 32")


def synth_intrinsics(image_size: int) -> CameraIntrinsics:
    s = float(image_size)
    return CameraIntrinsics(fx=s, fy=s, cx=s / 2.0, cy=s / 2.0)


@dataclass(frozen=True)
class _Archetype:
    """Canonical layout and palette for one scene class."""

    n_objects: int
    centers: np.ndarray       # n x 2 in [0,1] image coords
    sizes: np.ndarray         # n x 2 in [0,1] of image size
    depths: np.ndarray        # n, meters
    shapes: np.ndarray        # n, 0 = rectangle, 1 = ellipse
    colors: np.ndarray        # n x 3 in [0,1]
    wall_color: np.ndarray    # 3 in [0,1]


def _make_archetype(class_idx: int, seed: int) -> _Archetype:
    rng = np.random.default_rng([seed, 7919, class_idx])
    n = int(rng.integers(2, 6))
    centers = rng.uniform([0.15, 0.2], [0.85, 0.85], size=(n, 2))
    sizes = rng.uniform(0.12, 0.3, size=(n, 2))
    depths = rng.uniform(1.0, 2.6, size=n)
    shapes = rng.integers(0, 2, size=n)
    # Saturated, class-specific palette: a deliberate color shortcut that the
    # domain transform's hue rotation breaks.
    hues = (rng.uniform(0, 180) + np.arange(n) * 180.0 / max(n, 1)) % 180.0
    hsv = np.stack([hues, np.full(n, 200.0), rng.uniform(150, 240, size=n)], axis=1)
    colors = cv2.cvtColor(hsv[None].astype(np.uint8), cv2.COLOR_HSV2RGB)[0] / 255.0
    wall_color = rng.uniform(0.45, 0.75, size=3)
    return _Archetype(n, centers, sizes, depths, shapes, colors, wall_color)


def _render_scene(arch: _Archetype, size: int, rng: np.random.Generator):
    """Render (rgb float [0,1] HxWx3, depth_m HxW) for one jittered sample."""
    s = size
    intr = synth_intrinsics(s)
    u = np.arange(s, dtype=np.float64)[None, :]
    v = np.arange(s, dtype=np.float64)[:, None]

    wall_z = rng.uniform(2.8, 3.6)
    depth = np.full((s, s), wall_z)
    # Floor plane below the horizon: y = -camera height.
    dv = v - intr.cy
    with np.errstate(divide="ignore"):
        floor_z = np.where(dv > 0, CAMERA_HEIGHT_M * intr.fy / np.where(dv > 0, dv, 1.0), np.inf)
    floor_mask = floor_z < depth
    depth = np.where(floor_mask, floor_z, depth)

    rgb = np.empty((s, s, 3))
    rgb[:] = arch.wall_color * rng.uniform(0.9, 1.1)
    floor_shade = np.clip(0.35 + 0.05 * rng.normal(), 0.2, 0.6)
    rgb[floor_mask] = floor_shade

    order = np.argsort(arch.depths)[::-1]  # far to near
    for i in order:
        cu, cv_ = arch.centers[i] + rng.uniform(-0.05, 0.05, size=2)
        su, sv_ = arch.sizes[i] * rng.uniform(0.85, 1.15, size=2)
        zo = arch.depths[i] + rng.uniform(-0.15, 0.15)
        cu, cv_ = cu * s, cv_ * s
        hu, hv = su * s / 2, sv_ * s / 2
        if arch.shapes[i] == 0:
            mask = (np.abs(u - cu) <= hu) & (np.abs(v - cv_) <= hv)
        else:
            mask = ((u - cu) / max(hu, 1e-6)) ** 2 + ((v - cv_) / max(hv, 1e-6)) ** 2 <= 1.0
        mask &= zo < depth
        depth[mask] = zo
        shade = np.clip(1.3 / (0.6 + 0.35 * zo), 0.3, 1.5)
        rgb[mask] = np.clip(arch.colors[i] * shade, 0.0, 1.0)

    # Global illumination gradient, brighter at the top.
    light = 1.0 - 0.25 * (v / s)
    rgb = np.clip(rgb * light[..., None] * rng.uniform(0.92, 1.08), 0.0, 1.0)
    return rgb, depth


def _apply_domain_shift(
    rgb: np.ndarray, depth_m: np.ndarray, strength: float, rng: np.random.Generator
):
    """Camera-style transform for the second domain: hue rotation + RGB noise
    + depth quantization + range clipping, all scaled by ``strength``."""
    if strength <= 0:
        return rgb, depth_m
    hsv = cv2.cvtColor((rgb * 255).astype(np.uint8), cv2.COLOR_RGB2HSV).astype(np.float64)
    hsv[..., 0] = (hsv[..., 0] + strength * 80.0) % 180.0
    rgb = cv2.cvtColor(hsv.astype(np.uint8), cv2.COLOR_HSV2RGB) / 255.0
    rgb = np.clip(rgb + rng.normal(0.0, 0.08 * strength, rgb.shape), 0.0, 1.0)

    step_m = 0.4 * strength  # 8-ish levels over a room-scale depth span
    depth_m = np.round(depth_m / step_m) * step_m
    max_range = 10.0 - strength * 6.5
    depth_m = np.where(depth_m > max_range, 0.0, depth_m)
    return rgb, depth_m


def synth_generate(config: SynthConfig, output: Path | str) -> DatasetManifest:
    """Render the two-domain synthetic benchmark and write its manifest.

    Layout under ``output``: ``<domain>/<class>/<idx>_{rgb,depth,hha}.png``
    plus ``manifest.jsonl``. Deterministic given the config.
    """
    output = Path(output)
    output.mkdir(parents=True, exist_ok=True)
    intr = synth_intrinsics(config.image_size)
    classes = MAIN_CLASSES[: config.n_classes]
    records: list[ManifestRecord] = []

    for d_idx, domain in enumerate((CameraDomain.SYNTHETIC_A, CameraDomain.SYNTHETIC_B)):
        for c_idx, cls in enumerate(classes):
            arch = _make_archetype(c_idx, config.seed)
            for i in range(config.n_per_class):
                # Scene draws are shared between the two domains; the domain
                # difference is exactly the camera-style transform.
                rng = np.random.default_rng([config.seed, c_idx, i])
                rgb, depth_m = _render_scene(arch, config.image_size, rng)
                if d_idx == 1:
                    shift_rng = np.random.default_rng([config.seed, 1, c_idx, i])
                    rgb, depth_m = _apply_domain_shift(rgb, depth_m, config.shift_strength, shift_rng)
                depth_mm = np.clip(np.round(depth_m * 1000.0), 0, 65535).astype(np.uint16)
                hha = encode_hha(depth_mm, intr)

                rel_dir = Path(domain.value) / cls
                (output / rel_dir).mkdir(parents=True, exist_ok=True)
                rgb_u8 = (rgb * 255).astype(np.uint8)
                paths = {
                    "rgb": rel_dir / f"{i:04d}_rgb.png",
                    "depth": rel_dir / f"{i:04d}_depth.png",
                    "hha": rel_dir / f"{i:04d}_hha.png",
                }
                cv2.imwrite(str(output / paths["rgb"]), cv2.cvtColor(rgb_u8, cv2.COLOR_RGB2BGR))
                cv2.imwrite(str(output / paths["depth"]), depth_mm)
                cv2.imwrite(str(output / paths["hha"]), cv2.cvtColor(hha, cv2.COLOR_RGB2BGR))
                records.append(
                    ManifestRecord(
                        id=f"{domain.value}/{cls}/{i:04d}",
                        camera=domain,
                        scene_class=cls,
                        rgb_path=str(paths["rgb"]),
                        depth_path=str(paths["depth"]),
                        hha_path=str(paths["hha"]),
                    )
                )

    provenance = "synth:" + json.dumps(
        {
            "n_per_class": config.n_per_class,
            "n_classes": config.n_classes,
            "image_size": config.image_size,
            "shift_strength": config.shift_strength,
        },
        sort_keys=True,
    )
    manifest = DatasetManifest(tuple(records), provenance=provenance, seed=config.seed, root=output)
    manifest.save(output / "manifest.jsonl")
    return manifest
