"""Builds the four-camera benchmark manifest from a SUN RGB-D style tree.

Expected layout under ``metadata_root``: one directory per camera (``kv1``,
``kv2``, ``realsense``, ``xtion``), each containing image directories
recognized by a ``scene.txt`` annotation plus ``image/`` and ``depth/``
subdirectories. Refined depth (``depth_bfx/``) is preferred over raw depth
when present; the choice is recorded in the manifest provenance.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

from tranadapt.data.manifest import (
    CameraDomain,
    DatasetManifest,
    EXTRA_CLASSES,
    MAIN_CLASSES,
    ManifestRecord,
)

log = logging.getLogger(__name__)

CAMERA_DIRS = {
    "kv1": CameraDomain.KINECT_V1,
    "kv2": CameraDomain.KINECT_V2,
    "realsense": CameraDomain.REALSENSE,
    "xtion": CameraDomain.XTION,
}

# Low-cardinality classes are merged into their parent before counting.
CLASS_MERGE = {"office_kitchen": "kitchen"}

KNOWN_CLASSES = set(MAIN_CLASSES) | set(EXTRA_CLASSES)


class SunRgbdBuildError(Exception):
    pass


def _first_image(directory: Path) -> Path | None:
    if not directory.is_dir():
        return None
    for ext in ("*.png", "*.jpg", "*.jpeg"):
        matches = sorted(directory.glob(ext))
        if matches:
            return matches[0]
    return None


def build_sunrgbd_subset(metadata_root: Path | str, output: Path | str) -> DatasetManifest:
    """Scan the annotation tree and emit the benchmark manifest at ``output``.

    Records with scene labels outside the 13 considered classes are skipped
    and tallied in a ``<output stem>.skips.json`` report.
    """
    metadata_root = Path(metadata_root)
    output = Path(output)
    if not metadata_root.is_dir():
        raise SunRgbdBuildError(f"metadata root not found: {metadata_root}")
    camera_roots = {
        name: metadata_root / name for name in CAMERA_DIRS if (metadata_root / name).is_dir()
    }
    if not camera_roots:
        raise SunRgbdBuildError(
            f"no camera directories ({', '.join(CAMERA_DIRS)}) under {metadata_root}"
        )

    records: list[ManifestRecord] = []
    skips: dict[str, int] = {}
    used_refined = False
    for cam_dir in sorted(camera_roots):
        camera = CAMERA_DIRS[cam_dir]
        for scene_file in sorted(camera_roots[cam_dir].rglob("scene.txt")):
            img_dir = scene_file.parent
            try:
                label = scene_file.read_text(encoding="utf-8").strip()
            except OSError as e:
                raise SunRgbdBuildError(f"unreadable annotation {scene_file}: {e}") from e
            label = CLASS_MERGE.get(label, label)
            if label not in KNOWN_CLASSES:
                skips[label] = skips.get(label, 0) + 1
                continue

            rgb = _first_image(img_dir / "image")
            depth = _first_image(img_dir / "depth_bfx")
            if depth is not None:
                used_refined = True
            else:
                depth = _first_image(img_dir / "depth")
            if rgb is None or depth is None:
                raise SunRgbdBuildError(f"missing image/depth files under {img_dir}")
            hha = img_dir / "hha" / "hha.png"

            rel = lambda p: str(p.relative_to(metadata_root))
            records.append(
                ManifestRecord(
                    id=f"{cam_dir}/{img_dir.relative_to(camera_roots[cam_dir])}",
                    camera=camera,
                    scene_class=label,
                    rgb_path=rel(rgb),
                    depth_path=rel(depth),
                    hha_path=rel(hha),
                    depth_encoding="sunrgbd_rotated",
                )
            )

    provenance = f"sunrgbd:{metadata_root.name}:depth={'refined' if used_refined else 'raw'}"
    manifest = DatasetManifest(tuple(records), provenance=provenance, seed=0, root=metadata_root)
    manifest.save(output)
    output.with_suffix(".skips.json").write_text(json.dumps(skips, indent=2), encoding="utf-8")
    if skips:
        log.info("skipped %d records with out-of-scope labels", sum(skips.values()))
    return manifest
