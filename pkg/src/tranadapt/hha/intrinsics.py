"""Default camera intrinsics per sensor tag, overridable via a JSON file
mapping camera tags (or "default") to {fx, fy, cx, cy}."""

from __future__ import annotations

import json
from pathlib import Path

from tranadapt.data.manifest import CameraDomain
from tranadapt.hha.reference import CameraIntrinsics

# Nominal color-camera intrinsics for the four real sensors (pixels).
DEFAULT_TABLE: dict[CameraDomain, CameraIntrinsics] = {
    CameraDomain.KINECT_V1: CameraIntrinsics(520.5, 520.5, 320.0, 240.0),
    CameraDomain.KINECT_V2: CameraIntrinsics(529.5, 529.5, 365.0, 265.0),
    CameraDomain.XTION: CameraIntrinsics(570.3, 570.3, 320.0, 240.0),
    CameraDomain.REALSENSE: CameraIntrinsics(691.6, 691.6, 362.0, 264.5),
}


def intrinsics_for(
    camera: CameraDomain,
    image_shape: tuple[int, int],
    overrides: dict | None = None,
) -> CameraIntrinsics:
    """Resolve intrinsics for a record: explicit override by camera tag, then
    "default", then the shipped table; synthetic cameras derive a square
    pinhole from the image size."""
    if overrides:
        for key in (camera.value, "default"):
            if key in overrides:
                o = overrides[key]
                return CameraIntrinsics(o["fx"], o["fy"], o["cx"], o["cy"])
    if camera in DEFAULT_TABLE:
        return DEFAULT_TABLE[camera]
    h, w = image_shape
    return CameraIntrinsics(fx=float(w), fy=float(w), cx=w / 2.0, cy=h / 2.0)


def load_overrides(path: Path | str | None) -> dict | None:
    if path is None:
        return None
    return json.loads(Path(path).read_text(encoding="utf-8"))
