"""Reference depth -> HHA encoder.

Channels, in order: horizontal disparity, height above the ground plane, and
the angle between the local surface normal and the inferred gravity
direction. Written for clarity; the optional native kernel mirrors these
exact constants and steps.

Coordinate convention for back-projection: x right, y up, z into the scene,
so ``x = (u - cx) * z / fx``, ``y = (cy - v) * z / fy``, ``z = depth_m``.
Surface normals are oriented toward the camera (negative z).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import cv2
import numpy as np


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")


@dataclass(frozen=True)
class HhaParams:
    """Fixed encoding constants. Changing these changes every emitted image."""

    depth_min_m: float = 0.3        # near end of the disparity mapping range
    depth_max_m: float = 10.0       # far end of the disparity mapping range
    baseline_m: float = 0.075       # reference stereo baseline for disparity
    height_min_m: float = -1.0
    height_max_m: float = 3.0
    normal_window: int = 5
    gravity_thresholds_deg: tuple[float, ...] = (45.0, 35.0, 25.0, 15.0)
    min_valid_normals: int = 16
    ground_percentile: float = 1.0


DOWN_AXIS = np.array([0.0, -1.0, 0.0])


def backproject(depth_mm: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    """Per-pixel 3D points in meters, H x W x 3; invalid pixels give z = 0."""
    h, w = depth_mm.shape
    z = depth_mm.astype(np.float64) / 1000.0
    u = np.arange(w, dtype=np.float64)[None, :]
    v = np.arange(h, dtype=np.float64)[:, None]
    x = (u - intr.cx) * z / intr.fx
    y = (intr.cy - v) * z / intr.fy
    return np.stack([x, y, z], axis=-1)


def _box_sum(img: np.ndarray, window: int) -> np.ndarray:
    return cv2.boxFilter(
        img, ddepth=-1, ksize=(window, window), normalize=False,
        borderType=cv2.BORDER_CONSTANT,
    )


def compute_normals(
    depth_mm: np.ndarray, intr: CameraIntrinsics, window: int = 5
) -> np.ndarray:
    """Unit surface normals from a windowed least-squares plane fit.

    The normal at a pixel is the smallest-eigenvalue direction of the
    covariance of the valid back-projected points in its window, flipped to
    face the camera. Pixels with missing depth or fewer than 3 valid
    neighbors yield the zero vector.
    """
    if window < 3 or window % 2 == 0:
        raise ValueError(f"window must be odd and >= 3, got {window}")
    pts = backproject(depth_mm, intr)
    valid = (depth_mm > 0).astype(np.float64)
    h, w = depth_mm.shape

    n = _box_sum(valid, window)
    sums = [_box_sum(pts[..., i] * valid, window) for i in range(3)]
    prods = {}
    for i in range(3):
        for j in range(i, 3):
            prods[(i, j)] = _box_sum(pts[..., i] * pts[..., j] * valid, window)

    ok = (valid > 0) & (n >= 3)
    n_safe = np.where(n > 0, n, 1.0)
    cov = np.zeros((h, w, 3, 3))
    for i in range(3):
        for j in range(i, 3):
            c = prods[(i, j)] / n_safe - (sums[i] / n_safe) * (sums[j] / n_safe)
            cov[..., i, j] = c
            cov[..., j, i] = c

    normals = np.zeros((h, w, 3))
    if np.any(ok):
        _, vecs = np.linalg.eigh(cov[ok])
        nrm = vecs[:, :, 0]  # smallest-eigenvalue column
        flip = nrm[:, 2] > 0
        nrm[flip] *= -1.0
        lengths = np.linalg.norm(nrm, axis=1, keepdims=True)
        nrm = np.where(lengths > 0, nrm / np.where(lengths == 0, 1.0, lengths), 0.0)
        normals[ok] = nrm
    return normals


def estimate_gravity(
    normals: np.ndarray,
    n_iters: int = 4,
    thresholds_deg: tuple[float, ...] = (45.0, 35.0, 25.0, 15.0),
    min_valid: int = 16,
) -> np.ndarray:
    """Coarse-to-fine gravity direction from the normal field.

    Each pass keeps normals nearly parallel (floor-like) or nearly
    perpendicular (wall-like) to the current estimate and re-solves for the
    direction minimizing the summed squared sines / cosines of deviation,
    which is the dominant eigenvector of the difference of the two scatter
    matrices. Returns a unit vector, y-negative (pointing down).
    """
    if n_iters != len(thresholds_deg):
        raise ValueError("n_iters must equal the number of thresholds")
    flat = normals.reshape(-1, 3)
    flat = flat[np.linalg.norm(flat, axis=1) > 0.5]
    if flat.shape[0] < min_valid:
        return DOWN_AXIS.copy()

    g = DOWN_AXIS.copy()
    for thr in thresholds_deg:
        thr_rad = np.deg2rad(thr)
        d = np.abs(flat @ g)
        par = flat[d > np.cos(thr_rad)]
        perp = flat[d < np.sin(thr_rad)]
        if par.shape[0] + perp.shape[0] < min_valid:
            continue
        m = np.zeros((3, 3))
        if par.shape[0]:
            m += par.T @ par
        if perp.shape[0]:
            m -= perp.T @ perp
        # Tiny prior toward the current estimate; breaks ties when the
        # selected normals alone leave the direction ambiguous.
        m += 1e-6 * (par.shape[0] + perp.shape[0]) * np.outer(g, g)
        vals, vecs = np.linalg.eigh(m)
        g = vecs[:, -1]
        if g[1] > 0:
            g = -g
    return g / np.linalg.norm(g)


def encode_hha(
    depth_mm: np.ndarray,
    intr: CameraIntrinsics,
    params: HhaParams = HhaParams(),
) -> np.ndarray:
    """Encode a millimeter depth map as an H x W x 3 uint8 HHA image.

    Missing-depth pixels (0 mm) map to (0, 0, 0) in every channel.
    """
    depth_mm = np.asarray(depth_mm)
    h, w = depth_mm.shape
    valid = depth_mm > 0
    out = np.zeros((h, w, 3), dtype=np.uint8)
    if not np.any(valid):
        return out

    z_m = depth_mm.astype(np.float64) / 1000.0
    normals = compute_normals(depth_mm, intr, params.normal_window)
    gravity = estimate_gravity(
        normals, len(params.gravity_thresholds_deg), params.gravity_thresholds_deg,
        params.min_valid_normals,
    )

    # Disparity channel: fx * baseline / depth, mapped linearly over the
    # disparity values of [depth_min_m, depth_max_m].
    disp = np.zeros((h, w))
    disp[valid] = intr.fx * params.baseline_m / z_m[valid]
    disp_lo = intr.fx * params.baseline_m / params.depth_max_m
    disp_hi = intr.fx * params.baseline_m / params.depth_min_m
    disp_chan = (disp - disp_lo) / (disp_hi - disp_lo) * 255.0

    # Height channel: signed height along -gravity above the 1st-percentile
    # lowest point, mapped over [height_min_m, height_max_m].
    pts = backproject(depth_mm, intr)
    height = -(pts @ gravity)
    ground = np.percentile(height[valid], params.ground_percentile)
    height_chan = (height - ground - params.height_min_m) / (
        params.height_max_m - params.height_min_m
    ) * 255.0

    # Angle channel: angle(normal, gravity) in degrees over [0, 180]. Valid
    # pixels whose normal could not be fit get the neutral 90 degrees.
    cosang = np.clip(normals @ gravity, -1.0, 1.0)
    angle = np.degrees(np.arccos(cosang))
    no_normal = np.linalg.norm(normals, axis=-1) < 0.5
    angle[no_normal] = 90.0
    angle_chan = angle / 180.0 * 255.0

    for i, chan in enumerate((disp_chan, height_chan, angle_chan)):
        q = np.rint(np.clip(chan, 0.0, 255.0)).astype(np.uint8)
        q[~valid] = 0
        out[..., i] = q
    return out
