"""Backend dispatch for the HHA encoder.

The native kernel is an optional shared library with a C ABI taking plain
contiguous arrays plus scalar params. When it is absent the reference
implementation is used, with a warning, so nothing in the pipeline depends on
the kernel being built.
"""

from __future__ import annotations

import ctypes
import logging
import os
from pathlib import Path

import numpy as np

from tranadapt.hha.reference import CameraIntrinsics, HhaParams, encode_hha

log = logging.getLogger(__name__)

_KERNEL_ENV = "TRANADAPT_HHA_KERNEL"
_LIB_NAME = "libhha_kernel.so"


def _candidate_paths() -> list[Path]:
    paths = []
    env = os.environ.get(_KERNEL_ENV)
    if env:
        paths.append(Path(env))
    here = Path(__file__).resolve()
    for base in (here.parent, *here.parents):
        paths.append(base / "hha-kernel" / "target" / "release" / _LIB_NAME)
    paths.append(Path.cwd() / "hha-kernel" / "target" / "release" / _LIB_NAME)
    return paths


_lib = None
_load_attempted = False


def _load_kernel():
    global _lib, _load_attempted
    if _load_attempted:
        return _lib
    _load_attempted = True
    for path in _candidate_paths():
        if path.is_file():
            lib = ctypes.CDLL(str(path))
            lib.encode_hha_fast.restype = ctypes.c_int32
            lib.encode_hha_fast.argtypes = [
                ctypes.POINTER(ctypes.c_uint16),  # depth_mm
                ctypes.c_uint32,                  # width
                ctypes.c_uint32,                  # height
                ctypes.c_double, ctypes.c_double, ctypes.c_double, ctypes.c_double,  # fx fy cx cy
                ctypes.c_double, ctypes.c_double, ctypes.c_double,  # depth_min/max, baseline
                ctypes.c_double, ctypes.c_double,  # height_min/max
                ctypes.c_uint32,                  # normal_window
                ctypes.POINTER(ctypes.c_double),  # thresholds_deg
                ctypes.c_uint32,                  # n_thresholds
                ctypes.c_uint32,                  # min_valid_normals
                ctypes.c_double,                  # ground_percentile
                ctypes.POINTER(ctypes.c_uint8),   # out_hha (3*W*H)
            ]
            _lib = lib
            log.info("loaded HHA kernel from %s", path)
            return _lib
    return None


def kernel_available() -> bool:
    return _load_kernel() is not None


def encode_hha_kernel(
    depth_mm: np.ndarray,
    intr: CameraIntrinsics,
    params: HhaParams = HhaParams(),
) -> np.ndarray:
    lib = _load_kernel()
    if lib is None:
        raise RuntimeError("HHA kernel library not found; build hha-kernel or unset --backend kernel")
    depth = np.ascontiguousarray(depth_mm, dtype=np.uint16)
    h, w = depth.shape
    out = np.zeros((h, w, 3), dtype=np.uint8)
    thr = np.ascontiguousarray(params.gravity_thresholds_deg, dtype=np.float64)
    rc = lib.encode_hha_fast(
        depth.ctypes.data_as(ctypes.POINTER(ctypes.c_uint16)),
        ctypes.c_uint32(w), ctypes.c_uint32(h),
        intr.fx, intr.fy, intr.cx, intr.cy,
        params.depth_min_m, params.depth_max_m, params.baseline_m,
        params.height_min_m, params.height_max_m,
        ctypes.c_uint32(params.normal_window),
        thr.ctypes.data_as(ctypes.POINTER(ctypes.c_double)),
        ctypes.c_uint32(len(thr)),
        ctypes.c_uint32(params.min_valid_normals),
        ctypes.c_double(params.ground_percentile),
        out.ctypes.data_as(ctypes.POINTER(ctypes.c_uint8)),
    )
    if rc != 0:
        raise RuntimeError(f"HHA kernel failed with code {rc}")
    return out


def encode_hha_backend(
    depth_mm: np.ndarray,
    intr: CameraIntrinsics,
    params: HhaParams = HhaParams(),
    backend: str = "reference",
) -> np.ndarray:
    """Encode with the chosen backend; ``kernel`` degrades to reference with
    a warning when the shared library is not built."""
    if backend == "kernel":
        if kernel_available():
            return encode_hha_kernel(depth_mm, intr, params)
        log.warning("HHA kernel not built; falling back to the reference encoder")
    elif backend != "reference":
        raise ValueError(f"unknown HHA backend {backend!r}")
    return encode_hha(depth_mm, intr, params)
