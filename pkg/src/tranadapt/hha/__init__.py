from tranadapt.hha.reference import (
    CameraIntrinsics,
    HhaParams,
    compute_normals,
    encode_hha,
    estimate_gravity,
)
from tranadapt.hha.backend import encode_hha_backend, kernel_available

__all__ = [
    "CameraIntrinsics",
    "HhaParams",
    "compute_normals",
    "encode_hha",
    "encode_hha_backend",
    "estimate_gravity",
    "kernel_available",
]
