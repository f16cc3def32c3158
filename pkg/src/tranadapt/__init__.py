"""Cross-camera domain adaptation for RGB-D scene recognition.

A supervised source classifier is trained jointly with a self-supervised
inter-modality translation task (RGB -> depth and depth -> RGB) that runs on
both the labeled source and the unlabeled target camera, adapting the learned
representation across 3D sensors.
"""

__version__ = "0.1.0"
