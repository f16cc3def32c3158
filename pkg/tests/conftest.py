import numpy as np
import pytest
import torch

from tranadapt.data.manifest import CameraDomain, DatasetManifest, ManifestRecord


@pytest.fixture(autouse=True)
def _fixed_torch_seed():
    torch.manual_seed(0)


def make_records(n, camera=CameraDomain.SYNTHETIC_A, scene_class="bathroom", prefix="r"):
    return [
        ManifestRecord(
            id=f"{prefix}{i}",
            camera=camera,
            scene_class=scene_class,
            rgb_path=f"{prefix}{i}_rgb.png",
            depth_path=f"{prefix}{i}_depth.png",
            hha_path=f"{prefix}{i}_hha.png",
        )
        for i in range(n)
    ]


def make_manifest(records, root=None):
    return DatasetManifest(tuple(records), provenance="test", seed=0, root=root)


@pytest.fixture(scope="session")
def small_synth_manifest(tmp_path_factory):
    """Tiny rendered two-domain dataset, shared across tests in a session."""
    from tranadapt.data.synth import SynthConfig, synth_generate

    out = tmp_path_factory.mktemp("synth")
    return synth_generate(SynthConfig(n_per_class=4, n_classes=3, image_size=48, shift_strength=0.5, seed=7), out)
