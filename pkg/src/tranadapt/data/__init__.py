from tranadapt.data.manifest import (
    CameraDomain,
    DatasetManifest,
    DomainPairSpec,
    ManifestRecord,
    MAIN_CLASSES,
    EXTRA_CLASSES,
    define_domain_pairs,
    split_train_test,
)
from tranadapt.data.loading import MultiModalSample, load_sample, augment, decode_depth
from tranadapt.data.synth import SynthConfig, synth_generate
from tranadapt.data.sunrgbd import build_sunrgbd_subset

__all__ = [
    "CameraDomain",
    "DatasetManifest",
    "DomainPairSpec",
    "ManifestRecord",
    "MAIN_CLASSES",
    "EXTRA_CLASSES",
    "MultiModalSample",
    "SynthConfig",
    "augment",
    "build_sunrgbd_subset",
    "decode_depth",
    "define_domain_pairs",
    "load_sample",
    "split_train_test",
    "synth_generate",
]
