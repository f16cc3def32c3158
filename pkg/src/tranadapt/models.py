"""The five architecture components: two modality encoders, two translation
decoders, a frozen feature extractor with layer taps, and the classifier head
on concatenated embeddings.

All trunks share an 18-layer residual layout (4 stages of 2 basic blocks).
``width_multiplier`` scales every channel count proportionally for cheap
desk-scale runs; at 1.0 a 3x224x224 input yields a 512x7x7 feature map.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, asdict, field
from pathlib import Path

import torch
import torch.nn as nn
import torch.nn.functional as F

from tranadapt.data.loading import NORM_MEAN, NORM_STD

# "none" is internal: bundles for the no-decoder fusion baselines.
DIRECTIONS = ("both", "rgb2d_only", "d2rgb_only", "none")
STAGE_WIDTHS = (64, 128, 256, 512)
TAP_NAMES = ("layer1", "layer2", "layer3", "layer4")


@dataclass(frozen=True)
class ModelConfig:
    num_classes: int = 10
    width_multiplier: float = 1.0
    directions: str = "both"
    pretrained_weights: str | None = None

    def __post_init__(self):
        if self.directions not in DIRECTIONS:
            raise ValueError(f"directions must be one of {DIRECTIONS}, got {self.directions!r}")
        if self.width_multiplier <= 0:
            raise ValueError("width_multiplier must be positive")


def _widths(multiplier: float) -> list[int]:
    return [max(4, int(round(w * multiplier))) for w in STAGE_WIDTHS]


class BasicBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_ch)
        self.relu = nn.ReLU(inplace=True)
        self.downsample = None
        if stride != 1 or in_ch != out_ch:
            self.downsample = nn.Sequential(
                nn.Conv2d(in_ch, out_ch, 1, stride=stride, bias=False),
                nn.BatchNorm2d(out_ch),
            )

    def forward(self, x):
        identity = x if self.downsample is None else self.downsample(x)
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return self.relu(out + identity)


class ResNetTrunk(nn.Module):
    """18-layer residual trunk up to and including the fourth stage."""

    def __init__(self, width_multiplier: float = 1.0):
        super().__init__()
        w = _widths(width_multiplier)
        self.out_channels = w[3]
        self.conv1 = nn.Conv2d(3, w[0], 7, stride=2, padding=3, bias=False)
        self.bn1 = nn.BatchNorm2d(w[0])
        self.relu = nn.ReLU(inplace=True)
        self.maxpool = nn.MaxPool2d(3, stride=2, padding=1)
        self.layer1 = self._stage(w[0], w[0], stride=1)
        self.layer2 = self._stage(w[0], w[1], stride=2)
        self.layer3 = self._stage(w[1], w[2], stride=2)
        self.layer4 = self._stage(w[2], w[3], stride=2)

    @staticmethod
    def _stage(in_ch: int, out_ch: int, stride: int) -> nn.Sequential:
        return nn.Sequential(BasicBlock(in_ch, out_ch, stride), BasicBlock(out_ch, out_ch))

    def forward(self, x):
        return self.forward_taps(x)["layer4"]

    def forward_taps(self, x) -> dict[str, torch.Tensor]:
        x = self.maxpool(self.relu(self.bn1(self.conv1(x))))
        taps = {}
        for name in TAP_NAMES:
            x = getattr(self, name)(x)
            taps[name] = x
        return taps


class Encoder(nn.Module):
    """Modality-specific encoder; emits the stage-4 feature map."""

    def __init__(self, modality: str, width_multiplier: float = 1.0):
        super().__init__()
        if modality not in ("rgb", "depth"):
            raise ValueError(f"modality must be rgb or depth, got {modality!r}")
        self.modality = modality
        self.trunk = ResNetTrunk(width_multiplier)
        self.out_channels = self.trunk.out_channels

    def forward(self, x):
        return self.trunk(x)


class Decoder(nn.Module):
    """Upsampling translation decoder: 5 blocks of (2x nearest upsample ->
    3x3 conv -> norm -> ReLU), final saturating nonlinearity to [0, 1]."""

    def __init__(self, direction: str, in_channels: int):
        super().__init__()
        if direction not in ("rgb_to_depth", "depth_to_rgb"):
            raise ValueError(f"bad decoder direction {direction!r}")
        self.direction = direction
        chans = [in_channels]
        for _ in range(4):
            chans.append(max(4, chans[-1] // 2))
        blocks = []
        for i in range(4):
            blocks += [
                nn.Upsample(scale_factor=2, mode="nearest"),
                nn.Conv2d(chans[i], chans[i + 1], 3, padding=1, bias=False),
                nn.BatchNorm2d(chans[i + 1]),
                nn.ReLU(inplace=True),
            ]
        blocks += [
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(chans[4], 3, 3, padding=1),
        ]
        self.blocks = nn.Sequential(*blocks)

    def forward(self, feat):
        return torch.sigmoid(self.blocks(feat))


class FeatureExtractor(nn.Module):
    """Frozen trunk with layer taps; a fixed function throughout training.

    Inputs are images in [0, 1]; normalization happens inside so generated
    images can be compared to originals in the same space. Gradients flow to
    the input but never accumulate into the trunk's parameters.
    """

    def __init__(self, width_multiplier: float = 1.0):
        super().__init__()
        self.trunk = ResNetTrunk(width_multiplier)
        self.register_buffer("mean", torch.tensor(NORM_MEAN).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(NORM_STD).view(1, 3, 1, 1))
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    def train(self, mode: bool = True):
        # Always evaluation behavior: batch statistics must stay fixed.
        return super().train(False)

    def forward(self, image):
        return self.extract_layer_features(image)

    def extract_layer_features(self, image) -> dict[str, torch.Tensor]:
        x = (image - self.mean) / self.std
        return self.trunk.forward_taps(x)

    def parameter_digest(self) -> str:
        h = hashlib.sha256()
        for name, p in sorted(self.state_dict().items()):
            h.update(name.encode())
            h.update(p.numpy().tobytes())
        return h.hexdigest()


class ClassifierHead(nn.Module):
    """Single linear layer on the concatenated pooled embeddings."""

    def __init__(self, embed_dim: int, num_classes: int):
        super().__init__()
        self.fc = nn.Linear(2 * embed_dim, num_classes)

    def forward(self, e_rgb, e_depth):
        return self.fc(torch.cat([e_rgb, e_depth], dim=1))


class ModelBundle(nn.Module):
    COMPONENTS = ("e_rgb", "e_depth", "d_rgb2d", "d_d2rgb", "f", "head")
    FORMAT_VERSION = 1

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.e_rgb = Encoder("rgb", config.width_multiplier)
        self.e_depth = Encoder("depth", config.width_multiplier)
        c = self.e_rgb.out_channels
        self.d_rgb2d = Decoder("rgb_to_depth", c) if config.directions in ("both", "rgb2d_only") else None
        self.d_d2rgb = Decoder("depth_to_rgb", c) if config.directions in ("both", "d2rgb_only") else None
        self.f = FeatureExtractor(config.width_multiplier)
        self.head = ClassifierHead(c, config.num_classes)

    @property
    def embed_dim(self) -> int:
        return self.e_rgb.out_channels

    def trainable_parameters(self):
        """Everything the optimizer may touch: encoders, decoders, head; never F."""
        mods = [self.e_rgb, self.e_depth, self.head]
        if self.d_rgb2d is not None:
            mods.append(self.d_rgb2d)
        if self.d_d2rgb is not None:
            mods.append(self.d_d2rgb)
        for m in mods:
            yield from m.parameters()

    def save_checkpoint(self, directory: Path | str, epoch: int = 0, seed: int = 0) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        present = [n for n in self.COMPONENTS if getattr(self, n) is not None]
        meta = {
            "format_version": self.FORMAT_VERSION,
            "model_config": asdict(self.config),
            "epoch": epoch,
            "seed": seed,
            "components": present,
        }
        (directory / "metadata.json").write_text(json.dumps(meta, indent=2), encoding="utf-8")
        for name in present:
            torch.save(getattr(self, name).state_dict(), directory / f"{name}.pt")

    @classmethod
    def load_checkpoint(cls, directory: Path | str) -> "ModelBundle":
        directory = Path(directory)
        meta_path = directory / "metadata.json"
        if not meta_path.is_file():
            raise FileNotFoundError(f"not a checkpoint directory (no metadata.json): {directory}")
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        if meta.get("format_version") != cls.FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint format version {meta.get('format_version')}")
        config = ModelConfig(**meta["model_config"])
        bundle = cls(config)
        expected = {n for n in cls.COMPONENTS if getattr(bundle, n) is not None}
        on_disk = {p.stem for p in directory.glob("*.pt")}
        if on_disk != expected:
            raise ValueError(
                f"checkpoint component mismatch: missing {sorted(expected - on_disk)}, "
                f"unexpected {sorted(on_disk - expected)}"
            )
        for name in expected:
            getattr(bundle, name).load_state_dict(torch.load(directory / f"{name}.pt", weights_only=True))
        return bundle


def build_bundle(config: ModelConfig) -> ModelBundle:
    """Construct a bundle; encoders and F come from the pretrained checkpoint
    container when one is given, decoders are always freshly initialized."""
    bundle = ModelBundle(config)
    if config.pretrained_weights is not None:
        src = ModelBundle.load_checkpoint(config.pretrained_weights)
        for name in ("e_rgb", "e_depth", "f"):
            try:
                getattr(bundle, name).load_state_dict(getattr(src, name).state_dict())
            except RuntimeError as e:
                raise ValueError(f"pretrained weights incompatible for {name}: {e}") from e
    return bundle


def forward_embed(bundle: ModelBundle, rgb: torch.Tensor, hha: torch.Tensor):
    """(feature maps, pooled embeddings) for both modalities."""
    feat_rgb = bundle.e_rgb(rgb)
    feat_depth = bundle.e_depth(hha)
    e_rgb = F.adaptive_avg_pool2d(feat_rgb, 1).flatten(1)
    e_depth = F.adaptive_avg_pool2d(feat_depth, 1).flatten(1)
    return feat_rgb, feat_depth, e_rgb, e_depth


def forward_classify(bundle: ModelBundle, e_rgb: torch.Tensor, e_depth: torch.Tensor) -> torch.Tensor:
    return bundle.head(e_rgb, e_depth)


def forward_translate(bundle: ModelBundle, feat: torch.Tensor, direction: str) -> torch.Tensor:
    if direction == "rgb_to_depth":
        dec = bundle.d_rgb2d
    elif direction == "depth_to_rgb":
        dec = bundle.d_d2rgb
    else:
        raise ValueError(f"unknown translation direction {direction!r}")
    if dec is None:
        raise RuntimeError(f"bundle built with directions={bundle.config.directions!r} has no {direction} decoder")
    return dec(feat)
