"""Training objectives: source cross-entropy, the multi-layer feature
similarity loss between generated and original images, and their weighted
total."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from tranadapt.models import FeatureExtractor, TAP_NAMES


@dataclass(frozen=True)
class LossWeights:
    alpha_s: float = 10.0  # weight of the source-domain similarity term
    alpha_t: float = 3.0   # weight of the target-domain similarity term

    def __post_init__(self):
        for name, v in (("alpha_s", self.alpha_s), ("alpha_t", self.alpha_t)):
            if not (v >= 0 and v == v and v != float("inf")):
                raise ValueError(f"{name} must be finite and non-negative, got {v}")


@dataclass(frozen=True)
class SimilarityConfig:
    taps: tuple[str, ...] = TAP_NAMES
    # "mean": per-tap mean over elements (invariant to width and image size,
    # keeps the default alpha weights meaningful at any scale).
    # "sum": raw per-sample sum, for full-scale fidelity.
    reduction: str = "mean"

    def __post_init__(self):
        if not self.taps:
            raise ValueError("taps must be non-empty")
        unknown = set(self.taps) - set(TAP_NAMES)
        if unknown:
            raise ValueError(f"unknown taps {sorted(unknown)}")
        if self.reduction not in ("mean", "sum"):
            raise ValueError(f"reduction must be mean or sum, got {self.reduction!r}")


def classification_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean softmax cross-entropy over the batch."""
    if labels.dim() == 2:  # one-hot
        labels = labels.argmax(dim=1)
    if int(labels.max()) >= logits.shape[1]:
        raise ValueError(f"label index {int(labels.max())} out of range for {logits.shape[1]} classes")
    return F.cross_entropy(logits, labels)


def _pair_term(gen: torch.Tensor, orig: torch.Tensor, f: FeatureExtractor, cfg: SimilarityConfig):
    taps_gen = f.extract_layer_features(gen)
    with torch.no_grad():
        taps_orig = f.extract_layer_features(orig)
    total = gen.new_zeros(())
    for name in cfg.taps:
        diff = torch.abs(taps_gen[name] - taps_orig[name])
        if cfg.reduction == "mean":
            total = total + diff.mean()
        else:
            total = total + diff.flatten(1).sum(dim=1).mean()
    return total


def similarity_loss(
    f: FeatureExtractor,
    cfg: SimilarityConfig,
    generated_rgb: torch.Tensor | None = None,
    original_rgb: torch.Tensor | None = None,
    generated_hha: torch.Tensor | None = None,
    original_hha: torch.Tensor | None = None,
) -> torch.Tensor:
    """Tap-wise L1 distance between frozen-extractor activations of generated
    and original images, summed over the present modality pairs.

    Single-direction ablations pass only one pair. Gradients reach the
    generated images (and hence decoders and encoders) but never F's
    parameters.
    """
    pairs = []
    if (generated_rgb is None) != (original_rgb is None):
        raise ValueError("generated_rgb and original_rgb must be given together")
    if (generated_hha is None) != (original_hha is None):
        raise ValueError("generated_hha and original_hha must be given together")
    if generated_rgb is not None:
        pairs.append((generated_rgb, original_rgb))
    if generated_hha is not None:
        pairs.append((generated_hha, original_hha))
    if not pairs:
        raise ValueError("similarity_loss needs at least one modality pair")

    total = None
    for gen, orig in pairs:
        if gen.shape != orig.shape:
            raise ValueError(f"pair shape mismatch: {tuple(gen.shape)} vs {tuple(orig.shape)}")
        term = _pair_term(gen, orig, f, cfg)
        total = term if total is None else total + term
    return total


def total_loss(
    l_cls: torch.Tensor | float,
    l_sim_s: torch.Tensor | float,
    l_sim_t: torch.Tensor | float,
    w: LossWeights,
) -> torch.Tensor:
    """Weighted sum: classification + alpha_s * source similarity + alpha_t *
    target similarity."""
    parts = {"loss_cls": l_cls, "loss_sim_s": l_sim_s, "loss_sim_t": l_sim_t}
    for name, v in parts.items():
        val = float(v.detach()) if torch.is_tensor(v) else float(v)
        if val != val:
            raise FloatingPointError(f"NaN in loss component {name}")
    return l_cls + w.alpha_s * l_sim_s + w.alpha_t * l_sim_t
