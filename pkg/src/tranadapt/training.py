"""Joint optimization of the adaptation model, plus the single-modality,
two-stage fusion, and end-to-end fusion baselines.

Adaptation batches are composed of a labeled source half and an unlabeled
target half; the two halves go through separate encoder forward passes so
batch statistics never mix across domains, and only the source half reaches
the classification loss.
"""

from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from tranadapt.data.loading import (
    MultiModalSample,
    augment_raw,
    load_sample,
    normalize_tensor,
    to_tensor01,
)
from tranadapt.data.manifest import DatasetManifest, DomainPairSpec, merge_manifests
from tranadapt.losses import LossWeights, SimilarityConfig, classification_loss, similarity_loss, total_loss
from tranadapt.models import (
    Encoder,
    ModelBundle,
    ModelConfig,
    build_bundle,
    forward_classify,
    forward_embed,
    forward_translate,
)

log = logging.getLogger(__name__)

VARIANTS = ("tran_adapt", "source_only_rgb", "source_only_depth", "fusion", "fusion_pp")


class TrainAbort(RuntimeError):
    """Raised when a run hits NaN; the last good checkpoint is retained."""

    def __init__(self, message: str, checkpoint: Path | None):
        super().__init__(message)
        self.checkpoint = checkpoint


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 40
    epochs: int = 70
    lr_initial: float = 2e-4
    lr_constant_epochs: int = 20
    lr_decay_epochs: int = 50
    adam_betas: tuple[float, float] = (0.9, 0.999)
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    similarity: SimilarityConfig = field(default_factory=SimilarityConfig)
    directions: str = "both"
    variant: str = "tran_adapt"
    deterministic: bool = True

    def __post_init__(self):
        if self.lr_constant_epochs + self.lr_decay_epochs != self.epochs:
            raise ValueError(
                f"lr_constant_epochs ({self.lr_constant_epochs}) + lr_decay_epochs "
                f"({self.lr_decay_epochs}) must equal epochs ({self.epochs})"
            )
        if self.variant == "tran_adapt" and self.batch_size % 2 != 0:
            raise ValueError("batch_size must be even for adaptation runs")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    """Constant for the first phase, then linear descent reaching 0 at the
    end of training."""
    if not 0 <= epoch < cfg.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs})")
    if epoch < cfg.lr_constant_epochs:
        return cfg.lr_initial
    return cfg.lr_initial * (cfg.epochs - epoch) / cfg.lr_decay_epochs


@dataclass
class StepMetrics:
    step: int
    epoch: int
    lr: float
    loss_cls: float
    loss_sim_s: float
    loss_sim_t: float
    loss_total: float

    def to_json(self) -> dict:
        return asdict(self)


class CachedDataset:
    """All samples of a manifest decoded once and kept in memory.

    ``context`` follows the loading contract: target-context datasets carry
    no labels at all.
    """

    def __init__(self, manifest: DatasetManifest, context: str):
        self.context = context
        self.samples: list[MultiModalSample] = [
            load_sample(r, manifest, context) for r in manifest
        ]
        self.ids = [r.id for r in manifest]

    def __len__(self):
        return len(self.samples)

    def batch(self, indices, mode: str, rng: np.random.Generator | None):
        """Stacked tensors for the given sample indices.

        Returns dict with normalized encoder inputs (rgb, hha), the raw
        [0, 1] crops (rgb01, hha01) for the similarity targets, and labels
        when the context carries them.
        """
        rgbs, hhas, rgbs01, hhas01 = [], [], [], []
        for i in indices:
            rgb01, hha01 = augment_raw(self.samples[i], mode, rng)
            rgbs.append(normalize_tensor(rgb01))
            hhas.append(normalize_tensor(hha01))
            rgbs01.append(to_tensor01(rgb01))
            hhas01.append(to_tensor01(hha01))
        out = {
            "rgb": torch.stack(rgbs),
            "hha": torch.stack(hhas),
            "rgb01": torch.stack(rgbs01),
            "hha01": torch.stack(hhas01),
        }
        if self.context != "target":
            labels = [self.samples[i].label for i in indices]
            if any(l is None for l in labels):
                raise ValueError("labeled batch requested from unlabeled samples")
            out["labels"] = torch.tensor(labels, dtype=torch.long)
        return out


class _EpochSampler:
    """Reshuffles its index stream each pass; cycles forever."""

    def __init__(self, n: int, rng: np.random.Generator):
        self.n = n
        self.rng = rng
        self._order: list[int] = []

    def take(self, k: int) -> list[int]:
        out = []
        while len(out) < k:
            if not self._order:
                self._order = list(self.rng.permutation(self.n))
            out.append(self._order.pop(0))
        return out


def compose_batch(source_sampler: _EpochSampler, target_sampler: _EpochSampler, cfg: TrainConfig):
    """Index halves for one adaptation step: batch_size/2 labeled source
    indices and batch_size/2 unlabeled target indices."""
    if source_sampler.n == 0 or target_sampler.n == 0:
        raise ValueError("source and target manifests must be non-empty")
    half = cfg.batch_size // 2
    return source_sampler.take(half), target_sampler.take(half)


def _domain_similarity(bundle, batch, cfg: TrainConfig):
    """Similarity loss for one domain half: encode, translate in each
    configured direction, compare against the originals through F."""
    kwargs = {}
    feat_rgb = feat_hha = None
    if cfg.directions in ("both", "rgb2d_only"):
        feat_rgb = bundle.e_rgb(batch["rgb"])
        kwargs["generated_hha"] = forward_translate(bundle, feat_rgb, "rgb_to_depth")
        kwargs["original_hha"] = batch["hha01"]
    if cfg.directions in ("both", "d2rgb_only"):
        feat_hha = bundle.e_depth(batch["hha"])
        kwargs["generated_rgb"] = forward_translate(bundle, feat_hha, "depth_to_rgb")
        kwargs["original_rgb"] = batch["rgb01"]
    return similarity_loss(bundle.f, cfg.similarity, **kwargs)


def train_step(
    bundle: ModelBundle,
    source_batch: dict,
    target_batch: dict | None,
    cfg: TrainConfig,
    optimizer: torch.optim.Optimizer,
    step: int,
    epoch: int,
) -> StepMetrics:
    """One optimization step: classification on the source half, similarity
    on both halves, weighted total, ADAM update on everything but F."""
    lr = lr_schedule(epoch, cfg)
    for group in optimizer.param_groups:
        group["lr"] = lr

    _, _, e_rgb, e_depth = forward_embed(bundle, source_batch["rgb"], source_batch["hha"])
    logits = forward_classify(bundle, e_rgb, e_depth)
    l_cls = classification_loss(logits, source_batch["labels"])

    w = cfg.weights
    use_sim = target_batch is not None and (w.alpha_s > 0 or w.alpha_t > 0)
    if use_sim:
        l_sim_s = _domain_similarity(bundle, source_batch, cfg)
        l_sim_t = _domain_similarity(bundle, target_batch, cfg)
    else:
        l_sim_s = torch.zeros(())
        l_sim_t = torch.zeros(())

    total = total_loss(l_cls, l_sim_s, l_sim_t, w)
    optimizer.zero_grad(set_to_none=True)
    total.backward()
    optimizer.step()
    return StepMetrics(
        step=step,
        epoch=epoch,
        lr=lr,
        loss_cls=float(l_cls.detach()),
        loss_sim_s=float(l_sim_s.detach()),
        loss_sim_t=float(l_sim_t.detach()),
        loss_total=float(total.detach()),
    )


class MetricsWriter:
    """Append-only JSON Lines metrics stream; also keeps records in memory."""

    def __init__(self, path: Path | None):
        self.path = path
        self.records: list[dict] = []
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(path, "w", encoding="utf-8")
        else:
            self._fh = None

    def write(self, record: dict):
        self.records.append(record)
        if self._fh is not None:
            self._fh.write(json.dumps(record) + "\n")
            self._fh.flush()

    def close(self):
        if self._fh is not None:
            self._fh.close()


@dataclass
class AdaptationData:
    """Manifests for one run: labeled source train, unlabeled target, and the
    labeled target set used only for scoring (transductive by default)."""

    source: DatasetManifest
    target: DatasetManifest
    target_eval: DatasetManifest | None = None

    def eval_manifest(self) -> DatasetManifest:
        return self.target_eval if self.target_eval is not None else self.target


def _seed_everything(seed: int):
    torch.manual_seed(seed)
    np.random.seed(seed % (2**32))


def _evaluate_target(model_forward, eval_ds: CachedDataset, batch_size: int = 40) -> float:
    correct = 0
    with torch.no_grad():
        for start in range(0, len(eval_ds), batch_size):
            idx = range(start, min(start + batch_size, len(eval_ds)))
            batch = eval_ds.batch(idx, "test", None)
            logits = model_forward(batch)
            correct += int((logits.argmax(dim=1) == batch["labels"]).sum())
    return 100.0 * correct / len(eval_ds)


def _bundle_forward(bundle):
    def fwd(batch):
        _, _, e_rgb, e_depth = forward_embed(bundle, batch["rgb"], batch["hha"])
        return forward_classify(bundle, e_rgb, e_depth)

    return fwd


def fit(
    pair: DomainPairSpec,
    data: AdaptationData,
    cfg: TrainConfig,
    model_cfg: ModelConfig | None = None,
    workdir: Path | str | None = None,
) -> tuple[ModelBundle, list[dict]]:
    """Full adaptation training run; returns the final-epoch bundle and the
    metrics records. Writes checkpoint + metrics stream under ``workdir``."""
    if cfg.variant != "tran_adapt":
        return fit_baseline(cfg.variant, pair, data, cfg, model_cfg, workdir)
    _seed_everything(cfg.seed)
    if model_cfg is None:
        model_cfg = ModelConfig(num_classes=len(pair.class_set), directions=cfg.directions)
    elif model_cfg.directions != cfg.directions:
        model_cfg = ModelConfig(**{**asdict(model_cfg), "directions": cfg.directions})
    bundle = build_bundle(model_cfg)

    source_ds = CachedDataset(data.source, "source")
    target_ds = CachedDataset(data.target, "target")
    eval_ds = CachedDataset(data.eval_manifest(), "eval")

    workdir = Path(workdir) if workdir is not None else None
    metrics = MetricsWriter(workdir / "metrics.jsonl" if workdir else None)
    ckpt_dir = workdir / "checkpoint" if workdir else None

    optimizer = torch.optim.Adam(bundle.trainable_parameters(), lr=cfg.lr_initial, betas=cfg.adam_betas)
    data_rng = np.random.default_rng([cfg.seed, 1])
    target_rng = np.random.default_rng([cfg.seed, 2])
    aug_rng = np.random.default_rng([cfg.seed, 3])
    src_sampler = _EpochSampler(len(source_ds), data_rng)
    tgt_sampler = _EpochSampler(len(target_ds), target_rng)
    half = cfg.batch_size // 2
    steps_per_epoch = max(1, math.ceil(len(source_ds) / half))

    step = 0
    try:
        for epoch in range(cfg.epochs):
            bundle.train()
            for _ in range(steps_per_epoch):
                src_idx, tgt_idx = compose_batch(src_sampler, tgt_sampler, cfg)
                sb = source_ds.batch(src_idx, "train", aug_rng)
                tb = target_ds.batch(tgt_idx, "train", aug_rng)
                try:
                    sm = train_step(bundle, sb, tb, cfg, optimizer, step, epoch)
                except FloatingPointError as e:
                    metrics.close()
                    raise TrainAbort(f"NaN at step {step}: {e}", ckpt_dir) from e
                metrics.write(sm.to_json())
                step += 1
            bundle.eval()
            acc = _evaluate_target(_bundle_forward(bundle), eval_ds)
            metrics.write({"epoch": epoch, "target_accuracy": acc})
            log.info("epoch %d: target accuracy %.2f", epoch, acc)
        if ckpt_dir is not None:
            bundle.save_checkpoint(ckpt_dir, epoch=cfg.epochs, seed=cfg.seed)
    finally:
        metrics.close()
    return bundle, metrics.records


class SingleModalityClassifier(nn.Module):
    """One encoder plus a linear head; the single-modality baseline."""

    def __init__(self, modality: str, num_classes: int, width_multiplier: float = 1.0):
        super().__init__()
        self.modality = modality
        self.encoder = Encoder(modality, width_multiplier)
        self.fc = nn.Linear(self.encoder.out_channels, num_classes)

    def embed(self, x):
        return F.adaptive_avg_pool2d(self.encoder(x), 1).flatten(1)

    def forward(self, x):
        return self.fc(self.embed(x))

    def save_checkpoint(self, directory: Path | str, epoch: int = 0, seed: int = 0):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        meta = {
            "format_version": 1,
            "kind": f"single_modality_{self.modality}",
            "epoch": epoch,
            "seed": seed,
        }
        (directory / "metadata.json").write_text(json.dumps(meta, indent=2), encoding="utf-8")
        torch.save(self.encoder.state_dict(), directory / f"e_{self.modality}.pt")
        torch.save(self.fc.state_dict(), directory / "head.pt")


def _train_supervised(model, forward, source_ds, eval_ds, cfg, metrics, params=None):
    """Shared loop for the source-only baselines: cross-entropy on full
    source batches, per-epoch target accuracy."""
    optimizer = torch.optim.Adam(
        params if params is not None else model.parameters(),
        lr=cfg.lr_initial,
        betas=cfg.adam_betas,
    )
    rng = np.random.default_rng([cfg.seed, 1])
    aug_rng = np.random.default_rng([cfg.seed, 3])
    sampler = _EpochSampler(len(source_ds), rng)
    steps_per_epoch = max(1, math.ceil(len(source_ds) / cfg.batch_size))
    step = 0
    for epoch in range(cfg.epochs):
        model.train()
        lr = lr_schedule(epoch, cfg)
        for g in optimizer.param_groups:
            g["lr"] = lr
        for _ in range(steps_per_epoch):
            idx = sampler.take(min(cfg.batch_size, len(source_ds)))
            batch = source_ds.batch(idx, "train", aug_rng)
            logits = forward(batch)
            loss = classification_loss(logits, batch["labels"])
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            metrics.write(
                StepMetrics(step, epoch, lr, float(loss.detach()), 0.0, 0.0, float(loss.detach())).to_json()
            )
            step += 1
        model.eval()
        acc = _evaluate_target(forward, eval_ds)
        metrics.write({"epoch": epoch, "target_accuracy": acc})


def fit_baseline(
    variant: str,
    pair: DomainPairSpec,
    data: AdaptationData,
    cfg: TrainConfig,
    model_cfg: ModelConfig | None = None,
    workdir: Path | str | None = None,
):
    """Source-only baselines. None of them sees target images or labels at
    training time; the target set is touched only by the per-epoch scoring."""
    if variant not in ("source_only_rgb", "source_only_depth", "fusion", "fusion_pp"):
        raise ValueError(f"unknown baseline variant {variant!r}")
    _seed_everything(cfg.seed)
    if model_cfg is None:
        model_cfg = ModelConfig(num_classes=len(pair.class_set))
    num_classes = model_cfg.num_classes
    wm = model_cfg.width_multiplier

    source_ds = CachedDataset(data.source, "source")
    eval_ds = CachedDataset(data.eval_manifest(), "eval")
    workdir = Path(workdir) if workdir is not None else None
    metrics = MetricsWriter(workdir / "metrics.jsonl" if workdir else None)
    ckpt_dir = workdir / "checkpoint" if workdir else None

    try:
        if variant in ("source_only_rgb", "source_only_depth"):
            modality = "rgb" if variant.endswith("rgb") else "depth"
            model = SingleModalityClassifier(modality, num_classes, wm)
            key = "rgb" if modality == "rgb" else "hha"
            _train_supervised(model, lambda b: model(b[key]), source_ds, eval_ds, cfg, metrics)
            if ckpt_dir is not None:
                model.save_checkpoint(ckpt_dir, epoch=cfg.epochs, seed=cfg.seed)
            return model, metrics.records

        if variant == "fusion":
            # Stage 1: each modality trained on its own until the epoch
            # budget; stage 2: encoders frozen, new concat head trained.
            m_rgb = SingleModalityClassifier("rgb", num_classes, wm)
            m_depth = SingleModalityClassifier("depth", num_classes, wm)
            _train_supervised(m_rgb, lambda b: m_rgb(b["rgb"]), source_ds, eval_ds, cfg, metrics)
            _train_supervised(m_depth, lambda b: m_depth(b["hha"]), source_ds, eval_ds, cfg, metrics)
            model = FusionModel(m_rgb.encoder, m_depth.encoder, num_classes)
            for p in model.e_rgb.parameters():
                p.requires_grad_(False)
            for p in model.e_depth.parameters():
                p.requires_grad_(False)
            model.e_rgb.eval()
            model.e_depth.eval()

            def fwd(b):
                with torch.no_grad():
                    er = F.adaptive_avg_pool2d(model.e_rgb(b["rgb"]), 1).flatten(1)
                    ed = F.adaptive_avg_pool2d(model.e_depth(b["hha"]), 1).flatten(1)
                return model.head(er, ed)

            _train_supervised(model, fwd, source_ds, eval_ds, cfg, metrics,
                              params=model.head.parameters())
            if ckpt_dir is not None:
                model.save_checkpoint(ckpt_dir, epoch=cfg.epochs, seed=cfg.seed)
            return model, metrics.records

        # fusion_pp: end-to-end joint training of both encoders + concat head.
        bundle = ModelBundle(ModelConfig(**{**asdict(model_cfg), "directions": "none"}))

        def fwd(b):
            _, _, er, ed = forward_embed(bundle, b["rgb"], b["hha"])
            return forward_classify(bundle, er, ed)

        _train_supervised(bundle, fwd, source_ds, eval_ds, cfg, metrics,
                          params=list(bundle.trainable_parameters()))
        if ckpt_dir is not None:
            bundle.save_checkpoint(ckpt_dir, epoch=cfg.epochs, seed=cfg.seed)
        return bundle, metrics.records
    finally:
        metrics.close()


class FusionModel(nn.Module):
    """Two frozen encoders plus a trained concat head (stage-2 fusion)."""

    def __init__(self, e_rgb: Encoder, e_depth: Encoder, num_classes: int):
        super().__init__()
        from tranadapt.models import ClassifierHead

        self.e_rgb = e_rgb
        self.e_depth = e_depth
        self.head = ClassifierHead(e_rgb.out_channels, num_classes)

    def forward(self, rgb, hha):
        er = F.adaptive_avg_pool2d(self.e_rgb(rgb), 1).flatten(1)
        ed = F.adaptive_avg_pool2d(self.e_depth(hha), 1).flatten(1)
        return self.head(er, ed)

    def save_checkpoint(self, directory: Path | str, epoch: int = 0, seed: int = 0):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        meta = {"format_version": 1, "kind": "fusion", "epoch": epoch, "seed": seed}
        (directory / "metadata.json").write_text(json.dumps(meta, indent=2), encoding="utf-8")
        torch.save(self.e_rgb.state_dict(), directory / "e_rgb.pt")
        torch.save(self.e_depth.state_dict(), directory / "e_depth.pt")
        torch.save(self.head.state_dict(), directory / "head.pt")


def source_manifest_for_pair(pair: DomainPairSpec, manifest: DatasetManifest) -> DatasetManifest:
    """Union of the pair's source cameras, restricted to its class set."""
    parts = [
        manifest.filter(camera=cam, classes=pair.class_set)
        for cam in sorted(pair.sources, key=lambda c: c.value)
    ]
    return parts[0] if len(parts) == 1 else merge_manifests(parts)
