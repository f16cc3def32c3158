"""Measurement protocols: target accuracy, the cross-camera shift probe,
unseen-class generation scores, guided-backprop saliency, and the target
similarity-weight sweep."""

from __future__ import annotations

import contextlib
import json
import logging
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from tranadapt.data.loading import MultiModalSample, augment_raw, normalize_tensor, to_tensor01
from tranadapt.data.manifest import DatasetManifest, DomainPairSpec, split_train_test
from tranadapt.losses import LossWeights
from tranadapt.models import ModelBundle, ModelConfig, forward_classify, forward_embed, forward_translate
from tranadapt.training import (
    AdaptationData,
    CachedDataset,
    SingleModalityClassifier,
    TrainConfig,
    _evaluate_target,
    _seed_everything,
    _train_supervised,
    MetricsWriter,
    fit,
)

log = logging.getLogger(__name__)


@dataclass
class EvalReport:
    pair: str
    variant: str
    overall_accuracy: float
    per_class_accuracy: dict[str, float]
    confusion: list[list[int]]  # rows = true class, cols = predicted
    n_eval: int
    seed: int
    class_names: list[str]

    def to_json(self) -> dict:
        return asdict(self)

    def save(self, path: Path | str):
        Path(path).write_text(json.dumps(self.to_json(), indent=2), encoding="utf-8")

    @classmethod
    def load(cls, path: Path | str) -> "EvalReport":
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))


def evaluate_accuracy(
    bundle,
    test_manifest: DatasetManifest,
    pair_name: str = "",
    variant: str = "",
    seed: int = 0,
    forward=None,
    batch_size: int = 40,
) -> EvalReport:
    """Center-crop argmax accuracy with a full confusion matrix.

    ``forward`` maps a batch dict to logits; defaults to the bundle's
    embed + concat-classify path.
    """
    class_names = sorted({r.scene_class for r in test_manifest})
    from tranadapt.data.manifest import CLASS_TO_INDEX

    for c in class_names:
        if c not in CLASS_TO_INDEX:
            raise ValueError(f"class {c!r} not in the classifier label map")
    if forward is None:
        def forward(batch):
            _, _, er, ed = forward_embed(bundle, batch["rgb"], batch["hha"])
            return forward_classify(bundle, er, ed)

    ds = CachedDataset(test_manifest, "eval")
    n_classes = max(CLASS_TO_INDEX[c] for c in class_names) + 1
    confusion = np.zeros((n_classes, n_classes), dtype=int)
    if hasattr(bundle, "eval"):
        bundle.eval()
    with torch.no_grad():
        for start in range(0, len(ds), batch_size):
            idx = range(start, min(start + batch_size, len(ds)))
            batch = ds.batch(idx, "test", None)
            preds = forward(batch).argmax(dim=1)
            for t, p in zip(batch["labels"].tolist(), preds.tolist()):
                confusion[t, min(p, n_classes - 1)] += 1

    n_eval = int(confusion.sum())
    overall = 100.0 * np.trace(confusion) / n_eval
    per_class = {}
    for name in class_names:
        i = CLASS_TO_INDEX[name]
        support = confusion[i].sum()
        per_class[name] = 100.0 * confusion[i, i] / support if support else 0.0
    return EvalReport(
        pair=pair_name,
        variant=variant,
        overall_accuracy=float(overall),
        per_class_accuracy=per_class,
        confusion=confusion.tolist(),
        n_eval=n_eval,
        seed=seed,
        class_names=class_names,
    )


@dataclass
class ShiftReport:
    modality: str
    within: float
    across: float

    @property
    def drop(self) -> float:
        return self.within - self.across

    def to_json(self) -> dict:
        return {"modality": self.modality, "within": self.within, "across": self.across, "drop": self.drop}


def domain_shift_probe(
    source_manifest: DatasetManifest,
    other_manifest: DatasetManifest,
    modality: str,
    cfg: TrainConfig,
    width_multiplier: float = 1.0,
    num_classes: int | None = None,
) -> ShiftReport:
    """Single-modality classifier trained on the source train split, scored
    within-domain (source test) and across (other domain's test split)."""
    if modality not in ("rgb", "depth"):
        raise ValueError(f"modality must be rgb or depth, got {modality!r}")
    for name, m in (("source", source_manifest), ("other", other_manifest)):
        splits = {r.split for r in m}
        if splits != {"train", "test"}:
            raise ValueError(f"{name} manifest must carry train/test splits, has {splits}")
    from tranadapt.data.manifest import CLASS_TO_INDEX

    if num_classes is None:
        num_classes = max(CLASS_TO_INDEX[r.scene_class] for r in source_manifest) + 1

    _seed_everything(cfg.seed)
    model = SingleModalityClassifier(modality, num_classes, width_multiplier)
    key = "rgb" if modality == "rgb" else "hha"
    train_ds = CachedDataset(source_manifest.filter(split="train"), "source")
    within_ds = CachedDataset(source_manifest.filter(split="test"), "eval")
    across_ds = CachedDataset(other_manifest.filter(split="test"), "eval")
    metrics = MetricsWriter(None)
    _train_supervised(model, lambda b: model(b[key]), train_ds, within_ds, cfg, metrics)
    model.eval()
    within = _evaluate_target(lambda b: model(b[key]), within_ds)
    across = _evaluate_target(lambda b: model(b[key]), across_ds)
    return ShiftReport(modality=modality, within=within, across=across)


@dataclass
class GenerationReport:
    mean_l2: dict[str, float]           # per generated modality: rgb / depth
    per_image: dict[str, list[float]]
    n: int
    metric: str = "rms"

    def to_json(self) -> dict:
        return asdict(self)


def _image_l2(gen: torch.Tensor, orig: torch.Tensor, metric: str) -> float:
    diff = (gen - orig) ** 2
    if metric == "rms":
        return float(diff.mean().sqrt())
    if metric == "sumsq":
        return float(diff.sum())
    raise ValueError(f"unknown generation metric {metric!r}")


def evaluate_generation_l2(
    bundle: ModelBundle,
    unseen_manifest: DatasetManifest,
    metric: str = "rms",
    batch_size: int = 20,
) -> GenerationReport:
    """Pixel-wise L2 between decoder outputs and originals on held-out
    classes; depth-side comparison happens in HHA space, both images in
    [0, 1]. Single-direction bundles report only their available direction."""
    ds = CachedDataset(unseen_manifest, "target")
    scores: dict[str, list[float]] = {}
    if bundle.d_rgb2d is not None:
        scores["depth"] = []
    if bundle.d_d2rgb is not None:
        scores["rgb"] = []
    bundle.eval()
    with torch.no_grad():
        for start in range(0, len(ds), batch_size):
            idx = range(start, min(start + batch_size, len(ds)))
            batch = ds.batch(idx, "test", None)
            if "depth" in scores:
                gen = forward_translate(bundle, bundle.e_rgb(batch["rgb"]), "rgb_to_depth")
                for g, o in zip(gen, batch["hha01"]):
                    scores["depth"].append(_image_l2(g, o, metric))
            if "rgb" in scores:
                gen = forward_translate(bundle, bundle.e_depth(batch["hha"]), "depth_to_rgb")
                for g, o in zip(gen, batch["rgb01"]):
                    scores["rgb"].append(_image_l2(g, o, metric))
    means = {k: float(np.mean(v)) if v else float("nan") for k, v in scores.items()}
    return GenerationReport(mean_l2=means, per_image=scores, n=len(ds), metric=metric)


@contextlib.contextmanager
def guided_relu(module: nn.Module):
    """Clip every rectifier's backward gradient to be non-negative within the
    context (guided backpropagation). Temporarily disables in-place ReLU so
    the backward hooks see well-defined gradients."""
    handles = []
    flipped = []

    def clip(mod, grad_input, grad_output):
        return tuple(g.clamp(min=0.0) if g is not None else None for g in grad_input)

    for m in module.modules():
        if isinstance(m, nn.ReLU):
            if m.inplace:
                m.inplace = False
                flipped.append(m)
            handles.append(m.register_full_backward_hook(clip))
    try:
        yield
    finally:
        for h in handles:
            h.remove()
        for m in flipped:
            m.inplace = True


def guided_backprop(
    bundle: ModelBundle, sample: MultiModalSample, target_class: int
) -> dict[str, np.ndarray]:
    """Per-modality saliency of the target-class score: positive guided
    gradients reduced by max over channels. Values are >= 0; normalize to
    max 1 before rendering."""
    rgb01, hha01 = augment_raw(sample, "test", None)
    rgb = normalize_tensor(rgb01)[None].requires_grad_(True)
    hha = normalize_tensor(hha01)[None].requires_grad_(True)
    bundle.eval()
    with guided_relu(bundle):
        _, _, er, ed = forward_embed(bundle, rgb, hha)
        score = forward_classify(bundle, er, ed)[0, target_class]
        score.backward()
    maps = {}
    for name, inp in (("rgb", rgb), ("depth", hha)):
        g = inp.grad[0].clamp(min=0.0)
        maps[name] = g.max(dim=0).values.numpy()
    return maps


def render_saliency(saliency: np.ndarray) -> np.ndarray:
    """8-bit rendering, max-normalized."""
    peak = saliency.max()
    norm = saliency / peak if peak > 0 else saliency
    return (norm * 255).astype(np.uint8)


@dataclass
class SweepReport:
    alpha_s: float
    points: list[dict]       # {alpha_t, accuracy} or {alpha_t, error}
    reference_lines: dict[str, float] = field(default_factory=dict)

    def to_json(self) -> dict:
        return asdict(self)


def final_target_accuracy(metrics_records: list[dict]) -> float:
    accs = [r["target_accuracy"] for r in metrics_records if "target_accuracy" in r]
    if not accs:
        raise ValueError("no target_accuracy records in metrics stream")
    return accs[-1]


def alpha_sweep(
    pair: DomainPairSpec,
    data: AdaptationData,
    grid: list[float],
    cfg: TrainConfig,
    model_cfg: ModelConfig | None = None,
    workdir: Path | None = None,
    reference_lines: dict[str, float] | None = None,
) -> SweepReport:
    """Re-run the full fit for each target similarity weight in the grid,
    source weight held fixed. Per-point failures are recorded and the sweep
    continues."""
    if not grid:
        raise ValueError("sweep grid must be non-empty")
    points = []
    for alpha_t in grid:
        run_cfg = TrainConfig(**{
            **asdict_config(cfg),
            "weights": LossWeights(cfg.weights.alpha_s, alpha_t),
        })
        run_dir = workdir / f"alpha_t_{alpha_t:g}" if workdir else None
        try:
            _, records = fit(pair, data, run_cfg, model_cfg, run_dir)
            points.append({"alpha_t": alpha_t, "accuracy": final_target_accuracy(records)})
        except Exception as e:  # per-point isolation
            log.exception("sweep point alpha_t=%s failed", alpha_t)
            points.append({"alpha_t": alpha_t, "error": str(e)})
    report = SweepReport(alpha_s=cfg.weights.alpha_s, points=points,
                         reference_lines=reference_lines or {})
    if workdir is not None:
        workdir.mkdir(parents=True, exist_ok=True)
        (workdir / "sweep.json").write_text(json.dumps(report.to_json(), indent=2), encoding="utf-8")
        render_sweep_chart(report, workdir / "sweep.png")
    return report


def asdict_config(cfg: TrainConfig) -> dict:
    d = asdict(cfg)
    d["weights"] = cfg.weights
    d["similarity"] = cfg.similarity
    d["adam_betas"] = cfg.adam_betas
    return d


def render_sweep_chart(report: SweepReport, path: Path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    ok = [p for p in report.points if "accuracy" in p]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot([p["alpha_t"] for p in ok], [p["accuracy"] for p in ok], "o-", label="adaptation")
    for name, val in report.reference_lines.items():
        ax.axhline(val, linestyle="--", alpha=0.6, label=name)
    ax.set_xlabel("target similarity weight")
    ax.set_ylabel("target accuracy (%)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def aggregate_reports(reports: list[EvalReport]) -> tuple[str, list[list[str]]]:
    """Benchmark-shaped matrix: one row per variant, one column per domain
    pair plus the average. Returns (text table, CSV rows)."""
    pair_order = ["K2X", "X2K", "K2R", "X2R", "KX2R"]
    pairs = [p for p in pair_order if any(r.pair == p for r in reports)]
    pairs += sorted({r.pair for r in reports} - set(pairs))
    variants = []
    for r in reports:
        if r.variant not in variants:
            variants.append(r.variant)

    rows = [["variant"] + pairs + ["AVG"]]
    for v in variants:
        row = [v]
        vals = []
        for p in pairs:
            matches = [r.overall_accuracy for r in reports if r.variant == v and r.pair == p]
            if matches:
                vals.append(float(np.mean(matches)))
                row.append(f"{vals[-1]:.2f}")
            else:
                row.append("-")
        row.append(f"{np.mean(vals):.2f}" if vals else "-")
        rows.append(row)

    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    text = "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in rows)
    return text, rows
