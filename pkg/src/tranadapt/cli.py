"""Single command-line entry point for the full workflow.

Every subcommand takes ``--config FILE`` plus a few overrides and writes its
artifacts under ``<output_dir>/<command>/<run name>``, echoing the resolved
config there. Exit codes: 0 success, 1 validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

import cv2
import numpy as np

log = logging.getLogger("tranadapt")


class CliError(Exception):
    """Validation problem; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(message)


def _out_dir(config, command: str, run_name: str | None) -> Path:
    name = run_name or time.strftime("%Y%m%d-%H%M%S")
    d = config.output_dir() / command / name
    d.mkdir(parents=True, exist_ok=True)
    config.echo(d)
    return d


def _load_manifest(config, override: str | None):
    from tranadapt.data.manifest import DatasetManifest

    path = override or config.dataset.manifest
    if path is None:
        raise CliError("no manifest configured; set dataset.manifest or pass --manifest")
    return DatasetManifest.load(path)


def _resolve_pair(name: str, manifest):
    """Canonical camera pairs plus A2B/B2A for the synthetic domains, with
    the class set restricted to what the manifest actually holds."""
    from tranadapt.data.manifest import (
        MAIN_CLASSES,
        CameraDomain,
        DomainPairSpec,
        domain_pair_by_name,
    )

    present = {r.scene_class for r in manifest} & set(MAIN_CLASSES)
    classes = tuple(c for c in MAIN_CLASSES if c in present)
    if name in ("A2B", "B2A"):
        a, b = CameraDomain.SYNTHETIC_A, CameraDomain.SYNTHETIC_B
        src, tgt = (a, b) if name == "A2B" else (b, a)
        return DomainPairSpec(name, frozenset({src}), tgt, classes)
    pair = domain_pair_by_name(name)
    return dataclasses.replace(pair, class_set=classes)


def _adaptation_data(pair, manifest):
    from tranadapt.training import AdaptationData, source_manifest_for_pair

    source = source_manifest_for_pair(pair, manifest)
    target = manifest.filter(camera=pair.target, classes=pair.class_set)
    if len(source) == 0 or len(target) == 0:
        raise CliError(f"pair {pair.name}: empty source or target after filtering")
    return AdaptationData(source=source, target=target)


def _model_config(config, pair, directions: str):
    from tranadapt.models import ModelConfig

    return ModelConfig(
        num_classes=len(pair.class_set),
        width_multiplier=config.model.width_multiplier,
        directions=directions,
        pretrained_weights=config.model.pretrained_weights,
    )


def cmd_prepare_data(config, args) -> int:
    from tranadapt.data.sunrgbd import build_sunrgbd_subset

    root = args.metadata_root or config.dataset.real_root
    if root is None:
        raise CliError("set dataset.real_root or pass --metadata-root")
    out = _out_dir(config, "prepare-data", args.run_name)
    manifest = build_sunrgbd_subset(root, out / "manifest.jsonl")
    counts = manifest.counts()
    (out / "counts.json").write_text(
        json.dumps({f"{c}/{k}": v for (c, k), v in sorted(counts.items())}, indent=2),
        encoding="utf-8",
    )
    print(f"{len(manifest)} records -> {out / 'manifest.jsonl'}")
    return 0


def cmd_synth_data(config, args) -> int:
    from tranadapt.data.synth import synth_generate

    out = Path(args.output) if args.output else _out_dir(config, "synth-data", args.run_name)
    manifest = synth_generate(config.dataset.synth, out)
    print(f"{len(manifest)} records -> {out / 'manifest.jsonl'}")
    return 0


def cmd_hha_encode(config, args) -> int:
    from tranadapt.data.loading import decode_depth
    from tranadapt.hha.backend import encode_hha_backend
    from tranadapt.hha.intrinsics import intrinsics_for, load_overrides

    manifest = _load_manifest(config, args.manifest)
    overrides = load_overrides(args.intrinsics)
    for record in manifest:
        raw = cv2.imread(str(manifest.resolve(record.depth_path)), cv2.IMREAD_UNCHANGED)
        if raw is None:
            raise CliError(f"cannot read depth for record {record.id}")
        depth_mm = decode_depth(raw, record.depth_encoding)
        intr = intrinsics_for(record.camera, depth_mm.shape, overrides)
        hha = encode_hha_backend(depth_mm, intr, backend=args.backend)
        dst = manifest.resolve(record.hha_path)
        dst.parent.mkdir(parents=True, exist_ok=True)
        cv2.imwrite(str(dst), cv2.cvtColor(hha, cv2.COLOR_RGB2BGR))
    print(f"encoded HHA for {len(manifest)} records ({args.backend} backend)")
    return 0


def _run_training(config, args, out: Path):
    from tranadapt.evaluation import evaluate_accuracy, final_target_accuracy
    from tranadapt.training import fit, fit_baseline

    manifest = _load_manifest(config, getattr(args, "manifest", None))
    pair = _resolve_pair(args.pair, manifest)
    data = _adaptation_data(pair, manifest)
    seed = args.seed if args.seed is not None else config.io.seed
    cfg = config.train_config(seed)
    if args.variant:
        cfg = dataclasses.replace(cfg, variant=args.variant)
    if getattr(args, "alpha_t", None) is not None:
        from tranadapt.losses import LossWeights

        cfg = dataclasses.replace(cfg, weights=LossWeights(cfg.weights.alpha_s, args.alpha_t))
    model_cfg = _model_config(config, pair, cfg.directions if cfg.variant == "tran_adapt" else "none")

    if cfg.variant == "tran_adapt":
        model, records = fit(pair, data, cfg, model_cfg, out)
    else:
        model, records = fit_baseline(cfg.variant, pair, data, cfg, model_cfg, out)

    from tranadapt.training import ModelBundle

    if isinstance(model, ModelBundle):
        report = evaluate_accuracy(model, data.eval_manifest(), pair.name, cfg.variant, seed)
    else:
        from tranadapt.training import SingleModalityClassifier

        if isinstance(model, SingleModalityClassifier):
            key = "rgb" if model.modality == "rgb" else "hha"
            fwd = lambda b: model(b[key])
        else:  # two-stage fusion
            fwd = lambda b: model(b["rgb"], b["hha"])
        report = evaluate_accuracy(model, data.eval_manifest(), pair.name, cfg.variant, seed, forward=fwd)
    report.save(out / "eval_report.json")
    print(f"final target accuracy: {final_target_accuracy(records):.2f} "
          f"({pair.name}, {cfg.variant}, seed {seed})")
    return 0


def cmd_train(config, args) -> int:
    out = _out_dir(config, "train", args.run_name)
    rc = _run_training(config, args, out)
    print(f"artifacts: {out}")
    return rc


def cmd_eval(config, args) -> int:
    from tranadapt.evaluation import evaluate_accuracy
    from tranadapt.models import ModelBundle

    out = _out_dir(config, "eval", args.run_name)
    bundle = ModelBundle.load_checkpoint(args.checkpoint)
    manifest = _load_manifest(config, args.manifest)
    pair = _resolve_pair(args.pair, manifest)
    target = manifest.filter(camera=pair.target, classes=pair.class_set)
    report = evaluate_accuracy(bundle, target, pair.name, args.variant or "tran_adapt",
                               args.seed if args.seed is not None else config.io.seed)
    report.save(out / "eval_report.json")
    print(f"accuracy {report.overall_accuracy:.2f} over {report.n_eval} samples -> {out}")
    return 0


def cmd_generate(config, args) -> int:
    from tranadapt.evaluation import evaluate_generation_l2
    from tranadapt.models import ModelBundle

    out = _out_dir(config, "generate", args.run_name)
    bundle = ModelBundle.load_checkpoint(args.checkpoint)
    path = args.manifest or config.dataset.extra_manifest
    if path is None:
        raise CliError("pass --manifest or set dataset.extra_manifest")
    from tranadapt.data.manifest import DatasetManifest

    manifest = DatasetManifest.load(path)
    report = evaluate_generation_l2(bundle, manifest, metric=config.eval.generation_metric)
    (out / "generation_report.json").write_text(
        json.dumps(report.to_json(), indent=2), encoding="utf-8"
    )
    print(f"generation L2 {report.mean_l2} over {report.n} samples -> {out}")
    return 0


def cmd_saliency(config, args) -> int:
    from tranadapt.data.loading import load_sample
    from tranadapt.evaluation import guided_backprop, render_saliency
    from tranadapt.models import ModelBundle

    out = _out_dir(config, "saliency", args.run_name)
    bundle = ModelBundle.load_checkpoint(args.checkpoint)
    manifest = _load_manifest(config, args.manifest)
    record = manifest.records[args.index]
    sample = load_sample(record, manifest, "eval")
    target_class = args.target_class if args.target_class is not None else sample.label
    if target_class is None:
        raise CliError("record has no main-set label; pass --target-class")
    maps = guided_backprop(bundle, sample, target_class)
    for name, m in maps.items():
        cv2.imwrite(str(out / f"saliency_{record.id.replace('/', '_')}_{name}.png"), render_saliency(m))
    print(f"saliency maps for {record.id} (class {target_class}) -> {out}")
    return 0


def cmd_sweep(config, args) -> int:
    from tranadapt.evaluation import alpha_sweep

    out = _out_dir(config, "sweep", args.run_name)
    manifest = _load_manifest(config, args.manifest)
    pair = _resolve_pair(args.pair, manifest)
    data = _adaptation_data(pair, manifest)
    seed = args.seed if args.seed is not None else config.io.seed
    grid = args.grid if args.grid else list(config.eval.sweep_grid)
    model_cfg = _model_config(config, pair, config.train.directions)
    report = alpha_sweep(pair, data, grid, config.train_config(seed), model_cfg, out)
    print(f"sweep over {grid} -> {out / 'sweep.json'}")
    return 0


def cmd_shift_probe(config, args) -> int:
    from tranadapt.data.manifest import CameraDomain, split_train_test, merge_manifests
    from tranadapt.evaluation import domain_shift_probe

    out = _out_dir(config, "shift-probe", args.run_name)
    manifest = _load_manifest(config, args.manifest)
    seed = args.seed if args.seed is not None else config.io.seed
    ratio = config.eval.split_ratio

    def split_for(camera_name):
        sub = manifest.filter(camera=CameraDomain(camera_name))
        if len(sub) == 0:
            raise CliError(f"no records for camera {camera_name}")
        train, test = split_train_test(sub, ratio, seed)
        return merge_manifests([train, test])

    source = split_for(args.source_camera)
    other = split_for(args.target_camera)
    results = {}
    for modality in (["rgb", "depth"] if args.modality == "both" else [args.modality]):
        rep = domain_shift_probe(source, other, modality, config.train_config(seed),
                                 config.model.width_multiplier)
        results[modality] = rep.to_json()
        print(f"{modality}: within {rep.within:.2f} across {rep.across:.2f} drop {rep.drop:.2f}")
    (out / "shift_report.json").write_text(json.dumps(results, indent=2), encoding="utf-8")
    return 0


def cmd_report(config, args) -> int:
    from tranadapt.evaluation import EvalReport, aggregate_reports

    out = _out_dir(config, "report", args.run_name)
    paths = sorted(Path(args.inputs).rglob("eval_report*.json"))
    if not paths:
        raise CliError(f"no eval_report*.json under {args.inputs}")
    reports = [EvalReport.load(p) for p in paths]
    text, rows = aggregate_reports(reports)
    (out / "table.txt").write_text(text + "\n", encoding="utf-8")
    with open(out / "table.csv", "w", newline="", encoding="utf-8") as f:
        csv.writer(f).writerows(rows)
    print(text)
    print(f"-> {out}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="tranadapt", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.set_defaults(fn=fn)
        p.add_argument("--config", default=None, help="experiment config (.toml or .json)")
        p.add_argument("--run-name", default=None, help="output subdirectory (default: timestamp)")
        p.add_argument("--seed", type=int, default=None)
        return p

    p = add("prepare-data", cmd_prepare_data, help="build the benchmark manifest from a SUN RGB-D tree")
    p.add_argument("--metadata-root", default=None)

    p = add("synth-data", cmd_synth_data, help="render the synthetic two-domain benchmark")
    p.add_argument("--output", default=None, help="write directly to this directory")

    p = add("hha-encode", cmd_hha_encode, help="encode depth maps to HHA next to the depth files")
    p.add_argument("--manifest", default=None)
    p.add_argument("--intrinsics", default=None, help="JSON intrinsics override table")
    p.add_argument("--backend", choices=["reference", "kernel"], default="reference")

    def add_train_like(name, fn, help):
        p = add(name, fn, help=help)
        p.add_argument("--manifest", default=None)
        p.add_argument("--pair", default="A2B",
                       help="K2X|X2K|K2R|X2R|KX2R or A2B/B2A for synthetic")
        return p

    p = add_train_like("train", cmd_train, "train one variant on one domain pair")
    p.add_argument("--variant", default=None,
                   choices=["tran_adapt", "source_only_rgb", "source_only_depth", "fusion", "fusion_pp"])
    p.add_argument("--alpha-t", type=float, default=None)

    p = add("eval", cmd_eval, help="score a checkpoint on a target domain")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", default=None)
    p.add_argument("--pair", default="A2B")
    p.add_argument("--variant", default=None)

    p = add("generate", cmd_generate, help="unseen-class generation L2 scores")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", default=None)

    p = add("saliency", cmd_saliency, help="guided-backprop saliency maps for one record")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", default=None)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--target-class", type=int, default=None)

    p = add_train_like("sweep", cmd_sweep, "re-train across a target similarity weight grid")
    p.add_argument("--grid", type=float, nargs="+", default=None)

    p = add("shift-probe", cmd_shift_probe, help="within vs cross-camera accuracy probe")
    p.add_argument("--manifest", default=None)
    p.add_argument("--source-camera", required=True)
    p.add_argument("--target-camera", required=True)
    p.add_argument("--modality", choices=["rgb", "depth", "both"], default="both")

    p = add("report", cmd_report, help="aggregate eval reports into a pair-by-variant matrix")
    p.add_argument("--inputs", required=True)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    from tranadapt.config import ConfigError, load_config

    try:
        config = load_config(args.config)
        return args.fn(config, args)
    except (CliError, ConfigError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # runtime failure
        log.exception("command failed")
        return 2


if __name__ == "__main__":
    sys.exit(main())
