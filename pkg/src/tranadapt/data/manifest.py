"""Benchmark manifests: records, domain pairs, stratified splits.

A manifest is an ordered list of records, one per multi-modal image pair,
stored as JSON Lines with paths relative to the manifest's directory.
Provenance and the build seed live in a sidecar ``<stem>.meta.json`` so the
manifest file itself stays strictly one-record-per-line.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Sequence


class CameraDomain(str, Enum):
    KINECT_V1 = "kinect_v1"
    KINECT_V2 = "kinect_v2"
    REALSENSE = "realsense"
    XTION = "xtion"
    SYNTHETIC_A = "synthetic_a"
    SYNTHETIC_B = "synthetic_b"


# The 10-class main label space. Order fixes the label indices everywhere.
MAIN_CLASSES = (
    "bathroom",
    "bedroom",
    "classroom",
    "computer_room",
    "conference_room",
    "dining_area",
    "discussion_area",
    "kitchen",
    "office",
    "rest_space",
)

# Generation-eval-only classes; never valid as classifier training labels.
EXTRA_CLASSES = ("corridor", "printer_room", "study_space")

CLASS_TO_INDEX = {name: i for i, name in enumerate(MAIN_CLASSES)}


class ManifestError(Exception):
    pass


@dataclass(frozen=True)
class ManifestRecord:
    id: str
    camera: CameraDomain
    scene_class: str
    rgb_path: str
    depth_path: str
    hha_path: str
    split: str = "train"
    depth_encoding: str = "plain_mm"

    def __post_init__(self):
        if self.scene_class not in MAIN_CLASSES and self.scene_class not in EXTRA_CLASSES:
            raise ManifestError(f"unknown scene class {self.scene_class!r} in record {self.id}")
        if self.split not in ("train", "test"):
            raise ManifestError(f"bad split {self.split!r} in record {self.id}")
        if self.depth_encoding not in ("plain_mm", "sunrgbd_rotated"):
            raise ManifestError(f"bad depth encoding {self.depth_encoding!r} in record {self.id}")

    def to_json(self) -> dict:
        d = {
            "id": self.id,
            "camera": self.camera.value,
            "scene_class": self.scene_class,
            "rgb_path": self.rgb_path,
            "depth_path": self.depth_path,
            "hha_path": self.hha_path,
            "split": self.split,
            "depth_encoding": self.depth_encoding,
        }
        return d

    @classmethod
    def from_json(cls, d: dict) -> "ManifestRecord":
        return cls(
            id=d["id"],
            camera=CameraDomain(d["camera"]),
            scene_class=d["scene_class"],
            rgb_path=d["rgb_path"],
            depth_path=d["depth_path"],
            hha_path=d["hha_path"],
            split=d.get("split", "train"),
            depth_encoding=d.get("depth_encoding", "plain_mm"),
        )


@dataclass(frozen=True)
class DatasetManifest:
    records: tuple[ManifestRecord, ...]
    provenance: str = ""
    seed: int = 0
    root: Path | None = None  # directory record paths are relative to

    def __post_init__(self):
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ManifestError(f"duplicate record ids: {dupes[:5]}")

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[ManifestRecord]:
        return iter(self.records)

    def filter(self, *, camera=None, classes=None, split=None) -> "DatasetManifest":
        cams = None
        if camera is not None:
            cams = {camera} if isinstance(camera, CameraDomain) else set(camera)
        recs = tuple(
            r
            for r in self.records
            if (cams is None or r.camera in cams)
            and (classes is None or r.scene_class in classes)
            and (split is None or r.split == split)
        )
        return replace(self, records=recs)

    def counts(self) -> dict[tuple[str, str], int]:
        """Per-(camera, class) record counts."""
        out: dict[tuple[str, str], int] = {}
        for r in self.records:
            key = (r.camera.value, r.scene_class)
            out[key] = out.get(key, 0) + 1
        return out

    def save(self, path: Path | str) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            for r in self.records:
                f.write(json.dumps(r.to_json()) + "\n")
        meta = {"provenance": self.provenance, "seed": self.seed}
        path.with_suffix(".meta.json").write_text(json.dumps(meta, indent=2), encoding="utf-8")

    @classmethod
    def load(cls, path: Path | str) -> "DatasetManifest":
        path = Path(path)
        records = []
        with open(path, encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if line:
                    records.append(ManifestRecord.from_json(json.loads(line)))
        provenance, seed = "", 0
        meta_path = path.with_suffix(".meta.json")
        if meta_path.exists():
            meta = json.loads(meta_path.read_text(encoding="utf-8"))
            provenance = meta.get("provenance", "")
            seed = meta.get("seed", 0)
        return cls(records=tuple(records), provenance=provenance, seed=seed, root=path.parent)

    def resolve(self, rel_path: str) -> Path:
        if self.root is None:
            return Path(rel_path)
        return self.root / rel_path


@dataclass(frozen=True)
class DomainPairSpec:
    name: str
    sources: frozenset[CameraDomain]
    target: CameraDomain
    class_set: tuple[str, ...] = MAIN_CLASSES

    def __post_init__(self):
        if self.target in self.sources:
            raise ManifestError(f"pair {self.name}: target appears in sources")
        if CameraDomain.KINECT_V1 in self.sources or self.target is CameraDomain.KINECT_V1:
            raise ManifestError(f"pair {self.name}: kinect_v1 is excluded from adaptation pairs")


def define_domain_pairs() -> tuple[DomainPairSpec, ...]:
    """The five canonical source->target camera pairs, in benchmark order."""
    K, X, R = CameraDomain.KINECT_V2, CameraDomain.XTION, CameraDomain.REALSENSE
    return (
        DomainPairSpec("K2X", frozenset({K}), X),
        DomainPairSpec("X2K", frozenset({X}), K),
        DomainPairSpec("K2R", frozenset({K}), R),
        DomainPairSpec("X2R", frozenset({X}), R),
        DomainPairSpec("KX2R", frozenset({K, X}), R),
    )


def domain_pair_by_name(name: str) -> DomainPairSpec:
    for p in define_domain_pairs():
        if p.name == name:
            return p
    raise ManifestError(f"unknown domain pair {name!r}; expected one of K2X, X2K, K2R, X2R, KX2R")


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_train_test(
    manifest: DatasetManifest, ratio: float, seed: int
) -> tuple[DatasetManifest, DatasetManifest]:
    """Stratified per-(camera, class) split; train gets round(ratio * n) of each stratum."""
    if not (0.0 < ratio < 1.0):
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    strata: dict[tuple[str, str], list[ManifestRecord]] = {}
    for r in manifest.records:
        strata.setdefault((r.camera.value, r.scene_class), []).append(r)

    rng = random.Random(seed)
    train_ids: set[str] = set()
    for key in sorted(strata):
        recs = strata[key]
        n_train = _round_half_up(ratio * len(recs))
        picked = rng.sample(range(len(recs)), n_train)
        train_ids.update(recs[i].id for i in picked)

    train = tuple(replace(r, split="train") for r in manifest.records if r.id in train_ids)
    test = tuple(replace(r, split="test") for r in manifest.records if r.id not in train_ids)
    mk = lambda recs, tag: replace(
        manifest, records=recs, provenance=f"{manifest.provenance}|split({ratio},{seed}):{tag}"
    )
    return mk(train, "train"), mk(test, "test")


def merge_manifests(manifests: Sequence[DatasetManifest]) -> DatasetManifest:
    """Concatenate manifests sharing one root (used for multi-source pairs)."""
    roots = {m.root for m in manifests}
    if len(roots) != 1:
        raise ManifestError(f"cannot merge manifests with differing roots: {roots}")
    records: list[ManifestRecord] = []
    for m in manifests:
        records.extend(m.records)
    prov = "+".join(m.provenance for m in manifests)
    return DatasetManifest(tuple(records), provenance=prov, seed=manifests[0].seed, root=manifests[0].root)
