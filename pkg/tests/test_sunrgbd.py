import json

import cv2
import numpy as np
import pytest

from tranadapt.data.manifest import CameraDomain
from tranadapt.data.sunrgbd import SunRgbdBuildError, build_sunrgbd_subset


def plant(root, camera, name, label, refined=False):
    d = root / camera / name
    (d / "image").mkdir(parents=True)
    (d / "depth").mkdir()
    cv2.imwrite(str(d / "image" / "img.jpg"), np.zeros((8, 8, 3), np.uint8))
    cv2.imwrite(str(d / "depth" / "d.png"), np.zeros((8, 8), np.uint16))
    if refined:
        (d / "depth_bfx").mkdir()
        cv2.imwrite(str(d / "depth_bfx" / "d.png"), np.zeros((8, 8), np.uint16))
    (d / "scene.txt").write_text(label)


@pytest.fixture
def fixture_tree(tmp_path):
    plant(tmp_path, "kv1", "img0001", "bathroom")
    plant(tmp_path, "kv2", "img0001", "bathroom")
    plant(tmp_path, "realsense", "img0001", "bathroom")
    plant(tmp_path, "xtion", "img0001", "bathroom")
    return tmp_path


class TestBuilder:
    def test_identity_fixture(self, fixture_tree, tmp_path):
        m = build_sunrgbd_subset(fixture_tree, tmp_path / "out" / "manifest.jsonl")
        assert len(m) == 4
        counts = m.counts()
        for cam in ("kinect_v1", "kinect_v2", "realsense", "xtion"):
            assert counts[(cam, "bathroom")] == 1

    def test_office_kitchen_merged(self, fixture_tree, tmp_path):
        plant(fixture_tree, "kv2", "img0002", "office_kitchen")
        m = build_sunrgbd_subset(fixture_tree, tmp_path / "out" / "manifest.jsonl")
        assert m.counts()[("kinect_v2", "kitchen")] == 1
        assert not any(r.scene_class == "office_kitchen" for r in m)

    def test_unknown_label_skipped_and_reported(self, fixture_tree, tmp_path):
        plant(fixture_tree, "xtion", "img0002", "garage")
        out = tmp_path / "out" / "manifest.jsonl"
        m = build_sunrgbd_subset(fixture_tree, out)
        assert len(m) == 4
        skips = json.loads(out.with_suffix(".skips.json").read_text())
        assert skips == {"garage": 1}

    def test_refined_depth_preferred(self, fixture_tree, tmp_path):
        plant(fixture_tree, "kv2", "img0002", "office", refined=True)
        m = build_sunrgbd_subset(fixture_tree, tmp_path / "out" / "manifest.jsonl")
        rec = next(r for r in m if r.scene_class == "office")
        assert "depth_bfx" in rec.depth_path
        assert "depth=refined" in m.provenance

    def test_records_use_rotated_encoding(self, fixture_tree, tmp_path):
        m = build_sunrgbd_subset(fixture_tree, tmp_path / "out" / "manifest.jsonl")
        assert all(r.depth_encoding == "sunrgbd_rotated" for r in m)

    def test_missing_root_fatal(self, tmp_path):
        with pytest.raises(SunRgbdBuildError, match="not found"):
            build_sunrgbd_subset(tmp_path / "nope", tmp_path / "m.jsonl")

    def test_no_camera_dirs_fatal(self, tmp_path):
        (tmp_path / "stuff").mkdir()
        with pytest.raises(SunRgbdBuildError, match="no camera"):
            build_sunrgbd_subset(tmp_path, tmp_path / "m.jsonl")

    def test_missing_image_dir_fatal(self, fixture_tree, tmp_path):
        d = fixture_tree / "kv1" / "img0002"
        d.mkdir()
        (d / "scene.txt").write_text("office")
        with pytest.raises(SunRgbdBuildError, match=str(d)):
            build_sunrgbd_subset(fixture_tree, tmp_path / "m.jsonl")

    def test_extra_classes_included(self, fixture_tree, tmp_path):
        plant(fixture_tree, "kv2", "img0003", "corridor")
        m = build_sunrgbd_subset(fixture_tree, tmp_path / "out" / "manifest.jsonl")
        assert m.counts()[("kinect_v2", "corridor")] == 1
