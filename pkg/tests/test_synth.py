import hashlib

import numpy as np
import pytest

from tranadapt.data.manifest import CameraDomain, DatasetManifest
from tranadapt.data.synth import SynthConfig, synth_generate, _make_archetype, _render_scene
from tranadapt.data.loading import load_sample


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            SynthConfig(n_classes=1)
        with pytest.raises(ValueError):
            SynthConfig(image_size=16)


class TestGenerate:
    def test_record_count(self, small_synth_manifest):
        # 4 per class x 3 classes x 2 domains
        assert len(small_synth_manifest) == 24

    def test_counts_per_stratum(self, small_synth_manifest):
        for (cam, cls), n in small_synth_manifest.counts().items():
            assert n == 4

    def test_samples_load_and_match_shapes(self, small_synth_manifest):
        r = small_synth_manifest.records[0]
        s = load_sample(r, small_synth_manifest, "source")
        assert s.rgb.shape == (48, 48, 3)
        assert s.depth_mm.shape == (48, 48)
        assert s.hha.shape == (48, 48, 3)
        assert s.depth_mm.max() > 500  # plausible millimeter range

    def test_manifest_deterministic(self, tmp_path):
        cfg = SynthConfig(n_per_class=2, n_classes=2, image_size=32, shift_strength=0.4, seed=3)
        m1 = synth_generate(cfg, tmp_path / "a")
        m2 = synth_generate(cfg, tmp_path / "b")
        digest = lambda p: hashlib.sha256((p / "manifest.jsonl").read_bytes()).hexdigest()
        assert digest(tmp_path / "a") == digest(tmp_path / "b")
        # image bytes identical too
        for r in m1:
            a = (tmp_path / "a" / r.rgb_path).read_bytes()
            b = (tmp_path / "b" / r.rgb_path).read_bytes()
            assert a == b

    def test_zero_shift_domains_identically_distributed(self, tmp_path):
        cfg = SynthConfig(n_per_class=2, n_classes=2, image_size=32, shift_strength=0.0, seed=5)
        m = synth_generate(cfg, tmp_path)
        root = tmp_path
        for r_a in m.filter(camera=CameraDomain.SYNTHETIC_A):
            r_b_path = r_a.rgb_path.replace("synthetic_a", "synthetic_b")
            assert (root / r_a.rgb_path).read_bytes() == (root / r_b_path).read_bytes()

    def test_shift_changes_images(self, tmp_path):
        cfg = SynthConfig(n_per_class=1, n_classes=2, image_size=32, shift_strength=0.8, seed=5)
        m = synth_generate(cfg, tmp_path)
        r_a = m.filter(camera=CameraDomain.SYNTHETIC_A).records[0]
        r_b_path = r_a.rgb_path.replace("synthetic_a", "synthetic_b")
        assert (tmp_path / r_a.rgb_path).read_bytes() != (tmp_path / r_b_path).read_bytes()


class TestRenderer:
    def test_archetypes_differ_between_classes(self):
        a0 = _make_archetype(0, seed=0)
        a1 = _make_archetype(1, seed=0)
        assert a0.n_objects != a1.n_objects or not np.allclose(a0.centers[:1], a1.centers[:1])

    def test_depth_positive_and_room_scale(self):
        arch = _make_archetype(0, seed=0)
        rgb, depth = _render_scene(arch, 48, np.random.default_rng(0))
        assert rgb.shape == (48, 48, 3)
        assert 0.0 <= rgb.min() and rgb.max() <= 1.0
        assert depth.min() > 0.2 and depth.max() < 10.0
