import numpy as np
import pytest
import torch

from tranadapt.models import (
    Decoder,
    FeatureExtractor,
    ModelBundle,
    ModelConfig,
    build_bundle,
    forward_classify,
    forward_embed,
    forward_translate,
)

WM = 0.25  # desk-scale width everywhere in this module


def tiny_bundle(**kwargs):
    return build_bundle(ModelConfig(num_classes=5, width_multiplier=WM, **kwargs))


class TestBuildBundle:
    def test_full_width_feature_map(self):
        b = build_bundle(ModelConfig(num_classes=10, width_multiplier=1.0))
        with torch.no_grad():
            feat = b.e_rgb(torch.randn(1, 3, 224, 224))
        assert feat.shape == (1, 512, 7, 7)

    def test_quarter_width_shapes_chain(self):
        b = tiny_bundle()
        x = torch.randn(1, 3, 224, 224)
        with torch.no_grad():
            feat_rgb, feat_depth, e_rgb, e_depth = forward_embed(b, x, x)
            gen = forward_translate(b, feat_rgb, "rgb_to_depth")
        assert feat_rgb.shape == (1, 128, 7, 7)
        assert e_rgb.shape == e_depth.shape == (1, 128)
        assert gen.shape == (1, 3, 224, 224)

    def test_single_direction_has_one_decoder(self):
        b = tiny_bundle(directions="rgb2d_only")
        assert b.d_rgb2d is not None and b.d_d2rgb is None

    def test_pretrained_round_trip(self, tmp_path):
        src = tiny_bundle()
        src.save_checkpoint(tmp_path / "ckpt")
        loaded = build_bundle(
            ModelConfig(num_classes=5, width_multiplier=WM, pretrained_weights=str(tmp_path / "ckpt"))
        )
        for name in ("e_rgb", "e_depth", "f"):
            for (k, a), (_, b) in zip(
                getattr(src, name).state_dict().items(), getattr(loaded, name).state_dict().items()
            ):
                assert torch.equal(a, b), f"{name}.{k}"

    def test_bad_directions(self):
        with pytest.raises(ValueError):
            ModelConfig(directions="sideways")


class TestForward:
    def test_zero_input_finite(self):
        b = tiny_bundle()
        z = torch.zeros(2, 3, 224, 224)
        _, _, e_rgb, e_depth = forward_embed(b, z, z)
        logits = forward_classify(b, e_rgb, e_depth)
        assert torch.isfinite(logits).all()

    def test_batched(self):
        b = tiny_bundle()
        x = torch.randn(3, 3, 224, 224)
        feat_rgb, _, e_rgb, e_depth = forward_embed(b, x, x)
        assert feat_rgb.shape[0] == 3
        assert forward_classify(b, e_rgb, e_depth).shape == (3, 5)
        assert forward_translate(b, feat_rgb, "rgb_to_depth").shape[0] == 3

    def test_eval_mode_deterministic(self):
        b = tiny_bundle()
        b.eval()
        x = torch.randn(1, 3, 224, 224)
        with torch.no_grad():
            a = forward_embed(b, x, x)[2]
            c = forward_embed(b, x, x)[2]
        assert torch.equal(a, c)

    def test_head_concat_permutation_oracle(self):
        b = tiny_bundle()
        e_rgb = torch.randn(2, b.embed_dim)
        e_depth = torch.randn(2, b.embed_dim)
        logits = forward_classify(b, e_rgb, e_depth)
        # swap concat order and permute the head's weight columns to match
        w = b.head.fc.weight.detach()
        swapped_w = torch.cat([w[:, b.embed_dim:], w[:, :b.embed_dim]], dim=1)
        swapped = torch.nn.functional.linear(
            torch.cat([e_depth, e_rgb], dim=1), swapped_w, b.head.fc.bias.detach()
        )
        assert torch.allclose(logits, swapped, atol=1e-6)

    def test_zero_embeddings_zero_bias_head(self):
        b = tiny_bundle()
        with torch.no_grad():
            b.head.fc.bias.zero_()
        z = torch.zeros(1, b.embed_dim)
        assert torch.equal(forward_classify(b, z, z), torch.zeros(1, 5))

    def test_missing_decoder_fatal(self):
        b = tiny_bundle(directions="rgb2d_only")
        feat = torch.randn(1, b.embed_dim, 7, 7)
        with pytest.raises(RuntimeError, match="no depth_to_rgb"):
            forward_translate(b, feat, "depth_to_rgb")


class TestDecoder:
    def test_output_range_many_random_inputs(self):
        dec = Decoder("rgb_to_depth", 32)
        dec.eval()
        with torch.no_grad():
            for _ in range(20):
                out = dec(torch.randn(4, 32, 7, 7) * 5)
                assert float(out.min()) >= 0.0 and float(out.max()) <= 1.0


class TestFeatureExtractor:
    def test_tap_shapes_full_width(self):
        f = FeatureExtractor(1.0)
        taps = f.extract_layer_features(torch.rand(1, 3, 224, 224))
        assert taps["layer1"].shape == (1, 64, 56, 56)
        assert taps["layer4"].shape == (1, 512, 7, 7)

    def test_taps_deterministic(self):
        f = FeatureExtractor(WM)
        x = torch.rand(1, 3, 64, 64)
        a = f.extract_layer_features(x)
        b = f.extract_layer_features(x)
        for k in a:
            assert torch.equal(a[k], b[k])

    def test_input_gradient_nonzero(self):
        f = FeatureExtractor(WM)
        x = torch.rand(1, 3, 64, 64, requires_grad=True)
        taps = f.extract_layer_features(x)
        taps["layer4"].sum().backward()
        assert float(x.grad.abs().sum()) > 0

    def test_train_mode_is_a_noop(self):
        f = FeatureExtractor(WM)
        f.train()
        assert not f.training

    def test_digest_stable(self):
        f = FeatureExtractor(WM)
        d1 = f.parameter_digest()
        f.extract_layer_features(torch.rand(2, 3, 64, 64))
        assert f.parameter_digest() == d1


class TestCheckpoint:
    def test_round_trip_identical_forward(self, tmp_path):
        b = tiny_bundle()
        b.eval()
        probe = torch.randn(2, 3, 224, 224)
        with torch.no_grad():
            before = forward_classify(b, *forward_embed(b, probe, probe)[2:])
        b.save_checkpoint(tmp_path / "ckpt", epoch=3, seed=1)
        loaded = ModelBundle.load_checkpoint(tmp_path / "ckpt")
        loaded.eval()
        with torch.no_grad():
            after = forward_classify(loaded, *forward_embed(loaded, probe, probe)[2:])
        assert torch.equal(before, after)

    def test_component_name_set_validated(self, tmp_path):
        b = tiny_bundle()
        b.save_checkpoint(tmp_path / "ckpt")
        (tmp_path / "ckpt" / "d_rgb2d.pt").unlink()
        with pytest.raises(ValueError, match="missing"):
            ModelBundle.load_checkpoint(tmp_path / "ckpt")

    def test_not_a_checkpoint(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            ModelBundle.load_checkpoint(tmp_path / "nope")
