import math

import numpy as np
import pytest
import torch
import torch.nn as nn

from tranadapt.losses import (
    LossWeights,
    SimilarityConfig,
    classification_loss,
    similarity_loss,
    total_loss,
)
from tranadapt.models import FeatureExtractor


class TinyF(nn.Module):
    """Two fixed convolution taps; float64; used as an analytic stand-in for
    the frozen extractor in oracle and gradient tests."""

    def __init__(self, seed=0):
        super().__init__()
        g = torch.Generator().manual_seed(seed)
        self.conv1 = nn.Conv2d(3, 4, 3, padding=1, bias=False).double()
        self.conv2 = nn.Conv2d(4, 2, 3, padding=1, bias=False).double()
        with torch.no_grad():
            self.conv1.weight.copy_(torch.randn(self.conv1.weight.shape, generator=g))
            self.conv2.weight.copy_(torch.randn(self.conv2.weight.shape, generator=g))
        for p in self.parameters():
            p.requires_grad_(False)

    def extract_layer_features(self, x):
        t1 = torch.tanh(self.conv1(x))
        t2 = self.conv2(t1)
        return {"layer1": t1, "layer2": t2}


CFG2 = SimilarityConfig(taps=("layer1", "layer2"))


def brute_force_sim(f, cfg, pairs):
    """Independent elementwise |.| computation over all tap elements."""
    total = 0.0
    for gen, orig in pairs:
        tg = f.extract_layer_features(gen)
        to = f.extract_layer_features(orig)
        for name in cfg.taps:
            a = tg[name].detach().numpy()
            b = to[name].detach().numpy()
            total += float(np.mean(np.abs(a - b)))
    return total


class TestClassificationLoss:
    def test_uniform_logits_give_ln10(self):
        logits = torch.zeros(4, 10)
        labels = torch.tensor([0, 3, 5, 9])
        assert math.isclose(float(classification_loss(logits, labels)), math.log(10), rel_tol=1e-6)

    def test_margin_limit(self):
        labels = torch.tensor([1])
        losses = []
        for margin in (1.0, 4.0, 16.0):
            logits = torch.full((1, 3), -margin)
            logits[0, 1] = margin
            losses.append(float(classification_loss(logits, labels)))
        assert losses[0] > losses[1] > losses[2]
        assert losses[2] < 1e-3

    def test_matches_log_sum_exp_oracle(self):
        g = torch.Generator().manual_seed(5)
        logits = torch.randn(4, 3, generator=g)
        labels = torch.tensor([2, 0, 1, 1])
        # hand-rolled softmax cross-entropy via log-sum-exp
        expected = 0.0
        for i in range(4):
            row = logits[i].numpy()
            m = row.max()
            lse = m + np.log(np.exp(row - m).sum())
            expected += lse - row[labels[i]]
        expected /= 4
        assert math.isclose(float(classification_loss(logits, labels)), expected, rel_tol=1e-6)

    def test_one_hot_labels_accepted(self):
        logits = torch.zeros(2, 3)
        one_hot = torch.tensor([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]])
        idx = torch.tensor([1, 0])
        assert float(classification_loss(logits, one_hot)) == float(classification_loss(logits, idx))

    def test_out_of_range_label(self):
        with pytest.raises(ValueError, match="out of range"):
            classification_loss(torch.zeros(1, 3), torch.tensor([3]))


class TestSimilarityLoss:
    def test_identity_pair_is_exactly_zero(self):
        f = TinyF()
        x = torch.rand(2, 3, 8, 8, dtype=torch.float64)
        y = torch.rand(2, 3, 8, 8, dtype=torch.float64)
        val = similarity_loss(f, CFG2, generated_rgb=x, original_rgb=x,
                              generated_hha=y, original_hha=y)
        assert float(val) == 0.0

    def test_single_pair_additivity(self):
        f = TinyF()
        g = torch.Generator().manual_seed(1)
        gen_r, orig_r = torch.rand(2, 3, 8, 8, generator=g).double(), torch.rand(2, 3, 8, 8, generator=g).double()
        gen_h, orig_h = torch.rand(2, 3, 8, 8, generator=g).double(), torch.rand(2, 3, 8, 8, generator=g).double()
        both = similarity_loss(f, CFG2, generated_rgb=gen_r, original_rgb=orig_r,
                               generated_hha=gen_h, original_hha=orig_h)
        only_rgb = similarity_loss(f, CFG2, generated_rgb=gen_r, original_rgb=orig_r)
        only_hha = similarity_loss(f, CFG2, generated_hha=gen_h, original_hha=orig_h)
        assert math.isclose(float(both), float(only_rgb) + float(only_hha), rel_tol=1e-12)

    def test_matches_brute_force_oracle(self):
        f = TinyF()
        g = torch.Generator().manual_seed(2)
        pairs = [
            (torch.rand(2, 3, 8, 8, generator=g).double(), torch.rand(2, 3, 8, 8, generator=g).double()),
            (torch.rand(2, 3, 8, 8, generator=g).double(), torch.rand(2, 3, 8, 8, generator=g).double()),
        ]
        val = similarity_loss(
            f, CFG2,
            generated_rgb=pairs[0][0], original_rgb=pairs[0][1],
            generated_hha=pairs[1][0], original_hha=pairs[1][1],
        )
        oracle = brute_force_sim(f, CFG2, pairs)
        assert math.isclose(float(val), oracle, rel_tol=1e-6)

    def test_no_pairs_fatal(self):
        with pytest.raises(ValueError, match="at least one"):
            similarity_loss(TinyF(), CFG2)

    def test_non_negative(self):
        f = TinyF()
        g = torch.Generator().manual_seed(3)
        for _ in range(10):
            a = torch.rand(1, 3, 8, 8, generator=g).double()
            b = torch.rand(1, 3, 8, 8, generator=g).double()
            assert float(similarity_loss(f, CFG2, generated_rgb=a, original_rgb=b)) >= 0.0

    def test_gradient_matches_finite_differences(self):
        f = TinyF()
        g = torch.Generator().manual_seed(4)
        gen = torch.rand(1, 3, 8, 8, generator=g).double().requires_grad_(True)
        orig = torch.rand(1, 3, 8, 8, generator=g).double()
        loss = similarity_loss(f, CFG2, generated_rgb=gen, original_rgb=orig)
        loss.backward()
        grad = gen.grad.clone()

        rng = np.random.default_rng(0)
        eps = 1e-6
        for _ in range(20):
            c, i, j = rng.integers(0, 3), rng.integers(0, 8), rng.integers(0, 8)
            for sign, store in ((1, "hi"), (-1, "lo")):
                pert = gen.detach().clone()
                pert[0, c, i, j] += sign * eps
                val = float(similarity_loss(f, CFG2, generated_rgb=pert, original_rgb=orig))
                if sign == 1:
                    hi = val
                else:
                    lo = val
            fd = (hi - lo) / (2 * eps)
            an = float(grad[0, c, i, j])
            assert abs(fd - an) <= 1e-3 * max(1.0, abs(fd))

    def test_frozen_extractor_gets_no_gradients(self):
        f = FeatureExtractor(width_multiplier=0.25)
        gen = torch.rand(1, 3, 32, 32, requires_grad=True)
        orig = torch.rand(1, 3, 32, 32)
        cfg = SimilarityConfig()
        loss = similarity_loss(f, cfg, generated_rgb=gen, original_rgb=orig)
        loss.backward()
        assert gen.grad is not None
        assert all(p.grad is None for p in f.parameters())


class TestTotalLoss:
    def test_paper_default_weights_arithmetic(self):
        w = LossWeights(10.0, 3.0)
        assert float(total_loss(1.0, 0.2, 0.1, w)) == pytest.approx(3.3, abs=1e-12)

    def test_zero_weights_degenerate(self):
        w = LossWeights(0.0, 0.0)
        assert float(total_loss(1.7, 9.9, 4.2, w)) == 1.7

    def test_gradient_wrt_target_term_is_alpha_t(self):
        w = LossWeights(10.0, 3.0)
        t = torch.tensor(0.5, requires_grad=True)
        total_loss(torch.tensor(1.0), torch.tensor(0.2), t, w).backward()
        assert float(t.grad) == 3.0

    def test_three_point_collinearity(self):
        w = LossWeights(7.0, 2.0)
        # exactly linear in each component
        for k in range(3):
            vals = []
            for x in (0.0, 1.0, 2.0):
                args = [0.3, 0.4, 0.5]
                args[k] = x
                vals.append(float(total_loss(*args, w)))
            assert vals[2] - vals[1] == pytest.approx(vals[1] - vals[0], abs=1e-12)

    def test_nan_fatal_with_component_name(self):
        w = LossWeights()
        with pytest.raises(FloatingPointError, match="loss_sim_t"):
            total_loss(1.0, 0.0, float("nan"), w)

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            LossWeights(-1.0, 0.0)
