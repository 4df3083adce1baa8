"""Amplified-view construction and evaluation."""

import numpy as np
import pytest

from conftest import identity_bn, random_small_model
from ibdpsc.amplifier import amplify, view_forward
from ibdpsc.modelio import Conv, GlobalAvgPool, Linear, ModelGraph, forward
from ibdpsc.tensor import batchnorm_infer


class TestAmplify:
    def test_unit_factor_is_identity(self, small_model, small_batch):
        base = forward(small_model, small_batch)[1]
        for k in range(1, small_model.bn_count + 1):
            probs = view_forward(amplify(small_model, k, 1.0), small_batch)
            np.testing.assert_array_equal(probs, base)

    def test_k_out_of_range(self, small_model):
        with pytest.raises(ValueError, match="k must lie in"):
            amplify(small_model, 0, 1.5)
        with pytest.raises(ValueError, match="k must lie in"):
            amplify(small_model, small_model.bn_count + 1, 1.5)

    def test_shrink_needs_ablation_flag(self, small_model):
        with pytest.raises(ValueError, match="allow_shrink"):
            amplify(small_model, 1, 0.9)
        view = amplify(small_model, 1, 0.9, allow_shrink=True)
        assert view.omega == 0.9
        with pytest.raises(ValueError, match="omega must be > 0"):
            amplify(small_model, 1, 0.0, allow_shrink=True)

    def test_overrides_touch_only_last_k(self, small_model):
        view = amplify(small_model, 2, 1.5)
        names = small_model.bn_names()
        assert set(view.overrides) == set(names[-2:])

    def test_view_memory_is_per_channel_only(self, small_model):
        view = amplify(small_model, small_model.bn_count, 2.0)
        floats = sum(g.size + b.size for g, b in view.overrides.values())
        channel_budget = 2 * sum(bn.params.channels for bn in small_model.bn_order)
        assert floats == channel_budget

    def test_amplified_norm_grows_on_linear_path(self):
        # Bias-free, beta-free, ReLU-free model: every view is a pure scaling
        # of the logits, so amplifying everything must strictly grow the norm.
        rng = np.random.default_rng(41)
        layers = []
        cin = 3
        for i in range(3):
            layers.append(
                Conv((rng.standard_normal((4, cin, 3, 3)) * 0.4).astype(np.float32),
                     np.zeros(4, np.float32), 1, 1, name=f"conv{i}")
            )
            layers.append(identity_bn(4, f"bn{i}", gamma=1.0, beta=0.0))
            cin = 4
        layers += [GlobalAvgPool(),
                   Linear(rng.standard_normal((3, 4)).astype(np.float32),
                          np.zeros(3, np.float32))]
        graph = ModelGraph(layers=layers, class_count=3, input_shape=(3, 6, 6))
        batch = rng.random((5, 3, 6, 6), dtype=np.float32)
        base_logits = forward(graph, batch)[0]
        view = amplify(graph, graph.bn_count, 2.0)
        amp_logits = forward(graph, batch, view.overrides)[0]
        base_norm = np.linalg.norm(base_logits, axis=1)
        amp_norm = np.linalg.norm(amp_logits, axis=1)
        assert np.all(amp_norm > base_norm)
        np.testing.assert_allclose(amp_norm, (2.0 ** graph.bn_count) * base_norm, rtol=1e-4)


class TestViewForward:
    def test_single_bn_view_matches_scripted_oracle(self):
        rng = np.random.default_rng(42)
        conv = Conv((rng.standard_normal((2, 3, 1, 1)) * 0.5).astype(np.float32),
                    np.zeros(2, np.float32))
        bn = identity_bn(2, "bn0", gamma=1.2, beta=0.3)
        head = Linear(rng.standard_normal((3, 2)).astype(np.float32),
                      (rng.standard_normal(3) * 0.1).astype(np.float32))
        graph = ModelGraph(layers=[conv, bn, GlobalAvgPool(), head],
                           class_count=3, input_shape=(3, 4, 4))
        batch = rng.random((3, 3, 4, 4), dtype=np.float32)
        omega = 1.7

        # scripted oracle: run conv, scale BN output by omega, push downstream
        from test_tensor import naive_conv2d, naive_linear

        conv_out = naive_conv2d(batch, conv.weight, conv.bias, 1, 0)
        bn_out = omega * batchnorm_infer(conv_out.astype(np.float32), bn.params)
        feats = bn_out.mean(axis=(2, 3))
        logits = naive_linear(feats, head.weight, head.bias)
        expect = np.exp(logits - logits.max(axis=1, keepdims=True))
        expect /= expect.sum(axis=1, keepdims=True)

        probs = view_forward(amplify(graph, 1, omega), batch)
        np.testing.assert_allclose(probs, expect, atol=1e-5)

    def test_batch_position_independence(self, small_model):
        rng = np.random.default_rng(43)
        batch = rng.random((32, 3, 6, 6), dtype=np.float32)
        view = amplify(small_model, 1, 1.5)
        alone = view_forward(view, batch[:1])
        together = view_forward(view, batch)
        np.testing.assert_array_equal(alone[0], together[0])

    def test_concurrent_views_agree_with_sequential(self, small_model, small_batch):
        from concurrent.futures import ThreadPoolExecutor

        views = [amplify(small_model, k, 1.5) for k in range(1, small_model.bn_count + 1)]
        sequential = [view_forward(v, small_batch) for v in views]
        with ThreadPoolExecutor(max_workers=4) as pool:
            parallel = list(pool.map(lambda v: view_forward(v, small_batch), views))
        for a, b in zip(sequential, parallel):
            np.testing.assert_array_equal(a, b)

    def test_base_graph_never_mutated(self, small_model, small_batch):
        before = forward(small_model, small_batch)[0].copy()
        for k in (1, small_model.bn_count):
            view_forward(amplify(small_model, k, 3.0), small_batch)
        np.testing.assert_array_equal(forward(small_model, small_batch)[0], before)
