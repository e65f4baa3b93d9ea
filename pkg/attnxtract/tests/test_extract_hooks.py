"""Capture hooks: grid inference, shapes, and recomputation oracles.

The load-bearing checks recompute what the hooks claim to have captured
from the module weights directly: summing per-head outputs (plus the
projection bias) must reproduce each cross module's actual output, and
a float64 numpy re-derivation of one self layer must match its stored
head-averaged map.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

pytest.importorskip("attnxtract.hooks")

import torch

from attnxtract import CaptureSession
from attnxtract.errors import CaptureError
from attnxtract.hooks import infer_grid


class TestInferGrid:
    def test_full_latent_grid(self):
        assert infer_grid(16 * 16, 16, 16, "x") == (16, 16)

    def test_halved_grids(self):
        assert infer_grid(64, 16, 16, "x") == (8, 8)
        assert infer_grid(16, 16, 16, "x") == (4, 4)
        assert infer_grid(4, 16, 16, "x") == (2, 2)

    def test_non_square_latent(self):
        assert infer_grid(32, 16, 8, "x") == (8, 4)

    def test_collapses_to_single_pixel(self):
        assert infer_grid(1, 8, 8, "x") == (1, 1)

    def test_unmatchable_length_is_a_capture_error(self):
        with pytest.raises(CaptureError, match="16x16"):
            infer_grid(65, 16, 16, "offending.layer")


class TestCaptureCompleteness:
    def test_cross_captures_follow_profile_order(self, capture_run):
        names = [c.name for c in capture_run.captures.cross]
        assert names == list(capture_run.profile.cross_attention_layers)

    def test_self_captures_follow_profile_order(self, capture_run):
        names = [s.name for s in capture_run.captures.selfs]
        assert names == list(capture_run.profile.self_attention_layers)

    def test_dense_feature_from_designated_layer(self, capture_run):
        assert (
            capture_run.captures.feature.name
            == capture_run.profile.dense_feature_layer
        )

    def test_grids_are_halvings_of_the_latent(self, capture_run):
        for cap in capture_run.captures.cross:
            assert (cap.height, cap.width) == infer_grid(
                cap.height * cap.width,
                capture_run.latent_h,
                capture_run.latent_w,
                cap.name,
            )


class TestCrossCaptures:
    def test_shapes_and_dtype(self, capture_run):
        for cap in capture_run.captures.cross:
            pixels = cap.height * cap.width
            heads = cap.attn.shape[0]
            assert cap.attn.shape == (heads, pixels, cap.token_count)
            assert cap.head_out.shape == (heads, pixels, cap.head_dim)
            assert cap.attn.dtype == np.float32
            assert cap.head_out.dtype == np.float32

    def test_token_count_matches_text_sequence(self, capture_run):
        for cap in capture_run.captures.cross:
            assert cap.token_count == capture_run.text.shape[1]

    def test_attention_is_post_softmax(self, capture_run):
        for cap in capture_run.captures.cross:
            assert (cap.attn >= 0).all()
            sums = cap.attn.astype(np.float64).sum(axis=-1)
            assert np.abs(sums - 1.0).max() < 1e-5

    def test_head_outputs_recompose_module_output(self, capture_run):
        modules = dict(capture_run.models.unet.named_modules())
        for cap in capture_run.captures.cross:
            bias = modules[cap.name].to_out[0].bias.numpy()
            recomposed = cap.head_out.astype(np.float64).sum(axis=0) + bias
            deviation = np.abs(recomposed - cap.output).max()
            scale = max(float(np.abs(cap.output).max()), 1e-12)
            assert deviation / scale < 1e-5, cap.name

    def test_head_dim_is_the_module_output_width(self, capture_run):
        modules = dict(capture_run.models.unet.named_modules())
        for cap in capture_run.captures.cross:
            assert cap.head_dim == modules[cap.name].to_out[0].weight.shape[0]


class TestSelfCaptures:
    def test_maps_are_square_and_stochastic(self, capture_run):
        for cap in capture_run.captures.selfs:
            pixels = cap.height * cap.width
            assert cap.attn_mean.shape == (pixels, pixels)
            assert (cap.attn_mean >= 0).all()
            sums = cap.attn_mean.astype(np.float64).sum(axis=-1)
            assert np.abs(sums - 1.0).max() < 1e-5

    def test_map_is_the_head_average(self, capture_run):
        """Re-derive one self map in float64 straight from the weights."""
        name = capture_run.profile.self_attention_layers[0]
        module = dict(capture_run.models.unet.named_modules())[name]
        grabbed = {}

        def grab(mod, args, kwargs, output):
            grabbed["hidden"] = args[0].detach().numpy().astype(np.float64)

        handle = module.register_forward_hook(grab, with_kwargs=True)
        try:
            capture_run.forward()
        finally:
            handle.remove()

        hidden = grabbed["hidden"][0]  # (P, dim)
        heads = module.heads
        dh = hidden.shape[1] // heads
        weight_q = module.to_q.weight.numpy().astype(np.float64)
        weight_k = module.to_k.weight.numpy().astype(np.float64)
        q = hidden @ weight_q.T
        k = hidden @ weight_k.T
        maps = []
        for n in range(heads):
            qn = q[:, n * dh:(n + 1) * dh]
            kn = k[:, n * dh:(n + 1) * dh]
            logits = qn @ kn.T / np.sqrt(dh)
            exp = np.exp(logits - logits.max(axis=1, keepdims=True))
            maps.append(exp / exp.sum(axis=1, keepdims=True))
        expected = np.mean(maps, axis=0)

        stored = capture_run.captures.selfs[0].attn_mean
        assert np.abs(stored - expected).max() < 1e-5


class TestDenseFeature:
    def test_shape_matches_record(self, capture_run):
        feature = capture_run.captures.feature
        assert feature.values.shape == (
            feature.height * feature.width,
            feature.channels,
        )
        assert feature.values.dtype == np.float32

    def test_values_are_the_module_input(self, capture_run):
        module = dict(capture_run.models.unet.named_modules())[
            capture_run.profile.dense_feature_layer
        ]
        grabbed = {}

        def grab(mod, args, kwargs, output):
            grabbed["hidden"] = args[0].detach().numpy()

        handle = module.register_forward_hook(grab, with_kwargs=True)
        try:
            capture_run.forward()
        finally:
            handle.remove()
        np.testing.assert_array_equal(
            capture_run.captures.feature.values, grabbed["hidden"][0]
        )


class TestCaptureErrors:
    def test_profile_naming_absent_module_fails_fast(self, capture_run):
        bad = replace(
            capture_run.profile,
            cross_attention_layers=("nowhere.attn2",),
            self_attention_layers=(capture_run.profile.self_attention_layers[0],),
        )
        with pytest.raises(CaptureError, match="nowhere.attn2"):
            CaptureSession(capture_run.models.unet, bad, 16, 16)

    def test_cross_module_without_encoder_states(self, capture_run):
        name = capture_run.profile.cross_attention_layers[0]
        module = dict(capture_run.models.unet.named_modules())[name]
        with CaptureSession(
            capture_run.models.unet, capture_run.profile, 16, 16
        ):
            with pytest.raises(CaptureError, match="encoder states"):
                module(torch.randn(1, 64, module.to_q.in_features))

    def test_batched_input_is_rejected(self, capture_run):
        name = capture_run.profile.self_attention_layers[0]
        module = dict(capture_run.models.unet.named_modules())[name]
        with CaptureSession(
            capture_run.models.unet, capture_run.profile, 16, 16
        ):
            with pytest.raises(CaptureError, match="seq"):
                module(torch.randn(2, 64, module.to_q.in_features))

    def test_ungriddable_sequence_is_rejected(self, capture_run):
        name = capture_run.profile.self_attention_layers[0]
        module = dict(capture_run.models.unet.named_modules())[name]
        with CaptureSession(
            capture_run.models.unet, capture_run.profile, 16, 16
        ):
            with pytest.raises(CaptureError, match="halving"):
                module(torch.randn(1, 5, module.to_q.in_features))

    def test_module_running_twice_is_rejected(self, capture_run):
        name = capture_run.profile.self_attention_layers[0]
        module = dict(capture_run.models.unet.named_modules())[name]
        with CaptureSession(
            capture_run.models.unet, capture_run.profile, 16, 16
        ):
            module(torch.randn(1, 64, module.to_q.in_features))
            with pytest.raises(CaptureError, match="twice"):
                module(torch.randn(1, 64, module.to_q.in_features))

    def test_feature_capture_twice_is_rejected(self, capture_run):
        spare = capture_run.profile.self_attention_layers[1]
        bad = replace(
            capture_run.profile,
            cross_attention_layers=(capture_run.profile.cross_attention_layers[0],),
            self_attention_layers=(capture_run.profile.self_attention_layers[0],),
            dense_feature_layer=spare,
        )
        module = dict(capture_run.models.unet.named_modules())[spare]
        with CaptureSession(capture_run.models.unet, bad, 16, 16):
            module(torch.randn(1, 64, module.to_q.in_features))
            with pytest.raises(CaptureError, match="twice"):
                module(torch.randn(1, 64, module.to_q.in_features))

    def test_result_without_forward_names_missing_layers(self, capture_run):
        with CaptureSession(
            capture_run.models.unet, capture_run.profile, 16, 16
        ) as session:
            with pytest.raises(CaptureError, match="no activations"):
                session.result()
