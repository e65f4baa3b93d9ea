"""Model construction: module topology, determinism, tensor geometry."""

from __future__ import annotations

import pytest

pytest.importorskip("attnxtract.hooks")

import torch

from attnxtract import build_models
from attnxtract.model import Attention, TextEncoder
from attnxtract.profiles import PROFILES


class TestTopology:
    @pytest.mark.parametrize("name", sorted(PROFILES))
    def test_every_profile_path_resolves_to_a_module(self, name):
        profile = PROFILES[name]
        modules = dict(build_models(0).unet.named_modules())
        wanted = (
            *profile.cross_attention_layers,
            *profile.self_attention_layers,
            profile.dense_feature_layer,
        )
        for path in wanted:
            assert path in modules, path
            assert isinstance(modules[path], Attention)

    def test_attention_modules_expose_the_projection_layout(self):
        modules = dict(build_models(0).unet.named_modules())
        attn = modules[PROFILES["sd15"].cross_attention_layers[0]]
        assert isinstance(attn.to_q, torch.nn.Linear)
        assert attn.to_q.bias is None
        assert attn.to_k.bias is None
        assert attn.to_v.bias is None
        assert isinstance(attn.to_out, torch.nn.ModuleList)
        assert isinstance(attn.to_out[0], torch.nn.Linear)
        assert attn.heads == 8

    def test_attention_rejects_indivisible_head_count(self):
        with pytest.raises(ValueError, match="divisible"):
            Attention(dim=30, context_dim=None, heads=8)


class TestDeterminism:
    def test_same_seed_builds_identical_weights(self):
        a = build_models(3).unet.state_dict()
        b = build_models(3).unet.state_dict()
        assert a.keys() == b.keys()
        for key in a:
            assert torch.equal(a[key], b[key]), key

    def test_different_seeds_build_different_weights(self):
        a = build_models(3).unet.state_dict()
        b = build_models(4).unet.state_dict()
        assert any(not torch.equal(a[k], b[k]) for k in a)

    def test_models_are_frozen_in_eval_mode(self):
        models = build_models(0)
        for module in (models.unet, models.text_encoder, models.image_encoder):
            assert not module.training
            assert all(not p.requires_grad for p in module.parameters())


class TestGeometry:
    def test_image_encoder_downsamples_eight_times(self):
        models = build_models(0)
        latent = models.image_encoder(torch.zeros(1, 3, 128, 128))
        assert latent.shape == (1, 4, 16, 16)

    def test_unet_output_matches_latent_shape(self):
        models = build_models(0)
        latent = torch.randn(1, 4, 16, 16, generator=torch.Generator().manual_seed(0))
        text = models.text_encoder(["<sos>", "cat", "<eos>"])
        with torch.no_grad():
            out = models.unet(latent, 100, text)
        assert out.shape == latent.shape

    def test_text_encoder_row_per_word(self):
        models = build_models(0)
        out = models.text_encoder(["<sos>", "a", "cat", "<eos>", "<pad>"])
        assert out.shape == (1, 5, 64)


class TestTextEncoder:
    def test_same_words_encode_identically(self):
        torch.manual_seed(0)
        enc = TextEncoder()
        a = enc(["a", "cat"])
        b = enc(["a", "cat"])
        assert torch.equal(a, b)

    def test_word_identity_matters(self):
        torch.manual_seed(0)
        enc = TextEncoder()
        assert not torch.equal(enc(["cat"]), enc(["dog"]))

    def test_position_matters_for_repeated_words(self):
        torch.manual_seed(0)
        enc = TextEncoder()
        out = enc(["cat", "cat"])
        assert not torch.equal(out[0, 0], out[0, 1])
