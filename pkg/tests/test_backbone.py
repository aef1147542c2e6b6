import numpy as np
import pytest
import torch

from semagen.backbone import (Decoder, EncoderPath, SelfAttention2d,
                              TwinVQVAE)
from semagen.config import BackboneConfig


def small_cfg(**kw):
    defaults = dict(image_size=32, hidden_dim=32, residual_dim=16,
                    residual_blocks=1, downsample_factor=4,
                    attention_heads=1, attention_dim=8)
    defaults.update(kw)
    return BackboneConfig(**defaults)


class TestSelfAttention:
    def test_rows_sum_to_one(self):
        block = SelfAttention2d(8, 8, heads=2)
        weights = block.attention_weights(torch.randn(3, 8, 5, 7))
        assert torch.allclose(weights.sum(dim=-1),
                              torch.ones(3, 2, 35), atol=1e-6)

    def test_identity_at_initialization(self):
        block = SelfAttention2d(8, 8)
        x = torch.randn(2, 8, 6, 6)
        assert torch.equal(block(x), x)

    def test_output_shape_preserved(self):
        block = SelfAttention2d(16, 8, heads=4)
        with torch.no_grad():
            block.gamma.fill_(0.7)
        x = torch.randn(2, 16, 9, 4)
        assert block(x).shape == x.shape

    def test_oversized_grid_rejected(self):
        block = SelfAttention2d(4, 4)
        with pytest.raises(ValueError, match="64"):
            block(torch.randn(1, 4, 64, 64))

    def test_changes_output_once_scale_nonzero(self):
        block = SelfAttention2d(8, 8)
        with torch.no_grad():
            block.gamma.fill_(1.0)
        x = torch.randn(2, 8, 6, 6)
        assert not torch.equal(block(x), x)


class TestEncoderDecoder:
    def test_desk_shapes(self):
        model = TwinVQVAE(small_cfg(), num_codes=16, code_dim=64)
        pair = model.encode(torch.randn(2, 3, 32, 32))
        assert pair.path1.shape == (2, 64, 8, 8)
        assert pair.path2.shape == (2, 64, 8, 8)

    def test_reference_config_shapes(self):
        # 64x64 with latent size 16 gives two 16x16x64 grids
        cfg = small_cfg(image_size=64, downsample_factor=4)
        model = TwinVQVAE(cfg, num_codes=16, code_dim=64)
        pair = model.encode(torch.randn(1, 3, 64, 64))
        assert pair.path1.shape == (1, 64, 16, 16)

    def test_wrong_input_size_rejected(self):
        model = TwinVQVAE(small_cfg(), num_codes=8, code_dim=8)
        with pytest.raises(ValueError, match="32x32"):
            model.encode(torch.randn(1, 3, 16, 16))

    def test_duplicate_images_encode_identically(self):
        model = TwinVQVAE(small_cfg(), num_codes=8, code_dim=8)
        x = torch.randn(1, 3, 32, 32)
        batch = torch.cat([x, x], dim=0)
        pair = model.encode(batch)
        assert torch.equal(pair.path1[0], pair.path1[1])
        assert torch.equal(pair.path2[0], pair.path2[1])

    def test_decode_bounded_and_finite(self):
        model = TwinVQVAE(small_cfg(), num_codes=8, code_dim=8)
        out = model.decode(torch.zeros(2, 8, 8, 8), torch.zeros(2, 8, 8, 8))
        assert out.shape == (2, 3, 32, 32)
        assert torch.isfinite(out).all()
        assert out.min() >= -1.0 and out.max() <= 1.0

    def test_decode_shape_mismatch_rejected(self):
        model = TwinVQVAE(small_cfg(), num_codes=8, code_dim=8)
        with pytest.raises(ValueError, match="differ"):
            model.decode(torch.zeros(1, 8, 8, 8), torch.zeros(1, 8, 4, 4))

    def test_roundtrip_shape(self):
        for size, factor in ((8, 2), (32, 4)):
            cfg = small_cfg(image_size=size, downsample_factor=factor,
                            hidden_dim=16, attention_dim=4)
            model = TwinVQVAE(cfg, num_codes=8, code_dim=8)
            x = torch.randn(2, 3, size, size)
            assert model(x).reconstruction.shape == x.shape

    def test_attention_only_in_first_path(self):
        model = TwinVQVAE(small_cfg(), num_codes=8, code_dim=8)
        kinds1 = {type(m) for m in model.encoder1.modules()}
        kinds2 = {type(m) for m in model.encoder2.modules()}
        assert SelfAttention2d in kinds1
        assert SelfAttention2d not in kinds2

    def test_attention_placed_after_first_strided_conv(self):
        layers = list(EncoderPath(small_cfg(), 8, use_attention=True).net)
        conv_idx = next(i for i, m in enumerate(layers)
                        if isinstance(m, torch.nn.Conv2d) and m.stride == (2, 2))
        attn_idx = next(i for i, m in enumerate(layers)
                        if isinstance(m, SelfAttention2d))
        strided = [i for i, m in enumerate(layers)
                   if isinstance(m, torch.nn.Conv2d) and m.stride == (2, 2)]
        assert conv_idx < attn_idx < strided[1]

    def test_paths_have_disjoint_parameters(self):
        model = TwinVQVAE(small_cfg(), num_codes=8, code_dim=8)
        ids1 = {id(p) for p in model.encoder1.parameters()}
        ids2 = {id(p) for p in model.encoder2.parameters()}
        assert ids1.isdisjoint(ids2)

    def test_zeroing_one_path_changes_output(self):
        model = TwinVQVAE(small_cfg(), num_codes=8, code_dim=8)
        q1 = torch.randn(1, 8, 8, 8)
        q2 = torch.randn(1, 8, 8, 8)
        full = model.decode(q1, q2)
        ablated = model.decode(q1, torch.zeros_like(q2))
        assert not torch.equal(full, ablated)

    def test_decode_indices_matches_manual_lookup(self):
        model = TwinVQVAE(small_cfg(), num_codes=8, code_dim=8)
        idx = torch.randint(0, 8, (2, 8, 8))
        via_indices = model.decode_indices(idx, idx)
        q = model.codebook1.lookup(idx).movedim(-1, 1)
        q2 = model.codebook2.lookup(idx).movedim(-1, 1)
        assert torch.equal(via_indices, model.decode(q, q2))


class TestGradients:
    def test_analytic_matches_finite_differences(self):
        # Miniature double-precision autoencoder; quantization bypassed since
        # the assignment step is locally constant (the acceptance suite runs
        # the full sweep).
        torch.manual_seed(1)
        cfg = small_cfg(image_size=8, downsample_factor=2, hidden_dim=8,
                        residual_dim=8, attention_dim=4)
        model = TwinVQVAE(cfg, num_codes=4, code_dim=4).double()
        x = torch.randn(2, 3, 8, 8, dtype=torch.float64)

        def loss_fn():
            pair = model.encode(x)
            return ((model.decode(pair.path1, pair.path2) - x) ** 2).mean()

        loss = loss_fn()
        loss.backward()
        rng = np.random.default_rng(0)
        params = [p for p in model.parameters() if p.grad is not None]
        for p in (params[i] for i in rng.choice(len(params), 5, replace=False)):
            flat_idx = int(rng.integers(0, p.numel()))
            eps = 1e-6
            with torch.no_grad():
                orig = p.reshape(-1)[flat_idx].item()
                p.reshape(-1)[flat_idx] = orig + eps
                up = loss_fn().item()
                p.reshape(-1)[flat_idx] = orig - eps
                down = loss_fn().item()
                p.reshape(-1)[flat_idx] = orig
            fd = (up - down) / (2 * eps)
            analytic = p.grad.reshape(-1)[flat_idx].item()
            assert analytic == pytest.approx(fd, rel=1e-3, abs=1e-9)


class TestDecoderStandalone:
    def test_concatenates_channels(self):
        cfg = small_cfg()
        decoder = Decoder(cfg, code_dim=8)
        first_conv = next(m for m in decoder.net
                          if isinstance(m, torch.nn.Conv2d))
        assert first_conv.in_channels == 16
