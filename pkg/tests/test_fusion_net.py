import datetime as dt

import numpy as np
import pytest
import torch
from _models import mini_fusion, mini_inputs, mini_model, mini_temporal, mini_texture
from hypothesis import given, settings
from hypothesis import strategies as st

from ttfusion.data_model import AcquisitionRecord, PatchMetadata, SentinelSeries, default_nomenclature
from ttfusion.dataset_io import crop_superpatch
from ttfusion.fusion_net import (
    UTAE,
    UTT,
    ConfigurationError,
    EmptyTemporalAxisError,
    FusionCollapsed,
    FusionConfig,
    FusionCropped,
    FusionModule,
    FusionShapeError,
    MetadataError,
    TemporalBranchConfig,
    TextureBranchConfig,
    TextureUNet,
    build_fusion_masks,
    crop_interp_sat_logits,
    encode_metadata,
    load_checkpoint,
    save_checkpoint,
)
from ttfusion.fusion_net.model import normalize_aerial, normalize_sat


def n_params(m):
    return sum(p.numel() for p in m.parameters())


def bilinear_oracle(img, out_h, out_w):
    """Half-pixel-centre bilinear resampling with edge clamping, written out explicitly."""
    in_h, in_w = img.shape
    out = np.zeros((out_h, out_w))
    for i in range(out_h):
        y = min(max((i + 0.5) * in_h / out_h - 0.5, 0.0), in_h - 1)
        y0 = int(np.floor(y))
        y1 = min(y0 + 1, in_h - 1)
        for j in range(out_w):
            x = min(max((j + 0.5) * in_w / out_w - 0.5, 0.0), in_w - 1)
            x0 = int(np.floor(x))
            x1 = min(x0 + 1, in_w - 1)
            fy, fx = y - y0, x - x0
            out[i, j] = ((1 - fy) * (1 - fx) * img[y0, x0] + (1 - fy) * fx * img[y0, x1]
                         + fy * (1 - fx) * img[y1, x0] + fy * fx * img[y1, x1])
    return out


class TestConfigs:
    def test_default_stage_specs(self):
        specs = TextureBranchConfig().stage_specs(512, 512)
        assert [(s.channels, s.height) for s in specs] == [(64, 256), (64, 128), (128, 64), (256, 32), (512, 16)]

    def test_specs_halve(self):
        specs = mini_texture((8, 16, 16, 16)).stage_specs(64, 64)
        assert all(b.height * 2 == a.height for a, b in zip(specs, specs[1:]))

    def test_invalid(self):
        with pytest.raises(ConfigurationError):
            TextureBranchConfig(encoder_stage_channels=[8], backbone="small")
        with pytest.raises(ConfigurationError):
            TextureBranchConfig(n_classes=12)
        with pytest.raises(ConfigurationError):
            TemporalBranchConfig(encoder_widths=[], decoder_widths=[])
        with pytest.raises(ConfigurationError):
            FusionConfig(use_cropped=False, use_collapsed=False)
        with pytest.raises(ConfigurationError):
            FusionConfig(sat_superpatch_size=8, footprint_px=10)

    def test_embedding_channels(self):
        assert TemporalBranchConfig().embedding_channels == 32


class TestTexture:
    def test_full_size_shapes_small(self):
        net = TextureUNet(TextureBranchConfig(backbone="small")).eval()
        with torch.no_grad():
            logits, feats = net(torch.rand(1, 5, 512, 512))
        assert logits.shape == (1, 13, 512, 512)
        assert [f.shape[1] for f in feats] == [16, 32, 48, 64]

    def test_full_size_shapes_default(self):
        net = TextureUNet(TextureBranchConfig()).eval()
        with torch.no_grad():
            logits, feats = net(torch.rand(1, 5, 512, 512))
        assert logits.shape == (1, 13, 512, 512)
        specs = TextureBranchConfig().stage_specs(512, 512)
        assert [tuple(f.shape[1:]) for f in feats] == [(s.channels, s.height, s.width) for s in specs]

    def test_parameter_count_anchor(self):
        assert abs(n_params(TextureUNet(TextureBranchConfig())) - 24.4e6) <= 0.05 * 24.4e6

    def test_zero_masks_identity_double(self):
        cfg = mini_texture((8, 16, 16))
        net = TextureUNet(cfg).double().eval()
        x = torch.rand(2, 5, 32, 32, dtype=torch.float64)
        zeros = [torch.zeros(2, s.channels, s.height, s.width, dtype=torch.float64) for s in cfg.stage_specs(32, 32)]
        with torch.no_grad():
            assert torch.equal(net(x)[0], net(x, zeros)[0])

    def test_nonzero_masks_change_logits(self):
        cfg = mini_texture((8, 16, 16))
        net = TextureUNet(cfg).eval()
        x = torch.rand(1, 5, 32, 32)
        masks = [torch.randn(1, s.channels, s.height, s.width) for s in cfg.stage_specs(32, 32)]
        with torch.no_grad():
            assert not torch.equal(net(x)[0], net(x, masks)[0])

    def test_mask_shape_error_names_stage(self):
        cfg = mini_texture((8, 16, 16))
        net = TextureUNet(cfg)
        masks = [torch.zeros(1, s.channels, s.height, s.width) for s in cfg.stage_specs(32, 32)]
        masks[1] = torch.zeros(1, 16, 3, 3)
        with pytest.raises(FusionShapeError, match="stage 1"):
            net(torch.rand(1, 5, 32, 32), masks)


class TestTemporal:
    def test_shapes_default(self):
        net = UTAE(TemporalBranchConfig()).eval()
        x = torch.rand(1, 20, 10, 40, 40)
        pos = torch.arange(1, 21, dtype=torch.float32)[None] * 15
        with torch.no_grad():
            logits, emb = net(x, pos)
        assert logits.shape == (1, 13, 40, 40) and emb.shape == (1, 32, 40, 40)

    def test_single_date(self):
        net = UTAE(mini_temporal()).eval()
        with torch.no_grad():
            logits, emb = net(torch.rand(1, 1, 10, 8, 8), torch.tensor([[100.0]]))
        assert logits.shape == (1, 13, 8, 8) and torch.isfinite(logits).all()

    def test_empty_axis(self):
        net = UTAE(mini_temporal())
        with pytest.raises(EmptyTemporalAxisError):
            net(torch.rand(1, 0, 10, 8, 8), torch.zeros(1, 0))

    @pytest.mark.parametrize("t", [1, 7, 114])
    def test_any_length(self, t):
        net = UTAE(mini_temporal()).eval()
        with torch.no_grad():
            logits, _ = net(torch.rand(1, t, 10, 8, 8), torch.linspace(1, 365, t)[None])
        assert logits.shape == (1, 13, 8, 8)

    def test_permutation_invariance(self):
        torch.manual_seed(0)
        net = UTAE(mini_temporal((8, 8, 16), heads=4)).eval()
        x = torch.rand(2, 9, 10, 16, 16)
        pos = torch.randint(1, 366, (2, 9)).float()
        perm = torch.randperm(9)
        with torch.no_grad():
            a, ea = net(x, pos)
            b, eb = net(x[:, perm], pos[:, perm])
        torch.testing.assert_close(a, b, atol=1e-5, rtol=1e-5)
        torch.testing.assert_close(ea, eb, atol=1e-5, rtol=1e-5)

    def test_padding_is_ignored(self):
        torch.manual_seed(1)
        net = UTAE(mini_temporal()).eval()
        x = torch.rand(1, 5, 10, 8, 8)
        pos = torch.tensor([[10.0, 50, 90, 130, 170]])
        xp = torch.cat([x, torch.zeros(1, 3, 10, 8, 8)], dim=1)
        pp = torch.cat([pos, torch.zeros(1, 3)], dim=1)
        mask = torch.tensor([[False] * 5 + [True] * 3])
        with torch.no_grad():
            torch.testing.assert_close(net(x, pos)[0], net(xp, pp, mask)[0], atol=1e-5, rtol=1e-5)


class TestFusionModules:
    def test_cropped_constant_preserved(self):
        mod = FusionCropped(4, 6, footprint_px=4).double()
        emb = torch.full((1, 4, 8, 8), 0.7, dtype=torch.float64)
        out = mod(emb, [(4, 4)], (16, 16))
        assert out.shape == (1, 6, 16, 16)
        flat = out.flatten(2)
        torch.testing.assert_close(flat, flat[..., :1].expand_as(flat), rtol=0, atol=1e-12)

    def test_bilinear_grid_against_oracle(self):
        img = np.array([[1.0, 2.0], [3.0, 5.0]])
        t = torch.tensor(img)[None, None].repeat(1, 13, 1, 1)
        out = crop_interp_sat_logits(t, [(1, 1)], footprint_px=2, target=(4, 4))
        np.testing.assert_allclose(out[0, 0].numpy(), bilinear_oracle(img, 4, 4), rtol=0, atol=1e-12)

    def test_crop_interp_constant_and_shape(self):
        t = torch.full((1, 13, 40, 40), 2.5)
        out = crop_interp_sat_logits(t, [(20, 20)])
        assert out.shape == (1, 13, 512, 512) and (out == 2.5).all()

    def test_crop_window_matches_superpatch_crop(self):
        rng = np.random.default_rng(0)
        data = rng.integers(1, 9999, (1, 10, 40, 40)).astype(np.uint16)
        rec = [AcquisitionRecord("S2A", dt.date(2021, 5, 1), dt.time(10), 8, "31TCJ")]
        series = SentinelSeries("D001_2021-Z1_AA", data, np.zeros((1, 2, 40, 40), np.uint8), rec)
        centroid = (3, 37)
        ref = crop_superpatch(series, centroid, 10).data[0].astype(np.float64)
        t = torch.tensor(data[0].astype(np.float64))[None]
        out = crop_interp_sat_logits(t, [centroid], footprint_px=10, target=(10, 10))
        np.testing.assert_array_equal(out[0].numpy(), ref)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31))
    def test_collapsed_spatially_constant(self, seed):
        torch.manual_seed(seed % 2**31)
        mod = FusionCollapsed(4, 8, dropout=0.0)
        out = mod(torch.randn(2, 4, 8, 8), (5, 7))
        assert (out == out[..., :1, :1]).all()

    def test_collapsed_depends_only_on_mean(self):
        mod = FusionCollapsed(4, 8).eval()
        a = torch.randn(1, 4, 8, 8)
        b = a.flip(-1).roll(3, dims=-2)
        assert torch.equal(mod(a, (4, 4)), mod(b, (4, 4)))

    def test_collapsed_zero_embedding_mlp_oracle(self):
        mod = FusionCollapsed(3, 5, dropout=0.0).double().eval()
        lin = [m for m in mod.mlp if isinstance(m, torch.nn.Linear)]
        h = np.zeros(3)
        for i, layer in enumerate(lin):
            h = layer.weight.detach().numpy() @ h + layer.bias.detach().numpy()
            if i < 2:
                h = np.maximum(h, 0)
        out = mod(torch.zeros(1, 3, 6, 6, dtype=torch.float64), (2, 2))
        np.testing.assert_allclose(out[0, :, 0, 0].detach().numpy(), h, rtol=1e-12)

    def _stages(self, n=5):
        return TextureBranchConfig().stage_specs(512, 512)[:n]

    def test_both_enabled_is_sum(self):
        torch.manual_seed(0)
        stages = mini_texture((8, 16)).stage_specs(16, 16)
        mod = FusionModule(4, [8, 16], mini_fusion()).eval()
        emb = torch.randn(1, 4, 8, 8)
        masks = build_fusion_masks(mod, emb, [(4, 4)], stages)
        for i, s in enumerate(stages):
            expected = mod.cropped[i](emb, [(4, 4)], (s.height, s.width)) + mod.collapsed[i](emb, (s.height, s.width))
            assert torch.equal(masks[i], expected)

    def test_collapsed_only_constant(self):
        stages = mini_texture((8, 16)).stage_specs(16, 16)
        mod = FusionModule(4, [8, 16], mini_fusion(use_cropped=False))
        for m in mod(torch.randn(1, 4, 8, 8), [(4, 4)], stages):
            assert (m == m[..., :1, :1]).all()

    def test_five_stages(self):
        stages = self._stages()
        mod = FusionModule(4, [s.channels for s in stages], FusionConfig(footprint_px=4, sat_superpatch_size=8))
        masks = mod(torch.randn(1, 4, 8, 8), [(4, 4)], stages)
        assert [tuple(m.shape[1:]) for m in masks] == [(s.channels, s.height, s.width) for s in stages]

    def test_footprint_too_large(self):
        mod = FusionCropped(4, 4, footprint_px=10)
        with pytest.raises(ConfigurationError):
            mod(torch.randn(1, 4, 8, 8), [(4, 4)], (4, 4))


class TestMetadata:
    def _meta(self, x, y):
        return PatchMetadata(dt.date(2021, 5, 1), dt.time(11), x, y, 100.0, "cam")

    def test_length(self):
        assert encode_metadata(self._meta(800000.0, 6500000.0)).shape == (32,)

    def test_deterministic(self):
        a = encode_metadata(self._meta(812345.6, 6543210.9))
        assert np.array_equal(a, encode_metadata(self._meta(812345.6, 6543210.9)))

    def test_distant_patches_differ(self):
        a = encode_metadata(self._meta(800000.0, 6500000.0))
        b = encode_metadata(self._meta(900000.0, 6500000.0))
        assert np.abs(a - b).max() > 1e-3

    def test_sinusoid_formula(self):
        v = encode_metadata(self._meta(1234.0, 0.0))
        assert v[0] == pytest.approx(np.sin(1234.0)) and v[1] == pytest.approx(np.cos(1234.0))
        assert v[2] == pytest.approx(np.sin(1234.0 / 10000 ** (2 / 16)))
        assert v[16] == pytest.approx(0.0) and v[17] == pytest.approx(1.0)

    def test_missing(self):
        with pytest.raises(MetadataError):
            encode_metadata(None)


class TestUTT:
    def test_forward_shapes(self):
        model = mini_model().eval()
        aerial, sat, pos, cents = mini_inputs()
        with torch.no_grad():
            logits, sat_logits = model(aerial, sat, pos, None, cents)
        assert logits.shape == (2, 13, 16, 16) and sat_logits.shape == (2, 13, 8, 8)

    def test_zero_fusion_reproduces_unfused(self):
        model = mini_model(dtype=torch.float64).eval()
        for p in model.fusion.parameters():
            torch.nn.init.zeros_(p)
        aerial, sat, pos, cents = mini_inputs(dtype=torch.float64)
        with torch.no_grad():
            assert torch.equal(model(aerial, sat, pos, None, cents)[0], model(aerial)[0])

    def test_unet_only(self):
        model = UTT(mini_texture()).eval()
        assert not model.has_temporal
        logits, sat_logits = model(torch.rand(1, 5, 16, 16))
        assert sat_logits is None and logits.shape == (1, 13, 16, 16)

    def test_metadata_injection_changes_output(self):
        model = UTT(mini_texture(), use_metadata=True).eval()
        x = torch.rand(1, 5, 16, 16)
        enc = torch.tensor(encode_metadata(PatchMetadata(dt.date(2021, 1, 1), dt.time(9), 8e5, 6.5e6, 1.0, "c")),
                           dtype=torch.float32)[None]
        with torch.no_grad():
            assert not torch.equal(model(x)[0], model(x, metadata=enc)[0])

    def test_checkpoint_round_trip(self, tmp_path):
        torch.manual_seed(3)
        model = mini_model().eval()
        aerial, sat, pos, cents = mini_inputs()
        save_checkpoint(tmp_path / "m.ckpt", model, default_nomenclature(), 2022)
        loaded, info = load_checkpoint(tmp_path / "m.ckpt")
        assert info["seed"] == 2022 and info["nomenclature"] == default_nomenclature()
        with torch.no_grad():
            assert torch.equal(model(aerial, sat, pos, None, cents)[0], loaded(aerial, sat, pos, None, cents)[0])

    def test_normalisation(self):
        assert normalize_aerial(np.array([255], np.uint8))[0] == 1.0
        assert normalize_sat(np.array([10000], np.uint16))[0] == 1.0
