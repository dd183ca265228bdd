#!/usr/bin/env python3
# -*- coding: utf-8 -*-

import os

import pytest
import torch
import torch.nn as nn

from data.dataio import image_bit_depth, read_image, write_image
from models.model_core import (AggregationBlock, Enhancer, Generator, Networks, PatchDiscriminator,
                               ResidualBlock, aggregation_forward, build_networks, discriminator_forward,
                               enhancer_forward, generator_forward, init_weights, initialize_module,
                               receptive_field)
from models.model_data import ModelConfig, count_parameters, load_weights, save_weights
from models.model_manager import ModelManager
from utils.errors import ConfigurationError, ShapeError
from conftest import smooth_image


class TestInitWeights:

    def test_same_seed_is_bit_identical(self, tiny_model_config):
        first = init_weights(tiny_model_config, 1)
        second = init_weights(tiny_model_config, 1)
        assert first.keys() == second.keys()
        assert all(torch.equal(first[k], second[k]) for k in first)

    def test_different_seed_differs(self, tiny_model_config):
        first = init_weights(tiny_model_config, 1)
        second = init_weights(tiny_model_config, 2)
        assert any(not torch.equal(first[k], second[k]) for k in first)

    def test_gaussian_statistics(self):
        layer = initialize_module(nn.Linear(1000, 1000), seed=3)
        weights = layer.weight.detach().double()
        assert abs(weights.mean().item()) < 3 * 0.02 / 1000
        assert abs(weights.std().item() - 0.02) < 0.02 * 0.02
        assert torch.count_nonzero(layer.bias) == 0

    def test_invalid_config_rejected(self):
        with pytest.raises(ConfigurationError):
            init_weights(ModelConfig(encoder_filters=(0, 32)), 0)

    def test_three_encoder_stages_rejected(self):
        with pytest.raises(ConfigurationError):
            Networks(ModelConfig(encoder_filters=(16, 32, 64)))


class TestAggregation:

    def test_encoder_shape(self):
        block = AggregationBlock(16, 32, 0, 32, "down")
        out = aggregation_forward(block, torch.randn(1, 16, 128, 128), torch.randn(1, 32, 64, 64))
        assert out.shape == (1, 32, 64, 64)

    def test_decoder_shape_with_skip(self):
        block = AggregationBlock(32, 16, 16, 16, "up")
        out = aggregation_forward(block, torch.randn(1, 32, 64, 64), torch.randn(1, 16, 128, 128),
                                  torch.randn(1, 16, 128, 128))
        assert out.shape == (1, 16, 128, 128)

    def test_spatial_mismatch(self):
        block = AggregationBlock(16, 32, 0, 32, "down")
        with pytest.raises(ShapeError):
            block(torch.randn(1, 16, 100, 100), torch.randn(1, 32, 51, 51))


class TestGenerator:

    def test_shape_and_bottleneck(self):
        generator = build_networks(ModelConfig(), seed=0).generator
        x = torch.rand(1, 3, 256, 256) * 2 - 1
        with torch.no_grad():
            bottleneck, _ = generator.encode(x)
            out = generator(x)
        assert bottleneck.shape == (1, 64, 64, 64)
        assert out.shape == x.shape
        assert out.abs().max() <= 1.0

    def test_grayscale(self, tiny_model_config):
        config = ModelConfig(**{**tiny_model_config.to_dict(), "input_channels": 1})
        generator = build_networks(config, seed=0).generator
        with torch.no_grad():
            out = generator(torch.zeros(1, 1, 256, 256))
        assert out.shape == (1, 1, 256, 256)

    def test_zero_weights_give_zero_output(self, tiny_model_config):
        generator = Generator(tiny_model_config)
        with torch.no_grad():
            for param in generator.parameters():
                param.zero_()
            out = generator(torch.rand(1, 3, 64, 64))
        assert torch.count_nonzero(out) == 0

    def test_channel_mismatch(self, tiny_model_config):
        generator = Generator(tiny_model_config)
        with pytest.raises(ShapeError):
            generator(torch.rand(1, 1, 64, 64))

    def test_forward_pads_odd_sizes(self, tiny_model_config):
        generator = Generator(tiny_model_config)
        with torch.no_grad():
            out = generator_forward(generator, torch.rand(1, 3, 45, 37))
        assert out.shape == (1, 3, 45, 37)

    def test_residual_block_zero_is_identity(self):
        block = ResidualBlock(8)
        with torch.no_grad():
            for param in block.parameters():
                param.zero_()
            x = torch.randn(2, 8, 16, 16)
            assert torch.equal(block(x), x)

    def test_deterministic_forward(self, tiny_model_config):
        networks = build_networks(tiny_model_config, seed=5)
        x = torch.rand(1, 3, 64, 64)
        with torch.no_grad():
            assert torch.equal(networks.restore(x)[0], networks.restore(x)[0])


class TestEnhancer:

    def test_pyramid_and_output(self, tiny_model_config):
        enhancer = Enhancer(tiny_model_config)
        generated, original = torch.rand(1, 3, 256, 256), torch.rand(1, 3, 256, 256)
        with torch.no_grad():
            levels = Enhancer.pyramid(enhancer.features(generated, original))
            out = enhancer(generated, original)
        assert [tuple(level.shape[-2:]) for level in levels] == [(64, 64), (32, 32), (16, 16), (8, 8)]
        assert out.shape == generated.shape

    def test_shape_mismatch(self, tiny_model_config):
        enhancer = Enhancer(tiny_model_config)
        with pytest.raises(ShapeError):
            enhancer_forward(enhancer, torch.rand(1, 3, 64, 64), torch.rand(1, 3, 64, 96))

    def test_grayscale(self, tiny_model_config):
        config = ModelConfig(**{**tiny_model_config.to_dict(), "input_channels": 1})
        enhancer = Enhancer(config)
        with torch.no_grad():
            out = enhancer_forward(enhancer, torch.rand(1, 1, 40, 50), torch.rand(1, 1, 40, 50))
        assert out.shape == (1, 1, 40, 50)


class TestDiscriminator:

    def test_grid_and_receptive_field(self):
        discriminator = PatchDiscriminator(ModelConfig())
        with torch.no_grad():
            scores, features = discriminator_forward(discriminator, torch.rand(1, 3, 256, 256))
        assert scores.shape == (1, 1, 63, 63)
        assert len(features) == 3
        assert discriminator.receptive_field == 14
        assert receptive_field([4, 4, 2], [2, 2, 1]) == 14

    def test_input_below_receptive_field(self, tiny_model_config):
        discriminator = PatchDiscriminator(tiny_model_config)
        with pytest.raises(ShapeError):
            discriminator(torch.rand(1, 3, 8, 8))

    def test_receptive_field_mismatch(self):
        with pytest.raises(ConfigurationError):
            PatchDiscriminator(ModelConfig(patch_receptive_field=16))


class TestParameters:

    def test_empty(self):
        assert count_parameters({}) == 0

    def test_single_conv(self):
        assert count_parameters(nn.Conv2d(3, 16, 3)) == 448

    def test_ablation_monotone(self):
        def restoration_count(use_enhancer, use_aggregation):
            networks = Networks(ModelConfig(use_enhancer=use_enhancer, use_aggregation=use_aggregation))
            return sum(count_parameters(m) for m in networks.restoration_modules())

        assert restoration_count(False, False) < restoration_count(True, False) < restoration_count(True, True)

    def test_ablation_parameter_paths_are_subset(self):
        full = set(Networks(ModelConfig()).state_dict())
        reduced = set(Networks(ModelConfig(use_enhancer=False, use_aggregation=False)).state_dict())
        assert reduced < full

    def test_lighter_than_wide_baseline(self):
        ours = Networks(ModelConfig())
        baseline = Networks(ModelConfig(encoder_filters=(64, 128), residual_filters=256, use_enhancer=False))
        assert (sum(count_parameters(m) for m in ours.restoration_modules())
                < count_parameters(baseline.generator))


class TestWeightArchive:

    def test_save_load_forward_is_bit_exact(self, tmp_path, tiny_model_config):
        networks = build_networks(tiny_model_config, seed=4)
        save_weights(networks.state_dict(), str(tmp_path), "all")
        restored = Networks(tiny_model_config)
        restored.load_state_dict(load_weights(str(tmp_path), "all"))
        x = torch.rand(1, 3, 64, 64)
        with torch.no_grad():
            assert torch.equal(networks.restore(x)[0], restored.restore(x)[0])


class TestModelManager:

    def test_restore_keeps_size(self, tiny_model_config):
        manager = ModelManager(build_networks(tiny_model_config, seed=1))
        restored = manager(smooth_image(36, 50, 3))
        assert restored.shape == (36, 50, 3)
        assert restored.min() >= 0.0 and restored.max() <= 1.0

    def test_sixteen_bit_colour_output(self, tmp_path, tiny_model_config):
        manager = ModelManager(build_networks(tiny_model_config, seed=1))
        source = os.path.join(tmp_path, "deep.png")
        write_image(source, smooth_image(32, 40, 3), bit_depth=16)
        written, failures = manager.infer_files([source], str(tmp_path / "out"))
        assert not failures
        assert image_bit_depth(written[0]) == 16
        assert read_image(written[0]).shape == (32, 40, 3)

    def test_torch_failure_skips_only_that_file(self, tmp_path, tiny_model_config, monkeypatch):
        manager = ModelManager(build_networks(tiny_model_config, seed=1))
        large = os.path.join(tmp_path, "large.png")
        small = os.path.join(tmp_path, "small.png")
        write_image(large, smooth_image(64, 64, 3))
        write_image(small, smooth_image(32, 32, 3))
        original = ModelManager.restore

        def restore(self, image):
            if image.shape[0] == 64:
                raise RuntimeError("CUDA out of memory")
            return original(self, image)

        monkeypatch.setattr(ModelManager, "restore", restore)
        written, failures = manager.infer_files([large, small], str(tmp_path / "out"))

        assert written == [os.path.join(tmp_path, "out", "small_restored.png")]
        assert "out of memory" in failures[large]
