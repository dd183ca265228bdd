#!/usr/bin/env python3
# -*- coding: utf-8 -*-

import json
import os
from dataclasses import replace

import numpy as np
import pytest
import torch

from config import EPOCH_LOG_NAME
from data.dataio import ImagePair
from data.synth_rain import RainConfig
from evaluation.metrics import psnr
from models.losses import LossConfig
from models.model_core import Networks, build_networks
from models.model_data import ModelConfig
from models.model_manager import ModelManager
from training.checkpoint import Checkpoint, transfer_init
from training.trainer import (EarlyStopping, TrainConfig, Trainer, check_configs, collate_pairs,
                              pretrain_synthetic, simulate_early_stopping, train)
from utils.errors import ConfigurationError, ConfigValidationError, IncompatibleCheckpointError, ShapeError
from conftest import make_pairs, smooth_image


def snapshot(module):
    return {name: param.detach().clone() for name, param in module.named_parameters()}


def unchanged(module, before):
    return all(torch.equal(param, before[name]) for name, param in module.named_parameters())


def scripted_validator(values):
    def validator(networks, epoch):
        return {"psnr": values[epoch - 1], "ssim": 0.5}
    return validator


class TestEarlyStopping:

    def test_plateau_after_third_epoch(self):
        assert simulate_early_stopping([10, 11, 12] + [12] * 47, patience=10, max_epochs=200) == (13, 3)

    def test_patience_covers_all_epochs(self):
        assert simulate_early_stopping([5.0] * 8, patience=8, max_epochs=8) == (8, 1)

    def test_random_sequences(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            metrics = rng.integers(0, 6, size=30).tolist()
            patience = int(rng.integers(1, 8))
            stop, best = simulate_early_stopping(metrics, patience, max_epochs=30)
            assert best == int(np.argmax(metrics[:stop])) + 1
            assert stop - best == patience or stop == 30

    def test_nan_never_improves(self):
        stopper = EarlyStopping(patience=2)
        assert stopper.update(1.0, 1)
        assert not stopper.update(float("nan"), 2)
        assert stopper.should_stop(3)

    def test_infinite_metric_is_best(self):
        stopper = EarlyStopping(patience=2)
        stopper.update(30.0, 1)
        assert stopper.update(float("inf"), 2)
        assert not stopper.update(float("inf"), 3)


class TestConfigs:

    def test_all_problems_listed(self, tiny_model_config):
        with pytest.raises(ConfigValidationError) as info:
            check_configs(tiny_model_config, TrainConfig(batch_size=0, patience=300, crop_size=40),
                          LossConfig(n_fm=5))
        fields = {problem.split(":")[0] for problem in info.value.problems}
        assert {"batch_size", "patience", "crop_size", "n_fm"} <= fields

    def test_round_trip(self):
        config = TrainConfig(betas=[0.5, 0.9], seed=3)
        assert TrainConfig.from_dict(config.to_dict()) == config

    def test_unknown_field(self):
        with pytest.raises(ConfigurationError):
            TrainConfig.from_dict({"epochs": 5})


class TestSteps:

    def test_mismatched_batch(self, tiny_model_config, tiny_train_config, tiny_loss_config):
        trainer = Trainer(tiny_model_config, tiny_train_config, tiny_loss_config)
        before = snapshot(trainer.networks)
        pairs = make_pairs(1, size=32) + make_pairs(1, size=64)
        with pytest.raises(ShapeError):
            trainer.train_discriminator_step(pairs)
        assert unchanged(trainer.networks, before)

    def test_discriminator_step_leaves_restoration_untouched(self, tiny_model_config, tiny_train_config,
                                                              tiny_loss_config):
        trainer = Trainer(tiny_model_config, tiny_train_config, tiny_loss_config)
        generator, enhancer = snapshot(trainer.networks.generator), snapshot(trainer.networks.enhancer)
        discriminator = snapshot(trainer.networks.discriminator)
        trainer.train_discriminator_step(collate_pairs(make_pairs(2)))
        assert unchanged(trainer.networks.generator, generator)
        assert unchanged(trainer.networks.enhancer, enhancer)
        assert not unchanged(trainer.networks.discriminator, discriminator)

    def test_generator_step_leaves_discriminator_untouched(self, tiny_model_config, tiny_train_config,
                                                           tiny_loss_config):
        trainer = Trainer(tiny_model_config, tiny_train_config, tiny_loss_config)
        generator = snapshot(trainer.networks.generator)
        discriminator = snapshot(trainer.networks.discriminator)
        losses = trainer.train_generator_step(collate_pairs(make_pairs(2)))
        assert set(losses) == {"gan", "fm", "vgg", "fid", "total"}
        assert losses["vgg"] == 0.0
        assert unchanged(trainer.networks.discriminator, discriminator)
        assert not unchanged(trainer.networks.generator, generator)
        assert all(p.requires_grad for p in trainer.networks.discriminator.parameters())

    def test_discriminator_loss_decreases(self, tiny_model_config, tiny_train_config, tiny_loss_config):
        trainer = Trainer(tiny_model_config, tiny_train_config, tiny_loss_config)
        batch = collate_pairs(make_pairs(2))
        losses = [trainer.train_discriminator_step(batch) for _ in range(50)]
        assert np.mean(losses[-5:]) < np.mean(losses[:5])

    def test_fidelity_decreases_on_identity_pairs(self, tiny_model_config, tiny_train_config):
        loss_config = LossConfig(term_weights=(0.0, 0.0, 0.0, 1.0))
        trainer = Trainer(tiny_model_config, tiny_train_config, loss_config)
        clean = [smooth_image(32, 32, 3, i) for i in range(2)]
        batch = collate_pairs([ImagePair(c, c.copy(), f"id{i}") for i, c in enumerate(clean)])
        fidelity = [trainer.train_generator_step(batch)["fid"] for _ in range(100)]
        assert np.mean(fidelity[-10:]) < np.mean(fidelity[:10])

    def test_perceptual_term_with_extractor(self, tiny_model_config, tiny_train_config, random_extractor):
        trainer = Trainer(tiny_model_config, tiny_train_config, LossConfig(), extractor=random_extractor)
        losses = trainer.train_generator_step(collate_pairs(make_pairs(2)))
        assert losses["vgg"] > 0.0


class TestFit:

    def test_scripted_metric_stops_early(self, tmp_path, tiny_model_config, tiny_loss_config, tiny_pairs):
        config = TrainConfig(batch_size=2, max_epochs=6, patience=2, crop_size=32, device="cpu", progress=False)
        best = train(tiny_pairs, [], tiny_model_config, config, tiny_loss_config, output_dir=str(tmp_path),
                     validator=scripted_validator([10.0, 11.0, 11.0, 11.0, 11.0, 11.0]))

        assert best.best_epoch == 2
        assert best.best_metric == 11.0
        assert best.epoch == 2
        assert [record["epoch"] for record in best.history] == [1, 2, 3, 4]

        with open(os.path.join(tmp_path, EPOCH_LOG_NAME), encoding="utf-8") as f:
            records = [json.loads(line) for line in f]
        assert len(records) == 4
        assert {"epoch", "d", "gan", "fm", "vgg", "fid", "total", "val_psnr", "val_ssim", "wall_time"} <= set(records[0])

        assert Checkpoint.load(os.path.join(tmp_path, "best")).epoch == 2
        assert Checkpoint.load(os.path.join(tmp_path, "last")).epoch == 4

    def test_empty_split(self, tiny_model_config, tiny_train_config, tiny_loss_config):
        with pytest.raises(ConfigurationError):
            train([], make_pairs(1), tiny_model_config, tiny_train_config, tiny_loss_config)

    def test_resume_matches_uninterrupted(self, tmp_path, tiny_model_config, tiny_train_config,
                                          tiny_loss_config, tiny_pairs):
        val = make_pairs(2, seed=100)

        straight = train(tiny_pairs, val, tiny_model_config, tiny_train_config, tiny_loss_config,
                         output_dir=str(tmp_path / "straight"))

        interrupted = str(tmp_path / "interrupted")
        first_leg = replace(tiny_train_config, max_epochs=2, patience=2)
        train(tiny_pairs, val, tiny_model_config, first_leg, tiny_loss_config, output_dir=interrupted)
        resumed = train(tiny_pairs, val, tiny_model_config, tiny_train_config, tiny_loss_config,
                        output_dir=interrupted, resume_from=interrupted)

        assert resumed.best_metric == straight.best_metric
        assert resumed.best_epoch == straight.best_epoch
        assert [r["val_psnr"] for r in resumed.history] == [r["val_psnr"] for r in straight.history]
        final_straight = Checkpoint.load(str(tmp_path / "straight" / "last"))
        final_resumed = Checkpoint.load(os.path.join(interrupted, "last"))
        assert all(torch.equal(final_straight.restoration_state[k], final_resumed.restoration_state[k])
                   for k in final_straight.restoration_state)

    @pytest.mark.slow
    def test_overfits_fixed_batch(self):
        """200 чередующихся шагов D/G на одном батче из 8 пар поднимают PSNR минимум на 2 дБ"""
        pairs = make_pairs(8, size=32)
        batch = collate_pairs(pairs)
        trainer = Trainer(ModelConfig(), TrainConfig(crop_size=32, device="cpu", progress=False),
                          LossConfig(term_weights=(1.0, 1.0, 0.0, 1.0)))
        for _ in range(200):
            trainer.train_discriminator_step(batch)
            trainer.train_generator_step(batch)

        manager = ModelManager(trainer.networks)
        restored = np.mean([psnr(manager.restore(p.affected), p.clean) for p in pairs])
        baseline = np.mean([psnr(p.affected, p.clean) for p in pairs])
        assert restored >= baseline + 2.0


class TestPretrain:

    def test_deterministic(self, tmp_path, tiny_model_config, tiny_train_config, tiny_loss_config):
        clean = [smooth_image(32, 32, 3, i) for i in range(4)]
        rain = RainConfig(radius_range=(2.0, 6.0), seed=5)

        first = pretrain_synthetic(clean, rain, tiny_model_config, tiny_train_config, tiny_loss_config)
        second = pretrain_synthetic(clean, rain, tiny_model_config, tiny_train_config, tiny_loss_config)

        assert len(first.history) == tiny_train_config.pretrain_epochs
        assert first.best_metric == second.best_metric
        assert [r["val_psnr"] for r in first.history] == [r["val_psnr"] for r in second.history]

    def test_empty_corpus(self, tiny_model_config, tiny_train_config, tiny_loss_config):
        with pytest.raises(ConfigurationError):
            pretrain_synthetic([], RainConfig(), tiny_model_config, tiny_train_config, tiny_loss_config)


class TestTransferInit:

    def make_checkpoint(self, config):
        networks = build_networks(config, seed=7)
        return networks, Checkpoint(model_config=config,
                                    restoration_state=networks.component_state("generator", "enhancer"),
                                    discriminator_state=networks.component_state("discriminator"))

    def test_round_trip_is_bit_exact(self, tmp_path, tiny_model_config):
        source, checkpoint = self.make_checkpoint(tiny_model_config)
        checkpoint.save(str(tmp_path))
        weights = transfer_init(Checkpoint.load(str(tmp_path)), tiny_model_config)

        target = Networks(tiny_model_config)
        target.load_state_dict(weights)
        x = torch.rand(1, 3, 64, 64) * 2 - 1
        with torch.no_grad():
            assert torch.equal(source.restore(x)[0], target.restore(x)[0])
            assert torch.equal(source.discriminator(x)[0], target.discriminator(x)[0])

    def test_residual_block_mismatch(self, tiny_model_config):
        _, checkpoint = self.make_checkpoint(replace(tiny_model_config, residual_blocks=9))
        with pytest.raises(IncompatibleCheckpointError) as info:
            transfer_init(checkpoint, replace(tiny_model_config, residual_blocks=8))
        assert info.value.fields == ["residual_blocks"]

    def test_channel_mode_mismatch(self, tiny_model_config):
        _, checkpoint = self.make_checkpoint(tiny_model_config)
        with pytest.raises(IncompatibleCheckpointError):
            transfer_init(checkpoint, replace(tiny_model_config, input_channels=1))

    def test_trainer_starts_from_transferred_weights(self, tiny_model_config, tiny_train_config,
                                                     tiny_loss_config):
        source, checkpoint = self.make_checkpoint(tiny_model_config)
        trainer = Trainer(tiny_model_config, tiny_train_config, tiny_loss_config,
                          init=transfer_init(checkpoint, tiny_model_config))
        assert unchanged(trainer.networks, snapshot(source))
