#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Сквозные проверки командной строки на крошечных конфигурациях (только CPU)
"""

import json
import os

import numpy as np
import pytest

from config import (EXIT_OK, EXIT_PARTIAL_FAILURE, EXIT_RUNTIME_ERROR, EXIT_VALIDATION_ERROR,
                    LOCK_FILE_NAME, LOG_FILE_NAME, RESOLVED_CONFIG_NAME, SYNTH_MANIFEST_NAME)
from data.dataio import image_bit_depth, read_image, write_image
from main import main
from models.model_core import build_networks
from models.model_data import ModelConfig
from training.checkpoint import Checkpoint
from conftest import smooth_image

TINY_MODEL = {"residual_blocks": 1, "residual_filters": 16, "enhancer_width": 8, "discriminator_filters": 8}
TINY_TRAIN = {"batch_size": 2, "max_epochs": 1, "patience": 1, "crop_size": 32, "device": "cpu",
              "progress": False, "pretrain_epochs": 1}


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps({
        "model": TINY_MODEL,
        "loss": {"term_weights": [1.0, 1.0, 0.0, 1.0]},
        "rain": {"radius_range": [2.0, 6.0]},
        "train": TINY_TRAIN,
        "data": {"split": [0.34, 0.33, 0.33], "workers": 1},
    }), encoding="utf-8")
    return str(path)


@pytest.fixture
def clean_dir(tmp_path):
    root = tmp_path / "clean"
    for i in range(3):
        write_image(os.path.join(root, f"frame{i}.png"), smooth_image(32, 32, 3, i))
    return str(root)


def save_checkpoint(directory, **overrides):
    config = ModelConfig(**{**TINY_MODEL, **overrides})
    networks = build_networks(config, seed=1)
    Checkpoint(model_config=config,
               restoration_state=networks.component_state("generator", "enhancer"),
               discriminator_state=networks.component_state("discriminator")).save(str(directory))
    return str(directory)


class TestSynthesize:

    def test_corpus_and_provenance(self, tmp_path, clean_dir):
        out = tmp_path / "synth"
        assert main(["synthesize", "--input", clean_dir, "--out", str(out), "--seed", "5"]) == EXIT_OK

        with open(out / SYNTH_MANIFEST_NAME, encoding="utf-8") as f:
            assert len(f.readlines()) == 3
        assert len([f for f in os.listdir(out) if f.endswith("_mask.png")]) == 3
        with open(out / RESOLVED_CONFIG_NAME, encoding="utf-8") as f:
            resolved = json.load(f)
        assert resolved["train"]["seed"] == 5
        assert resolved["rain"]["seed"] == 5
        assert (out / LOG_FILE_NAME).exists()
        assert not (out / LOCK_FILE_NAME).exists()

    def test_rerun_is_bit_identical(self, tmp_path, clean_dir):
        first, second = tmp_path / "a", tmp_path / "b"
        assert main(["synthesize", "--input", clean_dir, "--out", str(first)]) == EXIT_OK
        assert main(["synthesize", "--input", clean_dir, "--out", str(second)]) == EXIT_OK
        for name in ("frame0_rain.png", "frame2_mask.png"):
            assert (first / name).read_bytes() == (second / name).read_bytes()

    def test_rerun_from_resolved_config(self, tmp_path, clean_dir):
        first, second = tmp_path / "first", tmp_path / "second"
        assert main(["synthesize", "--input", clean_dir, "--out", str(first), "--seed", "5"]) == EXIT_OK
        code = main(["synthesize", "--input", clean_dir, "--out", str(second),
                     "--config", str(first / RESOLVED_CONFIG_NAME)])
        assert code == EXIT_OK

        for name in ("frame0_rain.png", "frame1_mask.png", SYNTH_MANIFEST_NAME):
            assert (first / name).read_bytes() == (second / name).read_bytes()
        with open(first / RESOLVED_CONFIG_NAME, encoding="utf-8") as f:
            original = json.load(f)
        with open(second / RESOLVED_CONFIG_NAME, encoding="utf-8") as f:
            repeated = json.load(f)
        for section in ("model", "loss", "rain", "train", "data"):
            assert repeated[section] == original[section]

    def test_empty_input(self, tmp_path, caplog):
        (tmp_path / "empty").mkdir()
        code = main(["synthesize", "--input", str(tmp_path / "empty"), "--out", str(tmp_path / "out")])
        assert code != EXIT_OK
        assert "no images found" in caplog.text


class TestValidation:

    def test_every_invalid_field_listed(self, tmp_path, caplog, paired_dir):
        config = tmp_path / "bad.json"
        config.write_text(json.dumps({"train": {"batch_size": 0, "learning_rate": -1.0},
                                      "model": {"residual_blocks": -2}}), encoding="utf-8")
        code = main(["train", "--config", str(config), "--data", str(paired_dir), "--out", str(tmp_path / "out")])
        assert code == EXIT_VALIDATION_ERROR
        for name in ("batch_size", "learning_rate", "residual_blocks"):
            assert name in caplog.text

    def test_unknown_key(self, tmp_path, paired_dir):
        config = tmp_path / "typo.json"
        config.write_text(json.dumps({"train": {"epochs": 3}}), encoding="utf-8")
        code = main(["train", "--config", str(config), "--data", str(paired_dir), "--out", str(tmp_path / "out")])
        assert code == EXIT_VALIDATION_ERROR

    def test_missing_dataset_named(self, tmp_path, caplog, tiny_config):
        code = main(["train", "--config", tiny_config, "--out", str(tmp_path / "out")])
        assert code == EXIT_VALIDATION_ERROR
        assert "data.train" in caplog.text

    def test_locked_output(self, tmp_path, clean_dir):
        out = tmp_path / "busy"
        out.mkdir()
        (out / LOCK_FILE_NAME).write_text("1", encoding="utf-8")
        assert main(["synthesize", "--input", clean_dir, "--out", str(out)]) == EXIT_RUNTIME_ERROR
        assert (out / LOCK_FILE_NAME).exists()


class TestTrainingCommands:

    def test_train_writes_checkpoint_and_log(self, tmp_path, tiny_config, paired_dir):
        out = tmp_path / "run"
        code = main(["train", "--config", tiny_config, "--data", str(paired_dir), "--out", str(out)])
        assert code == EXIT_OK
        assert Checkpoint.load(str(out / "best")).best_epoch == 1
        assert (out / "epochs.jsonl").exists()
        assert (out / "test.json").exists()

    def test_variant_and_init(self, tmp_path, tiny_config, paired_dir):
        init = save_checkpoint(tmp_path / "init", use_enhancer=False, use_aggregation=False)
        out = tmp_path / "run"
        code = main(["train", "--config", tiny_config, "--data", str(paired_dir), "--out", str(out),
                     "--variant", "G", "--init", init])
        assert code == EXIT_OK
        config = ModelConfig.load(str(out / "best"))
        assert (config.use_enhancer, config.use_aggregation) == (False, False)

    def test_init_mismatch(self, tmp_path, tiny_config, paired_dir):
        init = save_checkpoint(tmp_path / "init", residual_blocks=2)
        code = main(["train", "--config", tiny_config, "--data", str(paired_dir), "--out", str(tmp_path / "run"),
                     "--init", init])
        assert code == EXIT_RUNTIME_ERROR

    def test_pretrain(self, tmp_path, tiny_config, clean_dir):
        out = tmp_path / "pre"
        assert main(["pretrain", "--config", tiny_config, "--clean-dir", clean_dir, "--out", str(out)]) == EXIT_OK
        assert Checkpoint.load(str(out / "best")).epoch == 1

    def test_ablate(self, tmp_path, tiny_config, paired_dir):
        out = tmp_path / "ablation"
        code = main(["ablate", "--config", tiny_config, "--data", str(paired_dir), "--out", str(out),
                     "--epochs", "1"])
        assert code == EXIT_OK
        table = (out / "ablation.txt").read_text(encoding="utf-8")
        assert all(name in table for name in ("Input", "G+E+A"))


class TestModelCommands:

    def test_infer_partial_failure(self, tmp_path, tiny_config):
        checkpoint = save_checkpoint(tmp_path / "ckpt")
        inputs = tmp_path / "inputs"
        write_image(os.path.join(inputs, "good.png"), smooth_image(40, 54, 3))
        write_image(os.path.join(inputs, "tiny.png"), smooth_image(8, 8, 3))
        (inputs / "broken.png").write_bytes(b"not an image")
        out = tmp_path / "restored"

        code = main(["infer", "--config", tiny_config, "--checkpoint", checkpoint, "--out", str(out),
                     "--suffix", "_clear", str(inputs)])

        assert code == EXIT_PARTIAL_FAILURE
        assert read_image(str(out / "good_clear.png")).shape == (40, 54, 3)
        assert not (out / "tiny_clear.png").exists()

    def test_infer_all_failed(self, tmp_path, tiny_config):
        checkpoint = save_checkpoint(tmp_path / "ckpt")
        broken = tmp_path / "broken.png"
        broken.write_bytes(b"garbage")
        code = main(["infer", "--config", tiny_config, "--checkpoint", checkpoint, "--out", str(tmp_path / "out"),
                     str(broken)])
        assert code == EXIT_RUNTIME_ERROR

    def test_infer_keeps_grayscale_bit_depth(self, tmp_path, tiny_config):
        checkpoint = save_checkpoint(tmp_path / "ckpt", input_channels=1)
        source = os.path.join(tmp_path, "frame.png")
        write_image(source, smooth_image(36, 54, 1), bit_depth=16)
        out = tmp_path / "out"
        assert main(["infer", "--config", tiny_config, "--checkpoint", checkpoint, "--out", str(out),
                     source]) == EXIT_OK
        restored = str(out / "frame_restored.png")
        assert image_bit_depth(restored) == 16
        assert read_image(restored).shape == (36, 54, 1)

    def test_evaluate(self, tmp_path, tiny_config):
        checkpoint = save_checkpoint(tmp_path / "ckpt")
        data = tmp_path / "pairs"
        for i in range(2):
            clean = smooth_image(32, 32, 3, i)
            write_image(os.path.join(data, f"{i}_rain.png"), np.clip(clean + 0.05, 0, 1))
            write_image(os.path.join(data, f"{i}_clean.png"), clean)
        out = tmp_path / "eval"

        assert main(["evaluate", "--config", tiny_config, "--checkpoint", checkpoint, "--data", str(data),
                     "--out", str(out)]) == EXIT_OK

        with open(out / "evaluation.csv", encoding="utf-8") as f:
            assert len(f.read().strip().splitlines()) == 3
        with open(out / "evaluation.json", encoding="utf-8") as f:
            assert json.load(f)["count"] == 2

    def test_benchmark_variants(self, tmp_path, tiny_config):
        out = tmp_path / "bench"
        code = main(["benchmark", "--config", tiny_config, "--out", str(out), "--device", "cpu",
                     "--variant", "G", "--variant", "G+E+A", "--runs", "3", "--warmup", "1",
                     "--height", "32", "--width", "48"])
        assert code == EXIT_OK
        with open(out / "latency.json", encoding="utf-8") as f:
            entries = json.load(f)
        assert [e["model"] for e in entries] == ["G", "G+E+A"]
        assert all(len(e["samples"]) == 3 for e in entries)

    def test_benchmark_variant_with_checkpoint_rejected(self, tmp_path, tiny_config, caplog):
        checkpoint = save_checkpoint(tmp_path / "ckpt")
        code = main(["benchmark", "--config", tiny_config, "--out", str(tmp_path / "bench"),
                     "--checkpoint", checkpoint, "--variant", "G", "--runs", "1", "--warmup", "0"])
        assert code == EXIT_VALIDATION_ERROR
        assert "--variant" in caplog.text
        assert not (tmp_path / "bench" / "latency.json").exists()

    def test_infer_keeps_colour_bit_depth(self, tmp_path, tiny_config):
        checkpoint = save_checkpoint(tmp_path / "ckpt")
        source = os.path.join(tmp_path, "frame.png")
        write_image(source, smooth_image(36, 54, 3), bit_depth=16)
        out = tmp_path / "out"
        assert main(["infer", "--config", tiny_config, "--checkpoint", checkpoint, "--out", str(out),
                     source]) == EXIT_OK
        restored = str(out / "frame_restored.png")
        assert image_bit_depth(restored) == 16
        assert read_image(restored).shape == (36, 54, 3)
