#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Общие фикстуры: маленькие конфигурации, гладкие изображения, парные датасеты на диске
"""

import os

import numpy as np
import pytest
import torch

from data.dataio import ImagePair, write_image
from models.losses import LossConfig, PerceptualExtractor
from models.model_data import ModelConfig
from training.trainer import TrainConfig


def smooth_image(height: int, width: int, channels: int = 3, seed: int = 0) -> np.ndarray:
    """Гладкое изображение в [0.1, 0.9]: сумма синусоид со случайными фазами"""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float32)
    planes = []
    for _ in range(channels):
        fy, fx = rng.uniform(0.02, 0.08, size=2)
        py, px = rng.uniform(0, 2 * np.pi, size=2)
        planes.append(0.5 + 0.2 * np.sin(fy * yy + py) + 0.2 * np.cos(fx * xx + px))
    return np.stack(planes, axis=-1).astype(np.float32)


def occlude(image: np.ndarray, seed: int = 0, blobs: int = 4) -> np.ndarray:
    """Имитация капель: светлые квадратные пятна"""
    rng = np.random.default_rng(seed)
    out = image.copy()
    h, w = image.shape[:2]
    for _ in range(blobs):
        y, x = rng.integers(0, h - 8), rng.integers(0, w - 8)
        out[y:y + 8, x:x + 8] = 0.95
    return out


def make_pairs(count: int, size: int = 32, channels: int = 3, seed: int = 0):
    pairs = []
    for i in range(count):
        clean = smooth_image(size, size, channels, seed + i)
        pairs.append(ImagePair(occlude(clean, seed + i), clean, f"p{i:03d}"))
    return pairs


@pytest.fixture
def tiny_model_config():
    return ModelConfig(residual_blocks=1, residual_filters=16, enhancer_width=8, discriminator_filters=8)


@pytest.fixture
def tiny_loss_config():
    # Без перцептивного слагаемого: веса VGG19 не требуются
    return LossConfig(term_weights=(1.0, 1.0, 0.0, 1.0))


@pytest.fixture
def tiny_train_config():
    return TrainConfig(batch_size=2, max_epochs=3, patience=3, crop_size=32, device="cpu",
                       seed=0, progress=False, pretrain_epochs=2)


@pytest.fixture
def tiny_pairs():
    return make_pairs(6)


@pytest.fixture
def random_extractor():
    torch.manual_seed(0)
    return PerceptualExtractor()


@pytest.fixture
def paired_dir(tmp_path):
    """Директория с тремя парами x_rain.png / x_clean.png"""
    root = tmp_path / "pairs"
    for i in range(3):
        clean = smooth_image(40, 48, 3, i)
        write_image(os.path.join(root, f"img{i}_rain.png"), occlude(clean, i))
        write_image(os.path.join(root, f"img{i}_clean.png"), clean)
    return root
