#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Функции потерь: состязательная (LSGAN), feature matching по признакам
дискриминатора, перцептивная по замороженной VGG19, L2-точность и их сумма
"""

import logging
import math
from dataclasses import asdict, dataclass, fields
from typing import Any, Dict, List, Optional, Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F
from torchvision.models.vgg import cfgs, make_layers

from api.pretrained_api import PretrainedAPI
from config import VGG19_WEIGHTS_PATH, VGG19_WEIGHTS_SHA256_PREFIX, VGG19_WEIGHTS_URL
from utils.errors import (ConfigurationError, DomainError, NonFiniteLossError,
                          ResourceUnavailableError, ShapeError)

logger = logging.getLogger("Losses")

TERM_NAMES = ("gan", "fm", "vgg", "fid")

# Индексы слоёв torchvision vgg19().features после активаций
VGG19_TAPS = {
    "relu1_1": 1, "relu1_2": 3,
    "relu2_1": 6, "relu2_2": 8,
    "relu3_1": 11, "relu3_2": 13, "relu3_3": 15, "relu3_4": 17,
    "relu4_1": 20, "relu4_2": 22, "relu4_3": 24, "relu4_4": 26,
}
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass
class LossConfig:
    """Параметры целевой функции генератора"""

    n_fm: int = 3
    n_vgg: int = 3
    perceptual_layers: Tuple[str, ...] = ("relu1_2", "relu2_2", "relu3_4")
    term_weights: Tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)
    perceptual_weights: str = VGG19_WEIGHTS_PATH
    perceptual_weights_url: Optional[str] = VGG19_WEIGHTS_URL

    def __post_init__(self):
        self.perceptual_layers = tuple(self.perceptual_layers)
        self.term_weights = tuple(float(w) for w in self.term_weights)

    def validate(self, discriminator_layers: Optional[int] = None) -> List[str]:
        problems = []
        if self.n_fm < 1:
            problems.append("n_fm: должно быть >= 1")
        elif discriminator_layers is not None and self.n_fm > discriminator_layers:
            problems.append(f"n_fm: {self.n_fm} больше числа слоёв дискриминатора {discriminator_layers}")
        unknown = [name for name in self.perceptual_layers if name not in VGG19_TAPS]
        if unknown:
            problems.append(f"perceptual_layers: неизвестные слои {unknown}")
        if self.n_vgg != len(self.perceptual_layers):
            problems.append(f"n_vgg: {self.n_vgg} не совпадает с числом слоёв {len(self.perceptual_layers)}")
        if len(self.term_weights) != len(TERM_NAMES):
            problems.append(f"term_weights: ожидается {len(TERM_NAMES)} коэффициента")
        elif any(not math.isfinite(w) or w < 0 for w in self.term_weights):
            problems.append("term_weights: коэффициенты должны быть конечными и неотрицательными")
        return problems

    def weight(self, term: str) -> float:
        return self.term_weights[TERM_NAMES.index(term)]

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["perceptual_layers"] = list(self.perceptual_layers)
        data["term_weights"] = list(self.term_weights)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "LossConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"Неизвестные параметры потерь: {', '.join(sorted(unknown))}")
        return cls(**data)


class PerceptualExtractor(nn.Module):
    """Замороженная VGG19 с отводами на выбранных активациях"""

    def __init__(self, layer_names: Sequence[str] = LossConfig.perceptual_layers,
                 state_dict: Optional[Dict[str, torch.Tensor]] = None):
        """
        Args:
            layer_names: Имена отводов (relu1_2, relu2_2, ...)
            state_dict: Веса torchvision vgg19; None — случайная инициализация (для тестов)
        """
        super().__init__()
        try:
            self.taps = sorted(VGG19_TAPS[name] for name in layer_names)
        except KeyError as e:
            raise ConfigurationError(f"Неизвестный слой экстрактора: {e}")
        # Только свёрточная часть VGG19 (конфигурация "E"), без классификатора
        features = make_layers(cfgs["E"])
        if state_dict is not None:
            features.load_state_dict({key[len("features."):]: value for key, value in state_dict.items()
                                      if key.startswith("features.")})
        self.features = features[:self.taps[-1] + 1]
        self.register_buffer("mean", torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(IMAGENET_STD).view(1, 3, 1, 1))
        for param in self.parameters():
            param.requires_grad = False
        self.eval()

    @classmethod
    def load(cls, path: str, layer_names: Sequence[str], url: Optional[str] = None) -> "PerceptualExtractor":
        """
        Загрузка предобученных весов (при отсутствии файла — скачивание по url)

        Raises:
            ResourceUnavailableError: файл недоступен или не читается
        """
        path = PretrainedAPI().ensure(path, url, VGG19_WEIGHTS_SHA256_PREFIX if url == VGG19_WEIGHTS_URL else None)
        try:
            state_dict = torch.load(path, map_location="cpu", weights_only=True)
            extractor = cls(layer_names, state_dict)
        except (OSError, RuntimeError, ValueError) as e:
            logger.error(f"Ошибка при загрузке весов экстрактора {path}: {str(e)}")
            raise ResourceUnavailableError(f"Не удалось загрузить веса экстрактора {path}: {str(e)}")
        logger.info(f"Экстрактор перцептивных признаков загружен: {path}")
        return extractor

    def train(self, mode: bool = True):
        # Веса заморожены, режим всегда eval
        return super().train(False)

    def forward(self, image: torch.Tensor) -> List[torch.Tensor]:
        """
        Args:
            image: N×C×H×W в пространстве модели [-1, 1], C ∈ {1, 3}

        Returns:
            list: Активации отводов от мелких к глубоким
        """
        x = (image + 1.0) / 2.0
        if x.shape[1] == 1:
            x = x.repeat(1, 3, 1, 1)
        elif x.shape[1] != 3:
            raise ShapeError(f"Экстрактор ожидает 1 или 3 канала, получено {x.shape[1]}")
        x = (x - self.mean) / self.std
        outputs = []
        for index, layer in enumerate(self.features):
            x = layer(x)
            if index in self.taps:
                outputs.append(x)
        return outputs


def _check_same_shape(a: torch.Tensor, b: torch.Tensor, what: str):
    if a.shape != b.shape:
        raise ShapeError(f"{what}: формы {tuple(a.shape)} и {tuple(b.shape)} различаются")


def adversarial_g_loss(fake_scores: torch.Tensor) -> torch.Tensor:
    """Среднее по патчам (1 − D(G(A)))²"""
    if fake_scores.numel() == 0:
        raise DomainError("Пустая сетка оценок дискриминатора")
    return ((1.0 - fake_scores) ** 2).mean()


def discriminator_loss(real_scores: torch.Tensor, fake_scores: torch.Tensor) -> torch.Tensor:
    """½·mean[(real − 1)²] + ½·mean[fake²]"""
    _check_same_shape(real_scores, fake_scores, "Оценки дискриминатора")
    if real_scores.numel() == 0:
        raise DomainError("Пустая сетка оценок дискриминатора")
    return 0.5 * ((real_scores - 1.0) ** 2).mean() + 0.5 * (fake_scores ** 2).mean()


def layer_weighted_l1(real: Sequence[torch.Tensor], fake: Sequence[torch.Tensor], n_layers: int) -> torch.Tensor:
    """Σₙ MAE(realₙ, fakeₙ) / 2^(n_layers − n) по первым n_layers слоям"""
    if len(real) != len(fake):
        raise ShapeError(f"Число слоёв различается: {len(real)} и {len(fake)}")
    if len(real) < n_layers:
        raise ShapeError(f"Ожидалось не менее {n_layers} слоёв, получено {len(real)}")
    total = 0.0
    for n in range(1, n_layers + 1):
        r, f = real[n - 1], fake[n - 1]
        _check_same_shape(r, f, f"Слой {n}")
        total = total + (r - f).abs().mean() / 2 ** (n_layers - n)
    return total


def feature_matching_loss(real_feats: Sequence[torch.Tensor], fake_feats: Sequence[torch.Tensor],
                          config: Optional[LossConfig] = None) -> torch.Tensor:
    n_fm = config.n_fm if config is not None else len(real_feats)
    return layer_weighted_l1(real_feats, fake_feats, n_fm)


def perceptual_loss(clean: torch.Tensor, enhanced: torch.Tensor, extractor: Optional[PerceptualExtractor],
                    config: Optional[LossConfig] = None) -> torch.Tensor:
    if extractor is None:
        raise ResourceUnavailableError("Экстрактор перцептивных признаков не загружен")
    _check_same_shape(clean, enhanced, "Перцептивная потеря")
    clean_feats = extractor(clean)
    enhanced_feats = extractor(enhanced)
    n_vgg = config.n_vgg if config is not None else len(clean_feats)
    return layer_weighted_l1(clean_feats, enhanced_feats, n_vgg)


def fidelity_loss(clean: torch.Tensor, enhanced: torch.Tensor) -> torch.Tensor:
    """Среднеквадратичная попиксельная разность"""
    _check_same_shape(clean, enhanced, "Потеря точности")
    return F.mse_loss(enhanced, clean)


def total_generator_loss(gan, fm, vgg, fid, config: Optional[LossConfig] = None):
    """
    Взвешенная сумма четырёх слагаемых (по умолчанию — простая сумма)

    Raises:
        NonFiniteLossError: одно из слагаемых не конечно
    """
    terms = dict(zip(TERM_NAMES, (gan, fm, vgg, fid)))
    for name, value in terms.items():
        scalar = float(value.detach()) if isinstance(value, torch.Tensor) else float(value)
        if not math.isfinite(scalar):
            logger.error(f"Неконечное слагаемое потерь {name}: {scalar}")
            raise NonFiniteLossError(name, scalar)
    weights = config.term_weights if config is not None else (1.0,) * len(TERM_NAMES)
    total = 0.0
    for weight, value in zip(weights, terms.values()):
        if weight:
            total = total + weight * value
    return total
