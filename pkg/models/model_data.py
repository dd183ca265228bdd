#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Структуры данных для работы с моделями в приложении ClearLens-Core:
конфигурация архитектуры и архив именованных тензоров с манифестом
"""

import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, fields
from typing import Any, Dict, List, Tuple

import torch

from utils.errors import ConfigurationError, ImageIOError

logger = logging.getLogger("ModelData")

# Параметр -> тензор; пути вида "generator.down1.0.weight"
NetworkWeights = Dict[str, torch.Tensor]

MODEL_CONFIG_NAME = "model_config.json"


@dataclass
class ModelConfig:
    """Гиперпараметры архитектуры генератора, энхансера и дискриминатора"""

    input_channels: int = 3
    encoder_filters: Tuple[int, int] = (16, 32)
    residual_blocks: int = 9
    residual_filters: int = 64
    use_aggregation: bool = True
    use_enhancer: bool = True
    enhancer_width: int = 32
    discriminator_layers: int = 3
    discriminator_filters: int = 64
    patch_receptive_field: int = 14

    def __post_init__(self):
        self.encoder_filters = tuple(self.encoder_filters)

    def validate(self) -> List[str]:
        """
        Проверка конфигурации

        Returns:
            list: Список проблем в формате "поле: причина" (пустой, если всё в порядке)
        """
        problems = []
        if self.input_channels not in (1, 3):
            problems.append(f"input_channels: ожидается 1 или 3, получено {self.input_channels}")
        if len(self.encoder_filters) != 2:
            problems.append(f"encoder_filters: ожидается ровно 2 значения, получено {len(self.encoder_filters)}")
        elif any(int(f) <= 0 for f in self.encoder_filters):
            problems.append("encoder_filters: число фильтров должно быть положительным")
        if self.residual_blocks < 0:
            problems.append("residual_blocks: не может быть отрицательным")
        for name in ("residual_filters", "enhancer_width", "discriminator_layers", "discriminator_filters"):
            if getattr(self, name) <= 0:
                problems.append(f"{name}: должно быть положительным")
        if self.patch_receptive_field <= 0:
            problems.append("patch_receptive_field: должно быть положительным")
        return problems

    def check(self):
        """Проверка конфигурации с исключением при ошибке"""
        problems = self.validate()
        if problems:
            logger.error(f"Некорректная конфигурация модели: {problems}")
            raise ConfigurationError("; ".join(problems))

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["encoder_filters"] = list(self.encoder_filters)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ModelConfig":
        """
        Создание конфигурации из словаря

        Args:
            data: Словарь с параметрами (неизвестные ключи запрещены)
        """
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"Неизвестные параметры модели: {', '.join(sorted(unknown))}")
        return cls(**data)

    def fingerprint(self) -> str:
        """Короткий отпечаток конфигурации для отчётов"""
        payload = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha1(payload).hexdigest()[:12]

    def diff(self, other: "ModelConfig") -> List[str]:
        """Имена полей, в которых конфигурации различаются"""
        mine, theirs = self.to_dict(), other.to_dict()
        return [name for name in mine if mine[name] != theirs[name]]

    def save(self, directory: str):
        """Сохранение конфигурации в человекочитаемый JSON"""
        os.makedirs(directory, exist_ok=True)
        path = os.path.join(directory, MODEL_CONFIG_NAME)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, ensure_ascii=False, indent=2)
        logger.debug(f"Конфигурация модели сохранена: {path}")

    @classmethod
    def load(cls, directory: str) -> "ModelConfig":
        """Загрузка конфигурации из директории чекпоинта"""
        path = os.path.join(directory, MODEL_CONFIG_NAME)
        if not os.path.exists(path):
            logger.error(f"Файл конфигурации модели не найден: {path}")
            raise ImageIOError(f"Файл конфигурации модели не найден: {path}")
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


def build_manifest(weights: NetworkWeights) -> Dict[str, Dict[str, Any]]:
    """Манифест архива: путь параметра -> форма и тип"""
    return {
        name: {"shape": list(tensor.shape), "dtype": str(tensor.dtype).replace("torch.", "")}
        for name, tensor in weights.items()
    }


def save_weights(weights: NetworkWeights, directory: str, name: str):
    """
    Сохранение архива именованных тензоров вместе с манифестом

    Args:
        weights: Словарь параметров
        directory: Директория назначения
        name: Базовое имя архива (без расширения)
    """
    os.makedirs(directory, exist_ok=True)
    tensors = {key: value.detach().cpu().clone() for key, value in weights.items()}
    torch.save(tensors, os.path.join(directory, f"{name}.pt"))
    with open(os.path.join(directory, f"{name}_manifest.json"), "w", encoding="utf-8") as f:
        json.dump(build_manifest(tensors), f, ensure_ascii=False, indent=2)
    logger.debug(f"Архив весов '{name}' сохранён: {len(tensors)} тензоров")


def load_weights(directory: str, name: str) -> NetworkWeights:
    """
    Загрузка архива именованных тензоров с проверкой по манифесту

    Returns:
        dict: Словарь параметров
    """
    archive_path = os.path.join(directory, f"{name}.pt")
    manifest_path = os.path.join(directory, f"{name}_manifest.json")
    try:
        tensors = torch.load(archive_path, map_location="cpu", weights_only=True)
        with open(manifest_path, "r", encoding="utf-8") as f:
            manifest = json.load(f)
    except (OSError, RuntimeError, ValueError) as e:
        logger.error(f"Ошибка при загрузке архива весов {archive_path}: {str(e)}")
        raise ImageIOError(f"Не удалось загрузить архив весов {archive_path}: {str(e)}")

    if build_manifest(tensors) != manifest:
        logger.error(f"Архив {archive_path} не соответствует манифесту")
        raise ImageIOError(f"Архив {archive_path} не соответствует манифесту")
    return tensors


def count_parameters(weights) -> int:
    """
    Точное число скалярных обучаемых параметров

    Args:
        weights: nn.Module (учитываются параметры с requires_grad) или словарь тензоров
    """
    if isinstance(weights, torch.nn.Module):
        return sum(p.numel() for p in weights.parameters() if p.requires_grad)
    return sum(int(t.numel()) for t in weights.values())
