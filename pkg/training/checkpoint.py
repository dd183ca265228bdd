#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Чекпоинт обучения: веса G+E и D, состояния оптимизаторов, история метрик
"""

import json
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List

import torch

from models.model_data import ModelConfig, NetworkWeights, load_weights, save_weights
from utils.errors import ImageIOError, IncompatibleCheckpointError

logger = logging.getLogger("Checkpoint")

STATE_FILE = "checkpoint.json"
OPTIMIZER_FILE = "optimizer.pt"


@dataclass
class Checkpoint:
    """Сохраняемое состояние обучения"""

    model_config: ModelConfig
    restoration_state: NetworkWeights
    discriminator_state: NetworkWeights
    optimizer_state: Dict[str, Any] = field(default_factory=dict)
    epoch: int = 0
    best_metric: float = float("-inf")
    best_epoch: int = 0
    history: List[Dict[str, Any]] = field(default_factory=list)

    def network_state(self) -> NetworkWeights:
        """Объединённый словарь параметров G, E и D"""
        return {**self.restoration_state, **self.discriminator_state}

    def save(self, directory: str):
        """
        Сохранение чекпоинта в директорию

        Args:
            directory: Директория назначения (создаётся при необходимости)
        """
        os.makedirs(directory, exist_ok=True)
        self.model_config.save(directory)
        save_weights(self.restoration_state, directory, "restoration")
        save_weights(self.discriminator_state, directory, "discriminator")
        if self.optimizer_state:
            torch.save(self.optimizer_state, os.path.join(directory, OPTIMIZER_FILE))
        state = {
            "epoch": self.epoch,
            "best_metric": self.best_metric,
            "best_epoch": self.best_epoch,
            "history": self.history,
        }
        with open(os.path.join(directory, STATE_FILE), "w", encoding="utf-8") as f:
            json.dump(state, f, ensure_ascii=False, indent=2)
        logger.info(f"Чекпоинт эпохи {self.epoch} сохранён: {directory}")

    @classmethod
    def load(cls, directory: str) -> "Checkpoint":
        """Загрузка чекпоинта из директории"""
        state_path = os.path.join(directory, STATE_FILE)
        if not os.path.exists(state_path):
            logger.error(f"Чекпоинт не найден: {directory}")
            raise ImageIOError(f"Чекпоинт не найден: {directory}")
        with open(state_path, "r", encoding="utf-8") as f:
            state = json.load(f)

        optimizer_path = os.path.join(directory, OPTIMIZER_FILE)
        optimizer_state = {}
        if os.path.exists(optimizer_path):
            optimizer_state = torch.load(optimizer_path, map_location="cpu", weights_only=True)

        return cls(
            model_config=ModelConfig.load(directory),
            restoration_state=load_weights(directory, "restoration"),
            discriminator_state=load_weights(directory, "discriminator"),
            optimizer_state=optimizer_state,
            epoch=state["epoch"],
            best_metric=state["best_metric"],
            best_epoch=state["best_epoch"],
            history=state["history"],
        )


def transfer_init(checkpoint: Checkpoint, model_config: ModelConfig) -> NetworkWeights:
    """
    Веса G, E и D из чекпоинта для старта обучения с той же архитектурой

    Raises:
        IncompatibleCheckpointError: конфигурации различаются (с перечнем полей)
    """
    differing = checkpoint.model_config.diff(model_config)
    if differing:
        logger.error(f"Чекпоинт несовместим с целевой конфигурацией: {differing}")
        raise IncompatibleCheckpointError(differing)
    return {name: tensor.clone() for name, tensor in checkpoint.network_state().items()}
