#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Менеджер обученной модели: восстановление изображений произвольного размера
и пакетная обработка файлов
"""

import os
import logging
import time
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from data.dataio import (crop_back, denormalize, image_bit_depth, image_to_tensor,
                         normalize, pad_to_multiple, read_image, tensor_to_image,
                         write_image)
from models.model_core import Networks
from training.checkpoint import Checkpoint
from utils.errors import ClearLensError, DomainError
from utils.system_check import resolve_device

logger = logging.getLogger("ModelManager")


class ModelManager:
    """Класс для применения сетей восстановления к изображениям"""

    def __init__(self, networks: Networks, device="cpu"):
        """
        Инициализация менеджера модели

        Args:
            networks: Сети G, E и D (D при восстановлении не используется)
            device: Вычислительное устройство
        """
        self.device = torch.device(device)
        self.networks = networks.to(self.device)
        self.config = networks.config

    @classmethod
    def from_checkpoint(cls, checkpoint, device: str = "cpu") -> "ModelManager":
        """
        Создание менеджера из чекпоинта

        Args:
            checkpoint: Объект Checkpoint или путь к директории чекпоинта
            device: "auto", "cpu" или "cuda"
        """
        if isinstance(checkpoint, str):
            checkpoint = Checkpoint.load(checkpoint)
        networks = Networks(checkpoint.model_config)
        networks.load_state_dict(checkpoint.network_state())
        logger.info(f"Модель {checkpoint.model_config.fingerprint()} загружена (эпоха {checkpoint.epoch})")
        return cls(networks, resolve_device(device))

    @torch.no_grad()
    def restore(self, image: np.ndarray) -> np.ndarray:
        """
        Восстановление одного изображения

        Args:
            image: Массив H×W×C из [0, 1]

        Returns:
            np.ndarray: Восстановленное изображение того же размера
        """
        if image.ndim != 3 or image.shape[2] != self.config.input_channels:
            raise DomainError(f"Ожидалось изображение H×W×{self.config.input_channels}, "
                              f"получено {image.shape}")
        was_training = self.networks.training
        self.networks.eval()
        try:
            tensor = image_to_tensor(normalize(image)).unsqueeze(0).to(self.device)
            padded, record = pad_to_multiple(tensor, self.networks.required_multiple())
            output, _ = self.networks.restore(padded)
            return tensor_to_image(denormalize(crop_back(output, record)))
        finally:
            self.networks.train(was_training)

    __call__ = restore

    def infer_files(self, paths: Sequence[str], output_dir: str, suffix: str = "_restored",
                    progress_callback: Optional[Callable[[int, int, str], None]] = None
                    ) -> Tuple[List[str], Dict[str, str]]:
        """
        Восстановление файлов с сохранением размера и разрядности

        Args:
            paths: Входные файлы
            output_dir: Директория результатов
            suffix: Суффикс имени выходного файла
            progress_callback: Функция (номер, всего, путь) для обновления прогресса

        Returns:
            tuple: (записанные файлы, {путь: причина} для пропущенных)
        """
        os.makedirs(output_dir, exist_ok=True)
        written, failures = [], {}
        minimum = self.config.patch_receptive_field

        for number, path in enumerate(paths, start=1):
            try:
                start = time.perf_counter()
                image = read_image(path, self.config.input_channels)
                h, w = image.shape[:2]
                if min(h, w) < minimum:
                    raise DomainError(f"Размер {h}x{w} меньше минимального {minimum}")
                depth = image_bit_depth(path)
                restored = self.restore(image)
                stem = os.path.splitext(os.path.basename(path))[0]
                target = os.path.join(output_dir, f"{stem}{suffix}.png")
                write_image(target, restored, depth)
                written.append(target)
                logger.info(f"{os.path.basename(path)}: {h}x{w}, {time.perf_counter() - start:.3f} с")
            except (ClearLensError, RuntimeError) as e:
                # RuntimeError от torch (например, нехватка памяти) пропускает только этот файл
                failures[path] = str(e)
                logger.error(f"Пропуск {path}: {str(e)}")
            if progress_callback:
                progress_callback(number, len(paths), path)

        if failures:
            logger.warning(f"Обработано {len(written)} из {len(paths)} изображений")
        return written, failures
