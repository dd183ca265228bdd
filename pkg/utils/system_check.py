#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Утилиты для проверки системных требований и выбора вычислительного устройства
"""

import os
import platform
import logging

import torch

from utils.errors import ConfigurationError, ResourceUnavailableError

logger = logging.getLogger("SystemCheck")

MIN_PYTHON = (3, 11)


def check_requirements() -> bool:
    """
    Проверка системных требований для работы приложения

    Returns:
        bool: True если все требования выполнены, иначе False
    """
    logger.info("Проверка системных требований...")

    if not check_python_version():
        logger.error("Версия Python не соответствует требованиям")
        return False

    if not check_torch():
        logger.error("PyTorch недоступен")
        return False

    logger.info("Все системные требования выполнены")
    return True


def check_python_version() -> bool:
    """
    Проверка версии Python

    Returns:
        bool: True если версия Python не ниже MIN_PYTHON
    """
    major, minor, _ = platform.python_version_tuple()
    if (int(major), int(minor)) >= MIN_PYTHON:
        logger.info(f"Обнаружена совместимая версия Python: {platform.python_version()}")
        return True
    logger.warning(f"Несовместимая версия Python: {platform.python_version()}, "
                   f"требуется {MIN_PYTHON[0]}.{MIN_PYTHON[1]}+")
    return False


def check_torch() -> bool:
    """Проверка работоспособности PyTorch на CPU"""
    try:
        value = torch.ones(2).sum().item()
    except RuntimeError as e:
        logger.error(f"Ошибка при проверке PyTorch: {str(e)}")
        return False
    logger.info(f"PyTorch {torch.__version__}, CUDA доступна: {torch.cuda.is_available()}")
    return value == 2.0


def resolve_device(name: str = "auto") -> torch.device:
    """
    Вычислительное устройство по имени

    Args:
        name: "auto", "cpu", "cuda" или "cuda:N"

    Raises:
        ResourceUnavailableError: запрошен GPU, а CUDA недоступна
    """
    if name == "auto":
        return torch.device("cuda" if torch.cuda.is_available() else "cpu")
    try:
        device = torch.device(name)
    except RuntimeError as e:
        raise ConfigurationError(f"Неизвестное устройство '{name}': {str(e)}")
    if device.type == "cuda" and not torch.cuda.is_available():
        logger.error(f"Запрошено устройство {name}, но CUDA недоступна")
        raise ResourceUnavailableError(f"CUDA недоступна для устройства {name}")
    return device


def device_label(device: torch.device) -> str:
    """Читаемое описание устройства для отчётов о задержке"""
    device = torch.device(device)
    if device.type == "cuda":
        return torch.cuda.get_device_name(device)
    return f"{cpu_name()} ({os.cpu_count()} потоков)"


def cpu_name() -> str:
    """Модель процессора из /proc/cpuinfo (на других ОС — platform.processor())"""
    try:
        with open("/proc/cpuinfo", "r", encoding="utf-8") as f:
            for line in f:
                key, _, value = line.partition(":")
                if key.strip() == "model name":
                    return value.strip()
    except OSError:
        logger.debug("/proc/cpuinfo недоступен")
    return platform.processor() or "CPU"
