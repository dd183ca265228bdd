#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Итоговая конфигурация запуска: значения по умолчанию, файл пользователя
и флаги командной строки, сведённые в одно целое и сохраняемые в выходную директорию
"""

import copy
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

from config import DEFAULT_CONFIG_PATH, LOCK_FILE_NAME, RESOLVED_CONFIG_NAME
from data.dataio import DatasetManifest
from data.synth_rain import RainConfig
from models.losses import LossConfig
from models.model_data import ModelConfig
from training.trainer import TrainConfig, check_configs
from utils.errors import (ConfigurationError, ConfigValidationError, ImageIOError,
                          OutputLockedError)

logger = logging.getLogger("RunConfig")

SECTIONS = ("model", "loss", "rain", "train", "data")
# Ключи истории запуска в resolved_config.json; seed дублирует train.seed
PROVENANCE_KEYS = ("output_dir", "seed", "invocation")
DATA_DEFAULTS = {
    "train": None,
    "test": None,
    "clean_dir": None,
    "split": [0.8, 0.1, 0.1],
    "workers": 4,
}


def load_json(path: str) -> Dict[str, Any]:
    """Чтение JSON-файла конфигурации"""
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError:
        logger.error(f"Файл конфигурации не найден: {path}")
        raise ConfigurationError(f"Файл конфигурации не найден: {path}")
    except (OSError, ValueError) as e:
        logger.error(f"Ошибка при чтении конфигурации {path}: {str(e)}")
        raise ConfigurationError(f"Не удалось прочитать конфигурацию {path}: {str(e)}")
    if not isinstance(data, dict):
        raise ConfigurationError(f"Конфигурация {path} должна быть объектом JSON")
    return data


def deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """Рекурсивное наложение override на копию base"""
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


@dataclass
class RunConfig:
    """Полностью разрешённая конфигурация одного запуска"""

    model: ModelConfig
    loss: LossConfig
    rain: RainConfig
    train: TrainConfig
    data: Dict[str, Any]
    output_dir: str
    seed: int
    invocation: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def resolve(cls, config_path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None,
                output_dir: str = "runs/latest", seed: Optional[int] = None,
                invocation: Optional[Dict[str, Any]] = None) -> "RunConfig":
        """
        Сведение конфигурации: умолчания -> файл пользователя -> флаги

        Raises:
            ConfigValidationError: со всеми некорректными полями сразу
        """
        merged = load_json(DEFAULT_CONFIG_PATH)
        if config_path:
            user = load_json(config_path)
            for key in PROVENANCE_KEYS:
                user.pop(key, None)
            merged = deep_merge(merged, user)
        if overrides:
            merged = deep_merge(merged, overrides)
            # Число эпох из флага ограничивает терпение ранней остановки
            train_section = merged.get("train", {})
            epochs = overrides.get("train", {}).get("max_epochs")
            if epochs is not None and train_section.get("patience", 0) > epochs:
                train_section["patience"] = epochs
        if seed is not None:
            merged = deep_merge(merged, {"train": {"seed": seed}, "rain": {"seed": seed}})

        unknown = sorted(set(merged) - set(SECTIONS))
        problems: List[str] = [f"{name}: неизвестный раздел" for name in unknown]
        sections = {}
        for name, factory in (("model", ModelConfig), ("loss", LossConfig),
                              ("rain", RainConfig), ("train", TrainConfig)):
            try:
                sections[name] = factory.from_dict(merged.get(name, {}))
            except (ConfigurationError, TypeError) as e:
                problems.append(f"{name}: {str(e)}")
        data = deep_merge(DATA_DEFAULTS, merged.get("data", {}))
        problems += cls._validate_data(data)

        if len(sections) == 4:
            problems += [f"rain.{p}" for p in sections["rain"].validate()]
            try:
                check_configs(sections["model"], sections["train"], sections["loss"])
            except ConfigValidationError as e:
                problems += e.problems
        if problems:
            for problem in problems:
                logger.error(f"Ошибка конфигурации: {problem}")
            raise ConfigValidationError(problems)

        return cls(model=sections["model"], loss=sections["loss"], rain=sections["rain"],
                   train=sections["train"], data=data, output_dir=os.path.abspath(output_dir),
                   seed=sections["train"].seed, invocation=dict(invocation or {}))

    @staticmethod
    def _validate_data(data: Dict[str, Any]) -> List[str]:
        problems = []
        for key in ("train", "test"):
            value = data.get(key)
            if value is None or isinstance(value, str):
                continue
            if not isinstance(value, dict):
                problems.append(f"data.{key}: ожидается объект манифеста или путь к нему")
                continue
            try:
                problems += [f"data.{key}.{p}" for p in DatasetManifest.from_dict(value).validate()]
            except (ConfigurationError, TypeError) as e:
                problems.append(f"data.{key}: {str(e)}")
        split = data.get("split")
        if not isinstance(split, list) or len(split) != 3 or abs(sum(split) - 1.0) > 1e-6:
            problems.append("data.split: ожидаются три доли с суммой 1")
        unknown = sorted(set(data) - set(DATA_DEFAULTS))
        problems += [f"data.{key}: неизвестный параметр" for key in unknown]
        return problems

    def manifest(self, key: str) -> DatasetManifest:
        """
        Манифест датасета из раздела data

        Raises:
            ConfigValidationError: поле не задано
        """
        value = self.data.get(key)
        if not value:
            raise ConfigValidationError([f"data.{key}: путь к датасету не задан"])
        if isinstance(value, str):
            if os.path.isdir(value):
                return DatasetManifest(root=value)
            return DatasetManifest.load(value)
        return DatasetManifest.from_dict(value)

    def require(self, key: str) -> Any:
        value = self.data.get(key)
        if not value:
            raise ConfigValidationError([f"data.{key}: не задано"])
        return value

    def to_dict(self) -> Dict[str, Any]:
        return {
            "model": self.model.to_dict(),
            "loss": self.loss.to_dict(),
            "rain": self.rain.to_dict(),
            "train": self.train.to_dict(),
            "data": self.data,
            "output_dir": self.output_dir,
            "seed": self.seed,
            "invocation": self.invocation,
        }

    def persist(self) -> str:
        """Сохранение итоговой конфигурации в выходную директорию"""
        os.makedirs(self.output_dir, exist_ok=True)
        path = os.path.join(self.output_dir, RESOLVED_CONFIG_NAME)
        try:
            with open(path, "w", encoding="utf-8") as f:
                json.dump(self.to_dict(), f, ensure_ascii=False, indent=2)
        except OSError as e:
            logger.error(f"Ошибка при сохранении конфигурации {path}: {str(e)}")
            raise ImageIOError(f"Не удалось сохранить конфигурацию {path}: {str(e)}")
        logger.info(f"Итоговая конфигурация сохранена: {path}")
        return path


class OutputDirLock:
    """Файл блокировки выходной директории: один запуск на директорию"""

    def __init__(self, output_dir: str):
        self.path = os.path.join(output_dir, LOCK_FILE_NAME)
        self.fd = None

    def acquire(self):
        os.makedirs(os.path.dirname(self.path), exist_ok=True)
        try:
            self.fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            if not self._remove_stale():
                logger.error(f"Выходная директория занята: {self.path}")
                raise OutputLockedError(f"Выходная директория уже используется (файл {self.path})")
            try:
                self.fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
            except FileExistsError:
                raise OutputLockedError(f"Выходная директория уже используется (файл {self.path})")
        os.write(self.fd, str(os.getpid()).encode())

    def _remove_stale(self) -> bool:
        """Удаление блокировки завершившегося процесса; False — владелец жив или неизвестен"""
        try:
            with open(self.path, "r", encoding="utf-8") as f:
                pid = int(f.read().strip())
        except (OSError, ValueError):
            return False
        if pid <= 0 or process_alive(pid):
            return False
        logger.warning(f"Удаление устаревшей блокировки процесса {pid}: {self.path}")
        try:
            os.remove(self.path)
        except FileNotFoundError:
            pass
        return True

    def release(self):
        if self.fd is not None:
            os.close(self.fd)
            self.fd = None
            if os.path.exists(self.path):
                os.remove(self.path)

    def __enter__(self):
        self.acquire()
        return self

    def __exit__(self, exc_type, exc, tb):
        self.release()
        return False


def process_alive(pid: int) -> bool:
    """Существует ли процесс с данным PID (сигнал 0 ничего не отправляет)"""
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        return True
    return True
