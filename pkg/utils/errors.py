#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Иерархия исключений ClearLens-Core
"""

from typing import Iterable, List, Optional


class ClearLensError(Exception):
    """Базовое исключение приложения"""


class ConfigurationError(ClearLensError, ValueError):
    """Некорректная конфигурация (модели, обучения, синтеза, датасета)"""


class ConfigValidationError(ConfigurationError):
    """Ошибка проверки конфигурации с перечнем всех некорректных полей"""

    def __init__(self, problems: Iterable[str]):
        self.problems: List[str] = list(problems)
        super().__init__("Некорректная конфигурация: " + "; ".join(self.problems))


class ShapeError(ClearLensError, ValueError):
    """Несовпадение размеров тензоров"""


class DomainError(ClearLensError, ValueError):
    """Входные данные вне области определения операции"""


class PairingError(ClearLensError):
    """Файлы датасета без пары"""

    def __init__(self, orphans: Iterable[str]):
        self.orphans: List[str] = sorted(orphans)
        super().__init__("Файлы без пары: " + ", ".join(self.orphans))


class ChannelError(ClearLensError, ValueError):
    """Число каналов изображения не совпадает с режимом датасета"""


class ImageIOError(ClearLensError, OSError):
    """Изображение не удалось прочитать или записать"""


class NonFiniteLossError(ClearLensError, ArithmeticError):
    """Неконечное значение функции потерь"""

    def __init__(self, term: str, value: float, batch_ids: Optional[List[str]] = None):
        self.term = term
        self.value = value
        self.batch_ids = list(batch_ids or [])
        message = f"Неконечное значение потерь '{term}': {value}"
        if self.batch_ids:
            message += f" (батч: {', '.join(self.batch_ids)})"
        super().__init__(message)


class IncompatibleCheckpointError(ClearLensError):
    """Конфигурация чекпоинта несовместима с целевой"""

    def __init__(self, fields: Iterable[str]):
        self.fields: List[str] = sorted(fields)
        super().__init__("Несовместимые поля конфигурации: " + ", ".join(self.fields))


class ResourceUnavailableError(ClearLensError):
    """Внешний ресурс (веса экстрактора) недоступен"""


class OutputLockedError(ClearLensError):
    """Выходная директория занята другим процессом"""
