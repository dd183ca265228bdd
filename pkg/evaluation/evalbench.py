#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Оценка моделей по датасету (SSIM / PSNR против эталона и базовая линия
«вход против эталона») и замер задержки инференса
"""

import csv
import json
import logging
import math
import os
import statistics
import time
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
import torch

from data.dataio import ImagePair
from evaluation.metrics import psnr, ssim
from utils.errors import ClearLensError, ConfigurationError

logger = logging.getLogger("EvalBench")

Restorer = Callable[[np.ndarray], np.ndarray]


@dataclass
class ImageMetrics:
    """Метрики одного изображения"""

    id: str
    ssim: float
    psnr: float
    input_ssim: float
    input_psnr: float
    anomaly: str = "rain"


def finite_mean(values: Sequence[float]) -> float:
    """Среднее по конечным значениям; inf, если все значения бесконечны"""
    finite = [v for v in values if math.isfinite(v)]
    if finite:
        return float(np.mean(finite))
    return math.inf if values else math.nan


@dataclass
class MetricsReport:
    """Агрегированные метрики по датасету"""

    records: List[ImageMetrics] = field(default_factory=list)
    fingerprint: str = ""

    @property
    def count(self) -> int:
        return len(self.records)

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([r.ssim for r in self.records]))

    @property
    def mean_psnr(self) -> float:
        return finite_mean([r.psnr for r in self.records])

    @property
    def infinite_psnr_count(self) -> int:
        return sum(1 for r in self.records if math.isinf(r.psnr))

    @property
    def input_mean_ssim(self) -> float:
        return float(np.mean([r.input_ssim for r in self.records]))

    @property
    def input_mean_psnr(self) -> float:
        return finite_mean([r.input_psnr for r in self.records])

    def summary(self) -> Dict[str, Any]:
        return {
            "fingerprint": self.fingerprint,
            "count": self.count,
            "ssim": self.mean_ssim,
            "psnr": self.mean_psnr,
            "infinite_psnr": self.infinite_psnr_count,
            "input_ssim": self.input_mean_ssim,
            "input_psnr": self.input_mean_psnr,
        }

    def format_table(self) -> str:
        """Текстовая таблица «вход / модель»"""
        lines = [f"{'':<8}{'SSIM':>8}{'PSNR':>8}",
                 f"{'Input':<8}{self.input_mean_ssim:>8.3f}{self.input_mean_psnr:>8.2f}",
                 f"{'Model':<8}{self.mean_ssim:>8.3f}{self.mean_psnr:>8.2f}"]
        return "\n".join(lines)

    def write(self, output_dir: str, name: str = "evaluation"):
        """Запись покадровых метрик (CSV), сводки (JSON) и таблицы (TXT)"""
        os.makedirs(output_dir, exist_ok=True)
        with open(os.path.join(output_dir, f"{name}.csv"), "w", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, fieldnames=[k for k in asdict(self.records[0])] if self.records else ["id"])
            writer.writeheader()
            for record in self.records:
                writer.writerow(asdict(record))
        with open(os.path.join(output_dir, f"{name}.json"), "w", encoding="utf-8") as f:
            json.dump(self.summary(), f, ensure_ascii=False, indent=2)
        with open(os.path.join(output_dir, f"{name}.txt"), "w", encoding="utf-8") as f:
            f.write(self.format_table() + "\n")
        logger.info(f"Отчёт об оценке сохранён: {output_dir}")


def evaluate(restorer: Restorer, pairs: Sequence[ImagePair], fingerprint: str = "") -> MetricsReport:
    """
    Оценка модели по набору пар

    Args:
        restorer: Функция восстановления H×W×C [0, 1] -> H×W×C [0, 1] (например, ModelManager)
        pairs: Пары (искажённое, эталон)
        fingerprint: Отпечаток конфигурации модели

    Raises:
        ConfigurationError: пустой набор
        ClearLensError: ошибка инференса (с указанием пары)
    """
    if not pairs:
        raise ConfigurationError("Набор для оценки пуст")
    report = MetricsReport(fingerprint=fingerprint)
    for pair in pairs:
        try:
            restored = restorer(pair.affected)
        except (ClearLensError, RuntimeError) as e:
            logger.error(f"Ошибка инференса на паре {pair.id}: {str(e)}")
            raise ClearLensError(f"Ошибка инференса на паре {pair.id}: {str(e)}") from e
        report.records.append(ImageMetrics(
            id=pair.id,
            ssim=ssim(restored, pair.clean),
            psnr=psnr(restored, pair.clean),
            input_ssim=ssim(pair.affected, pair.clean),
            input_psnr=psnr(pair.affected, pair.clean),
            anomaly=pair.anomaly,
        ))
    logger.info(f"Оценка {report.count} пар: SSIM {report.mean_ssim:.4f}, PSNR {report.mean_psnr:.2f} дБ "
                f"(вход: {report.input_mean_ssim:.4f} / {report.input_mean_psnr:.2f} дБ)")
    return report


@dataclass
class LatencyStats:
    """Задержка инференса одного изображения"""

    samples: List[float]
    warmup: int
    height: int
    width: int
    device: str
    model: str = ""

    @property
    def median(self) -> float:
        return statistics.median(self.samples)

    @property
    def mean(self) -> float:
        return statistics.fmean(self.samples)

    @property
    def std(self) -> float:
        return statistics.pstdev(self.samples)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data.update(median=self.median, mean=self.mean, std=self.std)
        return data


def _synchronize(device: Optional[torch.device]):
    if device is not None and torch.device(device).type == "cuda":
        torch.cuda.synchronize(device)


def benchmark_latency(restorer: Restorer, height: int, width: int, channels: int = 3,
                      runs: int = 100, warmup: int = 10, device=None,
                      device_name: str = "", model_name: str = "", seed: int = 0) -> LatencyStats:
    """
    Замер времени полного прохода (нормализация, паддинг, G+E, обрезка)

    Args:
        restorer: Функция восстановления (ModelManager)
        height, width, channels: Размер входа
        runs: Число замеров после прогрева
        warmup: Число прогревочных проходов (не учитываются)
        device: Устройство модели (для синхронизации CUDA)
        device_name: Подпись устройства в отчёте
    """
    if runs < 1:
        raise ConfigurationError(f"runs={runs}: требуется хотя бы один замер")
    image = np.random.default_rng(seed).random((height, width, channels), dtype=np.float32)

    for _ in range(max(0, warmup)):
        restorer(image)
    _synchronize(device)

    samples = []
    for _ in range(runs):
        start = time.perf_counter()
        restorer(image)
        _synchronize(device)
        samples.append(time.perf_counter() - start)

    stats = LatencyStats(samples, max(0, warmup), height, width, device_name or str(device or "cpu"), model_name)
    logger.info(f"Задержка {height}x{width} на {stats.device}: медиана {stats.median * 1000:.2f} мс, "
                f"среднее {stats.mean * 1000:.2f} ± {stats.std * 1000:.2f} мс ({runs} замеров)")
    return stats


def write_latency_report(stats: Sequence[LatencyStats], output_dir: str, name: str = "latency"):
    """Запись результатов замеров (JSON с сырыми выборками и CSV-сводка)"""
    os.makedirs(output_dir, exist_ok=True)
    with open(os.path.join(output_dir, f"{name}.json"), "w", encoding="utf-8") as f:
        json.dump([s.to_dict() for s in stats], f, ensure_ascii=False, indent=2)
    with open(os.path.join(output_dir, f"{name}.csv"), "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["model", "device", "height", "width", "runs", "warmup", "median_s", "mean_s", "std_s"])
        for s in stats:
            writer.writerow([s.model, s.device, s.height, s.width, len(s.samples), s.warmup, s.median, s.mean, s.std])
    logger.info(f"Отчёт о задержке сохранён: {output_dir}")
