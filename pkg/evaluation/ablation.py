#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Абляция (G / G+E / G+E+A) и сравнение инициализаций при одинаковых данных и сидах
"""

import json
import logging
import os
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

from data.dataio import ImagePair
from evaluation.evalbench import MetricsReport, evaluate
from models.losses import LossConfig, PerceptualExtractor
from models.model_data import ModelConfig
from models.model_manager import ModelManager
from training.checkpoint import Checkpoint, transfer_init
from training.trainer import TrainConfig, train
from utils.errors import ConfigurationError

logger = logging.getLogger("Ablation")

# Вариант -> (use_enhancer, use_aggregation)
VARIANTS = {
    "G": (False, False),
    "G+E": (True, False),
    "G+E+A": (True, True),
}
INPUT_ROW = "Input"


@dataclass
class ResultRow:
    """Строка итоговой таблицы"""

    name: str
    ssim: float
    psnr: float
    fingerprint: str = ""
    best_epoch: int = 0
    history: List[Dict[str, Any]] = field(default_factory=list)


@dataclass
class ResultTable:
    """Таблица «вариант / SSIM / PSNR» со строкой входа"""

    rows: List[ResultRow] = field(default_factory=list)

    def names(self) -> List[str]:
        return [row.name for row in self.rows]

    def row(self, name: str) -> ResultRow:
        for row in self.rows:
            if row.name == name:
                return row
        raise KeyError(name)

    def format(self) -> str:
        lines = [f"{'':<12}{'SSIM':>8}{'PSNR':>8}"]
        lines += [f"{row.name:<12}{row.ssim:>8.3f}{row.psnr:>8.2f}" for row in self.rows]
        return "\n".join(lines)

    def write(self, output_dir: str, name: str):
        os.makedirs(output_dir, exist_ok=True)
        with open(os.path.join(output_dir, f"{name}.json"), "w", encoding="utf-8") as f:
            json.dump([{k: v for k, v in asdict(row).items() if k != "history"} for row in self.rows],
                      f, ensure_ascii=False, indent=2)
        with open(os.path.join(output_dir, f"{name}.txt"), "w", encoding="utf-8") as f:
            f.write(self.format() + "\n")
        logger.info(f"Таблица {name} сохранена: {output_dir}")


def variant_config(base: ModelConfig, variant: str) -> ModelConfig:
    """Конфигурация варианта абляции на основе базовой"""
    if variant not in VARIANTS:
        raise ConfigurationError(f"Неизвестный вариант '{variant}', доступны: {', '.join(VARIANTS)}")
    use_enhancer, use_aggregation = VARIANTS[variant]
    return replace(base, use_enhancer=use_enhancer, use_aggregation=use_aggregation)


def _input_row(report: MetricsReport) -> ResultRow:
    return ResultRow(INPUT_ROW, report.input_mean_ssim, report.input_mean_psnr)


def _train_and_evaluate(name: str, train_pairs, val_pairs, test_pairs, model_config: ModelConfig,
                        train_config: TrainConfig, loss_config: LossConfig, init=None,
                        extractor: Optional[PerceptualExtractor] = None,
                        output_dir: Optional[str] = None) -> Tuple[ResultRow, MetricsReport]:
    run_dir = os.path.join(output_dir, name.replace("+", "_")) if output_dir else None
    best = train(train_pairs, val_pairs, model_config, train_config, loss_config, init=init,
                 output_dir=run_dir, extractor=extractor)
    manager = ModelManager.from_checkpoint(best, train_config.device)
    report = evaluate(manager, test_pairs, model_config.fingerprint())
    if run_dir:
        report.write(run_dir)
    row = ResultRow(name, report.mean_ssim, report.mean_psnr, model_config.fingerprint(),
                    best.best_epoch, best.history)
    logger.info(f"{name}: SSIM {row.ssim:.4f}, PSNR {row.psnr:.2f} дБ (лучшая эпоха {row.best_epoch})")
    return row, report


def run_ablation(train_pairs: Sequence[ImagePair], val_pairs: Sequence[ImagePair],
                 test_pairs: Sequence[ImagePair], base_config: ModelConfig, train_config: TrainConfig,
                 loss_config: LossConfig, inits: Optional[Dict[str, Checkpoint]] = None,
                 extractor: Optional[PerceptualExtractor] = None,
                 output_dir: Optional[str] = None) -> ResultTable:
    """
    Обучение и оценка трёх вариантов с одинаковыми данными и сидами

    Args:
        inits: Чекпоинты предобучения по имени варианта (None — случайная инициализация)

    Returns:
        ResultTable: Строки Input, G, G+E, G+E+A
    """
    table = ResultTable()
    for variant in VARIANTS:
        config = variant_config(base_config, variant)
        init = None
        if inits and variant in inits:
            init = transfer_init(inits[variant], config)
        row, report = _train_and_evaluate(variant, train_pairs, val_pairs, test_pairs, config,
                                          train_config, loss_config, init, extractor, output_dir)
        if not table.rows:
            table.rows.append(_input_row(report))
        table.rows.append(row)
    if output_dir:
        table.write(output_dir, "ablation")
    return table


def compare_initializations(train_pairs: Sequence[ImagePair], val_pairs: Sequence[ImagePair],
                            test_pairs: Sequence[ImagePair], model_config: ModelConfig,
                            train_config: TrainConfig, loss_config: LossConfig,
                            strategies: Dict[str, Optional[Checkpoint]],
                            extractor: Optional[PerceptualExtractor] = None,
                            output_dir: Optional[str] = None) -> ResultTable:
    """
    Дообучение полной модели от разных начальных весов

    Args:
        strategies: Имя -> чекпоинт предобучения (None — случайная инициализация),
            например {"random": None, "synthetic": ckpt, "external": ckpt}

    Returns:
        ResultTable: Строка Input (сырой вход) и по строке на стратегию
    """
    if not strategies:
        raise ConfigurationError("Не задано ни одной стратегии инициализации")
    table = ResultTable()
    for name, checkpoint in strategies.items():
        init = transfer_init(checkpoint, model_config) if checkpoint is not None else None
        row, report = _train_and_evaluate(name, train_pairs, val_pairs, test_pairs, model_config,
                                          train_config, loss_config, init, extractor, output_dir)
        if not table.rows:
            table.rows.append(_input_row(report))
        table.rows.append(row)
    if output_dir:
        table.write(output_dir, "initializations")
    return table


def epochs_to_target(history: Sequence[Dict[str, Any]], target_psnr: float) -> Optional[int]:
    """Первая эпоха, на которой PSNR на валидации достиг цели (None — не достиг)"""
    for record in history:
        if record.get("val_psnr", float("-inf")) >= target_psnr:
            return int(record["epoch"])
    return None
