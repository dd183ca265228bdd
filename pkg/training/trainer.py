#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Состязательное обучение: шаг дискриминатора, совместный шаг генератора
и энхансера, ранняя остановка по PSNR на валидации, синтетическое
предобучение и возобновление из чекпоинта
"""

import copy
import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, fields, replace
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch.utils.data import DataLoader, Dataset
from tqdm import tqdm

from config import EPOCH_LOG_NAME
from data.dataio import ImagePair, PairDataset, image_to_tensor, normalize
from data.synth_rain import RainConfig, SyntheticPairDataset, synthesize_pairs
from evaluation.evalbench import evaluate
from models.losses import (LossConfig, PerceptualExtractor, adversarial_g_loss,
                           discriminator_loss, feature_matching_loss, fidelity_loss,
                           perceptual_loss, total_generator_loss)
from models.model_core import Networks, build_networks
from models.model_data import ModelConfig, NetworkWeights
from models.model_manager import ModelManager
from training.checkpoint import Checkpoint
from utils.errors import (ConfigurationError, ConfigValidationError, IncompatibleCheckpointError,
                          NonFiniteLossError, ShapeError)
from utils.system_check import resolve_device

logger = logging.getLogger("Trainer")

Batch = Dict[str, Any]
Validator = Callable[[Networks, int], Dict[str, float]]


@dataclass
class TrainConfig:
    """Параметры цикла обучения"""

    learning_rate: float = 2e-4
    betas: Tuple[float, float] = (0.5, 0.999)
    batch_size: int = 8
    max_epochs: int = 200
    patience: int = 10
    crop_size: int = 256
    flip: bool = True
    seed: int = 0
    num_workers: int = 0
    device: str = "auto"
    validation_ratio: float = 0.1
    pretrain_epochs: int = 20
    progress: bool = True

    def __post_init__(self):
        self.betas = tuple(float(b) for b in self.betas)

    def validate(self) -> List[str]:
        problems = []
        if not self.learning_rate > 0:
            problems.append("learning_rate: должно быть > 0")
        if len(self.betas) != 2 or not all(0.0 <= b < 1.0 for b in self.betas):
            problems.append("betas: ожидается пара значений из [0, 1)")
        for name in ("batch_size", "max_epochs", "patience", "crop_size", "pretrain_epochs"):
            if getattr(self, name) < 1:
                problems.append(f"{name}: должно быть >= 1")
        if self.patience > self.max_epochs:
            problems.append(f"patience: {self.patience} больше max_epochs={self.max_epochs}")
        if self.num_workers < 0:
            problems.append("num_workers: не может быть отрицательным")
        if not 0.0 < self.validation_ratio < 1.0:
            problems.append("validation_ratio: ожидается значение из (0, 1)")
        return problems

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["betas"] = list(self.betas)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"Неизвестные параметры обучения: {', '.join(sorted(unknown))}")
        return cls(**data)


class EarlyStopping:
    """Ранняя остановка: улучшение — строго больший показатель, эпохи нумеруются с 1"""

    def __init__(self, patience: int, best_metric: float = -math.inf, best_epoch: int = 0):
        self.patience = patience
        self.best_metric = best_metric
        self.best_epoch = best_epoch

    def update(self, metric: float, epoch: int) -> bool:
        """Учёт показателя эпохи; True, если это новый лучший"""
        if not math.isnan(metric) and metric > self.best_metric:
            self.best_metric = metric
            self.best_epoch = epoch
            return True
        return False

    def should_stop(self, epoch: int) -> bool:
        return self.best_epoch > 0 and epoch - self.best_epoch >= self.patience


def simulate_early_stopping(metrics: Sequence[float], patience: int, max_epochs: int) -> Tuple[int, int]:
    """
    Прогон правила остановки по готовой последовательности показателей

    Returns:
        tuple: (эпоха остановки, лучшая эпоха)
    """
    stopper = EarlyStopping(patience)
    epoch = 0
    for epoch in range(1, min(max_epochs, len(metrics)) + 1):
        stopper.update(metrics[epoch - 1], epoch)
        if stopper.should_stop(epoch):
            break
    return epoch, stopper.best_epoch


def check_configs(model_config: ModelConfig, train_config: TrainConfig, loss_config: LossConfig):
    """Проверка всех конфигураций с перечнем всех проблем сразу"""
    problems = model_config.validate() + train_config.validate()
    problems += loss_config.validate(model_config.discriminator_layers)
    multiple = 32 if model_config.use_enhancer else 4
    if train_config.crop_size % multiple:
        problems.append(f"crop_size: {train_config.crop_size} не кратен {multiple}")
    if train_config.crop_size < model_config.patch_receptive_field:
        problems.append(f"crop_size: меньше рецептивного поля {model_config.patch_receptive_field}")
    if problems:
        raise ConfigValidationError(problems)


def collate_pairs(pairs: Sequence[ImagePair]) -> Batch:
    """Батч из пар в пространстве модели"""
    shapes = {p.affected.shape for p in pairs} | {p.clean.shape for p in pairs}
    if len(shapes) != 1:
        raise ShapeError(f"Пары батча имеют разные формы: {sorted(shapes)}")
    return {
        "affected": torch.stack([image_to_tensor(normalize(p.affected)) for p in pairs]),
        "clean": torch.stack([image_to_tensor(normalize(p.clean)) for p in pairs]),
        "id": [p.id for p in pairs],
    }


class Trainer:
    """Состязательное обучение G+E против D"""

    def __init__(self, model_config: ModelConfig, train_config: TrainConfig, loss_config: LossConfig,
                 init: Optional[NetworkWeights] = None, extractor: Optional[PerceptualExtractor] = None):
        """
        Инициализация обучения

        Args:
            model_config: Архитектура
            train_config: Параметры цикла
            loss_config: Параметры целевой функции
            init: Начальные веса (transfer_init); None — случайная инициализация по seed
            extractor: Готовый экстрактор VGG19; загружается, если вес перцептивной потери > 0
        """
        check_configs(model_config, train_config, loss_config)
        self.model_config = model_config
        self.train_config = train_config
        self.loss_config = loss_config
        self.device = resolve_device(train_config.device)

        self.networks = build_networks(model_config, train_config.seed)
        if init is not None:
            self.networks.load_state_dict(init)
        self.networks.to(self.device)

        if extractor is None and loss_config.weight("vgg") > 0:
            extractor = PerceptualExtractor.load(loss_config.perceptual_weights, loss_config.perceptual_layers,
                                                 loss_config.perceptual_weights_url)
        self.extractor = extractor.to(self.device) if extractor is not None else None

        self.g_optimizer = torch.optim.Adam(self.networks.restoration_parameters(),
                                            lr=train_config.learning_rate, betas=train_config.betas)
        self.d_optimizer = torch.optim.Adam(self.networks.discriminator.parameters(),
                                            lr=train_config.learning_rate, betas=train_config.betas)

    @staticmethod
    def _set_requires_grad(module: torch.nn.Module, flag: bool):
        for param in module.parameters():
            param.requires_grad_(flag)

    def _prepare(self, batch) -> Tuple[torch.Tensor, torch.Tensor, List[str]]:
        if not isinstance(batch, dict):
            batch = collate_pairs(batch)
        affected, clean = batch["affected"], batch["clean"]
        if affected.shape != clean.shape:
            raise ShapeError(f"Батч: формы {tuple(affected.shape)} и {tuple(clean.shape)} различаются")
        ids = list(batch.get("id", []))
        return affected.to(self.device), clean.to(self.device), ids

    def train_discriminator_step(self, batch) -> float:
        """
        Один шаг дискриминатора на (C, G(A)); G не получает градиентов

        Returns:
            float: Потеря дискриминатора
        """
        affected, clean, ids = self._prepare(batch)
        discriminator = self.networks.discriminator
        self._set_requires_grad(discriminator, True)

        with torch.no_grad():
            generated = self.networks.generator(affected)
        real_scores, _ = discriminator(clean)
        fake_scores, _ = discriminator(generated)
        loss = discriminator_loss(real_scores, fake_scores)

        value = float(loss.detach())
        if not math.isfinite(value):
            logger.error(f"Неконечная потеря дискриминатора на батче {ids}")
            raise NonFiniteLossError("d", value, ids)

        self.d_optimizer.zero_grad(set_to_none=True)
        loss.backward()
        self.d_optimizer.step()
        return value

    def train_generator_step(self, batch) -> Dict[str, float]:
        """
        Совместный шаг генератора и энхансера; D заморожен

        Returns:
            dict: Слагаемые gan, fm, vgg, fid и итог total
        """
        affected, clean, ids = self._prepare(batch)
        discriminator = self.networks.discriminator
        self._set_requires_grad(discriminator, False)
        try:
            enhanced, generated = self.networks.restore(affected)
            fake_scores, fake_features = discriminator(generated)
            with torch.no_grad():
                _, real_features = discriminator(clean)

            zero = generated.new_zeros(())
            gan = adversarial_g_loss(fake_scores)
            fm = feature_matching_loss(real_features, fake_features, self.loss_config)
            if self.loss_config.weight("vgg") > 0:
                vgg = perceptual_loss(clean, enhanced, self.extractor, self.loss_config)
            else:
                vgg = zero
            fid = fidelity_loss(clean, enhanced)

            try:
                total = total_generator_loss(gan, fm, vgg, fid, self.loss_config)
            except NonFiniteLossError as e:
                raise NonFiniteLossError(e.term, e.value, ids) from e

            if isinstance(total, torch.Tensor) and total.requires_grad:
                self.g_optimizer.zero_grad(set_to_none=True)
                total.backward()
                self.g_optimizer.step()
        finally:
            self._set_requires_grad(discriminator, True)

        return {"gan": float(gan), "fm": float(fm), "vgg": float(vgg), "fid": float(fid), "total": float(total)}

    def validate(self, pairs: Sequence[ImagePair]) -> Dict[str, float]:
        """PSNR и SSIM на валидационных парах"""
        report = evaluate(ModelManager(self.networks, self.device), pairs, self.model_config.fingerprint())
        return {"psnr": report.mean_psnr, "ssim": report.mean_ssim}

    def checkpoint(self, epoch: int, stopper: EarlyStopping, history: List[Dict[str, Any]]) -> Checkpoint:
        """Снимок текущего состояния (копии тензоров на CPU)"""
        def snapshot(state):
            return {k: v.detach().cpu().clone() for k, v in state.items()}

        return Checkpoint(
            model_config=self.model_config,
            restoration_state=snapshot(self.networks.component_state("generator", "enhancer")),
            discriminator_state=snapshot(self.networks.component_state("discriminator")),
            optimizer_state={"g": copy.deepcopy(self.g_optimizer.state_dict()),
                             "d": copy.deepcopy(self.d_optimizer.state_dict())},
            epoch=epoch,
            best_metric=stopper.best_metric,
            best_epoch=stopper.best_epoch,
            history=[dict(record) for record in history],
        )

    def load_checkpoint(self, checkpoint: Checkpoint):
        """Восстановление весов и состояний оптимизаторов"""
        differing = checkpoint.model_config.diff(self.model_config)
        if differing:
            raise IncompatibleCheckpointError(differing)
        self.networks.load_state_dict(checkpoint.network_state())
        if checkpoint.optimizer_state:
            self.g_optimizer.load_state_dict(checkpoint.optimizer_state["g"])
            self.d_optimizer.load_state_dict(checkpoint.optimizer_state["d"])

    def _loader(self, dataset: Dataset, epoch: int) -> DataLoader:
        if hasattr(dataset, "set_epoch"):
            dataset.set_epoch(epoch)
        generator = torch.Generator().manual_seed(self.train_config.seed * 1000003 + epoch)
        return DataLoader(dataset, batch_size=self.train_config.batch_size, shuffle=True,
                          num_workers=self.train_config.num_workers, generator=generator)

    def fit(self, train_set, val_set: Sequence[ImagePair], output_dir: Optional[str] = None,
            validator: Optional[Validator] = None, resume_from: Optional[str] = None) -> Checkpoint:
        """
        Цикл обучения с ранней остановкой

        Args:
            train_set: Обучающие пары или готовый Dataset
            val_set: Валидационные пары
            output_dir: Директория для best/, last/ и журнала эпох (None — без записи)
            validator: Замена валидации: (networks, epoch) -> {"psnr": ..., "ssim": ...}
            resume_from: Директория предыдущего запуска (с last/ и best/)

        Returns:
            Checkpoint: Лучший по PSNR чекпоинт с полной историей
        """
        if len(train_set) == 0 or (validator is None and len(val_set) == 0):
            raise ConfigurationError("Обучающая и валидационная выборки не должны быть пустыми")

        cfg = self.train_config
        dataset = train_set if isinstance(train_set, Dataset) else PairDataset(
            train_set, cfg.crop_size, cfg.seed, cfg.flip)
        if validator is None:
            def validator(networks, epoch):
                return self.validate(val_set)

        stopper = EarlyStopping(cfg.patience)
        history: List[Dict[str, Any]] = []
        best: Optional[Checkpoint] = None
        start_epoch = 1

        if resume_from:
            last = Checkpoint.load(os.path.join(resume_from, "last"))
            self.load_checkpoint(last)
            history = list(last.history)
            stopper = EarlyStopping(cfg.patience, last.best_metric, last.best_epoch)
            if last.best_epoch > 0:
                best = Checkpoint.load(os.path.join(resume_from, "best"))
            start_epoch = last.epoch + 1
            logger.info(f"Возобновление с эпохи {start_epoch} (лучшая эпоха {last.best_epoch})")
            if stopper.should_stop(last.epoch):
                start_epoch = cfg.max_epochs + 1

        epoch_log = None
        if output_dir:
            os.makedirs(output_dir, exist_ok=True)
            epoch_log = os.path.join(output_dir, EPOCH_LOG_NAME)

        for epoch in range(start_epoch, cfg.max_epochs + 1):
            started = time.perf_counter()
            self.networks.train()
            totals: Dict[str, float] = {}
            batches = 0
            for batch in tqdm(self._loader(dataset, epoch), desc=f"Эпоха {epoch}",
                              leave=False, disable=not cfg.progress):
                losses = {"d": self.train_discriminator_step(batch)}
                losses.update(self.train_generator_step(batch))
                for name, value in losses.items():
                    totals[name] = totals.get(name, 0.0) + value
                batches += 1

            self.networks.eval()
            metrics = validator(self.networks, epoch)
            improved = stopper.update(metrics["psnr"], epoch)

            record = {"epoch": epoch}
            record.update({name: value / max(batches, 1) for name, value in totals.items()})
            record.update({"val_psnr": metrics["psnr"], "val_ssim": metrics.get("ssim", math.nan),
                           "wall_time": time.perf_counter() - started})
            history.append(record)
            logger.info(f"Эпоха {epoch}: D {record.get('d', math.nan):.4f}, G {record.get('total', math.nan):.4f}, "
                        f"PSNR {metrics['psnr']:.2f} дБ" + (" (лучшая)" if improved else ""))

            if epoch_log:
                with open(epoch_log, "a", encoding="utf-8") as f:
                    f.write(json.dumps(record, ensure_ascii=False) + "\n")

            if improved:
                best = self.checkpoint(epoch, stopper, history)
                if output_dir:
                    best.save(os.path.join(output_dir, "best"))
            if output_dir:
                self.checkpoint(epoch, stopper, history).save(os.path.join(output_dir, "last"))

            if stopper.should_stop(epoch):
                logger.info(f"Ранняя остановка на эпохе {epoch}: нет улучшения {cfg.patience} эпох "
                            f"(лучшая {stopper.best_epoch}, PSNR {stopper.best_metric:.2f} дБ)")
                break

        if best is None:
            best = self.checkpoint(start_epoch - 1, stopper, history)
        best.history = [dict(record) for record in history]
        best.best_metric = stopper.best_metric
        best.best_epoch = stopper.best_epoch
        return best


def train(train_set, val_set: Sequence[ImagePair], model_config: ModelConfig, train_config: TrainConfig,
          loss_config: LossConfig, init: Optional[NetworkWeights] = None, output_dir: Optional[str] = None,
          validator: Optional[Validator] = None, resume_from: Optional[str] = None,
          extractor: Optional[PerceptualExtractor] = None) -> Checkpoint:
    """Обучение с нуля или от начальных весов; возвращает лучший чекпоинт"""
    trainer = Trainer(model_config, train_config, loss_config, init, extractor)
    return trainer.fit(train_set, val_set, output_dir, validator, resume_from)


def pretrain_synthetic(clean_images: Sequence[np.ndarray], rain_config: RainConfig, model_config: ModelConfig,
                       train_config: TrainConfig, loss_config: LossConfig, output_dir: Optional[str] = None,
                       validator: Optional[Validator] = None, resume_from: Optional[str] = None,
                       extractor: Optional[PerceptualExtractor] = None) -> Checkpoint:
    """
    Предобучение на синтетических каплях: обучающие пары синтезируются на лету
    (новые сиды каждую эпоху), валидационные — фиксированы

    Args:
        clean_images: Чистые изображения H×W×C из [0, 1]
        rain_config: Распределения параметров капель

    Returns:
        Checkpoint: Лучший чекпоинт (совместим с обучением на реальных данных)
    """
    if not clean_images:
        raise ConfigurationError("Корпус чистых изображений пуст")
    rain_config.check()

    order = np.random.default_rng(train_config.seed).permutation(len(clean_images))
    n_val = max(1, int(round(train_config.validation_ratio * len(clean_images))))
    if len(clean_images) > 1:
        n_val = min(n_val, len(clean_images) - 1)
        val_images = [clean_images[i] for i in order[:n_val]]
        train_images = [clean_images[i] for i in order[n_val:]]
    else:
        val_images = train_images = list(clean_images)

    dataset = SyntheticPairDataset(train_images, rain_config, train_config.crop_size,
                                   train_config.seed, train_config.flip)
    val_pairs = synthesize_pairs(val_images, rain_config, seed=rain_config.seed + 1)
    config = replace(train_config, max_epochs=train_config.pretrain_epochs,
                     patience=min(train_config.patience, train_config.pretrain_epochs))
    logger.info(f"Синтетическое предобучение: {len(train_images)} изображений, "
                f"{len(val_pairs)} на валидации, {config.max_epochs} эпох")
    return train(dataset, val_pairs, model_config, config, loss_config, output_dir=output_dir,
                 validator=validator, resume_from=resume_from, extractor=extractor)
