#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Синтез расфокусированных капель дождя на стекле поверх чистых изображений.

Капля — мягкий вертикальный эллипс; внутри неё фон «преломляется»
(увеличенная перевёрнутая выборка), расфокус имитируется усреднением
нескольких случайных сдвигов, часть капель дополнительно осветляется.
Все изображения — float H×W×C из [0, 1].
"""

import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from typing import Any, Dict, List, Optional, Sequence, Tuple

import cv2
import numpy as np
from torch.utils.data import Dataset

from config import SYNTH_MANIFEST_NAME
from data.dataio import (ImagePair, augment, image_bit_depth, image_to_tensor, list_images,
                         normalize, read_image, write_image)
from utils.errors import ConfigurationError, ImageIOError

logger = logging.getLogger("SynthRain")

# Ширина мягкой границы капли в долях радиуса
EDGE_FRACTION = 0.15
# Запас вокруг капли под размытие края маски
RIM_MARGIN = 3

Bounds = Tuple[int, int, int, int]


@dataclass
class DropSpec:
    """Геометрия и фотометрия одной капли"""

    center: Tuple[float, float]
    radius: float
    elongation: float = 1.0
    magnification: float = 1.5
    shift_count: int = 1
    shift_magnitude: float = 0.0
    brightness_factor: float = 1.0


@dataclass
class RainConfig:
    """Распределения параметров капель для корпуса"""

    drops_per_image: Tuple[int, int] = (3, 12)
    radius_range: Tuple[float, float] = (4.0, 24.0)
    elongation_range: Tuple[float, float] = (1.0, 1.6)
    magnification_range: Tuple[float, float] = (1.2, 2.0)
    shift_count_range: Tuple[int, int] = (4, 10)
    shift_magnitude_range: Tuple[float, float] = (1.0, 4.0)
    brightness_probability: float = 0.3
    brightness_range: Tuple[float, float] = (1.05, 1.3)
    rim_sigma: float = 0.8
    seed: int = 0

    RANGE_FIELDS = ("drops_per_image", "radius_range", "elongation_range", "magnification_range",
                    "shift_count_range", "shift_magnitude_range", "brightness_range")

    def __post_init__(self):
        for name in self.RANGE_FIELDS:
            setattr(self, name, tuple(getattr(self, name)))

    def validate(self) -> List[str]:
        problems = []
        for name in self.RANGE_FIELDS:
            value = getattr(self, name)
            if len(value) != 2 or not all(math.isfinite(v) for v in value) or value[0] > value[1]:
                problems.append(f"{name}: ожидается конечный непустой диапазон [min, max], получено {value}")
        if problems:
            return problems
        if self.drops_per_image[0] < 0:
            problems.append("drops_per_image: число капель не может быть отрицательным")
        if self.radius_range[0] <= 0:
            problems.append("radius_range: радиус должен быть положительным")
        if self.elongation_range[0] < 1.0:
            problems.append("elongation_range: вытянутость должна быть >= 1")
        if self.magnification_range[0] <= 1.0:
            problems.append("magnification_range: увеличение должно быть > 1")
        if self.shift_count_range[0] < 1:
            problems.append("shift_count_range: число сдвигов должно быть >= 1")
        if self.shift_magnitude_range[0] < 0:
            problems.append("shift_magnitude_range: величина сдвига не может быть отрицательной")
        if not 0.0 <= self.brightness_probability <= 1.0:
            problems.append("brightness_probability: ожидается значение из [0, 1]")
        if self.brightness_range[0] < 1.0:
            problems.append("brightness_range: коэффициент яркости должен быть >= 1")
        if self.rim_sigma < 0:
            problems.append("rim_sigma: не может быть отрицательным")
        return problems

    def check(self):
        problems = self.validate()
        if problems:
            logger.error(f"Некорректная конфигурация синтеза: {problems}")
            raise ConfigurationError("; ".join(problems))

    def to_dict(self) -> Dict[str, Any]:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"Неизвестные параметры синтеза: {', '.join(sorted(unknown))}")
        return cls(**data)


def sample_drop_field(config: RainConfig, width: int, height: int,
                      rng: np.random.Generator) -> List[DropSpec]:
    """
    Случайный набор капель для изображения width×height

    Returns:
        list: Независимо сэмплированные DropSpec
    """
    count = int(rng.integers(config.drops_per_image[0], config.drops_per_image[1] + 1))
    drops = []
    for _ in range(count):
        center = (float(rng.uniform(0, width)), float(rng.uniform(0, height)))
        radius = float(rng.uniform(*config.radius_range))
        elongation = float(rng.uniform(*config.elongation_range))
        magnification = float(rng.uniform(*config.magnification_range))
        shift_count = int(rng.integers(config.shift_count_range[0], config.shift_count_range[1] + 1))
        shift_magnitude = float(rng.uniform(*config.shift_magnitude_range))
        brightness = 1.0
        if rng.random() < config.brightness_probability:
            brightness = float(rng.uniform(*config.brightness_range))
        drops.append(DropSpec(center, radius, elongation, magnification,
                              shift_count, shift_magnitude, brightness))
    return drops


def drop_bounds(drop: DropSpec, width: int, height: int, margin: int = RIM_MARGIN) -> Bounds:
    """Ограничивающий прямоугольник (y0, y1, x0, x1) расширенного носителя капли, обрезанный по кадру"""
    cx, cy = drop.center
    rx = drop.radius * (1.0 + EDGE_FRACTION / 2)
    ry = drop.radius * drop.elongation * (1.0 + EDGE_FRACTION / 2)
    x0 = max(0, int(math.floor(cx - rx)) - margin)
    x1 = min(width, int(math.ceil(cx + rx)) + margin + 1)
    y0 = max(0, int(math.floor(cy - ry)) - margin)
    y1 = min(height, int(math.ceil(cy + ry)) + margin + 1)
    return y0, y1, x0, x1


def _is_empty(bounds: Bounds) -> bool:
    y0, y1, x0, x1 = bounds
    return y0 >= y1 or x0 >= x1


def _drop_alpha(drop: DropSpec, bounds: Bounds) -> np.ndarray:
    y0, y1, x0, x1 = bounds
    cx, cy = drop.center
    ys, xs = np.mgrid[y0:y1, x0:x1].astype(np.float64)
    distance = np.sqrt(((xs - cx) / drop.radius) ** 2 + ((ys - cy) / (drop.radius * drop.elongation)) ** 2)
    inner, outer = 1.0 - EDGE_FRACTION / 2, 1.0 + EDGE_FRACTION / 2
    t = np.clip((outer - distance) / (outer - inner), 0.0, 1.0)
    return (t * t * (3.0 - 2.0 * t)).astype(np.float32)


def render_drop_mask(drop: DropSpec, width: int, height: int) -> np.ndarray:
    """
    Альфа-маска капли: эллипс с плавной (smoothstep) границей шириной ~15% радиуса

    Returns:
        np.ndarray: Маска height×width из [0, 1], ровно 0 вне расширенного носителя
    """
    alpha = np.zeros((height, width), dtype=np.float32)
    bounds = drop_bounds(drop, width, height)
    if not _is_empty(bounds):
        y0, y1, x0, x1 = bounds
        alpha[y0:y1, x0:x1] = _drop_alpha(drop, bounds)
    return alpha


def refract_fill(background: np.ndarray, drop: DropSpec, bounds: Optional[Bounds] = None) -> np.ndarray:
    """
    Заполнение капли: для пикселя p берётся фон в точке center + k·(p − center)
    с инвертированной вертикалью; координаты обрезаются по границам кадра

    Returns:
        np.ndarray: Патч по прямоугольнику drop_bounds
    """
    h, w = background.shape[:2]
    y0, y1, x0, x1 = bounds if bounds is not None else drop_bounds(drop, w, h)
    cx, cy = drop.center
    k = drop.magnification
    ys, xs = np.mgrid[y0:y1, x0:x1].astype(np.float64)
    map_x = np.clip(cx + k * (xs - cx), 0, w - 1).astype(np.float32)
    map_y = np.clip(cy - k * (ys - cy), 0, h - 1).astype(np.float32)
    patch = cv2.remap(background.astype(np.float32), map_x, map_y,
                      interpolation=cv2.INTER_LINEAR, borderMode=cv2.BORDER_REPLICATE)
    return patch.reshape(y1 - y0, x1 - x0, -1)


def defocus(fill: np.ndarray, shift_count: int, shift_magnitude: float,
            rng: np.random.Generator) -> np.ndarray:
    """
    Расфокус сдвигами: среднее K копий патча, каждая сдвинута на случайный вектор длины <= s

    Args:
        fill: Патч H×W×C
        shift_count: K >= 1
        shift_magnitude: s в пикселях
        rng: Генератор случайных чисел
    """
    if shift_count < 1:
        raise ConfigurationError(f"Число сдвигов должно быть >= 1, получено {shift_count}")
    h, w = fill.shape[:2]
    accumulator = np.zeros(fill.shape, dtype=np.float64)
    for _ in range(shift_count):
        angle = rng.uniform(0.0, 2.0 * math.pi)
        magnitude = rng.uniform(0.0, shift_magnitude)
        dx, dy = magnitude * math.cos(angle), magnitude * math.sin(angle)
        if dx == 0.0 and dy == 0.0:
            accumulator += fill
            continue
        matrix = np.float32([[1, 0, dx], [0, 1, dy]])
        shifted = cv2.warpAffine(fill.astype(np.float32), matrix, (w, h),
                                 flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_REPLICATE)
        accumulator += shifted.reshape(fill.shape)
    return (accumulator / shift_count).astype(fill.dtype)


def render_raindrops(clean: np.ndarray, config: RainConfig,
                     rng: Optional[np.random.Generator] = None):
    """
    Композитинг капель с возвратом сэмплированного поля

    Returns:
        tuple: (дождливое изображение, объединённая альфа-маска, список DropSpec)
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    h, w = clean.shape[:2]
    drops = sample_drop_field(config, w, h, rng)
    rainy = clean.copy()
    union = np.zeros((h, w), dtype=np.float32)

    # Поздние капли ложатся поверх ранних
    for drop in drops:
        bounds = drop_bounds(drop, w, h)
        if _is_empty(bounds):
            continue
        y0, y1, x0, x1 = bounds
        alpha = _drop_alpha(drop, bounds)
        if config.rim_sigma > 0:
            alpha = cv2.GaussianBlur(alpha, (0, 0), config.rim_sigma, borderType=cv2.BORDER_CONSTANT)
        fill = defocus(refract_fill(clean, drop, bounds), drop.shift_count, drop.shift_magnitude, rng)
        fill = np.clip(fill * drop.brightness_factor, 0.0, 1.0)

        region = rainy[y0:y1, x0:x1]
        a = alpha[..., None]
        blended = np.clip(a * fill + (1.0 - a) * region, 0.0, 1.0)
        rainy[y0:y1, x0:x1] = np.where(a > 0, blended, region).astype(rainy.dtype)
        covered = union[y0:y1, x0:x1]
        union[y0:y1, x0:x1] = covered + alpha * (1.0 - covered)

    return rainy, union, drops


def composite_raindrops(clean: np.ndarray, config: RainConfig,
                        rng: Optional[np.random.Generator] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Наложение капель на чистое изображение

    Args:
        clean: Изображение H×W×C из [0, 1]
        config: Конфигурация синтеза (seed используется, если rng не передан)
        rng: Генератор случайных чисел

    Returns:
        tuple: (дождливое изображение, альфа-маска H×W); вне маски пиксели не изменяются
    """
    rainy, mask, _ = render_raindrops(clean, config, rng)
    return rainy, mask


def image_seed(seed: int, index: int) -> int:
    """Сид изображения корпуса, не зависящий от порядка обработки"""
    return int(seed) ^ int(index)


def synthesize_pairs(images: Sequence[np.ndarray], config: RainConfig, ids: Optional[Sequence[str]] = None,
                     seed: Optional[int] = None) -> List[ImagePair]:
    """Фиксированный набор синтетических пар (например, для валидации)"""
    base = config.seed if seed is None else seed
    pairs = []
    for index, clean in enumerate(images):
        rainy, _, _ = render_raindrops(clean, config, np.random.default_rng(image_seed(base, index)))
        pair_id = ids[index] if ids is not None else f"syn{index:05d}"
        pairs.append(ImagePair(rainy, clean, pair_id, source="synthetic"))
    return pairs


def synthesize_corpus(input_dir: str, output_dir: str, config: RainConfig,
                      workers: int = 4) -> List[Dict[str, Any]]:
    """
    Синтез корпуса: для каждого изображения — дождливая версия, маска, копия эталона
    и строка манифеста (источник, сид, число капель)

    Returns:
        list: Записи манифеста в порядке входных файлов
    """
    config.check()
    files = list_images(input_dir)
    if not files:
        logger.error(f"Изображения не найдены в {input_dir}")
        raise ImageIOError(f"Изображения не найдены (no images found): {input_dir}")
    os.makedirs(output_dir, exist_ok=True)

    def process(item):
        index, filename = item
        source = os.path.join(input_dir, filename)
        seed = image_seed(config.seed, index)
        clean = read_image(source)
        rainy, mask, drops = render_raindrops(clean, config, np.random.default_rng(seed))
        stem = os.path.splitext(filename)[0]
        record = {
            "source": source,
            "seed": seed,
            "drops": len(drops),
            "rainy": f"{stem}_rain.png",
            "mask": f"{stem}_mask.png",
            "clean": f"{stem}_clean.png",
        }
        depth = image_bit_depth(source)
        write_image(os.path.join(output_dir, record["rainy"]), rainy, depth)
        write_image(os.path.join(output_dir, record["mask"]), mask[..., None])
        write_image(os.path.join(output_dir, record["clean"]), clean, depth)
        logger.debug(f"{filename}: {len(drops)} капель, seed={seed}")
        return record

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        records = list(pool.map(process, enumerate(files)))

    with open(os.path.join(output_dir, SYNTH_MANIFEST_NAME), "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record, ensure_ascii=False) + "\n")

    logger.info(f"Синтезировано {len(records)} изображений в {output_dir}")
    return records


class SyntheticPairDataset(Dataset):
    """Пары, синтезируемые на лету; сиды меняются от эпохи к эпохе"""

    def __init__(self, images: Sequence[np.ndarray], config: RainConfig,
                 crop_size: Optional[int] = None, seed: int = 0, flip: bool = True):
        config.check()
        self.images = list(images)
        self.config = config
        self.crop_size = crop_size
        self.seed = seed
        self.flip = flip
        self.epoch = 0

    def set_epoch(self, epoch: int):
        self.epoch = epoch

    def __len__(self):
        return len(self.images)

    def get_pair(self, index: int) -> ImagePair:
        rng = np.random.default_rng([self.seed, self.config.seed, self.epoch, index])
        clean = self.images[index]
        if self.crop_size:
            clean = augment(ImagePair(clean, clean, str(index)), self.crop_size, rng, self.flip).clean
        rainy, _, _ = render_raindrops(clean, self.config, rng)
        return ImagePair(rainy, clean, f"syn{index:05d}", source="synthetic")

    def __getitem__(self, index):
        pair = self.get_pair(index)
        return {
            "affected": image_to_tensor(normalize(pair.affected)),
            "clean": image_to_tensor(normalize(pair.clean)),
            "id": pair.id,
        }
