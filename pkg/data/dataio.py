#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Загрузка парных датасетов (искажённое / чистое изображение), нормализация,
разбиение, паддинг и аугментация
"""

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import cv2
import numpy as np
import torch
import torch.nn.functional as F
from torch.utils.data import Dataset

from config import IMAGE_EXTENSIONS
from utils.errors import (ChannelError, ConfigurationError, ImageIOError,
                          PairingError, ShapeError)

logger = logging.getLogger("DataIO")

SOURCES = ("real", "synthetic")


@dataclass
class ImagePair:
    """Пара: изображение с аномалией и попиксельно выровненный чистый эталон (H×W×C, [0, 1])"""

    affected: np.ndarray
    clean: np.ndarray
    id: str
    source: str = "real"
    anomaly: str = "rain"

    def __post_init__(self):
        if self.affected.shape != self.clean.shape:
            raise ShapeError(f"Пара {self.id}: формы {self.affected.shape} и {self.clean.shape} различаются")


@dataclass
class DatasetManifest:
    """Описание корпуса: корень, правило сопоставления файлов и режим каналов"""

    root: str
    affected_token: str = "_rain"
    clean_token: str = "_clean"
    affected_dir: str = ""
    clean_dir: str = ""
    channels: int = 3
    declared_size: Optional[int] = None
    source: str = "real"
    anomaly: str = "rain"

    def validate(self) -> List[str]:
        problems = []
        if not self.root:
            problems.append("root: путь к датасету не задан")
        if self.channels not in (1, 3):
            problems.append(f"channels: ожидается 1 или 3, получено {self.channels}")
        if not self.affected_token or not self.clean_token:
            problems.append("affected_token/clean_token: не могут быть пустыми")
        elif self.affected_token == self.clean_token and self.affected_dir == self.clean_dir:
            problems.append("clean_token: совпадает с affected_token в одной директории")
        if self.source not in SOURCES:
            problems.append(f"source: ожидается одно из {SOURCES}")
        if self.declared_size is not None and self.declared_size < 0:
            problems.append("declared_size: не может быть отрицательным")
        return problems

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "DatasetManifest":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"Неизвестные параметры датасета: {', '.join(sorted(unknown))}")
        return cls(**data)

    @classmethod
    def load(cls, path: str) -> "DatasetManifest":
        """Загрузка манифеста из JSON; относительный root считается от файла манифеста"""
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except (OSError, ValueError) as e:
            logger.error(f"Ошибка при чтении манифеста {path}: {str(e)}")
            raise ImageIOError(f"Не удалось прочитать манифест {path}: {str(e)}")
        manifest = cls.from_dict(data)
        if not os.path.isabs(manifest.root):
            manifest.root = os.path.join(os.path.dirname(os.path.abspath(path)), manifest.root)
        return manifest


@dataclass(frozen=True)
class CropRecord:
    """Поля паддинга, добавленные pad_to_multiple"""

    top: int = 0
    bottom: int = 0
    left: int = 0
    right: int = 0

    @property
    def is_empty(self) -> bool:
        return not (self.top or self.bottom or self.left or self.right)


def _decode(path: str) -> np.ndarray:
    """Сырые пиксели файла: uint8 или uint16, H×W или H×W×C в порядке RGB"""
    try:
        data = cv2.imdecode(np.fromfile(path, dtype=np.uint8), cv2.IMREAD_UNCHANGED)
    except (OSError, ValueError, cv2.error) as e:
        logger.error(f"Ошибка при чтении изображения {path}: {str(e)}")
        raise ImageIOError(f"Не удалось прочитать изображение {path}: {str(e)}")
    if data is None:
        logger.error(f"Файл не декодируется как изображение: {path}")
        raise ImageIOError(f"Не удалось декодировать изображение {path}")
    if data.dtype not in (np.uint8, np.uint16):
        raise ImageIOError(f"Неподдерживаемый тип пикселей {data.dtype}: {path}")
    if data.ndim == 3:
        if data.shape[2] == 4:
            data = cv2.cvtColor(data, cv2.COLOR_BGRA2RGB)
        elif data.shape[2] == 3:
            data = cv2.cvtColor(data, cv2.COLOR_BGR2RGB)
    return data


def read_image(path: str, channels: Optional[int] = None) -> np.ndarray:
    """
    Чтение изображения без потерь в float32 H×W×C из [0, 1]

    Args:
        path: Путь к файлу (8 или 16 бит, 1 или 3 канала; альфа-канал отбрасывается)
        channels: Требуемое число каналов (None — без проверки)
    """
    data = _decode(path)
    scale = 65535.0 if data.dtype == np.uint16 else 255.0
    image = data.astype(np.float32) / scale

    if image.ndim == 2:
        image = image[..., None]
    if channels is not None and image.shape[2] != channels:
        logger.error(f"Изображение {path} имеет {image.shape[2]} канал(а), ожидалось {channels}")
        raise ChannelError(f"Изображение {path}: {image.shape[2]} канал(а), режим датасета {channels}")
    return image


def image_bit_depth(path: str) -> int:
    """Разрядность файла изображения (8 или 16)"""
    return 16 if _decode(path).dtype == np.uint16 else 8


def write_image(path: str, image: np.ndarray, bit_depth: int = 8):
    """
    Запись изображения без потерь

    Args:
        path: Путь к файлу (формат по расширению; 16 бит — PNG или TIFF)
        image: Массив H×W×C из [0, 1]
        bit_depth: 8 или 16
    """
    if bit_depth not in (8, 16):
        raise ImageIOError(f"Разрядность {bit_depth} не поддерживается: {path}")
    data = np.clip(image, 0.0, 1.0)
    if data.ndim == 3 and data.shape[2] == 1:
        data = data[..., 0]
    if bit_depth == 16:
        data = np.round(data * 65535.0).astype(np.uint16)
    else:
        data = np.round(data * 255.0).astype(np.uint8)
    if data.ndim == 3:
        data = cv2.cvtColor(data, cv2.COLOR_RGB2BGR)
    extension = os.path.splitext(path)[1].lower() or ".png"
    try:
        ok, buffer = cv2.imencode(extension, data)
        if not ok:
            raise ValueError(f"кодек {extension} отказал для {bit_depth} бит")
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        buffer.tofile(path)
    except (OSError, ValueError, cv2.error) as e:
        logger.error(f"Ошибка при записи изображения {path}: {str(e)}")
        raise ImageIOError(f"Не удалось записать изображение {path}: {str(e)}")


def list_images(directory: str) -> List[str]:
    """Файлы изображений без потерь в директории (отсортированные имена)"""
    if not os.path.isdir(directory):
        return []
    return sorted(f for f in os.listdir(directory)
                  if os.path.splitext(f)[1].lower() in IMAGE_EXTENSIONS)


def _index_files(directory: str, token: str, other_token: str, same_dir: bool,
                 unmatched: List[str]) -> Dict[str, str]:
    index, duplicates = {}, []
    for filename in list_images(directory):
        stem = os.path.splitext(filename)[0]
        path = os.path.join(directory, filename)
        if token not in stem:
            # В общей директории файл партнёра учитывается при индексации партнёров
            if not (same_dir and other_token in stem):
                unmatched.append(path)
            continue
        pair_id = stem.replace(token, "", 1)
        if pair_id in index:
            duplicates.append(path)
        index[pair_id] = path
    unmatched.extend(duplicates)
    return index


def pair_files(manifest: DatasetManifest) -> List[Tuple[str, str, str]]:
    """
    Сопоставление файлов по правилу манифеста

    Returns:
        list: Кортежи (id, путь к искажённому, путь к чистому), отсортированные по id
    """
    if not os.path.isdir(manifest.root):
        logger.error(f"Директория датасета не найдена: {manifest.root}")
        raise ImageIOError(f"Директория датасета не найдена: {manifest.root}")

    affected_root = os.path.join(manifest.root, manifest.affected_dir)
    clean_root = os.path.join(manifest.root, manifest.clean_dir)
    same_dir = os.path.abspath(affected_root) == os.path.abspath(clean_root)

    unmatched: List[str] = []
    affected = _index_files(affected_root, manifest.affected_token, manifest.clean_token, same_dir, unmatched)
    clean = _index_files(clean_root, manifest.clean_token, manifest.affected_token, same_dir, unmatched)

    orphans = set(unmatched)
    orphans.update(path for pair_id, path in affected.items() if pair_id not in clean)
    orphans.update(path for pair_id, path in clean.items() if pair_id not in affected)
    if orphans:
        logger.error(f"Найдено файлов без пары: {len(orphans)}")
        raise PairingError(orphans)

    return [(pair_id, affected[pair_id], clean[pair_id]) for pair_id in sorted(affected)]


def load_paired_dataset(manifest: DatasetManifest, workers: int = 4) -> List[ImagePair]:
    """
    Загрузка всех пар корпуса

    Args:
        manifest: Описание корпуса
        workers: Число потоков декодирования

    Returns:
        list: Пары изображений в [0, 1]
    """
    problems = manifest.validate()
    if problems:
        raise ConfigurationError("; ".join(problems))

    entries = pair_files(manifest)
    if manifest.declared_size is not None and manifest.declared_size != len(entries):
        raise ConfigurationError(
            f"declared_size: заявлено {manifest.declared_size} пар, найдено {len(entries)}")

    def decode(entry):
        pair_id, affected_path, clean_path = entry
        affected = read_image(affected_path, manifest.channels)
        clean = read_image(clean_path, manifest.channels)
        if affected.shape != clean.shape:
            raise ShapeError(f"Пара {pair_id}: формы {affected.shape} и {clean.shape} различаются")
        return ImagePair(affected, clean, pair_id, manifest.source, manifest.anomaly)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        pairs = list(pool.map(decode, entries))

    logger.info(f"Загружено {len(pairs)} пар из {manifest.root}")
    return pairs


def split_dataset(pairs: Sequence[ImagePair], ratios: Sequence[float] = (0.8, 0.1, 0.1),
                  seed: int = 0) -> Tuple[List[ImagePair], List[ImagePair], List[ImagePair]]:
    """
    Детерминированное перемешанное разбиение на train / val / test

    Returns:
        tuple: (train, val, test), непересекающиеся, в объединении — исходный набор
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-6:
        raise ConfigurationError(f"Доли разбиения {tuple(ratios)} должны быть неотрицательны и давать в сумме 1")
    n = len(pairs)
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(round(ratios[0] * n))
    n_val = min(int(round(ratios[1] * n)), n - n_train)
    shuffled = [pairs[i] for i in order]
    return shuffled[:n_train], shuffled[n_train:n_train + n_val], shuffled[n_train + n_val:]


def carve_validation(pairs: Sequence[ImagePair], ratio: float = 0.1,
                     seed: int = 0) -> Tuple[List[ImagePair], List[ImagePair]]:
    """Выделение валидации из обучающей выборки, если корпус поставляется только как train/test"""
    train, val, _ = split_dataset(pairs, (1.0 - ratio, ratio, 0.0), seed)
    return train, val


def normalize(image):
    """[0, 1] -> [-1, 1]; значения вне диапазона сначала обрезаются"""
    if isinstance(image, torch.Tensor):
        return image.clamp(0.0, 1.0) * 2.0 - 1.0
    return np.clip(image, 0.0, 1.0) * 2.0 - 1.0


def denormalize(image):
    """[-1, 1] -> [0, 1]"""
    if isinstance(image, torch.Tensor):
        return (image.clamp(-1.0, 1.0) + 1.0) / 2.0
    return (np.clip(image, -1.0, 1.0) + 1.0) / 2.0


def augment(pair: ImagePair, crop_size: int, rng: np.random.Generator, flip: bool = True) -> ImagePair:
    """
    Одинаковые случайная обрезка и горизонтальное отражение для обоих изображений пары

    Args:
        pair: Исходная пара
        crop_size: Сторона квадратного окна
        rng: Генератор случайных чисел
        flip: Разрешить отражение
    """
    h, w = pair.affected.shape[:2]
    if crop_size > min(h, w) or crop_size <= 0:
        raise ConfigurationError(f"crop_size={crop_size} не помещается в изображение {h}x{w} (пара {pair.id})")
    top = int(rng.integers(0, h - crop_size + 1))
    left = int(rng.integers(0, w - crop_size + 1))
    do_flip = bool(rng.random() < 0.5) and flip

    def apply(image):
        window = image[top:top + crop_size, left:left + crop_size]
        return np.ascontiguousarray(window[:, ::-1] if do_flip else window)

    return replace(pair, affected=apply(pair.affected), clean=apply(pair.clean))


def pad_to_multiple(image, multiple: int = 32):
    """
    Отражающий паддинг до ближайшей кратности (по центру)

    Args:
        image: Тензор N×C×H×W / C×H×W или массив H×W×C
        multiple: Кратность

    Returns:
        tuple: (дополненное изображение, CropRecord)
    """
    is_tensor = isinstance(image, torch.Tensor)
    h, w = (image.shape[-2:] if is_tensor else image.shape[:2])
    pad_h, pad_w = (-h) % multiple, (-w) % multiple
    record = CropRecord(pad_h // 2, pad_h - pad_h // 2, pad_w // 2, pad_w - pad_w // 2)
    if record.is_empty:
        return image, record

    # Отражение невозможно, если поле не меньше стороны
    reflect = max(record.top, record.bottom) < h and max(record.left, record.right) < w
    if is_tensor:
        padded = F.pad(image, (record.left, record.right, record.top, record.bottom),
                       mode="reflect" if reflect else "replicate")
    else:
        widths = [(record.top, record.bottom), (record.left, record.right)] + [(0, 0)] * (image.ndim - 2)
        padded = np.pad(image, widths, mode="reflect" if reflect else "edge")
    return padded, record


def crop_back(padded, record: CropRecord):
    """Точное обращение pad_to_multiple"""
    if record.is_empty:
        return padded
    if isinstance(padded, torch.Tensor):
        h, w = padded.shape[-2:]
        return padded[..., record.top:h - record.bottom, record.left:w - record.right]
    h, w = padded.shape[:2]
    return padded[record.top:h - record.bottom, record.left:w - record.right]


def image_to_tensor(image: np.ndarray) -> torch.Tensor:
    """H×W×C -> C×H×W (float32)"""
    return torch.from_numpy(np.ascontiguousarray(image.transpose(2, 0, 1))).float()


def tensor_to_image(tensor: torch.Tensor) -> np.ndarray:
    """C×H×W или 1×C×H×W -> H×W×C (float32)"""
    if tensor.dim() == 4:
        tensor = tensor[0]
    return tensor.detach().cpu().float().numpy().transpose(1, 2, 0)


class PairDataset(Dataset):
    """Датасет пар в пространстве модели с детерминированной по (seed, epoch, index) аугментацией"""

    def __init__(self, pairs: Sequence[ImagePair], crop_size: Optional[int] = None,
                 seed: int = 0, flip: bool = True):
        self.pairs = list(pairs)
        self.crop_size = crop_size
        self.seed = seed
        self.flip = flip
        self.epoch = 0

    def set_epoch(self, epoch: int):
        self.epoch = epoch

    def __len__(self):
        return len(self.pairs)

    def get_pair(self, index: int) -> ImagePair:
        pair = self.pairs[index]
        if self.crop_size:
            rng = np.random.default_rng([self.seed, self.epoch, index])
            pair = augment(pair, self.crop_size, rng, self.flip)
        return pair

    def __getitem__(self, index):
        pair = self.get_pair(index)
        return {
            "affected": image_to_tensor(normalize(pair.affected)),
            "clean": image_to_tensor(normalize(pair.clean)),
            "id": pair.id,
        }
