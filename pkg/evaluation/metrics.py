#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Метрики качества: SSIM (гауссово окно 11, σ=1.5) и PSNR.
Изображения — массивы H×W×C / H×W или тензоры C×H×W / N×C×H×W в [0, data_range].
"""

import math

import numpy as np
import torch
import torch.nn.functional as F

from utils.errors import DomainError, ShapeError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _as_batch(image) -> torch.Tensor:
    if isinstance(image, torch.Tensor):
        tensor = image.detach().cpu().double()
        if tensor.dim() == 2:
            tensor = tensor[None]
        if tensor.dim() == 3:
            tensor = tensor[None]
        return tensor
    array = np.asarray(image, dtype=np.float64)
    if array.ndim == 2:
        array = array[..., None]
    if array.ndim != 3:
        raise ShapeError(f"Ожидалось изображение H×W×C, получено {array.shape}")
    return torch.from_numpy(np.ascontiguousarray(array.transpose(2, 0, 1)))[None]


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> torch.Tensor:
    """Нормированное двумерное гауссово окно (float64)"""
    coords = torch.arange(size, dtype=torch.float64) - (size - 1) / 2.0
    g = torch.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    g = g / g.sum()
    return torch.outer(g, g)


def ssim(a, b, data_range: float = 1.0, window: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> float:
    """
    Структурное сходство, среднее по допустимым позициям окна и каналам

    Raises:
        ShapeError: размеры различаются
        DomainError: изображение меньше окна
    """
    x, y = _as_batch(a), _as_batch(b)
    if x.shape != y.shape:
        raise ShapeError(f"SSIM: формы {tuple(x.shape)} и {tuple(y.shape)} различаются")
    h, w = x.shape[-2:]
    if h < window or w < window:
        raise DomainError(f"SSIM: изображение {h}x{w} меньше окна {window}")

    channels = x.shape[1]
    kernel = gaussian_window(window, sigma).expand(channels, 1, window, window)

    def filt(t):
        return F.conv2d(t, kernel, groups=channels)

    mu_x, mu_y = filt(x), filt(y)
    var_x = filt(x * x) - mu_x * mu_x
    var_y = filt(y * y) - mu_y * mu_y
    cov = filt(x * y) - mu_x * mu_y
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2

    numerator = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    denominator = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return float((numerator / denominator).mean())


def psnr(a, b, max_value: float = 1.0) -> float:
    """
    Пиковое отношение сигнал/шум в дБ; для идентичных изображений — inf
    """
    x, y = _as_batch(a), _as_batch(b)
    if x.shape != y.shape:
        raise ShapeError(f"PSNR: формы {tuple(x.shape)} и {tuple(y.shape)} различаются")
    mse = float(((x - y) ** 2).mean())
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(max_value ** 2 / mse)
