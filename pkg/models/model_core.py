#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Сети ClearLens-Core: генератор с агрегацией, энхансер с пирамидальным
пулингом и патч-дискриминатор.

Все тензоры в формате N×C×H×W, значения в пространстве модели [-1, 1].
"""

import logging
from typing import List, Optional, Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from data.dataio import crop_back, pad_to_multiple
from models.model_data import ModelConfig, NetworkWeights
from utils.errors import ConfigurationError, ShapeError

logger = logging.getLogger("ModelCore")

INIT_STD = 0.02
ENHANCER_SCALES = (4, 8, 16, 32)
GENERATOR_MULTIPLE = 4
MAX_DISCRIMINATOR_FILTERS = 512


def conv_norm_relu(in_channels: int, out_channels: int, stride: int = 1) -> nn.Sequential:
    """Свёртка 3x3 + instance norm + ReLU"""
    return nn.Sequential(
        nn.Conv2d(in_channels, out_channels, 3, stride, 1, padding_mode="reflect"),
        nn.InstanceNorm2d(out_channels),
        nn.ReLU(inplace=True),
    )


def receptive_field(kernels: Sequence[int], strides: Sequence[int]) -> int:
    """Рецептивное поле одной ячейки выхода по стандартной рекуррентной формуле"""
    rf = 1
    for kernel, stride in zip(reversed(kernels), reversed(strides)):
        rf = (rf - 1) * stride + kernel
    return rf


def discriminator_geometry(layers: int) -> Tuple[List[int], List[int], List[int]]:
    """
    Ядра, шаги и паддинги дискриминатора

    Returns:
        tuple: (kernels, strides, paddings); последний слой без паддинга
    """
    kernels = [4] * (layers - 1) + [2]
    strides = [2] * (layers - 1) + [1]
    paddings = [1] * (layers - 1) + [0]
    return kernels, strides, paddings


class PassThrough(nn.Module):
    """Замена блока агрегации в вариантах без агрегации: возвращает выход свёртки"""

    def forward(self, stage_input, conv_output, skip=None):
        return conv_output


class AggregationBlock(nn.Module):
    """
    Блок агрегации: вход стадии приводится к разрешению выхода свёртки,
    конкатенируется с ним (и со skip-связью в декодере) и уточняется свёрткой
    """

    def __init__(self, stage_channels: int, conv_channels: int, skip_channels: int,
                 out_channels: int, direction: str = "down"):
        """
        Args:
            stage_channels: Каналы входа стадии
            conv_channels: Каналы выхода свёртки стадии
            skip_channels: Каналы skip-связи (0 в энкодере)
            out_channels: Число фильтров стадии
            direction: "down" (энкодер) или "up" (декодер)
        """
        super().__init__()
        if direction not in ("down", "up"):
            raise ConfigurationError(f"Неизвестное направление агрегации: {direction}")
        self.direction = direction
        self.stage_channels = stage_channels
        self.conv_channels = conv_channels
        self.skip_channels = skip_channels
        self.fuse = conv_norm_relu(stage_channels + conv_channels + skip_channels, out_channels)

    def resample(self, stage_input: torch.Tensor, conv_output: torch.Tensor) -> torch.Tensor:
        """Усреднение (энкодер) или nearest-апсемплинг (декодер) входа стадии"""
        sh, sw = stage_input.shape[-2:]
        ch, cw = conv_output.shape[-2:]
        if self.direction == "down":
            if (sh, sw) != (2 * ch, 2 * cw):
                raise ShapeError(f"Выход свёртки {ch}x{cw} не равен половине входа стадии {sh}x{sw}")
            return F.avg_pool2d(stage_input, 2)
        if (ch, cw) != (2 * sh, 2 * sw):
            raise ShapeError(f"Выход свёртки {ch}x{cw} не равен удвоенному входу стадии {sh}x{sw}")
        return F.interpolate(stage_input, scale_factor=2, mode="nearest")

    def forward(self, stage_input, conv_output, skip=None):
        if stage_input.shape[1] != self.stage_channels or conv_output.shape[1] != self.conv_channels:
            raise ShapeError(
                f"Ожидались каналы ({self.stage_channels}, {self.conv_channels}), "
                f"получены ({stage_input.shape[1]}, {conv_output.shape[1]})")
        parts = [self.resample(stage_input, conv_output), conv_output]
        if self.skip_channels:
            if skip is None:
                raise ShapeError("Блок агрегации декодера требует skip-связь")
            if skip.shape[-2:] != conv_output.shape[-2:] or skip.shape[1] != self.skip_channels:
                raise ShapeError(f"Skip-связь {tuple(skip.shape)} не совпадает с выходом свёртки "
                                 f"{tuple(conv_output.shape)}")
            parts.append(skip)
        return self.fuse(torch.cat(parts, dim=1))


class ResidualBlock(nn.Module):
    """Остаточный блок; при нулевых весах свёрток — тождественное отображение"""

    def __init__(self, channels: int):
        super().__init__()
        self.block = nn.Sequential(
            nn.Conv2d(channels, channels, 3, 1, 1, padding_mode="reflect"),
            nn.InstanceNorm2d(channels),
            nn.ReLU(inplace=True),
            nn.Conv2d(channels, channels, 3, 1, 1, padding_mode="reflect"),
            nn.InstanceNorm2d(channels),
        )

    def forward(self, x):
        return x + self.block(x)


class Generator(nn.Module):
    """Неглубокий генератор: два понижения, остаточные блоки, декодер со skip-связями"""

    def __init__(self, config: ModelConfig):
        super().__init__()
        c = config.input_channels
        f1, f2 = config.encoder_filters
        r = config.residual_filters
        aggregate = config.use_aggregation
        self.input_channels = c

        # Энкодер
        self.down1 = conv_norm_relu(c, f1, stride=2)
        self.agg1 = AggregationBlock(c, f1, 0, f1, "down") if aggregate else PassThrough()
        self.down2 = conv_norm_relu(f1, f2, stride=2)
        self.agg2 = AggregationBlock(f1, f2, 0, f2, "down") if aggregate else PassThrough()

        # Согласование 32 -> 64 -> 32 вокруг остаточных блоков
        self.expand = conv_norm_relu(f2, r)
        self.residual = nn.Sequential(*[ResidualBlock(r) for _ in range(config.residual_blocks)])
        self.reduce = conv_norm_relu(r, f2)

        # Декодер: nearest-апсемплинг + свёртка
        self.up1 = conv_norm_relu(f2, f1)
        self.agg3 = AggregationBlock(f2, f1, f1, f1, "up") if aggregate else PassThrough()
        self.up2 = conv_norm_relu(f1, f1)
        self.agg4 = AggregationBlock(f1, f1, c, f1, "up") if aggregate else PassThrough()
        self.head = nn.Conv2d(f1, c, 3, 1, 1, padding_mode="reflect")

    def _check_input(self, x: torch.Tensor):
        if x.dim() != 4 or x.shape[1] != self.input_channels:
            raise ShapeError(f"Генератор ожидает N×{self.input_channels}×H×W, получено {tuple(x.shape)}")
        h, w = x.shape[-2:]
        if h % GENERATOR_MULTIPLE or w % GENERATOR_MULTIPLE:
            raise ShapeError(f"Размер {h}x{w} не кратен {GENERATOR_MULTIPLE}; используйте pad_to_multiple")

    def encode(self, x: torch.Tensor):
        """
        Энкодер и остаточные блоки

        Returns:
            tuple: (бутылочное горлышко H/4×W/4×residual_filters, skip-связи)
        """
        self._check_input(x)
        d1 = self.agg1(x, self.down1(x))
        d2 = self.agg2(d1, self.down2(d1))
        bottleneck = self.residual(self.expand(d2))
        return bottleneck, (x, d1)

    def decode(self, bottleneck: torch.Tensor, skips) -> torch.Tensor:
        x, d1 = skips
        b = self.reduce(bottleneck)
        u1 = self.agg3(b, self.up1(F.interpolate(b, scale_factor=2, mode="nearest")), d1)
        u2 = self.agg4(u1, self.up2(F.interpolate(u1, scale_factor=2, mode="nearest")), x)
        return torch.tanh(self.head(u2))

    def forward(self, x):
        bottleneck, skips = self.encode(x)
        return self.decode(bottleneck, skips)


class Enhancer(nn.Module):
    """Энхансер: 4-уровневый пирамидальный пулинг по выходу генератора и исходному изображению"""

    def __init__(self, config: ModelConfig):
        super().__init__()
        c = config.input_channels
        width = config.enhancer_width
        self.refine1 = nn.Sequential(
            nn.Conv2d(2 * c, width, 3, 1, 1, padding_mode="reflect"),
            nn.InstanceNorm2d(width),
            nn.ReLU(inplace=True),
        )
        self.refine2 = nn.Sequential(
            nn.Conv2d(width, width, 3, 1, 1, padding_mode="reflect"),
            nn.InstanceNorm2d(width),
            nn.ReLU(inplace=True),
        )
        # 1x1 свёртка на каждый масштаб взвешивает каналы
        self.branches = nn.ModuleList(
            [nn.Sequential(nn.Conv2d(width, 1, 1), nn.ReLU(inplace=True)) for _ in ENHANCER_SCALES])
        self.fuse = nn.Conv2d(width + len(ENHANCER_SCALES), c, 3, 1, 1, padding_mode="reflect")

    @staticmethod
    def pyramid(features: torch.Tensor) -> List[torch.Tensor]:
        """Карты признаков, уменьшенные в 4, 8, 16 и 32 раза"""
        return [F.avg_pool2d(features, scale) for scale in ENHANCER_SCALES]

    def features(self, generated: torch.Tensor, original: torch.Tensor) -> torch.Tensor:
        if generated.shape != original.shape:
            raise ShapeError(f"Энхансер: формы {tuple(generated.shape)} и {tuple(original.shape)} различаются")
        h, w = generated.shape[-2:]
        if h % ENHANCER_SCALES[-1] or w % ENHANCER_SCALES[-1]:
            raise ShapeError(f"Размер {h}x{w} не кратен {ENHANCER_SCALES[-1]}; используйте pad_to_multiple")
        return self.refine2(self.refine1(torch.cat([generated, original], dim=1)))

    def forward(self, generated, original):
        feats = self.features(generated, original)
        size = feats.shape[-2:]
        levels = [
            F.interpolate(branch(pooled), size=size, mode="bilinear", align_corners=False)
            for branch, pooled in zip(self.branches, self.pyramid(feats))
        ]
        return torch.tanh(self.fuse(torch.cat(levels + [feats], dim=1)))


class PatchDiscriminator(nn.Module):
    """Патч-дискриминатор с сырыми (неограниченными) оценками"""

    def __init__(self, config: ModelConfig):
        super().__init__()
        kernels, strides, paddings = discriminator_geometry(config.discriminator_layers)
        self.receptive_field = receptive_field(kernels, strides)
        if self.receptive_field != config.patch_receptive_field:
            raise ConfigurationError(
                f"Рецептивное поле дискриминатора {self.receptive_field} "
                f"не равно patch_receptive_field={config.patch_receptive_field}")

        self.layers = nn.ModuleList()
        in_channels = config.input_channels
        for i, (kernel, stride, padding) in enumerate(zip(kernels, strides, paddings)):
            if i == len(kernels) - 1:
                self.layers.append(nn.Conv2d(in_channels, 1, kernel, stride, padding))
                break
            out_channels = min(config.discriminator_filters * 2 ** i, MAX_DISCRIMINATOR_FILTERS)
            conv = nn.Conv2d(in_channels, out_channels, kernel, stride, padding)
            if i == 0:
                self.layers.append(nn.Sequential(conv, nn.LeakyReLU(0.2, inplace=True)))
            else:
                self.layers.append(nn.Sequential(conv, nn.InstanceNorm2d(out_channels),
                                                 nn.LeakyReLU(0.2, inplace=True)))
            in_channels = out_channels

    def forward(self, x):
        """
        Returns:
            tuple: (сетка оценок N×1×H'×W', признаки всех слоёв от мелких к глубоким)
        """
        h, w = x.shape[-2:]
        if min(h, w) < self.receptive_field:
            raise ShapeError(f"Вход {h}x{w} меньше рецептивного поля {self.receptive_field}")
        features = []
        for layer in self.layers:
            x = layer(x)
            features.append(x)
        return x, features


class Networks(nn.Module):
    """Контейнер G, E и D с единым пространством имён параметров"""

    def __init__(self, config: ModelConfig):
        super().__init__()
        config.check()
        self.config = config
        self.generator = Generator(config)
        self.enhancer = Enhancer(config) if config.use_enhancer else None
        self.discriminator = PatchDiscriminator(config)

    def restoration_modules(self) -> List[nn.Module]:
        return [m for m in (self.generator, self.enhancer) if m is not None]

    def restoration_parameters(self):
        """Параметры генератора и энхансера (обновляются одним шагом)"""
        for module in self.restoration_modules():
            yield from module.parameters()

    def restore(self, affected: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """
        Прямой проход восстановления

        Returns:
            tuple: (итоговый выход E(G(A)) или G(A), выход генератора G(A))
        """
        generated = self.generator(affected)
        if self.enhancer is None:
            return generated, generated
        return self.enhancer(generated, affected), generated

    def required_multiple(self) -> int:
        return ENHANCER_SCALES[-1] if self.enhancer is not None else GENERATOR_MULTIPLE

    def component_state(self, *components: str) -> NetworkWeights:
        """Параметры выбранных компонентов (generator / enhancer / discriminator)"""
        prefixes = tuple(f"{name}." for name in components)
        return {k: v for k, v in self.state_dict().items() if k.startswith(prefixes)}


def initialize_module(module: nn.Module, seed: int) -> nn.Module:
    """Веса ~ N(0, 0.02), смещения нулевые; детерминировано для фиксированного seed"""
    generator = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for name, param in module.named_parameters():
            if name.endswith("bias"):
                param.zero_()
            else:
                param.normal_(0.0, INIT_STD, generator=generator)
    return module


def build_networks(config: ModelConfig, seed: int = 0) -> Networks:
    """Создание и инициализация G, E и D"""
    networks = initialize_module(Networks(config), seed)
    logger.debug(f"Сети созданы: конфигурация {config.fingerprint()}, seed={seed}")
    return networks


def init_weights(config: ModelConfig, seed: int) -> NetworkWeights:
    """
    Начальные веса для конфигурации

    Returns:
        dict: Путь параметра -> тензор
    """
    networks = build_networks(config, seed)
    return {k: v.detach().clone() for k, v in networks.state_dict().items()}


def aggregation_forward(block: nn.Module, stage_input: torch.Tensor, conv_output: torch.Tensor,
                        skip: Optional[torch.Tensor] = None) -> torch.Tensor:
    return block(stage_input, conv_output, skip)


def generator_forward(generator: Generator, image: torch.Tensor) -> torch.Tensor:
    """Генератор с отражающим паддингом до кратности 4 и обрезкой обратно"""
    padded, record = pad_to_multiple(image, GENERATOR_MULTIPLE)
    return crop_back(generator(padded), record)


def enhancer_forward(enhancer: Enhancer, generated: torch.Tensor, original: torch.Tensor) -> torch.Tensor:
    if generated.shape != original.shape:
        raise ShapeError(f"Энхансер: формы {tuple(generated.shape)} и {tuple(original.shape)} различаются")
    padded_generated, record = pad_to_multiple(generated, ENHANCER_SCALES[-1])
    padded_original, _ = pad_to_multiple(original, ENHANCER_SCALES[-1])
    return crop_back(enhancer(padded_generated, padded_original), record)


def discriminator_forward(discriminator: PatchDiscriminator, image: torch.Tensor):
    return discriminator(image)
