#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Конфигурационный файл приложения ClearLens-Core
"""

import os

# Базовые пути
APP_DIR = os.path.dirname(os.path.abspath(__file__))
RESOURCES_DIR = os.path.join(APP_DIR, "resources")
HOME_DIR = os.path.expanduser("~")
CONFIG_DIR = os.environ.get("CLEARLENS_HOME", os.path.join(HOME_DIR, ".clearlens"))
WEIGHTS_DIR = os.path.join(CONFIG_DIR, "weights")

DEFAULT_CONFIG_PATH = os.path.join(RESOURCES_DIR, "default_config.json")

# Предобученный экстрактор признаков (VGG19 из torchvision)
VGG19_WEIGHTS_URL = "https://download.pytorch.org/models/vgg19-dcbb9e9d.pth"
VGG19_WEIGHTS_PATH = os.path.join(WEIGHTS_DIR, "vgg19-dcbb9e9d.pth")
VGG19_WEIGHTS_SHA256_PREFIX = "dcbb9e9d"

# Конфигурация запросов
REQUEST_TIMEOUT = 30  # секунды
DOWNLOAD_CHUNK_SIZE = 1 << 20  # байты

# Коды завершения CLI
EXIT_OK = 0
EXIT_VALIDATION_ERROR = 1
EXIT_RUNTIME_ERROR = 2
EXIT_PARTIAL_FAILURE = 3

# Формат логов
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
LOG_FILE_NAME = "run.log"

# Файлы в выходной директории
RESOLVED_CONFIG_NAME = "resolved_config.json"
LOCK_FILE_NAME = ".clearlens.lock"
EPOCH_LOG_NAME = "epochs.jsonl"
SYNTH_MANIFEST_NAME = "manifest.jsonl"

# Изображения без потерь (8 и 16 бит)
IMAGE_EXTENSIONS = (".png", ".bmp", ".tif", ".tiff", ".ppm", ".pgm")
