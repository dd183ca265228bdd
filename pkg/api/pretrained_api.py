#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Загрузка предобученных весов (экстрактор перцептивных признаков) по HTTP
"""

import hashlib
import logging
import os

import requests

from config import DOWNLOAD_CHUNK_SIZE, REQUEST_TIMEOUT
from utils.errors import ResourceUnavailableError

logger = logging.getLogger("PretrainedAPI")


class PretrainedAPI:
    """Класс для скачивания файлов весов с проверкой целостности"""

    def __init__(self, timeout: int = REQUEST_TIMEOUT, chunk_size: int = DOWNLOAD_CHUNK_SIZE):
        """
        Инициализация загрузчика

        Args:
            timeout: Таймаут запроса в секундах
            chunk_size: Размер блока при потоковой записи
        """
        self.timeout = timeout
        self.chunk_size = chunk_size

    def download(self, url: str, destination: str, sha256_prefix: str = None) -> str:
        """
        Потоковая загрузка файла с атомарным переименованием

        Args:
            url: Адрес файла
            destination: Путь назначения
            sha256_prefix: Ожидаемый префикс SHA-256 (None — без проверки)

        Returns:
            str: Путь к загруженному файлу
        """
        os.makedirs(os.path.dirname(os.path.abspath(destination)), exist_ok=True)
        temp_path = destination + ".part"
        digest = hashlib.sha256()
        try:
            logger.info(f"Загрузка весов: {url}")
            response = requests.get(url, stream=True, timeout=self.timeout)
            response.raise_for_status()

            written = 0
            with open(temp_path, "wb") as f:
                for chunk in response.iter_content(chunk_size=self.chunk_size):
                    if chunk:
                        f.write(chunk)
                        digest.update(chunk)
                        written += len(chunk)

        except (requests.exceptions.RequestException, OSError) as e:
            logger.error(f"Ошибка при загрузке {url}: {str(e)}")
            if os.path.exists(temp_path):
                os.remove(temp_path)
            raise ResourceUnavailableError(f"Не удалось загрузить веса {url}: {str(e)}")

        if sha256_prefix and not digest.hexdigest().startswith(sha256_prefix):
            os.remove(temp_path)
            logger.error(f"Контрольная сумма {url} не совпадает с {sha256_prefix}")
            raise ResourceUnavailableError(f"Контрольная сумма загруженного файла не совпадает: {url}")

        os.replace(temp_path, destination)
        logger.info(f"Веса сохранены: {destination} ({written} байт)")
        return destination

    def ensure(self, path: str, url: str = None, sha256_prefix: str = None) -> str:
        """
        Путь к файлу весов; при отсутствии файла и заданном URL — загрузка

        Returns:
            str: Путь к существующему файлу
        """
        if os.path.exists(path):
            return path
        if not url:
            logger.error(f"Файл весов не найден и URL не задан: {path}")
            raise ResourceUnavailableError(f"Файл весов не найден: {path}")
        return self.download(url, path, sha256_prefix)
