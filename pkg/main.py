#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
ClearLens-Core
Точка входа командной строки: синтез капель, предобучение, обучение,
восстановление, оценка, замер задержки и абляция
"""

import argparse
import logging
import os
import sys
from typing import Any, Dict, List, Optional, Sequence, Tuple

from config import (EXIT_OK, EXIT_PARTIAL_FAILURE, EXIT_RUNTIME_ERROR, EXIT_VALIDATION_ERROR,
                    LOG_FILE_NAME, LOG_FORMAT)
from data.dataio import (ImagePair, carve_validation, list_images, load_paired_dataset,
                         read_image, split_dataset)
from data.synth_rain import synthesize_corpus
from evaluation.ablation import VARIANTS, run_ablation, variant_config
from evaluation.evalbench import benchmark_latency, evaluate, write_latency_report
from models.model_core import build_networks
from models.model_manager import ModelManager
from training.checkpoint import Checkpoint, transfer_init
from training.trainer import pretrain_synthetic, train
from utils.errors import ChannelError, ClearLensError, ConfigurationError, PairingError
from utils.run_config import OutputDirLock, RunConfig
from utils.system_check import check_requirements, device_label, resolve_device

# Настройка логирования
logging.basicConfig(
    level=logging.INFO,
    format=LOG_FORMAT,
    handlers=[
        logging.StreamHandler(sys.stdout)
    ]
)

logger = logging.getLogger("ClearLens")

VALIDATION_ERRORS = (ConfigurationError, PairingError, ChannelError)


def build_parser() -> argparse.ArgumentParser:
    """Парсер аргументов со всеми подкомандами"""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON-файл конфигурации (накладывается на умолчания)")
    common.add_argument("--seed", type=int, help="Сид обучения и синтеза")
    common.add_argument("--out", default=os.path.join("runs", "latest"), help="Выходная директория")
    common.add_argument("--device", action="append", help="cpu, cuda или auto (для benchmark — повторяемый)")
    common.add_argument("--verbose", action="store_true", help="Подробный журнал (DEBUG)")

    parser = argparse.ArgumentParser(prog="clearlens", description="Удаление капель дождя с изображений камеры")
    commands = parser.add_subparsers(dest="command", required=True)

    synthesize = commands.add_parser("synthesize", parents=[common], help="Синтез капель поверх чистых изображений")
    synthesize.add_argument("--input", required=True, help="Директория чистых изображений")

    for name, help_text in (("pretrain", "Предобучение на синтетических каплях"),
                            ("train", "Обучение на парном датасете")):
        command = commands.add_parser(name, parents=[common], help=help_text)
        command.add_argument("--variant", choices=list(VARIANTS), help="Вариант архитектуры")
        command.add_argument("--init", help="Чекпоинт для инициализации весов")
        command.add_argument("--resume", action="store_true", help="Продолжить запуск из --out")
        command.add_argument("--epochs", type=int, help="Максимальное число эпох")
        if name == "pretrain":
            command.add_argument("--clean-dir", help="Директория чистых изображений")
        else:
            command.add_argument("--data", help="Корень или манифест обучающего датасета")
            command.add_argument("--test-data", help="Корень или манифест тестового датасета")

    infer = commands.add_parser("infer", parents=[common], help="Восстановление изображений")
    infer.add_argument("--checkpoint", required=True, help="Директория чекпоинта")
    infer.add_argument("--suffix", default="_restored", help="Суффикс имени выходного файла")
    infer.add_argument("inputs", nargs="+", help="Файлы или директории изображений")

    evaluate_cmd = commands.add_parser("evaluate", parents=[common], help="SSIM / PSNR на парном датасете")
    evaluate_cmd.add_argument("--checkpoint", required=True, help="Директория чекпоинта")
    evaluate_cmd.add_argument("--data", help="Корень или манифест датасета")

    benchmark = commands.add_parser("benchmark", parents=[common], help="Замер задержки инференса")
    benchmark.add_argument("--checkpoint", help="Директория чекпоинта (иначе — случайные веса)")
    benchmark.add_argument("--variant", action="append", choices=list(VARIANTS),
                           help="Вариант архитектуры (повторяемый)")
    benchmark.add_argument("--height", type=int, default=360)
    benchmark.add_argument("--width", type=int, default=540)
    benchmark.add_argument("--runs", type=int, default=100)
    benchmark.add_argument("--warmup", type=int, default=10)

    ablate = commands.add_parser("ablate", parents=[common], help="Абляция G / G+E / G+E+A")
    ablate.add_argument("--data", help="Корень или манифест обучающего датасета")
    ablate.add_argument("--test-data", help="Корень или манифест тестового датасета")
    ablate.add_argument("--epochs", type=int, help="Максимальное число эпох")

    return parser


def collect_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    """Флаги командной строки в виде вложенного словаря конфигурации"""
    overrides: Dict[str, Any] = {}

    def put(section: str, key: str, value):
        if value is not None:
            overrides.setdefault(section, {})[key] = value

    if args.device:
        put("train", "device", args.device[0])
    epochs = getattr(args, "epochs", None)
    put("train", "pretrain_epochs" if args.command == "pretrain" else "max_epochs", epochs)
    put("data", "train", getattr(args, "data", None))
    put("data", "test", getattr(args, "test_data", None))
    put("data", "clean_dir", getattr(args, "clean_dir", None))
    return overrides


def setup_logging(verbose: bool, output_dir: str):
    """Уровень журнала и файл run.log в выходной директории"""
    root = logging.getLogger()
    root.setLevel(logging.DEBUG if verbose else logging.INFO)
    os.makedirs(output_dir, exist_ok=True)
    handler = logging.FileHandler(os.path.join(output_dir, LOG_FILE_NAME), encoding="utf-8")
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root.addHandler(handler)
    return handler


def resolve_run(args: argparse.Namespace) -> RunConfig:
    invocation = {k: v for k, v in vars(args).items() if isinstance(v, (str, int, float, bool, list, type(None)))}
    run = RunConfig.resolve(args.config, collect_overrides(args), args.out, args.seed, invocation)
    variant = getattr(args, "variant", None)
    if isinstance(variant, str):
        run.model = variant_config(run.model, variant)
    return run


def load_splits(run: RunConfig) -> Tuple[List[ImagePair], List[ImagePair], List[ImagePair]]:
    """train / val / test: отдельный тестовый датасет или разбиение одного корпуса"""
    workers = run.data["workers"]
    pairs = load_paired_dataset(run.manifest("train"), workers)
    if run.data.get("test"):
        train_pairs, val_pairs = carve_validation(pairs, run.train.validation_ratio, run.seed)
        test_pairs = load_paired_dataset(run.manifest("test"), workers)
    else:
        train_pairs, val_pairs, test_pairs = split_dataset(pairs, run.data["split"], run.seed)
    logger.info(f"Разбиение: {len(train_pairs)} / {len(val_pairs)} / {len(test_pairs)}")
    return train_pairs, val_pairs, test_pairs


def load_init(path: Optional[str], run: RunConfig):
    if not path:
        return None
    return transfer_init(Checkpoint.load(path), run.model)


def cmd_synthesize(args, run: RunConfig) -> int:
    records = synthesize_corpus(args.input, run.output_dir, run.rain, run.data["workers"])
    logger.info(f"Синтезировано пар: {len(records)}")
    return EXIT_OK


def cmd_pretrain(args, run: RunConfig) -> int:
    clean_dir = run.require("clean_dir")
    files = list_images(clean_dir)
    if not files:
        raise ConfigurationError(f"data.clean_dir: изображения не найдены в {clean_dir}")
    images = [read_image(os.path.join(clean_dir, f), run.model.input_channels) for f in files]
    if args.init:
        logger.warning("Флаг --init игнорируется при синтетическом предобучении")
    best = pretrain_synthetic(images, run.rain, run.model, run.train, run.loss, output_dir=run.output_dir,
                              resume_from=run.output_dir if args.resume else None)
    logger.info(f"Предобучение завершено: лучшая эпоха {best.best_epoch}, PSNR {best.best_metric:.2f} дБ")
    return EXIT_OK


def cmd_train(args, run: RunConfig) -> int:
    train_pairs, val_pairs, test_pairs = load_splits(run)
    best = train(train_pairs, val_pairs, run.model, run.train, run.loss, init=load_init(args.init, run),
                 output_dir=run.output_dir, resume_from=run.output_dir if args.resume else None)
    logger.info(f"Обучение завершено: лучшая эпоха {best.best_epoch}, PSNR {best.best_metric:.2f} дБ")
    if test_pairs:
        manager = ModelManager.from_checkpoint(best, run.train.device)
        report = evaluate(manager, test_pairs, run.model.fingerprint())
        report.write(run.output_dir, "test")
    return EXIT_OK


def expand_inputs(inputs: Sequence[str]) -> List[str]:
    paths = []
    for item in inputs:
        if os.path.isdir(item):
            paths.extend(os.path.join(item, f) for f in list_images(item))
        else:
            paths.append(item)
    return paths


def cmd_infer(args, run: RunConfig) -> int:
    manager = ModelManager.from_checkpoint(args.checkpoint, run.train.device)
    paths = expand_inputs(args.inputs)
    written, failures = manager.infer_files(paths, run.output_dir, args.suffix)
    if failures:
        return EXIT_PARTIAL_FAILURE if written else EXIT_RUNTIME_ERROR
    return EXIT_OK


def cmd_evaluate(args, run: RunConfig) -> int:
    manager = ModelManager.from_checkpoint(args.checkpoint, run.train.device)
    key = "test" if run.data.get("test") else "train"
    pairs = load_paired_dataset(run.manifest(key), run.data["workers"])
    report = evaluate(manager, pairs, manager.config.fingerprint())
    report.write(run.output_dir)
    logger.info("\n" + report.format_table())
    return EXIT_OK


def cmd_benchmark(args, run: RunConfig) -> int:
    if args.checkpoint and args.variant:
        raise ConfigurationError("--variant: архитектура задаётся чекпоинтом, вариант с --checkpoint не применим")
    devices = args.device or [run.train.device]
    variants = args.variant or [None]
    stats = []
    for name in devices:
        device = resolve_device(name)
        for variant in variants:
            if args.checkpoint:
                manager = ModelManager.from_checkpoint(args.checkpoint, str(device))
            else:
                config = variant_config(run.model, variant) if variant else run.model
                manager = ModelManager(build_networks(config, run.seed), device)
            stats.append(benchmark_latency(manager, args.height, args.width, manager.config.input_channels,
                                           args.runs, args.warmup, device, device_label(device),
                                           variant or manager.config.fingerprint(), run.seed))
    write_latency_report(stats, run.output_dir)
    return EXIT_OK


def cmd_ablate(args, run: RunConfig) -> int:
    train_pairs, val_pairs, test_pairs = load_splits(run)
    if not test_pairs:
        raise ConfigurationError("data.split: тестовая выборка пуста")
    table = run_ablation(train_pairs, val_pairs, test_pairs, run.model, run.train, run.loss,
                         output_dir=run.output_dir)
    logger.info("\n" + table.format())
    return EXIT_OK


COMMANDS = {
    "synthesize": cmd_synthesize,
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "infer": cmd_infer,
    "evaluate": cmd_evaluate,
    "benchmark": cmd_benchmark,
    "ablate": cmd_ablate,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Основная функция запуска; возвращает код завершения"""
    args = build_parser().parse_args(argv)

    if not check_requirements():
        logger.error("Системные требования не удовлетворены")
        return EXIT_RUNTIME_ERROR

    handler = None
    try:
        run = resolve_run(args)
        handler = setup_logging(args.verbose, run.output_dir)
        with OutputDirLock(run.output_dir):
            run.persist()
            code = COMMANDS[args.command](args, run)
    except VALIDATION_ERRORS as e:
        logger.error(f"Ошибка валидации: {str(e)}")
        return EXIT_VALIDATION_ERROR
    except (ClearLensError, OSError, RuntimeError) as e:
        logger.error(f"Ошибка выполнения команды {args.command}: {str(e)}")
        return EXIT_RUNTIME_ERROR
    finally:
        if handler is not None:
            logging.getLogger().removeHandler(handler)
            handler.close()

    logger.info(f"Команда {args.command} завершена с кодом {code}")
    return code


if __name__ == "__main__":
    sys.exit(main())
