import logging
import sys
from pathlib import Path
from logging.handlers import RotatingFileHandler
from typing import Optional, Union

from config.settings import LOG_FILE, DEBUG, CONSOLE_LOG_LEVEL

_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def setup_logger(
    name: str,
    log_file: Optional[Path] = None,
    level: Optional[int] = None,
    console_level: Optional[Union[int, str]] = None
) -> logging.Logger:
    """
    ロガーをセットアップする

    ファイルにはすべてのレベルを、stderr には console_level 以上を出す。
    stdout は CSV や結果表のために空けておく。

    Args:
        name: ロガーの名前
        log_file: ログファイルのパス（デフォルトはsettings.LOG_FILE）
        level: ファイル側のレベル（DEBUG が True なら DEBUG、それ以外は INFO）
        console_level: コンソール側のレベル（デフォルトはsettings.CONSOLE_LOG_LEVEL）

    Returns:
        設定済みのロガーインスタンス
    """
    logger = logging.getLogger(name)
    if logger.handlers:
        return logger

    if level is None:
        level = logging.DEBUG if DEBUG else logging.INFO
    if console_level is None:
        console_level = logging.DEBUG if DEBUG else CONSOLE_LOG_LEVEL
    logger.setLevel(logging.DEBUG)
    logger.propagate = False

    formatter = logging.Formatter(_FORMAT, datefmt='%Y-%m-%d %H:%M:%S')

    log_file = log_file or LOG_FILE
    log_file.parent.mkdir(parents=True, exist_ok=True)
    file_handler = RotatingFileHandler(
        log_file,
        maxBytes=10*1024*1024,
        backupCount=5,
        encoding='utf-8'
    )
    file_handler.setFormatter(formatter)
    file_handler.setLevel(level)

    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setFormatter(formatter)
    console_handler.setLevel(console_level)
    console_handler.set_name('console')

    logger.addHandler(file_handler)
    logger.addHandler(console_handler)
    return logger


def set_console_level(level: Union[int, str], name: str = 'impact_pricer') -> None:
    """コンソールハンドラーのレベルだけを変える（--verbose 用）"""
    for handler in logging.getLogger(name).handlers:
        if handler.get_name() == 'console':
            handler.setLevel(level)


# デフォルトロガーの作成
logger = setup_logger('impact_pricer')
