# utils モジュール
from .logger import setup_logger, logger
from .reporting import RunManifest, write_csv

__all__ = [
    'setup_logger',
    'logger',
    'RunManifest',
    'write_csv'
]
