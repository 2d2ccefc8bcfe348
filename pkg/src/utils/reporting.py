"""
CSV 表と実行マニフェストの出力

CSV は RFC 4180 形式（csv.writer の既定）で、浮動小数点は有効数字17桁で書き出す。
同じ設定・シードなら CSV はバイト単位で一致する。
"""
import csv
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from enum import Enum
import hashlib
import io
import json
import math
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Sequence

import numpy as np

from src.utils.logger import logger
from config.settings import CSV_SIGNIFICANT_DIGITS, VERSION


def format_value(value: Any) -> str:
    """CSV セルの文字列表現"""
    if value is None:
        return ''
    if isinstance(value, (bool, np.bool_)):
        return 'true' if value else 'false'
    if isinstance(value, Enum):
        return str(value.value)
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return 'nan'
        if math.isinf(value):
            return 'inf' if value > 0 else '-inf'
        return format(value, f'.{CSV_SIGNIFICANT_DIGITS}g')
    return str(value)


def render_csv(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer)
    writer.writerow(header)
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise ValueError(f"Row {i} has {len(row)} cells, expected {len(header)}")
        writer.writerow([format_value(v) for v in row])
    return buffer.getvalue()


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    """CSV を書き出す"""
    text = render_csv(header, rows)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='') as f:
        f.write(text)
    logger.info(f"Wrote {path}")
    return path


def config_hash(data: Mapping[str, Any]) -> str:
    """正規化した JSON の SHA-256"""
    canonical = json.dumps(data, sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


def file_hash(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class RunManifest:
    """1回の実行の記録"""
    command: str
    config_name: str
    config_hash: str
    seed: int
    engine: Dict[str, Any]
    tolerances: Dict[str, float]
    version: str = VERSION
    outputs: Dict[str, str] = field(default_factory=dict)
    started_at: str = field(
        default_factory=lambda: datetime.now(timezone.utc).isoformat()
    )
    wall_clock_seconds: float = 0.0

    def add_output(self, path: Path) -> None:
        """出力ファイルとそのハッシュを記録"""
        path = Path(path)
        self.outputs[path.name] = file_hash(path)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def save(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
        logger.info(f"Wrote run manifest {path}")
        return path


def load_manifest(path: Path) -> RunManifest:
    with open(path, 'r', encoding='utf-8') as f:
        data = json.load(f)
    return RunManifest(**data)

