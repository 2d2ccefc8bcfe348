import csv
import json
import pytest
import tempfile
from pathlib import Path
from typing import Dict, List

from config.settings import SCENARIO_DIR

@pytest.fixture
def temp_dir():
    """一時ディレクトリを提供"""
    with tempfile.TemporaryDirectory() as tmp_dir:
        yield Path(tmp_dir)

@pytest.fixture
def scenario():
    """同梱シナリオのパスを返す関数"""
    def _path(name: str) -> Path:
        return SCENARIO_DIR / f"{name}.json"
    return _path

@pytest.fixture
def read_table():
    """CSV を辞書のリストとして読む関数"""
    def _read(path: Path) -> List[Dict[str, str]]:
        with open(path, newline='', encoding='utf-8') as f:
            return list(csv.DictReader(f))
    return _read

@pytest.fixture
def write_scenario(temp_dir):
    """辞書からシナリオファイルを作る関数"""
    def _write(data: dict, name: str = "custom.json") -> Path:
        path = temp_dir / name
        path.write_text(json.dumps(data), encoding='utf-8')
        return path
    return _write
