import json
from enum import Enum

import numpy as np
import pytest

from src.utils.reporting import (
    RunManifest,
    config_hash,
    file_hash,
    format_value,
    load_manifest,
    render_csv,
    write_csv,
)

class _Side(Enum):
    BUY = "buy"

def test_format_value():
    """CSV セルの表現"""
    assert format_value(None) == ''
    assert format_value(True) == 'true'
    assert format_value(np.bool_(False)) == 'false'
    assert format_value(np.int64(7)) == '7'
    assert format_value(0.1) == '0.10000000000000001'
    assert format_value(np.float64(-2.5)) == '-2.5'
    assert format_value(float('nan')) == 'nan'
    assert format_value(float('-inf')) == '-inf'
    assert format_value(_Side.BUY) == 'buy'
    assert format_value('degenerate_market') == 'degenerate_market'

def test_render_csv():
    text = render_csv(['p', 'flag'], [[1.0, True], [-0.5, None]])
    assert text == 'p,flag\r\n1,true\r\n-0.5,\r\n'
    with pytest.raises(ValueError):
        render_csv(['a', 'b'], [[1.0]])

def test_write_csv_creates_directories(tmp_path):
    path = write_csv(tmp_path / "nested" / "out.csv", ['x'], [[1], [2]])
    assert path.exists()
    assert path.read_bytes() == b'x\r\n1\r\n2\r\n'

def test_config_hash_ignores_key_order():
    first = config_hash({"family": "generic", "horizon": 1.0})
    second = config_hash({"horizon": 1.0, "family": "generic"})
    assert first == second
    assert first != config_hash({"family": "generic", "horizon": 2.0})

def test_manifest_save_and_load(tmp_path):
    """マニフェストに出力ファイルのハッシュが残る"""
    output = write_csv(tmp_path / "bounds.csv", ['u'], [[0.0]])
    manifest = RunManifest(
        command='bounds',
        config_name='unit',
        config_hash=config_hash({}),
        seed=5,
        engine={'method': 'quadrature'},
        tolerances={'abs_tol': 1e-10},
    )
    manifest.add_output(output)
    path = manifest.save(tmp_path / "bounds_manifest.json")

    data = json.loads(path.read_text(encoding='utf-8'))
    assert data['outputs'] == {'bounds.csv': file_hash(output)}
    loaded = load_manifest(path)
    assert loaded.seed == 5
    assert loaded.engine == {'method': 'quadrature'}
