import os
from pathlib import Path
from dotenv import load_dotenv

# Load environment variables
load_dotenv()

# Base directories
BASE_DIR = Path(__file__).resolve().parent.parent
SRC_DIR = BASE_DIR / "src"
SCENARIO_DIR = BASE_DIR / "config" / "scenarios"
OUTPUT_DIR = Path(os.getenv("IMPACT_PRICER_OUTPUT_DIR", str(BASE_DIR / "output")))

# Logging settings
LOG_DIR = Path(os.getenv("IMPACT_PRICER_LOG_DIR", str(BASE_DIR / "logs")))
LOG_DIR.mkdir(parents=True, exist_ok=True)
LOG_FILE = LOG_DIR / "impact_pricer.log"
# 結果表は rich で出すため、コンソールのログは既定で警告以上のみ
CONSOLE_LOG_LEVEL = os.getenv("IMPACT_PRICER_CONSOLE_LOG_LEVEL", "WARNING").upper()

# 期待値エンジンの設定
QUADRATURE_NODES = int(os.getenv("IMPACT_PRICER_QUADRATURE_NODES", "64"))  # 1次元あたりのノード数
QUADRATURE_MAX_DIM = int(os.getenv("IMPACT_PRICER_QUADRATURE_MAX_DIM", "3"))
MC_PATHS = int(os.getenv("IMPACT_PRICER_MC_PATHS", "100000"))
MC_BLOCK_SIZE = 16384  # 乱数ストリームはこのブロック単位で固定
DEFAULT_SEED = int(os.getenv("IMPACT_PRICER_SEED", "20240101"))
ABS_TOL = float(os.getenv("IMPACT_PRICER_ABS_TOL", "1e-10"))
RANK_TOL = 1e-12  # ガウス因子分解で捨てる固有値の相対閾値

# ソルバー設定
SOLVER = {
    'abs_tol': ABS_TOL,
    'bracket_factor': 2.0,
    'bracket_cap': 2.0 ** 60,
    'max_iter': 400,
    'residual_tol': 1e-8,  # 根での |f| の上限（abs_tol の方が大きければそちら）
}
CLASSIFY_REL_TOL = 1e-9
STRONG_PRICE_TOL = 1e-9
DEGENERACY_VAR_TOL = 1e-12
FLAGGED_PATH_LIMIT = 0.001  # 0.1%
ASYMPTOTIC_REL_TOL = 0.01
ASYMPTOTIC_WINDOW = 3

# 指数モーメントの有限性チェック: E[e^{base + p|X|}] を標本上で評価する
INTEGRABILITY_P = float(os.getenv("IMPACT_PRICER_INTEGRABILITY_P", "0.5"))
INTEGRABILITY_MAX_SHARE = 0.5  # 単一の標本が持ってよい重みの上限

# 並列実行の上限
THREADS = int(os.getenv("IMPACT_PRICER_THREADS", str(os.cpu_count() or 1)))

# CSV出力
CSV_SIGNIFICANT_DIGITS = 17

# マニフェストに記録するツールのバージョン
VERSION = "0.1.0"

# Debug mode
DEBUG = os.getenv("DEBUG", "False").lower() == "true"

# Default environment variables for .env file
DEFAULT_ENV_VARS = """# Expectation engine
IMPACT_PRICER_QUADRATURE_NODES=64
IMPACT_PRICER_MC_PATHS=100000
IMPACT_PRICER_SEED=20240101
IMPACT_PRICER_ABS_TOL=1e-10
IMPACT_PRICER_INTEGRABILITY_P=0.5

# Parallelism
IMPACT_PRICER_THREADS=4

# Logging
IMPACT_PRICER_CONSOLE_LOG_LEVEL=WARNING

# Debug Mode
DEBUG=False
"""

# Create default .env file if it doesn't exist
env_file = BASE_DIR / ".env"
if not env_file.exists():
    env_file.write_text(DEFAULT_ENV_VARS)

# Validate settings
if QUADRATURE_NODES < 1:
    raise ValueError(
        "IMPACT_PRICER_QUADRATURE_NODES must be positive. "
        "Please fix it in your .env file."
    )
if INTEGRABILITY_P <= 0:
    raise ValueError(
        "IMPACT_PRICER_INTEGRABILITY_P must be positive. "
        "Please fix it in your .env file."
    )
if THREADS < 1:
    raise ValueError(
        "IMPACT_PRICER_THREADS must be positive. "
        "Please fix it in your .env file."
    )
if CONSOLE_LOG_LEVEL not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
    raise ValueError(
        "IMPACT_PRICER_CONSOLE_LOG_LEVEL must be a logging level name. "
        "Please fix it in your .env file."
    )
