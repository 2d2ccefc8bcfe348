# config package
from .settings import *

__all__ = [
    'BASE_DIR',
    'SRC_DIR',
    'SCENARIO_DIR',
    'OUTPUT_DIR',
    'LOG_DIR',
    'LOG_FILE',
    'CONSOLE_LOG_LEVEL',
    'QUADRATURE_NODES',
    'QUADRATURE_MAX_DIM',
    'MC_PATHS',
    'MC_BLOCK_SIZE',
    'DEFAULT_SEED',
    'ABS_TOL',
    'RANK_TOL',
    'SOLVER',
    'CLASSIFY_REL_TOL',
    'STRONG_PRICE_TOL',
    'DEGENERACY_VAR_TOL',
    'FLAGGED_PATH_LIMIT',
    'ASYMPTOTIC_REL_TOL',
    'ASYMPTOTIC_WINDOW',
    'INTEGRABILITY_P',
    'INTEGRABILITY_MAX_SHARE',
    'THREADS',
    'CSV_SIGNIFICANT_DIGITS',
    'VERSION',
    'DEBUG'
]
