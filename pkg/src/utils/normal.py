"""
標準正規分布の密度・分布関数
"""
import math

import numpy as np
from scipy.special import erfc

_INV_SQRT_2 = 1.0 / math.sqrt(2.0)
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


def norm_pdf(x):
    """φ(x)"""
    return np.exp(-0.5 * np.square(x) - _LOG_SQRT_2PI)


def norm_cdf(x):
    """Φ(x) = erfc(-x/√2)/2"""
    return 0.5 * erfc(-np.asarray(x, dtype=float) * _INV_SQRT_2)


def log_norm_pdf(x):
    return -0.5 * np.square(x) - _LOG_SQRT_2PI

