import math

import numpy as np
import pytest
from scipy.stats import norm

from src.utils.normal import log_norm_pdf, norm_cdf, norm_pdf

def test_matches_scipy():
    x = np.linspace(-8.0, 8.0, 33)
    np.testing.assert_allclose(norm_pdf(x), norm.pdf(x), rtol=1e-12)
    np.testing.assert_allclose(norm_cdf(x), norm.cdf(x), rtol=1e-12, atol=1e-300)
    np.testing.assert_allclose(log_norm_pdf(x), norm.logpdf(x), rtol=1e-12)

def test_scalar_values():
    assert float(norm_cdf(0.0)) == 0.5
    assert float(norm_pdf(0.0)) == pytest.approx(1.0 / math.sqrt(2.0 * math.pi), rel=1e-15)
