"""
Shared fixtures: the three figure parameter sets and a fast truncation policy.
"""
import pytest

from bdi_config import get_settings
from star_bdi.model import ModelParams
from star_bdi.specfun import SeriesControl


@pytest.fixture
def equal_rates():
    """lambda = mu = alpha = 0.5 (figure 2 regime), d = 3"""
    return ModelParams(alpha=0.5, lam=0.5, mu=0.5, d=3)


@pytest.fixture
def alpha_eq_lambda_sub():
    """alpha = lambda = 0.1 < mu = 0.5 (figure 3 regime), d = 2"""
    return ModelParams(alpha=0.1, lam=0.1, mu=0.5, d=2)


@pytest.fixture
def alpha_eq_lambda_super():
    """alpha = lambda = 0.5 > mu = 0.1 (figure 4 regime), d = 2"""
    return ModelParams(alpha=0.5, lam=0.5, mu=0.1, d=2)


@pytest.fixture
def subcritical():
    """Generic lambda < mu parameters outside the closed regimes, d = 2"""
    return ModelParams(alpha=0.3, lam=0.4, mu=0.6, d=2)


@pytest.fixture
def fast_control():
    """Looser series policy for quick checks"""
    return SeriesControl(rel_tol=1e-10, max_terms=2000, consecutive_small=2)


@pytest.fixture
def fresh_settings():
    """Clear cached settings before and after a test that changes STAR_BDI_* variables"""
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()
