# impact_pricer

from . import core
from . import utils
from config.settings import VERSION

__version__ = VERSION
__author__ = "Developer"

__all__ = [
    'core',
    'utils'
]
