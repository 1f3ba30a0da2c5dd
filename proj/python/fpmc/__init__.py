"""Analytic diffusion denoisers over finite image datasets."""

from ._core import *  # noqa: F401,F403
from ._core import ValidationError, NumericalError  # noqa: F401

__version__ = "0.1.0"
