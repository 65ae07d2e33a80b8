"""Simulation and verification of regularized Liouville Brownian motion and
degenerate diffusions."""

from .errors import LbmLabError, ParseError
from .report import VerificationReport

__version__ = "0.1.0"

__all__ = ["LbmLabError", "ParseError", "VerificationReport", "__version__"]
