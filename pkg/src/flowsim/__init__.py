"""Simulator and verification suite for time-averaged optimizer dynamics
at the edge of stability: discrete steppers, stable/central flow
integration via complementarity time-stepping, and prediction checks.
"""

__version__ = "0.1.0"

from . import linalg  # noqa: F401
