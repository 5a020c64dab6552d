"""Cavity EMI, coil coupling and dual-channel cancellation simulator for low-field MRI."""
from .errors import *  # noqa: F401,F403

__version__ = "0.1.0"
