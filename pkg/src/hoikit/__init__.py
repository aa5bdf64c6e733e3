"""Coupled human-object motion: spline object tracks, skinned avatars and an
attention block that lets the two correct each other."""

__version__ = "0.1.0"

from .errors import HoikitError  # noqa: E402
from .kernels import BACKEND  # noqa: E402

__all__ = ["HoikitError", "BACKEND", "__version__"]
