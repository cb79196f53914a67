"""Numerical lab for mean curvature flow near the self-shrinking cylinder."""

from .errors import NeckflowError
from .geometry import SQRT2, CylinderGraph, FlowState, FrameTag, StripGrid
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["SQRT2", "CylinderGraph", "FlowState", "FrameTag", "StripGrid", "NeckflowError", "BACKEND"]
