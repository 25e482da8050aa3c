"""Multi-frequency model-based ultrasound reconstruction through layered media."""

__version__ = "0.1.0"

from .media import ArrayGeometry, ImageGrid, Layer, LayeredMedium
from .prior import QggmrfParams
from .pulse import KernelBank, PulseSpec
from .solver import ReconProblem, reconstruct
from .system import BeamParams, build_system, stack_multifrequency

__all__ = [
    "ArrayGeometry", "BeamParams", "ImageGrid", "KernelBank", "Layer", "LayeredMedium",
    "PulseSpec", "QggmrfParams", "ReconProblem", "build_system", "reconstruct",
    "stack_multifrequency",
]
