"""Joint image/soft-label diffusion augmentation and soft-label distillation for SAR segmentation."""
__version__ = "0.1.0"

from .errors import (  # noqa: E402
    DegenerateSignalError,
    DimensionError,
    FormatError,
    JointDiffError,
    ParameterError,
    TrainingDivergence,
    ValidationError,
)
from .kernels import BACKEND  # noqa: E402

__all__ = [
    "BACKEND",
    "DegenerateSignalError",
    "DimensionError",
    "FormatError",
    "JointDiffError",
    "ParameterError",
    "TrainingDivergence",
    "ValidationError",
    "__version__",
]
