"""Circular confocal non-line-of-sight imaging toolkit.

Submodules: ``geometry``, ``forward``, ``localize``, ``radon2d``,
``recon3d``, ``metrics`` and ``io``.
"""

__version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
from .forward import (  # noqa: F401
    ConfocalTransient,
    Scene,
    TimeAxis,
    TransientSinogram,
    VAxis,
    WallGrid,
    resample_to_v,
    simulate_confocal,
    simulate_sinogram,
)
from .geometry import CartesianPoint, ScanCircle, SinusoidParams, SphericalPoint  # noqa: F401
