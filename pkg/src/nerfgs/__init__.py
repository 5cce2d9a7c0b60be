"""Voxel radiance fields and Gaussian splats, with conversion in both directions."""

import numba

# The TBB layer probe warns on this platform; the workqueue layer is always available.
numba.config.THREADING_LAYER = "workqueue"

__version__ = "0.1.0"
