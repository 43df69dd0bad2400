"""Type definitions for the hematch package.

# this_file: src/hematch/types.py
"""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np
import numpy.typing as npt

# Type aliases for better readability
SlotVector = npt.NDArray[np.float64]
RnsPoly = npt.NDArray[np.uint64]
BoolMask = npt.NDArray[np.bool_]
RealSequence = Sequence[float] | npt.NDArray[np.float64]
Address = tuple[str, int]
