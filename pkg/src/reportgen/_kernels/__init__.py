"""Hot kernels with a compiled core and a pure-Python fallback.

The compiled extension is used when it was built at install time; set
``REPORTGEN_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os
from typing import Sequence

import numpy as np

from . import _fallback

BACKEND = "python"
_compiled = None
if not os.environ.get("REPORTGEN_PURE_PYTHON"):
    try:
        from . import _lcs as _compiled  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _compiled = None


def lcs_length(a: Sequence[int], b: Sequence[int]) -> int:
    """LCS length of two integer id sequences, on the selected backend."""
    if _compiled is None:
        return _fallback.lcs_length(a, b)
    return int(
        _compiled.lcs_length(
            np.ascontiguousarray(a, dtype=np.int64),
            np.ascontiguousarray(b, dtype=np.int64),
        )
    )


__all__ = ["BACKEND", "lcs_length"]
