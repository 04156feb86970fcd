"""Pure-Python versions of the compiled kernels."""

from __future__ import annotations

from typing import Sequence


def lcs_length(a: Sequence[int], b: Sequence[int]) -> int:
    """Length of the longest common subsequence, two-row dynamic programme."""
    if len(a) == 0 or len(b) == 0:
        return 0
    m = len(b)
    prev = [0] * (m + 1)
    for ai in a:
        cur = [0] * (m + 1)
        for j in range(m):
            if ai == b[j]:
                cur[j + 1] = prev[j] + 1
            else:
                cur[j + 1] = prev[j + 1] if prev[j + 1] >= cur[j] else cur[j]
        prev = cur
    return prev[m]
