import random

import pytest

from reportgen import _kernels
from reportgen._kernels import _fallback


def lcs_reference(a, b):
    """Full-table DP, kept deliberately naive."""
    t = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            t[i][j] = t[i - 1][j - 1] + 1 if a[i - 1] == b[j - 1] else max(t[i - 1][j], t[i][j - 1])
    return t[-1][-1]


def random_pairs(count, seed=0):
    rng = random.Random(seed)
    for _ in range(count):
        k = rng.randint(1, 6)
        a = [rng.randrange(k) for _ in range(rng.randint(0, 40))]
        b = [rng.randrange(k) for _ in range(rng.randint(0, 40))]
        yield a, b


def test_hand_cases():
    assert _kernels.lcs_length([0, 1, 2], [0, 1, 3]) == 2
    assert _kernels.lcs_length([], [1]) == 0
    assert _kernels.lcs_length([1, 2, 3, 4], [2, 4, 1, 3]) == 2


def test_fallback_matches_reference():
    for a, b in random_pairs(300):
        assert _fallback.lcs_length(a, b) == lcs_reference(a, b)


def test_selected_backend_matches_reference():
    for a, b in random_pairs(300, seed=1):
        assert _kernels.lcs_length(a, b) == lcs_reference(a, b)


def test_compiled_matches_fallback():
    if _kernels._compiled is None:
        pytest.skip("compiled kernel not built")
    for a, b in random_pairs(300, seed=2):
        assert _kernels.lcs_length(a, b) == _fallback.lcs_length(a, b)


def test_backend_flag():
    assert _kernels.BACKEND in ("cython", "python")
