# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled longest-common-subsequence kernel."""

from libc.stdlib cimport calloc, free


def lcs_length(const long long[:] a, const long long[:] b):
    """Length of the longest common subsequence of two int64 sequences."""
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t m = b.shape[0]
    cdef Py_ssize_t i, j
    cdef long long *prev
    cdef long long *cur
    cdef long long *tmp
    cdef long long ai, result
    if n == 0 or m == 0:
        return 0
    prev = <long long *> calloc(m + 1, sizeof(long long))
    cur = <long long *> calloc(m + 1, sizeof(long long))
    if prev == NULL or cur == NULL:
        free(prev)
        free(cur)
        raise MemoryError()
    with nogil:
        for i in range(n):
            ai = a[i]
            cur[0] = 0
            for j in range(m):
                if ai == b[j]:
                    cur[j + 1] = prev[j] + 1
                elif prev[j + 1] >= cur[j]:
                    cur[j + 1] = prev[j + 1]
                else:
                    cur[j + 1] = cur[j]
            tmp = prev
            prev = cur
            cur = tmp
        result = prev[m]
    free(prev)
    free(cur)
    return result
